//! Run manifest: effective settings, tolerances, output hashes and timings.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Duration;

use anyhow::Context;
use reinsurance_dual::config::ProblemConfig;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct Manifest {
    header: Vec<(String, String)>,
    settings: Vec<(String, String)>,
    tolerances: Vec<(String, f64)>,
    files: Vec<(String, String)>,
    timings: Vec<(String, Duration)>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

impl Manifest {
    pub fn new(command: &str, config: &Path, out: &Path, threads: usize, cfg: &ProblemConfig) -> Self {
        Manifest {
            header: vec![
                ("command".into(), command.into()),
                ("config".into(), config.display().to_string()),
                ("out".into(), out.display().to_string()),
                ("threads".into(), threads.to_string()),
                ("version".into(), env!("CARGO_PKG_VERSION").into()),
            ],
            settings: cfg.effective_settings(),
            tolerances: Vec::new(),
            files: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn tolerance(&mut self, name: &str, value: f64) {
        self.tolerances.push((name.to_string(), value));
    }

    pub fn timing(&mut self, phase: &str, elapsed: Duration) {
        self.timings.push((phase.to_string(), elapsed));
    }

    pub fn add_file(&mut self, name: &str, path: &Path) -> anyhow::Result<()> {
        let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
        self.files.push((name.to_string(), sha256_hex(&bytes)));
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.header {
            let _ = writeln!(s, "{k} = {v}");
        }
        s += "\n[settings]\n";
        for (k, v) in &self.settings {
            let _ = writeln!(s, "{k} = {v}");
        }
        s += "\n[tolerances]\n";
        for (k, v) in &self.tolerances {
            let _ = writeln!(s, "{k} = {v:e}");
        }
        s += "\n[files]\n";
        for (k, v) in &self.files {
            let _ = writeln!(s, "{k} sha256 = {v}");
        }
        s += "\n[timings]\n";
        for (k, v) in &self.timings {
            let _ = writeln!(s, "{k} = {:.3} s", v.as_secs_f64());
        }
        s
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        fs::write(path, self.render()).with_context(|| format!("writing {}", path.display()))
    }
}
