//! Command-line front end: `solve`, `verify`, `simulate`, `transform` and
//! `report`, each writing CSV outputs and a `manifest.txt` into `--out`.
//!
//! Exit codes: 2 for configuration errors, 3 for solver failures, 4 for
//! failed audits or checks, 1 for anything else.

pub mod checks;
pub mod manifest;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use reinsurance_dual::config::{ConfigError, ProblemConfig, RawConfig};
use reinsurance_dual::dual::{residual_check, shape_audit, solve, DualField, Region, SolveError};
use reinsurance_dual::export;
use reinsurance_dual::model::PremiumRegime;
use reinsurance_dual::primal::{primal_slice, PrimalSlice, CONSISTENCY_LIMIT};
use reinsurance_dual::simulator::{simulate, simulate_traces, FeedbackTable, SimError, Strategy};

use crate::checks::{run_checks, Status};
use crate::manifest::Manifest;

#[derive(Debug, Parser)]
#[command(name = "reins-dual", version, about = "Dual solver for optimal proportional reinsurance")]
pub struct Cli {
    /// Configuration file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the dual problem and audit the result.
    Solve,
    /// Run every invariant and oracle check and write verify.csv.
    Verify {
        /// Check a stored dual_field.csv instead of solving.
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Monte Carlo estimate of expected terminal utility.
    Simulate {
        /// full, zero, constant:<theta>, feedback or table:<primal_slice.csv>.
        #[arg(long, default_value = "full")]
        strategy: String,
        /// Also write traces.csv for the first 100 paths.
        #[arg(long)]
        traces: bool,
    },
    /// Export the primal value and candidate strategy over the wealth grid.
    Transform {
        /// Times to export (repeatable).
        #[arg(long = "t", default_values_t = [0.0])]
        times: Vec<f64>,
    },
    /// Summarize the region map and the strategy field.
    Report,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Solver(String),
    Audit(String),
    Other(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Audit(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Solver(m) => write!(f, "solver failure: {m}"),
            CliError::Audit(m) => write!(f, "audit failure: {m}"),
            CliError::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

impl From<export::ExportError> for CliError {
    fn from(e: export::ExportError) -> Self {
        CliError::Other(e.into())
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidSpec(_) | SimError::InfeasibleStart { .. } => {
                CliError::Config(e.to_string())
            }
            SimError::ScaleExceeded(_) => CliError::Solver(e.to_string()),
        }
    }
}

pub fn load_config(path: &Path, seed: Option<u64>) -> Result<ProblemConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut raw = RawConfig::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(s) = seed {
        raw.set("seed", &s.to_string());
    }
    ProblemConfig::from_raw(&raw).map_err(|e| match e {
        ConfigError::Invalid(errs) => CliError::Config(format!("{}: {errs}", path.display())),
        other => CliError::Config(format!("{}: {other}", path.display())),
    })
}

/// Parses arguments already split, runs the command and returns the exit
/// code, printing errors to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Other(e.into()))?;
    pool.install(|| dispatch(cli))
}

struct Session<'a> {
    cli: &'a Cli,
    config: ProblemConfig,
    manifest: Manifest,
}

impl<'a> Session<'a> {
    fn open(cli: &'a Cli, command: &str) -> Result<Self, CliError> {
        let path = cli
            .config
            .as_deref()
            .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
        let config = load_config(path, cli.seed)?;
        fs::create_dir_all(&cli.out)
            .with_context(|| format!("creating {}", cli.out.display()))?;
        let manifest = Manifest::new(command, path, &cli.out, cli.threads, &config);
        Ok(Session { cli, config, manifest })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cli.out.join(name)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let p = self.path(name);
        Ok(BufWriter::new(
            File::create(&p).with_context(|| format!("creating {}", p.display()))?,
        ))
    }

    fn record(&mut self, name: &str) -> Result<(), CliError> {
        let p = self.path(name);
        self.manifest.add_file(name, &p)?;
        Ok(())
    }

    fn solve(&mut self) -> Result<DualField, CliError> {
        let start = Instant::now();
        let field = solve(&self.config.model, &self.config.utility, &self.config.grid)?;
        self.manifest.timing("solve", start.elapsed());
        Ok(field)
    }

    fn write_field(&mut self, field: &DualField) -> Result<(), CliError> {
        export::write_dual_field(field, self.create("dual_field.csv")?)?;
        self.record("dual_field.csv")
    }

    fn finish(&self) -> Result<(), CliError> {
        self.manifest.write(&self.path("manifest.txt"))?;
        Ok(())
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Solve => cmd_solve(cli),
        Command::Verify { field } => cmd_verify(cli, field.as_deref()),
        Command::Simulate { strategy, traces } => cmd_simulate(cli, strategy, *traces),
        Command::Transform { times } => cmd_transform(cli, times),
        Command::Report => cmd_report(cli),
    }
}

pub fn cmd_solve(cli: &Cli) -> Result<(), CliError> {
    let mut s = Session::open(cli, "solve")?;
    let field = s.solve()?;
    s.write_field(&field)?;
    let start = Instant::now();
    let residuals = residual_check(&field);
    let audit = shape_audit(&field);
    s.manifest.timing("audit", start.elapsed());
    export::write_residuals(&field, &residuals, s.create("residuals.csv")?)?;
    s.record("residuals.csv")?;
    let tol = field.grid.residual_tolerance(field.model.horizon());
    s.manifest.tolerance("residual_tolerance", tol);
    s.finish()?;
    println!(
        "solved {} x {} grid: max VI residual {:.3e} (tolerance {:.3e}), sub-steps {}",
        field.grid.n_t + 1,
        field.grid.n_y,
        residuals.max_vi_residual,
        tol,
        field.stats.substeps.iter().sum::<u32>()
    );
    if residuals.max_vi_residual > tol || !audit.passes() {
        return Err(CliError::Audit(format!(
            "residual {:.3e} (tolerance {tol:.3e}), audit {audit:?}",
            residuals.max_vi_residual
        )));
    }
    Ok(())
}

pub fn cmd_verify(cli: &Cli, field_path: Option<&Path>) -> Result<(), CliError> {
    let mut s = Session::open(cli, "verify")?;
    let field = match field_path {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            export::read_dual_field(&s.config.model, &s.config.utility, &s.config.grid, f)?
        }
        None => {
            let field = s.solve()?;
            s.write_field(&field)?;
            field
        }
    };
    let start = Instant::now();
    let rows = run_checks(&s.config, &field)?;
    s.manifest.timing("checks", start.elapsed());
    let mut out = s.create("verify.csv")?;
    {
        use std::io::Write;
        writeln!(out, "check,status,value,tolerance").context("writing verify.csv")?;
        for r in &rows {
            writeln!(
                out,
                "{},{},{},{}",
                r.check,
                r.status.as_str(),
                export::num(r.value),
                export::num(r.tolerance)
            )
            .context("writing verify.csv")?;
            s.manifest.tolerance(r.check, r.tolerance);
        }
        out.flush().context("writing verify.csv")?;
    }
    drop(out);
    s.record("verify.csv")?;
    s.finish()?;
    for r in &rows {
        println!("{:<20} {:<4} value {:.6e} tolerance {:.6e}", r.check, r.status.as_str(), r.value, r.tolerance);
    }
    let failed: Vec<_> = rows.iter().filter(|r| r.status == Status::Fail).map(|r| r.check).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Audit(format!("failed checks: {}", failed.join(", "))))
    }
}

fn parse_strategy(
    s: &mut Session<'_>,
    selector: &str,
) -> Result<Strategy, CliError> {
    let bad = || CliError::Config(format!("unknown strategy `{selector}`"));
    Ok(match selector {
        "full" => Strategy::Full,
        "zero" => Strategy::Zero,
        "feedback" => {
            let field = s.solve()?;
            let horizon = s.config.model.horizon();
            let times: Vec<f64> = (0..16).map(|k| horizon * k as f64 / 16.0).collect();
            let b = s.config.model.feasibility_threshold(0.0);
            let excess: Vec<f64> = s.config.wealth.nodes(b).iter().map(|x| x - b).collect();
            Strategy::Feedback(FeedbackTable::from_field(&field, &times, &excess))
        }
        other => match other.split_once(':') {
            Some(("constant", c)) => {
                let c: f64 = c.parse().map_err(|_| bad())?;
                if !(0.0..=1.0).contains(&c) {
                    return Err(CliError::Config(format!("constant retention {c} outside [0, 1]")));
                }
                Strategy::Constant(c)
            }
            Some(("table", path)) => {
                let f = File::open(path).map_err(|e| CliError::Config(format!("{path}: {e}")))?;
                Strategy::Feedback(
                    export::read_feedback_table(&s.config.model, f)
                        .map_err(|e| CliError::Config(format!("{path}: {e}")))?,
                )
            }
            _ => return Err(bad()),
        },
    })
}

pub fn cmd_simulate(cli: &Cli, selector: &str, traces: bool) -> Result<(), CliError> {
    let mut s = Session::open(cli, "simulate")?;
    let strategy = parse_strategy(&mut s, selector)?;
    let c = &s.config;
    let start = Instant::now();
    let report = simulate(&c.model, &c.utility, &strategy, c.t0, c.x0, &c.sim)?;
    s.manifest.timing("simulate", start.elapsed());
    export::write_sim_report(&report, s.create("sim_report.csv")?)?;
    s.record("sim_report.csv")?;
    if traces {
        let c = &s.config;
        let rows = simulate_traces(&c.model, &strategy, c.t0, c.x0, &c.sim)?;
        export::write_traces(&rows, s.create("traces.csv")?)?;
        s.record("traces.csv")?;
    }
    s.finish()?;
    println!(
        "{}: E[U(X_T)] = {:.10} +/- {:.3e} ({} paths, {} projected)",
        strategy.label(),
        report.estimate,
        report.ci_half_width,
        report.paths_used,
        report.ruin_count
    );
    Ok(())
}

fn primal_exports(
    config: &ProblemConfig,
    field: &DualField,
    times: &[f64],
) -> Result<Vec<PrimalSlice>, CliError> {
    times
        .iter()
        .map(|&t| {
            if !(0.0..=config.model.horizon()).contains(&t) {
                return Err(CliError::Config(format!("export time {t} outside [0, T]")));
            }
            let x = config.wealth.nodes(config.model.feasibility_threshold(t));
            primal_slice(field, t, &x).map_err(|e| CliError::Other(anyhow!(e)))
        })
        .collect()
}

pub fn cmd_transform(cli: &Cli, times: &[f64]) -> Result<(), CliError> {
    let mut s = Session::open(cli, "transform")?;
    let field = s.solve()?;
    let start = Instant::now();
    let slices = primal_exports(&s.config, &field, times)?;
    s.manifest.timing("transform", start.elapsed());
    export::write_primal_slices(&slices, s.create("primal_slice.csv")?)?;
    s.record("primal_slice.csv")?;
    s.manifest.tolerance("consistency_limit", CONSISTENCY_LIMIT);
    s.finish()?;
    for p in &slices {
        let worst = p.max_consistency();
        let flag = if worst > CONSISTENCY_LIMIT { "  UNRELIABLE" } else { "" };
        println!("t = {}: {} wealth nodes, max consistency {worst:.3e}{flag}", p.t, p.x.len());
    }
    Ok(())
}

pub fn cmd_report(cli: &Cli) -> Result<(), CliError> {
    use std::io::Write;
    let mut s = Session::open(cli, "report")?;
    let field = s.solve()?;
    let c = s.config.clone();
    let strategy = primal_exports(&c, &field, &[0.0])?.remove(0);

    let mut regions = s.create("regions.csv")?;
    writeln!(regions, "t,jump_start_y,n_r1,n_r2,n_both,n_none").context("writing regions.csv")?;
    for (k, row) in field.regions.iter().enumerate() {
        let count = |r: Region| row.iter().filter(|&&x| x == r).count();
        let start = row
            .iter()
            .position(|r| r.is_jump())
            .map_or("none".to_string(), |j| export::num(field.slices[k].nodes()[j]));
        writeln!(
            regions,
            "{},{start},{},{},{},{}",
            export::num(field.times[k]),
            count(Region::R1),
            count(Region::R2),
            count(Region::Both),
            count(Region::Neither)
        )
        .context("writing regions.csv")?;
    }
    regions.flush().context("writing regions.csv")?;
    drop(regions);
    s.record("regions.csv")?;

    let mut text = String::new();
    let m = &c.model;
    let regime = match m.premium_regime() {
        PremiumRegime::CostlyCover => "beta > alpha (feasibility threshold positive)",
        PremiumRegime::SelfFinanced => "alpha >= beta (feasibility threshold zero)",
    };
    text += &format!("premium regime: {regime}\n");
    text += &format!("b(0) = {}\n", m.feasibility_threshold(0.0));
    text += &format!(
        "grid: {} times x {} dual nodes on [{}, {}], scheme {}\n",
        field.grid.n_t + 1,
        field.grid.n_y,
        field.grid.y_min,
        field.grid.y_max,
        field.grid.scheme.as_str()
    );
    text += &format!(
        "sub-steps: {}, minimizer floor hits: {}, cap hits: {}\n",
        field.stats.substeps.iter().sum::<u32>(),
        field.stats.floor_hits,
        field.stats.cap_hits
    );
    text += "\nregions (R1: PDE branch, R2: jump branch)\n";
    let stride = (field.n_t() / 8).max(1);
    for k in (0..=field.n_t()).step_by(stride) {
        let row = &field.regions[k];
        let jump = row.iter().filter(|r| r.is_jump()).count();
        let start = row
            .iter()
            .position(|r| r.is_jump())
            .map_or("none".to_string(), |j| format!("{:.4e}", field.slices[k].nodes()[j]));
        text += &format!("  t = {:.4}: {jump} of {} nodes in R2, first at y = {start}\n", field.times[k], row.len());
    }
    let thetas = &strategy.theta_hat;
    let worst = strategy.max_consistency();
    text += &format!(
        "\nstrategy at t = 0 over x in [{:.4}, {:.4}]: theta in [{:.4}, {:.4}], max consistency {:.3e}\n",
        strategy.x[0],
        strategy.x[strategy.x.len() - 1],
        thetas.iter().copied().fold(f64::INFINITY, f64::min),
        thetas.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        worst
    );
    if worst > CONSISTENCY_LIMIT {
        text += &format!(
            "UNRELIABLE: per-claim retention estimates disagree by more than {CONSISTENCY_LIMIT}; \
             search the strategy with the simulator (simulate --strategy constant:<theta>) instead.\n"
        );
    }
    fs::write(s.path("report.txt"), &text).context("writing report.txt")?;
    s.record("report.txt")?;
    s.finish()?;
    print!("{text}");
    Ok(())
}
