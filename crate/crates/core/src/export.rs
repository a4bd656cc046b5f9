//! CSV import and export.
//!
//! Floating-point columns are written with 17 significant digits so that a
//! file read back reproduces the in-memory values bit for bit.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use thiserror::Error;

use crate::dual::{DualField, GridSpec, ResidualReport};
use crate::hamiltonian::ValueSlice;
use crate::model::{CrraUtility, MarketModel};
use crate::primal::PrimalSlice;
use crate::simulator::{FeedbackTable, SimReport, TraceRow};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("row {row}: {message}")]
    Format { row: usize, message: String },
}

/// Formats a float with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r)
}

fn field_f64(rec: &csv::StringRecord, i: usize, row: usize) -> Result<f64, ExportError> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ExportError::Format { row, message: format!("column {} is not a number", i + 1) })
}

/// `t,y,v,region,rho_1..rho_d`, time-major, `y` ascending.
pub fn write_dual_field<W: Write>(field: &DualField, w: W) -> Result<(), ExportError> {
    let mut out = writer(w);
    let d = field.model.n_claims();
    let mut header = vec!["t".to_string(), "y".into(), "v".into(), "region".into()];
    header.extend((1..=d).map(|i| format!("rho_{i}")));
    out.write_record(&header)?;
    for (k, slice) in field.slices.iter().enumerate() {
        for (j, (&y, &v)) in slice.nodes().iter().zip(slice.values()).enumerate() {
            let mut rec = vec![
                num(field.times[k]),
                num(y),
                num(v),
                field.regions[k][j].as_str().to_string(),
            ];
            rec.extend(field.controls[k][j].iter().map(|&r| num(r)));
            out.write_record(&rec)?;
        }
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a field written by [`write_dual_field`]. Projection flags and
/// regions are recomputed from the data; the stored region column is
/// ignored.
pub fn read_dual_field<R: Read>(
    model: &MarketModel,
    utility: &CrraUtility,
    grid: &GridSpec,
    r: R,
) -> Result<DualField, ExportError> {
    let d = model.n_claims();
    let mut rows: BTreeMap<u64, (f64, Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> = BTreeMap::new();
    for (i, rec) in reader(r).records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        if rec.len() != 4 + d {
            return Err(ExportError::Format {
                row,
                message: format!("expected {} columns, found {}", 4 + d, rec.len()),
            });
        }
        let t = field_f64(&rec, 0, row)?;
        let entry = rows.entry(t.to_bits()).or_insert_with(|| (t, vec![], vec![], vec![]));
        entry.1.push(field_f64(&rec, 1, row)?);
        entry.2.push(field_f64(&rec, 2, row)?);
        entry.3.push((0..d).map(|c| field_f64(&rec, 4 + c, row)).collect::<Result<_, _>>()?);
    }
    let mut groups: Vec<_> = rows.into_values().collect();
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    if groups.len() < 2 {
        return Err(ExportError::Format { row: 0, message: "need at least two time slices".into() });
    }
    let mut times = Vec::new();
    let mut slices = Vec::new();
    let mut controls = Vec::new();
    for (t, y, v, rho) in groups {
        let slice = ValueSlice::new(t, y, v, utility.gamma())
            .map_err(|e| ExportError::Format { row: 0, message: e.to_string() })?;
        times.push(t);
        slices.push(slice);
        controls.push(rho);
    }
    let grid = GridSpec {
        n_t: times.len() - 1,
        n_y: slices[0].len(),
        y_min: slices[0].y_min(),
        y_max: slices[0].y_max(),
        ..grid.clone()
    };
    Ok(DualField::from_parts(model.clone(), utility.clone(), grid, times, slices, controls))
}

/// `t,y,pde,obstacle,vi_residual` for every interior node.
pub fn write_residuals<W: Write>(
    field: &DualField,
    report: &ResidualReport,
    w: W,
) -> Result<(), ExportError> {
    let mut out = writer(w);
    out.write_record(["t", "y", "pde", "obstacle", "vi_residual"])?;
    for n in &report.nodes {
        out.write_record([
            num(field.times[n.time_index]),
            num(field.slices[n.time_index].nodes()[n.y_index]),
            num(n.pde),
            num(n.obstacle),
            num(n.vi_residual()),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `t,x,v,y_star,theta_hat,consistency`, one block per slice.
pub fn write_primal_slices<W: Write>(slices: &[PrimalSlice], w: W) -> Result<(), ExportError> {
    let mut out = writer(w);
    out.write_record(["t", "x", "v", "y_star", "theta_hat", "consistency"])?;
    for s in slices {
        for j in 0..s.x.len() {
            out.write_record([
                num(s.t),
                num(s.x[j]),
                num(s.v[j]),
                num(s.y_star[j]),
                num(s.theta_hat[j]),
                num(s.consistency[j]),
            ])?;
        }
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Builds a feedback table from a primal export, keyed by the wealth excess
/// over the feasibility threshold at each stored time.
pub fn read_feedback_table<R: Read>(model: &MarketModel, r: R) -> Result<FeedbackTable, ExportError> {
    let mut rows: BTreeMap<u64, (f64, Vec<(f64, f64)>)> = BTreeMap::new();
    for (i, rec) in reader(r).records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let t = field_f64(&rec, 0, row)?;
        let x = field_f64(&rec, 1, row)?;
        let theta = field_f64(&rec, 4, row)?;
        if !(0.0..=1.0).contains(&theta) {
            return Err(ExportError::Format { row, message: format!("theta_hat = {theta} outside [0, 1]") });
        }
        rows.entry(t.to_bits())
            .or_insert_with(|| (t, Vec::new()))
            .1
            .push((x - model.feasibility_threshold(t), theta));
    }
    let mut groups: Vec<_> = rows.into_values().collect();
    if groups.is_empty() {
        return Err(ExportError::Format { row: 0, message: "no strategy rows".into() });
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut table = FeedbackTable { times: vec![], excess: vec![], theta: vec![] };
    for (t, mut pts) in groups {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.dedup_by(|a, b| a.0 == b.0);
        table.times.push(t);
        table.excess.push(pts.iter().map(|p| p.0).collect());
        table.theta.push(pts.iter().map(|p| p.1).collect());
    }
    // the earliest row also covers times before it
    table.times[0] = f64::NEG_INFINITY;
    Ok(table)
}

/// `estimate,ci_half_width,ruin_count,paths_used,seed`.
pub fn write_sim_report<W: Write>(report: &SimReport, w: W) -> Result<(), ExportError> {
    let mut out = writer(w);
    out.write_record(["estimate", "ci_half_width", "ruin_count", "paths_used", "seed"])?;
    out.write_record([
        num(report.estimate),
        num(report.ci_half_width),
        report.ruin_count.to_string(),
        report.paths_used.to_string(),
        report.seed.to_string(),
    ])?;
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `path,t,x,theta,event`.
pub fn write_traces<W: Write>(rows: &[TraceRow], w: W) -> Result<(), ExportError> {
    let mut out = writer(w);
    out.write_record(["path", "t", "x", "theta", "event"])?;
    for r in rows {
        out.write_record([
            r.path.to_string(),
            num(r.t),
            num(r.x),
            num(r.theta),
            r.event.as_str().to_string(),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}
