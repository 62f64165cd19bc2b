//! Emission probability and HOM visibility over (Ω, Δ) grids.
//!
//! Cells are independent; each one substitutes its drive Rabi frequency and
//! Raman detuning (laser and cavity alike) into the base configuration and
//! runs dynamics, correlations and HOM assembly. Finished cells are appended
//! to a JSON-lines journal so an interrupted sweep resumes where it stopped;
//! the final CSV is written in grid order from the journal.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::correlations::{compute_grid, CorrelationOptions};
use crate::dynamics::{photon_record, SchemeConfig};
use crate::export::config_hash;
use crate::hom::{coincidence_density, hbt_g2_zero, visibility, DEFAULT_WINDOW};
use crate::operators::Scheme;
use crate::par::{map_indices, with_workers, Execution};
use crate::{Error, Result};

pub const JOURNAL_FILE: &str = "sweep.journal.jsonl";
pub const CSV_FILE: &str = "sweep.csv";
pub const SUMMARY_FILE: &str = "sweep_summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    PEmit,
    Visibility,
    G2Zero,
}

/// An axis given either as explicit values or as an inclusive linspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Axis {
    Values(Vec<f64>),
    Linspace { from: f64, to: f64, count: usize },
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Axis::Values(v) => v.clone(),
            Axis::Linspace { from, to, count } => match count {
                0 => vec![],
                1 => vec![*from],
                n => (0..*n).map(|k| from + (to - from) * k as f64 / (*n - 1) as f64).collect(),
            },
        }
    }
}

fn default_points() -> usize {
    96
}

fn default_window() -> f64 {
    DEFAULT_WINDOW
}

fn default_observables() -> Vec<Observable> {
    vec![Observable::PEmit, Observable::Visibility]
}

/// Sweep definition. Axis values are in units of Γ_ref = Γ_SP + Γ_DP of the
/// base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub scheme: Scheme,
    pub omega_values: Axis,
    pub delta_values: Axis,
    /// Defaults to the scheme's paper preset.
    #[serde(default)]
    pub base_config: Option<SchemeConfig>,
    #[serde(default = "default_observables")]
    pub observables: Vec<Observable>,
    /// Correlation grid size per cell.
    #[serde(default = "default_points")]
    pub correlation_points: usize,
    /// Visibility integration window, µs.
    #[serde(default = "default_window")]
    pub window: f64,
}

impl SweepSpec {
    pub fn new(scheme: Scheme, omega: Vec<f64>, delta: Vec<f64>) -> Self {
        SweepSpec {
            scheme,
            omega_values: Axis::Values(omega),
            delta_values: Axis::Values(delta),
            base_config: None,
            observables: default_observables(),
            correlation_points: default_points(),
            window: DEFAULT_WINDOW,
        }
    }

    pub fn base(&self) -> SchemeConfig {
        self.base_config
            .clone()
            .unwrap_or_else(|| SchemeConfig::paper_defaults(self.scheme))
    }

    /// Γ_ref in rad/µs.
    pub fn gamma_ref(&self) -> f64 {
        let p = self.base().params;
        p.gamma_sp + p.gamma_dp
    }

    /// Axis values converted to rad/µs.
    pub fn axes(&self) -> (Vec<f64>, Vec<f64>) {
        let g = self.gamma_ref();
        (
            self.omega_values.values().iter().map(|v| v * g).collect(),
            self.delta_values.values().iter().map(|v| v * g).collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.base().validate()?;
        for (name, axis) in [("omega_values", &self.omega_values), ("delta_values", &self.delta_values)] {
            let v = axis.values();
            if v.is_empty() {
                return Err(Error::invalid(name, "axis is empty"));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(name, "values must be finite"));
            }
            let up = v.windows(2).all(|w| w[1] > w[0]);
            let down = v.windows(2).all(|w| w[1] < w[0]);
            if !(up || down) {
                return Err(Error::invalid(name, "values must be strictly monotone"));
            }
        }
        if self.omega_values.values().iter().any(|&o| o < 0.0) {
            return Err(Error::invalid("omega_values", "Rabi frequencies must be >= 0"));
        }
        if self.observables.is_empty() {
            return Err(Error::invalid("observables", "nothing to compute"));
        }
        if !(self.window > 0.0) {
            return Err(Error::invalid("window", "must be positive"));
        }
        Ok(())
    }

    /// Configuration of a single cell.
    pub fn cell_config(&self, omega: f64, delta: f64) -> SchemeConfig {
        let mut cfg = self.base();
        cfg.params.drive.peak_rabi = omega;
        cfg.params.drive.detuning = delta;
        cfg.params.cavity.detuning = delta;
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub omega: f64,
    pub delta: f64,
    pub p_emit: Option<f64>,
    pub visibility: Option<f64>,
    pub g2_zero: Option<f64>,
    pub status: CellStatus,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub scheme: Scheme,
    /// rad/µs
    pub omega_axis: Vec<f64>,
    pub delta_axis: Vec<f64>,
    pub gamma_ref: f64,
    /// Row-major over (omega, delta).
    pub cells: Vec<CellRecord>,
}

impl SweepResult {
    pub fn cell(&self, i_omega: usize, i_delta: usize) -> &CellRecord {
        &self.cells[i_omega * self.delta_axis.len() + i_delta]
    }

    pub fn ok_cells(&self) -> impl Iterator<Item = &CellRecord> {
        self.cells.iter().filter(|c| c.status == CellStatus::Ok)
    }
}

/// Observables of one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub p_emit: Option<f64>,
    pub visibility: Option<f64>,
    pub g2_zero: Option<f64>,
}

/// Runs dynamics (and correlations when needed) for one configuration.
///
/// A visibility or g²(0) with a vanishing denominator (no emission) is
/// reported as `None`.
pub fn evaluate_point(
    cfg: &SchemeConfig,
    n: usize,
    window: f64,
    observables: &[Observable],
    exec: Execution,
) -> Result<PointResult> {
    let need_corr = observables.contains(&Observable::Visibility) || observables.contains(&Observable::G2Zero);
    let mut out = PointResult {
        p_emit: None,
        visibility: None,
        g2_zero: None,
    };
    let mut run_cfg = cfg.clone();
    run_cfg.grid.n_points = n;
    if !need_corr {
        let ops = crate::operators::build_operators(&run_cfg.params)?;
        let traj = crate::dynamics::evolve(&run_cfg, &ops)?;
        out.p_emit = Some(photon_record(&run_cfg, traj).p_emit);
        return Ok(out);
    }
    let (grid, evolution) = compute_grid(&run_cfg, n, true, CorrelationOptions { exec })?;
    if observables.contains(&Observable::PEmit) {
        out.p_emit = Some(photon_record(&run_cfg, evolution.trajectory).p_emit);
    }
    if observables.contains(&Observable::Visibility) {
        let density = coincidence_density(&grid, 0.0)?;
        out.visibility = none_if_zero(visibility(&density, window))?;
    }
    if observables.contains(&Observable::G2Zero) {
        out.g2_zero = none_if_zero(hbt_g2_zero(&grid))?;
    }
    Ok(out)
}

fn none_if_zero(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::ZeroDenominator(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn run_cell(spec: &SweepSpec, omega: f64, delta: f64, exec: Execution) -> CellRecord {
    let cfg = spec.cell_config(omega, delta);
    let res = evaluate_point(&cfg, spec.correlation_points, spec.window, &spec.observables, exec).and_then(|p| {
        let bad = |v: Option<f64>| v.is_some_and(|v| !(-1e-9..=1.0 + 1e-9).contains(&v));
        if bad(p.p_emit) || bad(p.visibility) {
            Err(Error::InvariantViolation(format!("observable out of [0, 1]: {p:?}")))
        } else {
            Ok(p)
        }
    });
    match res {
        Ok(p) => CellRecord {
            omega,
            delta,
            p_emit: p.p_emit,
            visibility: p.visibility,
            g2_zero: p.g2_zero,
            status: CellStatus::Ok,
            diagnostic: None,
        },
        Err(e) => CellRecord {
            omega,
            delta,
            p_emit: None,
            visibility: None,
            g2_zero: None,
            status: CellStatus::Failed,
            diagnostic: Some(e.to_string()),
        },
    }
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    /// Output directory for journal, CSV and summary; `None` keeps results
    /// in memory only.
    pub out_dir: Option<PathBuf>,
    /// Worker threads for cells (0 = all cores).
    pub workers: usize,
    /// Reuse completed cells from an existing journal.
    pub resume: bool,
    pub exec: Execution,
    /// Stop after this many newly computed cells (for interruption tests).
    pub max_new_cells: Option<usize>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            out_dir: None,
            workers: 0,
            resume: false,
            exec: Execution::Parallel,
            max_new_cells: None,
        }
    }
}

fn key(omega: f64, delta: f64) -> (u64, u64) {
    (omega.to_bits(), delta.to_bits())
}

/// Reads complete journal lines; a torn final line is dropped and the file
/// truncated to the last complete record.
fn read_journal(path: &Path) -> Result<BTreeMap<(u64, u64), CellRecord>> {
    let mut done = BTreeMap::new();
    if !path.exists() {
        return Ok(done);
    }
    let file = File::open(path)?;
    let mut good_len = 0u64;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    loop {
        line.clear();
        let read = reader.read_line(&mut line)?;
        if read == 0 || !line.ends_with('\n') {
            break;
        }
        match serde_json::from_str::<CellRecord>(line.trim_end()) {
            Ok(rec) => {
                good_len += read as u64;
                done.insert(key(rec.omega, rec.delta), rec);
            }
            Err(_) => break,
        }
    }
    OpenOptions::new().write(true).open(path)?.set_len(good_len)?;
    Ok(done)
}

/// Runs the sweep, persisting incrementally when an output directory is set.
pub fn run_sweep(spec: &SweepSpec, opts: &SweepOptions) -> Result<SweepResult> {
    spec.validate()?;
    let started = Instant::now();
    let (omegas, deltas) = spec.axes();
    let cells: Vec<(f64, f64)> = omegas
        .iter()
        .flat_map(|&o| deltas.iter().map(move |&d| (o, d)))
        .collect();

    let journal_path = opts.out_dir.as_ref().map(|d| d.join(JOURNAL_FILE));
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir)?;
    }
    let mut done = BTreeMap::new();
    if let Some(p) = &journal_path {
        if opts.resume {
            done = read_journal(p)?;
            done.retain(|_, r: &mut CellRecord| r.status == CellStatus::Ok);
        } else if p.exists() {
            fs::remove_file(p)?;
        }
    }
    let mut todo: Vec<(f64, f64)> = cells
        .iter()
        .copied()
        .filter(|&(o, d)| !done.contains_key(&key(o, d)))
        .collect();
    if let Some(limit) = opts.max_new_cells {
        todo.truncate(limit);
    }

    let writer = match &journal_path {
        Some(p) => Some(Mutex::new(OpenOptions::new().create(true).append(true).open(p)?)),
        None => None,
    };
    let fresh: Vec<Result<CellRecord>> = with_workers(opts.workers, || {
        map_indices(todo.len(), opts.exec, |k| {
            let (o, d) = todo[k];
            let rec = run_cell(spec, o, d, opts.exec);
            if let Some(w) = &writer {
                let mut line = serde_json::to_string(&rec)?;
                line.push('\n');
                let mut f = w.lock().expect("journal lock");
                f.write_all(line.as_bytes())?;
                f.flush()?;
            }
            Ok(rec)
        })
    });
    for rec in fresh {
        let rec = rec?;
        done.insert(key(rec.omega, rec.delta), rec);
    }

    let ordered: Vec<CellRecord> = cells
        .iter()
        .filter_map(|&(o, d)| done.get(&key(o, d)).cloned())
        .collect();
    let result = SweepResult {
        scheme: spec.scheme,
        omega_axis: omegas,
        delta_axis: deltas,
        gamma_ref: spec.gamma_ref(),
        cells: ordered,
    };
    if let Some(dir) = &opts.out_dir {
        if result.cells.len() == cells.len() {
            write_csv(&result, &dir.join(CSV_FILE))?;
        }
        let summary = SweepSummary {
            scheme: spec.scheme,
            omega_axis: result.omega_axis.clone(),
            delta_axis: result.delta_axis.clone(),
            omega_axis_mhz: result.omega_axis.iter().map(|v| v / (2.0 * std::f64::consts::PI)).collect(),
            delta_axis_mhz: result.delta_axis.iter().map(|v| v / (2.0 * std::f64::consts::PI)).collect(),
            gamma_ref: result.gamma_ref,
            config_hash: config_hash(spec)?,
            wall_time_s: started.elapsed().as_secs_f64(),
            complete: result.cells.len() == cells.len(),
            failed: result
                .cells
                .iter()
                .filter(|c| c.status == CellStatus::Failed)
                .cloned()
                .collect(),
            g2_zero: result.cells.iter().map(|c| c.g2_zero).collect(),
        };
        fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;
    }
    Ok(result)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub scheme: Scheme,
    pub omega_axis: Vec<f64>,
    pub delta_axis: Vec<f64>,
    pub omega_axis_mhz: Vec<f64>,
    pub delta_axis_mhz: Vec<f64>,
    pub gamma_ref: f64,
    pub config_hash: String,
    pub wall_time_s: f64,
    pub complete: bool,
    pub failed: Vec<CellRecord>,
    pub g2_zero: Vec<Option<f64>>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// Writes `omega_rad_per_us, delta_rad_per_us, p_emit, visibility, status`.
pub fn write_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = std::io::BufWriter::new(File::create(&tmp)?);
        writeln!(w, "omega_rad_per_us,delta_rad_per_us,p_emit,visibility,status")?;
        for c in &result.cells {
            let status = match c.status {
                CellStatus::Ok => "ok",
                CellStatus::Failed => "failed",
            };
            writeln!(
                w,
                "{:e},{:e},{},{},{}",
                c.omega,
                c.delta,
                opt(c.p_emit),
                opt(c.visibility),
                status
            )?;
        }
        w.flush()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feasibility {
    Both,
    SdOnly,
    DdOnly,
    /// No cell of either scheme reaches the threshold.
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceRow {
    pub threshold: f64,
    pub sd_envelope: Option<f64>,
    pub dd_envelope: Option<f64>,
    pub feasibility: Feasibility,
    /// SD reaches the threshold with strictly more efficiency than DD.
    pub counterexample: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub rows: Vec<DominanceRow>,
}

impl DominanceReport {
    pub fn counterexamples(&self) -> Vec<f64> {
        self.rows.iter().filter(|r| r.counterexample).map(|r| r.threshold).collect()
    }

    /// DD ≥ SD wherever both are feasible.
    pub fn dd_dominates(&self) -> bool {
        self.rows.iter().all(|r| !r.counterexample)
    }
}

fn envelope(result: &SweepResult, v: f64) -> Option<f64> {
    result
        .ok_cells()
        .filter_map(|c| match (c.visibility, c.p_emit) {
            (Some(vis), Some(p)) if vis >= v => Some(p),
            _ => None,
        })
        .max_by(f64::total_cmp)
}

/// Efficiency envelopes of both schemes for each visibility threshold.
pub fn dominance_report(sd: &SweepResult, dd: &SweepResult, thresholds: &[f64]) -> DominanceReport {
    let rows = thresholds
        .iter()
        .map(|&v| {
            let s = envelope(sd, v);
            let d = envelope(dd, v);
            let feasibility = match (s, d) {
                (Some(_), Some(_)) => Feasibility::Both,
                (Some(_), None) => Feasibility::SdOnly,
                (None, Some(_)) => Feasibility::DdOnly,
                (None, None) => Feasibility::Empty,
            };
            DominanceRow {
                threshold: v,
                sd_envelope: s,
                dd_envelope: d,
                feasibility,
                counterexample: matches!((s, d), (Some(s), Some(d)) if s > d),
            }
        })
        .collect();
    DominanceReport { rows }
}

/// Thresholds 0, 0.01, …, 1.
pub fn default_thresholds() -> Vec<f64> {
    (0..=100).map(|k| k as f64 / 100.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(v: f64, p: f64) -> CellRecord {
        CellRecord {
            omega: p,
            delta: v,
            p_emit: Some(p),
            visibility: Some(v),
            g2_zero: None,
            status: CellStatus::Ok,
            diagnostic: None,
        }
    }

    fn result(scheme: Scheme, cells: Vec<CellRecord>) -> SweepResult {
        SweepResult {
            scheme,
            omega_axis: vec![],
            delta_axis: vec![],
            gamma_ref: 1.0,
            cells,
        }
    }

    #[test]
    fn axes_and_validation() {
        let mut spec = SweepSpec::new(Scheme::SD, vec![0.1, 0.2], vec![-1.0, 1.0]);
        let (o, d) = spec.axes();
        let g = spec.gamma_ref();
        assert_eq!(o, vec![0.1 * g, 0.2 * g]);
        assert_eq!(d, vec![-g, g]);
        spec.validate().unwrap();
        spec.delta_values = Axis::Values(vec![1.0, 1.0]);
        assert!(spec.validate().is_err());
        spec.delta_values = Axis::Values(vec![]);
        assert!(spec.validate().is_err());
        let lin = Axis::Linspace { from: 0.0, to: 1.0, count: 5 };
        assert_eq!(lin.values(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn dominance_against_itself_has_no_counterexamples() {
        let dd = result(Scheme::DD, vec![cell(0.9, 0.01), cell(0.95, 0.005), cell(0.5, 0.02)]);
        let rep = dominance_report(&dd, &dd, &default_thresholds());
        assert!(rep.dd_dominates());
        for r in &rep.rows {
            assert_eq!(r.sd_envelope, r.dd_envelope);
        }
        let top = rep.rows.last().unwrap();
        assert_eq!(top.feasibility, Feasibility::Empty);
    }

    #[test]
    fn dominance_flags_counterexamples() {
        let sd = result(Scheme::SD, vec![cell(0.6, 0.05)]);
        let dd = result(Scheme::DD, vec![cell(0.9, 0.01)]);
        let rep = dominance_report(&sd, &dd, &[0.5, 0.7, 0.95]);
        assert!(rep.rows[0].counterexample);
        assert_eq!(rep.rows[1].feasibility, Feasibility::DdOnly);
        assert_eq!(rep.rows[2].feasibility, Feasibility::Empty);
        assert_eq!(rep.counterexamples(), vec![0.5]);
    }

    #[test]
    fn zero_drive_cell_emits_nothing() {
        let mut spec = SweepSpec::new(Scheme::SD, vec![0.0], vec![-0.5]);
        spec.correlation_points = 32;
        let res = run_sweep(&spec, &SweepOptions::default()).unwrap();
        let c = &res.cells[0];
        assert_eq!(c.status, CellStatus::Ok);
        assert!(c.p_emit.unwrap().abs() < 1e-12);
        assert_eq!(c.visibility, None);
    }

    #[test]
    fn journal_drops_torn_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(JOURNAL_FILE);
        let rec = cell(0.5, 0.01);
        let mut s = serde_json::to_string(&rec).unwrap();
        s.push('\n');
        s.push_str("{\"omega\": 1.0, \"del");
        fs::write(&p, &s).unwrap();
        let done = read_journal(&p).unwrap();
        assert_eq!(done.len(), 1);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.ends_with('\n'));
        assert_eq!(text.lines().count(), 1);
    }
}
