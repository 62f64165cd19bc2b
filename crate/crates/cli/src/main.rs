use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use ioncav::clickstream::{
    self, combine, cross_correlate_aligned, data_visibility, fold_profile, parse_events, synth_clicks, synth_hom,
    write_events, BinAlignment, ChannelMap, EventStream, SynthConfig, SynthSource,
};
use ioncav::config::{load_scheme_config, load_sweep_spec, preset, to_toml};
use ioncav::correlations::{compute_grid, CorrelationOptions};
use ioncav::dynamics::{photon_record, SchemeConfig};
use ioncav::export::{config_hash, write_grid_csv, write_profile_csv, write_trajectory_csv, PhotonSummary, RunManifest};
use ioncav::hom::{
    coincidence_density, fit_mismatch, hbt_g2_zero, tau_histogram, visibility, windowed_visibility_curve,
    write_curve_csv, DEFAULT_BIN_WIDTH, DEFAULT_WINDOW,
};
use ioncav::operators::Scheme;
use ioncav::sweep::{run_sweep, SweepOptions, CSV_FILE, JOURNAL_FILE, SUMMARY_FILE};
use ioncav::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "ioncav", version, about = "Ion-cavity single-photon simulator and time-tag analyzer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Photon emission dynamics: trajectory, temporal profile, P_emit.
    Photon {
        /// Config file, or `preset:sd` / `preset:dd`.
        config: String,
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Validate and print the resolved config without writing anything.
        #[arg(long)]
        dry_run: bool,
    },
    /// Two-photon interference: correlation grids, histograms, visibility.
    Hom {
        config: String,
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Polarization mismatch, degrees.
        #[arg(long, default_value_t = 0.0)]
        phi: f64,
        /// Visibility integration window, µs.
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: f64,
        /// Correlation grid size (defaults to the config grid).
        #[arg(long)]
        points: Option<usize>,
        /// Histogram bin width, µs.
        #[arg(long, default_value_t = DEFAULT_BIN_WIDTH)]
        bin: f64,
        /// Window sizes (µs) for the filtering curve.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.075, 0.15, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0])]
        windows: Vec<f64>,
        #[arg(long)]
        dry_run: bool,
    },
    /// (Ω, Δ) sweep of emission probability and visibility.
    Sweep {
        spec: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Continue from an existing journal in the output directory.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        dry_run: bool,
    },
    /// Analyze detector time-tag streams.
    Analyze {
        #[arg(long, value_enum)]
        mode: AnalyzeMode,
        /// Stream files: `hom` takes PARALLEL PERPENDICULAR, others one stream.
        #[arg(required = true, num_args = 1..=2)]
        streams: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        /// Bin width, µs (default 0.075 for hom/hbt, 0.020 for profile).
        #[arg(long)]
        bin: Option<f64>,
        /// τ range of the histogram, µs.
        #[arg(long, default_value_t = 2.5)]
        range: f64,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: f64,
        /// Side peaks averaged for g²(0).
        #[arg(long, default_value_t = 4)]
        side_peaks: usize,
        /// Optional model config: fit the polarization mismatch (hom mode).
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        model_points: Option<usize>,
    },
    /// Synthesize click streams from a simulated source (seeded).
    Synth {
        config: String,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SynthKind::Hom)]
        kind: SynthKind,
        /// Perpendicular pairs (hom) or emitted photons (profile).
        #[arg(long, default_value_t = 100_000)]
        events: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Polarization mismatch of the parallel stream, degrees.
        #[arg(long, default_value_t = 0.0)]
        phi: f64,
        /// Per-detector background, clicks per µs.
        #[arg(long, default_value_t = 0.0)]
        background: f64,
        #[arg(long, default_value_t = 1.0)]
        efficiency: f64,
        #[arg(long)]
        points: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AnalyzeMode {
    Hom,
    Hbt,
    Profile,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum SynthKind {
    Hom,
    Profile,
}

fn load_config(spec: &str) -> ioncav::Result<SchemeConfig> {
    match spec.strip_prefix("preset:") {
        Some("sd") => Ok(preset(Scheme::SD)),
        Some("dd") => Ok(preset(Scheme::DD)),
        Some(other) => Err(Error::Config(format!("unknown preset `{other}` (expected sd or dd)"))),
        None => load_scheme_config(Path::new(spec)),
    }
}

fn inputs_of(spec: &str) -> Vec<PathBuf> {
    if spec.starts_with("preset:") {
        vec![]
    } else {
        vec![PathBuf::from(spec)]
    }
}

fn require_out(out: Option<PathBuf>) -> ioncav::Result<PathBuf> {
    let dir = out.ok_or_else(|| Error::Config("--out is required unless --dry-run is given".into()))?;
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

struct Run {
    started: Instant,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn new() -> Self {
        Run {
            started: Instant::now(),
            outputs: Vec::new(),
        }
    }

    fn add(&mut self, p: PathBuf) -> PathBuf {
        self.outputs.push(p.clone());
        p
    }

    fn json(&mut self, p: PathBuf, value: &serde_json::Value) -> ioncav::Result<()> {
        fs::write(self.add(p), serde_json::to_string_pretty(value)?)?;
        Ok(())
    }

    fn finish(
        self,
        dir: &Path,
        hash: String,
        inputs: Vec<PathBuf>,
        tolerances: Option<ioncav::ode::Tolerances>,
        notes: Vec<String>,
    ) -> ioncav::Result<()> {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: std::env::args().collect::<Vec<_>>().join(" "),
            config_hash: hash,
            inputs,
            outputs: self.outputs,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            tolerances,
            notes,
        }
        .write(dir)
    }
}

fn cmd_photon(config: String, out: Option<PathBuf>, dry_run: bool) -> ioncav::Result<()> {
    let cfg = load_config(&config)?;
    if dry_run {
        print!("{}", to_toml(&cfg)?);
        return Ok(());
    }
    let dir = require_out(out)?;
    let mut run = Run::new();
    let rec = ioncav::dynamics::run_scheme(&cfg)?;
    write_trajectory_csv(&rec.trajectory, &run.add(dir.join("trajectory.csv")))?;
    write_profile_csv(&rec.times, &rec.profile, &run.add(dir.join("profile.csv")))?;
    let summary = PhotonSummary::from_record(&rec);
    run.json(dir.join("summary.json"), &serde_json::to_value(&summary)?)?;
    println!("p_emit = {:.6}", rec.p_emit);
    run.finish(&dir, config_hash(&cfg)?, inputs_of(&config), Some(cfg.solver.tolerances()), vec![])
}

#[allow(clippy::too_many_arguments)]
fn cmd_hom(
    config: String,
    out: Option<PathBuf>,
    phi_deg: f64,
    window: f64,
    points: Option<usize>,
    bin: f64,
    windows: Vec<f64>,
    dry_run: bool,
) -> ioncav::Result<()> {
    let cfg = load_config(&config)?;
    let n = points.unwrap_or(cfg.grid.n_points);
    if window.is_nan() || window <= 0.0 {
        return Err(Error::invalid("window", "must be positive"));
    }
    if dry_run {
        print!("{}", to_toml(&cfg)?);
        return Ok(());
    }
    let dir = require_out(out)?;
    let mut run = Run::new();
    let (grid, evolution) = compute_grid(&cfg, n, true, CorrelationOptions::default())?;
    let phi = phi_deg.to_radians();
    let density = coincidence_density(&grid, phi)?;
    density.check_invariants()?;
    let v = visibility(&density, window)?;
    let support = grid.times[grid.len() - 1] - grid.times[0];
    let hist = tau_histogram(&density, bin, support)?;
    hist.write_csv(&run.add(dir.join("hom_histogram.csv")))?;
    let mut ts: Vec<f64> = windows.into_iter().filter(|&t| t / 2.0 <= support + 1e-12).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let curve = windowed_visibility_curve(&density, &ts, 1.0)?;
    write_curve_csv(&curve, &run.add(dir.join("window_curve.csv")))?;
    write_grid_csv(&grid, &cfg.params.cavity, &run.add(dir.join("correlations.csv")))?;
    run.outputs.push(dir.join("correlations.json"));
    let mut run_cfg = cfg.clone();
    run_cfg.grid.n_points = n;
    let p_emit = photon_record(&run_cfg, evolution.trajectory).p_emit;
    let g2 = hbt_g2_zero(&grid).ok();
    run.json(
        dir.join("visibility.json"),
        &json!({
            "visibility": v,
            "phi_deg": phi_deg,
            "window_us": window,
            "grid_points": n,
            "p_emit": p_emit,
            "g2_zero": g2,
        }),
    )?;
    println!("visibility = {v:.6} (phi = {phi_deg} deg, T = {window} us)");
    run.finish(&dir, config_hash(&cfg)?, inputs_of(&config), Some(cfg.solver.tolerances()), vec![])
}

fn cmd_sweep(spec_path: PathBuf, out: Option<PathBuf>, workers: usize, resume: bool, dry_run: bool) -> ioncav::Result<()> {
    let spec = load_sweep_spec(&spec_path)?;
    if dry_run {
        println!("{}", serde_json::to_string_pretty(&spec)?);
        return Ok(());
    }
    let dir = require_out(out)?;
    let mut run = Run::new();
    let opts = SweepOptions {
        out_dir: Some(dir.clone()),
        workers,
        resume,
        ..Default::default()
    };
    let result = run_sweep(&spec, &opts)?;
    for f in [JOURNAL_FILE, CSV_FILE, SUMMARY_FILE] {
        run.add(dir.join(f));
    }
    let failed = result.cells.iter().filter(|c| c.status != ioncav::sweep::CellStatus::Ok).count();
    println!("{} cells, {failed} failed", result.cells.len());
    let tol = spec.base().solver.tolerances();
    run.finish(&dir, config_hash(&spec)?, vec![spec_path], Some(tol), vec![])
}

fn read_stream(path: &Path) -> ioncav::Result<EventStream> {
    let f = fs::File::open(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_events(BufReader::new(f), ChannelMap::default())
}

#[allow(clippy::too_many_arguments)]
fn cmd_analyze(
    mode: AnalyzeMode,
    streams: Vec<PathBuf>,
    out: PathBuf,
    bin: Option<f64>,
    range: f64,
    window: f64,
    side_peaks: usize,
    model: Option<String>,
    model_points: Option<usize>,
) -> ioncav::Result<()> {
    fs::create_dir_all(&out)?;
    let mut run = Run::new();
    let hash = {
        let mut h = Vec::new();
        for s in &streams {
            h.push(fs::read(s).map(|b| b.len()).unwrap_or(0));
        }
        config_hash(&json!({ "streams": streams, "sizes": h, "bin": bin, "range": range, "window": window }))?
    };
    match mode {
        AnalyzeMode::Hom => {
            if streams.len() != 2 {
                return Err(Error::Config("hom mode needs a parallel and a perpendicular stream".into()));
            }
            let bin = bin.unwrap_or(DEFAULT_BIN_WIDTH);
            let par = cross_correlate_aligned(&read_stream(&streams[0])?, bin, range, BinAlignment::CenteredAtZero)?;
            let perp = cross_correlate_aligned(&read_stream(&streams[1])?, bin, range, BinAlignment::CenteredAtZero)?;
            let hist = combine(&par, &perp)?;
            hist.write_csv(&run.add(out.join("hom_histogram.csv")))?;
            let v = data_visibility(&par, &perp, window)?;
            let mut report = json!({
                "visibility": v.value,
                "sigma": v.sigma,
                "window_us": window,
                "pairs_parallel": par.counts_par.iter().sum::<f64>(),
                "pairs_perpendicular": perp.counts_perp.iter().sum::<f64>(),
            });
            if let Some(m) = model {
                let cfg = load_config(&m)?;
                let n = model_points.unwrap_or(cfg.grid.n_points);
                let (grid, _) = compute_grid(&cfg, n, true, CorrelationOptions::default())?;
                let density = coincidence_density(&grid, 0.0)?;
                let fit = fit_mismatch(&hist, &density, window)?;
                report["fit_phi_deg"] = json!(fit.phi.to_degrees());
                report["corrected_visibility"] = json!(fit.corrected_visibility);
            }
            println!("visibility = {:.4} ± {:.4}", v.value, v.sigma);
            run.json(out.join("visibility.json"), &report)?;
        }
        AnalyzeMode::Hbt => {
            let g = clickstream::hbt_g2_zero(&read_stream(&streams[0])?, side_peaks)?;
            println!("g2(0) = {:.5} ± {:.5}", g.g2_zero, g.sigma);
            run.json(out.join("hbt.json"), &serde_json::to_value(g)?)?;
        }
        AnalyzeMode::Profile => {
            let p = fold_profile(&read_stream(&streams[0])?, bin.unwrap_or(clickstream::DEFAULT_PROFILE_BIN))?;
            p.write_csv(&run.add(out.join("profile.csv")))?;
        }
    }
    run.finish(&out, hash, streams, None, vec![])
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    config: String,
    out: PathBuf,
    kind: SynthKind,
    events: usize,
    seed: u64,
    phi_deg: f64,
    background: f64,
    efficiency: f64,
    points: Option<usize>,
) -> ioncav::Result<()> {
    let cfg = load_config(&config)?;
    fs::create_dir_all(&out)?;
    let mut run = Run::new();
    let synth = SynthConfig {
        n_events: events,
        background_rate: background,
        efficiency,
        seed,
        ..Default::default()
    };
    let write = |run: &mut Run, name: &str, s: &EventStream| -> ioncav::Result<()> {
        let f = fs::File::create(run.add(out.join(name)))?;
        write_events(s, std::io::BufWriter::new(f))
    };
    match kind {
        SynthKind::Profile => {
            let rec = ioncav::dynamics::run_scheme(&cfg)?;
            let s = synth_clicks(
                SynthSource::Singles {
                    times: &rec.times,
                    density: &rec.profile,
                },
                &synth,
                ChannelMap::default(),
            )?;
            write(&mut run, "events.csv", &s)?;
        }
        SynthKind::Hom => {
            let n = points.unwrap_or(cfg.grid.n_points);
            let (grid, _) = compute_grid(&cfg, n, true, CorrelationOptions::default())?;
            let density = coincidence_density(&grid, phi_deg.to_radians())?;
            let (par, perp) = synth_hom(&density, events, &synth, ChannelMap::default())?;
            write(&mut run, "events_parallel.csv", &par)?;
            write(&mut run, "events_perpendicular.csv", &perp)?;
            run.json(
                out.join("generator.json"),
                &json!({ "visibility": visibility(&density, DEFAULT_WINDOW)?, "phi_deg": phi_deg }),
            )?;
        }
    }
    let hash = config_hash(&json!({ "config": cfg, "synth": synth, "phi_deg": phi_deg }))?;
    run.finish(&out, hash, inputs_of(&config), None, vec![format!("seed {seed}")])
}

fn run(cli: Cli) -> ioncav::Result<()> {
    match cli.command {
        Command::Photon { config, out, dry_run } => cmd_photon(config, out, dry_run),
        Command::Hom {
            config,
            out,
            phi,
            window,
            points,
            bin,
            windows,
            dry_run,
        } => cmd_hom(config, out, phi, window, points, bin, windows, dry_run),
        Command::Sweep {
            spec,
            out,
            workers,
            resume,
            dry_run,
        } => cmd_sweep(spec, out, workers, resume, dry_run),
        Command::Analyze {
            mode,
            streams,
            out,
            bin,
            range,
            window,
            side_peaks,
            model,
            model_points,
        } => cmd_analyze(mode, streams, out, bin, range, window, side_peaks, model, model_points),
        Command::Synth {
            config,
            out,
            kind,
            events,
            seed,
            phi,
            background,
            efficiency,
            points,
        } => cmd_synth(config, out, kind, events, seed, phi, background, efficiency, points),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}
