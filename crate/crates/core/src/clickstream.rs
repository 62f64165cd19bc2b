//! Detector time tags: parsing, folding onto the experiment cycle,
//! two-detector cross-correlation, data-side visibility and g²(0), and a
//! seeded synthesizer that turns simulated densities into click streams.
//!
//! Stream format (CSV, one event per line, integer picoseconds):
//!
//! ```text
//! # ioncav-events v1
//! channel,timestamp_ps
//! 0,0
//! 1,1250000
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::hom::{CoincidenceHistogram, Normalization};
use crate::{Error, Result};

pub const FORMAT_HEADER: &str = "# ioncav-events v1";
/// Experiment repetition period, µs.
pub const DEFAULT_CYCLE_PERIOD: f64 = 7.38;
/// One sync pulse every this many cycles.
pub const DEFAULT_SYNC_DIVISOR: u32 = 256;
/// Default profile bin, µs.
pub const DEFAULT_PROFILE_BIN: f64 = 0.020;

const PS_PER_US: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelMap {
    pub det1: u32,
    pub det2: u32,
    pub sync: u32,
}

impl Default for ChannelMap {
    fn default() -> Self {
        ChannelMap { det1: 1, det2: 2, sync: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Det1,
    Det2,
    Sync,
}

impl ChannelMap {
    pub fn role(&self, channel: u32) -> Option<Role> {
        if channel == self.det1 {
            Some(Role::Det1)
        } else if channel == self.det2 {
            Some(Role::Det2)
        } else if channel == self.sync {
            Some(Role::Sync)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Event {
    pub timestamp_ps: i64,
    pub channel: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    /// Sorted by timestamp.
    pub events: Vec<Event>,
    pub channel_map: ChannelMap,
    /// µs; `None` means it must come from sync events.
    pub cycle_period: Option<f64>,
    pub sync_divisor: u32,
}

impl EventStream {
    pub fn new(channel_map: ChannelMap) -> Self {
        EventStream {
            events: Vec::new(),
            channel_map,
            cycle_period: Some(DEFAULT_CYCLE_PERIOD),
            sync_divisor: DEFAULT_SYNC_DIVISOR,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    fn times_of(&self, role: Role) -> impl Iterator<Item = i64> + '_ {
        self.events
            .iter()
            .filter(move |e| self.channel_map.role(e.channel) == Some(role))
            .map(|e| e.timestamp_ps)
    }

    pub fn sync_times(&self) -> Vec<i64> {
        self.times_of(Role::Sync).collect()
    }

    /// Cycle period from the median sync spacing divided by the divisor.
    pub fn inferred_cycle_period(&self) -> Option<f64> {
        let sync = self.sync_times();
        if sync.len() < 2 {
            return None;
        }
        let mut gaps: Vec<i64> = sync.windows(2).map(|w| w[1] - w[0]).collect();
        gaps.sort_unstable();
        let median = gaps[gaps.len() / 2] as f64;
        Some(median / self.sync_divisor as f64 / PS_PER_US)
    }

    /// Cycle period in ps, preferring sync inference.
    fn period_ps(&self) -> Result<f64> {
        self.inferred_cycle_period()
            .or(self.cycle_period)
            .map(|p| p * PS_PER_US)
            .ok_or(Error::NoPhaseReference)
    }

    /// Checks sync spacing against `divisor · period` within `jitter_ps`.
    pub fn check_sync(&self, jitter_ps: i64) -> Result<()> {
        let Some(period) = self.cycle_period.or(self.inferred_cycle_period()) else {
            return Ok(());
        };
        let expected = (period * PS_PER_US * self.sync_divisor as f64).round() as i64;
        for w in self.sync_times().windows(2) {
            if ((w[1] - w[0]) - expected).abs() > jitter_ps {
                return Err(Error::invalid(
                    "sync",
                    format!("sync spacing {} ps deviates from {expected} ps", w[1] - w[0]),
                ));
            }
        }
        Ok(())
    }

    /// (cycle index, phase in ps) of every detector click.
    fn phased_clicks(&self) -> Result<Vec<(Role, i64, f64)>> {
        let period = self.period_ps()?;
        let mut last_sync: Option<(i64, i64)> = None; // (timestamp, sync ordinal)
        let mut n_sync = 0i64;
        let mut out = Vec::new();
        for e in &self.events {
            match self.channel_map.role(e.channel) {
                Some(Role::Sync) => {
                    last_sync = Some((e.timestamp_ps, n_sync));
                    n_sync += 1;
                }
                Some(role) => {
                    let (origin, base) = match last_sync {
                        Some((t, k)) => (t, k * self.sync_divisor as i64),
                        None => (0, 0),
                    };
                    let rel = (e.timestamp_ps - origin) as f64;
                    let k = (rel / period).floor();
                    out.push((role, base + k as i64, rel - k * period));
                }
                None => {}
            }
        }
        Ok(out)
    }
}

/// Parses the CSV stream format.
pub fn parse_events<R: BufRead>(input: R, channel_map: ChannelMap) -> Result<EventStream> {
    let mut stream = EventStream::new(channel_map);
    let mut last: BTreeMap<u32, i64> = BTreeMap::new();
    for (k, line) in input.lines().enumerate() {
        let lineno = k + 1;
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || t.eq_ignore_ascii_case("channel,timestamp_ps") {
            continue;
        }
        let malformed = |reason: &str| Error::MalformedRecord {
            line: lineno,
            reason: reason.to_string(),
        };
        let mut parts = t.split(',');
        let (Some(c), Some(ts), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(malformed("expected `channel,timestamp_ps`"));
        };
        let channel: u32 = c.trim().parse().map_err(|_| malformed("channel is not an integer"))?;
        let timestamp_ps: i64 = ts.trim().parse().map_err(|_| malformed("timestamp is not an integer"))?;
        if channel_map.role(channel).is_none() {
            return Err(Error::UnknownChannel { channel, line: lineno });
        }
        if let Some(&prev) = last.get(&channel) {
            if timestamp_ps < prev {
                return Err(malformed("timestamp decreases within channel"));
            }
        }
        last.insert(channel, timestamp_ps);
        stream.events.push(Event { timestamp_ps, channel });
    }
    stream.events.sort();
    if let Some(p) = stream.inferred_cycle_period() {
        stream.cycle_period = Some(p);
    }
    Ok(stream)
}

pub fn write_events<W: Write>(stream: &EventStream, mut out: W) -> Result<()> {
    writeln!(out, "{FORMAT_HEADER}")?;
    writeln!(out, "channel,timestamp_ps")?;
    for e in &stream.events {
        writeln!(out, "{},{}", e.channel, e.timestamp_ps)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Profile {
    /// Phase bin edges, µs; the last bin is truncated at the period.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Unit-area density, 1/µs.
    pub density: Vec<f64>,
    pub errors: Vec<f64>,
}

impl Profile {
    pub fn centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect()
    }

    /// Writes `t_us, probability_density_per_us` (the simulated profile schema).
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "t_us,probability_density_per_us")?;
        for (c, d) in self.centers().iter().zip(&self.density) {
            writeln!(w, "{c:e},{d:e}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Histogram of detector click phases within the cycle.
pub fn fold_profile(stream: &EventStream, bin: f64) -> Result<Profile> {
    if !(bin > 0.0) {
        return Err(Error::invalid("bin", "must be positive"));
    }
    let period = stream.period_ps()? / PS_PER_US;
    let nbins = (period / bin).ceil() as usize;
    let bin_edges: Vec<f64> = (0..=nbins).map(|k| (k as f64 * bin).min(period)).collect();
    let mut counts = vec![0u64; nbins];
    for (_, _, phase) in stream.phased_clicks()? {
        let k = ((phase / PS_PER_US / bin) as usize).min(nbins - 1);
        counts[k] += 1;
    }
    let total: u64 = counts.iter().sum();
    let norm = |c: f64, k: usize| {
        if total == 0 {
            0.0
        } else {
            c / (total as f64 * (bin_edges[k + 1] - bin_edges[k]))
        }
    };
    let density = counts.iter().enumerate().map(|(k, &c)| norm(c as f64, k)).collect();
    let errors = counts.iter().enumerate().map(|(k, &c)| norm((c as f64).sqrt(), k)).collect();
    Ok(Profile {
        bin_edges,
        counts,
        density,
        errors,
    })
}

/// Bin placement of τ histograms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinAlignment {
    /// Edges at multiples of the bin width: [0, w), [w, 2w), …
    #[default]
    EdgeAtZero,
    /// Bins centred on multiples of the bin width (matches simulated histograms).
    CenteredAtZero,
}

/// Per cycle: (det1 times, det2 times) in µs from the cycle start.
type CycleClicks = BTreeMap<i64, (Vec<f64>, Vec<f64>)>;

fn clicks_by_cycle(stream: &EventStream) -> Result<CycleClicks> {
    let mut by_cycle: BTreeMap<i64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (role, cycle, phase) in stream.phased_clicks()? {
        let entry = by_cycle.entry(cycle).or_default();
        match role {
            Role::Det1 => entry.0.push(phase),
            Role::Det2 => entry.1.push(phase),
            Role::Sync => {}
        }
    }
    Ok(by_cycle)
}

/// Counts of τ = t_det2 − t_det1 over pairs within the same cycle, with
/// √N errors.
pub fn cross_correlate(stream: &EventStream, bin: f64, range: f64) -> Result<CoincidenceHistogram> {
    cross_correlate_aligned(stream, bin, range, BinAlignment::EdgeAtZero)
}

pub fn cross_correlate_aligned(
    stream: &EventStream,
    bin: f64,
    range: f64,
    alignment: BinAlignment,
) -> Result<CoincidenceHistogram> {
    if !(bin > 0.0 && range > 0.0) {
        return Err(Error::invalid("bin/range", "must be positive"));
    }
    let (lo, nbins) = match alignment {
        BinAlignment::EdgeAtZero => {
            let half = (range / bin).ceil() as i64;
            (-(half as f64) * bin, (2 * half) as usize)
        }
        BinAlignment::CenteredAtZero => {
            let half = (range / bin - 0.5).round().max(0.0) as i64;
            (-(half as f64 + 0.5) * bin, (2 * half + 1) as usize)
        }
    };
    let bin_edges: Vec<f64> = (0..=nbins).map(|k| lo + k as f64 * bin).collect();
    let hi = bin_edges[nbins];
    let mut counts = vec![0.0; nbins];
    for (d1, d2) in clicks_by_cycle(stream)?.values() {
        for &t1 in d1 {
            for &t2 in d2 {
                let tau = (t2 - t1) / PS_PER_US;
                if tau >= lo && tau < hi {
                    let k = (((tau - lo) / bin).floor() as usize).min(nbins - 1);
                    counts[k] += 1.0;
                }
            }
        }
    }
    let errors: Vec<f64> = counts.iter().map(|c: &f64| c.sqrt()).collect();
    Ok(CoincidenceHistogram {
        bin_edges,
        counts_par: counts.clone(),
        counts_perp: counts,
        err_par: errors.clone(),
        err_perp: errors,
        normalization: Normalization::Raw,
    })
}

/// Combines a parallel-polarization and a perpendicular-polarization
/// cross-correlation into one histogram.
pub fn combine(par: &CoincidenceHistogram, perp: &CoincidenceHistogram) -> Result<CoincidenceHistogram> {
    if par.bin_edges != perp.bin_edges {
        return Err(Error::invalid("histograms", "binning differs"));
    }
    Ok(CoincidenceHistogram {
        bin_edges: par.bin_edges.clone(),
        counts_par: par.counts_par.clone(),
        counts_perp: perp.counts_perp.clone(),
        err_par: par.err_par.clone(),
        err_perp: perp.err_perp.clone(),
        normalization: Normalization::Raw,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

/// V = 1 − N_par/N_perp over bins with |τ centre| ≤ T/2 and Poisson errors
/// on both (independent) integrals.
pub fn data_visibility(par: &CoincidenceHistogram, perp: &CoincidenceHistogram, window: f64) -> Result<Estimate> {
    data_visibility_scaled(par, perp, window, 1.0, 1.0)
}

/// As [`data_visibility`] with each dataset divided by its number of trials
/// (or any exposure measure).
pub fn data_visibility_scaled(
    par: &CoincidenceHistogram,
    perp: &CoincidenceHistogram,
    window: f64,
    exposure_par: f64,
    exposure_perp: f64,
) -> Result<Estimate> {
    if par.bin_edges != perp.bin_edges {
        return Err(Error::invalid("histograms", "binning differs"));
    }
    let sum = |h: &CoincidenceHistogram, par_side: bool| -> f64 {
        h.centers()
            .iter()
            .enumerate()
            .filter(|(_, c)| c.abs() <= window / 2.0 + 1e-12)
            .map(|(k, _)| if par_side { h.counts_par[k] } else { h.counts_perp[k] })
            .sum()
    };
    let np = sum(par, true);
    let nq = sum(perp, false);
    if nq <= 0.0 {
        return Err(Error::ZeroDenominator("perpendicular coincidences"));
    }
    let r = (np / exposure_par) / (nq / exposure_perp);
    let rel = (if np > 0.0 { 1.0 / np } else { 0.0 } + 1.0 / nq).sqrt();
    Ok(Estimate {
        value: 1.0 - r,
        sigma: r * rel,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HbtEstimate {
    pub g2_zero: f64,
    pub sigma: f64,
    /// 1σ one-sided upper bound, used when no central pairs are seen.
    pub upper_bound: f64,
    pub central_pairs: u64,
    pub side_pairs_mean: f64,
}

/// Pulsed g²(0): same-cycle det1/det2 pairs over the mean of pairs between
/// cycles k and k ± m, m = 1..=side_peaks.
pub fn hbt_g2_zero(stream: &EventStream, side_peaks: usize) -> Result<HbtEstimate> {
    if side_peaks == 0 {
        return Err(Error::invalid("side_peaks", "need at least one side peak"));
    }
    let by_cycle = clicks_by_cycle(stream)?;
    let count = |m: i64| -> u64 {
        by_cycle
            .iter()
            .map(|(k, (d1, _))| {
                let d2 = by_cycle.get(&(k + m)).map(|e| e.1.len()).unwrap_or(0);
                (d1.len() * d2) as u64
            })
            .sum()
    };
    let central = count(0);
    let side: u64 = (1..=side_peaks as i64).map(|m| count(m) + count(-m)).sum();
    let side_mean = side as f64 / (2 * side_peaks) as f64;
    if side_mean <= 0.0 {
        return Err(Error::ZeroDenominator("side-peak coincidences"));
    }
    let g2 = central as f64 / side_mean;
    let rel_side = 1.0 / side as f64;
    let sigma = if central > 0 {
        g2 * (1.0 / central as f64 + rel_side).sqrt()
    } else {
        0.0
    };
    // 1σ (84 %) Poisson upper limit for zero observed counts is 1.84
    let upper = if central > 0 { g2 + sigma } else { 1.84 / side_mean };
    Ok(HbtEstimate {
        g2_zero: g2,
        sigma,
        upper_bound: upper,
        central_pairs: central,
        side_pairs_mean: side_mean,
    })
}

/// What the synthesizer samples from.
#[derive(Debug, Clone, Copy)]
pub enum SynthSource<'a> {
    /// Single-click density on a time grid (e.g. a flux profile); each
    /// event lands on det1 or det2 with equal probability.
    Singles { times: &'a [f64], density: &'a [f64] },
    /// Joint density of (det1 at t₁, det2 at t₂) on a time grid.
    Pairs { times: &'a [f64], density: &'a DMatrix<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Number of source events, one per cycle.
    pub n_events: usize,
    /// Per-detector background, clicks per µs.
    pub background_rate: f64,
    /// Per-click detection probability.
    pub efficiency: f64,
    pub seed: u64,
    pub cycle_period: f64,
    pub sync_divisor: u32,
    /// Position of the simulation window start within the cycle, µs.
    pub window_offset: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_events: 0,
            background_rate: 0.0,
            efficiency: 1.0,
            seed: 0,
            cycle_period: DEFAULT_CYCLE_PERIOD,
            sync_divisor: DEFAULT_SYNC_DIVISOR,
            window_offset: 0.5,
        }
    }
}

/// Cumulative masses of the cells [t_k, t_{k+1}] of a piecewise-linear density.
fn cell_cdf(times: &[f64], density: &[f64]) -> Result<Vec<f64>> {
    if times.len() < 2 || times.len() != density.len() {
        return Err(Error::InvalidDensity("density and grid lengths differ or grid too short".into()));
    }
    if density.iter().any(|&d| d < 0.0 || !d.is_finite()) {
        return Err(Error::InvalidDensity("negative or non-finite mass".into()));
    }
    let mut cdf = Vec::with_capacity(times.len() - 1);
    let mut acc = 0.0;
    for k in 0..times.len() - 1 {
        acc += 0.5 * (density[k] + density[k + 1]) * (times[k + 1] - times[k]);
        cdf.push(acc);
    }
    if acc <= 0.0 {
        return Err(Error::InvalidDensity("zero total mass".into()));
    }
    Ok(cdf)
}

fn pick(cdf: &[f64], u: f64) -> usize {
    let target = u * cdf[cdf.len() - 1];
    cdf.partition_point(|&c| c <= target).min(cdf.len() - 1)
}

/// Exact draw from a linear density between (0, a) and (1, b) on [0, 1].
fn linear_fraction(a: f64, b: f64, u: f64) -> f64 {
    if (a - b).abs() <= 1e-12 * (a + b) {
        return u;
    }
    // F(x) = (a x + (b − a) x² / 2) / ((a + b) / 2)
    let s = b - a;
    let m = 0.5 * (a + b);
    ((a * a + 2.0 * s * m * u).max(0.0).sqrt() - a) / s
}

/// Draws detection times from `source` and returns a sorted stream with
/// sync pulses, thinning by `efficiency` and uniform background.
pub fn synth_clicks(source: SynthSource<'_>, cfg: &SynthConfig, channel_map: ChannelMap) -> Result<EventStream> {
    if !(0.0..=1.0).contains(&cfg.efficiency) {
        return Err(Error::invalid("efficiency", "must lie in [0, 1]"));
    }
    if cfg.background_rate < 0.0 {
        return Err(Error::invalid("background_rate", "must be >= 0"));
    }
    if !(cfg.cycle_period > 0.0) || cfg.sync_divisor == 0 {
        return Err(Error::invalid("cycle_period", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let period_ps = cfg.cycle_period * PS_PER_US;
    let to_ps = |cycle: usize, t: f64| (cycle as f64 * period_ps + (cfg.window_offset + t) * PS_PER_US).round() as i64;
    let mut events = Vec::new();

    enum Sampler {
        Singles(Vec<f64>),
        Pairs(Vec<f64>, usize),
    }
    let sampler = match source {
        SynthSource::Singles { times, density } => Sampler::Singles(cell_cdf(times, density)?),
        SynthSource::Pairs { times, density } => {
            let n = times.len();
            if density.nrows() != n || density.ncols() != n || n < 2 {
                return Err(Error::InvalidDensity("pair density does not match the grid".into()));
            }
            if density.iter().any(|&d| d < 0.0 || !d.is_finite()) {
                return Err(Error::InvalidDensity("negative or non-finite mass".into()));
            }
            // cell mass = mean of the four corners × area (2-D trapezoid)
            let mut cdf = Vec::with_capacity((n - 1) * (n - 1));
            let mut acc = 0.0;
            for i in 0..n - 1 {
                for j in 0..n - 1 {
                    let m = 0.25
                        * (density[(i, j)] + density[(i + 1, j)] + density[(i, j + 1)] + density[(i + 1, j + 1)])
                        * (times[i + 1] - times[i])
                        * (times[j + 1] - times[j]);
                    acc += m;
                    cdf.push(acc);
                }
            }
            if acc <= 0.0 {
                return Err(Error::InvalidDensity("zero total mass".into()));
            }
            Sampler::Pairs(cdf, n - 1)
        }
    };
    let background = if cfg.background_rate > 0.0 {
        Some(
            Poisson::new(cfg.background_rate * cfg.cycle_period)
                .map_err(|e| Error::invalid("background_rate", e.to_string()))?,
        )
    } else {
        None
    };

    for cycle in 0..cfg.n_events {
        if cycle % cfg.sync_divisor as usize == 0 {
            events.push(Event {
                timestamp_ps: (cycle as f64 * period_ps).round() as i64,
                channel: channel_map.sync,
            });
        }
        match &sampler {
            Sampler::Singles(cdf) => {
                let SynthSource::Singles { times, density } = source else { unreachable!() };
                let k = pick(cdf, rng.random());
                let f = linear_fraction(density[k], density[k + 1], rng.random());
                let t = times[k] + f * (times[k + 1] - times[k]);
                let det = if rng.random::<bool>() { channel_map.det1 } else { channel_map.det2 };
                if rng.random::<f64>() < cfg.efficiency {
                    events.push(Event {
                        timestamp_ps: to_ps(cycle, t),
                        channel: det,
                    });
                }
            }
            Sampler::Pairs(cdf, m) => {
                let SynthSource::Pairs { times, .. } = source else { unreachable!() };
                let c = pick(cdf, rng.random());
                let (i, j) = (c / m, c % m);
                let t1 = times[i] + rng.random::<f64>() * (times[i + 1] - times[i]);
                let t2 = times[j] + rng.random::<f64>() * (times[j + 1] - times[j]);
                let keep1 = rng.random::<f64>() < cfg.efficiency;
                let keep2 = rng.random::<f64>() < cfg.efficiency;
                if keep1 {
                    events.push(Event {
                        timestamp_ps: to_ps(cycle, t1),
                        channel: channel_map.det1,
                    });
                }
                if keep2 {
                    events.push(Event {
                        timestamp_ps: to_ps(cycle, t2),
                        channel: channel_map.det2,
                    });
                }
            }
        }
        if let Some(pois) = &background {
            for det in [channel_map.det1, channel_map.det2] {
                let n: f64 = pois.sample(&mut rng);
                for _ in 0..n as u64 {
                    let phase = rng.random::<f64>() * period_ps;
                    events.push(Event {
                        timestamp_ps: (cycle as f64 * period_ps + phase).floor() as i64,
                        channel: det,
                    });
                }
            }
        }
    }
    events.sort();
    Ok(EventStream {
        events,
        channel_map,
        cycle_period: Some(cfg.cycle_period),
        sync_divisor: cfg.sync_divisor,
    })
}

/// Parallel and perpendicular coincidence streams drawn from a simulated
/// density. `n_perp` pairs are drawn for the perpendicular stream; the
/// parallel count is Poisson with mean `n_perp · ∫∫p_par / ∫∫p_perp`, so raw
/// counts carry the visibility.
pub fn synth_hom(
    density: &crate::hom::CoincidenceDensity,
    n_perp: usize,
    cfg: &SynthConfig,
    channel_map: ChannelMap,
) -> Result<(EventStream, EventStream)> {
    let mass = |m: &DMatrix<f64>| -> f64 {
        let w = crate::hom::trapezoid_weights(&density.times);
        let mut s = 0.0;
        for i in 0..w.len() {
            for j in 0..w.len() {
                s += w[i] * w[j] * m[(i, j)];
            }
        }
        s
    };
    let perp_mass = mass(&density.p_perp);
    if perp_mass <= 0.0 {
        return Err(Error::InvalidDensity("zero perpendicular mass".into()));
    }
    let par = density.p_par.map(|v| v.max(0.0));
    let ratio = mass(&par) / perp_mass;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_9a12);
    let n_par = if ratio > 0.0 {
        let pois = Poisson::new(n_perp as f64 * ratio).map_err(|e| Error::InvalidDensity(e.to_string()))?;
        pois.sample(&mut rng) as usize
    } else {
        0
    };
    let perp_cfg = SynthConfig {
        n_events: n_perp,
        seed: cfg.seed.wrapping_add(1),
        ..*cfg
    };
    let perp = synth_clicks(
        SynthSource::Pairs {
            times: &density.times,
            density: &density.p_perp,
        },
        &perp_cfg,
        channel_map,
    )?;
    let par_cfg = SynthConfig { n_events: n_par, ..*cfg };
    let par = if n_par > 0 {
        synth_clicks(SynthSource::Pairs { times: &density.times, density: &par }, &par_cfg, channel_map)?
    } else {
        let mut s = EventStream::new(channel_map);
        s.cycle_period = Some(cfg.cycle_period);
        s.sync_divisor = cfg.sync_divisor;
        s
    };
    Ok((par, perp))
}
