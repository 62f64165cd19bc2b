//! Two-photon interference of two identical, independent sources meeting on
//! a balanced beam splitter.
//!
//! With G1, G2 and n(t) of the detected mode, the joint density of a click
//! at one output at t₁ and at the other output at t₂ is
//!
//! ```text
//! p_perp(t₁, t₂) = F² [½ G2(t₁, t₂) + ½ n(t₁) n(t₂)]
//! p_par(t₁, t₂)  = p_perp(t₁, t₂) − F² ½ cos²φ |G1(t₁, t₂)|²
//! ```
//!
//! where F = 2κη converts intracavity photon number to outcoupled flux and φ
//! is the polarization mismatch between the two photons. Terms linear in a
//! single source field are dropped (no mutual optical phase between
//! consecutive photons).

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::correlations::CorrelationGrid;
use crate::{Error, Result};

/// Default histogram bin width, µs.
pub const DEFAULT_BIN_WIDTH: f64 = 0.075;
/// Default integration window for the visibility, µs.
pub const DEFAULT_WINDOW: f64 = 5.0;

#[derive(Debug, Clone)]
pub struct CoincidenceDensity {
    pub times: Vec<f64>,
    pub p_par: DMatrix<f64>,
    pub p_perp: DMatrix<f64>,
    /// Polarization mismatch, radians.
    pub mismatch_angle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    PerpAreaUnity,
    Raw,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    pub bin_edges: Vec<f64>,
    pub counts_par: Vec<f64>,
    pub counts_perp: Vec<f64>,
    pub err_par: Vec<f64>,
    pub err_perp: Vec<f64>,
    pub normalization: Normalization,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WindowPoint {
    pub window: f64,
    pub visibility: f64,
    pub coincidence_probability: f64,
}

impl CoincidenceDensity {
    pub fn spacing(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    /// Half-width of the τ support, µs.
    pub fn support(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    /// Symmetry, non-negativity and (for φ = 0) p_perp ≥ p_par.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.times.len();
        let scale = self.p_perp.amax().max(f64::MIN_POSITIVE);
        let tol = 1e-12 * scale.max(1.0);
        for i in 0..n {
            for j in 0..n {
                for m in [&self.p_par, &self.p_perp] {
                    if m[(i, j)] < -tol || (m[(i, j)] - m[(j, i)]).abs() > tol {
                        return Err(Error::InvariantViolation(format!("coincidence density invalid at ({i},{j})")));
                    }
                }
                if self.mismatch_angle == 0.0 && self.p_par[(i, j)] > self.p_perp[(i, j)] + tol {
                    return Err(Error::InvariantViolation(format!("p_par > p_perp at ({i},{j})")));
                }
            }
        }
        Ok(())
    }

    /// Mass of each τ diagonal, k = j − i ∈ [−(n−1), n−1], as (τ_k, par, perp).
    fn diagonals(&self) -> Vec<(f64, f64, f64)> {
        let n = self.times.len();
        let w = trapezoid_weights(&self.times);
        let dt = self.spacing();
        let mut out: Vec<(f64, f64, f64)> = (0..2 * n - 1)
            .map(|k| ((k as f64 - (n - 1) as f64) * dt, 0.0, 0.0))
            .collect();
        for i in 0..n {
            for j in 0..n {
                let k = j + n - 1 - i;
                let ww = w[i] * w[j];
                out[k].1 += ww * self.p_par[(i, j)];
                out[k].2 += ww * self.p_perp[(i, j)];
            }
        }
        out
    }

    /// Coincidence integrals (par, perp) restricted to |τ| ≤ half.
    ///
    /// Each τ diagonal carries the mass of a cell of width dt centred on τ_k;
    /// cells straddling the boundary contribute the overlapping fraction.
    fn windowed_integrals(&self, half: f64) -> (f64, f64) {
        let dt = self.spacing();
        let mut par = 0.0;
        let mut perp = 0.0;
        for (tau, p, q) in self.diagonals() {
            let f = overlap(tau - dt / 2.0, tau + dt / 2.0, -half, half) / dt;
            par += f * p;
            perp += f * q;
        }
        (par, perp)
    }
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

pub(crate) fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut w = vec![0.0; n];
    for k in 0..n.saturating_sub(1) {
        let h = times[k + 1] - times[k];
        w[k] += h / 2.0;
        w[k + 1] += h / 2.0;
    }
    w
}

/// Assembles the coincidence densities from a grid that carries G2.
pub fn coincidence_density(grid: &CorrelationGrid, phi: f64) -> Result<CoincidenceDensity> {
    let g2 = grid
        .g2
        .as_ref()
        .ok_or_else(|| Error::invalid("correlations", "coincidence density needs G2"))?;
    let n = grid.len();
    let f2 = grid.flux_rate().powi(2);
    let c2 = phi.cos().powi(2);
    let mut p_perp = DMatrix::zeros(n, n);
    let mut p_par = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let perp = 0.5 * (g2[(i, j)] + grid.n_of_t[i] * grid.n_of_t[j]);
            p_perp[(i, j)] = f2 * perp;
            p_par[(i, j)] = f2 * (perp - 0.5 * c2 * grid.g1[(i, j)].norm_sqr());
        }
    }
    Ok(CoincidenceDensity {
        times: grid.times.clone(),
        p_par,
        p_perp,
        mismatch_angle: phi,
    })
}

/// Histogram of coincidences over τ = t₂ − t₁ with bins centred on
/// multiples of `bin_width` covering |τ| ≤ `range`.
pub fn tau_histogram(density: &CoincidenceDensity, bin_width: f64, range: f64) -> Result<CoincidenceHistogram> {
    tau_histogram_with(density, bin_width, range, Normalization::PerpAreaUnity)
}

pub fn tau_histogram_with(
    density: &CoincidenceDensity,
    bin_width: f64,
    range: f64,
    normalization: Normalization,
) -> Result<CoincidenceHistogram> {
    let dt = density.spacing();
    if bin_width <= dt {
        return Err(Error::invalid("bin_width", format!("must exceed the grid spacing {dt} µs")));
    }
    if !(range > 0.0) {
        return Err(Error::invalid("range", "must be positive"));
    }
    let support = density.support();
    if range > support + 1e-12 {
        return Err(Error::RangeExceedsSupport { range, support });
    }
    let half_bins = (range / bin_width - 0.5).round().max(0.0) as i64;
    let nbins = (2 * half_bins + 1) as usize;
    let lo = -(half_bins as f64 + 0.5) * bin_width;
    let bin_edges: Vec<f64> = (0..=nbins).map(|k| lo + k as f64 * bin_width).collect();
    let mut par = vec![0.0; nbins];
    let mut perp = vec![0.0; nbins];
    for (tau, p, q) in density.diagonals() {
        let (c0, c1) = (tau - dt / 2.0, tau + dt / 2.0);
        let first = (((c0 - lo) / bin_width).floor().max(0.0)) as usize;
        let last = (((c1 - lo) / bin_width).floor() as i64).min(nbins as i64 - 1);
        if last < 0 {
            continue;
        }
        for b in first..=(last as usize) {
            let f = overlap(c0, c1, bin_edges[b], bin_edges[b + 1]) / dt;
            par[b] += f * p;
            perp[b] += f * q;
        }
    }
    // per-bin mass → density per µs
    for v in par.iter_mut().chain(perp.iter_mut()) {
        *v /= bin_width;
    }
    if normalization == Normalization::PerpAreaUnity {
        let area: f64 = perp.iter().sum::<f64>() * bin_width;
        if area <= 0.0 {
            return Err(Error::ZeroDenominator("perpendicular histogram area"));
        }
        for v in par.iter_mut().chain(perp.iter_mut()) {
            *v /= area;
        }
    }
    Ok(CoincidenceHistogram {
        bin_edges,
        counts_par: par,
        counts_perp: perp,
        err_par: vec![0.0; nbins],
        err_perp: vec![0.0; nbins],
        normalization,
    })
}

impl CoincidenceHistogram {
    pub fn bin_width(&self) -> f64 {
        self.bin_edges[1] - self.bin_edges[0]
    }

    pub fn centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect()
    }

    pub fn len(&self) -> usize {
        self.counts_par.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts_par.is_empty()
    }

    /// Index of the bin containing τ = 0.
    pub fn central_bin(&self) -> usize {
        self.centers()
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Visibility over bins whose centre lies in |τ| ≤ T/2.
    pub fn visibility(&self, window: f64) -> Result<f64> {
        if !(window > 0.0) {
            return Err(Error::invalid("window", "must be positive"));
        }
        let (mut par, mut perp) = (0.0, 0.0);
        for (k, c) in self.centers().into_iter().enumerate() {
            if c.abs() <= window / 2.0 + 1e-12 {
                par += self.counts_par[k];
                perp += self.counts_perp[k];
            }
        }
        if perp <= 0.0 {
            return Err(Error::ZeroDenominator("perpendicular coincidences"));
        }
        Ok(1.0 - par / perp)
    }

    /// Statistical error of [`visibility`](Self::visibility) from the
    /// per-bin errors (uncorrelated).
    pub fn visibility_error(&self, window: f64) -> Result<f64> {
        self.visibility(window)?;
        let (mut par, mut perp, mut vp, mut vq) = (0.0, 0.0, 0.0, 0.0);
        for (k, c) in self.centers().into_iter().enumerate() {
            if c.abs() <= window / 2.0 + 1e-12 {
                par += self.counts_par[k];
                perp += self.counts_perp[k];
                vp += self.err_par[k].powi(2);
                vq += self.err_perp[k].powi(2);
            }
        }
        let r = par / perp;
        Ok(r * (vp / (par * par).max(f64::MIN_POSITIVE) + vq / (perp * perp)).sqrt())
    }

    /// Writes `tau_us, c_par, c_perp, err_par, err_perp`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["tau_us", "c_par", "c_perp", "err_par", "err_perp"])?;
        for (k, c) in self.centers().into_iter().enumerate() {
            w.write_record([
                fmt(c),
                fmt(self.counts_par[k]),
                fmt(self.counts_perp[k]),
                fmt(self.err_par[k]),
                fmt(self.err_perp[k]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

/// V = 1 − ∫ C_par / ∫ C_perp over |τ| ≤ T/2.
pub fn visibility(density: &CoincidenceDensity, window: f64) -> Result<f64> {
    if !(window > 0.0) {
        return Err(Error::invalid("window", "must be positive"));
    }
    let support = density.support();
    if window / 2.0 > support + density.spacing() + 1e-12 {
        return Err(Error::RangeExceedsSupport {
            range: window / 2.0,
            support,
        });
    }
    let (par, perp) = density.windowed_integrals(window / 2.0);
    if perp <= 0.0 {
        return Err(Error::ZeroDenominator("perpendicular coincidences"));
    }
    Ok(1.0 - par / perp)
}

/// Visibility and perpendicular coincidence probability for each window.
/// `rate_normalization` rescales the probability (1.0 = per trial).
pub fn windowed_visibility_curve(
    density: &CoincidenceDensity,
    windows: &[f64],
    rate_normalization: f64,
) -> Result<Vec<WindowPoint>> {
    if windows.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("windows", "must be ascending"));
    }
    windows
        .iter()
        .map(|&t| {
            let v = visibility(density, t)?;
            let (_, perp) = density.windowed_integrals(t / 2.0);
            Ok(WindowPoint {
                window: t,
                visibility: v,
                coincidence_probability: rate_normalization * perp,
            })
        })
        .collect()
}

pub fn write_curve_csv(points: &[WindowPoint], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "T_us,visibility,coincidence_probability")?;
    for p in points {
        writeln!(f, "{},{},{}", fmt(p.window), fmt(p.visibility), fmt(p.coincidence_probability))?;
    }
    f.flush()?;
    Ok(())
}

/// Pulsed g²(0) = ∫∫ G2 dt₁ dt₂ / (∫ n dt)².
pub fn hbt_g2_zero(grid: &CorrelationGrid) -> Result<f64> {
    let g2 = grid
        .g2
        .as_ref()
        .ok_or_else(|| Error::invalid("correlations", "g2(0) needs G2"))?;
    let w = trapezoid_weights(&grid.times);
    let mut num = 0.0;
    for i in 0..grid.len() {
        for j in 0..grid.len() {
            num += w[i] * w[j] * g2[(i, j)];
        }
    }
    let den: f64 = w.iter().zip(&grid.n_of_t).map(|(w, n)| w * n).sum();
    if den <= 0.0 {
        return Err(Error::ZeroDenominator("photon number integral"));
    }
    Ok(num / (den * den))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MismatchFit {
    /// Fitted mismatch angle, radians.
    pub phi: f64,
    /// Visibility of the measured histogram.
    pub raw_visibility: f64,
    /// Measured visibility with the cos²φ reduction removed.
    pub corrected_visibility: f64,
    pub residual: f64,
}

/// Least-squares fit of φ between a measured histogram and the model
/// (both normalized to unit perpendicular area, same binning).
///
/// The model parallel curve is C_perp − cos²φ · D with D the φ = 0 dip, so
/// cos²φ follows in closed form; bins are weighted by 1/err² when errors are
/// present.
pub fn fit_mismatch(
    measured: &CoincidenceHistogram,
    model: &CoincidenceDensity,
    window: f64,
) -> Result<MismatchFit> {
    let bw = measured.bin_width();
    let range = measured.bin_edges[measured.bin_edges.len() - 1];
    if model.mismatch_angle != 0.0 {
        return Err(Error::invalid("model", "fit expects a density assembled at phi = 0"));
    }
    let sim = tau_histogram(model, bw, range.min(model.support()))?;
    if sim.len() != measured.len() {
        return Err(Error::invalid("measured", "binning does not match the model histogram"));
    }
    let meas = renormalized(measured)?;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for k in 0..sim.len() {
        let dip = sim.counts_perp[k] - sim.counts_par[k];
        let y = sim.counts_perp[k] - meas.counts_par[k];
        let e = meas.err_par[k];
        let w = if e > 0.0 { 1.0 / (e * e) } else { 1.0 };
        sxx += w * dip * dip;
        sxy += w * dip * y;
    }
    if sxx <= 0.0 {
        return Err(Error::ZeroDenominator("model dip"));
    }
    let c2 = (sxy / sxx).clamp(0.0, 1.0);
    let mut residual = 0.0;
    for k in 0..sim.len() {
        let pred = sim.counts_perp[k] - c2 * (sim.counts_perp[k] - sim.counts_par[k]);
        residual += (pred - meas.counts_par[k]).powi(2);
    }
    let raw = measured.visibility(window)?;
    let corrected = if c2 > 0.0 { raw / c2 } else { raw };
    Ok(MismatchFit {
        phi: c2.sqrt().acos(),
        raw_visibility: raw,
        corrected_visibility: corrected,
        residual,
    })
}

fn renormalized(h: &CoincidenceHistogram) -> Result<CoincidenceHistogram> {
    let bw = h.bin_width();
    let area: f64 = h.counts_perp.iter().sum::<f64>() * bw;
    if area <= 0.0 {
        return Err(Error::ZeroDenominator("perpendicular histogram area"));
    }
    let mut out = h.clone();
    for v in out
        .counts_par
        .iter_mut()
        .chain(out.counts_perp.iter_mut())
        .chain(out.err_par.iter_mut())
        .chain(out.err_perp.iter_mut())
    {
        *v /= area;
    }
    out.normalization = Normalization::PerpAreaUnity;
    Ok(out)
}
