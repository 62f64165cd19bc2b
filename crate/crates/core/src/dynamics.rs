//! Rotating-frame Hamiltonian, Lindblad evolution and photon emission for the
//! two Raman schemes.
//!
//! Frame: the laser leg rotates at the laser frequency and the cavity leg at
//! the cavity frequency, so only the pulse envelope carries time dependence.
//! With detunings measured from the unshifted line centres the diagonal is
//!
//! ```text
//! E(level) = zeeman(level) - Δ_L·[level ∈ P₁/₂],   E(photon) = Δ_C - Δ_L
//! ```
//!
//! which puts the bare Raman resonance at Δ_C = Δ_L.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::atom::{dipole_weight, zeeman_shift, Level, Polarization, Term};
use crate::ode::{Integrator, Rhs, StepStats, Tolerances};
use crate::operators::{build_operators, DetuningReference, OperatorSet, Scheme, SystemParams};
use crate::sparse::CsrMatrix;
use crate::{mhz, Error, Result, C64};

const I: C64 = C64::new(0.0, 1.0);
const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseShape {
    Gaussian,
    Flat,
}

/// How the configured Gaussian `width` relates to the pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthConvention {
    /// `width` is the σ of the intensity profile (amplitude σ = √2·width).
    #[default]
    IntensitySigma,
    /// `width` is the σ of the Rabi-frequency profile.
    AmplitudeSigma,
    /// `width` is the full width at half maximum of the intensity.
    IntensityFwhm,
}

/// Complex amplitudes of the drive's spherical components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolarizationAmplitudes {
    pub sigma_minus: C64,
    pub pi: C64,
    pub sigma_plus: C64,
}

impl PolarizationAmplitudes {
    pub fn real(sigma_minus: f64, pi: f64, sigma_plus: f64) -> Self {
        PolarizationAmplitudes {
            sigma_minus: C64::new(sigma_minus, 0.0),
            pi: C64::new(pi, 0.0),
            sigma_plus: C64::new(sigma_plus, 0.0),
        }
    }

    /// Amplitude of the component that raises m by `p` on absorption.
    pub fn get(&self, p: Polarization) -> C64 {
        match p {
            Polarization::SigmaMinus => self.sigma_minus,
            Polarization::Pi => self.pi,
            Polarization::SigmaPlus => self.sigma_plus,
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.sigma_minus.norm_sqr() + self.pi.norm_sqr() + self.sigma_plus.norm_sqr()
    }

    /// Mixes power fraction `fraction` of component `extra` into the current
    /// polarization, keeping unit norm.
    pub fn with_admixture(&self, extra: Polarization, fraction: f64) -> Self {
        let keep = (1.0 - fraction).sqrt();
        let mut out = PolarizationAmplitudes {
            sigma_minus: self.sigma_minus * keep,
            pi: self.pi * keep,
            sigma_plus: self.sigma_plus * keep,
        };
        let add = C64::new(fraction.sqrt(), 0.0);
        match extra {
            Polarization::SigmaMinus => out.sigma_minus += add,
            Polarization::Pi => out.pi += add,
            Polarization::SigmaPlus => out.sigma_plus += add,
        }
        let n = out.norm_sqr().sqrt();
        out.sigma_minus /= n;
        out.pi /= n;
        out.sigma_plus /= n;
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrivePulse {
    pub shape: PulseShape,
    /// Peak Rabi frequency Ω, rad/µs.
    #[serde(deserialize_with = "crate::config::angular")]
    pub peak_rabi: f64,
    /// µs
    pub center: f64,
    /// µs; meaning set by `width_convention` (flat pulses: full duration).
    pub width: f64,
    /// Laser detuning Δ from its atomic line, rad/µs.
    #[serde(deserialize_with = "crate::config::angular")]
    pub detuning: f64,
    pub polarization_amplitudes: PolarizationAmplitudes,
    #[serde(default)]
    pub width_convention: WidthConvention,
}

impl DrivePulse {
    pub fn paper_defaults(scheme: Scheme) -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let (peak_rabi, detuning, pol) = match scheme {
            Scheme::SD => (mhz(11.0), mhz(-24.0), PolarizationAmplitudes::real(0.0, h, h)),
            Scheme::DD => (mhz(5.5), mhz(24.0), PolarizationAmplitudes::real(h, 0.0, h)),
        };
        DrivePulse {
            shape: PulseShape::Gaussian,
            peak_rabi,
            center: 1.25,
            width: 0.45,
            detuning,
            polarization_amplitudes: pol,
            width_convention: WidthConvention::default(),
        }
    }

    /// σ of the Rabi-frequency (amplitude) profile.
    pub fn amplitude_sigma(&self) -> f64 {
        match self.width_convention {
            WidthConvention::IntensitySigma => self.width * std::f64::consts::SQRT_2,
            WidthConvention::AmplitudeSigma => self.width,
            WidthConvention::IntensityFwhm => {
                self.width / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt()) * std::f64::consts::SQRT_2
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0) {
            return Err(Error::invalid("drive.width", "must be > 0"));
        }
        if !(self.peak_rabi >= 0.0) {
            return Err(Error::invalid("drive.peak_rabi", "must be >= 0"));
        }
        if !self.detuning.is_finite() || !self.center.is_finite() {
            return Err(Error::invalid("drive.detuning", "must be finite"));
        }
        if (self.polarization_amplitudes.norm_sqr() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "drive.polarization_amplitudes",
                "squared amplitudes must sum to 1",
            ));
        }
        Ok(())
    }
}

/// Rabi-frequency envelope Ω(t).
pub fn pulse_envelope(t: f64, pulse: &DrivePulse) -> f64 {
    match pulse.shape {
        PulseShape::Gaussian => {
            let s = pulse.amplitude_sigma();
            let x = t - pulse.center;
            pulse.peak_rabi * (-x * x / (2.0 * s * s)).exp()
        }
        PulseShape::Flat => {
            if (t - pulse.center).abs() <= pulse.width / 2.0 {
                pulse.peak_rabi
            } else {
                0.0
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub t0: f64,
    pub t1: f64,
    pub n_points: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t1: f64, n_points: usize) -> Self {
        TimeGrid { t0, t1, n_points }
    }

    pub fn times(&self) -> Vec<f64> {
        if self.n_points == 1 {
            return vec![self.t0];
        }
        let dt = self.spacing();
        (0..self.n_points)
            .map(|k| if k + 1 == self.n_points { self.t1 } else { self.t0 + k as f64 * dt })
            .collect()
    }

    pub fn spacing(&self) -> f64 {
        (self.t1 - self.t0) / (self.n_points.max(2) - 1) as f64
    }

    pub fn span(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t1 > self.t0) || self.n_points < 2 {
            return Err(Error::invalid("grid", "need t1 > t0 and at least 2 points"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub atol: f64,
    pub rtol: f64,
    /// Eigenvalue check of ρ at every grid point.
    #[serde(default = "default_true")]
    pub check_positivity: bool,
}

fn default_true() -> bool {
    true
}

impl Default for SolverConfig {
    fn default() -> Self {
        let t = Tolerances::default();
        SolverConfig {
            atol: t.atol,
            rtol: t.rtol,
            check_positivity: true,
        }
    }
}

impl SolverConfig {
    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            atol: self.atol,
            rtol: self.rtol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub params: SystemParams,
    pub initial_state: Level,
    pub target_state: Level,
    pub grid: TimeGrid,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl SchemeConfig {
    pub fn paper_defaults(scheme: Scheme) -> Self {
        SchemeConfig {
            params: SystemParams::paper_defaults(scheme),
            initial_state: scheme.default_initial(),
            target_state: scheme.default_target(),
            grid: TimeGrid::new(0.0, 2.5, 128),
            solver: SolverConfig::default(),
        }
    }

    pub fn window(&self) -> f64 {
        self.grid.span()
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.grid.validate()?;
        if !(self.solver.atol > 0.0 && self.solver.rtol > 0.0) {
            return Err(Error::invalid("solver", "tolerances must be > 0"));
        }
        Ok(())
    }
}

/// The resonant Raman path initial → P₁/₂ → target selected by the drive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RamanPath {
    pub initial: Level,
    pub intermediate: Level,
    pub target: Level,
    /// Drive component, labelled by the m change on absorption.
    pub laser: Polarization,
    /// Cavity mode collecting the Raman photon.
    pub cavity: Polarization,
}

pub fn raman_path(cfg: &SchemeConfig) -> Result<RamanPath> {
    let p = &cfg.params;
    let (init, target) = (cfg.initial_state, cfg.target_state);
    if init.term != p.scheme.drive_lower_term() {
        return Err(Error::FrameInconsistency(format!(
            "initial state {init} is not addressed by the {:?} drive",
            p.scheme
        )));
    }
    if target.term != Term::D32 || target == init {
        return Err(Error::FrameInconsistency(format!(
            "target state {target} must be a different D3/2 sublevel"
        )));
    }
    let mut paths = Vec::new();
    for mid in Level::ALL.iter().filter(|l| l.term == Term::P12) {
        let Some(laser) = Polarization::from_q((mid.two_m - init.two_m) / 2) else { continue };
        if (mid.two_m - init.two_m).abs() > 2 || p.drive.polarization_amplitudes.get(laser).norm() == 0.0 {
            continue;
        }
        let Some(cavity) = Polarization::from_q((target.two_m - mid.two_m) / 2) else { continue };
        if (target.two_m - mid.two_m).abs() > 2 || p.cavity.mode_index(cavity).is_none() {
            continue;
        }
        paths.push(RamanPath {
            initial: init,
            intermediate: *mid,
            target,
            laser,
            cavity,
        });
    }
    match paths.len() {
        1 => Ok(paths[0]),
        0 => Err(Error::FrameInconsistency(format!(
            "no drive component and cavity mode connect {init} to {target}"
        ))),
        _ => Err(Error::FrameInconsistency(format!(
            "several Raman paths connect {init} to {target}; the frame is ambiguous"
        ))),
    }
}

/// Laser and cavity detunings converted to the unshifted-line reference.
fn unshifted_detunings(cfg: &SchemeConfig, path: &RamanPath) -> (f64, f64) {
    let p = &cfg.params;
    match p.detuning_reference {
        DetuningReference::Unshifted => (p.drive.detuning, p.cavity.detuning),
        DetuningReference::Shifted => {
            let z = |l: Level| zeeman_shift(l, p.b_gauss);
            let zp = z(path.intermediate);
            (
                p.drive.detuning + zp - z(path.initial),
                p.cavity.detuning + zp - z(path.target),
            )
        }
    }
}

/// H(t) = `static_part` + Ω(t)·`drive_part`.
#[derive(Debug, Clone)]
pub struct HamiltonianParts {
    pub static_part: CsrMatrix,
    /// Laser couplings for unit Rabi frequency.
    pub drive_part: CsrMatrix,
}

pub fn hamiltonian_parts(cfg: &SchemeConfig, ops: &OperatorSet) -> Result<HamiltonianParts> {
    let path = raman_path(cfg)?;
    let p = &cfg.params;
    let (delta_l, delta_c) = unshifted_detunings(cfg, &path);
    let dim = ops.dim;
    let fd = ops.basis.fock_dim();

    let mut stat: Vec<(usize, usize, C64)> = Vec::new();
    for level in Level::ALL {
        let mut e = zeeman_shift(level, p.b_gauss);
        if level.term == Term::P12 {
            e -= delta_l;
        }
        let start = level.index() * fd;
        for i in start..start + fd {
            stat.push((i, i, C64::new(e, 0.0)));
        }
    }
    for n in &ops.number {
        stat.extend(n.iter().map(|(r, c, v)| (r, c, v * (delta_c - delta_l))));
    }
    // cavity couplings: P_m ↔ D_{m+q} with a photon in mode q
    for (mode, &q) in ops.mode_polarizations.iter().enumerate() {
        let a = &ops.a[mode];
        let a_dag = a.adjoint();
        for (&(upper, lower), sigma) in &ops.sigma {
            if lower.term != Term::D32 {
                continue;
            }
            let Ok(w) = dipole_weight(upper, lower, q) else { continue };
            let g = C64::new(p.g0 * w, 0.0);
            let emit = a_dag.matmul(sigma);
            stat.extend(emit.iter().map(|(r, c, v)| (r, c, v * g)));
            stat.extend(emit.iter().map(|(r, c, v)| (c, r, v.conj() * g)));
        }
    }
    let static_part = CsrMatrix::from_triplets(dim, dim, stat);

    let lower_term = p.scheme.drive_lower_term();
    let mut drive = Vec::new();
    for (&(upper, lower), sigma) in &ops.sigma {
        if lower.term != lower_term {
            continue;
        }
        let Some(pol) = Polarization::from_q((upper.two_m - lower.two_m) / 2) else { continue };
        let amp = p.drive.polarization_amplitudes.get(pol);
        if amp.norm() == 0.0 {
            continue;
        }
        // absorption raising m by p is the dipole component q = -p
        let q = Polarization::from_q(-pol.q()).expect("valid");
        let w = dipole_weight(upper, lower, q)?;
        let c = amp * (0.5 * w);
        // c |u><l| + c* |l><u| with sigma = |l><u|
        drive.extend(sigma.iter().map(|(r, col, v)| (col, r, v.conj() * c)));
        drive.extend(sigma.iter().map(|(r, col, v)| (r, col, v * c.conj())));
    }
    let drive_part = CsrMatrix::from_triplets(dim, dim, drive);
    Ok(HamiltonianParts { static_part, drive_part })
}

/// Full rotating-frame Hamiltonian at time `t`.
pub fn hamiltonian(t: f64, cfg: &SchemeConfig, ops: &OperatorSet) -> Result<CsrMatrix> {
    let parts = hamiltonian_parts(cfg, ops)?;
    let omega = pulse_envelope(t, &cfg.params.drive);
    Ok(parts.static_part.add(&parts.drive_part.scale(C64::new(omega, 0.0))))
}

/// A Lindblad generator `H0 + Ω(t)·H1` with collapse operators, independent
/// of the ion model so that small test systems can use the same engine.
#[derive(Debug, Clone)]
pub struct LindbladModel {
    pub h_static: CsrMatrix,
    pub h_drive: CsrMatrix,
    pub pulse: Option<DrivePulse>,
    pub collapse: Vec<CsrMatrix>,
}

impl LindbladModel {
    pub fn dim(&self) -> usize {
        self.h_static.nrows()
    }

    pub fn from_scheme(cfg: &SchemeConfig, ops: &OperatorSet) -> Result<Self> {
        let parts = hamiltonian_parts(cfg, ops)?;
        Ok(LindbladModel {
            h_static: parts.static_part,
            h_drive: parts.drive_part,
            pulse: Some(cfg.params.drive.clone()),
            collapse: ops.collapse_ops.iter().map(|c| c.op.clone()).collect(),
        })
    }

    /// Basis states reachable from `seeds` through H couplings and jumps.
    pub fn reachable(&self, seeds: &[usize]) -> Vec<usize> {
        let d = self.dim();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); d];
        for m in [&self.h_static, &self.h_drive] {
            for (r, c, _) in m.iter() {
                if r != c {
                    adj[c].push(r);
                    adj[r].push(c);
                }
            }
        }
        for l in &self.collapse {
            for (r, c, _) in l.iter() {
                adj[c].push(r);
            }
        }
        let mut seen = vec![false; d];
        let mut stack: Vec<usize> = seeds.to_vec();
        while let Some(s) = stack.pop() {
            if std::mem::replace(&mut seen[s], true) {
                continue;
            }
            stack.extend(adj[s].iter().copied().filter(|&x| !seen[x]));
        }
        (0..d).filter(|&i| seen[i]).collect()
    }

    pub fn restrict(&self, keep: &[usize]) -> LindbladModel {
        LindbladModel {
            h_static: self.h_static.restrict(keep),
            h_drive: self.h_drive.restrict(keep),
            pulse: self.pulse.clone(),
            collapse: self
                .collapse
                .iter()
                .map(|l| l.restrict(keep))
                .filter(|l| l.nnz() > 0)
                .collect(),
        }
    }
}

/// Superoperator form acting on row-major vec(ρ).
#[derive(Debug, Clone)]
pub struct Liouvillian {
    d: usize,
    s_static: CsrMatrix,
    s_drive: CsrMatrix,
    pulse: Option<DrivePulse>,
}

impl Liouvillian {
    pub fn new(model: &LindbladModel) -> Self {
        let d = model.dim();
        let mut h_eff = model.h_static.clone();
        let mut ldl = CsrMatrix::zeros(d, d);
        for l in &model.collapse {
            ldl = ldl.add(&l.adjoint().matmul(l));
        }
        h_eff = h_eff.add(&ldl.scale(C64::new(0.0, -0.5)));

        let commutator_terms = |h_left: &CsrMatrix, h_right_adj_src: &CsrMatrix, out: &mut Vec<(usize, usize, C64)>| {
            // -i H ρ
            for (r, k, v) in h_left.iter() {
                for c in 0..d {
                    out.push((r * d + c, k * d + c, -I * v));
                }
            }
            // +i ρ H†: [(r,c),(r,k)] += i conj(H[c,k])
            for (c, k, v) in h_right_adj_src.iter() {
                for r in 0..d {
                    out.push((r * d + c, r * d + k, I * v.conj()));
                }
            }
        };

        let mut s0 = Vec::new();
        commutator_terms(&h_eff, &h_eff, &mut s0);
        for l in &model.collapse {
            for (r, k, a) in l.iter() {
                for (c, ll, b) in l.iter() {
                    s0.push((r * d + c, k * d + ll, a * b.conj()));
                }
            }
        }
        let mut s1 = Vec::new();
        commutator_terms(&model.h_drive, &model.h_drive, &mut s1);
        Liouvillian {
            d,
            s_static: CsrMatrix::from_triplets(d * d, d * d, s0),
            s_drive: CsrMatrix::from_triplets(d * d, d * d, s1),
            pulse: model.pulse.clone(),
        }
    }

    pub fn hilbert_dim(&self) -> usize {
        self.d
    }

    pub fn nnz(&self) -> usize {
        self.s_static.nnz() + self.s_drive.nnz()
    }

    fn envelope(&self, t: f64) -> f64 {
        self.pulse.as_ref().map_or(0.0, |p| pulse_envelope(t, p))
    }
}

impl Rhs for Liouvillian {
    fn dim(&self) -> usize {
        self.d * self.d
    }

    fn eval(&self, t: f64, y: &[C64], dy: &mut [C64]) {
        dy.iter_mut().for_each(|v| *v = C64::default());
        self.s_static.mul_vec_add(ONE, y, dy);
        let omega = self.envelope(t);
        if omega != 0.0 && self.s_drive.nnz() > 0 {
            self.s_drive.mul_vec_add(C64::new(omega, 0.0), y, dy);
        }
    }
}

/// A Liouvillian restricted to the entries of vec(ρ) reachable from a seed
/// support. Exact for any vector that starts inside the seeds.
#[derive(Debug, Clone)]
pub struct SectorLiouvillian {
    d: usize,
    /// Positions `r·d + c` in vec(ρ), ascending.
    entries: Vec<usize>,
    slot: Vec<u32>,
    s_static: CsrMatrix,
    s_drive: CsrMatrix,
    pulse: Option<DrivePulse>,
}

const NO_SLOT: u32 = u32::MAX;

impl Liouvillian {
    /// Restriction to the closure of `seeds` (positions in vec(ρ)).
    pub fn sector(&self, seeds: impl IntoIterator<Item = usize>) -> SectorLiouvillian {
        let n = self.d * self.d;
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
        for m in [&self.s_static, &self.s_drive] {
            for (r, c, _) in m.iter() {
                adj[c].push(r as u32);
            }
        }
        let mut seen = vec![false; n];
        let mut stack: Vec<usize> = seeds.into_iter().collect();
        while let Some(x) = stack.pop() {
            if std::mem::replace(&mut seen[x], true) {
                continue;
            }
            stack.extend(adj[x].iter().map(|&y| y as usize).filter(|&y| !seen[y]));
        }
        let entries: Vec<usize> = (0..n).filter(|&k| seen[k]).collect();
        let mut slot = vec![NO_SLOT; n];
        for (i, &e) in entries.iter().enumerate() {
            slot[e] = i as u32;
        }
        SectorLiouvillian {
            d: self.d,
            s_static: self.s_static.restrict(&entries),
            s_drive: self.s_drive.restrict(&entries),
            pulse: self.pulse.clone(),
            entries,
            slot,
        }
    }
}

impl SectorLiouvillian {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn hilbert_dim(&self) -> usize {
        self.d
    }

    /// Slot of vec(ρ) position `r·d + c`, if inside the sector.
    pub fn slot(&self, r: usize, c: usize) -> Option<usize> {
        match self.slot[r * self.d + c] {
            NO_SLOT => None,
            s => Some(s as usize),
        }
    }

    pub fn gather(&self, full: &[C64]) -> Vec<C64> {
        self.entries.iter().map(|&e| full[e]).collect()
    }

    pub fn scatter(&self, y: &[C64]) -> DMatrix<C64> {
        let d = self.d;
        let mut m = DMatrix::zeros(d, d);
        for (&e, v) in self.entries.iter().zip(y) {
            m[(e / d, e % d)] = *v;
        }
        m
    }

    /// Weights `(slot, w)` with Tr[A X] = Σ w·y[slot] for X in the sector.
    pub fn observable(&self, a: &CsrMatrix) -> Vec<(usize, C64)> {
        a.iter().filter_map(|(r, c, v)| self.slot(c, r).map(|s| (s, v))).collect()
    }
}

impl Rhs for SectorLiouvillian {
    fn dim(&self) -> usize {
        self.entries.len()
    }

    fn eval(&self, t: f64, y: &[C64], dy: &mut [C64]) {
        dy.iter_mut().for_each(|v| *v = C64::default());
        self.s_static.mul_vec_add(ONE, y, dy);
        let omega = self.pulse.as_ref().map_or(0.0, |p| pulse_envelope(t, p));
        if omega != 0.0 && self.s_drive.nnz() > 0 {
            self.s_drive.mul_vec_add(C64::new(omega, 0.0), y, dy);
        }
    }
}

/// Σ w·y[slot].
pub fn weighted_sum(weights: &[(usize, C64)], y: &[C64]) -> C64 {
    weights.iter().map(|&(s, w)| w * y[s]).sum()
}

/// Appends ∫ Σ_i w_i ρ_ii dt as one extra state component.
struct WithFluxIntegral<'a> {
    inner: &'a SectorLiouvillian,
    weights: Vec<(usize, f64)>,
}

impl Rhs for WithFluxIntegral<'_> {
    fn dim(&self) -> usize {
        self.inner.dim() + 1
    }

    fn eval(&self, t: f64, y: &[C64], dy: &mut [C64]) {
        let n = self.inner.dim();
        self.inner.eval(t, &y[..n], &mut dy[..n]);
        dy[n] = self.weights.iter().map(|&(s, w)| y[s] * w).sum();
    }
}

/// Lindblad model reduced to the support it can ever reach from its
/// initial state.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    /// Full-space basis indices kept, ascending.
    pub keep: Vec<usize>,
    pub model: LindbladModel,
    pub liouvillian: Liouvillian,
    pub rho0: DMatrix<C64>,
}

impl ReducedSystem {
    pub fn new(model: &LindbladModel, rho0_full: &DMatrix<C64>) -> Self {
        let seeds: Vec<usize> = (0..model.dim())
            .filter(|&i| (0..model.dim()).any(|j| rho0_full[(i, j)].norm() > 0.0))
            .collect();
        let keep = model.reachable(&seeds);
        let reduced = model.restrict(&keep);
        let rho0 = DMatrix::from_fn(keep.len(), keep.len(), |r, c| rho0_full[(keep[r], keep[c])]);
        ReducedSystem {
            liouvillian: Liouvillian::new(&reduced),
            model: reduced,
            keep,
            rho0,
        }
    }

    pub fn dim(&self) -> usize {
        self.keep.len()
    }

    pub fn restrict_op(&self, op: &CsrMatrix) -> CsrMatrix {
        op.restrict(&self.keep)
    }
}

pub fn to_vec(m: &DMatrix<C64>) -> Vec<C64> {
    let d = m.nrows();
    let mut v = Vec::with_capacity(d * d);
    for r in 0..d {
        for c in 0..d {
            v.push(m[(r, c)]);
        }
    }
    v
}

pub fn from_vec(v: &[C64], d: usize) -> DMatrix<C64> {
    DMatrix::from_fn(d, d, |r, c| v[r * d + c])
}

/// Tr[A X] for sparse A and row-major vec(X).
pub fn trace_product(a: &CsrMatrix, x: &[C64]) -> C64 {
    let d = a.nrows();
    a.iter().map(|(r, c, v)| v * x[c * d + r]).sum()
}

fn min_hermitian_eigenvalue(rho: &DMatrix<C64>) -> f64 {
    let herm = (rho + rho.adjoint()) * C64::new(0.5, 0.0);
    herm.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn initial_density(cfg: &SchemeConfig, ops: &OperatorSet) -> DMatrix<C64> {
    let vac = vec![0; ops.basis.n_modes];
    let mut rho = DMatrix::zeros(ops.dim, ops.dim);
    let init = cfg.initial_state;
    let others: Vec<Level> = Level::ALL
        .iter()
        .copied()
        .filter(|l| l.term == init.term && *l != init)
        .collect();
    let f = cfg.params.prep_fidelity;
    let i0 = ops.basis.index(init, &vac);
    rho[(i0, i0)] = C64::new(f, 0.0);
    if f < 1.0 {
        for l in others.iter() {
            let i = ops.basis.index(*l, &vac);
            rho[(i, i)] = C64::new((1.0 - f) / others.len() as f64, 0.0);
        }
    }
    rho
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Per grid point, population of each level in [`Level::ALL`] order.
    pub populations: Vec<[f64; 8]>,
    /// Per grid point, ⟨a†a⟩ of each cavity mode.
    pub photon_numbers: Vec<Vec<f64>>,
    /// Outcoupled flux of the detected mode, 1/µs.
    pub flux: Vec<f64>,
    pub detected_mode: usize,
    pub mode_polarizations: Vec<Polarization>,
    pub trace_drift: f64,
    pub max_hermiticity_residual: f64,
    pub min_eigenvalue: f64,
    /// Exact ∫ flux dt over the grid span.
    pub integrated_flux: f64,
    #[serde(skip)]
    pub states: Vec<DMatrix<C64>>,
    #[serde(skip)]
    pub step_stats: StepStats,
}

/// Everything the regression engine needs to reuse an evolution.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub system: ReducedSystem,
    pub trajectory: Trajectory,
    /// Detected-mode annihilation operator in the reduced basis.
    pub a_detected: CsrMatrix,
}

/// Integrates the master equation on `cfg.grid`.
pub fn evolve(cfg: &SchemeConfig, ops: &OperatorSet) -> Result<Trajectory> {
    Ok(evolve_full(cfg, ops)?.trajectory)
}

pub fn evolve_full(cfg: &SchemeConfig, ops: &OperatorSet) -> Result<Evolution> {
    cfg.validate()?;
    let path = raman_path(cfg)?;
    let model = LindbladModel::from_scheme(cfg, ops)?;
    let rho0 = initial_density(cfg, ops);
    let system = ReducedSystem::new(&model, &rho0);
    let detected_mode = ops.mode(path.cavity).expect("raman_path checks the mode");
    let cav = &cfg.params.cavity;
    let flux_rate = 2.0 * cav.kappa * cav.outcoupling_fraction;

    let levels: Vec<Level> = system.keep.iter().map(|&i| ops.basis.decompose(i).0).collect();
    let photons: Vec<Vec<usize>> = system.keep.iter().map(|&i| ops.basis.decompose(i).1).collect();
    let d = system.dim();
    let rho0_vec = to_vec(&system.rho0);
    let sector = system
        .liouvillian
        .sector((0..d * d).filter(|&k| rho0_vec[k] != C64::default()));
    let weights: Vec<(usize, f64)> = (0..d)
        .filter(|&i| photons[i][detected_mode] > 0)
        .filter_map(|i| sector.slot(i, i).map(|s| (s, flux_rate * photons[i][detected_mode] as f64)))
        .collect();
    let m = sector.len();

    let aug = WithFluxIntegral {
        inner: &sector,
        weights,
    };
    let mut y = sector.gather(&rho0_vec);
    y.push(C64::default());
    let times = cfg.grid.times();
    let n_modes = ops.basis.n_modes;
    let mut traj = Trajectory {
        times: times.clone(),
        populations: Vec::with_capacity(times.len()),
        photon_numbers: Vec::with_capacity(times.len()),
        flux: Vec::with_capacity(times.len()),
        detected_mode,
        mode_polarizations: ops.mode_polarizations.clone(),
        trace_drift: 0.0,
        max_hermiticity_residual: 0.0,
        min_eigenvalue: f64::INFINITY,
        integrated_flux: 0.0,
        states: Vec::with_capacity(times.len()),
        step_stats: StepStats::default(),
    };
    let check_positivity = cfg.solver.check_positivity;
    let integrator = Integrator::new(cfg.solver.tolerances());
    let stats = integrator.integrate(&aug, times[0], &mut y, &times, |_, t, y| {
        let rho = sector.scatter(&y[..m]);
        let mut pops = [0.0; 8];
        let mut nums = vec![0.0; n_modes];
        let mut trace = C64::default();
        for i in 0..d {
            let p = rho[(i, i)].re;
            trace += rho[(i, i)];
            pops[levels[i].index()] += p;
            for (m, n) in photons[i].iter().enumerate() {
                nums[m] += *n as f64 * p;
            }
        }
        let herm = (&rho - rho.adjoint()).iter().map(|v| v.norm()).fold(0.0, f64::max);
        traj.trace_drift = traj.trace_drift.max((trace - ONE).norm());
        traj.max_hermiticity_residual = traj.max_hermiticity_residual.max(herm);
        if check_positivity {
            let min_eig = min_hermitian_eigenvalue(&rho);
            traj.min_eigenvalue = traj.min_eigenvalue.min(min_eig);
            if min_eig < -1e-6 {
                return Err(Error::PositivityViolation { t, min_eigenvalue: min_eig });
            }
        }
        traj.flux.push(flux_rate * nums[detected_mode]);
        traj.populations.push(pops);
        traj.photon_numbers.push(nums);
        traj.states.push(rho);
        traj.integrated_flux = y[m].re;
        Ok(())
    })?;
    traj.step_stats = stats;
    if !check_positivity {
        traj.min_eigenvalue = f64::NAN;
    }
    let a_detected = system.restrict_op(&ops.a[detected_mode]);
    Ok(Evolution {
        system,
        trajectory: traj,
        a_detected,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhotonRecord {
    pub times: Vec<f64>,
    /// Outcoupled detected-mode flux, 1/µs.
    pub flux: Vec<f64>,
    /// flux / ∫flux, 1/µs.
    pub profile: Vec<f64>,
    pub p_emit: f64,
    pub final_populations: [f64; 8],
    pub trajectory: Trajectory,
}

/// Photon flux and emission probability for one scheme configuration.
pub fn run_scheme(cfg: &SchemeConfig) -> Result<PhotonRecord> {
    let ops = build_operators(&cfg.params)?;
    let traj = evolve(cfg, &ops)?;
    Ok(photon_record(cfg, traj))
}

pub fn photon_record(cfg: &SchemeConfig, traj: Trajectory) -> PhotonRecord {
    let eta = cfg.params.cavity.outcoupling_fraction;
    let residual = traj.photon_numbers.last().map_or(0.0, |n| n[traj.detected_mode]) * eta;
    let p_emit = traj.integrated_flux + residual;
    let area = trapezoid(&traj.times, &traj.flux);
    let profile = if area > 0.0 {
        traj.flux.iter().map(|f| f / area).collect()
    } else {
        vec![0.0; traj.flux.len()]
    };
    PhotonRecord {
        times: traj.times.clone(),
        flux: traj.flux.clone(),
        profile,
        p_emit,
        final_populations: *traj.populations.last().unwrap_or(&[0.0; 8]),
        trajectory: traj,
    }
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}
