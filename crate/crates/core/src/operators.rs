//! System parameters and operators on the composite ion ⊗ cavity space.
//!
//! Basis order is fixed: the ion level index (see [`Level::ALL`]) is the
//! slowest index, followed by the Fock number of each cavity mode in the
//! order of [`CavityModeConfig::polarizations`] (first mode slower).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::atom::{dipole_weight, Level, Polarization, Term};
use crate::dynamics::DrivePulse;
use crate::sparse::CsrMatrix;
use crate::{mhz, Error, Result, C64};

pub const DEFAULT_DIMENSION_BOUND: usize = 4096;
const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// S₁/₂ → D₃/₂ Raman transition driven at 397 nm.
    SD,
    /// D₃/₂ → D₃/₂ Raman transition driven at 866 nm.
    DD,
}

impl Scheme {
    /// Lower manifold of the drive laser.
    pub fn drive_lower_term(self) -> Term {
        match self {
            Scheme::SD => Term::S12,
            Scheme::DD => Term::D32,
        }
    }

    pub fn default_initial(self) -> Level {
        match self {
            Scheme::SD => Level::new(Term::S12, -1),
            Scheme::DD => Level::new(Term::D32, -3),
        }
    }

    pub fn default_target(self) -> Level {
        match self {
            Scheme::SD => Level::new(Term::D32, 3),
            Scheme::DD => Level::new(Term::D32, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityModeConfig {
    /// Cavity modes by the dipole component they collect; at least one.
    pub polarizations: Vec<Polarization>,
    /// Highest Fock number kept in each mode.
    pub fock_cutoff: usize,
    /// Field half-linewidth, rad/µs.
    #[serde(deserialize_with = "crate::config::angular")]
    pub kappa: f64,
    /// Fraction of the cavity loss leaving through the output mirror.
    pub outcoupling_fraction: f64,
    /// Cavity detuning from the P₁/₂ ↔ D₃/₂ line, rad/µs.
    #[serde(deserialize_with = "crate::config::angular")]
    pub detuning: f64,
}

impl CavityModeConfig {
    /// κ and output fraction from cavity length, finesse and output-mirror
    /// transmission.
    pub fn from_geometry(length_mm: f64, finesse: f64, output_ppm: f64, detuning: f64) -> Self {
        let fsr_mhz = SPEED_OF_LIGHT / (2.0 * length_mm * 1e-3) / 1e6;
        let kappa = std::f64::consts::PI * fsr_mhz / finesse;
        let round_trip_loss_ppm = 2.0 * std::f64::consts::PI / finesse * 1e6;
        CavityModeConfig {
            polarizations: vec![Polarization::SigmaPlus, Polarization::SigmaMinus],
            fock_cutoff: 2,
            kappa,
            outcoupling_fraction: (output_ppm / round_trip_loss_ppm).min(1.0),
            detuning,
        }
    }

    pub fn mode_index(&self, pol: Polarization) -> Option<usize> {
        self.polarizations.iter().position(|&p| p == pol)
    }

    pub fn validate(&self) -> Result<()> {
        if self.polarizations.is_empty() {
            return Err(Error::invalid("cavity.polarizations", "at least one mode required"));
        }
        for (i, p) in self.polarizations.iter().enumerate() {
            if *p == Polarization::Pi {
                return Err(Error::invalid(
                    "cavity.polarizations",
                    "pi light does not propagate along the cavity axis",
                ));
            }
            if self.polarizations[..i].contains(p) {
                return Err(Error::invalid("cavity.polarizations", "duplicate mode"));
            }
        }
        if self.fock_cutoff < 1 {
            return Err(Error::invalid("cavity.fock_cutoff", "must be >= 1"));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::invalid("cavity.kappa", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.outcoupling_fraction) {
            return Err(Error::invalid("cavity.outcoupling_fraction", "must lie in [0, 1]"));
        }
        if !self.detuning.is_finite() {
            return Err(Error::invalid("cavity.detuning", "must be finite"));
        }
        Ok(())
    }
}

/// Whether detunings are quoted from the unshifted line centre or from the
/// Zeeman-shifted transitions of the Raman path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetuningReference {
    Unshifted,
    /// Raman resonance is kept for any field: Δ is measured from the
    /// Zeeman-shifted transitions of the selected path.
    #[default]
    Shifted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    /// Peak ion-cavity coupling, rad/µs.
    #[serde(deserialize_with = "crate::config::angular")]
    pub g0: f64,
    /// P₁/₂ → S₁/₂ decay rate, rad/µs.
    #[serde(deserialize_with = "crate::config::angular")]
    pub gamma_sp: f64,
    /// P₁/₂ → D₃/₂ decay rate, rad/µs.
    #[serde(deserialize_with = "crate::config::angular")]
    pub gamma_dp: f64,
    /// Magnetic field, gauss.
    pub b_gauss: f64,
    pub cavity: CavityModeConfig,
    pub scheme: Scheme,
    pub drive: DrivePulse,
    pub prep_fidelity: f64,
    #[serde(default)]
    pub detuning_reference: DetuningReference,
}

impl SystemParams {
    pub fn paper_defaults(scheme: Scheme) -> Self {
        let drive = DrivePulse::paper_defaults(scheme);
        SystemParams {
            g0: mhz(0.8),
            gamma_sp: mhz(21.6),
            gamma_dp: mhz(1.48),
            b_gauss: 5.0,
            cavity: CavityModeConfig::from_geometry(5.75, 60_000.0, 100.0, drive.detuning),
            scheme,
            drive,
            prep_fidelity: 1.0,
            detuning_reference: DetuningReference::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("g0", self.g0), ("gamma_sp", self.gamma_sp), ("gamma_dp", self.gamma_dp)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, "must be a finite non-negative rate"));
            }
        }
        if !(self.gamma_sp > self.gamma_dp) {
            return Err(Error::invalid("gamma_sp", "must exceed gamma_dp"));
        }
        if !(self.b_gauss >= 0.0) {
            return Err(Error::invalid("b_gauss", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.prep_fidelity) {
            return Err(Error::invalid("prep_fidelity", "must lie in [0, 1]"));
        }
        self.cavity.validate()?;
        self.drive.validate()
    }
}

/// Index arithmetic for the composite basis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Basis {
    pub n_modes: usize,
    pub fock_cutoff: usize,
}

impl Basis {
    pub fn fock_dim(&self) -> usize {
        (self.fock_cutoff + 1).pow(self.n_modes as u32)
    }

    pub fn dim(&self) -> usize {
        Level::ALL.len() * self.fock_dim()
    }

    pub fn index(&self, level: Level, photons: &[usize]) -> usize {
        debug_assert_eq!(photons.len(), self.n_modes);
        let mut f = 0;
        for &n in photons {
            debug_assert!(n <= self.fock_cutoff);
            f = f * (self.fock_cutoff + 1) + n;
        }
        level.index() * self.fock_dim() + f
    }

    pub fn decompose(&self, index: usize) -> (Level, Vec<usize>) {
        let fd = self.fock_dim();
        let level = Level::ALL[index / fd];
        let mut f = index % fd;
        let mut photons = vec![0; self.n_modes];
        for slot in photons.iter_mut().rev() {
            *slot = f % (self.fock_cutoff + 1);
            f /= self.fock_cutoff + 1;
        }
        (level, photons)
    }

    pub fn photon_count(&self, index: usize) -> usize {
        self.decompose(index).1.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct CollapseOp {
    pub label: String,
    pub op: CsrMatrix,
}

#[derive(Debug, Clone)]
pub struct OperatorSet {
    pub basis: Basis,
    pub dim: usize,
    /// |lower⟩⟨upper| ⊗ 1 for every dipole-allowed pair, keyed (upper, lower).
    pub sigma: BTreeMap<(Level, Level), CsrMatrix>,
    /// Annihilation operator per cavity mode.
    pub a: Vec<CsrMatrix>,
    pub number: Vec<CsrMatrix>,
    pub collapse_ops: Vec<CollapseOp>,
    pub mode_polarizations: Vec<Polarization>,
}

impl OperatorSet {
    pub fn level_projector(&self, level: Level) -> CsrMatrix {
        let fd = self.basis.fock_dim();
        let start = level.index() * fd;
        CsrMatrix::from_triplets(self.dim, self.dim, (start..start + fd).map(|i| (i, i, C64::new(1.0, 0.0))))
    }

    /// Mode index collecting photons of the given dipole component.
    pub fn mode(&self, pol: Polarization) -> Option<usize> {
        self.mode_polarizations.iter().position(|&p| p == pol)
    }
}

fn fock_annihilation(cutoff: usize) -> CsrMatrix {
    CsrMatrix::from_triplets(
        cutoff + 1,
        cutoff + 1,
        (1..=cutoff).map(|n| (n - 1, n, C64::new((n as f64).sqrt(), 0.0))),
    )
}

/// Builds every operator, refusing Hilbert spaces above `DEFAULT_DIMENSION_BOUND`.
pub fn build_operators(params: &SystemParams) -> Result<OperatorSet> {
    build_operators_with_bound(params, DEFAULT_DIMENSION_BOUND)
}

pub fn build_operators_with_bound(params: &SystemParams, bound: usize) -> Result<OperatorSet> {
    params.cavity.validate()?;
    let basis = Basis {
        n_modes: params.cavity.polarizations.len(),
        fock_cutoff: params.cavity.fock_cutoff,
    };
    let dim = (basis.fock_cutoff + 1)
        .checked_pow(basis.n_modes as u32)
        .and_then(|f| f.checked_mul(Level::ALL.len()))
        .unwrap_or(usize::MAX);
    if dim > bound {
        return Err(Error::DimensionOverflow { dim, bound });
    }
    let fock_dim = basis.fock_dim();
    let ion_dim = Level::ALL.len();
    let fock_id = CsrMatrix::identity(fock_dim);
    let ion_id = CsrMatrix::identity(ion_dim);

    let mut sigma = BTreeMap::new();
    for upper in Level::ALL {
        for lower in Level::ALL {
            let allowed = Polarization::ALL.iter().any(|&q| dipole_weight(upper, lower, q).is_ok());
            if !allowed {
                continue;
            }
            let ion = CsrMatrix::from_triplets(
                ion_dim,
                ion_dim,
                [(lower.index(), upper.index(), C64::new(1.0, 0.0))],
            );
            sigma.insert((upper, lower), ion.kron(&fock_id));
        }
    }

    let single = fock_annihilation(basis.fock_cutoff);
    let single_id = CsrMatrix::identity(basis.fock_cutoff + 1);
    let mut a = Vec::with_capacity(basis.n_modes);
    for mode in 0..basis.n_modes {
        let mut fock_op = CsrMatrix::identity(1);
        for k in 0..basis.n_modes {
            fock_op = fock_op.kron(if k == mode { &single } else { &single_id });
        }
        a.push(ion_id.kron(&fock_op));
    }
    let number: Vec<_> = a.iter().map(|op| op.adjoint().matmul(op)).collect();

    let mut collapse_ops = Vec::new();
    for (&(upper, lower), op) in &sigma {
        let gamma = match lower.term {
            Term::S12 => params.gamma_sp,
            Term::D32 => params.gamma_dp,
            Term::P12 => unreachable!(),
        };
        let q = Polarization::from_q((lower.two_m - upper.two_m) / 2).expect("allowed pair");
        let w = dipole_weight(upper, lower, q)?;
        let rate = gamma * w * w;
        if rate > 0.0 {
            collapse_ops.push(CollapseOp {
                label: format!("decay {upper}->{lower}"),
                op: op.scale(C64::new(rate.sqrt(), 0.0)),
            });
        }
    }
    for (mode, op) in a.iter().enumerate() {
        collapse_ops.push(CollapseOp {
            label: format!("cavity {}", params.cavity.polarizations[mode]),
            op: op.scale(C64::new((2.0 * params.cavity.kappa).sqrt(), 0.0)),
        });
    }

    Ok(OperatorSet {
        basis,
        dim,
        sigma,
        a,
        number,
        collapse_ops,
        mode_polarizations: params.cavity.polarizations.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sd_default_dimension() {
        let p = SystemParams::paper_defaults(Scheme::SD);
        let ops = build_operators(&p).unwrap();
        assert_eq!(ops.dim, 72);
    }

    #[test]
    fn dimension_overflow() {
        let mut p = SystemParams::paper_defaults(Scheme::SD);
        p.cavity.fock_cutoff = 30;
        assert!(matches!(build_operators(&p), Err(Error::DimensionOverflow { dim: 7688, bound: 4096 })));
        assert!(build_operators_with_bound(&p, 10_000).is_ok());
    }

    #[test]
    fn geometry_defaults() {
        let c = CavityModeConfig::from_geometry(5.75, 60_000.0, 100.0, 0.0);
        assert_abs_diff_eq!(c.kappa / mhz(1.0), 0.2172, epsilon = 1e-3);
        assert_abs_diff_eq!(c.outcoupling_fraction, 0.9549, epsilon = 1e-3);
    }

    #[test]
    fn basis_round_trip() {
        let p = SystemParams::paper_defaults(Scheme::DD);
        let ops = build_operators(&p).unwrap();
        for i in 0..ops.dim {
            let (l, n) = ops.basis.decompose(i);
            assert_eq!(ops.basis.index(l, &n), i);
        }
    }

    #[test]
    fn decay_sum_rule_on_p_levels() {
        let p = SystemParams::paper_defaults(Scheme::SD);
        let ops = build_operators(&p).unwrap();
        let mut total = CsrMatrix::zeros(ops.dim, ops.dim);
        for c in ops.collapse_ops.iter().filter(|c| c.label.starts_with("decay")) {
            total = total.add(&c.op.adjoint().matmul(&c.op));
        }
        for i in 0..ops.dim {
            let (level, _) = ops.basis.decompose(i);
            let expected = if level.term == Term::P12 { p.gamma_sp + p.gamma_dp } else { 0.0 };
            assert_abs_diff_eq!(total.get(i, i).re, expected, epsilon = 1e-10);
        }
        // off-diagonal vanishes
        for (r, c, v) in total.iter() {
            if r != c {
                assert!(v.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn operator_sparsity_and_structure() {
        let p = SystemParams::paper_defaults(Scheme::SD);
        let ops = build_operators(&p).unwrap();
        let fd = ops.basis.fock_dim();
        for (&(upper, _), s) in &ops.sigma {
            assert_eq!(s.nnz(), fd);
            let proj = s.adjoint().matmul(s);
            assert_eq!(proj, ops.level_projector(upper));
        }
        let cut = ops.basis.fock_cutoff;
        for (mode, a) in ops.a.iter().enumerate() {
            assert_eq!(a.nnz(), ops.dim * cut / (cut + 1));
            let comm = a.matmul(&a.adjoint()).add(&a.adjoint().matmul(a).scale(C64::new(-1.0, 0.0)));
            for i in 0..ops.dim {
                if ops.basis.decompose(i).1[mode] < cut {
                    assert_abs_diff_eq!(comm.get(i, i).re, 1.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn collapse_ops_are_nilpotent() {
        let p = SystemParams::paper_defaults(Scheme::DD);
        let ops = build_operators(&p).unwrap();
        for c in &ops.collapse_ops {
            let power = ops.basis.fock_cutoff + 1;
            let mut m = c.op.clone();
            for _ in 1..power {
                m = m.matmul(&c.op);
            }
            assert_eq!(m.nnz(), 0, "{} not nilpotent", c.label);
        }
    }
}
