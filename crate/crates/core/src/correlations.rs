//! Two-time coherence functions of the detected cavity mode via the quantum
//! regression theorem.
//!
//! For every grid time t_i the operators a ρ(t_i) and a ρ(t_i) a† are
//! propagated with the master-equation generator up to the window end:
//!
//! ```text
//! G1(t_j, t_i) = Tr[a† E(t_j, t_i)(a ρ_i)]         t_j ≥ t_i
//! G2(t_i, t_j) = Tr[a†a E(t_j, t_i)(a ρ_i a†)]
//! ```
//!
//! and the other triangle is filled from G1(t_i, t_j) = G1(t_j, t_i)* and
//! the symmetry of G2. Both propagations of one row share a step sequence.
//! Each propagation runs only on the operator entries reachable from the
//! support of its starting vectors.

use nalgebra::DMatrix;

use crate::dynamics::{
    evolve_full, to_vec, trapezoid, weighted_sum, Evolution, Liouvillian, SchemeConfig, SectorLiouvillian,
};
use crate::ode::{Integrator, Rhs, Tolerances};
use crate::operators::{build_operators, CavityModeConfig};
use crate::par::{map_indices, Execution};
use crate::sparse::CsrMatrix;
use crate::{Error, Result, C64};

/// Smallest grid recommended for HOM assembly.
pub const MIN_HOM_GRID: usize = 64;

#[derive(Debug, Clone)]
pub struct CorrelationGrid {
    pub times: Vec<f64>,
    /// G1[(i, j)] = ⟨a†(t_i) a(t_j)⟩
    pub g1: DMatrix<C64>,
    /// G2[(i, j)] = ⟨a†(t_i) a†(t_j) a(t_j) a(t_i)⟩, when computed.
    pub g2: Option<DMatrix<f64>>,
    pub n_of_t: Vec<f64>,
    /// Cavity field decay κ (half-linewidth), rad/µs.
    pub kappa: f64,
    pub outcoupling_fraction: f64,
}

impl CorrelationGrid {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    /// Photon-flux conversion 2κη.
    pub fn flux_rate(&self) -> f64 {
        2.0 * self.kappa * self.outcoupling_fraction
    }

    /// Checks Hermiticity, positivity of the diagonal, Cauchy–Schwarz and the
    /// G2 symmetry/positivity bounds. `abs_slack` absorbs integrator error
    /// where the photon number is close to zero.
    pub fn check_invariants(&self, abs_slack: f64) -> Result<()> {
        let n = self.len();
        let fail = |m: String| Err(Error::InvariantViolation(m));
        for i in 0..n {
            if (self.g1[(i, i)].re - self.n_of_t[i]).abs() > 1e-12 || self.g1[(i, i)].im.abs() > 1e-8 {
                return fail(format!("G1 diagonal at {i} is not n(t)"));
            }
            if self.n_of_t[i] < -1e-9 {
                return fail(format!("negative photon number {} at {i}", self.n_of_t[i]));
            }
            for j in 0..n {
                let h = (self.g1[(i, j)] - self.g1[(j, i)].conj()).norm();
                if h > 1e-8 {
                    return fail(format!("G1 not Hermitian at ({i},{j}): {h:e}"));
                }
                let bound = (self.n_of_t[i].max(0.0) * self.n_of_t[j].max(0.0)).sqrt() * (1.0 + 1e-6) + abs_slack;
                if self.g1[(i, j)].norm() > bound {
                    return fail(format!("Cauchy-Schwarz violated at ({i},{j})"));
                }
                if let Some(g2) = &self.g2 {
                    if (g2[(i, j)] - g2[(j, i)]).abs() > 1e-12 || g2[(i, j)] < -1e-9 - abs_slack {
                        return fail(format!("G2 invalid at ({i},{j}): {:e}", g2[(i, j)]));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Propagates several sector vectors side by side.
struct Stacked<'a> {
    parts: Vec<&'a SectorLiouvillian>,
}

impl Rhs for Stacked<'_> {
    fn dim(&self) -> usize {
        self.parts.iter().map(|p| p.len()).sum()
    }

    fn eval(&self, t: f64, y: &[C64], dy: &mut [C64]) {
        let mut at = 0;
        for p in &self.parts {
            let n = p.len();
            p.eval(t, &y[at..at + n], &mut dy[at..at + n]);
            at += n;
        }
    }
}

fn support(vectors: &[Vec<C64>]) -> Vec<usize> {
    let n = vectors.first().map_or(0, |v| v.len());
    (0..n).filter(|&k| vectors.iter().any(|v| v[k] != C64::default())).collect()
}

/// Inputs of one regression computation; usable with any Lindblad model.
pub struct Regression<'a> {
    pub liouvillian: &'a Liouvillian,
    /// ρ(t_k) for every grid time.
    pub states: &'a [DMatrix<C64>],
    pub times: &'a [f64],
    /// Annihilation operator of the observed mode.
    pub a: &'a CsrMatrix,
    pub tol: Tolerances,
    pub exec: Execution,
}

pub struct RegressionOutput {
    pub g1: DMatrix<C64>,
    pub g2: Option<DMatrix<f64>>,
    pub n_of_t: Vec<f64>,
}

impl Regression<'_> {
    pub fn run(&self, with_g2: bool) -> Result<RegressionOutput> {
        let n = self.times.len();
        assert_eq!(self.states.len(), n);
        let a = self.a;
        let a_dag = a.adjoint();
        let number = a_dag.matmul(a);
        let starts: Vec<(Vec<C64>, Option<Vec<C64>>)> = self
            .states
            .iter()
            .map(|rho| {
                let a_rho = dense_from_sparse_mul(a, rho);
                let second = with_g2.then(|| to_vec(&dense_mul_sparse_adjoint(&a_rho, a)));
                (to_vec(&a_rho), second)
            })
            .collect();
        let firsts: Vec<Vec<C64>> = starts.iter().map(|s| s.0.clone()).collect();
        let s1 = self.liouvillian.sector(support(&firsts));
        let s2 = with_g2.then(|| {
            let seconds: Vec<Vec<C64>> = starts.iter().filter_map(|s| s.1.clone()).collect();
            self.liouvillian.sector(support(&seconds))
        });
        let w1 = s1.observable(&a_dag);
        let w2 = s2.as_ref().map(|s| s.observable(&number)).unwrap_or_default();
        let m1 = s1.len();
        let mut parts = vec![&s1];
        parts.extend(s2.as_ref());
        let stacked = Stacked { parts };
        let integrator = Integrator::new(self.tol);

        let rows: Vec<Result<(Vec<C64>, Vec<f64>)>> = map_indices(n, self.exec, |i| {
            let (first, second) = &starts[i];
            let mut y = s1.gather(first);
            if let (Some(s2), Some(second)) = (&s2, second) {
                y.extend(s2.gather(second));
            }
            let mut g1_row = vec![C64::default(); n - i];
            let mut g2_row = vec![0.0; if with_g2 { n - i } else { 0 }];
            integrator.integrate(&stacked, self.times[i], &mut y, &self.times[i..], |k, _, y| {
                g1_row[k] = weighted_sum(&w1, &y[..m1]);
                if with_g2 {
                    g2_row[k] = weighted_sum(&w2, &y[m1..]).re;
                }
                Ok(())
            })?;
            Ok((g1_row, g2_row))
        });

        let mut g1 = DMatrix::zeros(n, n);
        let mut g2 = with_g2.then(|| DMatrix::zeros(n, n));
        for (i, row) in rows.into_iter().enumerate() {
            let (g1_row, g2_row) = row?;
            for (k, v) in g1_row.into_iter().enumerate() {
                let j = i + k;
                g1[(j, i)] = v;
                g1[(i, j)] = v.conj();
            }
            if let Some(g2) = g2.as_mut() {
                for (k, v) in g2_row.into_iter().enumerate() {
                    let j = i + k;
                    g2[(i, j)] = v;
                    g2[(j, i)] = v;
                }
            }
        }
        // the diagonal is a photon number; keep it exactly real
        let n_of_t: Vec<f64> = (0..n).map(|i| g1[(i, i)].re).collect();
        for (i, &v) in n_of_t.iter().enumerate() {
            g1[(i, i)] = C64::new(v, 0.0);
        }
        Ok(RegressionOutput { g1, g2, n_of_t })
    }
}

fn dense_from_sparse_mul(a: &CsrMatrix, rho: &DMatrix<C64>) -> DMatrix<C64> {
    let d = rho.nrows();
    let mut out = DMatrix::zeros(a.nrows(), d);
    for (r, k, v) in a.iter() {
        for c in 0..d {
            out[(r, c)] += v * rho[(k, c)];
        }
    }
    out
}

fn dense_mul_sparse_adjoint(m: &DMatrix<C64>, a: &CsrMatrix) -> DMatrix<C64> {
    // (M a†)[r, c] = Σ_k M[r, k] conj(a[c, k])
    let mut out = DMatrix::zeros(m.nrows(), a.nrows());
    for (c, k, v) in a.iter() {
        for r in 0..m.nrows() {
            out[(r, c)] += m[(r, k)] * v.conj();
        }
    }
    out
}

/// Options for the correlation engine.
#[derive(Debug, Clone, Copy, Default)]
pub struct CorrelationOptions {
    pub exec: Execution,
}

fn with_points(cfg: &SchemeConfig, n: usize) -> SchemeConfig {
    let mut c = cfg.clone();
    c.grid.n_points = n;
    c
}

fn grid_from(evolution: &Evolution, cfg: &SchemeConfig, with_g2: bool, exec: Execution) -> Result<CorrelationGrid> {
    let traj = &evolution.trajectory;
    let out = Regression {
        liouvillian: &evolution.system.liouvillian,
        states: &traj.states,
        times: &traj.times,
        a: &evolution.a_detected,
        tol: cfg.solver.tolerances(),
        exec,
    }
    .run(with_g2)?;
    let grid = CorrelationGrid {
        times: traj.times.clone(),
        g1: out.g1,
        g2: out.g2,
        n_of_t: out.n_of_t,
        kappa: cfg.params.cavity.kappa,
        outcoupling_fraction: cfg.params.cavity.outcoupling_fraction,
    };
    grid.check_invariants(10.0 * cfg.solver.atol)?;
    Ok(grid)
}

/// G1 on an `n`-point grid over the configured window.
pub fn g1_grid(cfg: &SchemeConfig, n: usize) -> Result<CorrelationGrid> {
    compute_grid(cfg, n, false, CorrelationOptions::default()).map(|(g, _)| g)
}

/// G1 and G2 on an `n`-point grid; requires a Fock cutoff of at least 2.
pub fn g2_grid(cfg: &SchemeConfig, n: usize) -> Result<CorrelationGrid> {
    compute_grid(cfg, n, true, CorrelationOptions::default()).map(|(g, _)| g)
}

/// Shared driver returning the grid together with the underlying evolution.
pub fn compute_grid(
    cfg: &SchemeConfig,
    n: usize,
    with_g2: bool,
    opts: CorrelationOptions,
) -> Result<(CorrelationGrid, Evolution)> {
    if n < 16 {
        return Err(Error::invalid("grid.n_points", "correlation grids need n >= 16"));
    }
    if with_g2 && cfg.params.cavity.fock_cutoff < 2 {
        return Err(Error::invalid("cavity.fock_cutoff", "two-photon observables need a cutoff >= 2"));
    }
    if n < MIN_HOM_GRID {
        log::warn!("correlation grid n = {n} is too coarse for HOM assembly (< {MIN_HOM_GRID})");
    }
    let cfg = with_points(cfg, n);
    let ops = build_operators(&cfg.params)?;
    let evolution = evolve_full(&cfg, &ops)?;
    let grid = grid_from(&evolution, &cfg, with_g2, opts.exec)?;
    Ok((grid, evolution))
}

/// Outcoupled photon probability from the grid photon number (trapezoid).
pub fn emission_probability(grid: &CorrelationGrid, cavity: &CavityModeConfig) -> f64 {
    2.0 * cavity.kappa * cavity.outcoupling_fraction * trapezoid(&grid.times, &grid.n_of_t)
}
