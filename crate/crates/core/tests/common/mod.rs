//! Analytic and brute-force oracles shared by the oracle tests and the
//! acceptance report. Each returns the measured deviation.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use ioncav::atom::{dipole_weight_or_zero, Level, Polarization, Term};
use ioncav::correlations::{CorrelationGrid, Regression};
use ioncav::dynamics::{from_vec, to_vec, LindbladModel, Liouvillian, ReducedSystem};
use ioncav::hom::coincidence_density;
use ioncav::ode::{Integrator, Tolerances};
use ioncav::par::Execution;
use ioncav::sparse::CsrMatrix;

const TIGHT: Tolerances = Tolerances { atol: 1e-12, rtol: 1e-11 };

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn dense_to_csr(m: &DMatrix<C64>) -> CsrMatrix {
    let mut t = Vec::new();
    for r in 0..m.nrows() {
        for col in 0..m.ncols() {
            if m[(r, col)] != C64::default() {
                t.push((r, col, m[(r, col)]));
            }
        }
    }
    CsrMatrix::from_triplets(m.nrows(), m.ncols(), t)
}

/// Evolves `rho0` under a static Lindblad model and returns ρ at each time.
pub fn evolve_static(h: DMatrix<C64>, collapse: Vec<DMatrix<C64>>, rho0: DMatrix<C64>, times: &[f64]) -> Vec<DMatrix<C64>> {
    let d = h.nrows();
    let model = LindbladModel {
        h_static: dense_to_csr(&h),
        h_drive: CsrMatrix::zeros(d, d),
        pulse: None,
        collapse: collapse.iter().map(dense_to_csr).collect(),
    };
    let l = Liouvillian::new(&model);
    let mut y = to_vec(&rho0);
    let mut out = Vec::new();
    Integrator::new(TIGHT)
        .integrate(&l, 0.0, &mut y, times, |_, _, y| {
            out.push(from_vec(y, d));
            Ok(())
        })
        .unwrap();
    out
}

/// Largest |P_e(t) − sin²(Ωt/2)| for a resonantly driven two-level atom.
pub fn rabi_error() -> f64 {
    let omega = 2.0 * PI * 3.0;
    let mut h = DMatrix::zeros(2, 2);
    h[(0, 1)] = c(omega / 2.0);
    h[(1, 0)] = c(omega / 2.0);
    let mut rho0 = DMatrix::zeros(2, 2);
    rho0[(0, 0)] = c(1.0);
    let times: Vec<f64> = (0..=200).map(|k| k as f64 * 0.005).collect();
    let states = evolve_static(h, vec![], rho0, &times);
    times
        .iter()
        .zip(&states)
        .map(|(t, rho)| (rho[(1, 1)].re - (omega * t / 2.0).sin().powi(2)).abs())
        .fold(0.0, f64::max)
}

/// Relative error of the vacuum-Rabi population period π/g.
pub fn vacuum_rabi_period_error() -> f64 {
    // Atom {g, e} ⊗ Fock {0, 1, 2}; H = g (a†σ + a σ†).
    let g = 2.0 * PI * 1.7;
    let nf = 3;
    let idx = |atom: usize, n: usize| atom * nf + n;
    let mut h = DMatrix::zeros(2 * nf, 2 * nf);
    for n in 0..nf - 1 {
        let v = c(g * ((n + 1) as f64).sqrt());
        h[(idx(0, n + 1), idx(1, n))] = v;
        h[(idx(1, n), idx(0, n + 1))] = v;
    }
    let mut rho0 = DMatrix::zeros(2 * nf, 2 * nf);
    rho0[(idx(1, 0), idx(1, 0))] = c(1.0);
    let t_end = 2.2 * PI / g;
    let n = 4001;
    let times: Vec<f64> = (0..n).map(|k| t_end * k as f64 / (n - 1) as f64).collect();
    let states = evolve_static(h, vec![], rho0, &times);
    let p: Vec<f64> = states.iter().map(|r| r[(idx(1, 0), idx(1, 0))].re - 0.5).collect();
    // Half-population crossings sit at inflection points, so linear
    // interpolation is accurate to high order.
    let mut crossings = Vec::new();
    for k in 1..n {
        if p[k - 1].signum() != p[k].signum() && p[k] != 0.0 {
            let f = p[k - 1] / (p[k - 1] - p[k]);
            crossings.push(times[k - 1] + f * (times[k] - times[k - 1]));
        }
    }
    assert!(crossings.len() >= 3, "{crossings:?}");
    let period = crossings[2] - crossings[0];
    ((period - PI / g) / (PI / g)).abs()
}

/// Largest relative error of G1 for a decaying, detuned cavity mode against
/// n₀ e^{−κ(t₁+t₂)} e^{iδ(t₁−t₂)}.
pub fn damped_cavity_error() -> f64 {
    let (kappa, delta, cut): (f64, f64, usize) = (1.3, 4.0, 3);
    let a = CsrMatrix::from_triplets(cut + 1, cut + 1, (1..=cut).map(|n| (n - 1, n, c((n as f64).sqrt()))));
    let number = a.adjoint().matmul(&a);
    let model = LindbladModel {
        h_static: number.scale(c(delta)),
        h_drive: CsrMatrix::zeros(cut + 1, cut + 1),
        pulse: None,
        collapse: vec![a.scale(c((2.0 * kappa).sqrt()))],
    };
    let mut rho0 = DMatrix::zeros(cut + 1, cut + 1);
    rho0[(1, 1)] = c(0.6);
    rho0[(2, 2)] = c(0.4);
    let n0 = 0.6 + 0.8;
    let sys = ReducedSystem::new(&model, &rho0);
    let times: Vec<f64> = (0..40).map(|k| k as f64 * 0.05).collect();
    let tol = Tolerances::default();
    let d = sys.dim();
    let mut y = to_vec(&sys.rho0);
    let mut states = Vec::new();
    Integrator::new(tol)
        .integrate(&sys.liouvillian, 0.0, &mut y, &times, |_, _, y| {
            states.push(from_vec(y, d));
            Ok(())
        })
        .unwrap();
    let a_r = sys.restrict_op(&a);
    let out = Regression {
        liouvillian: &sys.liouvillian,
        states: &states,
        times: &times,
        a: &a_r,
        tol,
        exec: Execution::Sequential,
    }
    .run(false)
    .unwrap();
    let mut worst: f64 = 0.0;
    for (i, &t1) in times.iter().enumerate() {
        for (j, &t2) in times.iter().enumerate() {
            let expected = C64::new(0.0, delta * (t1 - t2)).exp() * n0 * (-kappa * (t1 + t2)).exp();
            worst = worst.max((out.g1[(i, j)] - expected).norm() / expected.norm());
        }
    }
    worst
}

/// |⟨j1 m1; 1 q | J M⟩|² from diagonalizing J² on the product space.
pub fn brute_cg_sq(two_j1: i32, two_m1: i32, q: i32, two_j: i32, two_m: i32) -> f64 {
    if two_m1 + 2 * q != two_m {
        return 0.0;
    }
    let spin = |two_j: i32| {
        let dim = (two_j + 1) as usize;
        let ms: Vec<f64> = (0..dim).map(|k| (two_j - 2 * k as i32) as f64 / 2.0).collect();
        let j = two_j as f64 / 2.0;
        let mut jz = DMatrix::<f64>::zeros(dim, dim);
        let mut jp = DMatrix::<f64>::zeros(dim, dim);
        for k in 0..dim {
            jz[(k, k)] = ms[k];
            if k > 0 {
                jp[(k - 1, k)] = (j * (j + 1.0) - ms[k] * (ms[k] + 1.0)).sqrt();
            }
        }
        (jz, jp, ms)
    };
    let (z1, p1, m1s) = spin(two_j1);
    let (z2, p2, m2s) = spin(2);
    let (d1, d2) = (m1s.len(), m2s.len());
    let i1 = DMatrix::<f64>::identity(d1, d1);
    let i2 = DMatrix::<f64>::identity(d2, d2);
    let jz = z1.kronecker(&i2) + i1.kronecker(&z2);
    let jp = p1.kronecker(&i2) + i1.kronecker(&p2);
    let j2 = &jp.transpose() * &jp + &jz * &jz + &jz;
    let m_target = two_m as f64 / 2.0;
    let sub: Vec<usize> = (0..d1 * d2).filter(|&k| (jz[(k, k)] - m_target).abs() < 1e-12).collect();
    let block = DMatrix::from_fn(sub.len(), sub.len(), |r, col| j2[(sub[r], sub[col])]);
    let eig = block.symmetric_eigen();
    let jj = two_j as f64 / 2.0;
    let k = (0..sub.len())
        .find(|&k| (eig.eigenvalues[k] - jj * (jj + 1.0)).abs() < 1e-9)
        .expect("total J present");
    let i_m1 = m1s.iter().position(|&m| (m - two_m1 as f64 / 2.0).abs() < 1e-12).unwrap();
    let i_q = m2s.iter().position(|&m| (m - q as f64).abs() < 1e-12).unwrap();
    let pos = sub.iter().position(|&s| s == i_m1 * d2 + i_q).unwrap();
    eig.eigenvectors[(pos, k)].powi(2)
}

fn levels(term: Term) -> Vec<Level> {
    Level::ALL.iter().copied().filter(|l| l.term == term).collect()
}


/// (largest |w² − brute-force weight|, largest |Σw² − 1| per upper sublevel).
pub fn dipole_weight_errors() -> (f64, f64) {
    let (mut weight_err, mut norm_err): (f64, f64) = (0.0, 0.0);
    for (upper_term, lower_term) in [(Term::P12, Term::S12), (Term::P12, Term::D32)] {
        for u in levels(upper_term) {
            let two_ju = u.term.two_j() as i32;
            let mut total = 0.0;
            for l in levels(lower_term) {
                let two_jl = l.term.two_j() as i32;
                for q in Polarization::ALL {
                    let w = dipole_weight_or_zero(u, l, q);
                    let cg = brute_cg_sq(two_ju, u.two_m as i32, q.q() as i32, two_jl, l.two_m as i32);
                    let expected = (two_ju + 1) as f64 / (two_jl + 1) as f64 * cg;
                    weight_err = weight_err.max((w * w - expected).abs());
                    total += w * w;
                }
            }
            norm_err = norm_err.max((total - 1.0).abs());
        }
    }
    (weight_err, norm_err)
}

// Two-copy beam-splitter oracle. Each source is a number-diagonal mixture of
// pure states written as polynomials in time-bin creation operators; the two
// copies are mixed on a 50:50 splitter and coincidences are evaluated in the
// output Fock space.

pub const K: usize = 8;
type Poly = Vec<(C64, Vec<usize>)>;
type Fock = BTreeMap<Vec<u8>, C64>;

pub struct Source {
    pub components: Vec<(f64, Poly)>,
}

fn wavepacket(f: impl Fn(usize) -> C64) -> Vec<C64> {
    let v: Vec<C64> = (0..K).map(f).collect();
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|z| z / norm).collect()
}

fn single(psi: &[C64]) -> Poly {
    psi.iter().enumerate().map(|(k, &a)| (a, vec![k])).collect()
}

/// Normalized two-photon state ∝ a†(ψ) a†(χ)|0⟩.
fn pair(psi: &[C64], chi: &[C64]) -> Poly {
    let overlap: C64 = psi.iter().zip(chi).map(|(a, b)| a.conj() * b).sum();
    let norm = (1.0 + overlap.norm_sqr()).sqrt();
    let mut p = Vec::new();
    for (i, &a) in psi.iter().enumerate() {
        for (j, &b) in chi.iter().enumerate() {
            p.push((a * b / norm, vec![i, j]));
        }
    }
    p
}

fn create(state: &Fock, mode: usize, amp: C64) -> Fock {
    let mut out = Fock::new();
    for (occ, v) in state {
        let mut o = occ.clone();
        o[mode] += 1;
        *out.entry(o).or_default() += v * amp * (occ[mode] as f64 + 1.0).sqrt();
    }
    out
}

fn annihilate(state: &Fock, mode: usize) -> Fock {
    let mut out = Fock::new();
    for (occ, v) in state {
        if occ[mode] > 0 {
            let mut o = occ.clone();
            o[mode] -= 1;
            *out.entry(o).or_default() += v * (occ[mode] as f64).sqrt();
        }
    }
    out
}

fn add_into(acc: &mut Fock, s: Fock) {
    for (k, v) in s {
        *acc.entry(k).or_default() += v;
    }
}

fn norm_sqr(s: &Fock) -> f64 {
    s.values().map(|v| v.norm_sqr()).sum()
}

/// Applies the polynomial to `base`, mapping each creation operator through
/// `image(k) = [(output mode, amplitude)]`.
fn apply_poly(base: &Fock, poly: &Poly, image: &dyn Fn(usize) -> Vec<(usize, C64)>) -> Fock {
    let mut out = Fock::new();
    for (coef, ops) in poly {
        let mut s: Fock = base.iter().map(|(k, v)| (k.clone(), v * coef)).collect();
        for &k in ops {
            let mut next = Fock::new();
            for (mode, amp) in image(k) {
                add_into(&mut next, create(&s, mode, amp));
            }
            s = next;
        }
        add_into(&mut out, s);
    }
    out
}

// Output modes: c_{k,H}, c_{k,V}, d_{k,H}, d_{k,V}.
fn out_mode(port: usize, pol: usize, k: usize) -> usize {
    (port * 2 + pol) * K + k
}

pub fn explicit_coincidences(src: &Source, phi: f64) -> DMatrix<f64> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let image_a = move |k: usize| vec![(out_mode(0, 0, k), c(r)), (out_mode(1, 0, k), c(r))];
    let (cp, sp) = (phi.cos(), phi.sin());
    let image_b = move |k: usize| {
        vec![
            (out_mode(0, 0, k), c(r * cp)),
            (out_mode(0, 1, k), c(r * sp)),
            (out_mode(1, 0, k), c(-r * cp)),
            (out_mode(1, 1, k), c(-r * sp)),
        ]
    };
    let vacuum: Fock = [(vec![0u8; 4 * K], c(1.0))].into_iter().collect();
    let mut p = DMatrix::zeros(K, K);
    for (wa, pa) in &src.components {
        let sa = apply_poly(&vacuum, pa, &image_a);
        for (wb, pb) in &src.components {
            let s = apply_poly(&sa, pb, &image_b);
            for i in 0..K {
                for j in 0..K {
                    let mut total = 0.0;
                    for pol_c in 0..2 {
                        let ci = annihilate(&s, out_mode(0, pol_c, i));
                        for pol_d in 0..2 {
                            total += norm_sqr(&annihilate(&ci, out_mode(1, pol_d, j)));
                        }
                    }
                    p[(i, j)] += wa * wb * total;
                }
            }
        }
    }
    p
}

/// Source correlations computed in the input time-bin Fock space.
pub fn source_grid(src: &Source) -> CorrelationGrid {
    let image = |k: usize| vec![(k, c(1.0))];
    let vacuum: Fock = [(vec![0u8; K], c(1.0))].into_iter().collect();
    let mut g1 = DMatrix::<C64>::zeros(K, K);
    let mut g2 = DMatrix::<f64>::zeros(K, K);
    for (w, poly) in &src.components {
        let s = apply_poly(&vacuum, poly, &image);
        let lowered: Vec<Fock> = (0..K).map(|k| annihilate(&s, k)).collect();
        for i in 0..K {
            for j in 0..K {
                let mut overlap = C64::default();
                for (occ, v) in &lowered[j] {
                    if let Some(u) = lowered[i].get(occ) {
                        overlap += u.conj() * v;
                    }
                }
                g1[(i, j)] += overlap * *w;
                g2[(i, j)] += w * norm_sqr(&annihilate(&lowered[i], j));
            }
        }
    }
    CorrelationGrid {
        times: (0..K).map(|k| k as f64).collect(),
        n_of_t: (0..K).map(|k| g1[(k, k)].re).collect(),
        g1,
        g2: Some(g2),
        kappa: 0.5,
        outcoupling_fraction: 1.0,
    }
}

pub fn toy_sources() -> Vec<(&'static str, Source)> {
    let chirped = wavepacket(|k| {
        let t = k as f64;
        C64::from_polar((-(t - 3.0).powi(2) / 6.0).exp(), 0.3 * t * t)
    });
    let late = wavepacket(|k| c((-(k as f64 - 5.5).powi(2) / 2.0).exp()));
    let early = wavepacket(|k| c((-(k as f64 - 1.5).powi(2) / 3.0).exp() * (k as f64 + 0.5)));
    vec![
        (
            "pure",
            Source {
                components: vec![(1.0, single(&chirped))],
            },
        ),
        (
            "mixed",
            Source {
                components: vec![(0.6, single(&chirped)), (0.3, single(&late)), (0.1, vec![(c(1.0), vec![])])],
            },
        ),
        (
            "two-photon",
            Source {
                components: vec![
                    (0.7, single(&early)),
                    (0.2, pair(&early, &late)),
                    (0.1, vec![(c(1.0), vec![])]),
                ],
            },
        ),
    ]
}

/// Largest deviation between the assembled and explicit coincidence
/// densities per toy source, over several mismatch angles.
pub fn beam_splitter_deviations() -> Vec<(&'static str, f64)> {
    toy_sources()
        .into_iter()
        .map(|(name, src)| {
            let grid = source_grid(&src);
            let mut worst: f64 = 0.0;
            for phi in [0.0, 0.4, PI / 2.0] {
                let model = coincidence_density(&grid, phi).unwrap();
                worst = worst.max((&model.p_par - explicit_coincidences(&src, phi)).abs().max());
            }
            let perp = coincidence_density(&grid, 0.0).unwrap().p_perp;
            worst = worst.max((&perp - explicit_coincidences(&src, PI / 2.0)).abs().max());
            (name, worst)
        })
        .collect()
}
