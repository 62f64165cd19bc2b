mod common;

use std::f64::consts::PI;

use nalgebra::DMatrix;

use common::*;
use ioncav::atom::{dipole_weight, Level, Polarization, Term};
use ioncav::hom::{coincidence_density, visibility};

#[test]
fn rabi_two_level() {
    let err = rabi_error();
    assert!(err <= 1e-6, "{err:e}");
}

#[test]
fn damped_rabi_reaches_known_steady_state() {
    // Resonant drive with spontaneous decay: ρ_ee(∞) = (Ω²/4) / (Ω²/2 + Γ²/4).
    let (omega, gamma): (f64, f64) = (4.0, 1.5);
    let mut h = DMatrix::zeros(2, 2);
    h[(0, 1)] = c(omega / 2.0);
    h[(1, 0)] = c(omega / 2.0);
    let mut l = DMatrix::zeros(2, 2);
    l[(0, 1)] = c(gamma.sqrt());
    let mut rho0 = DMatrix::zeros(2, 2);
    rho0[(0, 0)] = c(1.0);
    let states = evolve_static(h, vec![l], rho0, &[40.0]);
    let expected = (omega * omega / 4.0) / (omega * omega / 2.0 + gamma * gamma / 4.0);
    assert!((states[0][(1, 1)].re - expected).abs() <= 1e-6);
}

#[test]
fn jaynes_cummings_vacuum_rabi_period() {
    let err = vacuum_rabi_period_error();
    assert!(err <= 1e-6, "{err:e}");
}

#[test]
fn damped_cavity_coherence() {
    let err = damped_cavity_error();
    assert!(err <= 1e-5, "{err:e}");
}

#[test]
fn dipole_weights_match_brute_force_angular_momentum() {
    let (weights, norms) = dipole_weight_errors();
    assert!(weights <= 1e-12, "{weights:e}");
    assert!(norms <= 1e-12, "{norms:e}");
}

#[test]
fn forbidden_pairs_are_errors() {
    let s = Level::parse("S-1/2").unwrap();
    let p = Level::parse("P+1/2").unwrap();
    assert!(dipole_weight(p, s, Polarization::Pi).is_err());
    assert!(brute_cg_sq(1, 1, 0, 1, -1) == 0.0);
    assert!(Level::ALL.iter().filter(|l| l.term == Term::D32).count() == 4);
}

#[test]
fn assembly_matches_two_copy_beam_splitter() {
    for (name, src) in toy_sources() {
        let grid = source_grid(&src);
        grid.check_invariants(1e-12).unwrap();
        if name == "two-photon" {
            assert!(grid.g2.as_ref().unwrap().max() > 1e-3);
        }
    }
    for (name, dev) in beam_splitter_deviations() {
        assert!(dev <= 1e-8, "{name}: deviation {dev:e}");
    }
}

#[test]
fn pure_source_shows_full_dip_in_oracle_and_model() {
    let (_, src) = toy_sources().remove(0);
    let par = explicit_coincidences(&src, 0.0);
    assert!(par.abs().max() < 1e-12);
    let grid = source_grid(&src);
    let v = visibility(&coincidence_density(&grid, 0.0).unwrap(), 14.0).unwrap();
    assert!((v - 1.0).abs() < 1e-12);
    let v90 = visibility(&coincidence_density(&grid, PI / 2.0).unwrap(), 14.0).unwrap();
    assert!(v90.abs() < 1e-12);
}
