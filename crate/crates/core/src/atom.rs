//! Level structure of ⁴⁰Ca⁺ restricted to 4²S₁/₂, 4²P₁/₂ and 3²D₃/₂,
//! Zeeman shifts and Zeeman-resolved dipole weights.
//!
//! Magnetic quantum numbers are stored doubled (`two_m = 2m`) so that all
//! angular momentum arithmetic stays in integers.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Bohr magneton divided by Planck's constant, MHz per gauss.
pub const BOHR_MHZ_PER_GAUSS: f64 = 1.399624;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Term {
    S12,
    P12,
    D32,
}

impl Term {
    /// Doubled (l, s, j).
    fn doubled_lsj(self) -> (i32, i32, i32) {
        match self {
            Term::S12 => (0, 1, 1),
            Term::P12 => (2, 1, 1),
            Term::D32 => (4, 1, 3),
        }
    }

    /// Twice the total angular momentum j.
    pub fn two_j(self) -> i8 {
        self.doubled_lsj().2 as i8
    }

    pub fn label(self) -> &'static str {
        match self {
            Term::S12 => "S",
            Term::P12 => "P",
            Term::D32 => "D",
        }
    }
}

/// One Zeeman sublevel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Level {
    pub term: Term,
    pub two_m: i8,
}

impl TryFrom<String> for Level {
    type Error = Error;

    fn try_from(s: String) -> Result<Level> {
        Level::parse(&s)
    }
}

impl From<Level> for String {
    fn from(l: Level) -> String {
        l.label()
    }
}

impl Level {
    /// Fixed basis order: S₋, S₊, P₋, P₊, D₋₃/₂, D₋₁/₂, D₊₁/₂, D₊₃/₂.
    pub const ALL: [Level; 8] = [
        Level::new(Term::S12, -1),
        Level::new(Term::S12, 1),
        Level::new(Term::P12, -1),
        Level::new(Term::P12, 1),
        Level::new(Term::D32, -3),
        Level::new(Term::D32, -1),
        Level::new(Term::D32, 1),
        Level::new(Term::D32, 3),
    ];

    pub const fn new(term: Term, two_m: i8) -> Self {
        Level { term, two_m }
    }

    /// Checked constructor.
    pub fn try_new(term: Term, two_m: i8) -> Result<Self> {
        let two_j = term.two_j();
        if two_m.abs() > two_j || (two_m - two_j) % 2 != 0 {
            return Err(Error::invalid(
                "level.m",
                format!("m = {}/2 not allowed for {:?}", two_m, term),
            ));
        }
        Ok(Level { term, two_m })
    }

    pub fn m(self) -> f64 {
        self.two_m as f64 / 2.0
    }

    /// Position in [`Level::ALL`].
    pub fn index(self) -> usize {
        Level::ALL
            .iter()
            .position(|&l| l == self)
            .expect("level constructed outside the 8-level basis")
    }

    pub fn from_index(i: usize) -> Option<Level> {
        Level::ALL.get(i).copied()
    }

    /// Short label such as `S-1/2` or `D+3/2`.
    pub fn label(self) -> String {
        let sign = if self.two_m < 0 { '-' } else { '+' };
        format!("{}{}{}/2", self.term.label(), sign, self.two_m.abs())
    }

    pub fn parse(s: &str) -> Result<Level> {
        let bad = || Error::invalid("level", format!("cannot parse `{s}`, expected e.g. `S-1/2`"));
        let s = s.trim();
        let term = match s.get(..1) {
            Some("S") => Term::S12,
            Some("P") => Term::P12,
            Some("D") => Term::D32,
            _ => return Err(bad()),
        };
        let rest = s[1..].strip_suffix("/2").ok_or_else(bad)?;
        let two_m: i8 = rest.parse().map_err(|_| bad())?;
        Level::try_new(term, two_m)
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Spherical polarization component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarization {
    SigmaMinus,
    Pi,
    SigmaPlus,
}

impl Polarization {
    pub const ALL: [Polarization; 3] = [
        Polarization::SigmaMinus,
        Polarization::Pi,
        Polarization::SigmaPlus,
    ];

    pub fn q(self) -> i8 {
        match self {
            Polarization::SigmaMinus => -1,
            Polarization::Pi => 0,
            Polarization::SigmaPlus => 1,
        }
    }

    pub fn from_q(q: i8) -> Option<Polarization> {
        match q {
            -1 => Some(Polarization::SigmaMinus),
            0 => Some(Polarization::Pi),
            1 => Some(Polarization::SigmaPlus),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Polarization::SigmaMinus => "sigma_minus",
            Polarization::Pi => "pi",
            Polarization::SigmaPlus => "sigma_plus",
        }
    }
}

impl fmt::Display for Polarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Landé g-factor of a fine-structure term (g_s = 2).
pub fn lande_g(term: Term) -> f64 {
    let (l2, s2, j2) = term.doubled_lsj();
    let (l, s, j) = (l2 as f64 / 2.0, s2 as f64 / 2.0, j2 as f64 / 2.0);
    1.0 + (j * (j + 1.0) + s * (s + 1.0) - l * (l + 1.0)) / (2.0 * j * (j + 1.0))
}

/// Linear Zeeman shift of a sublevel in rad/µs for a field of `b_gauss`.
pub fn zeeman_shift(level: Level, b_gauss: f64) -> f64 {
    crate::mhz(lande_g(level.term) * level.m() * BOHR_MHZ_PER_GAUSS * b_gauss)
}

/// Upper→lower pairs that radiate: P₁/₂ decays to S₁/₂ and to D₃/₂.
pub fn dipole_connected(upper: Term, lower: Term) -> bool {
    matches!((upper, lower), (Term::P12, Term::S12) | (Term::P12, Term::D32))
}

/// Relative dipole amplitude ⟨lower| d_q |upper⟩ for `m_lower = m_upper + q`.
///
/// Normalized so that for each upper sublevel the squared weights into one
/// lower manifold sum to one; signs follow the Wigner–Eckart phase
/// `(-1)^(j_l - m_l)`.
pub fn dipole_weight(upper: Level, lower: Level, q: Polarization) -> Result<f64> {
    let forbidden = || Error::ForbiddenTransition { upper, lower, q };
    if !dipole_connected(upper.term, lower.term) {
        return Err(forbidden());
    }
    if lower.two_m - upper.two_m != 2 * q.q() {
        return Err(forbidden());
    }
    let two_ju = upper.term.two_j() as i32;
    let two_jl = lower.term.two_j() as i32;
    let three_j = wigner_3j(
        two_jl,
        2,
        two_ju,
        -(lower.two_m as i32),
        2 * q.q() as i32,
        upper.two_m as i32,
    );
    let phase = if ((two_jl - lower.two_m as i32) / 2) % 2 == 0 { 1.0 } else { -1.0 };
    Ok(((two_ju + 1) as f64).sqrt() * phase * three_j)
}

/// Dipole weight, or zero for pairs that do not couple with polarization `q`.
pub fn dipole_weight_or_zero(upper: Level, lower: Level, q: Polarization) -> f64 {
    dipole_weight(upper, lower, q).unwrap_or(0.0)
}

fn factorial(n: i32) -> f64 {
    debug_assert!(n >= 0);
    (1..=n).map(f64::from).product()
}

/// Wigner 3-j symbol from the Racah sum; all arguments doubled.
pub fn wigner_3j(tj1: i32, tj2: i32, tj3: i32, tm1: i32, tm2: i32, tm3: i32) -> f64 {
    if tm1 + tm2 + tm3 != 0 {
        return 0.0;
    }
    if tj3 < (tj1 - tj2).abs() || tj3 > tj1 + tj2 || (tj1 + tj2 + tj3) % 2 != 0 {
        return 0.0;
    }
    for (tj, tm) in [(tj1, tm1), (tj2, tm2), (tj3, tm3)] {
        if tm.abs() > tj || (tj - tm) % 2 != 0 {
            return 0.0;
        }
    }
    let h = |x: i32| x / 2;
    let triangle = factorial(h(tj1 + tj2 - tj3)) * factorial(h(tj1 - tj2 + tj3))
        * factorial(h(-tj1 + tj2 + tj3))
        / factorial(h(tj1 + tj2 + tj3) + 1);
    let prefactor = (triangle
        * factorial(h(tj1 + tm1))
        * factorial(h(tj1 - tm1))
        * factorial(h(tj2 + tm2))
        * factorial(h(tj2 - tm2))
        * factorial(h(tj3 + tm3))
        * factorial(h(tj3 - tm3)))
    .sqrt();

    let k_min = 0.max(h(tj2 - tj3 - tm1)).max(h(tj1 - tj3 + tm2));
    let k_max = h(tj1 + tj2 - tj3).min(h(tj1 - tm1)).min(h(tj2 + tm2));
    let mut sum = 0.0;
    for k in k_min..=k_max {
        let denom = factorial(k)
            * factorial(h(tj3 - tj2 + tm1) + k)
            * factorial(h(tj3 - tj1 - tm2) + k)
            * factorial(h(tj1 + tj2 - tj3) - k)
            * factorial(h(tj1 - tm1) - k)
            * factorial(h(tj2 + tm2) - k);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign / denom;
    }
    let phase_exp = h(tj1 - tj2 - tm3);
    let phase = if phase_exp.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    phase * prefactor * sum
}
