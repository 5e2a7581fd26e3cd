//! Closed-form calculators for the protocol's bounds and parameter
//! formulas: super-view sizing, failure probabilities, the achievability and
//! converse curves for identified-adversary counts, and the counting bound.
//!
//! Integer thresholds use ⌈n/3⌉ wherever a set size is compared against
//! n/3, matching the adjudication pipeline; everything inside a floor is
//! computed with exact rational arithmetic first.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Frac;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("domain error: {0}")]
    Domain(String),
}

type Result<T> = std::result::Result<T, AnalysisError>;

fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(AnalysisError::Domain(msg.into()))
}

pub fn tau_l(n: u32) -> u32 {
    (n - 1) / 3
}

pub fn tau_s(n: u32) -> u32 {
    (n - 1) / 3
}

fn ceil_n3(n: u32) -> i64 {
    n.div_ceil(3) as i64
}

/// Views per super-view: ⌈log2(2/δx)⌉ + C, computed by exact doubling.
pub fn k_views_for(delta_x: Frac, c: u64) -> Result<u64> {
    if delta_x <= Frac::from_integer(0) || delta_x > Frac::from_integer(1) {
        return domain(format!("δx must lie in (0, 1], got {delta_x}"));
    }
    let target = Frac::from_integer(2) / delta_x;
    let mut pow = Frac::from_integer(1);
    let mut k = 0u64;
    while pow < target {
        pow = pow * Frac::from_integer(2);
        k += 1;
    }
    Ok(k + c)
}

/// Probability that a super-view window misses its synchrony quota:
/// exp(−δx·g/6).
pub fn superview_fail_prob(delta_x: f64, g: u64) -> Result<f64> {
    if delta_x <= 0.0 {
        return domain(format!("δx must be positive, got {delta_x}"));
    }
    if g == 0 {
        return domain("g must be at least 1".to_string());
    }
    Ok((-delta_x * g as f64 / 6.0).exp())
}

/// Upper tail of a sum of independent Bernoullis with mean μ:
/// P[Z ≥ (1+c)μ] ≤ exp(−c²μ/(2+c)).
pub fn chernoff_tail(mu: f64, c: f64) -> Result<f64> {
    if mu < 0.0 || c < 0.0 {
        return domain(format!("requires μ ≥ 0 and c ≥ 0, got μ={mu}, c={c}"));
    }
    Ok((-c * c * mu / (2.0 + c)).exp())
}

/// Generalized pigeonhole: with h: Ω → [0, m] of mean μ, at most
/// ⌊|Ω|·(m−μ)/(m−c)⌋ elements have h(ω) ≤ c.
pub fn counting_bound(size_omega: u64, m: Frac, mu: Frac, c: Frac) -> Result<i64> {
    if c < Frac::from_integer(0) || c >= mu || mu > m {
        return domain(format!("requires 0 ≤ c < μ ≤ m, got m={m}, μ={mu}, c={c}"));
    }
    let bound = Frac::from_integer(size_omega as i64) * (m - mu) / (m - c);
    Ok(bound.floor().to_integer())
}

/// Lower bound on the number of adversary nodes the adjudication rule
/// identifies when f of them cause a violation:
/// f − ⌊((f − ⌈n/3⌉) + (x+δx)(τALmax − ⌈n/3⌉)) / (1 − x − δx)⌋.
pub fn achievable_ident(n: u32, tau_al_max: u32, x: Frac, delta_x: Frac, f: u32) -> Result<i64> {
    let s = x + delta_x;
    let one = Frac::from_integer(1);
    if s * Frac::from_integer(2) >= one {
        return domain(format!("requires x + δx < 1/2, got {s}"));
    }
    if 3 * tau_al_max <= n || 2 * tau_al_max >= n {
        return domain(format!("requires n/3 < τALmax < n/2, got n={n}, τALmax={tau_al_max}"));
    }
    if 3 * f < n || f > tau_al_max {
        return domain(format!("requires n/3 ≤ f ≤ τALmax, got n={n}, f={f}"));
    }
    let a = Frac::from_integer(ceil_n3(n));
    let f_r = Frac::from_integer(f as i64);
    let tau_r = Frac::from_integer(tau_al_max as i64);
    let inner = ((f_r - a) + s * (tau_r - a)) / (one - s);
    Ok(f as i64 - inner.floor().to_integer())
}

/// The converse curve: identified counts must stay strictly below
/// (τL+2) − ⌊(τALmax − (τL+1)) / (k−2)⌋; the best achievable value is one
/// less than the returned bound.
pub fn converse_ident_upper(n: u32, tau_al_max: u32, k: u32) -> Result<i64> {
    if k < 3 {
        return domain(format!("requires k ≥ 3, got {k}"));
    }
    let tl = tau_l(n);
    if tau_al_max <= tl {
        return domain(format!("requires τALmax > τL = {tl}, got {tau_al_max}"));
    }
    Ok((tl as i64 + 2) - ((tau_al_max - tl - 1) / (k - 2)) as i64)
}

/// One row of the achievability/impossibility frontier at a given x.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrontierPoint {
    #[serde(with = "crate::fracfmt")]
    pub x: Frac,
    pub n: u32,
    pub tau_al_max: u32,
    pub achievable_ident: Option<i64>,
    pub converse_upper: Option<i64>,
    pub regime: &'static str,
}

/// Evaluate both curves across an x grid, with f = τALmax and δx → 0
/// (substituting δx = 0 as the limit) on the achievability side and
/// k = ⌈1/x⌉ on the converse side. Out-of-regime points are flagged rather
/// than erroring: x ≥ 1/2 is impossible territory, τALmax ≤ n/3 makes
/// accountability trivial.
pub fn frontier_table(n: u32, tau_al_max: u32, grid: &[Frac]) -> Vec<FrontierPoint> {
    grid.iter()
        .map(|&x| {
            if x <= Frac::from_integer(0) || x * Frac::from_integer(2) >= Frac::from_integer(1) {
                return FrontierPoint {
                    x,
                    n,
                    tau_al_max,
                    achievable_ident: None,
                    converse_upper: None,
                    regime: "impossible",
                };
            }
            if 3 * tau_al_max <= n {
                return FrontierPoint {
                    x,
                    n,
                    tau_al_max,
                    achievable_ident: None,
                    converse_upper: None,
                    regime: "trivial",
                };
            }
            let k = {
                let inv = Frac::from_integer(1) / x;
                inv.ceil().to_integer() as u32
            };
            FrontierPoint {
                x,
                n,
                tau_al_max,
                achievable_ident: achievable_ident(n, tau_al_max, x, Frac::from_integer(0), tau_al_max)
                    .ok(),
                converse_upper: converse_ident_upper(n, tau_al_max, k).ok(),
                regime: "ok",
            }
        })
        .collect()
}
