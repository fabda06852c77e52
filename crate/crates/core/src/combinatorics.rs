//! Exact composition counts and the selection sums built on them.

use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::Serialize;

use crate::decay::log_sum_exp;
use crate::error::{Error, Result};

/// Largest `k + s` counted exactly; beyond it [`count_or_estimate`] falls
/// back to a log-gamma estimate.
pub const EXACT_LIMIT: u64 = 10_000;

pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// Sequences `(p_1, ..., p_s)` with `p_i > 0` and `sum p_i = k`.
pub fn count_positive_compositions(k: u64, s: u64) -> BigUint {
    if k == 0 || s == 0 {
        return BigUint::from(u8::from(k == 0 && s == 0));
    }
    binomial(k - 1, s - 1)
}

/// Sequences `(p_1, ..., p_s)` with `p_i >= 0` and `sum p_i = k`.
pub fn count_compositions(k: u64, s: u64) -> BigUint {
    if s == 0 {
        return BigUint::from(u8::from(k == 0));
    }
    binomial(k + s - 1, s - 1)
}

/// Natural log of a big integer, accurate to about `1e-15` relative.
pub fn ln_big(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits <= 64 {
        return (x.iter_u64_digits().next().unwrap_or(0) as f64).ln();
    }
    let shift = bits - 64;
    let top = (x >> shift).iter_u64_digits().next().unwrap_or(0) as f64;
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

fn ln_binomial_approx(n: u64, k: u64) -> f64 {
    let lg = |x: f64| libm::lgamma(x + 1.0);
    lg(n as f64) - lg(k as f64) - lg((n - k) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub enum CompositionCount {
    Exact(BigUint),
    /// Natural log of the count, from log-gamma.
    Approximate(f64),
}

/// `N_{k,s}`, exact while `k + s <= EXACT_LIMIT`.
pub fn count_or_estimate(k: u64, s: u64) -> CompositionCount {
    if k + s <= EXACT_LIMIT || s == 0 {
        CompositionCount::Exact(count_compositions(k, s))
    } else {
        CompositionCount::Approximate(ln_binomial_approx(k + s - 1, s - 1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub pairs_checked: usize,
    /// First `(k, s)` at which the bound fails.
    pub first_violation: Option<(u64, u64)>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// Checks `N_{k,s} <= 2^s max_j N+_{k,j} < 2^{k+s-1}` for all `k, s >= 1`
/// with `k + s <= max_sum`, in exact arithmetic.
pub fn verify_power_bounds(max_sum: u64) -> BoundReport {
    let mut checked = 0;
    for k in 1..max_sum {
        // max_j N+_{k,j} = C(k-1, floor((k-1)/2))
        let max_plus = binomial(k - 1, (k - 1) / 2);
        for s in 1..=(max_sum - k) {
            checked += 1;
            let n = count_compositions(k, s);
            let two_s = BigUint::one() << s;
            let cap = BigUint::one() << (k + s - 1);
            if n > &two_s * &max_plus || (&two_s * &max_plus) >= cap.clone() * 2u8 || n >= cap {
                return BoundReport {
                    pairs_checked: checked,
                    first_violation: Some((k, s)),
                };
            }
        }
    }
    BoundReport {
        pairs_checked: checked,
        first_violation: None,
    }
}

/// Log of the envelope `exp(zeta (2 - log zeta + (1 - alpha) log k) k^alpha)`
/// for `N+_{k,s}` with `s <= zeta k^alpha`.
pub fn stirling_envelope_log(k: u64, zeta: f64, alpha: f64) -> f64 {
    let kf = k as f64;
    zeta * (2.0 - zeta.ln() + (1.0 - alpha) * kf.ln()) * kf.powf(alpha)
}

/// Checks `N+_{k,s}` against [`stirling_envelope_log`] for `k <= k_max`,
/// `1 <= s <= zeta k^alpha`.
pub fn verify_stirling_bounds(k_max: u64, zeta: f64, alpha: f64) -> Result<BoundReport> {
    if !(zeta > 0.0 && zeta <= 0.5 && alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Precondition(format!(
            "need zeta in (0, 1/2] and alpha in (0, 1], got {zeta}, {alpha}"
        )));
    }
    let mut checked = 0;
    for k in 1..=k_max {
        let s_max = (zeta * (k as f64).powf(alpha)).floor() as u64;
        let env = stirling_envelope_log(k, zeta, alpha);
        for s in 1..=s_max {
            checked += 1;
            let n = count_positive_compositions(k, s);
            if ln_big(&n) > env {
                return Ok(BoundReport {
                    pairs_checked: checked,
                    first_violation: Some((k, s)),
                });
            }
        }
    }
    Ok(BoundReport {
        pairs_checked: checked,
        first_violation: None,
    })
}

/// Smallest `p0` (1-based into `g`) with `S0 = sum_{p >= p0} zeta g_p <= 1/2`,
/// i.e. `sum_{s >= 1} S0^s <= 1`.
pub fn geometric_tail_threshold(g: &[f64], zeta: f64) -> Result<usize> {
    let mut tail = 0.0;
    let mut tails = vec![0.0; g.len()];
    for (i, gp) in g.iter().enumerate().rev() {
        tail += zeta * gp;
        tails[i] = tail;
    }
    tails
        .iter()
        .position(|&s| s <= 0.5)
        .map(|i| i + 1)
        .ok_or(Error::NoThreshold)
}

/// `log` of `sum_s sum_{p_1..p_s >= p_delta, sum p_i <= n} prod zeta t_{p_i}`,
/// with `log_t[p - 1] = log t_p`. Dynamic programming over the total.
pub fn delta_selection_log_sum(log_t: &[f64], zeta: f64, p_delta: usize, n: usize) -> f64 {
    let p_delta = p_delta.max(1);
    if p_delta > n {
        return f64::NEG_INFINITY;
    }
    let lz = zeta.ln();
    let term = |p: usize| lz + log_t[p - 1];
    // a[m]: log of the sum over sequences with total exactly m
    let mut a = vec![f64::NEG_INFINITY; n + 1];
    for m in p_delta..=n {
        let parts =
            std::iter::once(term(m)).chain((p_delta..=m - p_delta).map(|p| term(p) + a[m - p]));
        a[m] = log_sum_exp(parts);
    }
    log_sum_exp(a[p_delta..].iter().copied())
}

pub fn delta_selection_sum(log_t: &[f64], zeta: f64, p_delta: usize, n: usize) -> f64 {
    delta_selection_log_sum(log_t, zeta, p_delta, n).exp()
}

/// The same sum in linear space, stopping once the running total exceeds
/// `cap`. Returns the total reached, so any value above `cap` only means
/// "too large".
pub fn delta_selection_sum_capped(
    log_t: &[f64],
    zeta: f64,
    p_delta: usize,
    n: usize,
    cap: f64,
) -> f64 {
    let p_delta = p_delta.max(1);
    let t: Vec<f64> = log_t[..n].iter().map(|l| zeta * l.exp()).collect();
    let mut a = vec![0.0; n + 1];
    let mut total = 0.0;
    for m in p_delta..=n {
        let mut s = t[m - 1];
        if m >= 2 * p_delta {
            for p in p_delta..=m - p_delta {
                s += t[p - 1] * a[m - p];
            }
        }
        a[m] = s;
        total += s;
        if total > cap {
            break;
        }
    }
    total
}
