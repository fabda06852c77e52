//! Critical-orbit sequences `D_n`, `gamma_n`, `b_n`, `d_n`, summability
//! diagnostics and closest-return analysis for unimodal maps.
//!
//! All sequences are stored as natural logs; `D_n` reaches `4^n` and the
//! equalizing `gamma_n` underflows an `f64` long before `n = 10^4`.

use rayon::prelude::*;
use serde::Serialize;

use crate::decay::{classify_log_points, linear_fit, log_sum_exp, DecayClass, GrowthClass};
use crate::error::{Error, Result};
use crate::map_kernel::{dist_to_critical, Family, IntervalMap, MapSpec, CRITICAL_DERIV_FLOOR};
use crate::stats::KahanSum;

/// Cap applied by the equalizing choice of `gamma_n`.
pub const GAMMA_CAP: f64 = 0.49;

#[derive(Debug, Clone, PartialEq)]
pub enum GammaStrategy {
    /// `gamma_n = min(0.49, D_n^{-1/(2 ell - 1)})`.
    Equalizing,
    /// Explicit series, given as natural logs of `gamma_1, gamma_2, ...`.
    UserSeries { log_gamma: Vec<f64> },
}

/// `log D_n` for `n = 1..=N` together with `|f^n(c) - C|`.
#[derive(Debug, Clone, PartialEq)]
pub struct DnSeries {
    pub log_d: Vec<f64>,
    pub dist_to_c: Vec<f64>,
    /// Step `n` at which the orbit met a critical point; the series stops
    /// before it.
    pub critical_hit: Option<usize>,
}

/// One pass along the orbit of `f(c)`.
pub fn compute_dn_log<M: IntervalMap + ?Sized>(m: &M, c: f64, n: usize) -> DnSeries {
    let mut log_d = Vec::with_capacity(n);
    let mut dist = Vec::with_capacity(n);
    let mut critical_hit = None;
    let mut x = m.eval(c);
    let mut acc = 0.0;
    for k in 1..=n {
        let d = m.deriv(x).abs();
        if d < CRITICAL_DERIV_FLOOR {
            log::warn!("critical orbit of {c} meets the critical set at step {k}");
            critical_hit = Some(k);
            break;
        }
        dist.push(dist_to_critical(m, x));
        acc += d.ln();
        log_d.push(acc);
        x = m.eval(x);
    }
    DnSeries {
        log_d,
        dist_to_c: dist,
        critical_hit,
    }
}

/// `gamma_i = scale * D_i^{-1/2}`, as natural logs.
pub fn scaled_inverse_sqrt(log_d: &[f64], scale: f64) -> Vec<f64> {
    log_d.iter().map(|l| scale.ln() - 0.5 * l).collect()
}

/// Returns `log gamma_n` for each entry of `log_d`.
pub fn choose_gamma(log_d: &[f64], ell: f64, strategy: &GammaStrategy) -> Result<Vec<f64>> {
    match strategy {
        GammaStrategy::Equalizing => Ok(log_d
            .iter()
            .map(|l| (-l / (2.0 * ell - 1.0)).min(GAMMA_CAP.ln()))
            .collect()),
        GammaStrategy::UserSeries { log_gamma } => {
            if log_gamma.len() < log_d.len() {
                return Err(Error::InvalidSeries(format!(
                    "{} terms supplied for {} indices",
                    log_gamma.len(),
                    log_d.len()
                )));
            }
            let lg = &log_gamma[..log_d.len()];
            if let Some((i, v)) = lg
                .iter()
                .enumerate()
                .find(|(_, v)| !v.is_finite() || **v >= 0.5f64.ln())
            {
                return Err(Error::InvalidSeries(format!(
                    "term {} is {} (not in (0, 1/2))",
                    i + 1,
                    v.exp()
                )));
            }
            if lg.len() >= 10 && verdict(lg).0 == Verdict::Diverging {
                return Err(Error::InvalidSeries(
                    "series diverges over the window".into(),
                ));
            }
            Ok(lg.to_vec())
        }
    }
}

/// `log b_n = -((ell - 1) log gamma_n + log D_n) / ell`.
pub fn compute_bn(log_d: &[f64], log_gamma: &[f64], ell: f64) -> Vec<f64> {
    log_d
        .iter()
        .zip(log_gamma)
        .map(|(ld, lg)| -((ell - 1.0) * lg + ld) / ell)
        .collect()
}

/// `log d_n` for `n = 2..=N`, where
/// `d_n = min_{1 <= i < n} (gamma_i / D_i)^{1/ell} |f^i(c) - C|`.
pub fn compute_dn(log_d: &[f64], log_gamma: &[f64], dist_to_c: &[f64], ell: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(log_d.len().saturating_sub(1));
    let mut running = f64::INFINITY;
    for i in 0..log_d.len().saturating_sub(1) {
        let term = (log_gamma[i] - log_d[i]) / ell + dist_to_c[i].ln();
        running = running.min(term);
        out.push(running);
    }
    out
}

/// Per-critical-point sequences, indexed from `n = 1` (`d` from `n = 2`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalOrbitTable {
    pub c: f64,
    pub ell: f64,
    pub log_d: Vec<f64>,
    pub log_gamma: Vec<f64>,
    pub log_b: Vec<f64>,
    /// `log d_n`; entry `j` is `n = j + 2`.
    pub log_dn: Vec<f64>,
    pub dist_to_c: Vec<f64>,
    /// Running sums of `D_n^{-1/(2 ell - 1)}`.
    pub partial_sum_star: Vec<f64>,
    pub partial_sum_b: Vec<f64>,
    pub partial_sum_gamma: Vec<f64>,
    pub critical_hit: Option<usize>,
}

impl CriticalOrbitTable {
    pub fn build<M: IntervalMap + ?Sized>(
        m: &M,
        c: f64,
        n: usize,
        strategy: &GammaStrategy,
    ) -> Result<Self> {
        let series = compute_dn_log(m, c, n);
        let mut t = Self::from_series(
            c,
            m.critical_order(),
            series.log_d,
            series.dist_to_c,
            strategy,
        )?;
        t.critical_hit = series.critical_hit;
        Ok(t)
    }

    /// Builds a table from a given `log D_n` series.
    pub fn from_series(
        c: f64,
        ell: f64,
        log_d: Vec<f64>,
        dist_to_c: Vec<f64>,
        strategy: &GammaStrategy,
    ) -> Result<Self> {
        let log_gamma = choose_gamma(&log_d, ell, strategy)?;
        let log_b = compute_bn(&log_d, &log_gamma, ell);
        let log_dn = compute_dn(&log_d, &log_gamma, &dist_to_c, ell);
        let running = |xs: &mut dyn Iterator<Item = f64>| -> Vec<f64> {
            let mut k = KahanSum::new();
            xs.map(|v| {
                k.add(v);
                k.value()
            })
            .collect()
        };
        let partial_sum_star = running(&mut log_d.iter().map(|l| (-l / (2.0 * ell - 1.0)).exp()));
        let partial_sum_b = running(&mut log_b.iter().map(|l| l.exp()));
        let partial_sum_gamma = running(&mut log_gamma.iter().map(|l| l.exp()));
        Ok(Self {
            c,
            ell,
            log_d,
            log_gamma,
            log_b,
            log_dn,
            dist_to_c,
            partial_sum_star,
            partial_sum_b,
            partial_sum_gamma,
            critical_hit: None,
        })
    }

    pub fn len(&self) -> usize {
        self.log_d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_d.is_empty()
    }

    pub fn gamma(&self, n: usize) -> f64 {
        self.log_gamma[n - 1].exp()
    }

    pub fn b(&self, n: usize) -> f64 {
        self.log_b[n - 1].exp()
    }

    /// `d_n` for `n >= 2`.
    pub fn d(&self, n: usize) -> f64 {
        self.log_dn[n - 2].exp()
    }

    /// `log D_n^{-1/(2 ell - 1)}`, the summand of the first condition.
    pub fn log_star_terms(&self) -> Vec<f64> {
        self.log_d
            .iter()
            .map(|l| -l / (2.0 * self.ell - 1.0))
            .collect()
    }
}

/// One table per critical point, in critical-point order.
pub fn critical_tables<M: IntervalMap + ?Sized>(
    m: &M,
    n: usize,
    strategy: &GammaStrategy,
) -> Result<Vec<CriticalOrbitTable>> {
    m.critical_points()
        .par_iter()
        .map(|&c| CriticalOrbitTable::build(m, c, n, strategy))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Converged,
    Diverging,
    Inconclusive,
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Converged => "converged",
            Verdict::Diverging => "diverging",
            Verdict::Inconclusive => "inconclusive",
        }
    }

    fn worst(self, other: Verdict) -> Verdict {
        use Verdict::*;
        match (self, other) {
            (Diverging, _) | (_, Diverging) => Diverging,
            (Inconclusive, _) | (_, Inconclusive) => Inconclusive,
            _ => Converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesEvidence {
    pub verdict: Verdict,
    pub total: f64,
    /// `S_N - S_{N/10}`.
    pub last_decade_increment: f64,
    /// Summand class fitted over `[1, N]`.
    pub class: Option<DecayClass>,
    /// Remainder beyond `N` implied by the fitted model, where closed form.
    pub tail_estimate: Option<f64>,
}

/// Partial-sum evidence for a series given by log terms `n = 1..=N`.
fn verdict(log_terms: &[f64]) -> (Verdict, SeriesEvidence) {
    let n = log_terms.len();
    let total = log_sum_exp(log_terms.iter().copied()).exp();
    let incr = log_sum_exp(log_terms[n / 10..].iter().copied()).exp();
    let points: Vec<(f64, f64)> = log_terms
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_finite())
        .map(|(i, &l)| ((i + 1) as f64, l))
        .collect();
    let class = classify_log_points(&points, 10.min(n)).ok();
    let v = match &class {
        Some(cl) if cl.class == GrowthClass::NotSummable => Verdict::Diverging,
        Some(cl)
            if cl.class == GrowthClass::Polynomial && cl.alpha.is_some_and(|a| a <= 1.0 + 1e-6) =>
        {
            Verdict::Diverging
        }
        Some(cl) if cl.class.is_summable(cl.alpha.unwrap_or(0.0)) && incr < 1e-6 * total => {
            Verdict::Converged
        }
        None if total > 0.0 && incr > 0.5 * total => Verdict::Diverging,
        _ => Verdict::Inconclusive,
    };
    let nn = n as f64;
    let tail_estimate = class.as_ref().and_then(|cl| match cl.class {
        GrowthClass::Exponential => {
            let b = cl.beta?;
            Some(cl.c * (-b * (nn + 1.0)).exp() / (1.0 - (-b).exp()))
        }
        GrowthClass::Polynomial => {
            let a = cl.alpha?;
            (a > 1.0).then(|| cl.c * nn.powf(1.0 - a) / (a - 1.0))
        }
        _ => None,
    });
    (
        v,
        SeriesEvidence {
            verdict: v,
            total,
            last_decade_increment: incr,
            class,
            tail_estimate,
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummabilityReport {
    /// Verdict for `sum D_n^{-1/(2 ell - 1)}`.
    pub star: SeriesEvidence,
    /// Worse of the verdicts for `sum b_n` and `sum gamma_n`.
    pub starstar: Verdict,
    pub b_series: SeriesEvidence,
    pub gamma_series: SeriesEvidence,
}

pub fn check_summability(table: &CriticalOrbitTable) -> Result<SummabilityReport> {
    if table.len() < 100 {
        return Err(Error::WindowTooShort {
            needed: 100,
            got: table.len(),
        });
    }
    let (_, star) = verdict(&table.log_star_terms());
    let (vb, b_series) = verdict(&table.log_b);
    let (vg, gamma_series) = verdict(&table.log_gamma);
    Ok(SummabilityReport {
        star,
        starstar: vb.worst(vg),
        b_series,
        gamma_series,
    })
}

/// Times `n <= N` at which `|f^n(c) - c|` sets a new strict minimum.
pub fn closest_returns<M: IntervalMap + ?Sized>(m: &M, c: f64, n: usize) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    let mut best = f64::INFINITY;
    let mut x = c;
    for k in 1..=n {
        x = m.eval(x);
        let d = (x - c).abs();
        if d < best {
            best = d;
            out.push((k, d));
        }
    }
    out
}

/// `S_1, S_2, ... = 1, 2, 3, 5, 8, ...`.
pub fn fibonacci_times(count: usize) -> Vec<usize> {
    let mut s = vec![1usize, 2];
    while s.len() < count {
        let k = s.len();
        s.push(s[k - 1] + s[k - 2]);
    }
    s.truncate(count);
    s
}

/// Kneading sequence of the critical value for the combinatorics whose
/// cutting times are `1, 2, 3, 5, 8, ...`: symbol 1 marks the
/// orientation-reversing branch. Returns symbols for iterates `1..=len`.
pub fn fibonacci_kneading(len: usize) -> Vec<u8> {
    let mut e = vec![1u8];
    let mut cut = vec![1usize];
    while e.len() < len {
        let k = cut.len();
        let q = k.saturating_sub(2);
        let mut block = e[..cut[q]].to_vec();
        *block.last_mut().unwrap() ^= 1;
        e.extend_from_slice(&block);
        cut.push(e.len());
    }
    e.truncate(len);
    e
}

/// Symbols of `f^k(c)`, `k = 1..=len`.
pub fn kneading<M: IntervalMap + ?Sized>(m: &M, c: f64, len: usize) -> Vec<u8> {
    let mut x = c;
    (0..len)
        .map(|_| {
            x = m.eval(x);
            u8::from(m.deriv(x) < 0.0)
        })
        .collect()
}

/// Parity-lexicographic order of kneading sequences; monotone in the
/// position of the points they code.
pub fn kneading_cmp(u: &[u8], v: &[u8]) -> std::cmp::Ordering {
    let mut parity = 0u8;
    for (a, b) in u.iter().zip(v) {
        if a != b {
            let ord = a.cmp(b);
            return if parity == 0 { ord } else { ord.reverse() };
        }
        parity ^= a;
    }
    std::cmp::Ordering::Equal
}

const FIB_KNEADING_LEN: usize = 400;
const FIB_RETURNS: usize = 12;

fn unimodal_family(family: Family, a: f64) -> Result<MapSpec> {
    match family {
        Family::Logistic | Family::QuadraticNormal => MapSpec::new(family, &[a]),
        _ => Err(Error::Precondition(format!(
            "{} is not a one-parameter unimodal family",
            family.id()
        ))),
    }
}

/// Locates the parameter in `bracket` whose critical orbit has the
/// Fibonacci combinatorics, by bisection on the kneading order, then checks
/// that the first 12 closest returns are `1, 2, 3, ..., 233`.
pub fn find_fibonacci_parameter(family: Family, bracket: (f64, f64)) -> Result<f64> {
    let target = fibonacci_kneading(FIB_KNEADING_LEN);
    let side = |a: f64| -> Result<std::cmp::Ordering> {
        let m = unimodal_family(family, a)?;
        Ok(kneading_cmp(
            &kneading(&m, m.critical_points()[0], FIB_KNEADING_LEN),
            &target,
        ))
    };
    let (mut lo, mut hi) = bracket;
    let (s_lo, s_hi) = (side(lo)?, side(hi)?);
    let mut found = None;
    if s_lo.is_eq() {
        found = Some(lo);
    } else if s_hi.is_eq() {
        found = Some(hi);
    } else if s_lo == s_hi {
        return Err(Error::Bracket(format!(
            "kneading at both ends of [{lo}, {hi}] lies on the same side of the target"
        )));
    }
    if found.is_none() {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            match side(mid)? {
                std::cmp::Ordering::Equal => {
                    found = Some(mid);
                    break;
                }
                s if s == s_lo => lo = mid,
                _ => hi = mid,
            }
        }
    }
    let times = fibonacci_times(FIB_RETURNS);
    let horizon = times[FIB_RETURNS - 1] + 1;
    // the two bracket ends straddle the parameter; accept whichever verifies
    let candidates = match found {
        Some(a) => vec![a],
        None => vec![0.5 * (lo + hi), lo, hi],
    };
    for a in candidates {
        let m = unimodal_family(family, a)?;
        let got: Vec<usize> = closest_returns(&m, m.critical_points()[0], horizon)
            .iter()
            .map(|r| r.0)
            .take(FIB_RETURNS)
            .collect();
        if got == times {
            return Ok(a);
        }
        log::debug!("candidate {a} has closest returns {got:?}");
    }
    Err(Error::Precondition(format!(
        "bisection converged to {lo} but the closest returns are not Fibonacci"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    /// `beta'` in `|f^{S_r}(c) - c| ~ exp(-beta' r^2)`.
    pub beta_prime: f64,
    pub intercept: f64,
    pub r2: f64,
    pub distances: Vec<f64>,
}

/// Fits `log dist_r` against `r^2` over `r in [4, R]`, where `dist[r-1]`
/// belongs to `S_r`.
pub fn fit_return_scaling(distances: &[f64]) -> Result<ScalingFit> {
    if distances.len() < 10 {
        return Err(Error::Precondition(format!(
            "{} closest returns; need at least 10",
            distances.len()
        )));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = (4..=distances.len())
        .map(|r| ((r * r) as f64, distances[r - 1].ln()))
        .unzip();
    let fit = linear_fit(&x, &y);
    Ok(ScalingFit {
        beta_prime: -fit.slope,
        intercept: fit.intercept,
        r2: fit.r2,
        distances: distances.to_vec(),
    })
}

/// Distances of the first `r_max` closest returns of the critical point,
/// fitted against `r^2`.
pub fn fibonacci_scaling_check<M: IntervalMap + ?Sized>(m: &M, r_max: usize) -> Result<ScalingFit> {
    let c = m.critical_points()[0];
    let horizon = fibonacci_times(r_max.max(2))[r_max.max(2) - 1] + 1;
    let dists: Vec<f64> = closest_returns(m, c, horizon)
        .iter()
        .take(r_max)
        .map(|r| r.1)
        .collect();
    fit_return_scaling(&dists)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full() -> MapSpec {
        MapSpec::logistic(4.0).unwrap()
    }

    #[test]
    fn dn_of_full_map() {
        let s = compute_dn_log(&full(), 0.5, 3);
        let l4 = 4f64.ln();
        for (i, v) in s.log_d.iter().enumerate() {
            assert!((v - (i + 1) as f64 * l4).abs() < 1e-12);
        }
        assert_eq!(s.dist_to_c, vec![0.5; 3]);
        assert!(s.critical_hit.is_none());
    }

    #[test]
    fn single_factor() {
        let m = MapSpec::logistic(3.7).unwrap();
        let s = compute_dn_log(&m, 0.5, 1);
        let fc = m.eval(0.5);
        assert!((s.log_d[0] - m.deriv(fc).abs().ln()).abs() < 1e-15);
    }

    #[test]
    fn superattracting_orbit_truncates() {
        // a = 2: f(1/2) = 1/2
        let m = MapSpec::logistic(2.0).unwrap();
        let s = compute_dn_log(&m, 0.5, 10);
        assert_eq!(s.critical_hit, Some(1));
        assert!(s.log_d.is_empty());
    }

    #[test]
    fn equalizing_gamma() {
        let s = compute_dn_log(&full(), 0.5, 60);
        let lg = choose_gamma(&s.log_d, 2.0, &GammaStrategy::Equalizing).unwrap();
        for (i, l) in lg.iter().enumerate() {
            let n = (i + 1) as f64;
            let expect = -n * 4f64.ln() / 3.0;
            if expect.exp() < GAMMA_CAP {
                assert!((l - expect).abs() < 1e-12);
            } else {
                assert_eq!(*l, GAMMA_CAP.ln());
            }
        }
        let capped = choose_gamma(&[0.0], 2.0, &GammaStrategy::Equalizing).unwrap();
        assert!((capped[0].exp() - 0.49).abs() < 1e-15);
    }

    #[test]
    fn user_series() {
        let s = compute_dn_log(&full(), 0.5, 200);
        let lg = scaled_inverse_sqrt(&s.log_d, 0.01);
        assert!(choose_gamma(&s.log_d, 2.0, &GammaStrategy::UserSeries { log_gamma: lg }).is_ok());
        let bad = vec![0.6f64.ln(); 200];
        assert!(matches!(
            choose_gamma(&s.log_d, 2.0, &GammaStrategy::UserSeries { log_gamma: bad }),
            Err(Error::InvalidSeries(_))
        ));
        let harmonic: Vec<f64> = (1..=200).map(|n| (0.4 / n as f64).ln()).collect();
        assert!(matches!(
            choose_gamma(
                &s.log_d,
                2.0,
                &GammaStrategy::UserSeries {
                    log_gamma: harmonic
                }
            ),
            Err(Error::InvalidSeries(_))
        ));
    }

    #[test]
    fn b_equals_gamma_under_equalizing() {
        let s = compute_dn_log(&full(), 0.5, 60);
        let lg: Vec<f64> = s.log_d.iter().map(|l| -l / 3.0).collect();
        let lb = compute_bn(&s.log_d, &lg, 2.0);
        for (n, (b, g)) in lb.iter().zip(&lg).enumerate() {
            assert!((b - g).abs() <= 1e-12 * g.abs(), "n={}", n + 1);
        }
    }

    #[test]
    fn dn_worked_values() {
        let s = compute_dn_log(&full(), 0.5, 3);
        let lg: Vec<f64> = s.log_d.iter().map(|l| -l / 3.0).collect();
        let d = compute_dn(&s.log_d, &lg, &s.dist_to_c, 2.0);
        assert_eq!(d.len(), 2);
        assert!((d[0].exp() - 4f64.powf(-2.0 / 3.0) * 0.5).abs() < 1e-15);
        assert!((d[1].exp() - 4f64.powf(-4.0 / 3.0) * 0.5).abs() < 1e-15);
        assert!(compute_dn(&s.log_d[..1], &lg[..1], &s.dist_to_c[..1], 2.0).is_empty());
    }

    #[test]
    fn table_invariants() {
        let m = MapSpec::logistic(3.83).unwrap();
        let t = CriticalOrbitTable::build(&m, 0.5, 500, &GammaStrategy::Equalizing).unwrap();
        for w in t.log_dn.windows(2) {
            assert!(w[1] <= w[0]);
        }
        for n in 2..=t.len() {
            assert!(t.log_dn[n - 2] <= t.log_gamma[n - 2] + t.log_b[n - 2] + 1e-12);
        }
        assert!(t.log_gamma.iter().all(|g| *g < 0.5f64.ln()));
    }

    #[test]
    fn full_map_converges() {
        let t = CriticalOrbitTable::build(&full(), 0.5, 1000, &GammaStrategy::Equalizing).unwrap();
        let r = check_summability(&t).unwrap();
        assert_eq!(r.star.verdict, Verdict::Converged);
        assert_eq!(r.starstar, Verdict::Converged);
        assert_eq!(
            r.star.class.as_ref().unwrap().class,
            GrowthClass::Exponential
        );
    }

    #[test]
    fn quadratic_growth_diverges() {
        let n = 1000;
        let log_d: Vec<f64> = (1..=n).map(|k| 2.0 * (k as f64).ln()).collect();
        let t = CriticalOrbitTable::from_series(
            0.5,
            2.0,
            log_d,
            vec![0.5; n],
            &GammaStrategy::Equalizing,
        )
        .unwrap();
        let r = check_summability(&t).unwrap();
        assert_eq!(r.star.verdict, Verdict::Diverging);
        assert_eq!(r.starstar, Verdict::Diverging);
    }

    #[test]
    fn short_table_rejected() {
        let t = CriticalOrbitTable::build(&full(), 0.5, 50, &GammaStrategy::Equalizing).unwrap();
        assert!(matches!(
            check_summability(&t),
            Err(Error::WindowTooShort { .. })
        ));
    }

    #[test]
    fn closest_returns_full_map() {
        assert_eq!(closest_returns(&full(), 0.5, 100), vec![(1, 0.5)]);
        assert!(closest_returns(&full(), 0.5, 0).is_empty());
    }

    #[test]
    fn fibonacci_kneading_prefix() {
        assert_eq!(fibonacci_kneading(8), vec![1, 0, 0, 1, 1, 1, 0, 1]);
        assert_eq!(
            fibonacci_times(12),
            vec![1, 2, 3, 5, 8, 13, 21, 34, 55, 89, 144, 233]
        );
    }

    #[test]
    fn kneading_order_is_monotone_in_position() {
        // for the full map, larger x below 1/2 means a larger itinerary
        let m = full();
        let mut prev: Option<Vec<u8>> = None;
        for i in 1..50 {
            let x = 0.01 * i as f64 * 0.49;
            let mut it = vec![u8::from(m.deriv(x) < 0.0)];
            it.extend(kneading(&m, x, 40));
            if let Some(p) = &prev {
                assert_eq!(kneading_cmp(p, &it), std::cmp::Ordering::Less);
            }
            prev = Some(it);
        }
    }

    #[test]
    fn full_map_has_no_fibonacci_parameter_nearby() {
        assert!(matches!(
            find_fibonacci_parameter(Family::Logistic, (3.99, 4.0)),
            Err(Error::Bracket(_))
        ));
    }

    #[test]
    fn scaling_fit_recovers_planted_rate() {
        let d: Vec<f64> = (1..=12).map(|r| (-0.3 * (r * r) as f64).exp()).collect();
        let f = fit_return_scaling(&d).unwrap();
        assert!((f.beta_prime - 0.3).abs() < 0.003);
        assert!(f.r2 > 0.9999);
        assert!(fibonacci_scaling_check(&full(), 12).is_err());
    }

    #[test]
    fn fibonacci_parameter_of_quadratic_family() {
        let a = find_fibonacci_parameter(Family::QuadraticNormal, (1.8, 2.0)).unwrap();
        assert!((a - 1.870_528_632_164_644_8).abs() < 1e-9, "{a}");
        let m = MapSpec::new(Family::QuadraticNormal, &[a]).unwrap();
        let fit = fibonacci_scaling_check(&m, 12).unwrap();
        eprintln!(
            "beta' = {} r2 = {} d = {:?}",
            fit.beta_prime, fit.r2, fit.distances
        );
        assert!(fit.beta_prime > 0.0 && fit.r2 >= 0.95);
        let b = find_fibonacci_parameter(Family::Logistic, (3.0, 4.0)).unwrap();
        assert!((b - 3.9124).abs() < 1e-3, "{b}");
    }
}
