//! Binding periods, the critical neighbourhood `Delta` and the large-scale
//! inducing construction.
//!
//! A point `x` within `delta` of a critical point `c` shadows the orbit of
//! `c` for `p(x)` steps. Shadowing is measured with offsets
//! `e_k = f^k(x) - f^k(c)` propagated through `eval_diff`, so offsets far
//! below the spacing of `f64` near `f^k(c)` stay meaningful.

pub(crate) mod engine;
pub mod large_scale;
pub mod levels;

use rayon::prelude::*;
use serde::Serialize;

use crate::combinatorics::delta_selection_sum_capped;
use crate::critical_orbit::CriticalOrbitTable;
use crate::error::{Error, Result};
use crate::map_kernel::{
    dist_to_critical, image_hull, nearest_critical, IntervalMap, CRITICAL_DERIV_FLOOR,
};
use crate::stats::{low_discrepancy, low_discrepancy_2d, quantile_line};

pub use engine::{Dd, Entry, Label, Unresolved, UnresolvedReason, RESOLUTION_FLOOR};
pub use large_scale::{
    check_size_lemma, distortion_constant, induce_to_large_scale, itinerary_violation,
    piece_distortion, tail_of_phat, DistortionConstant, LargeScalePartition, LargeScalePiece,
    SizeLemmaReport, TailStats,
};
pub use levels::{build_level_sets, LevelSets, SideLevels};

/// Cap on binding periods.
pub const P_MAX: usize = 10_000;
/// Smallest accepted bounded-backward-contraction constant.
pub const KAPPA_MIN: f64 = 1e-3;
/// Step cap for the first entry into `Delta` when estimating `kappa`.
pub const BBC_STEP_CAP: usize = 100_000;
/// Target for the measured strip contraction.
pub const RHO_TARGET: f64 = 0.125;

/// Critical orbit data the binding test runs against.
#[derive(Debug, Clone, Serialize)]
pub struct CriticalTrack {
    pub c: f64,
    /// `f^k(c)` for `k = 0..=N`.
    pub orbit: Vec<f64>,
    /// `gamma_k |f^k(c) - C|` at index `k`; index 0 is unused.
    pub tolerance: Vec<f64>,
    pub log_gamma: Vec<f64>,
    pub log_d: Vec<f64>,
    pub log_b: Vec<f64>,
}

impl CriticalTrack {
    pub fn new<M: IntervalMap + ?Sized>(m: &M, table: &CriticalOrbitTable) -> Self {
        let n = table.len();
        let mut orbit = Vec::with_capacity(n + 1);
        let mut y = table.c;
        orbit.push(y);
        for _ in 0..n {
            y = m.eval(y);
            orbit.push(y);
        }
        let mut tolerance = vec![0.0];
        tolerance.extend(
            table
                .log_gamma
                .iter()
                .zip(&table.dist_to_c)
                .map(|(lg, d)| lg.exp() * d),
        );
        Self {
            c: table.c,
            orbit,
            tolerance,
            log_gamma: table.log_gamma.clone(),
            log_d: table.log_d.clone(),
            log_b: table.log_b.clone(),
        }
    }

    /// Largest usable binding period.
    pub fn horizon(&self, p_max: usize) -> usize {
        p_max.min(self.tolerance.len())
    }

    /// Binding period of `c + h`, and whether it hit the cap.
    pub fn binding_offset<M: IntervalMap + ?Sized>(
        &self,
        m: &M,
        h: f64,
        p_max: usize,
    ) -> (usize, bool) {
        let cap = self.horizon(p_max);
        let mut e = h;
        for k in 1..cap {
            e = m.eval_diff(self.orbit[k - 1], e);
            if !(e.abs() <= self.tolerance[k]) {
                return (k, false);
            }
        }
        (cap, true)
    }

    /// `log|(f^p)'(c + h)|`, evaluated along the offset orbit.
    pub fn log_deriv_offset<M: IntervalMap + ?Sized>(&self, m: &M, h: f64, p: usize) -> f64 {
        let mut e = h;
        let mut acc = 0.0;
        for k in 0..p {
            let y = self.orbit[k];
            acc += (m.deriv(y) + m.deriv_diff(y, e)).abs().ln();
            e = m.eval_diff(y, e);
        }
        acc
    }
}

/// Everything the construction needs to know about the critical
/// neighbourhood.
#[derive(Debug, Clone, Serialize)]
pub struct BindingConfig {
    pub delta: f64,
    /// Smallest binding period at the boundary of `Delta`.
    pub p_delta: usize,
    pub p_max: usize,
    pub epsilon: f64,
    pub delta_prime: f64,
    pub kappa: f64,
    pub kappa_argmin: f64,
    pub kappa_skipped: usize,
    pub tau: f64,
    pub big_gamma: f64,
    pub zeta: f64,
    pub rho: f64,
    /// Selection sum per critical point at the chosen `delta`.
    pub selection_sums: Vec<f64>,
    pub halvings: usize,
    pub tracks: Vec<CriticalTrack>,
}

impl BindingConfig {
    pub fn critical_points(&self) -> Vec<f64> {
        self.tracks.iter().map(|t| t.c).collect()
    }

    pub fn in_delta(&self, x: f64) -> bool {
        self.tracks.iter().any(|t| (x - t.c).abs() < self.delta)
    }

    /// Index of the component of `Delta` containing `x`.
    pub fn delta_component(&self, x: f64) -> Option<usize> {
        self.tracks
            .iter()
            .position(|t| (x - t.c).abs() < self.delta)
    }

    /// Whether `[lo, hi]` meets `Delta`.
    pub fn meets_delta(&self, lo: f64, hi: f64) -> bool {
        self.tracks
            .iter()
            .any(|t| hi > t.c - self.delta && lo < t.c + self.delta)
    }
}

/// Binding period of `x`, the critical point it binds to, and the cap flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Binding {
    pub p: usize,
    pub critical: usize,
    pub cap_hit: bool,
}

pub fn binding_period<M: IntervalMap + ?Sized>(m: &M, x: f64, cfg: &BindingConfig) -> Binding {
    let cps = cfg.critical_points();
    let i = nearest_critical(m, x);
    if (x - cps[i]).abs() >= cfg.delta {
        return Binding {
            p: 0,
            critical: i,
            cap_hit: false,
        };
    }
    let (p, cap_hit) = cfg.tracks[i].binding_offset(m, x - cps[i], cfg.p_max);
    Binding {
        p,
        critical: i,
        cap_hit,
    }
}

/// Tunables of the `delta` search.
#[derive(Debug, Clone, Serialize)]
pub struct DeltaOptions {
    pub delta0: f64,
    pub zeta: f64,
    pub p_max: usize,
    pub max_halvings: usize,
    pub kappa_samples: usize,
    pub tau_samples: usize,
    pub delta_prime_horizon: usize,
    /// Fixed `epsilon`; `None` selects it by the strip-contraction rule.
    pub epsilon: Option<f64>,
}

impl Default for DeltaOptions {
    fn default() -> Self {
        Self {
            delta0: 0.05,
            zeta: 1.0,
            p_max: P_MAX,
            max_halvings: 40,
            kappa_samples: 10_000,
            tau_samples: 100_000,
            delta_prime_horizon: 1000,
            epsilon: None,
        }
    }
}

fn boundary_binding<M: IntervalMap + ?Sized>(
    m: &M,
    track: &CriticalTrack,
    delta: f64,
    p_max: usize,
) -> usize {
    // Delta is open, so the boundary value is the limit from inside
    let h = delta * (1.0 - 1e-12);
    let (lo, hi) = m.domain();
    let mut p = usize::MAX;
    for s in [-1.0, 1.0] {
        let x = track.c + s * h;
        if x > lo && x < hi {
            p = p.min(track.binding_offset(m, s * h, p_max).0);
        }
    }
    p
}

/// Shrinks `delta` until the selection inequality and bounded backward
/// contraction both hold, then measures the remaining constants.
pub fn fix_delta<M: IntervalMap + ?Sized>(
    m: &M,
    tables: &[CriticalOrbitTable],
    opts: &DeltaOptions,
) -> Result<BindingConfig> {
    if let Some(t) = tables.iter().find(|t| t.len() < 1000) {
        return Err(Error::Precondition(format!(
            "critical orbit table for c = {} has {} entries, need at least 1000",
            t.c,
            t.len()
        )));
    }
    if tables.len() != m.critical_points().len() {
        return Err(Error::Precondition(
            "one critical orbit table per critical point is required".into(),
        ));
    }
    let tracks: Vec<CriticalTrack> = tables.iter().map(|t| CriticalTrack::new(m, t)).collect();
    let mut delta = opts.delta0;
    let mut last_reason = String::new();
    for halvings in 0..=opts.max_halvings {
        if halvings > 0 {
            delta *= 0.5;
        }
        let p_deltas: Vec<usize> = tracks
            .iter()
            .map(|t| boundary_binding(m, t, delta, opts.p_max))
            .collect();
        if p_deltas
            .iter()
            .any(|&pd| pd >= opts.p_max.min(tables[0].len()))
        {
            last_reason =
                format!("binding at the boundary of Delta reaches the cap at delta = {delta:e}");
            log::debug!("{last_reason}");
            continue;
        }
        let sums: Vec<f64> = tracks
            .iter()
            .zip(&p_deltas)
            .map(|(t, &pd)| delta_selection_sum_capped(&t.log_b, opts.zeta, pd, t.log_b.len(), 1.0))
            .collect();
        if let Some(s) = sums.iter().find(|&&s| !(s <= 1.0)) {
            last_reason = format!("selection sum {s:.4} > 1 at delta = {delta:e}");
            log::debug!("{last_reason}");
            continue;
        }
        let k = estimate_bbc_kappa(m, &critical_list(&tracks), delta, opts.kappa_samples);
        if !(k.kappa > KAPPA_MIN) {
            last_reason = format!("kappa {:e} <= {KAPPA_MIN:e} at delta = {delta:e}", k.kappa);
            log::debug!("{last_reason}");
            continue;
        }
        let tau = estimate_tau(m, opts.tau_samples);
        let big_gamma = tracks
            .iter()
            .map(|t| {
                let s: f64 = t
                    .log_gamma
                    .iter()
                    .map(|l| l.exp())
                    .map(|g| g / (1.0 - g))
                    .sum();
                (tau * s).exp()
            })
            .fold(1.0, f64::max);
        let delta_prime = delta_prime(m, &critical_list(&tracks), delta, opts.delta_prime_horizon);
        let mut cfg = BindingConfig {
            delta,
            p_delta: p_deltas.iter().copied().min().unwrap_or(0),
            p_max: opts.p_max,
            epsilon: 0.0,
            delta_prime,
            kappa: k.kappa,
            kappa_argmin: k.argmin,
            kappa_skipped: k.skipped,
            tau,
            big_gamma,
            zeta: opts.zeta,
            rho: 0.0,
            selection_sums: sums,
            halvings,
            tracks,
        };
        let (eps, rho) = match opts.epsilon {
            Some(e) => (e, strip_contraction(m, &cfg, e)),
            None => choose_epsilon(m, &cfg)?,
        };
        cfg.epsilon = eps;
        cfg.rho = rho;
        return Ok(cfg);
    }
    Err(Error::NoValidDelta {
        halvings: opts.max_halvings,
        reason: last_reason,
    })
}

fn critical_list(tracks: &[CriticalTrack]) -> Vec<f64> {
    tracks.iter().map(|t| t.c).collect()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct KappaEstimate {
    pub kappa: f64,
    pub argmin: f64,
    /// Sample points that never entered `Delta` within the step cap.
    pub skipped: usize,
}

/// Minimum of `|(f^n)'(x)|` at the first entry time of `x` into `Delta`,
/// over a low-discrepancy grid.
pub fn estimate_bbc_kappa<M: IntervalMap + ?Sized>(
    m: &M,
    cps: &[f64],
    delta: f64,
    samples: usize,
) -> KappaEstimate {
    let (lo, hi) = m.domain();
    let xs: Vec<f64> = low_discrepancy(lo, hi, samples).collect();
    let inside = |y: f64| cps.iter().any(|c| (y - c).abs() < delta);
    let per_point: Vec<Option<(f64, f64)>> = xs
        .par_iter()
        .map(|&x| {
            let mut y = x;
            let mut acc = 0.0;
            for _ in 0..BBC_STEP_CAP {
                if inside(y) {
                    return Some((acc, x));
                }
                acc += m.deriv(y).abs().ln();
                y = m.eval(y);
            }
            if inside(y) {
                Some((acc, x))
            } else {
                None
            }
        })
        .collect();
    let mut best = (0.0f64, f64::NAN);
    let mut seen = false;
    let mut skipped = 0;
    for r in per_point {
        match r {
            Some((l, x)) if !seen || l < best.0 => {
                best = (l, x);
                seen = true;
            }
            Some(_) => {}
            None => skipped += 1,
        }
    }
    KappaEstimate {
        kappa: if seen { best.0.exp().min(1.0) } else { 0.0 },
        argmin: best.1,
        skipped,
    }
}

/// Largest sampled `|f'(x) - f'(y)| / |f'(x)| * |x - C| / |x - y|` over
/// pairs with `|x - y| <= |x - C| / 2`.
pub fn estimate_tau<M: IntervalMap + ?Sized>(m: &M, samples: usize) -> f64 {
    let (lo, hi) = m.domain();
    let pts: Vec<(f64, f64)> = low_discrepancy_2d(samples).collect();
    pts.par_iter()
        .filter_map(|&(u, v)| {
            let x = lo + (hi - lo) * u;
            let dc = dist_to_critical(m, x);
            if dc < 1e-9 {
                return None;
            }
            let y = (x + 0.5 * dc * (2.0 * v - 1.0)).clamp(lo, hi);
            let dx = (x - y).abs();
            let fx = m.deriv(x);
            if dx < 1e-12 * dc || fx.abs() < CRITICAL_DERIV_FLOOR {
                return None;
            }
            Some((fx - m.deriv(y)).abs() / fx.abs() * dc / dx)
        })
        .reduce(|| 0.0, f64::max)
}

/// Minimal length of `f^n(W)` over the one-sided components `W` of
/// `Delta` minus the critical set and `n <= horizon`.
pub fn delta_prime<M: IntervalMap + ?Sized>(m: &M, cps: &[f64], delta: f64, horizon: usize) -> f64 {
    let (lo, hi) = m.domain();
    let mut best = f64::INFINITY;
    for &c in cps {
        for (a, b) in [((c - delta).max(lo), c), (c, (c + delta).min(hi))] {
            if b <= a {
                continue;
            }
            let (mut u, mut v) = (a, b);
            best = best.min(v - u);
            for _ in 0..horizon {
                (u, v) = image_hull(m, u, v);
                best = best.min(v - u);
            }
        }
    }
    best
}

/// Shortest component of the complement of `Delta` in the domain.
fn shortest_gap(m: &(impl IntervalMap + ?Sized), cfg: &BindingConfig) -> f64 {
    let (lo, hi) = m.domain();
    let mut edges = vec![lo];
    for t in &cfg.tracks {
        edges.push(t.c - cfg.delta);
        edges.push(t.c + cfg.delta);
    }
    edges.push(hi);
    edges
        .chunks(2)
        .map(|w| w[1] - w[0])
        .filter(|g| *g > 0.0)
        .fold(f64::INFINITY, f64::min)
}

/// Measured contraction over `epsilon`-strips: the largest
/// `1 / |(f^k)'|` over strips outside `Delta` whose first visit to
/// `Delta` happens with an image of length at least `delta'`.
pub fn strip_contraction<M: IntervalMap + ?Sized>(m: &M, cfg: &BindingConfig, epsilon: f64) -> f64 {
    let (lo, hi) = m.domain();
    let starts: Vec<f64> = low_discrepancy(lo, hi - epsilon, 2000)
        .filter(|&y| !cfg.meets_delta(y, y + epsilon))
        .collect();
    starts
        .par_iter()
        .map(|&y| {
            let (mut u, mut v) = (y, y + epsilon);
            for k in 1..=1000 {
                (u, v) = image_hull(m, u, v);
                if cfg.meets_delta(u, v) {
                    if v - u < cfg.delta_prime {
                        return 0.0;
                    }
                    let worst = [y, y + 0.5 * epsilon, y + epsilon]
                        .iter()
                        .map(|&x| {
                            let mut z = x;
                            let mut acc = 0.0;
                            for _ in 0..k {
                                acc += m.deriv(z).abs().ln();
                                z = m.eval(z);
                            }
                            acc
                        })
                        .fold(f64::INFINITY, f64::min);
                    return (-worst).exp();
                }
            }
            0.0
        })
        .reduce(|| 0.0, f64::max)
}

/// `epsilon = delta' / 100`, halved until it fits inside every component
/// of `Delta` and its complement and the strip contraction is at most 1/8.
pub fn choose_epsilon<M: IntervalMap + ?Sized>(m: &M, cfg: &BindingConfig) -> Result<(f64, f64)> {
    let gap = shortest_gap(m, cfg).min(2.0 * cfg.delta);
    let mut eps = cfg.delta_prime / 100.0;
    for _ in 0..40 {
        if eps < gap {
            let rho = strip_contraction(m, cfg, eps);
            if rho <= RHO_TARGET {
                return Ok((eps, rho));
            }
        }
        eps *= 0.5;
    }
    Err(Error::NoValidDelta {
        halvings: 40,
        reason: "no strip width reaches the contraction target 1/8".into(),
    })
}

/// Lower envelope `log|(f^k)'(x)| >= log C + lambda k` over orbit
/// segments that stay outside `Delta`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OutsideExpansion {
    pub c_delta: f64,
    pub lambda: f64,
    pub points: usize,
}

pub fn estimate_outside_expansion<M: IntervalMap + ?Sized>(
    m: &M,
    cfg: &BindingConfig,
    samples: usize,
) -> Result<OutsideExpansion> {
    const MAX_SEGMENT: usize = 32;
    let (lo, hi) = m.domain();
    let xs: Vec<f64> = low_discrepancy(lo, hi, samples).collect();
    let per: Vec<Vec<(f64, f64)>> = xs
        .par_iter()
        .map(|&x| {
            let mut out = Vec::new();
            let mut y = x;
            let mut acc = 0.0;
            for k in 1..=MAX_SEGMENT {
                if cfg.in_delta(y) {
                    break;
                }
                acc += m.deriv(y).abs().ln();
                y = m.eval(y);
                out.push((k as f64, acc));
            }
            out
        })
        .collect();
    let (kx, ly): (Vec<f64>, Vec<f64>) = per.into_iter().flatten().unzip();
    if kx.len() < 10 {
        return Err(Error::NonHyperbolicSample { lambda: f64::NAN });
    }
    let (a, b) = quantile_line(&kx, &ly, 0.01);
    if !(b > 0.0) {
        return Err(Error::NonHyperbolicSample { lambda: b });
    }
    Ok(OutsideExpansion {
        c_delta: a.exp(),
        lambda: b,
        points: kx.len(),
    })
}

/// Largest ratio `|(f^i)'(y)| / |(f^i)'(z)|` for `i <= p - 1` and `y, z`
/// on a 21-point grid of `[f(x), f(c)]`.
pub fn binding_distortion<M: IntervalMap + ?Sized>(m: &M, x: f64, cfg: &BindingConfig) -> f64 {
    let b = binding_period(m, x, cfg);
    if b.p <= 1 {
        return 1.0;
    }
    let track = &cfg.tracks[b.critical];
    let top = m.eval_diff(track.c, x - track.c);
    // log|(f^i)'| along each grid offset, i = 1..p-1
    let rows: Vec<Vec<f64>> = (0..=20)
        .map(|j| {
            let mut e = top * j as f64 / 20.0;
            let mut acc = 0.0;
            let mut row = Vec::with_capacity(b.p - 1);
            for k in 1..b.p {
                let y = track.orbit[k];
                acc += (m.deriv(y) + m.deriv_diff(y, e)).abs().ln();
                e = m.eval_diff(y, e);
                row.push(acc);
            }
            row
        })
        .collect();
    let mut worst = 0.0f64;
    for i in 0..b.p - 1 {
        let (mn, mx) = rows
            .iter()
            .map(|r| r[i])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, c), v| {
                (a.min(v), c.max(v))
            });
        worst = worst.max(mx - mn);
    }
    worst.exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critical_orbit::{critical_tables, GammaStrategy};
    use crate::map_kernel::MapSpec;
    use std::sync::OnceLock;

    pub(crate) fn full_config() -> &'static (MapSpec, BindingConfig) {
        static CFG: OnceLock<(MapSpec, BindingConfig)> = OnceLock::new();
        CFG.get_or_init(|| {
            let m = MapSpec::logistic(4.0).unwrap();
            let tables = critical_tables(&m, 2000, &GammaStrategy::Equalizing).unwrap();
            let cfg = fix_delta(&m, &tables, &DeltaOptions::default()).unwrap();
            (m, cfg)
        })
    }

    #[test]
    fn outside_delta_binds_zero() {
        let (m, cfg) = full_config();
        assert_eq!(binding_period(m, 0.1, cfg).p, 0);
        assert_eq!(binding_period(m, 0.5 + cfg.delta, cfg).p, 0);
    }

    #[test]
    fn critical_point_hits_cap() {
        let (m, cfg) = full_config();
        let b = binding_period(m, 0.5, cfg);
        assert!(b.cap_hit);
        assert_eq!(b.p, cfg.p_max.min(cfg.tracks[0].tolerance.len()));
    }

    #[test]
    fn binding_grows_toward_c() {
        let (m, cfg) = full_config();
        let mut last = 0;
        for j in 0..=600 {
            let h = cfg.delta * 0.999 * 10f64.powf(-j as f64 / 100.0);
            let p = binding_period(m, 0.5 + h, cfg).p;
            assert!(p >= last, "h = {h}: {p} < {last}");
            last = p;
        }
        assert!(last > cfg.p_delta);
    }

    #[test]
    fn full_map_delta() {
        let (_, cfg) = full_config();
        assert!(cfg.delta > 0.0 && cfg.delta <= 0.05);
        assert!(cfg.p_delta >= 1);
        assert!(cfg.kappa > KAPPA_MIN && cfg.kappa <= 1.0);
        assert!(cfg.selection_sums.iter().all(|&s| s <= 1.0));
        assert!(cfg.epsilon < cfg.delta_prime && cfg.delta_prime <= cfg.delta);
        assert!(cfg.rho <= RHO_TARGET);
    }

    #[test]
    fn quadratic_tau_is_one() {
        let m = MapSpec::logistic(4.0).unwrap();
        let tau = estimate_tau(&m, 100_000);
        assert!((tau - 1.0).abs() < 1e-9, "{tau}");
    }

    #[test]
    fn full_map_delta_prime_oracle() {
        // f(c - d, c) = (1 - 4 d^2, 1) is the shortest image
        let m = MapSpec::logistic(4.0).unwrap();
        let d = 0.025;
        assert!((delta_prime(&m, &[0.5], d, 1000) - 4.0 * d * d).abs() < 1e-12);
    }

    #[test]
    fn kappa_is_empty_product_inside() {
        let m = MapSpec::logistic(4.0).unwrap();
        let k = estimate_bbc_kappa(&m, &[0.5], 0.6, 100);
        assert_eq!(k.kappa, 1.0);
        assert_eq!(k.skipped, 0);
    }

    #[test]
    fn attracting_point_rejected() {
        // a = 2.8 has an attracting fixed point at 9/14
        let m = MapSpec::logistic(2.8).unwrap();
        let tables = critical_tables(&m, 2000, &GammaStrategy::Equalizing).unwrap();
        let r = fix_delta(&m, &tables, &DeltaOptions::default());
        assert!(
            matches!(r, Err(Error::NoValidDelta { .. })),
            "{:?}",
            r.map(|c| c.delta)
        );
    }

    #[test]
    fn neutral_point_rejected() {
        let m = MapSpec::logistic(3.0).unwrap();
        let tables = critical_tables(&m, 2000, &GammaStrategy::Equalizing).unwrap();
        let r = fix_delta(&m, &tables, &DeltaOptions::default());
        assert!(
            matches!(r, Err(Error::NoValidDelta { .. })),
            "{:?}",
            r.map(|c| c.delta)
        );
    }

    #[test]
    fn outside_expansion_full_map() {
        let (m, cfg) = full_config();
        let e = estimate_outside_expansion(m, cfg, 4000).unwrap();
        assert!(e.lambda > 0.0 && e.lambda <= 4f64.ln() + 1e-9, "{e:?}");
    }

    #[test]
    fn outside_expansion_attractor() {
        let m = MapSpec::logistic(2.8).unwrap();
        let cfg = BindingConfig {
            delta: 0.01,
            ..full_config().1.clone()
        };
        assert!(matches!(
            estimate_outside_expansion(&m, &cfg, 4000),
            Err(Error::NonHyperbolicSample { .. })
        ));
    }

    #[test]
    fn binding_distortion_within_gamma() {
        let (m, cfg) = full_config();
        assert_eq!(binding_distortion(m, 0.1, cfg), 1.0);
        for j in 1..200 {
            let x = 0.5 + cfg.delta * (j as f64 / 200.0).powi(6);
            let d = binding_distortion(m, x, cfg);
            assert!(
                d >= 1.0 && d <= cfg.big_gamma * 1.05,
                "{x}: {d} vs {}",
                cfg.big_gamma
            );
        }
    }
}
