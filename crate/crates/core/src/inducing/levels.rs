//! Level sets `I_p` of the binding period inside `Delta`.
//!
//! On each side of a critical point the binding period is nonincreasing in
//! the distance `h` to `c`, so `I_p` on that side is the shell
//! `h_{p+1} < h <= h_p` with `h_p = sup { h : p(c + s h) >= p }`. A shell
//! boundary belongs to the deeper level. Distances at or below `H_FLOOR`
//! form the cap region, which the construction does not resolve.

use serde::Serialize;
use twofloat::TwoFloat;

use super::BindingConfig;
use crate::map_kernel::IntervalMap;

/// Smallest resolved distance to a critical point.
pub const H_FLOOR: f64 = 1e-18;
const VERIFY_SAMPLES: usize = 1000;
const SWEEP_SAMPLES: usize = 20_000;

#[derive(Debug, Clone, Serialize)]
pub struct SideLevels {
    /// `-1` for the left side, `+1` for the right.
    pub sign: f64,
    /// Level at the boundary of `Delta`.
    pub p_first: usize,
    /// `bounds[j] = h_{p_first + j}`, decreasing; `bounds[0] = delta`.
    pub bounds: Vec<f64>,
    /// Distances where the sampled binding period disagreed with the
    /// bisected levels.
    pub breaches: Vec<f64>,
}

impl SideLevels {
    pub fn p_last(&self) -> usize {
        self.p_first + self.bounds.len() - 1
    }

    /// Level of distance `h`, or `None` in the cap region.
    pub fn level_at(&self, h: f64) -> Option<usize> {
        if h <= H_FLOOR {
            return None;
        }
        let count = self.bounds.partition_point(|&b| b >= h);
        Some(self.p_first + count.max(1) - 1)
    }

    /// Distance range `(inner, outer]` of level `p`.
    pub fn shell(&self, p: usize) -> Option<(f64, f64)> {
        if p < self.p_first || p > self.p_last() {
            return None;
        }
        let j = p - self.p_first;
        let inner = self.bounds.get(j + 1).copied().unwrap_or(H_FLOOR);
        Some((inner, self.bounds[j]))
    }
}

/// Where a point of the domain sits relative to `Delta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Zone {
    Outside,
    Level { critical: usize, p: usize },
    Cap { critical: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelSets {
    pub delta: f64,
    pub critical_points: Vec<f64>,
    /// `[left, right]` per critical point.
    pub sides: Vec<[SideLevels; 2]>,
    /// Per critical point, `(p, F'_p)`: the smallest sampled `|(f^p)'|` on
    /// the nonempty components of `I_p`.
    pub f_prime: Vec<Vec<(usize, f64)>>,
    /// `min_p F'_p b_p`, the constant of the lower bound
    /// `F'_p >= C_0 (gamma_p^{l-1} D_p)^{1/l}`.
    pub c0: f64,
}

impl LevelSets {
    pub fn breaches(&self) -> usize {
        self.sides.iter().flatten().map(|s| s.breaches.len()).sum()
    }

    pub fn classify(&self, y: TwoFloat) -> Zone {
        for (i, &c) in self.critical_points.iter().enumerate() {
            let d = (y - c).hi();
            if d.abs() < self.delta {
                let side = &self.sides[i][usize::from(d > 0.0)];
                return match side.level_at(d.abs()) {
                    Some(p) => Zone::Level { critical: i, p },
                    None => Zone::Cap { critical: i },
                };
            }
        }
        Zone::Outside
    }

    /// Every level boundary strictly inside `(lo, hi)`, sorted.
    pub fn cuts_within(&self, lo: TwoFloat, hi: TwoFloat) -> Vec<TwoFloat> {
        let mut cuts = Vec::new();
        for (i, &c) in self.critical_points.iter().enumerate() {
            if hi.hi() <= c - self.delta || lo.hi() >= c + self.delta {
                continue;
            }
            let cc = TwoFloat::from(c);
            let mut push = |y: TwoFloat| {
                if y > lo && y < hi {
                    cuts.push(y);
                }
            };
            push(cc);
            for side in &self.sides[i] {
                for &h in side.bounds.iter().chain(std::iter::once(&H_FLOOR)) {
                    push(cc + side.sign * h);
                }
            }
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup();
        cuts
    }

    /// `F'_p` for critical point `i`, if `I_p` is nonempty there.
    pub fn f_prime_of(&self, i: usize, p: usize) -> Option<f64> {
        self.f_prime[i]
            .iter()
            .find(|(q, _)| *q == p)
            .map(|(_, v)| *v)
    }
}

fn bisect_levels<M: IntervalMap + ?Sized>(
    m: &M,
    cfg: &BindingConfig,
    i: usize,
    sign: f64,
) -> (usize, Vec<f64>) {
    let track = &cfg.tracks[i];
    let p_of = |h: f64| track.binding_offset(m, sign * h, cfg.p_max).0;
    let p_first = p_of(cfg.delta * (1.0 - 1e-12));
    let p_floor = p_of(H_FLOOR).max(p_first);
    let mut bounds = vec![cfg.delta];
    for p in p_first + 1..=p_floor {
        let prev = *bounds.last().unwrap();
        if p_of(prev) >= p {
            bounds.push(prev);
            continue;
        }
        let (mut lo, mut hi) = (H_FLOOR.ln(), prev.ln());
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if p_of(mid.exp()) >= p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        bounds.push(lo.exp());
    }
    (p_first, bounds)
}

fn sweep_levels<M: IntervalMap + ?Sized>(
    m: &M,
    cfg: &BindingConfig,
    i: usize,
    sign: f64,
) -> (usize, Vec<f64>) {
    let track = &cfg.tracks[i];
    let (a, b) = (cfg.delta.ln(), H_FLOOR.ln());
    let mut run = 0;
    let mut bounds = vec![cfg.delta];
    let mut p_first = None;
    for k in 0..SWEEP_SAMPLES {
        let h = (a + (b - a) * k as f64 / (SWEEP_SAMPLES - 1) as f64).exp()
            * if k == 0 { 1.0 - 1e-12 } else { 1.0 };
        let p = track.binding_offset(m, sign * h, cfg.p_max).0;
        let first = *p_first.get_or_insert(p);
        run = run.max(p);
        while first + bounds.len() - 1 < run {
            bounds.push(h);
        }
    }
    (p_first.unwrap_or(0), bounds)
}

fn build_side<M: IntervalMap + ?Sized>(
    m: &M,
    cfg: &BindingConfig,
    i: usize,
    sign: f64,
) -> SideLevels {
    let (p_first, bounds) = bisect_levels(m, cfg, i, sign);
    let mut side = SideLevels {
        sign,
        p_first,
        bounds,
        breaches: Vec::new(),
    };
    let track = &cfg.tracks[i];
    let (a, b) = (cfg.delta.ln(), H_FLOOR.ln());
    for k in 1..VERIFY_SAMPLES {
        let h = (a + (b - a) * k as f64 / VERIFY_SAMPLES as f64).exp();
        let p = track.binding_offset(m, sign * h, cfg.p_max).0;
        if side.level_at(h) != Some(p) {
            side.breaches.push(h);
        }
    }
    if !side.breaches.is_empty() {
        log::warn!(
            "binding period is not monotone near c = {} (side {sign}); {} breaches, first at distance {:e}; falling back to a sweep",
            track.c,
            side.breaches.len(),
            side.breaches[0]
        );
        let (p_first, bounds) = sweep_levels(m, cfg, i, sign);
        side.p_first = p_first;
        side.bounds = bounds;
    }
    side
}

pub fn build_level_sets<M: IntervalMap + ?Sized>(m: &M, cfg: &BindingConfig) -> LevelSets {
    let (lo, hi) = m.domain();
    let mut sides = Vec::new();
    let mut f_prime = Vec::new();
    let mut c0 = f64::INFINITY;
    for (i, track) in cfg.tracks.iter().enumerate() {
        let pair = [build_side(m, cfg, i, -1.0), build_side(m, cfg, i, 1.0)];
        let mut per_p: Vec<(usize, f64)> = Vec::new();
        for side in &pair {
            // a side cut off by the domain boundary has no points
            let edge = track.c + side.sign * H_FLOOR;
            if edge <= lo || edge >= hi {
                continue;
            }
            for p in side.p_first..=side.p_last() {
                let (inner, outer) = side.shell(p).unwrap();
                if inner >= outer {
                    continue;
                }
                let lim = if side.sign < 0.0 {
                    track.c - lo
                } else {
                    hi - track.c
                };
                let outer = outer.min(lim);
                let v = [inner, 0.5 * (inner + outer), outer]
                    .iter()
                    .map(|&h| track.log_deriv_offset(m, side.sign * h, p))
                    .fold(f64::INFINITY, f64::min)
                    .exp();
                match per_p.iter_mut().find(|(q, _)| *q == p) {
                    Some(e) => e.1 = e.1.min(v),
                    None => per_p.push((p, v)),
                }
            }
        }
        per_p.sort_by_key(|e| e.0);
        for &(p, v) in &per_p {
            if p >= 1 && p <= track.log_b.len() {
                c0 = c0.min(v * track.log_b[p - 1].exp());
            }
        }
        sides.push(pair);
        f_prime.push(per_p);
    }
    LevelSets {
        delta: cfg.delta,
        critical_points: cfg.critical_points(),
        sides,
        f_prime,
        c0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inducing::tests::full_config;
    use crate::inducing::{binding_period, fix_delta, DeltaOptions};

    #[test]
    fn levels_nest_toward_c() {
        let (m, cfg) = full_config();
        let ls = build_level_sets(m, cfg);
        assert_eq!(ls.breaches(), 0);
        for side in &ls.sides[0] {
            assert_eq!(side.bounds[0], cfg.delta);
            assert!(side.bounds.windows(2).all(|w| w[1] <= w[0]));
            assert!(side.p_first >= cfg.p_delta);
        }
        // shells tile (H_FLOOR, delta) on each side
        let side = &ls.sides[0][1];
        let total: f64 = (side.p_first..=side.p_last())
            .map(|p| side.shell(p).map(|(a, b)| b - a).unwrap())
            .sum();
        assert!((total - (cfg.delta - H_FLOOR)).abs() < 1e-9 * cfg.delta);
    }

    #[test]
    fn classify_agrees_with_binding() {
        let (m, cfg) = full_config();
        let ls = build_level_sets(m, cfg);
        for k in 1..500 {
            let x = 0.5 - cfg.delta + 2.0 * cfg.delta * k as f64 / 500.0;
            if x == 0.5 {
                continue;
            }
            match ls.classify(TwoFloat::from(x)) {
                Zone::Level { p, .. } => assert_eq!(p, binding_period(m, x, cfg).p, "x = {x}"),
                z => panic!("{x}: {z:?}"),
            }
        }
        assert_eq!(ls.classify(TwoFloat::from(0.1)), Zone::Outside);
        assert!(matches!(
            ls.classify(TwoFloat::from(0.5) + 1e-19),
            Zone::Cap { .. }
        ));
    }

    #[test]
    fn cuts_are_sorted_and_inside() {
        let (m, cfg) = full_config();
        let ls = build_level_sets(m, cfg);
        let (lo, hi) = (TwoFloat::from(0.49), TwoFloat::from(0.6));
        let cuts = ls.cuts_within(lo, hi);
        assert!(cuts.windows(2).all(|w| w[0] < w[1]));
        assert!(cuts.iter().all(|&y| y > lo && y < hi));
        assert!(cuts.contains(&TwoFloat::from(0.5)));
    }

    #[test]
    fn c0_positive_and_stable() {
        let (m, cfg) = full_config();
        let a = build_level_sets(m, cfg).c0;
        assert!(a > 0.0);
        // halving delta once leaves the constant within 20%
        let tables = crate::critical_orbit::critical_tables(
            m,
            2000,
            &crate::critical_orbit::GammaStrategy::Equalizing,
        )
        .unwrap();
        let opts = DeltaOptions {
            delta0: cfg.delta / 2.0,
            ..DeltaOptions::default()
        };
        let half = fix_delta(m, &tables, &opts).unwrap();
        let b = build_level_sets(m, &half).c0;
        assert!((b / a - 1.0).abs() <= 0.2, "{a} vs {b}");
        for &(p, v) in &build_level_sets(m, cfg).f_prime[0] {
            assert!(v >= a / cfg.tracks[0].log_b[p - 1].exp() * (1.0 - 1e-12));
        }
    }
}
