//! The full-return Markov map `f^R` on a critical neighbourhood `Omega_0`.
//!
//! Preimages of the critical point up to depth `t0` are dense enough that
//! every large-scale image contains one, together with the component
//! `omega_x` of `f^{-t}(Omega_0)` around it. The large-scale construction
//! started on `Omega_0` cuts out the part of each large-scale piece that
//! lands on such an `omega_x`; the flanks start over.

use rayon::prelude::*;
use serde::Serialize;
use twofloat::TwoFloat;

use crate::error::{Error, Result};
use crate::inducing::engine::{Engine, Event, Mode, Target, Targets, UnresolvedReason};
use crate::inducing::large_scale::{log_deriv_dd, TailStats};
use crate::inducing::{BindingConfig, Dd, LevelSets, Unresolved};
use crate::map_kernel::{branch_preimage, branches, image_hull, IntervalMap};
use crate::stats::{kahan_sum, low_discrepancy, low_discrepancy_2d};

/// Deepest preimage level searched for `t0`.
pub const MAX_T0: usize = 30;
const MAX_PREIMAGES: usize = 1 << 21;
/// Pieces processed before the open ones are censored. Every flank restarts
/// a chain, so the piece count grows geometrically with chain depth.
pub const RETURN_PIECE_BUDGET: usize = 400_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum Renormalization {
    NoneFound,
    Renormalizable { period: usize },
}

/// Follows the hull of a small neighbourhood of each critical point and
/// looks for a cycle of 2 to 64 disjoint intervals carrying it.
pub fn renormalization_test<M: IntervalMap + ?Sized>(m: &M, horizon: usize) -> Renormalization {
    const ETA: f64 = 1e-6;
    const TAIL: usize = 128;
    let (dlo, dhi) = m.domain();
    for &c in m.critical_points() {
        let (mut u, mut v) = ((c - ETA).max(dlo), (c + ETA).min(dhi));
        let mut last = Vec::with_capacity(TAIL);
        for n in 0..horizon.max(TAIL) {
            (u, v) = image_hull(m, u, v);
            if n + TAIL >= horizon.max(TAIL) {
                last.push((u, v));
            }
        }
        last.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut comps: Vec<(f64, f64)> = Vec::new();
        for (a, b) in last {
            match comps.last_mut() {
                // rounding makes a periodic orbit jitter in the last bits
                Some(cur) if a <= cur.1 + 1e-9 => cur.1 = cur.1.max(b),
                _ => comps.push((a, b)),
            }
        }
        let k = comps.len();
        if !(2..=64).contains(&k) {
            continue;
        }
        // the hull map must permute the components in one cycle
        let target = |i: usize| -> Option<usize> {
            let (a, b) = image_hull(m, comps[i].0, comps[i].1);
            comps
                .iter()
                .position(|&(p, q)| a >= p - 1e-9 && b <= q + 1e-9)
        };
        let mut i = 0;
        let mut steps = 0;
        loop {
            match target(i) {
                Some(j) => {
                    i = j;
                    steps += 1;
                }
                None => break,
            }
            if i == 0 || steps > k {
                break;
            }
        }
        if i == 0 && steps == k {
            return Renormalization::Renormalizable { period: k };
        }
    }
    Renormalization::NoneFound
}

/// `Omega_0`, the preimage depth `t0` and the preimage set.
#[derive(Debug, Clone, Serialize)]
pub struct Omega0Choice {
    pub critical: usize,
    pub omega0: (f64, f64),
    pub radius: f64,
    pub t0: usize,
    pub support: (f64, f64),
    /// `(x, t)` with `f^t(x) = c`, sorted by `x`.
    pub preimages: Vec<(f64, usize)>,
    /// `omega_x` per preimage, in the same order.
    pub omegas: Vec<(Dd, Dd)>,
    pub delta_prime: f64,
}

impl Omega0Choice {
    pub fn length(&self) -> f64 {
        self.omega0.1 - self.omega0.0
    }

    pub(crate) fn targets(&self) -> Targets {
        Targets {
            list: self
                .preimages
                .iter()
                .zip(&self.omegas)
                .map(|(&(x, t), &(lo, hi))| Target {
                    x,
                    t,
                    lo: lo.into(),
                    hi: hi.into(),
                })
                .collect(),
            delta_prime: self.delta_prime,
        }
    }
}

/// Hull of the critical values and their images.
pub fn support<M: IntervalMap + ?Sized>(m: &M) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &c in m.critical_points() {
        let v1 = m.eval(c);
        let v2 = m.eval(v1);
        lo = lo.min(v1).min(v2);
        hi = hi.max(v1).max(v2);
    }
    (lo, hi)
}

/// Whether every length-`delta'` window of `[lo, hi]` has a point of `xs`
/// (sorted) in its middle fifth.
fn covers_net(xs: &[f64], support: (f64, f64), delta_prime: f64) -> bool {
    let fifth = delta_prime / 5.0;
    let inside: Vec<f64> = xs
        .iter()
        .copied()
        .filter(|&x| x >= support.0 && x <= support.1)
        .collect();
    let (Some(&first), Some(&last)) = (inside.first(), inside.last()) else {
        return false;
    };
    first - support.0 <= 2.0 * fifth
        && support.1 - last <= 2.0 * fifth
        && inside.windows(2).all(|w| w[1] - w[0] <= fifth)
}

fn branch_of<M: IntervalMap + ?Sized>(m: &M, x: f64) -> (f64, f64) {
    branches(m)
        .into_iter()
        .find(|&(a, b)| x >= a && x <= b)
        .unwrap_or_else(|| m.domain())
}

/// Solves `f(z) = y` in double-double on one monotone branch, from an
/// `f64` bisection start.
fn branch_preimage_dd<M: IntervalMap + ?Sized>(
    m: &M,
    branch: (f64, f64),
    y: TwoFloat,
) -> Option<TwoFloat> {
    let z0 = branch_preimage(m, branch, y.hi())?;
    let mut z = TwoFloat::from(z0);
    for _ in 0..4 {
        let d = m.deriv_dd(z);
        if d == 0.0 {
            break;
        }
        z -= (m.eval_dd(z) - y).hi() / d;
    }
    Some(z)
}

/// Pulls `Omega_0 = (c - r, c + r)` back along the orbit of `x` to the
/// component containing `x`; `None` if some step leaves a branch image.
fn pullback_f64<M: IntervalMap + ?Sized>(
    m: &M,
    x: f64,
    t: usize,
    c: f64,
    r: f64,
) -> Option<(f64, f64)> {
    let mut orbit = vec![x];
    for _ in 0..t {
        orbit.push(m.eval(*orbit.last().unwrap()));
    }
    let (mut lo, mut hi) = (c - r, c + r);
    for j in (0..t).rev() {
        let br = branch_of(m, orbit[j]);
        let a = branch_preimage(m, br, lo)?;
        let b = branch_preimage(m, br, hi)?;
        (lo, hi) = (a.min(b), a.max(b));
    }
    Some((lo, hi))
}

fn pullback_dd<M: IntervalMap + ?Sized>(
    m: &M,
    x: f64,
    t: usize,
    c: f64,
    r: f64,
) -> Option<(TwoFloat, TwoFloat)> {
    let mut orbit = vec![x];
    for _ in 0..t {
        orbit.push(m.eval(*orbit.last().unwrap()));
    }
    let (mut lo, mut hi) = (TwoFloat::from(c) - r, TwoFloat::from(c) + r);
    for j in (0..t).rev() {
        let br = branch_of(m, orbit[j]);
        let a = branch_preimage_dd(m, br, lo)?;
        let b = branch_preimage_dd(m, br, hi)?;
        (lo, hi) = if a < b { (a, b) } else { (b, a) };
    }
    Some((lo, hi))
}

/// Finds `t0` and `Omega_0` around critical point `critical`.
pub fn choose_omega0<M: IntervalMap + ?Sized>(
    m: &M,
    critical: usize,
    cfg: &BindingConfig,
) -> Result<Omega0Choice> {
    if let Renormalization::Renormalizable { period } = renormalization_test(m, 2000) {
        return Err(Error::Renormalizable { period });
    }
    let c = m.critical_points()[critical];
    let supp = support(m);
    let dp = cfg.delta_prime;
    let mut all: Vec<(f64, usize)> = vec![(c, 0)];
    let mut frontier = vec![c];
    let mut t0 = None;
    for t in 0..=MAX_T0 {
        if t > 0 {
            let next: Vec<f64> = frontier
                .par_iter()
                .flat_map_iter(|&y| {
                    branches(m)
                        .into_iter()
                        .filter_map(move |br| branch_preimage(m, br, y))
                        .collect::<Vec<_>>()
                })
                .filter(|&x| x >= supp.0 && x <= supp.1)
                .collect();
            all.extend(next.iter().map(|&x| (x, t)));
            frontier = next;
            if all.len() > MAX_PREIMAGES {
                break;
            }
        }
        let mut xs: Vec<f64> = all.iter().map(|p| p.0).collect();
        xs.sort_by(f64::total_cmp);
        if covers_net(&xs, supp, dp) {
            t0 = Some(t);
            break;
        }
    }
    let t0 = t0.ok_or(Error::NoT0 { depth: MAX_T0 })?;
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.dedup_by(|a, b| a.0 == b.0);

    let fits = |r: f64| {
        all.par_iter()
            .all(|&(x, t)| match pullback_f64(m, x, t, c, r) {
                Some((lo, hi)) => hi - lo <= dp / 15.0,
                None => false,
            })
    };
    let mut r = 0.5 * cfg.delta;
    let mut tries = 0;
    while !fits(r) {
        r *= 0.5;
        tries += 1;
        if tries > 60 {
            return Err(Error::NoT0 { depth: t0 });
        }
    }
    let omegas: Option<Vec<(Dd, Dd)>> = all
        .par_iter()
        .map(|&(x, t)| pullback_dd(m, x, t, c, r).map(|(a, b)| (a.into(), b.into())))
        .collect();
    let omegas = omegas.ok_or(Error::NoT0 { depth: t0 })?;
    Ok(Omega0Choice {
        critical,
        omega0: (c - r, c + r),
        radius: r,
        t0,
        support: supp,
        preimages: all,
        omegas,
        delta_prime: dp,
    })
}

/// One element of the partition `Q` of `Omega_0`.
#[derive(Debug, Clone, Serialize)]
pub struct QPiece {
    pub lo: Dd,
    pub hi: Dd,
    pub length: f64,
    pub r: usize,
    pub t: usize,
    /// Large-scale times `p_1 < ... < p_s` before the return.
    pub chain: Vec<usize>,
    /// Whether `f^R` preserves orientation.
    pub increasing: bool,
}

impl QPiece {
    pub fn s(&self) -> usize {
        self.chain.len()
    }

    pub fn contains(&self, x: TwoFloat) -> bool {
        x >= TwoFloat::from(self.lo) && x < TwoFloat::from(self.hi)
    }
}

/// Per chain depth: mass that started a chain there, the large-scale
/// events reached from it, and the mass censored before any.
#[derive(Debug, Clone, Default, Serialize)]
pub struct DepthRecord {
    pub start_mass: f64,
    /// `(steps since chain start, middle mass, returned mass)`.
    pub large_scale: Vec<(usize, f64, f64)>,
    /// `(steps since chain start, mass)` of pieces left unresolved before
    /// reaching large scale.
    pub censored: Vec<(usize, f64)>,
}

impl DepthRecord {
    /// Fraction of the large-scale mass that returned at this depth.
    pub fn xi(&self) -> Option<f64> {
        let mid = kahan_sum(self.large_scale.iter().map(|e| e.1));
        (mid > 0.0).then(|| kahan_sum(self.large_scale.iter().map(|e| e.2)) / mid)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReturnMapQ {
    pub omega0: (Dd, Dd),
    pub t0: usize,
    pub n_max: usize,
    pub pieces: Vec<QPiece>,
    pub unresolved: Vec<Unresolved>,
    pub unresolved_mass: f64,
    pub depths: Vec<DepthRecord>,
}

impl ReturnMapQ {
    pub fn omega0_length(&self) -> f64 {
        (TwoFloat::from(self.omega0.1) - TwoFloat::from(self.omega0.0)).hi()
    }

    pub fn resolved_mass(&self) -> f64 {
        kahan_sum(self.pieces.iter().map(|p| p.length))
    }

    /// Piece containing `x`, by binary search.
    pub fn locate(&self, x: TwoFloat) -> Option<usize> {
        let i = self.pieces.partition_point(|p| TwoFloat::from(p.lo) <= x);
        let i = i.checked_sub(1)?;
        self.pieces[i].contains(x).then_some(i)
    }
}

pub fn build_return_map<M: IntervalMap + ?Sized>(
    m: &M,
    cfg: &BindingConfig,
    levels: &LevelSets,
    choice: &Omega0Choice,
    n_max: usize,
) -> Result<ReturnMapQ> {
    build_return_map_with_budget(m, cfg, levels, choice, n_max, RETURN_PIECE_BUDGET)
}

pub fn build_return_map_with_budget<M: IntervalMap + ?Sized>(
    m: &M,
    cfg: &BindingConfig,
    levels: &LevelSets,
    choice: &Omega0Choice,
    n_max: usize,
    budget: usize,
) -> Result<ReturnMapQ> {
    if n_max == 0 {
        return Err(Error::Precondition("n_max must be at least 1".into()));
    }
    let targets = choice.targets();
    let engine = Engine {
        m,
        cfg,
        levels,
        n_max,
        mode: Mode::Return(&targets),
        budget,
    };
    let lo = TwoFloat::from(choice.omega0.0);
    let hi = TwoFloat::from(choice.omega0.1);
    let out = engine.run(lo, hi);
    let mut depths: Vec<DepthRecord> = Vec::new();
    for e in &out.events {
        let d = match *e {
            Event::ChainStart { depth, .. } | Event::LargeScale { depth, .. } => depth,
        };
        if depths.len() <= d {
            depths.resize_with(d + 1, DepthRecord::default);
        }
        match *e {
            Event::ChainStart { depth, mass } => depths[depth].start_mass += mass,
            Event::LargeScale {
                depth,
                rel,
                middle,
                returned,
            } => depths[depth].large_scale.push((rel, middle, returned)),
        }
    }
    for u in &out.unresolved {
        // these two already reached large scale and sit inside an event
        if matches!(
            u.reason,
            UnresolvedReason::NoTarget | UnresolvedReason::ReturnFloor
        ) {
            continue;
        }
        if depths.len() <= u.depth {
            depths.resize_with(u.depth + 1, DepthRecord::default);
        }
        depths[u.depth]
            .censored
            .push((u.time - u.chain_start, u.length));
    }
    for d in &mut depths {
        d.censored
            .sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        d.large_scale.sort_by(|a, b| {
            a.0.cmp(&b.0)
                .then(a.1.total_cmp(&b.1))
                .then(a.2.total_cmp(&b.2))
        });
    }
    let pieces = out
        .returned
        .into_iter()
        .map(|r| QPiece {
            lo: r.a.into(),
            hi: r.b.into(),
            length: (r.b - r.a).hi(),
            r: r.r,
            t: r.t,
            chain: r.chain,
            increasing: r.increasing,
        })
        .collect();
    let unresolved_mass = kahan_sum(out.unresolved.iter().map(|u| u.length));
    Ok(ReturnMapQ {
        omega0: (lo.into(), hi.into()),
        t0: choice.t0,
        n_max,
        pieces,
        unresolved: out.unresolved,
        unresolved_mass,
        depths,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MarkovReport {
    /// Largest endpoint miss relative to `|Omega_0|`.
    pub max_mismatch: f64,
    /// Pieces missing by more than `1e-8 |Omega_0|`.
    pub flagged: Vec<usize>,
    /// Pieces whose `R` differs from the last chain time plus `t`.
    pub additivity_failures: usize,
}

/// Iterates both endpoints of every piece `R` times in double-double and
/// compares with the endpoints of `Omega_0`.
pub fn verify_markov<M: IntervalMap + ?Sized>(m: &M, q: &ReturnMapQ) -> MarkovReport {
    let (o_lo, o_hi): (TwoFloat, TwoFloat) = (q.omega0.0.into(), q.omega0.1.into());
    let len = q.omega0_length();
    let misses: Vec<f64> = q
        .pieces
        .par_iter()
        .map(|p| {
            let img = |z: TwoFloat| {
                let mut y = z;
                for _ in 0..p.r {
                    y = m.eval_dd(y);
                }
                y
            };
            let (a, b) = (img(p.lo.into()), img(p.hi.into()));
            let (ea, eb) = if p.increasing {
                (o_lo, o_hi)
            } else {
                (o_hi, o_lo)
            };
            (a - ea).hi().abs().max((b - eb).hi().abs()) / len
        })
        .collect();
    MarkovReport {
        max_mismatch: misses.iter().cloned().fold(0.0, f64::max),
        flagged: misses
            .iter()
            .enumerate()
            .filter(|(_, &v)| !(v <= 1e-8))
            .map(|(i, _)| i)
            .collect(),
        additivity_failures: q
            .pieces
            .iter()
            .filter(|p| p.chain.last().map(|&l| l + p.t) != Some(p.r))
            .count(),
    }
}

/// `m_n = |{R > n}| / |Omega_0|`, unresolved mass counted as `R > n_max`.
pub fn tail_of_r(q: &ReturnMapQ) -> TailStats {
    let times: Vec<(usize, f64)> = q.pieces.iter().map(|p| (p.r, p.length)).collect();
    TailStats::from_times(&times, q.omega0_length(), q.unresolved_mass, q.n_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Separation {
    pub s: usize,
    /// The pair was still together at the horizon.
    pub capped: bool,
    /// An iterate fell outside every piece.
    pub escaped: bool,
}

/// `f^R(x)` for `x` in piece `i`.
fn induced<M: IntervalMap + ?Sized>(m: &M, q: &ReturnMapQ, i: usize, x: TwoFloat) -> TwoFloat {
    let mut y = x;
    for _ in 0..q.pieces[i].r {
        y = m.eval_dd(y);
    }
    y
}

pub fn separation_time<M: IntervalMap + ?Sized>(
    m: &M,
    q: &ReturnMapQ,
    x: TwoFloat,
    y: TwoFloat,
    horizon: usize,
) -> Separation {
    if x == y {
        return Separation {
            s: horizon,
            capped: true,
            escaped: false,
        };
    }
    let (mut x, mut y) = (x, y);
    for n in 0..horizon {
        let (Some(i), Some(j)) = (q.locate(x), q.locate(y)) else {
            return Separation {
                s: n,
                capped: false,
                escaped: true,
            };
        };
        if i != j {
            return Separation {
                s: n,
                capped: false,
                escaped: false,
            };
        }
        x = induced(m, q, i, x);
        y = induced(m, q, i, y);
    }
    Separation {
        s: horizon,
        capped: true,
        escaped: false,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HolderReport {
    pub c: f64,
    pub beta: f64,
    /// Iterate count `N` with `|(f_hat^N)'| >= 2` on every sampled point.
    pub expansion_iterate: usize,
    pub checked: usize,
    pub violations: usize,
    /// Pairs whose orbit left the resolved pieces, or stayed together to the
    /// horizon, before separating. Their `s` is a lower bound, which only
    /// loosens the envelope: a violation is still a violation.
    pub censored: usize,
    pub slack: f64,
}

impl HolderReport {
    pub fn violation_rate(&self) -> f64 {
        if self.checked == 0 {
            0.0
        } else {
            self.violations as f64 / self.checked as f64
        }
    }
}

/// Fits `|f_hat'(x) / f_hat'(y) - 1| <= C beta^{s(x, y)}` on half of the
/// sampled pairs (`C` is the smallest envelope constant there) and counts
/// violations at slack `slack` on the other half.
pub fn check_holder_distortion<M: IntervalMap + ?Sized>(
    m: &M,
    q: &ReturnMapQ,
    pairs: usize,
    slack: f64,
) -> Result<HolderReport> {
    if q.pieces.is_empty() {
        return Err(Error::Precondition(
            "the return map has no resolved pieces".into(),
        ));
    }
    // pieces drawn proportionally to length
    let mut cum = Vec::with_capacity(q.pieces.len());
    let mut acc = 0.0;
    for p in &q.pieces {
        acc += p.length;
        cum.push(acc);
    }
    let pick = |u: f64| {
        cum.partition_point(|&v| v < u * acc)
            .min(q.pieces.len() - 1)
    };
    let pts: Vec<(f64, f64)> = low_discrepancy_2d(pairs).collect();
    let us: Vec<f64> = low_discrepancy(0.0, 1.0, pairs).collect();
    let horizon = 12;
    let samples: Vec<(f64, usize, bool)> = pts
        .par_iter()
        .zip(us.par_iter())
        .map(|(&(v, w), &u)| {
            let i = pick(u);
            let p = &q.pieces[i];
            let (a, b): (TwoFloat, TwoFloat) = (p.lo.into(), p.hi.into());
            let len = b - a;
            let x = a + len * (0.05 + 0.9 * v);
            // offsets spread over twelve decades of the piece length
            let off = 10f64.powf(-12.0 * w) * 0.04;
            let y = x + len * off;
            let lx = log_deriv_dd(m, x, p.r);
            let ly = log_deriv_dd(m, y, p.r);
            let sep = separation_time(m, q, x, y, horizon);
            ((lx - ly).exp_m1().abs(), sep.s, sep.escaped || sep.capped)
        })
        .collect();
    let n_iter = expansion_iterate(m, q, 200);
    let beta = 2f64.powf(-1.0 / n_iter as f64);
    let c = samples
        .iter()
        .step_by(2)
        .map(|&(lhs, s, _)| lhs / beta.powi(s as i32))
        .fold(0.0, f64::max);
    let test: Vec<&(f64, usize, bool)> = samples.iter().skip(1).step_by(2).collect();
    let violations = test
        .iter()
        .filter(|&&&(lhs, s, _)| lhs > slack * c * beta.powi(s as i32))
        .count();
    let censored = test.iter().filter(|t| t.2).count();
    Ok(HolderReport {
        c,
        beta,
        expansion_iterate: n_iter,
        checked: test.len(),
        violations,
        censored,
        slack,
    })
}

/// Smallest `N` with `|(f_hat^N)'| >= 2` on all sampled points.
fn expansion_iterate<M: IntervalMap + ?Sized>(m: &M, q: &ReturnMapQ, samples: usize) -> usize {
    let (a, b): (TwoFloat, TwoFloat) = (q.omega0.0.into(), q.omega0.1.into());
    let starts: Vec<TwoFloat> = low_discrepancy(0.0, 1.0, samples)
        .map(|u| a + (b - a) * u)
        .collect();
    for n in 1..=8 {
        let ok = starts.par_iter().all(|&x0| {
            let mut x = x0;
            let mut acc = 0.0;
            for _ in 0..n {
                let Some(i) = q.locate(x) else {
                    return true;
                };
                acc += log_deriv_dd(m, x, q.pieces[i].r);
                x = induced(m, q, i, x);
            }
            acc >= 2f64.ln()
        });
        if ok {
            return n;
        }
    }
    8
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionalTailReport {
    /// Per depth: largest `observed / ((3K / delta') m_k)` over `k`.
    pub worst_ratio: Vec<f64>,
    pub slack: f64,
}

impl ConditionalTailReport {
    pub fn holds(&self, depths: usize) -> bool {
        self.worst_ratio
            .iter()
            .take(depths + 1)
            .all(|&r| r <= self.slack)
    }
}

/// Compares the conditional tail of the next large-scale time at each
/// chain depth with `(3K / delta') m_k`.
///
/// The conditional tail is the Kaplan-Meier product over the depth's
/// large-scale events, with unresolved pieces as right-censored at the
/// step they were abandoned. Lags past the last mass at risk are skipped.
pub fn conditional_tail_check(
    q: &ReturnMapQ,
    phat_tail: &TailStats,
    k_const: f64,
    delta_prime: f64,
    slack: f64,
) -> ConditionalTailReport {
    let factor = 3.0 * k_const / delta_prime;
    let kmax = phat_tail.fit_end.max(1).min(phat_tail.n_max);
    let worst_ratio = q
        .depths
        .iter()
        .take(6)
        .map(|d| {
            let survival = kaplan_meier(d, kmax);
            (0..=kmax)
                .filter_map(|k| {
                    let bound = factor * phat_tail.tail[k];
                    survival[k].filter(|_| bound > 0.0).map(|s| s / bound)
                })
                .fold(0.0, f64::max)
        })
        .collect();
    ConditionalTailReport { worst_ratio, slack }
}

/// `P(next large-scale lag > k)` for `k = 0..=kmax`; `None` once no mass
/// remains at risk.
fn kaplan_meier(d: &DepthRecord, kmax: usize) -> Vec<Option<f64>> {
    let mut out = Vec::with_capacity(kmax + 1);
    let (mut ev, mut ce) = (
        d.large_scale.iter().peekable(),
        d.censored.iter().peekable(),
    );
    let mut at_risk = d.start_mass;
    let mut surv = 1.0;
    for k in 0..=kmax {
        // censoring at lag c means the lag exceeds c, so it leaves after k = c
        let mut events = 0.0;
        while let Some(e) = ev.next_if(|e| e.0 <= k) {
            events += e.1;
        }
        if at_risk <= 0.0 {
            out.push(None);
            continue;
        }
        surv *= (1.0 - events / at_risk).max(0.0);
        out.push(Some(surv));
        at_risk -= events;
        while let Some(c) = ce.next_if(|c| c.0 <= k) {
            at_risk -= c.1;
        }
        // rounding in the mass bookkeeping
        if at_risk <= 1e-12 * d.start_mass {
            at_risk = 0.0;
        }
    }
    out
}
