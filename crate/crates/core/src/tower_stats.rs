//! The tower over the return map, invariant densities, correlations and
//! block-sum statistics.
//!
//! Correlations and the CLT test run on long orbits of `f` itself. The
//! tower is checked structurally: Kac normalization, the tail identity
//! `m_Omega{R_hat > n} = sum_{k >= n} m{R > k}`, and `pi g = f pi`.

use num_bigint::BigUint;
use num_traits::{Float, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use twofloat::TwoFloat;

use crate::decay::{classify_points, DecayClass};
use crate::error::{Error, Result};
use crate::full_return::{support, ReturnMapQ};
use crate::inducing::Dd;
use crate::map_kernel::{IntervalMap, MapSpec};
use crate::stats::{
    kahan_sum, ks_distance_normal, low_discrepancy, low_discrepancy_2d, stream_rng, tree_sum,
    KahanSum,
};

pub const DENSITY_BINS: usize = 4096;
pub const BURN_IN: usize = 1000;
pub const CORRELATION_BATCHES: usize = 50;
/// Censored mass may add at most this fraction to `sum R |omega|`.
pub const KAC_TOLERANCE: f64 = 0.05;
const INVARIANCE_SAMPLES: usize = 10_000_000;

#[derive(Debug, Clone, Serialize)]
pub struct TowerBase {
    pub lo: Dd,
    pub hi: Dd,
    pub length: f64,
    pub r: usize,
}

/// The tower over the resolved part of `Q`. Level `(k, i)` is the floor
/// `pieces[k]` at height `i < R`; its image is `f^i(pieces[k])`, computed on
/// demand by [`TowerModel::level_image`].
#[derive(Debug, Clone, Serialize)]
pub struct TowerModel {
    pub omega0: (Dd, Dd),
    pub pieces: Vec<TowerBase>,
    /// `sum R |omega|` over resolved pieces.
    pub total_mass: f64,
    /// Lower bound on what the censored mass adds to `total_mass`.
    pub censored_correction: f64,
    pub n_max: usize,
}

impl TowerModel {
    pub fn levels(&self) -> usize {
        self.pieces.iter().map(|p| p.r).sum()
    }

    /// Normalized weight of each level of piece `k`.
    pub fn level_weight(&self, k: usize) -> f64 {
        self.pieces[k].length / self.total_mass
    }

    pub fn level_image<M: IntervalMap + ?Sized>(&self, m: &M, k: usize, i: usize) -> (f64, f64) {
        let p = &self.pieces[k];
        let (mut a, mut b): (TwoFloat, TwoFloat) = (p.lo.into(), p.hi.into());
        for _ in 0..i {
            a = m.eval_dd(a);
            b = m.eval_dd(b);
        }
        (a.hi().min(b.hi()), a.hi().max(b.hi()))
    }
}

/// The tower without the Kac check.
pub fn assemble_tower(q: &ReturnMapQ) -> TowerModel {
    let pieces: Vec<TowerBase> = q
        .pieces
        .iter()
        .map(|p| TowerBase {
            lo: p.lo,
            hi: p.hi,
            length: p.length,
            r: p.r,
        })
        .collect();
    let total_mass = kahan_sum(pieces.iter().map(|p| p.r as f64 * p.length));
    TowerModel {
        omega0: q.omega0,
        pieces,
        total_mass,
        censored_correction: q.unresolved_mass * (q.n_max + 1) as f64,
        n_max: q.n_max,
    }
}

pub fn build_tower(q: &ReturnMapQ) -> Result<TowerModel> {
    if q.pieces.is_empty() {
        return Err(Error::Precondition(
            "the return map has no resolved pieces".into(),
        ));
    }
    let t = assemble_tower(q);
    if !(t.censored_correction <= KAC_TOLERANCE * t.total_mass) {
        return Err(Error::KacDivergence {
            correction: t.censored_correction,
            total: t.total_mass,
        });
    }
    Ok(t)
}

/// Exact dyadic sums: every value is `mantissa * 2^exponent` with a shared
/// exponent.
#[derive(Debug, Clone, Serialize)]
pub struct TailIdentity {
    pub exponent: i32,
    /// `m_Omega{R_hat > n}` from the tower levels, `n = 0..=n_max`.
    pub tower_side: Vec<String>,
    /// `sum_{k >= n} m{R > k}` from the base tail.
    pub base_side: Vec<String>,
    pub first_mismatch: Option<usize>,
}

impl TailIdentity {
    pub fn holds(&self) -> bool {
        self.first_mismatch.is_none()
    }
}

fn dyadic(lengths: &[f64]) -> (Vec<BigUint>, i32) {
    let parts: Vec<(u64, i16)> = lengths
        .iter()
        .map(|&l| {
            let (mant, exp, sign) = l.integer_decode();
            assert!(sign > 0 || mant == 0, "negative piece length");
            (mant, exp)
        })
        .collect();
    let e0 = parts
        .iter()
        .filter(|p| p.0 != 0)
        .map(|p| p.1)
        .min()
        .unwrap_or(0);
    let ints = parts
        .iter()
        .map(|&(mant, exp)| {
            if mant == 0 {
                BigUint::zero()
            } else {
                BigUint::from(mant) << (exp - e0) as usize
            }
        })
        .collect();
    (ints, e0 as i32)
}

/// Checks the tower tail identity on the stored piece lengths, exactly.
/// The tower side walks every level `(omega, i)`; the base side sums the
/// tail of `R` twice.
pub fn tower_tail_identity(q: &ReturnMapQ) -> TailIdentity {
    let n_max = q.n_max;
    let lengths: Vec<f64> = q.pieces.iter().map(|p| p.length).collect();
    let (ints, exponent) = dyadic(&lengths);

    let mut by_height = vec![BigUint::zero(); n_max + 2];
    for (p, l) in q.pieces.iter().zip(&ints) {
        for i in 0..p.r {
            let h = (p.r - i).min(n_max + 1);
            by_height[h] += l;
        }
    }
    let mut tower_side = vec![BigUint::zero(); n_max + 1];
    let mut acc = BigUint::zero();
    for n in (0..=n_max).rev() {
        acc += &by_height[n + 1];
        tower_side[n] = acc.clone();
    }

    let r_top = q.pieces.iter().map(|p| p.r).max().unwrap_or(0);
    let mut by_r = vec![BigUint::zero(); r_top + 2];
    for (p, l) in q.pieces.iter().zip(&ints) {
        by_r[p.r] += l;
    }
    // tail[k] = m{R > k}
    let mut tail = vec![BigUint::zero(); r_top + 2];
    let mut acc = BigUint::zero();
    for k in (0..=r_top).rev() {
        acc += &by_r[k + 1];
        tail[k] = acc.clone();
    }
    let mut base_side = vec![BigUint::zero(); n_max + 1];
    let mut acc = BigUint::zero();
    for k in (0..=r_top.max(n_max)).rev() {
        if k <= r_top {
            acc += &tail[k];
        }
        if k <= n_max {
            base_side[k] = acc.clone();
        }
    }
    let first_mismatch = (0..=n_max).find(|&n| tower_side[n] != base_side[n]);
    TailIdentity {
        exponent,
        tower_side: tower_side.iter().map(|v| v.to_str_radix(16)).collect(),
        base_side: base_side.iter().map(|v| v.to_str_radix(16)).collect(),
        first_mismatch,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CommutationReport {
    pub samples: usize,
    /// Largest `|pi(g(x, i)) - f(pi(x, i))|` over sampled climbing steps.
    pub max_defect: f64,
    /// Return steps whose landing point missed `Omega_0` by more than
    /// `1e-8 |Omega_0|`.
    pub missed_base: usize,
}

/// Spot-checks `pi g = f pi` at levels drawn with the tower weights.
pub fn check_commutation<M: IntervalMap + ?Sized>(
    m: &M,
    t: &TowerModel,
    samples: usize,
) -> CommutationReport {
    let mut cum = Vec::with_capacity(t.pieces.len());
    let mut acc = 0.0;
    for p in &t.pieces {
        acc += p.r as f64 * p.length;
        cum.push(acc);
    }
    let (o_lo, o_hi): (TwoFloat, TwoFloat) = (t.omega0.0.into(), t.omega0.1.into());
    let tol = 1e-8 * (o_hi - o_lo).hi();
    let pts: Vec<(f64, f64)> = low_discrepancy_2d(samples).collect();
    let us: Vec<f64> = low_discrepancy(0.0, 1.0, samples).collect();
    let results: Vec<(f64, bool)> = pts
        .par_iter()
        .zip(us.par_iter())
        .map(|(&(v, w), &u)| {
            let k = cum
                .partition_point(|&c| c < u * acc)
                .min(t.pieces.len() - 1);
            let p = &t.pieces[k];
            let i = ((w * p.r as f64) as usize).min(p.r - 1);
            let (a, b): (TwoFloat, TwoFloat) = (p.lo.into(), p.hi.into());
            let x = a + (b - a) * v;
            let mut y = x;
            for _ in 0..i {
                y = m.eval_dd(y);
            }
            // f(pi(x, i))
            let f_pi = m.eval_dd(y);
            if i + 1 < p.r {
                // pi(x, i + 1) from the floor
                let mut z = x;
                for _ in 0..=i {
                    z = m.eval_dd(z);
                }
                ((z - f_pi).hi().abs(), false)
            } else {
                // g returns to the base at f^R(x), which must lie in Omega_0
                let missed = f_pi < o_lo - tol || f_pi > o_hi + tol;
                (0.0, missed)
            }
        })
        .collect();
    CommutationReport {
        samples,
        max_defect: results.iter().map(|r| r.0).fold(0.0, f64::max),
        missed_base: results.iter().filter(|r| r.1).count(),
    }
}

/// Observables, evaluated in the natural coordinate of the map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Observable {
    /// `x`
    Coordinate,
    /// `|x - a|`
    AbsShift {
        a: f64,
    },
    /// `(1 - ((x - c) / w)^2)^2` on `|x - c| < w`, else 0.
    Bump {
        c: f64,
        w: f64,
    },
    Constant {
        v: f64,
    },
}

impl Observable {
    /// Parses `x`, `abs:A`, `bump:C:W` or `const:V`.
    pub fn parse(s: &str) -> Result<Observable> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .and_then(|p| p.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Precondition(format!("bad observable '{s}'")))
        };
        match (parts[0], parts.len()) {
            ("x", 1) => Ok(Observable::Coordinate),
            ("abs", 2) => Ok(Observable::AbsShift { a: num(1)? }),
            ("bump", 3) if num(2)? > 0.0 => Ok(Observable::Bump {
                c: num(1)?,
                w: num(2)?,
            }),
            ("const", 2) => Ok(Observable::Constant { v: num(1)? }),
            _ => Err(Error::Precondition(format!("unknown observable '{s}'"))),
        }
    }

    pub fn id(&self) -> String {
        match *self {
            Observable::Coordinate => "x".into(),
            Observable::AbsShift { a } => format!("abs:{a}"),
            Observable::Bump { c, w } => format!("bump:{c}:{w}"),
            Observable::Constant { v } => format!("const:{v}"),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Observable::Coordinate => x,
            Observable::AbsShift { a } => (x - a).abs(),
            Observable::Bump { c, w } => {
                let t = (x - c) / w;
                if t.abs() < 1.0 {
                    (1.0 - t * t).powi(2)
                } else {
                    0.0
                }
            }
            Observable::Constant { v } => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityMethod {
    BirkhoffHistogram,
    TowerPushforward,
}

/// Histogram density on the support, in rescaled coordinates.
#[derive(Debug, Clone, Serialize)]
pub struct MeasureEstimate {
    pub method: DensityMethod,
    pub lo: f64,
    pub hi: f64,
    /// Density values; they integrate to 1 over `[lo, hi]`.
    pub density: Vec<f64>,
    pub n_samples: usize,
    pub seed: u64,
    /// L1 distance to the estimate from the next seed.
    pub seed_distance: f64,
    /// `||P_f rho - rho||_1` from a one-step push of samples drawn from `rho`.
    pub invariance_defect: f64,
    #[serde(skip)]
    cdf: Vec<f64>,
}

impl MeasureEstimate {
    pub fn bins(&self) -> usize {
        self.density.len()
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.bins() as f64
    }

    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        let w = self.bin_width();
        (self.lo + w * i as f64, self.lo + w * (i + 1) as f64)
    }

    pub fn integral(&self) -> f64 {
        kahan_sum(self.density.iter().copied()) * self.bin_width()
    }

    pub fn l1_distance(&self, other: &MeasureEstimate) -> f64 {
        l1(&self.density, &other.density, self.bin_width())
    }

    /// L1 distance to the density with distribution function `cdf` (in
    /// rescaled coordinates), leaving out the two end bins.
    pub fn l1_to_cdf(&self, cdf: impl Fn(f64) -> f64) -> f64 {
        let w = self.bin_width();
        let n = self.bins();
        kahan_sum((1..n - 1).map(|i| {
            let (a, b) = self.bin_edges(i);
            (self.density[i] * w - (cdf(b) - cdf(a))).abs()
        }))
    }

    /// Draws a point from the histogram.
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        let k = self.cdf.partition_point(|&c| c < u).min(self.bins() - 1);
        let (a, _) = self.bin_edges(k);
        a + self.bin_width() * rng.random::<f64>()
    }

    /// `int phi d mu` by the midpoint rule in each bin.
    pub fn expectation(&self, m: &MapSpec, phi: &Observable) -> f64 {
        let w = self.bin_width();
        kahan_sum((0..self.bins()).map(|i| {
            let (a, b) = self.bin_edges(i);
            self.density[i] * w * phi.eval(m.to_natural(0.5 * (a + b)))
        }))
    }
}

fn cumulative(d: &[f64]) -> Vec<f64> {
    let mut acc = KahanSum::new();
    d.iter()
        .map(|&v| {
            acc.add(v);
            acc.value()
        })
        .collect()
}

fn l1(a: &[f64], b: &[f64], w: f64) -> f64 {
    kahan_sum(a.iter().zip(b).map(|(x, y)| (x - y).abs())) * w
}

fn histogram(xs: impl Iterator<Item = f64>, lo: f64, hi: f64, bins: usize) -> (Vec<f64>, usize) {
    let mut counts = vec![0u64; bins];
    let mut total = 0usize;
    let scale = bins as f64 / (hi - lo);
    for x in xs {
        let k = ((x - lo) * scale).floor();
        if k >= 0.0 && k < bins as f64 {
            counts[k as usize] += 1;
        } else if x == hi {
            counts[bins - 1] += 1;
        }
        total += 1;
    }
    let w = (hi - lo) / bins as f64;
    let norm = 1.0 / (counts.iter().sum::<u64>().max(1) as f64 * w);
    (counts.iter().map(|&c| c as f64 * norm).collect(), total)
}

/// A long `f64` orbit. Rounding can drop an orbit onto an exact fixed point
/// (for the full map, `1/2 -> 1 -> 0`); it then restarts from a fresh point
/// of the same stream.
struct OrbitStream<'a, R: Rng> {
    m: &'a MapSpec,
    x: f64,
    rng: R,
    lo: f64,
    hi: f64,
    restarts: usize,
}

impl<'a, R: Rng> OrbitStream<'a, R> {
    fn new(m: &'a MapSpec, x: f64, rng: R) -> Self {
        let (lo, hi) = support(m);
        OrbitStream {
            m,
            x,
            rng,
            lo,
            hi,
            restarts: 0,
        }
    }

    fn step(&mut self) -> f64 {
        let y = self.m.eval(self.x);
        self.x = if y == self.x {
            self.restarts += 1;
            self.lo + (self.hi - self.lo) * self.rng.random::<f64>()
        } else {
            y
        };
        self.x
    }
}

fn birkhoff_density(m: &MapSpec, n: usize, seed: u64, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 0);
    let x0 = lo + (hi - lo) * rng.random::<f64>();
    let mut orbit = OrbitStream::new(m, x0, rng);
    for _ in 0..BURN_IN {
        orbit.step();
    }
    histogram((0..n).map(|_| orbit.step()), lo, hi, DENSITY_BINS).0
}

fn tower_density(m: &MapSpec, t: &TowerModel, n: usize, seed: u64, lo: f64, hi: f64) -> Vec<f64> {
    let mut cum = Vec::with_capacity(t.pieces.len());
    let mut acc = 0.0;
    for p in &t.pieces {
        acc += p.r as f64 * p.length;
        cum.push(acc);
    }
    let mut rng = stream_rng(seed, 0);
    let pts = (0..n).map(move |_| {
        let u: f64 = rng.random();
        let k = cum
            .partition_point(|&c| c < u * acc)
            .min(t.pieces.len() - 1);
        let p = &t.pieces[k];
        let i = rng.random_range(0..p.r);
        let mut x = p.lo.hi + (p.hi.hi - p.lo.hi) * rng.random::<f64>();
        for _ in 0..i {
            x = m.eval(x);
        }
        x
    });
    histogram(pts, lo, hi, DENSITY_BINS).0
}

/// Estimates the invariant density. The tower method needs `tower`.
pub fn invariant_density(
    m: &MapSpec,
    method: DensityMethod,
    tower: Option<&TowerModel>,
    n_samples: usize,
    seed: u64,
) -> Result<MeasureEstimate> {
    if method == DensityMethod::BirkhoffHistogram && n_samples < 1_000_000 {
        return Err(Error::Precondition(
            "the histogram method needs at least 1e6 samples".into(),
        ));
    }
    let (lo, hi) = support(m);
    let run = |s: u64| -> Result<Vec<f64>> {
        match method {
            DensityMethod::BirkhoffHistogram => Ok(birkhoff_density(m, n_samples, s, lo, hi)),
            DensityMethod::TowerPushforward => {
                let t = tower
                    .ok_or_else(|| Error::Precondition("tower pushforward needs a tower".into()))?;
                if t.pieces.is_empty() {
                    return Err(Error::Precondition("the tower has no pieces".into()));
                }
                Ok(tower_density(m, t, n_samples, s, lo, hi))
            }
        }
    };
    let (a, b) = rayon::join(|| run(seed), || run(seed.wrapping_add(1)));
    let (density, other) = (a?, b?);
    let w = (hi - lo) / DENSITY_BINS as f64;
    let seed_distance = l1(&density, &other, w);
    let mut est = MeasureEstimate {
        method,
        lo,
        hi,
        density,
        n_samples,
        seed,
        seed_distance,
        invariance_defect: 0.0,
        cdf: Vec::new(),
    };
    est.cdf = cumulative(&est.density);
    // push fresh samples from rho one step
    let mut rng = stream_rng(seed, 1);
    let pushed = (0..INVARIANCE_SAMPLES).map(|_| m.eval(est.sample(&mut rng)));
    let (after, _) = histogram(pushed, lo, hi, DENSITY_BINS);
    est.invariance_defect = l1(&est.density, &after, w);
    if seed_distance > 0.05 {
        return Err(Error::NonConvergence { l1: seed_distance });
    }
    Ok(est)
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrelationCurve {
    pub phi: String,
    pub psi: String,
    pub values: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// `C_n < 2 SE`.
    pub censored: Vec<bool>,
    pub n_samples: usize,
    pub seed: u64,
}

impl CorrelationCurve {
    /// Builds a curve from values and standard errors, censoring at `2 SE`.
    pub fn from_parts(phi: &str, psi: &str, values: Vec<f64>, standard_errors: Vec<f64>) -> Self {
        let censored = values
            .iter()
            .zip(&standard_errors)
            .map(|(v, s)| *v < 2.0 * s)
            .collect();
        CorrelationCurve {
            phi: phi.into(),
            psi: psi.into(),
            values,
            standard_errors,
            censored,
            n_samples: 0,
            seed: 0,
        }
    }
}

/// Orbit of length `n` from a `mu`-distributed start after a burn-in.
fn stationary_orbit(
    m: &MapSpec,
    mu: &MeasureEstimate,
    n: usize,
    seed: u64,
    stream: u64,
) -> Vec<f64> {
    let mut rng = stream_rng(seed, stream);
    let x0 = mu.sample(&mut rng);
    let mut orbit = OrbitStream::new(m, x0, rng);
    for _ in 0..BURN_IN * 10 {
        orbit.step();
    }
    (0..n).map(|_| orbit.step()).collect()
}

/// `C_n = |<(phi o f^n) psi> - <phi><psi>|` along one stationary orbit,
/// with batch-means standard errors over 50 batches.
pub fn correlation(
    m: &MapSpec,
    mu: &MeasureEstimate,
    phi: &Observable,
    psi: &Observable,
    n_max: usize,
    n_samples: usize,
    seed: u64,
) -> Result<CorrelationCurve> {
    if n_samples < CORRELATION_BATCHES * 2 {
        return Err(Error::Precondition(
            "too few samples for batch means".into(),
        ));
    }
    let orbit = stationary_orbit(m, mu, n_samples + n_max, seed, 0);
    let fv: Vec<f64> = orbit.iter().map(|&u| phi.eval(m.to_natural(u))).collect();
    let gv: Vec<f64> = orbit.iter().map(|&u| psi.eval(m.to_natural(u))).collect();
    let fbar = kahan_sum(fv.iter().copied()) / fv.len() as f64;
    let gbar = kahan_sum(gv.iter().copied()) / gv.len() as f64;
    let batch = n_samples / CORRELATION_BATCHES;
    let used = batch * CORRELATION_BATCHES;
    let rows: Vec<(f64, f64)> = (0..=n_max)
        .into_par_iter()
        .map(|n| {
            let means: Vec<f64> = (0..CORRELATION_BATCHES)
                .map(|b| {
                    let mut s = KahanSum::new();
                    for j in b * batch..(b + 1) * batch {
                        s.add((fv[j + n] - fbar) * (gv[j] - gbar));
                    }
                    s.value() / batch as f64
                })
                .collect();
            let mean = tree_sum(&means) / CORRELATION_BATCHES as f64;
            let var = kahan_sum(means.iter().map(|v| (v - mean) * (v - mean)))
                / (CORRELATION_BATCHES - 1) as f64;
            (mean.abs(), (var / CORRELATION_BATCHES as f64).sqrt())
        })
        .collect();
    let mut curve = CorrelationCurve::from_parts(
        &phi.id(),
        &psi.id(),
        rows.iter().map(|r| r.0).collect(),
        rows.iter().map(|r| r.1).collect(),
    );
    curve.n_samples = used;
    curve.seed = seed;
    Ok(curve)
}

/// Classifies the decay of `C_n` on the lags before the first censored one.
pub fn fit_correlation_decay(curve: &CorrelationCurve) -> Result<DecayClass> {
    let first = (1..curve.values.len()).find(|&n| curve.censored[n]);
    if let Some(n) = first {
        if n <= 3 {
            return Err(Error::AllCensored { n });
        }
    }
    let end = first.unwrap_or(curve.values.len());
    let points: Vec<(f64, f64)> = (1..end).map(|n| (n as f64, curve.values[n])).collect();
    classify_points(&points, 10)
}

#[derive(Debug, Clone, Serialize)]
pub struct CltReport {
    pub sigma: f64,
    pub ks: f64,
    pub pass: bool,
    pub n_block: usize,
    pub n_trials: usize,
    pub observable_sd: f64,
    pub mean: f64,
}

/// Normalized block sums over independent stationary orbits, compared with
/// `N(0, sigma_hat)`.
pub fn clt_test(
    m: &MapSpec,
    mu: &MeasureEstimate,
    phi: &Observable,
    n_block: usize,
    n_trials: usize,
    seed: u64,
) -> Result<CltReport> {
    if n_block == 0 || n_trials < 2 {
        return Err(Error::Precondition(
            "need n_block >= 1 and n_trials >= 2".into(),
        ));
    }
    let sums: Vec<(f64, f64)> = (0..n_trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, t + 1);
            let x0 = mu.sample(&mut rng);
            let mut orbit = OrbitStream::new(m, x0, rng);
            for _ in 0..BURN_IN {
                orbit.step();
            }
            let (mut s, mut s2) = (KahanSum::new(), KahanSum::new());
            for _ in 0..n_block {
                let v = phi.eval(m.to_natural(orbit.step()));
                s.add(v);
                s2.add(v * v);
            }
            (s.value(), s2.value())
        })
        .collect();
    let total = (n_block * n_trials) as f64;
    let s1: Vec<f64> = sums.iter().map(|s| s.0).collect();
    let s2: Vec<f64> = sums.iter().map(|s| s.1).collect();
    let mean = tree_sum(&s1) / total;
    let sd = (tree_sum(&s2) / total - mean * mean).max(0.0).sqrt();
    let root = (n_block as f64).sqrt();
    let z: Vec<f64> = s1
        .iter()
        .map(|s| (s - n_block as f64 * mean) / root)
        .collect();
    let zbar = tree_sum(&z) / n_trials as f64;
    let sigma =
        (kahan_sum(z.iter().map(|v| (v - zbar) * (v - zbar))) / (n_trials - 1) as f64).sqrt();
    if !(sigma > 0.01 * sd) {
        return Err(Error::CoboundarySuspected { sigma });
    }
    let ks = ks_distance_normal(&z, sigma);
    Ok(CltReport {
        sigma,
        ks,
        pass: ks < 0.05,
        n_block,
        n_trials,
        observable_sd: sd,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::full_return::QPiece;
    use proptest::prelude::*;

    fn arcsine_cdf(x: f64) -> f64 {
        std::f64::consts::FRAC_2_PI * x.clamp(0.0, 1.0).sqrt().asin()
    }

    fn toy_q(rs: &[usize], lengths: &[f64], unresolved: f64, n_max: usize) -> ReturnMapQ {
        let mut lo = 0.0;
        let pieces = rs
            .iter()
            .zip(lengths)
            .map(|(&r, &l)| {
                let p = QPiece {
                    lo: TwoFloat::from(lo).into(),
                    hi: TwoFloat::from(lo + l).into(),
                    length: l,
                    r,
                    t: 0,
                    chain: vec![r],
                    increasing: true,
                };
                lo += l;
                p
            })
            .collect();
        ReturnMapQ {
            omega0: (TwoFloat::from(0.0).into(), TwoFloat::from(1.0).into()),
            t0: 0,
            n_max,
            pieces,
            unresolved: Vec::new(),
            unresolved_mass: unresolved,
            depths: Vec::new(),
        }
    }

    #[test]
    fn single_piece_tower_is_base() {
        let q = toy_q(&[1], &[1.0], 0.0, 5);
        let t = build_tower(&q).unwrap();
        assert_eq!(t.levels(), 1);
        assert_eq!(t.level_weight(0), 1.0);
        assert!(tower_tail_identity(&q).holds());
    }

    #[test]
    fn heavy_censoring_is_kac_divergence() {
        let q = toy_q(&[3, 5], &[0.01, 0.01], 0.5, 100);
        assert!(matches!(build_tower(&q), Err(Error::KacDivergence { .. })));
    }

    #[test]
    fn tail_identity_by_hand() {
        // R = 2 on 1/2, R = 3 on 1/4: sum R |w| = 7/4 = m_Omega{R_hat > 0}
        let q = toy_q(&[2, 3], &[0.5, 0.25], 0.0, 4);
        let id = tower_tail_identity(&q);
        assert!(id.holds());
        let val = |s: &str| u128::from_str_radix(s, 16).unwrap() as f64 * 2f64.powi(id.exponent);
        let expect = [1.75, 1.0, 0.25, 0.0, 0.0];
        for (n, e) in expect.iter().enumerate() {
            assert_eq!(val(&id.tower_side[n]), *e, "n = {n}");
        }
    }

    proptest! {
        #[test]
        fn tail_identity_holds_exactly(
            rs in prop::collection::vec(1usize..40, 1..30),
            seed in 0u64..1000,
        ) {
            let lengths: Vec<f64> = rs.iter().enumerate()
                .map(|(i, _)| ((seed + 7 * i as u64) % 97 + 1) as f64 * 1.37e-9 / (i + 1) as f64)
                .collect();
            let q = toy_q(&rs, &lengths, 0.0, 50);
            prop_assert!(tower_tail_identity(&q).holds());
        }
    }

    #[test]
    fn observables_parse() {
        assert_eq!(Observable::parse("x").unwrap(), Observable::Coordinate);
        assert_eq!(
            Observable::parse("abs:0.3").unwrap(),
            Observable::AbsShift { a: 0.3 }
        );
        assert!(Observable::parse("bump:0.5:0").is_err());
        assert!(Observable::parse("sin").is_err());
        assert_eq!(Observable::parse("bump:0.5:0.1").unwrap().eval(0.5), 1.0);
    }

    fn full_density() -> &'static MeasureEstimate {
        static D: std::sync::OnceLock<MeasureEstimate> = std::sync::OnceLock::new();
        D.get_or_init(|| {
            let m = MapSpec::logistic(4.0).unwrap();
            invariant_density(&m, DensityMethod::BirkhoffHistogram, None, 2_000_000, 11).unwrap()
        })
    }

    #[test]
    fn arcsine_density() {
        let d = full_density();
        assert!((d.integral() - 1.0).abs() < 1e-6);
        assert!(d.density.iter().all(|&v| v >= 0.0));
        assert!(d.l1_to_cdf(arcsine_cdf) < 0.05);
        assert!(d.seed_distance < 0.05);
        assert!(d.invariance_defect < 0.05);
    }

    #[test]
    fn histogram_needs_samples() {
        let m = MapSpec::logistic(4.0).unwrap();
        assert!(invariant_density(&m, DensityMethod::BirkhoffHistogram, None, 10, 1).is_err());
    }

    #[test]
    fn coordinate_variance_is_one_eighth() {
        let m = MapSpec::logistic(4.0).unwrap();
        let c = correlation(
            &m,
            full_density(),
            &Observable::Coordinate,
            &Observable::Coordinate,
            5,
            2_000_000,
            3,
        )
        .unwrap();
        assert!((c.values[0] - 0.125).abs() < 0.125 * 0.05);
        assert!(!c.censored[0]);
    }

    #[test]
    fn planted_exponential() {
        let values: Vec<f64> = (0..40)
            .map(|n| 0.5 * (-0.4 * n as f64).exp() + 1e-4 * (((n * 7919) % 13) as f64 / 13.0 - 0.5))
            .collect();
        let curve = CorrelationCurve::from_parts("a", "b", values, vec![5e-5; 40]);
        let fit = fit_correlation_decay(&curve).unwrap();
        assert_eq!(fit.class, crate::decay::GrowthClass::Exponential);
        assert!((fit.beta.unwrap() - 0.4).abs() < 0.04);
    }

    #[test]
    fn planted_polynomial() {
        let values: Vec<f64> = (0..300).map(|n| (n.max(1) as f64).powi(-2)).collect();
        let curve = CorrelationCurve::from_parts("a", "b", values, vec![1e-9; 300]);
        let fit = fit_correlation_decay(&curve).unwrap();
        assert_eq!(fit.class, crate::decay::GrowthClass::Polynomial);
        assert!((fit.alpha.unwrap() - 2.0).abs() < 0.2);
    }

    #[test]
    fn early_floor_is_all_censored() {
        let curve =
            CorrelationCurve::from_parts("a", "b", vec![1.0, 0.1, 1e-6, 1e-6], vec![1e-3; 4]);
        assert!(matches!(
            fit_correlation_decay(&curve),
            Err(Error::AllCensored { n: 2 })
        ));
    }

    #[test]
    fn constant_is_coboundary() {
        let m = MapSpec::logistic(4.0).unwrap();
        let r = clt_test(
            &m,
            full_density(),
            &Observable::Constant { v: 1.0 },
            100,
            100,
            1,
        );
        assert!(matches!(r, Err(Error::CoboundarySuspected { .. })));
    }

    #[test]
    fn clt_small_run() {
        let m = MapSpec::logistic(4.0).unwrap();
        let r = clt_test(&m, full_density(), &Observable::Coordinate, 2000, 2000, 5).unwrap();
        assert!((r.sigma * r.sigma - 0.125).abs() < 0.125 * 0.1, "{r:?}");
        assert!(r.ks < 0.05);
    }
}
