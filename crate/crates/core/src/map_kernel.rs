//! Interval map families, orbits and log-space derivative products.
//!
//! Every family is stored as a polynomial in a rescaled coordinate on
//! `[0, 1]`. The affine change back to the family's natural coordinates is
//! kept on the [`MapSpec`] so reports can show either.

use std::fmt;

use serde::{Deserialize, Serialize};
use twofloat::TwoFloat;

use crate::error::{Error, Result};

/// Slack allowed when checking that a point or an image lies in the domain.
pub const DOMAIN_SLACK: f64 = 1e-12;

/// Derivatives below this magnitude count as landing on a critical point.
pub const CRITICAL_DERIV_FLOOR: f64 = 1e-300;

/// A smooth self-map of a compact interval with finitely many critical
/// points of a common order.
///
/// The inducing and statistics code is written against this trait so that
/// synthetic maps can be used in tests; production runs use [`MapSpec`].
pub trait IntervalMap: Sync {
    fn eval(&self, x: f64) -> f64;
    fn deriv(&self, x: f64) -> f64;
    fn domain(&self) -> (f64, f64);
    /// Sorted critical points in the open domain.
    fn critical_points(&self) -> &[f64];
    fn critical_order(&self) -> f64;

    /// `f(y + e) - f(y)`, ideally without cancellation for tiny `e`.
    fn eval_diff(&self, y: f64, e: f64) -> f64 {
        self.eval(y + e) - self.eval(y)
    }

    /// `f'(y + e) - f'(y)`.
    fn deriv_diff(&self, y: f64, e: f64) -> f64 {
        self.deriv(y + e) - self.deriv(y)
    }

    /// Double-double evaluation. The default only carries the leading part.
    fn eval_dd(&self, x: TwoFloat) -> TwoFloat {
        TwoFloat::from(self.eval(x.hi()))
    }

    /// `f'` at a double-double point, rounded to `f64`.
    fn deriv_dd(&self, x: TwoFloat) -> f64 {
        self.deriv(x.hi())
    }
}

/// Distance from `x` to the nearest critical point, `|x - C|`.
pub fn dist_to_critical<M: IntervalMap + ?Sized>(m: &M, x: f64) -> f64 {
    m.critical_points()
        .iter()
        .map(|c| (x - c).abs())
        .fold(f64::INFINITY, f64::min)
}

/// Index of the critical point closest to `x`.
pub fn nearest_critical<M: IntervalMap + ?Sized>(m: &M, x: f64) -> usize {
    let cps = m.critical_points();
    let mut best = 0;
    for (i, c) in cps.iter().enumerate() {
        if (x - c).abs() < (x - cps[best]).abs() {
            best = i;
        }
    }
    best
}

/// Maximal intervals of monotonicity, split at the critical points.
pub fn branches<M: IntervalMap + ?Sized>(m: &M) -> Vec<(f64, f64)> {
    let (lo, hi) = m.domain();
    let mut cuts = vec![lo];
    cuts.extend_from_slice(m.critical_points());
    cuts.push(hi);
    cuts.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Solves `f(x) = y` on one monotone branch by bisection.
pub fn branch_preimage<M: IntervalMap + ?Sized>(m: &M, branch: (f64, f64), y: f64) -> Option<f64> {
    let (mut a, mut b) = branch;
    let (fa, fb) = (m.eval(a), m.eval(b));
    let increasing = fb >= fa;
    let (ymin, ymax) = if increasing { (fa, fb) } else { (fb, fa) };
    if y < ymin || y > ymax {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let fm = m.eval(mid);
        if (fm < y) == increasing {
            a = mid;
        } else {
            b = mid;
        }
    }
    Some(0.5 * (a + b))
}

/// All preimages of `y`, one per branch whose image contains it.
pub fn preimages<M: IntervalMap + ?Sized>(m: &M, y: f64) -> Vec<f64> {
    let mut out: Vec<f64> = branches(m)
        .into_iter()
        .filter_map(|br| branch_preimage(m, br, y))
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    out
}

/// Exact image hull `f([lo, hi])`: extremes occur at endpoints or at
/// critical points inside the interval.
pub fn image_hull<M: IntervalMap + ?Sized>(m: &M, lo: f64, hi: f64) -> (f64, f64) {
    let (a, b) = (m.eval(lo), m.eval(hi));
    let (mut ymin, mut ymax) = (a.min(b), a.max(b));
    for &c in m.critical_points() {
        if c > lo && c < hi {
            let v = m.eval(c);
            ymin = ymin.min(v);
            ymax = ymax.max(v);
        }
    }
    (ymin, ymax)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    /// `a x (1 - x)`
    Logistic,
    /// `a - x^2`
    QuadraticNormal,
    /// `2 x^2 - 1`
    Chebyshev,
    /// `x^3 - 3 a x + b`
    Cubic,
}

impl Family {
    pub fn id(&self) -> &'static str {
        match self {
            Family::Logistic => "logistic",
            Family::QuadraticNormal => "quadratic",
            Family::Chebyshev => "chebyshev",
            Family::Cubic => "cubic",
        }
    }

    pub fn from_id(id: &str) -> Option<Family> {
        match id {
            "logistic" => Some(Family::Logistic),
            "quadratic" | "quadratic-normal" => Some(Family::QuadraticNormal),
            "chebyshev" => Some(Family::Chebyshev),
            "cubic" => Some(Family::Cubic),
            _ => None,
        }
    }

    fn param_count(&self) -> usize {
        match self {
            Family::Logistic | Family::QuadraticNormal => 1,
            Family::Chebyshev => 0,
            Family::Cubic => 2,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// A polynomial interval map in rescaled coordinates `u in [0, 1]`.
///
/// Natural coordinates are `x = natural_lo + natural_width * u`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapSpec {
    family: Family,
    params: Vec<f64>,
    natural_lo: f64,
    natural_width: f64,
    /// Ascending coefficients of the rescaled polynomial.
    coeffs: Vec<f64>,
    critical_points: Vec<f64>,
    critical_order: f64,
}

impl MapSpec {
    pub fn new(family: Family, params: &[f64]) -> Result<MapSpec> {
        if params.len() != family.param_count() {
            return Err(Error::InvalidMap(format!(
                "{} expects {} parameter(s), got {}",
                family,
                family.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidMap("non-finite parameter".into()));
        }
        // natural coefficients, natural domain, natural critical points
        let (natural, lo, hi, crit): (Vec<f64>, f64, f64, Vec<f64>) = match family {
            Family::Logistic => {
                let a = params[0];
                if !(a > 0.0 && a <= 4.0) {
                    return Err(Error::InvalidMap(format!(
                        "logistic parameter {a} outside (0, 4]"
                    )));
                }
                (vec![0.0, a, -a], 0.0, 1.0, vec![0.5])
            }
            Family::QuadraticNormal => {
                let a = params[0];
                if !(a > 0.0 && a <= 2.0) {
                    return Err(Error::InvalidMap(format!(
                        "quadratic parameter {a} outside (0, 2]"
                    )));
                }
                let beta = 0.5 * (1.0 + (1.0 + 4.0 * a).sqrt());
                (vec![a, 0.0, -1.0], -beta, beta, vec![0.0])
            }
            Family::Chebyshev => (vec![-1.0, 0.0, 2.0], -1.0, 1.0, vec![0.0]),
            Family::Cubic => {
                let (a, b) = (params[0], params[1]);
                if a <= 0.0 {
                    return Err(Error::InvalidMap(
                        "cubic needs a > 0 for two critical points".into(),
                    ));
                }
                let roots = real_cubic_roots(-(3.0 * a + 1.0), b);
                if roots.len() < 2 {
                    return Err(Error::InvalidMap(
                        "cubic has no invariant interval between fixed points".into(),
                    ));
                }
                let s = a.sqrt();
                (
                    vec![b, -3.0 * a, 0.0, 1.0],
                    roots[0],
                    roots[roots.len() - 1],
                    vec![-s, s],
                )
            }
        };
        let width = hi - lo;
        let mut coeffs = compose_affine(&natural, lo, width);
        coeffs[0] -= lo;
        for c in coeffs.iter_mut() {
            *c /= width;
        }
        let mut spec = MapSpec {
            family,
            params: params.to_vec(),
            natural_lo: lo,
            natural_width: width,
            coeffs,
            critical_points: Vec::new(),
            critical_order: 2.0,
        };
        // analytic critical points, polished by one Newton step on f'
        spec.critical_points = crit
            .iter()
            .map(|&x| {
                let u = (x - lo) / width;
                let d2 = spec.second_deriv(u);
                if d2 != 0.0 {
                    u - spec.raw_deriv(u) / d2
                } else {
                    u
                }
            })
            .collect();
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_id(id: &str, params: &[f64]) -> Result<MapSpec> {
        let family =
            Family::from_id(id).ok_or_else(|| Error::InvalidMap(format!("unknown family {id}")))?;
        MapSpec::new(family, params)
    }

    pub fn logistic(a: f64) -> Result<MapSpec> {
        MapSpec::new(Family::Logistic, &[a])
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn to_natural(&self, u: f64) -> f64 {
        self.natural_lo + self.natural_width * u
    }

    pub fn from_natural(&self, x: f64) -> f64 {
        (x - self.natural_lo) / self.natural_width
    }

    /// Natural-coordinate domain `[x_lo, x_hi]`.
    pub fn natural_domain(&self) -> (f64, f64) {
        (self.natural_lo, self.natural_lo + self.natural_width)
    }

    fn raw_eval(&self, u: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * u + c)
    }

    fn raw_deriv(&self, u: f64) -> f64 {
        let n = self.coeffs.len();
        (1..n)
            .rev()
            .fold(0.0, |acc, k| acc * u + k as f64 * self.coeffs[k])
    }

    fn second_deriv(&self, u: f64) -> f64 {
        let n = self.coeffs.len();
        (2..n).rev().fold(0.0, |acc, k| {
            acc * u + (k * (k - 1)) as f64 * self.coeffs[k]
        })
    }

    fn validate(&self) -> Result<()> {
        for &c in &self.critical_points {
            if !(c > 0.0 && c < 1.0) {
                return Err(Error::InvalidMap(format!(
                    "critical point {c} not interior"
                )));
            }
            if self.raw_deriv(c).abs() >= 1e-12 {
                return Err(Error::InvalidMap(format!("f'({c}) does not vanish")));
            }
        }
        let n = 10_000;
        let grid = (0..=n)
            .map(|i| i as f64 / n as f64)
            .chain(self.critical_points.iter().copied());
        for u in grid {
            let v = self.raw_eval(u);
            if !(v >= -DOMAIN_SLACK && v <= 1.0 + DOMAIN_SLACK) {
                return Err(Error::InvalidMap(format!("f({u}) = {v} leaves the domain")));
            }
        }
        // no sign change of f' strictly between consecutive critical points
        for (a, b) in branches(self) {
            let mut sign = 0.0;
            for i in 1..200 {
                let u = a + (b - a) * i as f64 / 200.0;
                let d = self.raw_deriv(u);
                if d != 0.0 {
                    if sign != 0.0 && d.signum() != sign {
                        return Err(Error::InvalidMap("unlisted critical point".into()));
                    }
                    sign = d.signum();
                }
            }
        }
        Ok(())
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        if x.is_nan() || x < -DOMAIN_SLACK || x > 1.0 + DOMAIN_SLACK {
            return Err(Error::Domain {
                x,
                lo: 0.0,
                hi: 1.0,
            });
        }
        Ok(())
    }
}

impl IntervalMap for MapSpec {
    fn eval(&self, x: f64) -> f64 {
        let v = self.raw_eval(x);
        if v < 0.0 || v > 1.0 {
            log::trace!("clamping f({x}) = {v} into [0, 1]");
            v.clamp(0.0, 1.0)
        } else {
            v
        }
    }

    fn deriv(&self, x: f64) -> f64 {
        self.raw_deriv(x)
    }

    fn domain(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn critical_points(&self) -> &[f64] {
        &self.critical_points
    }

    fn critical_order(&self) -> f64 {
        self.critical_order
    }

    fn eval_diff(&self, y: f64, e: f64) -> f64 {
        // Taylor expansion at y is exact for a polynomial
        let taylor = taylor_shift(&self.coeffs, y);
        taylor[1..].iter().rev().fold(0.0, |acc, &c| acc * e + c) * e
    }

    fn deriv_diff(&self, y: f64, e: f64) -> f64 {
        let taylor = taylor_shift(&self.coeffs, y);
        let n = taylor.len();
        (2..n)
            .rev()
            .fold(0.0, |acc, k| acc * e + k as f64 * taylor[k])
            * e
    }

    fn eval_dd(&self, x: TwoFloat) -> TwoFloat {
        let mut acc = TwoFloat::from(0.0);
        for &c in self.coeffs.iter().rev() {
            acc = acc * x + c;
        }
        acc
    }

    fn deriv_dd(&self, x: TwoFloat) -> f64 {
        let n = self.coeffs.len();
        let mut acc = TwoFloat::from(0.0);
        for k in (1..n).rev() {
            acc = acc * x + k as f64 * self.coeffs[k];
        }
        acc.hi()
    }
}

/// Coefficients of `p(lo + w u)` in powers of `u`.
fn compose_affine(p: &[f64], lo: f64, w: f64) -> Vec<f64> {
    // Horner over polynomials in u
    let mut acc = vec![0.0; p.len()];
    for &c in p.iter().rev() {
        let mut next = vec![0.0; p.len()];
        for (k, &a) in acc.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            next[k] += a * lo;
            if k + 1 < next.len() {
                next[k + 1] += a * w;
            }
        }
        next[0] += c;
        acc = next;
    }
    acc
}

/// Coefficients of `p(y + e)` in powers of `e`.
fn taylor_shift(p: &[f64], y: f64) -> Vec<f64> {
    let mut q = p.to_vec();
    let n = q.len();
    for i in 0..n {
        for k in (i..n - 1).rev() {
            q[k] += y * q[k + 1];
        }
    }
    q
}

/// Real roots of `t^3 + p t + q`, ascending.
fn real_cubic_roots(p: f64, q: f64) -> Vec<f64> {
    let disc = -(4.0 * p * p * p + 27.0 * q * q);
    if disc >= 0.0 && p < 0.0 {
        let r = 2.0 * (-p / 3.0).sqrt();
        let arg = ((3.0 * q) / (2.0 * p) * (-3.0 / p).sqrt()).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        let mut roots: Vec<f64> = (0..3)
            .map(|k| r * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos())
            .collect();
        roots.sort_by(f64::total_cmp);
        roots
    } else {
        let s = (0.25 * q * q + p * p * p / 27.0).max(0.0).sqrt();
        vec![(-0.5 * q + s).cbrt() + (-0.5 * q - s).cbrt()]
    }
}

/// A finite forward orbit with running log-derivative sums.
#[derive(Debug, Clone, PartialEq)]
pub struct Orbit {
    pub start: f64,
    pub points: Vec<f64>,
    /// Entry `k` is `sum_{j<k} log|f'(x_j)|`.
    pub log_deriv_partials: Vec<f64>,
    /// First step whose derivative fell below [`CRITICAL_DERIV_FLOOR`].
    pub critical_hit: Option<usize>,
}

impl Orbit {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn eval_map(m: &MapSpec, x: f64) -> Result<f64> {
    m.check_domain(x)?;
    Ok(m.eval(x.clamp(0.0, 1.0)))
}

pub fn eval_deriv(m: &MapSpec, x: f64) -> Result<f64> {
    m.check_domain(x)?;
    Ok(m.deriv(x.clamp(0.0, 1.0)))
}

pub fn iterate<M: IntervalMap + ?Sized>(m: &M, x: f64, n: usize) -> Result<Orbit> {
    let (lo, hi) = m.domain();
    if x.is_nan() || x < lo - DOMAIN_SLACK || x > hi + DOMAIN_SLACK {
        return Err(Error::Domain { x, lo, hi });
    }
    let mut points = Vec::with_capacity(n + 1);
    let mut partials = Vec::with_capacity(n + 1);
    let mut critical_hit = None;
    let mut y = x.clamp(lo, hi);
    let mut acc = 0.0;
    points.push(y);
    partials.push(0.0);
    for k in 0..n {
        let d = m.deriv(y).abs();
        if d < CRITICAL_DERIV_FLOOR && critical_hit.is_none() {
            critical_hit = Some(k);
        }
        acc += d.ln();
        y = m.eval(y);
        points.push(y);
        partials.push(acc);
    }
    Ok(Orbit {
        start: x,
        points,
        log_deriv_partials: partials,
        critical_hit,
    })
}

/// `log|(f^n)'(x)|` as a sum of logs.
pub fn orbit_derivative_log<M: IntervalMap + ?Sized>(m: &M, x: f64, n: usize) -> Result<f64> {
    let (lo, hi) = m.domain();
    if x.is_nan() || x < lo - DOMAIN_SLACK || x > hi + DOMAIN_SLACK {
        return Err(Error::Domain { x, lo, hi });
    }
    let mut y = x.clamp(lo, hi);
    let mut acc = 0.0;
    for step in 0..n {
        let d = m.deriv(y).abs();
        if d < CRITICAL_DERIV_FLOOR {
            return Err(Error::CriticalHit { step });
        }
        acc += d.ln();
        y = m.eval(y);
    }
    Ok(acc)
}
