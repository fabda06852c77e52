//! Rate classification for decaying sequences.
//!
//! Four log-scale models compete by least squares:
//!
//! | model               | regression                       |
//! |---------------------|----------------------------------|
//! | exponential         | `log y = log C - beta n`         |
//! | stretched exponential | `log y = log C - beta n^alpha`, `alpha in (0, 1)` |
//! | polynomial          | `log y = log C - alpha log n`    |
//! | super-polynomial    | `log y = log C - beta (log n)^2` |
//!
//! The last model is the shape of sequences that decay faster than any
//! polynomial but slower than any stretched exponential.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowthClass {
    Exponential,
    StretchedExponential,
    Polynomial,
    SuperPolynomial,
    SummableOnly,
    NotSummable,
    Inconclusive,
}

impl GrowthClass {
    pub fn label(&self) -> &'static str {
        match self {
            GrowthClass::Exponential => "exponential",
            GrowthClass::StretchedExponential => "stretched-exponential",
            GrowthClass::Polynomial => "polynomial",
            GrowthClass::SuperPolynomial => "super-polynomial",
            GrowthClass::SummableOnly => "summable-only",
            GrowthClass::NotSummable => "not-summable",
            GrowthClass::Inconclusive => "inconclusive",
        }
    }

    /// Whether a sequence of this class has a finite sum.
    pub fn is_summable(&self, alpha: f64) -> bool {
        match self {
            GrowthClass::Exponential
            | GrowthClass::StretchedExponential
            | GrowthClass::SuperPolynomial
            | GrowthClass::SummableOnly => true,
            GrowthClass::Polynomial => alpha > 1.0,
            GrowthClass::NotSummable | GrowthClass::Inconclusive => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SequenceKind {
    BSequence,
    DSequence,
    TailCounts,
}

impl SequenceKind {
    fn min_points(&self) -> usize {
        match self {
            SequenceKind::BSequence | SequenceKind::DSequence => 50,
            SequenceKind::TailCounts => 10,
        }
    }
}

/// One fitted model: `log y = intercept + slope * t(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelFit {
    pub intercept: f64,
    pub slope: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayClass {
    pub class: GrowthClass,
    /// Prefactor `C`.
    pub c: f64,
    /// Rate `beta` (exponential, stretched, super-polynomial).
    pub beta: Option<f64>,
    /// Exponent `alpha` (stretched, polynomial).
    pub alpha: Option<f64>,
    pub fit_quality: f64,
    pub window: (f64, f64),
    pub exponential: ModelFit,
    pub stretched: ModelFit,
    pub stretched_alpha: f64,
    pub polynomial: ModelFit,
    pub super_polynomial: ModelFit,
    /// Polynomial exponents on an earlier and a later window, when the
    /// sequence is long enough for both.
    pub exponent_trend: Option<(f64, f64)>,
}

/// Ordinary least squares of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> ModelFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 && sxx > 0.0 {
        (sxy * sxy) / (sxx * syy)
    } else if syy == 0.0 {
        1.0
    } else {
        0.0
    };
    ModelFit {
        intercept,
        slope,
        r2,
    }
}

const STRETCHED_MARGIN: f64 = 1e-3;

/// Classifies `seq[i]`, taken as the value at `n = i + 1`, over the window
/// `[N/10, N]`.
pub fn classify_growth(seq: &[f64], kind: SequenceKind) -> Result<DecayClass> {
    let logs: Vec<f64> = seq
        .iter()
        .map(|&y| if y > 0.0 { y.ln() } else { f64::NAN })
        .collect();
    classify_log_growth(&logs, kind)
}

/// As [`classify_growth`], with the sequence given as natural logs. Entries
/// that are not finite are skipped.
pub fn classify_log_growth(log_seq: &[f64], kind: SequenceKind) -> Result<DecayClass> {
    let n = log_seq.len();
    let start = (n / 10).max(1);
    let usable = |range: std::ops::RangeInclusive<usize>| -> Vec<(f64, f64)> {
        range
            .map(|k| (k as f64, log_seq[k - 1]))
            .filter(|&(_, ly)| ly.is_finite())
            .collect()
    };
    let points = usable(start..=n);
    let mut class = classify_log_points(&points, kind.min_points())?;
    if n >= 1000 {
        let early = usable((n / 100).max(1)..=n / 10);
        if early.len() >= 10 {
            let (lx, ly): (Vec<f64>, Vec<f64>) = early.iter().map(|&(k, ly)| (k.ln(), ly)).unzip();
            let a_early = -linear_fit(&lx, &ly).slope;
            class.exponent_trend = Some((a_early, -class.polynomial.slope));
        }
    }
    if kind == SequenceKind::TailCounts || class.class != GrowthClass::Inconclusive {
        return Ok(class);
    }
    // no model fits: fall back to the Cauchy behaviour of the partial sums
    let total = log_sum_exp(log_seq.iter().copied());
    let last = log_sum_exp(log_seq[start..].iter().copied());
    class.class = if total.is_finite() && last - total < 1e-6f64.ln() {
        GrowthClass::SummableOnly
    } else {
        GrowthClass::Inconclusive
    };
    Ok(class)
}

/// `log sum exp(x_i)` over the finite entries.
pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs
        .clone()
        .filter(|x| x.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return f64::NEG_INFINITY;
    }
    m + xs
        .filter(|x| x.is_finite())
        .map(|x| (x - m).exp())
        .sum::<f64>()
        .ln()
}

/// Classifies explicit `(n, y)` points, all with `y > 0`.
pub fn classify_points(points: &[(f64, f64)], min_points: usize) -> Result<DecayClass> {
    let logs: Vec<(f64, f64)> = points.iter().map(|&(n, y)| (n, y.ln())).collect();
    classify_log_points(&logs, min_points)
}

/// Classifies `(n, log y)` points.
pub fn classify_log_points(points: &[(f64, f64)], min_points: usize) -> Result<DecayClass> {
    if points.len() < min_points {
        return Err(Error::WindowTooShort {
            needed: min_points,
            got: points.len(),
        });
    }
    let ns: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1).collect();
    let span = ly.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - ly.iter().cloned().fold(f64::INFINITY, f64::min);
    if span < 2.0 {
        return Err(Error::DegenerateSequence);
    }
    let logn: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let logn2: Vec<f64> = logn.iter().map(|l| l * l).collect();

    let exponential = linear_fit(&ns, &ly);
    let polynomial = linear_fit(&logn, &ly);
    let super_polynomial = linear_fit(&logn2, &ly);
    let mut stretched = ModelFit {
        intercept: 0.0,
        slope: 0.0,
        r2: f64::NEG_INFINITY,
    };
    // coarse grid then local refinement
    let mut best_alpha = 0.5;
    for i in 1..100 {
        let a = i as f64 / 100.0;
        let t: Vec<f64> = ns.iter().map(|n| n.powf(a)).collect();
        let fit = linear_fit(&t, &ly);
        if fit.r2 > stretched.r2 {
            stretched = fit;
            best_alpha = a;
        }
    }
    let (mut lo, mut hi) = (
        (best_alpha - 0.01).max(1e-3),
        (best_alpha + 0.01).min(0.999),
    );
    for _ in 0..40 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        let f = |a: f64| linear_fit(&ns.iter().map(|n| n.powf(a)).collect::<Vec<_>>(), &ly);
        if f(m1).r2 < f(m2).r2 {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    let refined_alpha = 0.5 * (lo + hi);
    let refined = linear_fit(
        &ns.iter().map(|n| n.powf(refined_alpha)).collect::<Vec<_>>(),
        &ly,
    );
    let stretched_alpha = if refined.r2 >= stretched.r2 {
        stretched = refined;
        refined_alpha
    } else {
        best_alpha
    };

    let window = (ns[0], ns[ns.len() - 1]);
    let mut best = (GrowthClass::Exponential, exponential);
    for cand in [
        (GrowthClass::Polynomial, polynomial),
        (GrowthClass::SuperPolynomial, super_polynomial),
    ] {
        if cand.1.r2 > best.1.r2 {
            best = cand;
        }
    }
    if stretched.r2 > best.1.r2 + STRETCHED_MARGIN {
        best = (GrowthClass::StretchedExponential, stretched);
    }
    let (mut class, fit) = best;
    let (beta, alpha) = match class {
        GrowthClass::Exponential => (Some(-fit.slope), None),
        GrowthClass::StretchedExponential => (Some(-fit.slope), Some(stretched_alpha)),
        GrowthClass::Polynomial => (None, Some(-fit.slope)),
        GrowthClass::SuperPolynomial => (Some(-fit.slope), None),
        _ => (None, None),
    };
    if fit.r2 < 0.9 {
        class = GrowthClass::Inconclusive;
    } else if fit.slope >= 0.0 {
        class = GrowthClass::NotSummable;
    }
    Ok(DecayClass {
        class,
        c: fit.intercept.exp(),
        beta,
        alpha,
        fit_quality: fit.r2,
        window,
        exponential,
        stretched,
        stretched_alpha,
        polynomial,
        super_polynomial,
        exponent_trend: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(n: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (1..=n).map(|k| f(k as f64)).collect()
    }

    #[test]
    fn exponential_recovered() {
        let s = seq(300, |n| 4f64.powf(-n / 3.0));
        let c = classify_growth(&s, SequenceKind::BSequence).unwrap();
        assert_eq!(c.class, GrowthClass::Exponential);
        let beta = c.beta.unwrap();
        assert!((beta - 4f64.ln() / 3.0).abs() < 0.05 * beta);
    }

    #[test]
    fn polynomial_recovered() {
        let s = seq(1000, |n| n.powi(-3));
        let c = classify_growth(&s, SequenceKind::DSequence).unwrap();
        assert_eq!(c.class, GrowthClass::Polynomial);
        assert!((c.alpha.unwrap() - 3.0).abs() < 0.15);
    }

    #[test]
    fn stretched_recovered() {
        let s = seq(2000, |n| 2.0 * (-0.8 * n.powf(0.5)).exp());
        let c = classify_growth(&s, SequenceKind::BSequence).unwrap();
        assert_eq!(c.class, GrowthClass::StretchedExponential);
        assert!((c.alpha.unwrap() - 0.5).abs() < 0.025);
        assert!((c.beta.unwrap() - 0.8).abs() < 0.04);
    }

    #[test]
    fn log_quadratic_is_super_polynomial() {
        let s = seq(10_000, |n| (-0.4 * n.ln().powi(2)).exp());
        let c = classify_growth(&s, SequenceKind::DSequence).unwrap();
        assert_eq!(c.class, GrowthClass::SuperPolynomial);
        let (early, late) = c.exponent_trend.unwrap();
        assert!(late > early);
    }

    #[test]
    fn degenerate_and_short() {
        let flat = seq(100, |_| 0.5);
        assert_eq!(
            classify_growth(&flat, SequenceKind::BSequence),
            Err(Error::DegenerateSequence)
        );
        let short = seq(20, |n| (-n).exp());
        assert!(matches!(
            classify_growth(&short, SequenceKind::BSequence),
            Err(Error::WindowTooShort { .. })
        ));
    }

    #[test]
    fn slowly_decaying_polynomial_is_not_summable() {
        let pts: Vec<(f64, f64)> = (1..=1000)
            .map(|n| (n as f64, (n as f64).powf(-2.0 / 3.0)))
            .collect();
        let c = classify_points(&pts, 50).unwrap();
        assert_eq!(c.class, GrowthClass::Polynomial);
        assert!(!c.class.is_summable(c.alpha.unwrap()));
    }
}
