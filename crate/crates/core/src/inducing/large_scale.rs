//! Large-scale partitions of an interval `J`, their stopping-time tails
//! and the size and distortion checks on resolved pieces.

use rayon::prelude::*;
use serde::Serialize;
use twofloat::TwoFloat;

use super::engine::{Dd, Engine, Entry, Label, Mode, Unresolved};
use super::levels::LevelSets;
use super::{BindingConfig, OutsideExpansion};
use crate::decay::{classify_log_points, DecayClass};
use crate::error::{Error, Result};
use crate::map_kernel::IntervalMap;
use crate::stats::kahan_sum;

/// Upper bound on piece-steps processed by one construction.
pub const PIECE_BUDGET: usize = 4_000_000;
/// Koebe constant used by the size check.
pub const K0: f64 = 16.0;

#[derive(Debug, Clone, Serialize)]
pub struct LargeScalePiece {
    pub lo: Dd,
    pub hi: Dd,
    pub length: f64,
    pub p_hat: usize,
    /// `f^{p_hat}` of the piece.
    pub image: (f64, f64),
    pub entries: Vec<Entry>,
}

impl LargeScalePiece {
    pub fn image_length(&self) -> f64 {
        self.image.1 - self.image.0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LargeScalePartition {
    pub j: (f64, f64),
    pub n_max: usize,
    pub pieces: Vec<LargeScalePiece>,
    pub unresolved: Vec<Unresolved>,
    pub unresolved_mass: f64,
}

impl LargeScalePartition {
    pub fn j_length(&self) -> f64 {
        self.j.1 - self.j.0
    }

    pub fn resolved_mass(&self) -> f64 {
        kahan_sum(self.pieces.iter().map(|p| p.length))
    }

    /// `|sum of piece lengths + unresolved - |J|| / |J|`.
    pub fn mass_defect(&self) -> f64 {
        ((self.resolved_mass() + self.unresolved_mass) - self.j_length()).abs() / self.j_length()
    }
}

/// Checks the itinerary rules; returns the first broken one.
pub fn itinerary_violation(entries: &[Entry]) -> Option<String> {
    for w in entries.windows(2) {
        if w[1].nu <= w[0].nu {
            return Some(format!(
                "return times not increasing: {} then {}",
                w[0].nu, w[1].nu
            ));
        }
        if w[1].nu < w[0].nu + w[0].p {
            return Some(format!(
                "return at {} inside the binding period of the return at {}",
                w[1].nu, w[0].nu
            ));
        }
    }
    if let Some(e) = entries
        .iter()
        .find(|e| (e.label == Label::Shallow) != (e.p == 0))
    {
        return Some(format!(
            "return at {} has label {:?} with p = {}",
            e.nu, e.label, e.p
        ));
    }
    let s = entries.iter().filter(|e| e.label == Label::Shallow).count();
    let d = entries.len() - s;
    let ss = shallow_pairs(entries);
    if s > ss + d + 1 {
        return Some(format!("{s} shallow returns exceed {ss} + {d} + 1"));
    }
    None
}

/// Shallow returns followed by another shallow return.
fn shallow_pairs(entries: &[Entry]) -> usize {
    entries
        .windows(2)
        .filter(|w| w[0].label == Label::Shallow && w[1].label == Label::Shallow)
        .count()
}

/// Runs the large-scale construction on `J = [j.0, j.1]` up to time `n_max`.
/// `min_length` is the net scale `delta''`.
pub fn induce_to_large_scale<M: IntervalMap + ?Sized>(
    m: &M,
    cfg: &BindingConfig,
    levels: &LevelSets,
    j: (f64, f64),
    n_max: usize,
    min_length: f64,
) -> Result<LargeScalePartition> {
    if !(j.1 - j.0 >= min_length) {
        return Err(Error::Precondition(format!(
            "|J| = {} is shorter than delta'' = {min_length}",
            j.1 - j.0
        )));
    }
    if n_max == 0 {
        return Err(Error::Precondition("n_max must be at least 1".into()));
    }
    let engine = Engine {
        m,
        cfg,
        levels,
        n_max,
        mode: Mode::LargeScale,
        budget: PIECE_BUDGET,
    };
    let out = engine.run(TwoFloat::from(j.0), TwoFloat::from(j.1));
    let pieces = out
        .terminals
        .into_iter()
        .map(|t| LargeScalePiece {
            lo: t.a.into(),
            hi: t.b.into(),
            length: (t.b - t.a).hi(),
            p_hat: t.n,
            image: (t.image.0.hi(), t.image.1.hi()),
            entries: t.entries,
        })
        .collect();
    let unresolved_mass = kahan_sum(out.unresolved.iter().map(|u| u.length));
    Ok(LargeScalePartition {
        j,
        n_max,
        pieces,
        unresolved: out.unresolved,
        unresolved_mass,
    })
}

/// Tail `m_n` of a stopping time with censored mass counted as `> n_max`.
#[derive(Debug, Clone, Serialize)]
pub struct TailStats {
    pub n_max: usize,
    /// `m_n` for `n = 0..=n_max`.
    pub tail: Vec<f64>,
    /// Resolved pieces with stopping time `> n`.
    pub counts: Vec<usize>,
    /// Censored fraction.
    pub censored: f64,
    /// Last `n` used by the fit.
    pub fit_end: usize,
    pub class: Option<DecayClass>,
}

impl TailStats {
    /// Builds the tail from `(time, mass)` pairs of resolved pieces, a total
    /// mass and a censored mass. The fit uses `n <= n_max / 2` and stops
    /// where the censored mass makes up half the tail.
    pub fn from_times(times: &[(usize, f64)], total: f64, censored: f64, n_max: usize) -> Self {
        let mut mass_at = vec![0.0; n_max + 2];
        let mut count_at = vec![0usize; n_max + 2];
        for &(t, w) in times {
            let k = t.min(n_max + 1);
            mass_at[k] += w;
            count_at[k] += 1;
        }
        let mut tail = vec![0.0; n_max + 1];
        let mut counts = vec![0usize; n_max + 1];
        let (mut above, mut above_count) = (censored, 0usize);
        above += mass_at[n_max + 1];
        above_count += count_at[n_max + 1];
        for n in (0..=n_max).rev() {
            tail[n] = above / total;
            counts[n] = above_count;
            above += mass_at[n];
            above_count += count_at[n];
        }
        let cens = censored / total;
        let fit_end = (1..=n_max / 2)
            .take_while(|&n| tail[n] > 0.0 && tail[n] > 2.0 * cens)
            .last()
            .unwrap_or(0);
        let points: Vec<(f64, f64)> = (1..=fit_end).map(|n| (n as f64, tail[n].ln())).collect();
        let class = classify_log_points(&points, 10).ok();
        Self {
            n_max,
            tail,
            counts,
            censored: cens,
            fit_end,
            class,
        }
    }
}

/// `m_n = sup_J |{p_hat > n} ∩ J| / |J|` over the supplied partitions.
pub fn tail_of_phat(parts: &[LargeScalePartition], n_max: usize) -> Result<TailStats> {
    if parts.is_empty() {
        return Err(Error::Precondition(
            "at least one partition is required".into(),
        ));
    }
    let per: Vec<TailStats> = parts
        .iter()
        .map(|p| {
            let times: Vec<(usize, f64)> = p.pieces.iter().map(|q| (q.p_hat, q.length)).collect();
            TailStats::from_times(&times, p.j_length(), p.unresolved_mass, n_max)
        })
        .collect();
    let tail: Vec<f64> = (0..=n_max)
        .map(|n| per.iter().map(|t| t.tail[n]).fold(0.0, f64::max))
        .collect();
    let counts: Vec<usize> = (0..=n_max)
        .map(|n| per.iter().map(|t| t.counts[n]).sum())
        .collect();
    let censored = per.iter().map(|t| t.censored).fold(0.0, f64::max);
    let fit_end = (1..=n_max / 2)
        .take_while(|&n| tail[n] > 0.0 && tail[n] > 2.0 * censored)
        .last()
        .unwrap_or(0);
    let points: Vec<(f64, f64)> = (1..=fit_end).map(|n| (n as f64, tail[n].ln())).collect();
    Ok(TailStats {
        n_max,
        class: classify_log_points(&points, 10).ok(),
        tail,
        counts,
        censored,
        fit_end,
    })
}

/// `log|(f^n)'(z)|` with double-double orbit points.
pub fn log_deriv_dd<M: IntervalMap + ?Sized>(m: &M, z: TwoFloat, n: usize) -> f64 {
    let mut y = z;
    let mut acc = 0.0;
    for _ in 0..n {
        acc += m.deriv_dd(y).abs().ln();
        y = m.eval_dd(y);
    }
    acc
}

/// `max/min` of `|(f^{p_hat})'|` over five points of the piece.
pub fn piece_distortion<M: IntervalMap + ?Sized>(m: &M, piece: &LargeScalePiece) -> f64 {
    let (a, b): (TwoFloat, TwoFloat) = (piece.lo.into(), piece.hi.into());
    let logs: Vec<f64> = (0..5)
        .map(|k| log_deriv_dd(m, a + (b - a) * (k as f64 / 4.0), piece.p_hat))
        .collect();
    let (mn, mx) = logs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    (mx - mn).exp()
}

/// Sampled distortion constant over a family of partitions, with the
/// values from the even- and odd-indexed partitions for a stability check.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DistortionConstant {
    pub k: f64,
    pub k_even: f64,
    pub k_odd: f64,
}

pub fn distortion_constant<M: IntervalMap + ?Sized>(
    m: &M,
    parts: &[LargeScalePartition],
) -> DistortionConstant {
    let per: Vec<f64> = parts
        .iter()
        .map(|part| {
            part.pieces
                .par_iter()
                .map(|p| piece_distortion(m, p))
                .reduce(|| 1.0, f64::max)
        })
        .collect();
    let max = |it: &mut dyn Iterator<Item = &f64>| it.cloned().fold(1.0, f64::max);
    DistortionConstant {
        k: max(&mut per.iter()),
        k_even: max(&mut per.iter().step_by(2)),
        k_odd: max(&mut per.iter().skip(1).step_by(2)),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SizeLemmaReport {
    pub checked: usize,
    pub passed: usize,
    /// `log(bound / ratio)` per checked piece; negative means a violation.
    pub margins: Vec<f64>,
}

impl SizeLemmaReport {
    pub fn pass_rate(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }
}

/// Log of the size bound for one piece:
/// `min{C^{-#S_d} e^{-lambda (m - sum p)}, (K0/kappa)^{#S_d} rho^{#S_ss}} prod 1/F'_p`.
pub fn size_bound_log(
    piece: &LargeScalePiece,
    cfg: &BindingConfig,
    levels: &LevelSets,
    exp: &OutsideExpansion,
) -> f64 {
    let deep: Vec<&Entry> = piece
        .entries
        .iter()
        .filter(|e| e.label == Label::Deep)
        .collect();
    let sd = deep.len() as f64;
    let sum_p: usize = deep.iter().map(|e| e.p).sum();
    let ss = shallow_pairs(&piece.entries) as f64;
    let m = piece.p_hat as f64;
    let b1 = -sd * exp.c_delta.ln() - exp.lambda * (m - sum_p as f64);
    let b2 = sd * (K0 / cfg.kappa).ln() + if ss > 0.0 { ss * cfg.rho.ln() } else { 0.0 };
    let fp: f64 = deep
        .iter()
        .map(|e| levels.f_prime_of(e.critical, e.p).map_or(0.0, |v| -v.ln()))
        .sum();
    b1.min(b2) + fp
}

/// Checks `|omega| / |f^m(omega)|` against the size bound on every piece.
pub fn check_size_lemma(
    part: &LargeScalePartition,
    cfg: &BindingConfig,
    levels: &LevelSets,
    exp: &OutsideExpansion,
) -> SizeLemmaReport {
    let margins: Vec<f64> = part
        .pieces
        .par_iter()
        .map(|p| size_bound_log(p, cfg, levels, exp) - (p.length / p.image_length()).ln())
        .collect();
    SizeLemmaReport {
        checked: margins.len(),
        passed: margins.iter().filter(|&&x| x >= 0.0).count(),
        margins,
    }
}
