//! Work-queue engine shared by the large-scale partition and the
//! full-return construction.
//!
//! A piece is an interval of the starting interval `J` (double-double
//! endpoints) together with the images of its endpoints at its current
//! time `n`. The dynamics only ever touch endpoints; preimages of cut
//! points are found by safeguarded Newton on `f^n` from `J`.

use rayon::prelude::*;
use serde::Serialize;
use twofloat::TwoFloat;

use super::levels::{LevelSets, Zone};
use super::BindingConfig;
use crate::map_kernel::IntervalMap;

/// Pieces shorter than this are not refined further.
pub const RESOLUTION_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Deep,
    Shallow,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Deep => "deep",
            Label::Shallow => "shallow",
        }
    }
}

/// One return of an itinerary: absolute time, binding period, label and
/// the critical point bound to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Entry {
    pub nu: usize,
    pub p: usize,
    pub label: Label,
    pub critical: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnresolvedReason {
    /// Still open at the time limit.
    Open,
    ResolutionFloor,
    /// Landed within the binding cap region around a critical point.
    CapHit,
    /// A large-scale image held no admissible return target.
    NoTarget,
    /// The returned part of a large-scale piece is shorter than the floor.
    ReturnFloor,
    /// The piece budget ran out.
    Budget,
}

/// A part of `J` the construction did not resolve.
#[derive(Debug, Clone, Serialize)]
pub struct Unresolved {
    pub lo: f64,
    pub hi: f64,
    pub length: f64,
    pub time: usize,
    pub chain_start: usize,
    pub depth: usize,
    pub reason: UnresolvedReason,
}

/// Double-double point in serializable form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

impl From<TwoFloat> for Dd {
    fn from(x: TwoFloat) -> Self {
        Self {
            hi: x.hi(),
            lo: x.lo(),
        }
    }
}

impl From<Dd> for TwoFloat {
    fn from(x: Dd) -> Self {
        TwoFloat::from(x.hi) + x.lo
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Piece {
    pub a: TwoFloat,
    pub b: TwoFloat,
    pub ya: TwoFloat,
    pub yb: TwoFloat,
    pub n: usize,
    pub chain_start: usize,
    pub entries: Vec<Entry>,
    pub bind_until: usize,
    pub must_advance: bool,
    /// Absolute large-scale times reached so far.
    pub chain: Vec<usize>,
}

impl Piece {
    pub fn length(&self) -> f64 {
        (self.b - self.a).hi()
    }

    fn image(&self) -> (TwoFloat, TwoFloat) {
        if self.ya <= self.yb {
            (self.ya, self.yb)
        } else {
            (self.yb, self.ya)
        }
    }
}

/// Preimage `x` of the critical point with time `t`, and `omega_x`, the
/// component of `f^{-t}(Omega_0)` around it.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Target {
    pub x: f64,
    pub t: usize,
    pub lo: TwoFloat,
    pub hi: TwoFloat,
}

#[derive(Debug, Clone)]
pub(crate) struct Targets {
    /// Sorted by `x`.
    pub list: Vec<Target>,
    pub delta_prime: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Mode<'a> {
    LargeScale,
    Return(&'a Targets),
}

#[derive(Debug, Clone)]
pub(crate) struct Terminal {
    pub a: TwoFloat,
    pub b: TwoFloat,
    pub n: usize,
    pub image: (TwoFloat, TwoFloat),
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone)]
pub(crate) struct Returned {
    pub a: TwoFloat,
    pub b: TwoFloat,
    pub r: usize,
    pub t: usize,
    pub chain: Vec<usize>,
    /// Whether `f^R` preserves orientation on the piece.
    pub increasing: bool,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Event {
    ChainStart {
        depth: usize,
        mass: f64,
    },
    /// A large-scale time at chain depth `depth`, reached `rel` steps after
    /// the chain started.
    LargeScale {
        depth: usize,
        rel: usize,
        middle: f64,
        returned: f64,
    },
}

#[derive(Debug)]
enum Outcome {
    Continue(Piece),
    Terminal(Terminal),
    Returned(Returned),
    Unresolved(Unresolved),
    Event(Event),
}

#[derive(Debug, Default)]
pub(crate) struct Output {
    pub terminals: Vec<Terminal>,
    pub returned: Vec<Returned>,
    pub unresolved: Vec<Unresolved>,
    pub events: Vec<Event>,
}

pub(crate) struct Engine<'a, M: IntervalMap + ?Sized> {
    pub m: &'a M,
    pub cfg: &'a BindingConfig,
    pub levels: &'a LevelSets,
    pub n_max: usize,
    pub mode: Mode<'a>,
    pub budget: usize,
}

impl<'a, M: IntervalMap + ?Sized> Engine<'a, M> {
    /// Runs the construction on `[lo, hi]` starting at time 0.
    pub fn run(&self, lo: TwoFloat, hi: TwoFloat) -> Output {
        let root = Piece {
            a: lo,
            b: hi,
            ya: lo,
            yb: hi,
            n: 0,
            chain_start: 0,
            entries: Vec::new(),
            bind_until: 0,
            must_advance: false,
            chain: Vec::new(),
        };
        let mut out = Output::default();
        out.events.push(Event::ChainStart {
            depth: 0,
            mass: root.length(),
        });
        let mut queue = Vec::new();
        self.collect(self.start_chain(root), &mut queue, &mut out);
        let mut processed = 0usize;
        while !queue.is_empty() {
            processed += queue.len();
            if processed > self.budget {
                log::warn!(
                    "piece budget {} exhausted with {} open pieces",
                    self.budget,
                    queue.len()
                );
                for p in queue.drain(..) {
                    out.unresolved
                        .push(self.unresolved(&p, UnresolvedReason::Budget));
                }
                break;
            }
            let results: Vec<Vec<Outcome>> = std::mem::take(&mut queue)
                .into_par_iter()
                .map(|p| self.advance(p))
                .collect();
            for r in results {
                self.collect(r, &mut queue, &mut out);
            }
        }
        out.terminals.sort_by(|x, y| x.a.partial_cmp(&y.a).unwrap());
        out.returned.sort_by(|x, y| x.a.partial_cmp(&y.a).unwrap());
        out.unresolved.sort_by(|x, y| x.lo.total_cmp(&y.lo));
        out
    }

    fn collect(&self, outcomes: Vec<Outcome>, queue: &mut Vec<Piece>, out: &mut Output) {
        for o in outcomes {
            match o {
                Outcome::Continue(p) => queue.push(p),
                Outcome::Terminal(t) => out.terminals.push(t),
                Outcome::Returned(r) => out.returned.push(r),
                Outcome::Unresolved(u) => out.unresolved.push(u),
                Outcome::Event(e) => out.events.push(e),
            }
        }
    }

    fn unresolved(&self, p: &Piece, reason: UnresolvedReason) -> Unresolved {
        Unresolved {
            lo: p.a.hi(),
            hi: p.b.hi(),
            length: p.length(),
            time: p.n,
            chain_start: p.chain_start,
            depth: p.chain.len(),
            reason,
        }
    }

    /// `f^n(z)` and `log|(f^n)'(z)|` with the sign of the derivative.
    fn forward(&self, z: TwoFloat, n: usize) -> (TwoFloat, f64, bool) {
        let mut y = z;
        let mut logd = 0.0;
        let mut positive = true;
        for _ in 0..n {
            let d = self.m.deriv_dd(y);
            logd += d.abs().ln();
            positive ^= d < 0.0;
            y = self.m.eval_dd(y);
        }
        (y, logd, positive)
    }

    /// The point `z` of `[a, b]` with `f^n(z) = y`.
    fn invert(&self, p: &Piece, y: TwoFloat) -> TwoFloat {
        if y == p.ya {
            return p.a;
        }
        if y == p.yb {
            return p.b;
        }
        let increasing = p.ya < p.yb;
        let (mut lo, mut hi) = (p.a, p.b);
        let frac = ((y - p.ya) / (p.yb - p.ya)).hi().clamp(0.0, 1.0);
        let mut z = p.a + (p.b - p.a) * self.invert_f64(p, y.hi(), frac, increasing);
        let mut prev = f64::INFINITY;
        for _ in 0..16 {
            let (g, logd, positive) = self.forward(z, p.n);
            let r = g - y;
            // DD residual noise grows with the number of iterates
            if r.hi().abs() <= 1e-31 * (p.n as f64 + 1.0) * y.hi().abs().max(1.0) {
                break;
            }
            if (r.hi() < 0.0) == increasing {
                lo = z;
            } else {
                hi = z;
            }
            let d = if positive { logd.exp() } else { -logd.exp() };
            let cand = z - r.hi() / d;
            let next = if d.is_finite() && d != 0.0 && cand > lo && cand < hi {
                cand
            } else {
                lo + (hi - lo) * 0.5
            };
            let moved = (next - z).hi().abs();
            z = next;
            // stop at the evaluation noise floor, where Newton stops contracting
            let scale = z.hi().abs().max(1e-300);
            if moved <= 1e-30 * scale
                || (moved <= 1e-28 * scale && moved >= 0.5 * prev)
                || (hi - lo).hi() <= 0.0
            {
                break;
            }
            prev = moved;
        }
        z
    }

    /// Relative position in `[a, b]` of the `f64` solution of `f^n(z) = y`,
    /// a start for the double-double solve.
    fn invert_f64(&self, p: &Piece, y: f64, frac: f64, increasing: bool) -> f64 {
        let (a, len) = (p.a.hi(), (p.b - p.a).hi());
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut s = frac;
        for _ in 0..60 {
            let mut g = a + len * s;
            let mut d = len;
            for _ in 0..p.n {
                d *= self.m.deriv(g);
                g = self.m.eval(g);
            }
            let r = g - y;
            if r == 0.0 {
                break;
            }
            if (r < 0.0) == increasing {
                lo = s;
            } else {
                hi = s;
            }
            let cand = s - r / d;
            let next = if d.is_finite() && d != 0.0 && cand > lo && cand < hi {
                cand
            } else {
                0.5 * (lo + hi)
            };
            let moved = (next - s).abs();
            s = next;
            if moved <= 1e-15 || hi - lo <= 1e-15 {
                break;
            }
        }
        s
    }

    /// Splits `p` at the image points `cuts` (sorted, strictly inside the
    /// image). Children come back in increasing image order.
    fn split(&self, p: &Piece, cuts: &[TwoFloat]) -> Vec<Piece> {
        let (ilo, ihi) = p.image();
        let mut ys = Vec::with_capacity(cuts.len() + 2);
        ys.push(ilo);
        ys.extend_from_slice(cuts);
        ys.push(ihi);
        let zs: Vec<TwoFloat> = ys.iter().map(|&y| self.invert(p, y)).collect();
        let increasing = p.ya <= p.yb;
        ys.windows(2)
            .zip(zs.windows(2))
            .map(|(y, z)| {
                let mut c = p.clone();
                if increasing {
                    (c.a, c.b, c.ya, c.yb) = (z[0], z[1], y[0], y[1]);
                } else {
                    (c.a, c.b, c.ya, c.yb) = (z[1], z[0], y[1], y[0]);
                }
                c
            })
            .collect()
    }

    fn zone_of(&self, lo: TwoFloat, hi: TwoFloat) -> Zone {
        self.levels.classify((lo + hi) * 0.5)
    }

    /// Partition at the start of a chain: parts in `I_p` bind, parts
    /// outside `Delta` move on before their first return check.
    fn start_chain(&self, p: Piece) -> Vec<Outcome> {
        let (lo, hi) = p.image();
        let cuts = self.levels.cuts_within(lo, hi);
        let n = p.n;
        let mut out = Vec::new();
        for mut c in self.split(&p, &cuts) {
            let (clo, chi) = c.image();
            if c.length() < RESOLUTION_FLOOR {
                out.push(Outcome::Unresolved(
                    self.unresolved(&c, UnresolvedReason::ResolutionFloor),
                ));
                continue;
            }
            match self.zone_of(clo, chi) {
                Zone::Outside => {
                    c.must_advance = true;
                    out.push(Outcome::Continue(c));
                }
                Zone::Level { critical, p: bp } => {
                    c.entries.push(Entry {
                        nu: n,
                        p: bp,
                        label: Label::Deep,
                        critical,
                    });
                    c.bind_until = n + bp;
                    out.push(Outcome::Continue(c));
                }
                Zone::Cap { .. } => out.push(Outcome::Unresolved(
                    self.unresolved(&c, UnresolvedReason::CapHit),
                )),
            }
        }
        out
    }

    fn advance(&self, mut p: Piece) -> Vec<Outcome> {
        loop {
            if p.length() < RESOLUTION_FLOOR {
                return vec![Outcome::Unresolved(
                    self.unresolved(&p, UnresolvedReason::ResolutionFloor),
                )];
            }
            if p.n >= self.n_max {
                return vec![Outcome::Unresolved(
                    self.unresolved(&p, UnresolvedReason::Open),
                )];
            }
            let (lo, hi) = p.image();
            if p.n >= p.bind_until && !p.must_advance && self.cfg.meets_delta(lo.hi(), hi.hi()) {
                return self.on_return(p);
            }
            // keep f^{n+1} monotone on the piece
            let inside: Vec<TwoFloat> = self
                .cfg
                .tracks
                .iter()
                .map(|t| TwoFloat::from(t.c))
                .filter(|&c| c > lo && c < hi)
                .collect();
            if !inside.is_empty() {
                return self
                    .split(&p, &inside)
                    .into_iter()
                    .map(Outcome::Continue)
                    .collect();
            }
            p.ya = self.m.eval_dd(p.ya);
            p.yb = self.m.eval_dd(p.yb);
            p.n += 1;
            p.must_advance = false;
        }
    }

    fn on_return(&self, p: Piece) -> Vec<Outcome> {
        let (lo, hi) = p.image();
        let len = (hi - lo).hi();
        let eps = self.cfg.epsilon;
        if len >= self.cfg.delta_prime + 2.0 * eps && p.n > p.chain_start {
            let (mlo, mhi) = (lo + eps, hi - eps);
            let parts = self.split(&p, &[mlo, mhi]);
            let mut out = Vec::new();
            for (k, c) in parts.into_iter().enumerate() {
                if k == 1 {
                    out.extend(self.large_scale(c));
                } else {
                    out.extend(self.strip(c));
                }
            }
            return out;
        }
        self.small_return(p)
    }

    /// An edge strip of a large-scale return: deep parts bind, shallow
    /// parts move on.
    fn strip(&self, p: Piece) -> Vec<Outcome> {
        let (lo, hi) = p.image();
        let cuts = self.levels.cuts_within(lo, hi);
        let n = p.n;
        let mut out = Vec::new();
        for mut c in self.split(&p, &cuts) {
            if c.length() < RESOLUTION_FLOOR {
                out.push(Outcome::Unresolved(
                    self.unresolved(&c, UnresolvedReason::ResolutionFloor),
                ));
                continue;
            }
            let (clo, chi) = c.image();
            match self.zone_of(clo, chi) {
                Zone::Outside => {
                    c.entries.push(Entry {
                        nu: n,
                        p: 0,
                        label: Label::Shallow,
                        critical: usize::MAX,
                    });
                    c.must_advance = true;
                    out.push(Outcome::Continue(c));
                }
                Zone::Level { critical, p: bp } => {
                    c.entries.push(Entry {
                        nu: n,
                        p: bp,
                        label: Label::Deep,
                        critical,
                    });
                    c.bind_until = n + bp;
                    out.push(Outcome::Continue(c));
                }
                Zone::Cap { .. } => out.push(Outcome::Unresolved(
                    self.unresolved(&c, UnresolvedReason::CapHit),
                )),
            }
        }
        out
    }

    /// A return below large scale: cut along the level sets, fold each part
    /// outside `Delta` into its deeper neighbour, bind every part.
    fn small_return(&self, p: Piece) -> Vec<Outcome> {
        let (lo, hi) = p.image();
        let cuts = self.levels.cuts_within(lo, hi);
        let mut bounds = vec![lo];
        bounds.extend_from_slice(&cuts);
        bounds.push(hi);
        let zones: Vec<Zone> = bounds
            .windows(2)
            .map(|w| self.zone_of(w[0], w[1]))
            .collect();
        let depth = |z: &Zone| match z {
            Zone::Outside => 0,
            Zone::Level { p, .. } => *p,
            Zone::Cap { .. } => usize::MAX,
        };
        // each outside part joins the deeper of its neighbours
        let mut owner: Vec<usize> = (0..zones.len()).collect();
        for i in 0..zones.len() {
            if zones[i] == Zone::Outside {
                let left = i.checked_sub(1).filter(|&j| zones[j] != Zone::Outside);
                let right = Some(i + 1).filter(|&j| j < zones.len() && zones[j] != Zone::Outside);
                owner[i] = match (left, right) {
                    (Some(l), Some(r)) => {
                        if depth(&zones[r]) > depth(&zones[l]) {
                            r
                        } else {
                            l
                        }
                    }
                    (Some(l), None) => l,
                    (None, Some(r)) => r,
                    (None, None) => i,
                };
            }
        }
        let mut merged_cuts = Vec::new();
        let mut merged_zones = vec![zones[owner[0]]];
        for i in 1..zones.len() {
            if owner[i] != owner[i - 1] {
                merged_cuts.push(bounds[i]);
                merged_zones.push(zones[owner[i]]);
            }
        }
        let n = p.n;
        let mut out = Vec::new();
        for (mut c, zone) in self.split(&p, &merged_cuts).into_iter().zip(merged_zones) {
            if c.length() < RESOLUTION_FLOOR {
                out.push(Outcome::Unresolved(
                    self.unresolved(&c, UnresolvedReason::ResolutionFloor),
                ));
                continue;
            }
            match zone {
                Zone::Level { critical, p: bp } => {
                    c.entries.push(Entry {
                        nu: n,
                        p: bp,
                        label: Label::Deep,
                        critical,
                    });
                    c.bind_until = n + bp;
                    out.push(Outcome::Continue(c));
                }
                Zone::Cap { .. } => out.push(Outcome::Unresolved(
                    self.unresolved(&c, UnresolvedReason::CapHit),
                )),
                // only when the image meets Delta in nothing but boundary points
                Zone::Outside => {
                    c.must_advance = true;
                    out.push(Outcome::Continue(c));
                }
            }
        }
        out
    }

    fn large_scale(&self, p: Piece) -> Vec<Outcome> {
        match self.mode {
            Mode::LargeScale => vec![Outcome::Terminal(Terminal {
                a: p.a,
                b: p.b,
                n: p.n,
                image: p.image(),
                entries: p.entries,
            })],
            Mode::Return(targets) => self.full_return(p, targets),
        }
    }

    /// Cuts the piece mapping onto some `omega_x` out of a large-scale
    /// image; the flanks start new chains.
    fn full_return(&self, p: Piece, targets: &Targets) -> Vec<Outcome> {
        let (lo, hi) = p.image();
        let dp = targets.delta_prime;
        let (wlo, whi) = (lo.hi() + 0.4 * dp, hi.hi() - 0.4 * dp);
        let depth = p.chain.len();
        let start = targets.list.partition_point(|t| t.x < wlo);
        let mid = 0.5 * (lo.hi() + hi.hi());
        let best = targets.list[start..]
            .iter()
            .take_while(|t| t.x <= whi)
            .filter(|t| (t.lo - lo).hi() >= dp / 3.0 && (hi - t.hi).hi() >= dp / 3.0)
            .min_by(|x, y| {
                x.t.cmp(&y.t)
                    .then((x.x - mid).abs().total_cmp(&(y.x - mid).abs()))
            });
        let Some(tg) = best else {
            return vec![
                Outcome::Event(Event::LargeScale {
                    depth,
                    rel: p.n - p.chain_start,
                    middle: p.length(),
                    returned: 0.0,
                }),
                Outcome::Unresolved(self.unresolved(&p, UnresolvedReason::NoTarget)),
            ];
        };
        let mut chain = p.chain.clone();
        chain.push(p.n);
        let parts = self.split(&p, &[tg.lo, tg.hi]);
        let mut out = vec![Outcome::Event(Event::LargeScale {
            depth,
            rel: p.n - p.chain_start,
            middle: p.length(),
            returned: parts[1].length(),
        })];
        for (k, mut c) in parts.into_iter().enumerate() {
            if k == 1 && c.length() < RESOLUTION_FLOOR {
                out.push(Outcome::Unresolved(
                    self.unresolved(&c, UnresolvedReason::ReturnFloor),
                ));
                continue;
            }
            if k == 1 {
                // f^t keeps or flips the orientation of omega_x onto Omega_0
                let (_, _, pos) = self.forward(TwoFloat::from(tg.x), tg.t);
                let inc_n = c.ya <= c.yb;
                out.push(Outcome::Returned(Returned {
                    a: c.a,
                    b: c.b,
                    r: c.n + tg.t,
                    t: tg.t,
                    chain: chain.clone(),
                    increasing: inc_n == pos,
                }));
                continue;
            }
            c.chain = chain.clone();
            c.chain_start = c.n;
            c.entries.clear();
            c.bind_until = c.n;
            c.must_advance = false;
            out.push(Outcome::Event(Event::ChainStart {
                depth: depth + 1,
                mass: c.length(),
            }));
            if c.length() < RESOLUTION_FLOOR {
                out.push(Outcome::Unresolved(
                    self.unresolved(&c, UnresolvedReason::ResolutionFloor),
                ));
            } else {
                out.extend(self.start_chain(c));
            }
        }
        out
    }
}
