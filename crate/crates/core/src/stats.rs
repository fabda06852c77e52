//! Small numerical and statistical helpers shared by the estimators.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Kahan-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

pub fn kahan_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut k = KahanSum::new();
    for x in xs {
        k.add(x);
    }
    k.value()
}

/// Pairwise reduction with a fixed tree shape, so the result does not
/// depend on how the leaves were computed.
pub fn tree_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => tree_sum(&xs[..n / 2]) + tree_sum(&xs[n / 2..]),
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    kahan_sum(xs.iter().copied()) / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    kahan_sum(xs.iter().map(|x| (x - m) * (x - m))) / (xs.len() as f64 - 1.0)
}

pub fn normal_cdf(x: f64, sigma: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / (sigma * std::f64::consts::SQRT_2)))
}

/// Kolmogorov-Smirnov distance between a sample and `N(0, sigma)`.
pub fn ks_distance_normal(sample: &[f64], sigma: f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x, sigma);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// RNG for stream `stream` of a seeded family; streams are independent.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Points of the additive recurrence `frac(x0 + k * phi)`, a
/// low-discrepancy sequence on `[lo, hi]`.
pub fn low_discrepancy(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    const PHI_FRAC: f64 = 0.618_033_988_749_894_9;
    (0..n).map(move |k| {
        let t = (0.5 + k as f64 * PHI_FRAC).fract();
        lo + (hi - lo) * t
    })
}

/// Two-dimensional low-discrepancy points (the R2 sequence) in the unit square.
pub fn low_discrepancy_2d(n: usize) -> impl Iterator<Item = (f64, f64)> {
    const G: f64 = 1.324_717_957_244_746;
    let (a1, a2) = (1.0 / G, 1.0 / (G * G));
    (0..n).map(move |k| ((0.5 + a1 * k as f64).fract(), (0.5 + a2 * k as f64).fract()))
}

/// Lower `q`-quantile linear envelope `y >= a + b x`, fitted by minimizing
/// the check loss. Returns `(a, b)`.
pub fn quantile_line(x: &[f64], y: &[f64], q: f64) -> (f64, f64) {
    let intercept_for = |b: f64| -> (f64, f64) {
        let mut r: Vec<f64> = x.iter().zip(y).map(|(xi, yi)| yi - b * xi).collect();
        let idx = ((q * r.len() as f64).floor() as usize).min(r.len() - 1);
        let a = *r.select_nth_unstable_by(idx, f64::total_cmp).1;
        let loss = r
            .iter()
            .map(|&ri| {
                let u = ri - a;
                if u >= 0.0 {
                    q * u
                } else {
                    (q - 1.0) * u
                }
            })
            .sum::<f64>();
        (a, loss)
    };
    let xmax = x
        .iter()
        .cloned()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    let ymax = y
        .iter()
        .cloned()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    let bound = 4.0 * ymax / xmax;
    let (mut lo, mut hi) = (-bound, bound);
    // the check loss is convex in b once the intercept is profiled out
    for _ in 0..100 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if intercept_for(m1).1 <= intercept_for(m2).1 {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let b = 0.5 * (lo + hi);
    (intercept_for(b).0, b)
}
