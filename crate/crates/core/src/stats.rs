//! Log-density kernels and the seeded random stream shared by every sampler.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// `½·ln(2π)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

// Stream ids below this offset are reserved for master streams.
const SUBSTREAM_SHIFT: u32 = 24;
const MAX_CHAIN: u64 = (1 << SUBSTREAM_SHIFT) - 1;

/// Seeded, counter-based random stream.
///
/// Built on ChaCha8: the seed fixes the key and a 64-bit stream id selects an
/// independent keystream, so `(replication, chain)` sub-streams never overlap.
#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream keyed by `(replication, chain)`.
    ///
    /// Depends only on the master seed and the key, never on how many draws
    /// the parent stream has already produced.
    pub fn substream(&self, replication: u64, chain: u64) -> Self {
        assert!(chain <= MAX_CHAIN, "chain index {chain} exceeds {MAX_CHAIN}");
        assert!(
            replication < (1u64 << (64 - SUBSTREAM_SHIFT)) - 1,
            "replication index {replication} out of range"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((replication + 1) << SUBSTREAM_SHIFT) | chain);
        Self {
            seed: self.seed,
            rng,
        }
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        loop {
            let u: f64 = self.rng.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn std_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn normal(&mut self, mu: f64, sigma: f64) -> Result<f64> {
        if !(sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() {
            return Err(domain(format!("normal requires finite mu and sigma > 0, got ({mu}, {sigma})")));
        }
        Ok(mu + sigma * self.std_normal())
    }

    /// Gamma draw with the given shape and scale (mean `shape * scale`).
    pub fn gamma(&mut self, shape: f64, scale: f64) -> Result<f64> {
        let dist = Gamma::new(shape, scale)
            .map_err(|e| domain(format!("gamma({shape}, {scale}): {e}")))?;
        Ok(dist.sample(&mut self.rng))
    }

    pub fn beta(&mut self, a: f64, b: f64) -> Result<f64> {
        let x = self.gamma(a, 1.0)?;
        let y = self.gamma(b, 1.0)?;
        Ok(x / (x + y))
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Index drawn proportionally to non-negative `weights`.
    pub fn categorical(&mut self, weights: &[f64]) -> Result<usize> {
        let mut total = 0.0;
        for &w in weights {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(domain(format!("categorical weight {w} is not a finite non-negative number")));
            }
            total += w;
        }
        if !(total > 0.0) {
            return Err(domain("categorical weights sum to zero"));
        }
        let target = self.uniform() * total;
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                last_positive = i;
                if target < acc {
                    return Ok(i);
                }
            }
        }
        Ok(last_positive)
    }

    /// Index drawn from unnormalised log-weights.
    pub fn categorical_log(&mut self, log_weights: &[f64]) -> Result<usize> {
        let probs = normalize_log_weights(log_weights)
            .ok_or_else(|| domain("all log weights are -inf or NaN"))?;
        self.categorical(&probs)
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Weibull law in proportional-hazards form: `h(t) = shape * rate * t^(shape-1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeibullParam {
    shape: f64,
    rate: f64,
}

impl WeibullParam {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite()) {
            return Err(domain(format!("weibull shape must be positive, got {shape}")));
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(domain(format!("weibull rate multiplier must be positive, got {rate}")));
        }
        Ok(Self { shape, rate })
    }

    /// Build from the log of the rate multiplier (the linear predictor).
    pub fn from_log_rate(shape: f64, log_rate: f64) -> Result<Self> {
        Self::new(shape, log_rate.exp())
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn log_hazard(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.shape.ln() + self.rate.ln() + (self.shape - 1.0) * t.ln())
    }

    /// Inverse CDF; `u` is a uniform on (0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        (-(-u).ln_1p() / self.rate).powf(1.0 / self.shape)
    }
}

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("time must be positive and finite, got {t}")))
    }
}

pub fn logpdf_normal(x: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(domain(format!("normal sigma must be positive, got {sigma}")));
    }
    Ok(normal_lpdf(x, mu, sigma))
}

pub fn logpdf_lognormal(x: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(domain(format!("log-normal support is x > 0, got {x}")));
    }
    let ln_x = x.ln();
    Ok(logpdf_normal(ln_x, mu, sigma)? - ln_x)
}

pub fn weibull_log_density(t: f64, p: WeibullParam) -> Result<f64> {
    Ok(p.log_hazard(t)? + weibull_log_survival(t, p)?)
}

pub fn weibull_log_survival(t: f64, p: WeibullParam) -> Result<f64> {
    check_time(t)?;
    Ok(-p.rate * t.powf(p.shape))
}

/// `y·η − ln(1 + e^η)`, stable for large `|η|`.
pub fn bernoulli_logit_logpmf(y: bool, eta: f64) -> f64 {
    if y {
        -softplus(-eta)
    } else {
        -softplus(eta)
    }
}

/// Unchecked normal log-density for hot loops; caller guarantees `sigma > 0`.
#[inline]
pub(crate) fn normal_lpdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -HALF_LN_2PI - sigma.ln() - 0.5 * z * z
}

/// `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Softmax of log-weights; `None` when nothing carries finite mass.
pub fn normalize_log_weights(log_weights: &[f64]) -> Option<Vec<f64>> {
    let max = log_weights
        .iter()
        .copied()
        .filter(|w| !w.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut probs: Vec<f64> = log_weights
        .iter()
        .map(|&w| if w.is_nan() { 0.0 } else { (w - max).exp() })
        .collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Some(probs)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Variance with divisor `n - ddof`.
pub fn variance(xs: &[f64], ddof: usize) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - ddof) as f64
}

/// Linear-interpolation quantile (type 7), `q` in [0, 1].
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, q)
}

pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

// Chebyshev fit from Numerical Recipes, fractional error below 1.2e-7.
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t
        * (-z * z - 1.265_512_23
            + t * (1.000_023_68
                + t * (0.374_091_96
                    + t * (0.096_784_18
                        + t * (-0.186_288_06
                            + t * (0.278_868_07
                                + t * (-1.135_203_98
                                    + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77)))))))))
            .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

/// Inverse standard normal CDF (Acklam's algorithm with one Newton polish).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "normal quantile needs p in (0,1), got {p}");
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let p_low = 0.024_25;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}
