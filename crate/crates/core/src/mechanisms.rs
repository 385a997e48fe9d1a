//! Reading sensitivity and the two ε-DP additive noise mechanisms.
//!
//! Samplers draw from an explicit RNG. [`NoiseStream`] pairs a seeded
//! ChaCha stream with a draw counter so that a `(seed, index)` pair always
//! reproduces the same value.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};

use crate::error::{Error, Result};
use crate::model::{DpConfig, Mechanism, MeterSeries};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensitivity {
    /// `max_t (upper_t - lower_t)`.
    pub delta_f: f64,
    /// `2 Δf`.
    pub delta: f64,
}

/// Sensitivity of a bounded reading sequence.
pub fn sensitivity(bounds: &[(f64, f64)]) -> Result<Sensitivity> {
    if bounds.is_empty() {
        return Err(Error::EmptyInput("reading bounds"));
    }
    let mut delta_f: f64 = 0.0;
    for (index, &(lower, upper)) in bounds.iter().enumerate() {
        if upper < lower {
            return Err(Error::Bounds {
                index,
                lower,
                upper,
            });
        }
        delta_f = delta_f.max(upper - lower);
    }
    Ok(Sensitivity {
        delta_f,
        delta: 2.0 * delta_f,
    })
}

/// Laplace density `exp(-|s|/λ) / 2λ`.
pub fn laplace_pdf(s: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::param("lambda", format!("{lambda} must be > 0")));
    }
    Ok((-s.abs() / lambda).exp() / (2.0 * lambda))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSample {
    pub value: f64,
    pub mechanism: Mechanism,
    pub index: u64,
}

/// Laplace(0, Δf/ε) draw by inverse CDF.
pub fn laplace_sample<R: Rng + ?Sized>(dp: &DpConfig, rng: &mut R, index: u64) -> Result<NoiseSample> {
    if !(dp.epsilon > 0.0) {
        return Err(Error::param("epsilon", format!("{} must be > 0", dp.epsilon)));
    }
    let lambda = dp.laplace_scale();
    Ok(NoiseSample {
        value: standard_laplace(rng) * lambda,
        mechanism: Mechanism::Laplace,
        index,
    })
}

fn standard_laplace<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let tail = 1.0 - 2.0 * u.abs();
        if tail > 0.0 {
            return -u.signum() * tail.ln();
        }
    }
}

/// `γ = 1 / (1 + e^{ε/2})`.
pub fn staircase_gamma(epsilon: f64) -> f64 {
    1.0 / (1.0 + (epsilon / 2.0).exp())
}

/// The random variables behind one staircase draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaircaseDraw {
    pub gamma: f64,
    pub sign: i8,
    pub g: u64,
    pub u: f64,
    pub b_bit: u8,
}

impl StaircaseDraw {
    pub fn sample<R: Rng + ?Sized>(epsilon: f64, rng: &mut R) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::param("epsilon", format!("{epsilon} must be > 0")));
        }
        let gamma = staircase_gamma(epsilon);
        let b = (-epsilon).exp();
        let sign = if rng.random::<bool>() { 1 } else { -1 };
        let g = Geometric::new(1.0 - b)
            .map_err(|e| Error::param("epsilon", e.to_string()))?
            .sample(rng);
        let u = rng.random::<f64>();
        let p_zero = gamma / (gamma + (1.0 - gamma) * b);
        let b_bit = u8::from(rng.random::<f64>() >= p_zero);
        Ok(Self {
            gamma,
            sign,
            g,
            u,
            b_bit,
        })
    }

    /// `S((1-B)(G + γU)Δf + B(G + γ + (1-γ)U)Δf)`.
    pub fn noise(&self, delta_f: f64) -> f64 {
        let g = self.g as f64;
        let magnitude = if self.b_bit == 0 {
            (g + self.gamma * self.u) * delta_f
        } else {
            (g + self.gamma + (1.0 - self.gamma) * self.u) * delta_f
        };
        f64::from(self.sign) * magnitude
    }
}

pub fn staircase_sample<R: Rng + ?Sized>(dp: &DpConfig, rng: &mut R, index: u64) -> Result<NoiseSample> {
    if !(dp.delta_f > 0.0) {
        return Err(Error::param("delta_f", format!("{} must be > 0", dp.delta_f)));
    }
    let draw = StaircaseDraw::sample(dp.epsilon, rng)?;
    Ok(NoiseSample {
        value: draw.noise(dp.delta_f),
        mechanism: Mechanism::Staircase,
        index,
    })
}

/// One draw from whichever mechanism `dp` selects (zero for `none`).
pub fn sample_noise<R: Rng + ?Sized>(dp: &DpConfig, rng: &mut R, index: u64) -> Result<NoiseSample> {
    match dp.mechanism {
        Mechanism::Laplace => laplace_sample(dp, rng, index),
        Mechanism::Staircase => staircase_sample(dp, rng, index),
        Mechanism::None => Ok(NoiseSample {
            value: 0.0,
            mechanism: Mechanism::None,
            index,
        }),
    }
}

/// SplitMix64 finalizer over `seed ^ golden * (stream + 1)`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A seeded noise source that numbers its draws.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    config: DpConfig,
    rng: ChaCha8Rng,
    next_index: u64,
}

impl NoiseStream {
    pub fn new(config: DpConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            next_index: 0,
        })
    }

    /// Stream for one experiment trial, seeded by `derive_seed(seed, trial)`.
    pub fn for_trial(config: DpConfig, trial: u64) -> Result<Self> {
        Self::new(DpConfig {
            seed: derive_seed(config.seed, trial),
            ..config
        })
    }

    pub fn config(&self) -> &DpConfig {
        &self.config
    }

    pub fn next_sample(&mut self) -> Result<NoiseSample> {
        let s = sample_noise(&self.config, &mut self.rng, self.next_index)?;
        self.next_index += 1;
        Ok(s)
    }
}

/// Adds one independent draw to every reading. The noisy readings may be
/// negative unless `dp.clamp` is set.
pub fn inject_noise(series: &MeterSeries, dp: &DpConfig) -> Result<MeterSeries> {
    Ok(inject_noise_recorded(series, dp)?.0)
}

/// Like [`inject_noise`], also returning the draws that were added.
pub fn inject_noise_recorded(series: &MeterSeries, dp: &DpConfig) -> Result<(MeterSeries, Vec<f64>)> {
    dp.validate()?;
    if dp.mechanism == Mechanism::None {
        return Ok((series.clone(), vec![0.0; series.len()]));
    }
    let mut stream = NoiseStream::new(*dp)?;
    let mut noise = Vec::with_capacity(series.len());
    let readings = series
        .readings()
        .iter()
        .map(|&y| {
            let n = stream.next_sample()?.value;
            noise.push(n);
            let noisy = y + n;
            Ok(if dp.clamp { noisy.max(0.0) } else { noisy })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((MeterSeries::new(readings)?, noise))
}
