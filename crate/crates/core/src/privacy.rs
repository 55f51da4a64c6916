//! Laplace privatization of tensors crossing the client/server boundary.
//!
//! Noise scale is `λ = V(x)/ε` where `V` measures the spread of the entries
//! being protected. Every call draws from its own ChaCha stream selected by
//! `(seed, stream_id)`, so results are reproducible and independent of the
//! order in which messages are privatized.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrivacyError {
    #[error("input contains a non-finite value")]
    NonFiniteInput,
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
}

/// How the spread `V(x)` of a tensor is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variation {
    /// Population standard deviation of the entries.
    StdDev,
    /// `max − min` of the entries.
    Range,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyConfig {
    pub epsilon: f64,
    pub enabled: bool,
    pub seed: u64,
    pub variation: Variation,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        PrivacyConfig {
            epsilon: 1.0,
            enabled: false,
            seed: 0,
            variation: Variation::StdDev,
        }
    }
}

impl PrivacyConfig {
    pub fn with_epsilon(epsilon: f64, seed: u64) -> Self {
        PrivacyConfig {
            epsilon,
            enabled: true,
            seed,
            variation: Variation::StdDev,
        }
    }
}

pub fn variation(x: &[f64], kind: Variation) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    match kind {
        Variation::StdDev => {
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
        }
        Variation::Range => {
            let (lo, hi) = x
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            hi - lo
        }
    }
}

/// Noise scale `λ` used for `x`.
pub fn noise_scale(x: &[f64], cfg: &PrivacyConfig) -> Result<f64, PrivacyError> {
    if !(cfg.epsilon > 0.0) {
        return Err(PrivacyError::InvalidEpsilon(cfg.epsilon));
    }
    Ok(variation(x, cfg.variation) / cfg.epsilon)
}

/// Inverse-CDF Laplace(0, λ) sampler over a dedicated stream.
pub struct LaplaceStream {
    rng: ChaCha20Rng,
    scale: f64,
}

impl LaplaceStream {
    pub fn new(seed: u64, stream_id: u64, scale: f64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        LaplaceStream { rng, scale }
    }

    pub fn sample(&mut self) -> f64 {
        let u: f64 = self.rng.sample::<f64, _>(Open01) - 0.5;
        -self.scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
    }
}

/// Returns `x + η`, `η ~ Laplace(0, V(x)/ε)` i.i.d.; identity when disabled
/// or when `x` has zero spread.
pub fn laplace_privatize(
    x: &[f64],
    cfg: &PrivacyConfig,
    stream_id: u64,
) -> Result<Vec<f64>, PrivacyError> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(PrivacyError::NonFiniteInput);
    }
    if !cfg.enabled {
        return Ok(x.to_vec());
    }
    let scale = noise_scale(x, cfg)?;
    if scale == 0.0 {
        return Ok(x.to_vec());
    }
    let mut stream = LaplaceStream::new(cfg.seed, stream_id, scale);
    Ok(x.iter().map(|v| v + stream.sample()).collect())
}

/// Mixes identifiers into a stream id (splitmix64 finalizer per component).
pub fn stream_id(parts: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}
