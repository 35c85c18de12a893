//! Simulated bit-error-rate experiments.
//!
//! Each SNR point is simulated in fixed-size blocks of trials. Block `b` of
//! SNR point `i` draws from its own ChaCha8 stream `(i << 40) | b` under the
//! master seed, and blocks run in rounds of [`ROUND_BLOCKS`] whose counts are
//! added in block order. The stopping rule is checked only between rounds, so
//! a curve depends on the seed and configuration but never on the number of
//! worker threads.
//!
//! Within a trial the stream is consumed in the order: word label, channel
//! (see [`crate::channel::draw_channel`]), receiver noise.

use std::io;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{draw_channel, ChannelError, ChannelModel, Fading, RayGeometry};
use crate::modem::{bits_per_word, hamming, ml_detect, transmit, word_from_label, Constellation, ModemError};
use crate::patterns::Codebook;

/// Trials per block.
pub const BLOCK_TRIALS: u64 = 2048;

/// Blocks per round; the stopping rule is evaluated between rounds.
pub const ROUND_BLOCKS: u64 = 8;

/// Two-sided 95% standard normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Stream reserved for the ray angles of a `fixed` fading experiment.
const FIXED_RAYS_STREAM: u64 = u64::MAX;

#[derive(Debug, Error)]
pub enum MonteCarloError {
    #[error("invalid experiment: {0}")]
    InvalidConfig(String),
    #[error("need at least two points with positive BER in the window, found {0}")]
    TooFewPoints(usize),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Modem(#[from] ModemError),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A complete simulation description.
#[derive(Debug, Clone)]
pub struct SmConfig {
    pub codebook: Codebook,
    pub channel: ChannelModel,
    pub n_r: usize,
    pub constellation: Constellation,
    pub snr_grid_db: Vec<f64>,
    pub max_trials: u64,
    pub target_errors: u64,
    pub seed: u64,
    pub fading: Fading,
}

impl SmConfig {
    pub fn validate(&self) -> Result<(), MonteCarloError> {
        let bad = |m: String| Err(MonteCarloError::InvalidConfig(m));
        if self.snr_grid_db.is_empty() {
            return bad("SNR grid is empty".into());
        }
        if let Some(s) = self.snr_grid_db.iter().find(|s| !s.is_finite()) {
            return bad(format!("SNR value {s} is not finite"));
        }
        if self.max_trials == 0 {
            return bad("max_trials must be at least 1".into());
        }
        if self.target_errors == 0 {
            return bad("target_errors must be at least 1".into());
        }
        if self.n_r == 0 {
            return bad("need at least one receive antenna".into());
        }
        let bits = bits_per_word(self.codebook.len(), &self.constellation)?;
        if bits == 0 {
            return bad("a single hypothesis carries no bits".into());
        }
        Ok(())
    }

    /// `log2 P + log2 M`.
    pub fn bits_per_word(&self) -> usize {
        bits_per_word(self.codebook.len(), &self.constellation).unwrap_or(0)
    }
}

/// One SNR point of a BER curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub snr_db: f64,
    pub trials: u64,
    pub bit_errors: u64,
    pub ber: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl BerPoint {
    /// Builds the point from raw counts with a 95% Wilson interval over
    /// `trials * bits_per_word` bits.
    pub fn from_counts(snr_db: f64, trials: u64, bit_errors: u64, bits_per_word: usize) -> Self {
        let n = (trials * bits_per_word as u64) as f64;
        let ber = if n > 0.0 { bit_errors as f64 / n } else { 0.0 };
        let (ci_lo, ci_hi) = wilson_interval(bit_errors, trials * bits_per_word as u64, Z_95);
        Self { snr_db, trials, bit_errors, ber, ci_lo, ci_hi }
    }

    /// True when the two 95% intervals do not overlap.
    pub fn separated_from(&self, other: &BerPoint) -> bool {
        self.ci_hi < other.ci_lo || other.ci_hi < self.ci_lo
    }
}

/// Simulated bit error rate against SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct BerCurve {
    pub bits_per_word: usize,
    pub points: Vec<BerPoint>,
}

/// Wilson score interval for `k` successes in `n` trials. Returns `(0, 1)`
/// when `n = 0`.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let (k, n) = (k as f64, n as f64);
    let z2 = z * z;
    let denom = n + z2;
    let centre = (k + 0.5 * z2) / denom;
    let half = z / denom * (k * (n - k) / n + 0.25 * z2).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Standard normal quantile `Φ⁻¹(p)` for `p` in `(0, 1)`, by bisection on
/// `Φ(x) = erfc(−x/√2)/2`.
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile level {p} outside (0, 1)");
    let cdf = |x: f64| 0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2);
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Runs the experiment described by `cfg`.
pub fn simulate_ber(cfg: &SmConfig) -> Result<BerCurve, MonteCarloError> {
    cfg.validate()?;
    let bits = cfg.bits_per_word();
    let fixed = match cfg.fading {
        Fading::PerSymbol => None,
        Fading::Fixed => {
            let mut rng = stream(cfg.seed, FIXED_RAYS_STREAM);
            let rays: Vec<_> = (0..cfg.channel.rays()).map(|_| cfg.channel.draw_ray_angles(&mut rng)).collect();
            Some(RayGeometry::new(&cfg.channel, &cfg.codebook, cfg.n_r, &rays)?)
        }
    };
    let mut points = Vec::with_capacity(cfg.snr_grid_db.len());
    for (i, &snr_db) in cfg.snr_grid_db.iter().enumerate() {
        let rho = 10f64.powf(snr_db / 10.0);
        let (mut trials, mut errors) = (0u64, 0u64);
        let mut next_block = 0u64;
        while errors < cfg.target_errors && trials < cfg.max_trials {
            let remaining = cfg.max_trials - trials;
            let blocks: Vec<(u64, u64)> = (0..ROUND_BLOCKS)
                .map(|j| {
                    let start = j * BLOCK_TRIALS;
                    (next_block + j, remaining.saturating_sub(start).min(BLOCK_TRIALS))
                })
                .filter(|&(_, n)| n > 0)
                .collect();
            next_block += ROUND_BLOCKS;
            let counts = blocks
                .par_iter()
                .map(|&(b, n)| run_block(cfg, fixed.as_ref(), rho, ((i as u64) << 40) | b, n))
                .collect::<Result<Vec<_>, _>>()?;
            for (t, e) in counts {
                trials += t;
                errors += e;
            }
        }
        points.push(BerPoint::from_counts(snr_db, trials, errors, bits));
    }
    Ok(BerCurve { bits_per_word: bits, points })
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Simulates `n` trials on one stream; returns `(trials, bit_errors)`.
fn run_block(
    cfg: &SmConfig,
    fixed: Option<&RayGeometry>,
    rho: f64,
    stream_id: u64,
    n: u64,
) -> Result<(u64, u64), MonteCarloError> {
    let mut rng = stream(cfg.seed, stream_id);
    let n_words = (cfg.codebook.len() * cfg.constellation.len()) as u32;
    let c = &cfg.constellation;
    let mut betas = Vec::with_capacity(cfg.channel.rays());
    let mut noise = vec![Complex64::new(0.0, 0.0); cfg.n_r];
    let mut errors = 0u64;
    for _ in 0..n {
        let sent = word_from_label(rng.random_range(0..n_words), cfg.codebook.len(), c)?;
        let h = match fixed {
            Some(g) => g.draw(&mut rng, &mut betas),
            None => draw_channel(&cfg.channel, &cfg.codebook, cfg.n_r, &mut rng)?,
        };
        for z in noise.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *z = Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2;
        }
        let obs = transmit(&h, sent, c, rho, &noise)?;
        errors += hamming(sent, ml_detect(&obs, &h, c), c) as u64;
    }
    Ok((n, errors))
}

/// Negated least-squares slope of `log10 BER` against `log10 ρ` over the
/// points whose SNR lies in `[lo_db, hi_db]`. Points with zero errors are
/// skipped.
pub fn estimate_diversity(curve: &BerCurve, lo_db: f64, hi_db: f64) -> Result<f64, MonteCarloError> {
    let pts: Vec<(f64, f64)> = curve
        .points
        .iter()
        .filter(|p| p.snr_db >= lo_db && p.snr_db <= hi_db && p.ber > 0.0)
        .map(|p| (p.snr_db / 10.0, p.ber.log10()))
        .collect();
    if pts.len() < 2 {
        return Err(MonteCarloError::TooFewPoints(pts.len()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(MonteCarloError::TooFewPoints(1));
    }
    Ok(-sxy / sxx)
}

/// Writes `snr_db,trials,bit_errors,ber,ci_lo,ci_hi`, one row per point.
pub fn write_ber_csv<W: io::Write>(curve: &BerCurve, out: W) -> Result<(), MonteCarloError> {
    let mut w = csv::Writer::from_writer(out);
    for p in &curve.points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows written by [`write_ber_csv`].
pub fn read_ber_csv<R: io::Read>(input: R) -> Result<Vec<BerPoint>, MonteCarloError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
