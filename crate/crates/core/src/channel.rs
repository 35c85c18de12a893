//! Single-cluster ray channel between a reconfigurable transmit antenna and
//! a receive uniform linear array.
//!
//! Each of the `K` rays carries a complex gain `β_k ~ CN(0, 1)`, departs at
//! `(θ_k^t, φ_k^t)` and arrives at `(θ_k^r, φ_k^r)`. Entry `(n, p)` of the
//! `N_r × P` channel matrix is
//!
//! ```text
//! H[n,p] = K^{-1/2} Σ_k β_k · exp(j‖k‖ d n sin θ_k^r sin φ_k^r) · √G_p e^{jΩ_p}(θ_k^t, φ_k^t)
//! ```
//!
//! with `n` counted from zero. The same rays feed every entry.

use std::f64::consts::{PI, SQRT_2, TAU};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::patterns::{Codebook, PatternError};
use crate::quadrature::{adaptive_gauss_kronrod, GaussLegendre};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("invalid angular distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid channel model: {0}")]
    InvalidModel(String),
    #[error("wavelength must be positive, got {0}")]
    NonPositiveWavelength(f64),
    #[error("need at least one receive antenna")]
    NoReceivers,
    #[error(transparent)]
    Pattern(#[from] PatternError),
}

/// Number of intervals in every sampler's CDF table.
pub const CDF_TABLE_SIZE: usize = 4096;

/// One of the four angular laws of the ray model.
///
/// All angles are radians. `TruncatedLaplacian` describes an elevation on
/// `(0, π]`; the others describe azimuths on `(−π, π]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AngularDistribution {
    /// `f(θ) ∝ exp(−√2 |θ − θ0| / σ) sin θ` on `(0, π]`.
    TruncatedLaplacian { theta0: f64, sigma: f64 },
    /// `f(φ) = exp(κ cos(φ − μ)) / (2π I0(κ))` on `(−π, π]`.
    VonMises { mu: f64, kappa: f64 },
    /// Gaussian with mean `φ0` and deviation `σ`, truncated to `(−π, π]`.
    TruncatedGaussian { phi0: f64, sigma: f64 },
    /// Flat on `[a, b] ⊆ (−π, π]`.
    Uniform { a: f64, b: f64 },
}

impl AngularDistribution {
    /// Uniform over the whole circle.
    pub const FULL_CIRCLE: Self = Self::Uniform { a: -PI, b: PI };

    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |m: String| Err(ChannelError::InvalidDistribution(m));
        match *self {
            Self::TruncatedLaplacian { theta0, sigma } => {
                if !theta0.is_finite() || !(sigma > 0.0) || !sigma.is_finite() {
                    return bad(format!("truncated Laplacian needs finite theta0 and sigma > 0, got ({theta0}, {sigma})"));
                }
            }
            Self::VonMises { mu, kappa } => {
                if !mu.is_finite() || !(kappa >= 0.0) || !kappa.is_finite() {
                    return bad(format!("von Mises needs finite mu and kappa >= 0, got ({mu}, {kappa})"));
                }
            }
            Self::TruncatedGaussian { phi0, sigma } => {
                if !phi0.is_finite() || !(sigma > 0.0) || !sigma.is_finite() {
                    return bad(format!("truncated Gaussian needs finite phi0 and sigma > 0, got ({phi0}, {sigma})"));
                }
            }
            Self::Uniform { a, b } => {
                if !(a < b) || a < -PI - 1e-12 || b > PI + 1e-12 {
                    return bad(format!("uniform law needs -pi <= a < b <= pi, got ({a}, {b})"));
                }
            }
        }
        Ok(())
    }

    /// Support interval `(lo, hi]`.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Self::TruncatedLaplacian { .. } => (0.0, PI),
            Self::Uniform { a, b } => (a, b),
            _ => (-PI, PI),
        }
    }

    /// Density at `angle`; zero outside the support.
    pub fn pdf(&self, angle: f64) -> f64 {
        let (lo, hi) = self.support();
        if !(angle >= lo && angle <= hi) {
            return 0.0;
        }
        match *self {
            Self::TruncatedLaplacian { theta0, sigma } => {
                laplacian_normalization(theta0, sigma) * laplacian_kernel(theta0, sigma, angle)
            }
            Self::VonMises { mu, kappa } => (kappa * ((angle - mu).cos() - 1.0)).exp() / (TAU * bessel_i0_scaled(kappa)),
            Self::TruncatedGaussian { phi0, sigma } => {
                let z = (angle - phi0) / sigma;
                (-0.5 * z * z).exp() / (sigma * (TAU).sqrt() * gaussian_mass(phi0, sigma))
            }
            Self::Uniform { a, b } => 1.0 / (b - a),
        }
    }

    /// Interior points where the density is not smooth.
    pub fn kinks(&self) -> Vec<f64> {
        match *self {
            Self::TruncatedLaplacian { theta0, .. } if theta0 > 0.0 && theta0 < PI => vec![theta0],
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for AngularDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::TruncatedLaplacian { theta0, sigma } => write!(f, "TruncatedLaplacian(theta0={theta0}, sigma={sigma})"),
            Self::VonMises { mu, kappa } => write!(f, "VonMises(mu={mu}, kappa={kappa})"),
            Self::TruncatedGaussian { phi0, sigma } => write!(f, "TruncatedGaussian(phi0={phi0}, sigma={sigma})"),
            Self::Uniform { a, b } => write!(f, "Uniform(a={a}, b={b})"),
        }
    }
}

fn laplacian_kernel(theta0: f64, sigma: f64, theta: f64) -> f64 {
    (-SQRT_2 * (theta - theta0).abs() / sigma).exp() * theta.sin()
}

/// Reciprocal of `∫_0^π exp(−√2|θ−θ0|/σ) sin θ dθ`, by adaptive quadrature
/// split at the cusp. The last result per thread is cached.
fn laplacian_normalization(theta0: f64, sigma: f64) -> f64 {
    thread_local! {
        static LAST: std::cell::Cell<(f64, f64, f64)> = const { std::cell::Cell::new((f64::NAN, f64::NAN, f64::NAN)) };
    }
    let (t, s, c) = LAST.get();
    if t == theta0 && s == sigma {
        return c;
    }
    let c = laplacian_normalization_uncached(theta0, sigma);
    LAST.set((theta0, sigma, c));
    c
}

fn laplacian_normalization_uncached(theta0: f64, sigma: f64) -> f64 {
    let f = |t: f64| laplacian_kernel(theta0, sigma, t);
    let mid = theta0.clamp(0.0, PI);
    let mut total = 0.0;
    for (a, b) in [(0.0, mid), (mid, PI)] {
        if b > a {
            total += adaptive_gauss_kronrod(f, a, b, 1e-300, 1e-14, 500).value;
        }
    }
    1.0 / total
}

/// Closed-form Laplacian normalization constant (valid for θ0 ∈ [0, π]).
pub fn laplacian_normalization_closed_form(theta0: f64, sigma: f64) -> f64 {
    let num = 2.0 + sigma * sigma;
    let den = 2.0 * SQRT_2 * sigma * theta0.sin()
        + 2.0 * sigma * sigma * (-PI / (SQRT_2 * sigma)).exp() * (SQRT_2 * (PI / 2.0 - theta0) / sigma).cosh();
    num / den
}

/// Probability mass of `N(φ0, σ²)` on `(−π, π]`.
fn gaussian_mass(phi0: f64, sigma: f64) -> f64 {
    let phi = |x: f64| 0.5 * libm::erfc(-x / SQRT_2);
    phi((PI - phi0) / sigma) - phi((-PI - phi0) / sigma)
}

/// `e^{−x} I0(x)` for `x ≥ 0`.
pub fn bessel_i0_scaled(x: f64) -> f64 {
    let x = x.abs();
    if x <= 30.0 {
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        while term > 1e-17 * sum {
            term *= q / (k * k);
            sum += term;
            k += 1.0;
        }
        sum * (-x).exp()
    } else {
        // Asymptotic series; the terms keep shrinking well past 1e-16 for x > 30.
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..30 {
            let kf = k as f64;
            term *= (2.0 * kf - 1.0).powi(2) / (kf * 8.0 * x);
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
        }
        sum / (TAU * x).sqrt()
    }
}

/// Inverse-CDF sampler over a precomputed table.
///
/// The CDF is tabulated at [`CDF_TABLE_SIZE`] equal sub-intervals of the
/// support and inverted by linear interpolation; a guide table makes the
/// lookup constant-time on average.
#[derive(Debug, Clone)]
pub struct AngleSampler {
    dist: AngularDistribution,
    lo: f64,
    step: f64,
    cdf: Vec<f64>,
    guide: Vec<u32>,
}

impl AngleSampler {
    pub fn new(dist: AngularDistribution) -> Result<Self, ChannelError> {
        dist.validate()?;
        let (lo, hi) = dist.support();
        let n = CDF_TABLE_SIZE;
        let step = (hi - lo) / n as f64;
        let gl = GaussLegendre::new(6);
        let kinks = dist.kinks();
        let mut cdf = Vec::with_capacity(n + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for i in 0..n {
            let a = lo + step * i as f64;
            let b = if i + 1 == n { hi } else { a + step };
            let mass = match kinks.iter().find(|&&k| k > a && k < b) {
                Some(&k) => gl.integrate(a, k, |x| dist.pdf(x)) + gl.integrate(k, b, |x| dist.pdf(x)),
                None => gl.integrate(a, b, |x| dist.pdf(x)),
            };
            acc += mass.max(0.0);
            cdf.push(acc);
        }
        if !(acc > 0.0) || !acc.is_finite() {
            return Err(ChannelError::InvalidDistribution(format!("{dist} has no probability mass")));
        }
        cdf.iter_mut().for_each(|c| *c /= acc);
        cdf[n] = 1.0;

        let mut guide = Vec::with_capacity(n + 1);
        let mut i = 0usize;
        for g in 0..=n {
            let u = g as f64 / n as f64;
            while i < n - 1 && cdf[i + 1] < u {
                i += 1;
            }
            guide.push(i as u32);
        }
        Ok(Self { dist, lo, step, cdf, guide })
    }

    pub fn distribution(&self) -> &AngularDistribution {
        &self.dist
    }

    /// Tabulated CDF at `angle` (linear between table nodes).
    pub fn cdf(&self, angle: f64) -> f64 {
        let n = self.cdf.len() - 1;
        let x = (angle - self.lo) / self.step;
        if x <= 0.0 {
            return 0.0;
        }
        if x >= n as f64 {
            return 1.0;
        }
        let i = x as usize;
        let t = x - i as f64;
        self.cdf[i] + t * (self.cdf[i + 1] - self.cdf[i])
    }

    /// Maps `u ∈ (0, 1]` to an angle in `(lo, hi]`.
    pub fn quantile(&self, u: f64) -> f64 {
        let n = self.cdf.len() - 1;
        let mut i = self.guide[((u * n as f64) as usize).min(n)] as usize;
        while i < n - 1 && self.cdf[i + 1] < u {
            i += 1;
        }
        let (c0, c1) = (self.cdf[i], self.cdf[i + 1]);
        let t = if c1 > c0 { ((u - c0) / (c1 - c0)).clamp(0.0, 1.0) } else { 1.0 };
        self.lo + self.step * (i as f64 + t)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = 1.0 - rng.random::<f64>();
        self.quantile(u)
    }
}

/// Draws one angle from `dist`. Builds a table on every call; keep an
/// [`AngleSampler`] for repeated draws.
pub fn sample<R: Rng + ?Sized>(dist: &AngularDistribution, rng: &mut R) -> Result<f64, ChannelError> {
    Ok(AngleSampler::new(*dist)?.sample(rng))
}

/// `‖k‖ = 2π/λ`.
pub fn wavevector_norm(lambda: f64) -> Result<f64, ChannelError> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(ChannelError::NonPositiveWavelength(lambda));
    }
    Ok(TAU / lambda)
}

/// Whether ray angles are redrawn for every channel use or held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fading {
    #[default]
    PerSymbol,
    Fixed,
}

impl fmt::Display for Fading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PerSymbol => "per_symbol",
            Self::Fixed => "fixed",
        })
    }
}

impl FromStr for Fading {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per_symbol" => Ok(Self::PerSymbol),
            "fixed" => Ok(Self::Fixed),
            _ => Err(format!("unknown fading mode {s:?} (expected per_symbol or fixed)")),
        }
    }
}

/// Elevation/azimuth law pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnglePair {
    pub theta: AngularDistribution,
    pub phi: AngularDistribution,
}

/// Statistical description of the ray channel.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    rays: usize,
    wavelength: f64,
    rx_spacing: f64,
    aod: AnglePair,
    aoa: AnglePair,
    samplers: [AngleSampler; 4],
}

impl PartialEq for ChannelModel {
    fn eq(&self, other: &Self) -> bool {
        self.rays == other.rays
            && self.wavelength == other.wavelength
            && self.rx_spacing == other.rx_spacing
            && self.aod == other.aod
            && self.aoa == other.aoa
    }
}

impl ChannelModel {
    /// `rx_spacing` and `wavelength` share a unit (metres).
    pub fn new(rays: usize, wavelength: f64, rx_spacing: f64, aod: AnglePair, aoa: AnglePair) -> Result<Self, ChannelError> {
        if rays == 0 {
            return Err(ChannelError::InvalidModel("ray count K must be at least 1".into()));
        }
        wavevector_norm(wavelength)?;
        if !(rx_spacing >= 0.0) || !rx_spacing.is_finite() {
            return Err(ChannelError::InvalidModel(format!("receive spacing must be >= 0, got {rx_spacing}")));
        }
        let samplers = [
            AngleSampler::new(aod.theta)?,
            AngleSampler::new(aod.phi)?,
            AngleSampler::new(aoa.theta)?,
            AngleSampler::new(aoa.phi)?,
        ];
        Ok(Self { rays, wavelength, rx_spacing, aod, aoa, samplers })
    }

    pub fn rays(&self) -> usize {
        self.rays
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn rx_spacing(&self) -> f64 {
        self.rx_spacing
    }

    pub fn aod(&self) -> &AnglePair {
        &self.aod
    }

    pub fn aoa(&self) -> &AnglePair {
        &self.aoa
    }

    /// Same model with a different ray count (tables are reused).
    pub fn with_rays(&self, rays: usize) -> Result<Self, ChannelError> {
        if rays == 0 {
            return Err(ChannelError::InvalidModel("ray count K must be at least 1".into()));
        }
        Ok(Self { rays, ..self.clone() })
    }

    /// `‖k‖ d`, the receive phase per unit of `sin θ^r sin φ^r` between
    /// adjacent elements.
    pub fn rx_phase_scale(&self) -> f64 {
        TAU / self.wavelength * self.rx_spacing
    }

    fn draw_beta<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    }

    /// Draws the four angles of one ray in the order θ^t, φ^t, θ^r, φ^r.
    pub fn draw_ray_angles<R: Rng + ?Sized>(&self, rng: &mut R) -> RayAngles {
        RayAngles {
            theta_t: self.samplers[0].sample(rng),
            phi_t: self.samplers[1].sample(rng),
            theta_r: self.samplers[2].sample(rng),
            phi_r: self.samplers[3].sample(rng),
        }
    }
}

/// Departure and arrival angles of a single ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayAngles {
    pub theta_t: f64,
    pub phi_t: f64,
    pub theta_r: f64,
    pub phi_r: f64,
}

/// Deterministic part of a channel realization: per-ray pattern amplitudes
/// and receive steering phases for a fixed set of ray angles.
#[derive(Debug, Clone)]
pub struct RayGeometry {
    n_r: usize,
    n_p: usize,
    /// `tx[k * P + p]` = `√G_p e^{jΩ_p}` at ray `k`.
    tx: Vec<Complex64>,
    /// `rx[k * N_r + n]` = receive steering phase of element `n` for ray `k`.
    rx: Vec<Complex64>,
}

impl RayGeometry {
    pub fn new(model: &ChannelModel, codebook: &Codebook, n_r: usize, rays: &[RayAngles]) -> Result<Self, ChannelError> {
        if n_r == 0 {
            return Err(ChannelError::NoReceivers);
        }
        let n_p = codebook.len();
        let scale = model.rx_phase_scale();
        let mut tx = Vec::with_capacity(rays.len() * n_p);
        let mut rx = Vec::with_capacity(rays.len() * n_r);
        for ray in rays {
            for rp in codebook.patterns() {
                tx.push(rp.eval(ray.theta_t, ray.phi_t)?);
            }
            let step = scale * ray.theta_r.sin() * ray.phi_r.sin();
            rx.extend((0..n_r).map(|n| Complex64::from_polar(1.0, step * n as f64)));
        }
        Ok(Self { n_r, n_p, tx, rx })
    }

    pub fn rays(&self) -> usize {
        self.tx.len() / self.n_p.max(1)
    }

    /// Mean of `|H[n,p]|²` over the ray gains, `K^{-1} Σ_k G_p(ray k)`.
    pub fn mean_power(&self, p: usize) -> f64 {
        let k = self.rays();
        (0..k).map(|i| self.tx[i * self.n_p + p].norm_sqr()).sum::<f64>() / k as f64
    }

    /// Channel for the given ray gains (`betas.len()` must equal the ray count).
    pub fn channel(&self, betas: &[Complex64]) -> ChannelMatrix {
        let k = self.rays();
        debug_assert_eq!(betas.len(), k);
        let norm = 1.0 / (k as f64).sqrt();
        let mut h = ChannelMatrix::zeros(self.n_r, self.n_p);
        for (i, &b) in betas.iter().enumerate() {
            let b = b * norm;
            let tx = &self.tx[i * self.n_p..(i + 1) * self.n_p];
            let rx = &self.rx[i * self.n_r..(i + 1) * self.n_r];
            for (n, &r) in rx.iter().enumerate() {
                let br = b * r;
                for (p, &t) in tx.iter().enumerate() {
                    h.entries[n * self.n_p + p] += br * t;
                }
            }
        }
        h
    }

    /// Draws fresh ray gains and returns the channel.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, betas: &mut Vec<Complex64>) -> ChannelMatrix {
        betas.clear();
        betas.extend((0..self.rays()).map(|_| ChannelModel::draw_beta(rng)));
        self.channel(betas)
    }
}

/// Complex `N_r × P` channel matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    n_r: usize,
    n_p: usize,
    entries: Vec<Complex64>,
}

impl ChannelMatrix {
    pub fn zeros(n_r: usize, n_p: usize) -> Self {
        Self { n_r, n_p, entries: vec![Complex64::new(0.0, 0.0); n_r * n_p] }
    }

    pub fn from_rows(rows: Vec<Vec<Complex64>>) -> Result<Self, ChannelError> {
        let n_r = rows.len();
        let n_p = rows.first().map_or(0, Vec::len);
        if n_r == 0 || n_p == 0 || rows.iter().any(|r| r.len() != n_p) {
            return Err(ChannelError::InvalidModel("channel rows must be non-empty and equally long".into()));
        }
        if rows.iter().flatten().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(ChannelError::InvalidModel("channel entries must be finite".into()));
        }
        Ok(Self { n_r, n_p, entries: rows.into_iter().flatten().collect() })
    }

    /// `(N_r, P)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.n_r, self.n_p)
    }

    pub fn get(&self, n: usize, p: usize) -> Complex64 {
        self.entries[n * self.n_p + p]
    }

    /// Column `p`, i.e. `H e_p`.
    pub fn column(&self, p: usize) -> impl Iterator<Item = Complex64> + '_ {
        (0..self.n_r).map(move |n| self.entries[n * self.n_p + p])
    }
}

/// Draws one channel realization with `K` fresh rays.
///
/// Per ray the random stream is consumed in the order: `Re β`, `Im β`,
/// `θ^t`, `φ^t`, `θ^r`, `φ^r`.
pub fn draw_channel<R: Rng + ?Sized>(
    model: &ChannelModel,
    codebook: &Codebook,
    n_r: usize,
    rng: &mut R,
) -> Result<ChannelMatrix, ChannelError> {
    if n_r == 0 {
        return Err(ChannelError::NoReceivers);
    }
    // Same arithmetic as `RayGeometry::channel`, without the per-ray buffers.
    let n_p = codebook.len();
    let scale = model.rx_phase_scale();
    let norm = 1.0 / (model.rays as f64).sqrt();
    let mut h = ChannelMatrix::zeros(n_r, n_p);
    let mut tx = vec![Complex64::new(0.0, 0.0); n_p];
    for _ in 0..model.rays {
        let b = ChannelModel::draw_beta(rng) * norm;
        let ray = model.draw_ray_angles(rng);
        for (t, rp) in tx.iter_mut().zip(codebook.patterns()) {
            *t = rp.eval(ray.theta_t, ray.phi_t)?;
        }
        let step = scale * ray.theta_r.sin() * ray.phi_r.sin();
        for n in 0..n_r {
            let br = b * Complex64::from_polar(1.0, step * n as f64);
            for (p, &t) in tx.iter().enumerate() {
                h.entries[n * n_p + p] += br * t;
            }
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::RadiationPattern;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn laws() -> Vec<AngularDistribution> {
        vec![
            AngularDistribution::TruncatedLaplacian { theta0: PI / 2.0, sigma: 0.5 },
            AngularDistribution::TruncatedLaplacian { theta0: 0.3, sigma: 0.2 },
            AngularDistribution::TruncatedLaplacian { theta0: 2.9, sigma: 1.7 },
            AngularDistribution::VonMises { mu: 1.0, kappa: 5.0 },
            AngularDistribution::VonMises { mu: -3.0, kappa: 0.0 },
            AngularDistribution::VonMises { mu: 0.2, kappa: 80.0 },
            AngularDistribution::TruncatedGaussian { phi0: 0.4, sigma: 0.3 },
            AngularDistribution::TruncatedGaussian { phi0: 3.0, sigma: 2.0 },
            AngularDistribution::Uniform { a: -1.0, b: 2.0 },
            AngularDistribution::FULL_CIRCLE,
        ]
    }

    /// Independent normalization check: adaptive quadrature split at the
    /// support interior kinks, plus the 1e-6 acceptance tolerance.
    fn total_mass(d: &AngularDistribution) -> f64 {
        let (lo, hi) = d.support();
        let mut edges = vec![lo];
        edges.extend(d.kinks());
        edges.push(hi);
        edges
            .windows(2)
            .map(|w| adaptive_gauss_kronrod(|x| d.pdf(x), w[0], w[1], 1e-14, 1e-12, 2000).value)
            .sum()
    }

    #[test]
    fn every_law_integrates_to_one() {
        for d in laws() {
            let m = total_mass(&d);
            assert!((m - 1.0).abs() < 1e-6, "{d}: mass {m}");
        }
    }

    #[test]
    fn uniform_and_flat_von_mises_are_one_over_two_pi() {
        let u = AngularDistribution::FULL_CIRCLE;
        let v = AngularDistribution::VonMises { mu: 0.7, kappa: 0.0 };
        for a in [-3.0, -0.5, 0.0, 1.0, 3.1] {
            assert_relative_eq!(u.pdf(a), 1.0 / TAU, epsilon = 1e-15);
            assert_relative_eq!(v.pdf(a), 1.0 / TAU, epsilon = 1e-15);
        }
        assert_eq!(u.pdf(4.0), 0.0);
    }

    #[test]
    fn laplacian_numeric_and_closed_form_normalizations_agree() {
        for &(t0, s) in &[(PI / 2.0, 0.5), (0.3, 0.2), (2.9, 1.7), (1.0, 0.05), (0.0, 0.7)] {
            let numeric = laplacian_normalization(t0, s);
            let closed = laplacian_normalization_closed_form(t0, s);
            assert_relative_eq!(numeric, closed, max_relative = 1e-10);
        }
    }

    #[test]
    fn bessel_i0_matches_integral_representation() {
        for x in [0.0, 0.5, 3.0, 12.0, 29.9, 30.1, 55.0, 400.0] {
            // I0(x) e^{-x} = (1/π) ∫_0^π e^{x (cos t - 1)} dt
            let r = adaptive_gauss_kronrod(|t: f64| (x * (t.cos() - 1.0)).exp(), 0.0, PI, 0.0, 1e-14, 1000);
            assert_relative_eq!(bessel_i0_scaled(x), r.value / PI, max_relative = 1e-12);
        }
    }

    #[test]
    fn wavevector_examples() {
        assert_relative_eq!(wavevector_norm(1.0).unwrap(), TAU);
        assert_relative_eq!(wavevector_norm(TAU).unwrap(), 1.0);
        assert_relative_eq!(wavevector_norm(0.125).unwrap(), 50.26548245743669, epsilon = 1e-12);
        assert!(wavevector_norm(0.0).is_err());
        assert!(wavevector_norm(-1.0).is_err());
    }

    #[test]
    fn invalid_laws_are_rejected() {
        assert!(AngleSampler::new(AngularDistribution::VonMises { mu: 0.0, kappa: -1.0 }).is_err());
        assert!(AngleSampler::new(AngularDistribution::Uniform { a: 1.0, b: 1.0 }).is_err());
        assert!(AngleSampler::new(AngularDistribution::Uniform { a: -4.0, b: 1.0 }).is_err());
        assert!(AngleSampler::new(AngularDistribution::TruncatedGaussian { phi0: 0.0, sigma: 0.0 }).is_err());
    }

    #[test]
    fn uniform_sample_mean() {
        let s = AngleSampler::new(AngularDistribution::Uniform { a: -1.0, b: 2.0 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 1_000_000;
        let mean = (0..n).map(|_| s.sample(&mut rng)).sum::<f64>() / n as f64;
        let se = (9.0f64 / 12.0).sqrt() / (n as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn laplacian_samples_stay_in_support() {
        let s = AngleSampler::new(AngularDistribution::TruncatedLaplacian { theta0: 0.05, sigma: 0.02 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200_000 {
            let t = s.sample(&mut rng);
            assert!(t > 0.0 && t <= PI, "{t}");
        }
        assert!(s.quantile(1.0) <= PI);
        assert!(s.quantile(f64::MIN_POSITIVE) > 0.0);
    }

    #[test]
    fn von_mises_passes_ks() {
        let d = AngularDistribution::VonMises { mu: 1.0, kappa: 5.0 };
        let stat = ks_statistic(&d, 100_000, 3);
        // Critical value at the 1% level.
        assert!(stat < 1.6276 / (100_000f64).sqrt(), "D = {stat}");
    }

    /// Kolmogorov–Smirnov distance between `n` draws and the CDF obtained by
    /// integrating the pdf between consecutive sorted samples.
    pub(crate) fn ks_statistic(d: &AngularDistribution, n: usize, seed: u64) -> f64 {
        let s = AngleSampler::new(*d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs: Vec<f64> = (0..n).map(|_| s.sample(&mut rng)).collect();
        xs.sort_by(f64::total_cmp);
        let gl = GaussLegendre::new(8);
        let kinks = d.kinks();
        let mut prev = d.support().0;
        let mut cdf = 0.0;
        let mut worst: f64 = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            let mut a = prev;
            for &k in &kinks {
                if k > a && k < x {
                    cdf += gl.integrate(a, k, |t| d.pdf(t));
                    a = k;
                }
            }
            if x > a {
                cdf += gl.integrate(a, x, |t| d.pdf(t));
            }
            prev = x;
            let hi = (i + 1) as f64 / n as f64;
            let lo = i as f64 / n as f64;
            worst = worst.max((hi - cdf).abs()).max((cdf - lo).abs());
        }
        worst
    }

    #[test]
    fn single_isotropic_ray_channel_is_the_ray_gain() {
        let model = iso_model(1, 0.0625);
        let cb = Codebook::new(vec![RadiationPattern::isotropic()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut twin = rng.clone();
        let h = draw_channel(&model, &cb, 1, &mut rng).unwrap();
        let re: f64 = rand::Rng::sample(&mut twin, StandardNormal);
        let im: f64 = rand::Rng::sample(&mut twin, StandardNormal);
        let beta = Complex64::new(re, im) / SQRT_2;
        assert_eq!(h.shape(), (1, 1));
        assert_relative_eq!(h.get(0, 0).re, beta.re, epsilon = 1e-15);
        assert_relative_eq!(h.get(0, 0).im, beta.im, epsilon = 1e-15);
    }

    fn iso_model(k: usize, d: f64) -> ChannelModel {
        let pair = AnglePair {
            theta: AngularDistribution::TruncatedLaplacian { theta0: PI / 2.0, sigma: 0.5 },
            phi: AngularDistribution::FULL_CIRCLE,
        };
        ChannelModel::new(k, 0.125, d, pair, pair).unwrap()
    }

    #[test]
    fn channel_shape_follows_receivers_and_codebook() {
        let model = iso_model(8, 0.0625);
        let cb = Codebook::new(vec![RadiationPattern::isotropic(); 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(draw_channel(&model, &cb, 2, &mut rng).unwrap().shape(), (2, 3));
        assert!(matches!(draw_channel(&model, &cb, 0, &mut rng), Err(ChannelError::NoReceivers)));
    }

    #[test]
    fn unit_gain_patterns_give_unit_average_energy() {
        let model = iso_model(64, 0.0625);
        let cb = Codebook::new(vec![RadiationPattern::isotropic()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let h = draw_channel(&model, &cb, 2, &mut rng).unwrap();
            let e = h.get(1, 0).norm_sqr();
            s += e;
            s2 += e * e;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    /// Patterns lit on opposite azimuth half-planes.
    fn half_plane_pair() -> Codebook {
        let theta = vec![0.0, PI];
        let phi: Vec<f64> = (0..360).map(|j| (-179.0 + j as f64).to_radians()).collect();
        let upper: Vec<f64> = phi.iter().map(|&p| if p > 0.01 && p < PI - 0.01 { 2.0 } else { 0.0 }).collect();
        let lower: Vec<f64> = phi.iter().map(|&p| if p < -0.01 && p > -PI + 0.01 { 2.0 } else { 0.0 }).collect();
        let mk = |g: &Vec<f64>| {
            let gain = [g.clone(), g.clone()].concat();
            RadiationPattern::new(theta.clone(), phi.clone(), gain, vec![0.3; 720], "half").unwrap()
        };
        Codebook::new(vec![mk(&upper), mk(&lower)]).unwrap()
    }

    #[test]
    fn disjoint_patterns_give_uncorrelated_columns() {
        let model = iso_model(16, 0.0625);
        let cb = half_plane_pair();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 50_000;
        let mut corr = Complex64::new(0.0, 0.0);
        let mut sq = 0.0;
        let mut p0 = 0.0;
        for _ in 0..n {
            let h = draw_channel(&model, &cb, 1, &mut rng).unwrap();
            let c = h.get(0, 0) * h.get(0, 1).conj();
            corr += c;
            sq += c.norm_sqr();
            p0 += h.get(0, 0).norm_sqr();
        }
        let nf = n as f64;
        let mean = corr / nf;
        let se = (sq / nf / nf).sqrt();
        assert!(p0 / nf > 0.5, "column 0 carries power");
        assert!(mean.norm() < 4.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn received_power_is_exponential_given_the_angles() {
        let model = iso_model(12, 0.0625);
        let cb = Codebook::new(vec![crate::patterns::synth_array_pattern(&crate::patterns::ExcitationMatrix::B, 0.5).unwrap()])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rays: Vec<RayAngles> = (0..12).map(|_| model.draw_ray_angles(&mut rng)).collect();
        let geo = RayGeometry::new(&model, &cb, 1, &rays).unwrap();
        let mean = geo.mean_power(0);
        let mut betas = Vec::new();
        let n = 20_000;
        let mut g: Vec<f64> = (0..n).map(|_| geo.draw(&mut rng, &mut betas).get(0, 0).norm_sqr() / mean).collect();
        g.sort_by(f64::total_cmp);
        let d = g
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = 1.0 - (-x).exp();
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < 1.6276 / (n as f64).sqrt(), "D = {d}");
    }

    proptest! {
        #[test]
        fn quantile_inverts_the_table(u in 1e-9..1.0f64, which in 0usize..10) {
            let s = AngleSampler::new(laws()[which]).unwrap();
            let x = s.quantile(u);
            let (lo, hi) = s.distribution().support();
            prop_assert!(x > lo && x <= hi);
            prop_assert!((s.cdf(x) - u).abs() < 1e-9);
        }
    }
}
