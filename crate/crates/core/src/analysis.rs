//! Analytical pairwise and bit error probabilities.
//!
//! Every bound is driven by the pattern-difference kernel
//! `ψ = |G_q x_n − G_p x_m|²` evaluated at the departure angles. Averaging
//! over the departure law gives either the scalar `Θ = E[ψ]` (infinite-ray
//! expressions) or the moment generating function `M(s) = E[e^{−sψ}]`
//! (finite-ray expressions). Both come from one tensor quadrature table,
//! built in probability space so that nodes follow the mass of the law.
//!
//! With one receive antenna and `K` rays the average pairwise error
//! probability is
//!
//! ```text
//! APEP = (1/π) ∫_0^{π/2} ∫_0^∞ e^{−z} M(z ρ / (4K sin²ϑ))^K dz dϑ
//! ```
//!
//! and its high-SNR form is `(1/ρ) ∫_0^∞ M(z/K)^K dz`. As `K → ∞`,
//! `M(s/K)^K → e^{−sΘ}` and the closed forms `½(1 − √(ρΘ/(ρΘ+4)))` and
//! `1/(ρΘ)` follow. For `N_r` receive antennas the high-SNR bound is
//! `α_N / (ρ^N Θ^N E{F})` with `E{F}` built from the arrival-angle moments
//! `E1..E4`.

use std::cell::OnceCell;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use thiserror::Error;

use crate::channel::{AngleSampler, AngularDistribution, AnglePair, ChannelError, ChannelModel};
use crate::modem::{hamming, Constellation, TxWord};
use crate::patterns::{Codebook, PatternError};
use crate::quadrature::{adaptive_gauss_kronrod, composite_rule, GaussLegendre};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("hypotheses ({p},{m}) and ({q},{n}) are indistinguishable (Theta = {theta:e}); the bound is infinite")]
    DegenerateHypothesis { p: usize, m: usize, q: usize, n: usize, theta: f64 },
    #[error("receive branches are fully correlated (E{{F}} = {0:e}); the bound is infinite")]
    DegenerateArray(f64),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid analysis settings: {0}")]
    InvalidSettings(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Pattern(#[from] PatternError),
}

/// Relative size below which `Θ` or `E{F}` counts as zero.
pub const DEGENERACY_TOL: f64 = 1e-10;

/// Quadrature controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisSettings {
    /// Nodes over the elevation law.
    pub quad_theta_nodes: usize,
    /// Nodes over the azimuth law.
    pub quad_phi_nodes: usize,
    /// Nodes over the Craig angle `ϑ ∈ (0, π/2)`.
    pub quad_craig_nodes: usize,
    /// Nodes per decade of the auxiliary variable `z`.
    pub quad_z_nodes: usize,
    /// Upper truncation of the `z` integral, where `e^{−z}` has decayed.
    pub z_cutoff: f64,
    pub rel_tol: f64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self::with_rel_tol(1e-3)
    }
}

impl AnalysisSettings {
    /// Defaults with `z_cutoff` chosen so that `e^{−z_cutoff} = rel_tol · 10⁻²`.
    pub fn with_rel_tol(rel_tol: f64) -> Self {
        Self {
            quad_theta_nodes: 128,
            quad_phi_nodes: 128,
            quad_craig_nodes: 64,
            quad_z_nodes: 40,
            z_cutoff: (1.0 / (rel_tol * 1e-2)).ln(),
            rel_tol,
        }
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        let bad = |m: String| Err(AnalysisError::InvalidSettings(m));
        for (name, n) in [
            ("quad_theta_nodes", self.quad_theta_nodes),
            ("quad_phi_nodes", self.quad_phi_nodes),
            ("quad_craig_nodes", self.quad_craig_nodes),
            ("quad_z_nodes", self.quad_z_nodes),
        ] {
            if n < 8 {
                return bad(format!("{name} must be at least 8, got {n}"));
            }
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 0.1) {
            return bad(format!("rel_tol must lie in (0, 0.1), got {}", self.rel_tol));
        }
        if !(self.z_cutoff > 0.0) || !self.z_cutoff.is_finite() {
            return bad(format!("z_cutoff must be positive, got {}", self.z_cutoff));
        }
        Ok(())
    }

    fn halved(&self) -> Self {
        Self {
            quad_theta_nodes: self.quad_theta_nodes / 2,
            quad_phi_nodes: self.quad_phi_nodes / 2,
            quad_craig_nodes: self.quad_craig_nodes / 2,
            quad_z_nodes: self.quad_z_nodes / 2,
            ..*self
        }
    }
}

/// Quadrature value with an error estimate from a half-resolution rerun.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, error: 0.0, converged: true }
    }

    fn compare(full: f64, coarse: f64, rel_tol: f64) -> Self {
        let error = (full - coarse).abs();
        Self { value: full, error, converged: error <= rel_tol * full.abs() || error <= 1e-300 }
    }
}

/// Which analytical expression to use for each pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundKind {
    /// Finite-`K` integral; one receive antenna only.
    Exact,
    /// Finite-`K` high-SNR integral for one antenna, infinite-`K` diversity
    /// bound otherwise.
    HighSnr,
    /// Infinite-`K` closed form for one antenna, diversity bound otherwise.
    Asymptotic,
    /// Infinite-`K` high-SNR diversity bound `α_N/(ρΘ)^N E{F}`.
    AsymptoticHighSnr,
}

impl BoundKind {
    pub const ALL: [Self; 4] = [Self::Exact, Self::HighSnr, Self::Asymptotic, Self::AsymptoticHighSnr];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::HighSnr => "high_snr",
            Self::Asymptotic => "asymptotic",
            Self::AsymptoticHighSnr => "asymptotic_high_snr",
        }
    }

    pub fn supports(&self, n_r: usize) -> bool {
        match self {
            Self::Exact => n_r == 1,
            _ => (1..=3).contains(&n_r),
        }
    }
}

impl fmt::Display for BoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BoundKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown bound kind {s:?} (expected exact, high_snr, asymptotic or asymptotic_high_snr)"))
    }
}

/// Discrete probability rule `Σ w_i g(x_i) ≈ E[g(X)]`, weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularRule {
    nodes: Vec<(f64, f64)>,
}

impl AngularRule {
    /// Gauss–Legendre in probability space: `E[g(X)] = ∫_0^1 g(F^{-1}(u)) du`.
    pub fn from_distribution(dist: &AngularDistribution, n: usize) -> Result<Self, AnalysisError> {
        let sampler = AngleSampler::new(*dist)?;
        Ok(Self::from_sampler(&sampler, n))
    }

    pub fn from_sampler(sampler: &AngleSampler, n: usize) -> Self {
        let nodes = composite_rule(0.0, 1.0, &[], n)
            .into_iter()
            .map(|(u, w)| (sampler.quantile(u), w))
            .collect();
        Self { nodes }
    }

    /// All mass at one angle.
    pub fn degenerate(angle: f64) -> Self {
        Self { nodes: vec![(angle, 1.0)] }
    }

    pub fn nodes(&self) -> &[(f64, f64)] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Gauss–Legendre order used inside each pattern grid cell.
const CELL_ORDER: usize = 2;

/// Relative width of the bins that compress the law of `ψ`.
const PSI_BIN_WIDTH: f64 = 1e-3;

/// Rule over one departure law with panels aligned to `breakpoints` (the
/// pattern grid lines). Every segment carrying probability gets at least one
/// panel of `order` nodes; `extra` further nodes are spread in proportion to
/// segment mass so concentrated laws stay resolved.
fn aligned_rule(dist: &AngularDistribution, breakpoints: &[f64], extra: usize, order: usize) -> Result<AngularRule, AnalysisError> {
    let sampler = AngleSampler::new(*dist)?;
    let (lo, hi) = dist.support();
    let mut edges: Vec<f64> = breakpoints.iter().copied().chain(dist.kinks()).filter(|&x| x > lo && x < hi).collect();
    edges.push(lo);
    edges.push(hi);
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    let gl = GaussLegendre::new(order);
    let mut nodes = Vec::new();
    for seg in edges.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let mass = sampler.cdf(b) - sampler.cdf(a);
        if mass <= 1e-16 {
            continue;
        }
        let panels = ((mass * extra as f64) / order as f64).ceil().max(1.0) as usize;
        let h = (b - a) / panels as f64;
        for j in 0..panels {
            let pa = a + h * j as f64;
            let pb = if j + 1 == panels { b } else { pa + h };
            nodes.extend(gl.mapped(pa, pb).map(|(x, w)| (x, w * dist.pdf(x))).filter(|n| n.1 > 0.0));
        }
    }
    let total: f64 = nodes.iter().map(|n| n.1).sum();
    nodes.iter_mut().for_each(|n| n.1 /= total);
    Ok(AngularRule { nodes })
}

/// Neumaier summation; tens of thousands of quadrature terms otherwise lose
/// several digits.
fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = sum + x;
        c += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + c
}

/// Tensor quadrature over the departure law with every pattern tabulated at
/// the nodes.
#[derive(Debug, Clone)]
pub struct AodTable {
    weights: Vec<f64>,
    /// `amps[i * P + p]`.
    amps: Vec<Complex64>,
    n_p: usize,
}

impl AodTable {
    /// Panels follow the union of the codebook's grid lines; `n_theta` and
    /// `n_phi` extra nodes are placed by probability mass.
    pub fn new(codebook: &Codebook, aod: &AnglePair, n_theta: usize, n_phi: usize) -> Result<Self, AnalysisError> {
        Self::with_order(codebook, aod, n_theta, n_phi, CELL_ORDER)
    }

    fn with_order(codebook: &Codebook, aod: &AnglePair, n_theta: usize, n_phi: usize, order: usize) -> Result<Self, AnalysisError> {
        let theta_lines: Vec<f64> = codebook.patterns().iter().flat_map(|rp| rp.theta_grid().iter().copied()).collect();
        let phi_lines: Vec<f64> = codebook.patterns().iter().flat_map(|rp| rp.phi_grid().iter().copied()).collect();
        let th = aligned_rule(&aod.theta, &theta_lines, n_theta, order)?;
        let ph = aligned_rule(&aod.phi, &phi_lines, n_phi, order)?;
        Self::from_rules(codebook, &th, &ph)
    }

    pub fn from_rules(codebook: &Codebook, theta: &AngularRule, phi: &AngularRule) -> Result<Self, AnalysisError> {
        let n_p = codebook.len();
        let mut weights = Vec::with_capacity(theta.len() * phi.len());
        let mut amps = Vec::with_capacity(theta.len() * phi.len() * n_p);
        for &(t, wt) in theta.nodes() {
            for &(f, wf) in phi.nodes() {
                weights.push(wt * wf);
                for rp in codebook.patterns() {
                    amps.push(rp.eval(t, f)?);
                }
            }
        }
        let total = compensated_sum(weights.iter().copied());
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { weights, amps, n_p })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `(Θ, energy)` for one hypothesis pair, without building the full law.
    pub fn theta(&self, p: usize, q: usize, x_m: Complex64, x_n: Complex64) -> (f64, f64) {
        let term = |i: usize| {
            let a = self.amps[i * self.n_p + p] * x_m;
            let b = self.amps[i * self.n_p + q] * x_n;
            ((b - a).norm_sqr(), a.norm_sqr() + b.norm_sqr())
        };
        let theta = compensated_sum(self.weights.iter().enumerate().map(|(i, &w)| w * term(i).0));
        let energy = compensated_sum(self.weights.iter().enumerate().map(|(i, &w)| w * term(i).1));
        (theta, energy)
    }

    /// Law of `ψ` for one hypothesis pair.
    pub fn psi_law(&self, p: usize, q: usize, x_m: Complex64, x_n: Complex64) -> PsiLaw {
        let mut pts = Vec::with_capacity(self.weights.len());
        let mut energy = 0.0;
        for (i, &w) in self.weights.iter().enumerate() {
            let a = self.amps[i * self.n_p + p] * x_m;
            let b = self.amps[i * self.n_p + q] * x_n;
            pts.push(((b - a).norm_sqr(), w));
            energy += w * (a.norm_sqr() + b.norm_sqr());
        }
        PsiLaw::from_points(pts, energy)
    }
}

/// Discrete law of `ψ`, sorted ascending.
#[derive(Debug, Clone)]
pub struct PsiLaw {
    values: Vec<f64>,
    weights: Vec<f64>,
    mean: f64,
    energy: f64,
}

impl PsiLaw {
    /// Builds the law from weighted samples, merging values that agree to
    /// within a relative bin width. Bin values are weighted means, so `Θ` is
    /// unchanged by the merge.
    pub fn from_points(mut pts: Vec<(f64, f64)>, energy: f64) -> Self {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mean = pts.iter().map(|(v, w)| v * w).sum();
        let mut values = Vec::new();
        let mut weights = Vec::new();
        let mut i = 0;
        while i < pts.len() {
            let edge = pts[i].0 * (1.0 + PSI_BIN_WIDTH);
            let (mut sw, mut swv) = (0.0, 0.0);
            while i < pts.len() && pts[i].0 <= edge {
                sw += pts[i].1;
                swv += pts[i].1 * pts[i].0;
                i += 1;
            }
            if sw > 0.0 {
                values.push(swv / sw);
                weights.push(sw);
            }
        }
        Self { values, weights, mean, energy }
    }

    /// Number of distinct support points after binning.
    pub fn support_len(&self) -> usize {
        self.values.len()
    }

    /// `Θ = E[ψ]`.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `E[|G_p x_m|² + |G_q x_n|²]`, the scale against which `Θ` is judged.
    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn is_degenerate(&self) -> bool {
        self.mean <= DEGENERACY_TOL * self.energy
    }

    /// `M(s) = E[e^{−sψ}]`.
    pub fn mgf(&self, s: f64) -> f64 {
        let mut sum = 0.0;
        for (&v, &w) in self.values.iter().zip(&self.weights) {
            let t = w * (-s * v).exp();
            // Values ascend, so later terms are smaller still.
            if t < 1e-18 * sum {
                break;
            }
            sum += t;
        }
        sum
    }
}

/// `(1/π) ∫_0^{π/2} (1 + c/sin²ϑ)^{-1} dϑ` by adaptive quadrature, next to
/// its closed form `½(1 − √(c/(c+1)))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CraigReference {
    pub quadrature: f64,
    pub closed_form: f64,
}

pub fn craig_reference(c: f64) -> CraigReference {
    let r = adaptive_gauss_kronrod(
        |t: f64| {
            let s2 = t.sin().powi(2);
            s2 / (s2 + c)
        },
        0.0,
        FRAC_PI_2,
        1e-16,
        1e-13,
        4000,
    );
    CraigReference { quadrature: r.value / PI, closed_form: asymptotic_apep_from_c(c) }
}

/// `½(1 − √(c/(c+1)))`, written to avoid cancellation for large `c`.
fn asymptotic_apep_from_c(c: f64) -> f64 {
    if c <= 0.0 {
        return 0.5;
    }
    let r = (c / (c + 1.0)).sqrt();
    0.5 * (1.0 / (c + 1.0)) / (1.0 + r)
}

/// `½(1 − √(ρΘ/(ρΘ+4)))`.
pub fn asymptotic_apep(rho: f64, theta: f64) -> f64 {
    asymptotic_apep_from_c(rho * theta / 4.0)
}

/// `sin(πx)`, exactly zero at integers.
pub fn sin_pi(x: f64) -> f64 {
    let r = x - 2.0 * (x / 2.0).round();
    if r == 0.0 || r.abs() == 1.0 {
        return 0.0;
    }
    (PI * r).sin()
}

fn binomial(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as f64
}

/// Diversity coefficient `α_N = ½ C(2N, N)`.
pub fn alpha_coeff(n_r: usize) -> f64 {
    0.5 * binomial(2 * n_r as u64, n_r as u64)
}

/// `α_N` in its long form
/// `½C(2N,N) + Σ_{k<N} (−1)^{N−k} 2 C(2N,k) sin(π(N−k)) / (2π(N−k))`,
/// whose sine terms all vanish at integer `N`.
pub fn alpha_coeff_sum_form(n_r: usize) -> f64 {
    let n = n_r as u64;
    let mut total = 0.5 * binomial(2 * n, n);
    for k in 0..n {
        let d = (n - k) as f64;
        let sign = if (n - k) % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * 2.0 * binomial(2 * n, k) * sin_pi(d) / (2.0 * PI * d);
    }
    total
}

/// Arrival-angle moments of the receive steering phase `u = ‖k‖d sinθ^r sinφ^r`:
/// `E1 = E cos u`, `E2 = E sin u`, `E3 = E cos 2u`, `E4 = E sin 2u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceiverMoments {
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    pub e4: f64,
    pub error: f64,
    pub converged: bool,
}

impl ReceiverMoments {
    pub fn from_rules(phase_scale: f64, theta: &AngularRule, phi: &AngularRule) -> Self {
        let mut e = [0.0; 4];
        for &(t, wt) in theta.nodes() {
            let st = t.sin();
            for &(f, wf) in phi.nodes() {
                let u = phase_scale * st * f.sin();
                let w = wt * wf;
                let (s1, c1) = u.sin_cos();
                let (s2, c2) = (2.0 * u).sin_cos();
                e[0] += w * c1;
                e[1] += w * s1;
                e[2] += w * c2;
                e[3] += w * s2;
            }
        }
        Self { e1: e[0], e2: e[1], e3: e[2], e4: e[3], error: 0.0, converged: true }
    }

    /// `E{F}` for `n_r ∈ {1, 2, 3}`.
    pub fn expected_f(&self, n_r: usize) -> Result<f64, AnalysisError> {
        let Self { e1, e2, e3, e4, .. } = *self;
        match n_r {
            1 => Ok(1.0),
            2 => Ok(1.0 - e1 * e1 - e2 * e2),
            3 => Ok(1.0 + 2.0 * (e1 * e1 - e2 * e2) * e3 + 4.0 * e1 * e2 * e4
                - e3 * e3
                - e4 * e4
                - 2.0 * e1 * e1
                - 2.0 * e2 * e2),
            _ => Err(AnalysisError::Unsupported(format!(
                "closed-form receive factor is only known for 1 to 3 antennas, got {n_r}"
            ))),
        }
    }
}

/// Receiver moments of the channel's arrival law, with a half-resolution check.
pub fn receiver_moments(model: &ChannelModel, settings: &AnalysisSettings) -> Result<ReceiverMoments, AnalysisError> {
    settings.validate()?;
    let aoa = model.aoa();
    let th = AngleSampler::new(aoa.theta)?;
    let ph = AngleSampler::new(aoa.phi)?;
    let scale = model.rx_phase_scale();
    let fine = ReceiverMoments::from_rules(
        scale,
        &AngularRule::from_sampler(&th, settings.quad_theta_nodes),
        &AngularRule::from_sampler(&ph, settings.quad_phi_nodes),
    );
    let coarse = ReceiverMoments::from_rules(
        scale,
        &AngularRule::from_sampler(&th, settings.quad_theta_nodes / 2),
        &AngularRule::from_sampler(&ph, settings.quad_phi_nodes / 2),
    );
    let error = [fine.e1 - coarse.e1, fine.e2 - coarse.e2, fine.e3 - coarse.e3, fine.e4 - coarse.e4]
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs()));
    Ok(ReceiverMoments { error, converged: error <= settings.rel_tol, ..fine })
}

/// `α_N / (ρ^N Θ^N E{F})`.
pub fn diversity_bound(n_r: usize, rho: f64, theta: f64, moments: &ReceiverMoments) -> Result<f64, AnalysisError> {
    let f = moments.expected_f(n_r)?;
    if f <= DEGENERACY_TOL {
        return Err(AnalysisError::DegenerateArray(f));
    }
    let n = n_r as i32;
    Ok(alpha_coeff(n_r) / ((rho * theta).powi(n) * f))
}

/// Finite-`K` exact APEP for one receive antenna.
pub fn exact_apep_from_law(law: &PsiLaw, coarse: &PsiLaw, rays: usize, rho: f64, settings: &AnalysisSettings) -> Estimate {
    let full = exact_core(law, rays, rho, settings.quad_craig_nodes, settings.quad_z_nodes, settings);
    let half = settings.halved();
    let rough = exact_core(coarse, rays, rho, half.quad_craig_nodes, half.quad_z_nodes, settings);
    Estimate::compare(full, rough, settings.rel_tol)
}

fn exact_core(law: &PsiLaw, rays: usize, rho: f64, n_craig: usize, per_decade: usize, settings: &AnalysisSettings) -> f64 {
    let theta = law.mean();
    if theta <= 0.0 || rho <= 0.0 {
        return 0.5;
    }
    let k = rays as f64;
    let craig: Vec<(f64, f64)> = GaussLegendre::new(n_craig).mapped(0.0, FRAC_PI_2).collect();
    let zetas: Vec<f64> = craig.iter().map(|&(t, _)| rho / (4.0 * k * t.sin().powi(2))).collect();
    let floor = 1e-2 * settings.rel_tol;
    let s_lo = zetas
        .iter()
        .map(|&z| floor / (1.0 + z * k * theta) * z)
        .fold(f64::INFINITY, f64::min);
    let s_hi = zetas.iter().map(|&z| settings.z_cutoff * z).fold(0.0, f64::max);
    // Substituting s = z ζ̄ and s = e^u shares one grid of M(s)^K across all
    // Craig angles: I(ϑ) = ζ̄⁻¹ ∫ s e^{−s/ζ̄} M(s)^K du.
    let (u_lo, u_hi) = (s_lo.ln(), s_hi.ln());
    let n_nodes = (((u_hi - u_lo) / std::f64::consts::LN_10) * per_decade as f64).ceil() as usize;
    let grid = composite_rule(u_lo, u_hi, &[], n_nodes.max(16));
    let g: Vec<(f64, f64)> = grid
        .iter()
        .map(|&(u, w)| {
            let s = u.exp();
            let m = law.mgf(s);
            let mk = if m > 0.0 { (k * m.ln()).exp() } else { 0.0 };
            (s, w * s * mk)
        })
        .collect();
    let mut total = 0.0;
    for (&(_, wt), &zeta) in craig.iter().zip(&zetas) {
        let inner: f64 = g.iter().map(|&(s, gw)| gw * (-s / zeta).exp()).sum::<f64>() / zeta;
        total += wt * inner;
    }
    (total / PI).clamp(0.0, 0.5)
}

/// Finite-`K` high-SNR APEP for one receive antenna: `(K/ρ) ∫_0^∞ M(s)^K ds`.
pub fn high_snr_apep_from_law(law: &PsiLaw, coarse: &PsiLaw, rays: usize, rho: f64, settings: &AnalysisSettings) -> Estimate {
    let (full, ok_full) = high_snr_integral(law, rays, settings.quad_z_nodes, settings.rel_tol);
    let (rough, ok_rough) = high_snr_integral(coarse, rays, settings.quad_z_nodes / 2, settings.rel_tol);
    let k = rays as f64;
    let mut e = Estimate::compare(k * full / rho, k * rough / rho, settings.rel_tol);
    e.converged &= ok_full && ok_rough;
    e
}

/// `∫_0^∞ M(s)^K ds` and whether its tail was resolved.
fn high_snr_integral(law: &PsiLaw, rays: usize, per_decade: usize, rel_tol: f64) -> (f64, bool) {
    let k = rays as f64;
    let theta = law.mean();
    let bulk = 1.0 / (k * theta);
    let u_lo = (1e-2 * rel_tol * bulk).ln();
    let u_peak = bulk.ln();
    let width = std::f64::consts::LN_10 * 8.0 / per_decade as f64;
    let rule = GaussLegendre::new(8);
    let mut total = 0.0;
    let mut prev_panel = f64::INFINITY;
    let mut u = u_lo;
    let u_max = u_peak + 250.0;
    while u < u_max {
        let panel = rule.integrate(u, u + width, |x| {
            let s = x.exp();
            let m = law.mgf(s);
            if m > 0.0 {
                s * (k * m.ln()).exp()
            } else {
                0.0
            }
        });
        total += panel;
        u += width;
        if u > u_peak + 1.0 && panel < prev_panel {
            let ratio = panel / prev_panel;
            let tail = panel * ratio / (1.0 - ratio);
            if ratio < 1.0 && tail < 1e-2 * rel_tol * total {
                return (total + tail, true);
            }
        }
        prev_panel = panel;
    }
    (total, false)
}

/// Everything needed to evaluate bounds for one codebook and channel.
///
/// The departure tables (full and half resolution) are built once; receive
/// moments are computed on first use.
pub struct Analyzer<'a> {
    codebook: &'a Codebook,
    channel: &'a ChannelModel,
    settings: AnalysisSettings,
    fine: AodTable,
    coarse: AodTable,
    moments: OnceCell<Result<ReceiverMoments, AnalysisError>>,
}

/// A hypothesis pair with its Hamming weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairApep {
    pub from: TxWord,
    pub to: TxWord,
    pub hamming: u32,
    pub apep: Estimate,
}

impl<'a> Analyzer<'a> {
    pub fn new(codebook: &'a Codebook, channel: &'a ChannelModel, settings: AnalysisSettings) -> Result<Self, AnalysisError> {
        settings.validate()?;
        let aod = channel.aod();
        let fine = AodTable::new(codebook, aod, settings.quad_theta_nodes, settings.quad_phi_nodes)?;
        let coarse = AodTable::with_order(codebook, aod, settings.quad_theta_nodes / 2, settings.quad_phi_nodes / 2, 1)?;
        Ok(Self { codebook, channel, settings, fine, coarse, moments: OnceCell::new() })
    }

    pub fn settings(&self) -> &AnalysisSettings {
        &self.settings
    }

    pub fn codebook(&self) -> &Codebook {
        self.codebook
    }

    fn check_pair(&self, p: usize, q: usize) -> Result<(), AnalysisError> {
        let n = self.codebook.len();
        if p >= n || q >= n {
            return Err(AnalysisError::InvalidQuery(format!("pattern pair ({p}, {q}) out of range for {n} patterns")));
        }
        Ok(())
    }

    /// `Θ` for the pair, with a half-resolution error estimate.
    pub fn theta(&self, p: usize, q: usize, x_m: Complex64, x_n: Complex64) -> Result<Estimate, AnalysisError> {
        self.check_pair(p, q)?;
        let f = self.fine.theta(p, q, x_m, x_n).0;
        let c = self.coarse.theta(p, q, x_m, x_n).0;
        Ok(Estimate::compare(f, c, self.settings.rel_tol))
    }

    /// True when `Θ` is negligible against the pair's energy, so that every
    /// bound for the pair is infinite or trivial.
    pub fn is_degenerate(&self, p: usize, q: usize, x_m: Complex64, x_n: Complex64) -> Result<bool, AnalysisError> {
        self.check_pair(p, q)?;
        let (theta, energy) = self.fine.theta(p, q, x_m, x_n);
        Ok(theta <= DEGENERACY_TOL * energy)
    }

    pub fn psi_law(&self, p: usize, q: usize, x_m: Complex64, x_n: Complex64) -> Result<PsiLaw, AnalysisError> {
        self.check_pair(p, q)?;
        Ok(self.fine.psi_law(p, q, x_m, x_n))
    }

    pub fn moments(&self) -> Result<ReceiverMoments, AnalysisError> {
        self.moments
            .get_or_init(|| receiver_moments(self.channel, &self.settings))
            .clone()
    }

    /// APEP of deciding `(q, x_n)` when `(p, x_m)` was sent.
    #[allow(clippy::too_many_arguments)]
    pub fn apep(
        &self,
        kind: BoundKind,
        n_r: usize,
        rho: f64,
        p: usize,
        q: usize,
        x_m: Complex64,
        x_n: Complex64,
    ) -> Result<Estimate, AnalysisError> {
        self.check_pair(p, q)?;
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(AnalysisError::InvalidQuery(format!("SNR must be positive, got {rho}")));
        }
        if n_r == 0 {
            return Err(AnalysisError::InvalidQuery("need at least one receive antenna".into()));
        }
        let law = self.fine.psi_law(p, q, x_m, x_n);
        let degenerate = |theta: f64| AnalysisError::DegenerateHypothesis { p, m: 0, q, n: 0, theta };
        let k = self.channel.rays();
        match (kind, n_r) {
            (BoundKind::Exact, 1) => {
                let coarse = self.coarse.psi_law(p, q, x_m, x_n);
                Ok(exact_apep_from_law(&law, &coarse, k, rho, &self.settings))
            }
            (BoundKind::Exact, _) => Err(AnalysisError::Unsupported(format!(
                "the exact finite-K evaluator needs one receive antenna, got {n_r}"
            ))),
            (BoundKind::HighSnr, 1) => {
                if law.is_degenerate() {
                    return Err(degenerate(law.mean()));
                }
                let coarse = self.coarse.psi_law(p, q, x_m, x_n);
                Ok(high_snr_apep_from_law(&law, &coarse, k, rho, &self.settings))
            }
            (BoundKind::Asymptotic, 1) => {
                let th = self.theta(p, q, x_m, x_n)?;
                let v = asymptotic_apep(rho, th.value);
                let vc = asymptotic_apep(rho, (th.value - th.error).max(0.0));
                Ok(Estimate { value: v, error: (vc - v).abs(), converged: th.converged })
            }
            _ => {
                let th = self.theta(p, q, x_m, x_n)?;
                if law.is_degenerate() {
                    return Err(degenerate(th.value));
                }
                let mo = self.moments()?;
                let v = diversity_bound(n_r, rho, th.value, &mo)?;
                let rel = n_r as f64 * th.error / th.value;
                Ok(Estimate { value: v, error: v * rel, converged: th.converged && mo.converged })
            }
        }
    }

    /// Every ordered pair of distinct hypotheses with its APEP.
    pub fn pair_apeps(&self, kind: BoundKind, c: &Constellation, n_r: usize, rho: f64) -> Result<Vec<PairApep>, AnalysisError> {
        let words = all_words(self.codebook.len(), c);
        let mut out = Vec::with_capacity(words.len() * words.len());
        for (i, &a) in words.iter().enumerate() {
            for &b in &words[i + 1..] {
                let apep = self
                    .apep(kind, n_r, rho, a.p, b.p, c.point(a.m), c.point(b.m))
                    .map_err(|e| label_degenerate(e, a, b))?;
                let h = hamming(a, b, c);
                out.push(PairApep { from: a, to: b, hamming: h, apep });
                out.push(PairApep { from: b, to: a, hamming: h, apep });
            }
        }
        out.sort_by_key(|x| (x.from, x.to));
        Ok(out)
    }

    /// Union bound on the average bit error probability.
    pub fn abep(&self, kind: BoundKind, c: &Constellation, n_r: usize, rho: f64) -> Result<Estimate, AnalysisError> {
        let n_words = self.codebook.len() * c.len();
        if n_words < 2 {
            return Err(AnalysisError::InvalidQuery("need at least two hypotheses".into()));
        }
        let pairs = self.pair_apeps(kind, c, n_r, rho)?;
        Ok(union_bound(&pairs, n_words))
    }
}

fn label_degenerate(e: AnalysisError, a: TxWord, b: TxWord) -> AnalysisError {
    match e {
        AnalysisError::DegenerateHypothesis { theta, .. } => {
            AnalysisError::DegenerateHypothesis { p: a.p, m: a.m, q: b.p, n: b.m, theta }
        }
        other => other,
    }
}

/// `(1/(W log2 W)) Σ N_H APEP` for `W` hypotheses.
pub fn union_bound(pairs: &[PairApep], n_words: usize) -> Estimate {
    let scale = 1.0 / (n_words as f64 * (n_words as f64).log2());
    let mut value = 0.0;
    let mut error = 0.0;
    let mut converged = true;
    for pr in pairs {
        value += pr.hamming as f64 * pr.apep.value;
        error += pr.hamming as f64 * pr.apep.error;
        converged &= pr.apep.converged;
    }
    Estimate { value: value * scale, error: error * scale, converged }
}

/// All `(p, m)` words in label order.
pub fn all_words(n_patterns: usize, c: &Constellation) -> Vec<TxWord> {
    (0..n_patterns)
        .flat_map(|p| (0..c.len()).map(move |m| TxWord { p, m }))
        .collect()
}

/// One pairwise query against a codebook and channel.
#[derive(Debug, Clone, Copy)]
pub struct ApepQuery<'a> {
    pub codebook: &'a Codebook,
    pub channel: &'a ChannelModel,
    pub p: usize,
    pub q: usize,
    pub x_m: Complex64,
    pub x_n: Complex64,
    pub n_r: usize,
    pub rho: f64,
}

impl ApepQuery<'_> {
    fn analyzer(&self, settings: &AnalysisSettings) -> Result<Analyzer<'_>, AnalysisError> {
        Analyzer::new(self.codebook, self.channel, *settings)
    }

    fn run(&self, kind: BoundKind, settings: &AnalysisSettings) -> Result<Estimate, AnalysisError> {
        self.analyzer(settings)?
            .apep(kind, self.n_r, self.rho, self.p, self.q, self.x_m, self.x_n)
    }

    fn require_single_antenna(&self) -> Result<(), AnalysisError> {
        if self.n_r != 1 {
            return Err(AnalysisError::InvalidQuery(format!("this evaluator needs n_r = 1, got {}", self.n_r)));
        }
        Ok(())
    }
}

/// `Θ = E[ψ]` over the departure law.
pub fn theta_integral(query: &ApepQuery<'_>, settings: &AnalysisSettings) -> Result<Estimate, AnalysisError> {
    query.analyzer(settings)?.theta(query.p, query.q, query.x_m, query.x_n)
}

pub fn apep_exact_nr1(query: &ApepQuery<'_>, settings: &AnalysisSettings) -> Result<Estimate, AnalysisError> {
    query.require_single_antenna()?;
    query.run(BoundKind::Exact, settings)
}

pub fn apep_hsnr_nr1(query: &ApepQuery<'_>, settings: &AnalysisSettings) -> Result<Estimate, AnalysisError> {
    query.require_single_antenna()?;
    query.run(BoundKind::HighSnr, settings)
}

pub fn apep_asym_nr1(query: &ApepQuery<'_>, settings: &AnalysisSettings) -> Result<f64, AnalysisError> {
    query.require_single_antenna()?;
    Ok(query.run(BoundKind::Asymptotic, settings)?.value)
}

/// `1/(ρΘ)`.
pub fn apep_asym_hsnr_nr1(query: &ApepQuery<'_>, settings: &AnalysisSettings) -> Result<f64, AnalysisError> {
    query.require_single_antenna()?;
    Ok(query.run(BoundKind::AsymptoticHighSnr, settings)?.value)
}

/// `3 / (ρ² Θ² (1 − E1² − E2²))`.
pub fn apep_nr2(query: &ApepQuery<'_>, settings: &AnalysisSettings) -> Result<f64, AnalysisError> {
    if query.n_r != 2 {
        return Err(AnalysisError::InvalidQuery(format!("this evaluator needs n_r = 2, got {}", query.n_r)));
    }
    Ok(query.run(BoundKind::AsymptoticHighSnr, settings)?.value)
}

/// `α_N / (ρ^N Θ^N E{F})` for `N ≤ 3`.
pub fn apep_generic(query: &ApepQuery<'_>, settings: &AnalysisSettings) -> Result<f64, AnalysisError> {
    Ok(query.run(BoundKind::AsymptoticHighSnr, settings)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{draw_channel, AnglePair};
    use crate::patterns::{synth_array_pattern, ExcitationMatrix, RadiationPattern};
    use approx::assert_relative_eq;

    #[test]
    fn compensated_sum_keeps_small_terms() {
        assert_eq!(compensated_sum([1.0, 1e100, 1.0, -1e100]), 2.0);
        assert_eq!(compensated_sum(std::iter::repeat_n(0.1, 10)), 1.0);
    }
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    const ONE: Complex64 = Complex64::new(1.0, 0.0);
    const MINUS_ONE: Complex64 = Complex64::new(-1.0, 0.0);

    fn laplace_vm() -> AnglePair {
        AnglePair {
            theta: AngularDistribution::TruncatedLaplacian { theta0: PI / 3.0, sigma: 0.4 },
            phi: AngularDistribution::VonMises { mu: 0.5, kappa: 2.0 },
        }
    }

    fn model(k: usize, aod: AnglePair) -> ChannelModel {
        let aoa = AnglePair {
            theta: AngularDistribution::TruncatedLaplacian { theta0: PI / 2.0, sigma: 0.3 },
            phi: AngularDistribution::FULL_CIRCLE,
        };
        ChannelModel::new(k, 0.125, 0.0625, aod, aoa).unwrap()
    }

    fn iso_book() -> Codebook {
        Codebook::new(vec![RadiationPattern::isotropic()]).unwrap()
    }

    fn book(a: ExcitationMatrix, b: ExcitationMatrix) -> Codebook {
        Codebook::new(vec![synth_array_pattern(&a, 0.5).unwrap(), synth_array_pattern(&b, 0.5).unwrap()]).unwrap()
    }

    fn ac_book() -> Codebook {
        book(ExcitationMatrix::A, ExcitationMatrix::C)
    }

    fn query<'a>(cb: &'a Codebook, ch: &'a ChannelModel, p: usize, q: usize, xm: Complex64, xn: Complex64, rho: f64) -> ApepQuery<'a> {
        ApepQuery { codebook: cb, channel: ch, p, q, x_m: xm, x_n: xn, n_r: 1, rho }
    }

    #[test]
    fn theta_trivial_cases() {
        let s = AnalysisSettings::default();
        let cb = iso_book();
        let ch = model(64, laplace_vm());
        let z = theta_integral(&query(&cb, &ch, 0, 0, ONE, ONE, 1.0), &s).unwrap();
        assert_eq!(z.value, 0.0);
        let four = theta_integral(&query(&cb, &ch, 0, 0, ONE, MINUS_ONE, 1.0), &s).unwrap();
        assert_relative_eq!(four.value, 4.0, max_relative = 1e-12);
        assert!(four.converged);
    }

    #[test]
    fn theta_matches_monte_carlo_integration() {
        let s = AnalysisSettings::default();
        let cb = ac_book();
        let ch = model(64, laplace_vm());
        let th = theta_integral(&query(&cb, &ch, 0, 1, ONE, ONE, 1.0), &s).unwrap();
        assert!(th.converged, "{th:?}");
        let ts = AngleSampler::new(ch.aod().theta).unwrap();
        let ps = AngleSampler::new(ch.aod().phi).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let (t, f) = (ts.sample(&mut rng), ps.sample(&mut rng));
            let v = crate::patterns::psi(cb.get(0).unwrap(), cb.get(1).unwrap(), ONE, ONE, t, f).unwrap();
            s1 += v;
            s2 += v * v;
        }
        let mean = s1 / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((th.value - mean).abs() < 3.0 * se, "quadrature {} vs MC {mean} ± {se}", th.value);
    }

    #[test]
    fn exact_apep_of_identical_hypotheses_is_one_half() {
        let s = AnalysisSettings::default();
        let cb = ac_book();
        let ch = model(16, laplace_vm());
        let v = apep_exact_nr1(&query(&cb, &ch, 1, 1, ONE, ONE, 100.0), &s).unwrap();
        assert_relative_eq!(v.value, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn exact_apep_isotropic_bpsk_matches_conditional_q_monte_carlo() {
        let s = AnalysisSettings::default();
        let cb = iso_book();
        let ch = model(8, laplace_vm());
        let rho = 10.0;
        let v = apep_exact_nr1(&query(&cb, &ch, 0, 0, ONE, MINUS_ONE, rho), &s).unwrap();
        assert!(v.converged);
        // Conditional PEP is Q(√(ρ|h|²|x_n − x_m|²/2)) with h the K-ray sum.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 10_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let mut h = Complex64::new(0.0, 0.0);
            for _ in 0..8 {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                h += Complex64::new(re, im);
            }
            let g = h.norm_sqr() / 16.0;
            acc += 0.5 * libm::erfc((rho * g * 4.0 / 2.0).sqrt() / std::f64::consts::SQRT_2);
        }
        let mc = acc / n as f64;
        assert!((v.value - mc).abs() < 0.02 * mc, "exact {} vs MC {mc}", v.value);
    }

    #[test]
    fn exact_apep_matches_ray_monte_carlo_for_directional_patterns() {
        let s = AnalysisSettings::default();
        let cb = ac_book();
        let ch = model(4, laplace_vm());
        let rho = 31.6;
        let v = apep_exact_nr1(&query(&cb, &ch, 0, 1, ONE, ONE, rho), &s).unwrap();
        assert!(v.converged, "{v:?}");
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 400_000;
        let (mut acc, mut acc2) = (0.0, 0.0);
        for _ in 0..n {
            let h = draw_channel(&ch, &cb, 1, &mut rng).unwrap();
            let d = (h.get(0, 1) - h.get(0, 0)).norm_sqr();
            let pep = 0.5 * libm::erfc((rho * d / 2.0).sqrt() / std::f64::consts::SQRT_2);
            acc += pep;
            acc2 += pep * pep;
        }
        let mc = acc / n as f64;
        let se = ((acc2 / n as f64 - mc * mc) / n as f64).sqrt();
        assert!((v.value - mc).abs() < 4.0 * se + 2e-3 * mc, "exact {} vs MC {mc} ± {se}", v.value);
    }

    #[test]
    fn exact_apep_approaches_asymptotic_for_many_rays() {
        // The finite-K gap decays as 1/K with a pair-dependent constant; A vs C
        // has heavier ψ tails and needs K ≈ 1200 for the same margin.
        let s = AnalysisSettings::default();
        let cb = book(ExcitationMatrix::A, ExcitationMatrix::B);
        let ch = model(512, laplace_vm());
        let q = query(&cb, &ch, 0, 1, ONE, ONE, 100.0);
        let exact = apep_exact_nr1(&q, &s).unwrap().value;
        let asym = apep_asym_nr1(&q, &s).unwrap();
        assert!((exact - asym).abs() < 0.01 * asym, "exact {exact} vs asym {asym}");
    }

    #[test]
    fn high_snr_scales_inversely_and_matches_isotropic_limit() {
        let s = AnalysisSettings::default();
        let cb = iso_book();
        let ch = model(512, laplace_vm());
        let a = apep_hsnr_nr1(&query(&cb, &ch, 0, 0, ONE, MINUS_ONE, 50.0), &s).unwrap();
        let b = apep_hsnr_nr1(&query(&cb, &ch, 0, 0, ONE, MINUS_ONE, 100.0), &s).unwrap();
        assert_relative_eq!(a.value, 2.0 * b.value, max_relative = 1e-14);
        assert!((a.value - 1.0 / (4.0 * 50.0)).abs() < 0.005 / (4.0 * 50.0), "{}", a.value);
        assert!(a.converged);
    }

    #[test]
    fn high_snr_upper_bounds_exact() {
        let s = AnalysisSettings::default();
        let cb = ac_book();
        for k in [4, 32] {
            let ch = model(k, laplace_vm());
            for rho in [100.0, 1000.0] {
                let q = query(&cb, &ch, 0, 1, ONE, ONE, rho);
                let e = apep_exact_nr1(&q, &s).unwrap().value;
                let h = apep_hsnr_nr1(&q, &s).unwrap().value;
                assert!(e <= h, "K={k} rho={rho}: exact {e} > high-SNR {h}");
            }
        }
    }

    #[test]
    fn asymptotic_closed_forms() {
        assert_eq!(asymptotic_apep(5.0, 0.0), 0.5);
        assert_relative_eq!(asymptotic_apep(1.0, 4.0), 0.5 * (1.0 - 0.5f64.sqrt()), epsilon = 1e-16);
        for rho in [1e-3, 0.1, 1.0, 10.0, 1e3, 1e6] {
            let rayleigh: f64 = 0.5 * (1.0 - (rho / (rho + 1.0f64)).sqrt());
            assert_relative_eq!(asymptotic_apep(rho, 4.0), rayleigh, max_relative = 1e-9);
        }
        let rho = 1e6;
        let ratio = asymptotic_apep(rho, 4.0) / (1.0 / (rho * 4.0));
        assert!((ratio - 1.0).abs() < 1e-3);
    }

    #[test]
    fn asymptotic_high_snr_values_and_degeneracy() {
        let s = AnalysisSettings::default();
        let cb = iso_book();
        let ch = model(64, laplace_vm());
        let v = apep_asym_hsnr_nr1(&query(&cb, &ch, 0, 0, ONE, MINUS_ONE, 10.0), &s).unwrap();
        assert_relative_eq!(v, 0.025, max_relative = 1e-12);
        assert!(matches!(
            apep_asym_hsnr_nr1(&query(&cb, &ch, 0, 0, ONE, ONE, 10.0), &s),
            Err(AnalysisError::DegenerateHypothesis { .. })
        ));
    }

    #[test]
    fn receiver_moments_examples() {
        let zero = ReceiverMoments::from_rules(0.0, &AngularRule::degenerate(1.0), &AngularRule::degenerate(0.3));
        assert_eq!((zero.e1, zero.e2, zero.e3, zero.e4), (1.0, 0.0, 1.0, 0.0));
        assert_eq!(zero.expected_f(2).unwrap(), 0.0);
        assert_eq!(zero.expected_f(3).unwrap(), 0.0);

        // Broadside elevation, uniform azimuth, half-wavelength spacing:
        // E1 = J0(π), computed here from its power series.
        let phi = AngularRule::from_distribution(&AngularDistribution::FULL_CIRCLE, 128).unwrap();
        let m = ReceiverMoments::from_rules(PI, &AngularRule::degenerate(PI / 2.0), &phi);
        let j0 = (0..40).fold((0.0, 1.0), |(sum, term): (f64, f64), k| {
            let next = -term * (PI / 2.0).powi(2) / (((k + 1) * (k + 1)) as f64);
            (sum + term, next)
        });
        assert_relative_eq!(m.e1, j0.0, epsilon = 1e-9);
        assert_relative_eq!(m.e1, -0.304_242_177_644_093_9, epsilon = 1e-9);
        assert!(m.e2.abs() < 1e-12);
    }

    #[test]
    fn three_antenna_factor_is_a_toeplitz_determinant() {
        // E{F} for three antennas equals det [[1, c1, c2], [c1*, 1, c1], [c2*, c1*, 1]]
        // with c1 = E1 + jE2, c2 = E3 + jE4.
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..200 {
            let m = ReceiverMoments {
                e1: rng.random_range(-1.0..1.0),
                e2: rng.random_range(-1.0..1.0),
                e3: rng.random_range(-1.0..1.0),
                e4: rng.random_range(-1.0..1.0),
                error: 0.0,
                converged: true,
            };
            let c1 = Complex64::new(m.e1, m.e2);
            let c2 = Complex64::new(m.e3, m.e4);
            let a = [[ONE, c1, c2], [c1.conj(), ONE, c1], [c2.conj(), c1.conj(), ONE]];
            let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
            assert!(det.im.abs() < 1e-12);
            assert_relative_eq!(m.expected_f(3).unwrap(), det.re, epsilon = 1e-12);
        }
    }

    #[test]
    fn diversity_bounds_reduce_and_scale() {
        let s = AnalysisSettings::default();
        let cb = ac_book();
        let ch = model(64, laplace_vm());
        let mut q = query(&cb, &ch, 0, 1, ONE, MINUS_ONE, 100.0);
        assert_eq!(apep_generic(&q, &s).unwrap(), apep_asym_hsnr_nr1(&q, &s).unwrap());
        q.n_r = 2;
        let v = apep_nr2(&q, &s).unwrap();
        assert_eq!(apep_generic(&q, &s).unwrap(), v);
        q.rho = 1000.0;
        assert_relative_eq!(apep_nr2(&q, &s).unwrap(), v / 100.0, max_relative = 1e-14);
        q.n_r = 4;
        assert!(matches!(apep_generic(&q, &s), Err(AnalysisError::Unsupported(_))));

        let collocated = ChannelModel::new(64, 0.125, 0.0, laplace_vm(), laplace_vm()).unwrap();
        for n_r in [2, 3] {
            let q = ApepQuery { n_r, ..query(&cb, &collocated, 0, 1, ONE, MINUS_ONE, 100.0) };
            assert!(matches!(apep_generic(&q, &s), Err(AnalysisError::DegenerateArray(_))));
        }
    }

    #[test]
    fn alpha_coefficients() {
        assert_eq!(alpha_coeff(1), 1.0);
        assert_eq!(alpha_coeff(2), 3.0);
        assert_eq!(alpha_coeff(3), 10.0);
        for n in 1..=12 {
            assert_eq!(alpha_coeff_sum_form(n), alpha_coeff(n), "n = {n}");
            // Defining integral: (1/π) ∫_0^{π/2} (4 sin²ϑ)^n dϑ.
            let r = adaptive_gauss_kronrod(|t: f64| (4.0 * t.sin().powi(2)).powi(n as i32), 0.0, FRAC_PI_2, 0.0, 1e-14, 200);
            assert_relative_eq!(r.value / PI, alpha_coeff(n), max_relative = 1e-12);
        }
        assert_eq!(sin_pi(3.0), 0.0);
        assert_eq!(sin_pi(-7.0), 0.0);
        assert_relative_eq!(sin_pi(0.5), 1.0);
    }

    #[test]
    fn craig_examples() {
        let r = craig_reference(1.0);
        assert_relative_eq!(r.closed_form, 0.146_446_609_406_726_24, epsilon = 1e-15);
        assert_relative_eq!(r.quadrature, r.closed_form, epsilon = 1e-12);
        assert!((craig_reference(1e-12).closed_form - 0.5).abs() < 1e-6);
        for i in 0..=24 {
            let c = 10f64.powf(-3.0 + i as f64 * 0.25);
            let r = craig_reference(c);
            assert!((r.quadrature - r.closed_form).abs() < 1e-10, "c = {c}");
        }
    }

    #[test]
    fn union_bound_of_two_hypotheses_is_the_pair_apep() {
        let s = AnalysisSettings::default();
        let cb = iso_book();
        let ch = model(64, laplace_vm());
        let an = Analyzer::new(&cb, &ch, s).unwrap();
        let c = Constellation::bpsk();
        let ub = an.abep(BoundKind::Asymptotic, &c, 1, 10.0).unwrap();
        assert_relative_eq!(ub.value, asymptotic_apep(10.0, 4.0), max_relative = 1e-12);
        let ub2 = an.abep(BoundKind::AsymptoticHighSnr, &c, 2, 10.0).unwrap();
        let ub2x = an.abep(BoundKind::AsymptoticHighSnr, &c, 2, 20.0).unwrap();
        assert_relative_eq!(ub2.value / ub2x.value, 4.0, max_relative = 1e-12);
        assert!(matches!(an.abep(BoundKind::Exact, &c, 2, 10.0), Err(AnalysisError::Unsupported(_))));
    }

    #[test]
    fn doubling_nodes_changes_little() {
        let s = AnalysisSettings::default();
        let fine = AnalysisSettings {
            quad_theta_nodes: 2 * s.quad_theta_nodes,
            quad_phi_nodes: 2 * s.quad_phi_nodes,
            quad_craig_nodes: 2 * s.quad_craig_nodes,
            quad_z_nodes: 2 * s.quad_z_nodes,
            ..s
        };
        let cb = ac_book();
        let ch = model(16, laplace_vm());
        let q = query(&cb, &ch, 0, 1, ONE, MINUS_ONE, 100.0);
        for f in [apep_exact_nr1, apep_hsnr_nr1] {
            let a = f(&q, &s).unwrap().value;
            let b = f(&q, &fine).unwrap().value;
            assert!((a - b).abs() < s.rel_tol * b, "{a} vs {b}");
        }
        let a = theta_integral(&q, &s).unwrap().value;
        let b = theta_integral(&q, &fine).unwrap().value;
        assert!((a - b).abs() < s.rel_tol * b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn apep_is_symmetric_and_ordered(rho_db in 10.0..40.0f64, a in 0usize..2, b in 0usize..2, sa in 0usize..2, sb in 0usize..2) {
            let s = AnalysisSettings::default();
            let cb = ac_book();
            let ch = model(16, laplace_vm());
            let an = Analyzer::new(&cb, &ch, s).unwrap();
            let pts = [ONE, MINUS_ONE];
            let rho = 10f64.powf(rho_db / 10.0);
            prop_assume!(!(a == b && sa == sb));
            for kind in [BoundKind::Exact, BoundKind::Asymptotic, BoundKind::AsymptoticHighSnr] {
                let x = an.apep(kind, 1, rho, a, b, pts[sa], pts[sb]).unwrap().value;
                let y = an.apep(kind, 1, rho, b, a, pts[sb], pts[sa]).unwrap().value;
                prop_assert!((x - y).abs() <= 1e-12 * x.max(y));
            }
            let exact = an.apep(BoundKind::Exact, 1, rho, a, b, pts[sa], pts[sb]).unwrap().value;
            prop_assert!((0.0..=0.5).contains(&exact));
            let asym = an.apep(BoundKind::Asymptotic, 1, rho, a, b, pts[sa], pts[sb]).unwrap().value;
            let asym_h = an.apep(BoundKind::AsymptoticHighSnr, 1, rho, a, b, pts[sa], pts[sb]).unwrap().value;
            prop_assert!(asym <= asym_h);
        }

        #[test]
        fn moments_are_bounded(d in 0.0..0.5f64, mu in -3.0..3.0f64, kappa in 0.0..20.0f64, t0 in 0.1..3.0f64) {
            let aoa = AnglePair {
                theta: AngularDistribution::TruncatedLaplacian { theta0: t0, sigma: 0.5 },
                phi: AngularDistribution::VonMises { mu, kappa },
            };
            let ch = ChannelModel::new(8, 0.125, d, aoa, aoa).unwrap();
            let m = receiver_moments(&ch, &AnalysisSettings::default()).unwrap();
            for e in [m.e1, m.e2, m.e3, m.e4] {
                prop_assert!(e.abs() <= 1.0 + 1e-12);
            }
        }
    }
}
