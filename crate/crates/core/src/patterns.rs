//! Radiation patterns of the reconfigurable transmit antenna.
//!
//! A [`RadiationPattern`] tabulates the far-field power gain `G(θ, φ)` and
//! phase `Ω(θ, φ)` on an elevation/azimuth grid. Queries between nodes are
//! answered by bilinear interpolation, gain and phase separately, and the
//! complex amplitude `√G · e^{jΩ}` is returned.
//!
//! Patterns come from three places: measured files ([`load_pattern`]),
//! synthesized 4×4 planar arrays ([`synth_array_pattern`]) and the trivial
//! [`RadiationPattern::isotropic`] pattern.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use thiserror::Error;

/// Angular slack allowed when checking grid coverage and query domains.
pub const ANGLE_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PatternError {
    #[error("invalid pattern: {0}")]
    Invalid(String),
    #[error("angle out of domain: theta={theta}, phi={phi}")]
    OutOfDomain { theta: f64, phi: f64 },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("excitation matrix has no active element")]
    EmptyExcitation,
    #[error("element spacing must be positive, got {0}")]
    BadSpacing(f64),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

/// Tabulated complex far-field pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiationPattern {
    theta: Vec<f64>,
    phi: Vec<f64>,
    gain: Vec<f64>,
    phase: Vec<f64>,
    label: String,
    theta_step: Option<f64>,
    phi_step: Option<f64>,
}

impl RadiationPattern {
    /// Builds a pattern from row-major `gain` / `phase` tables of shape
    /// `theta.len() × phi.len()`.
    pub fn new(
        theta: Vec<f64>,
        phi: Vec<f64>,
        gain: Vec<f64>,
        phase: Vec<f64>,
        label: impl Into<String>,
    ) -> Result<Self, PatternError> {
        let bad = |m: String| Err(PatternError::Invalid(m));
        if theta.is_empty() || phi.is_empty() {
            return bad("empty grid".into());
        }
        if theta.iter().chain(&phi).any(|a| !a.is_finite()) {
            return bad("grid contains non-finite angles".into());
        }
        if !strictly_increasing(&theta) {
            return bad("theta grid is not strictly increasing".into());
        }
        if !strictly_increasing(&phi) {
            return bad("phi grid is not strictly increasing".into());
        }
        if theta[0] < -ANGLE_EPS || theta[0] > ANGLE_EPS {
            return bad(format!("theta grid must start at 0, starts at {}", theta[0]));
        }
        let last = theta[theta.len() - 1];
        if last < PI - ANGLE_EPS || last > PI + ANGLE_EPS {
            return bad(format!("theta grid must end at pi, ends at {last}"));
        }
        if phi[0] <= -PI - ANGLE_EPS || phi[phi.len() - 1] > PI + ANGLE_EPS {
            return bad("phi grid must lie in (-pi, pi]".into());
        }
        let cells = theta.len() * phi.len();
        if gain.len() != cells || phase.len() != cells {
            return bad(format!(
                "table shape mismatch: expected {cells} entries, got gain={} phase={}",
                gain.len(),
                phase.len()
            ));
        }
        if let Some(g) = gain.iter().find(|g| !g.is_finite() || **g < 0.0) {
            return bad(format!("gain entries must be finite and >= 0, found {g}"));
        }
        if phase.iter().any(|p| !p.is_finite()) {
            return bad("phase entries must be finite".into());
        }
        let theta_step = uniform_step(&theta);
        let phi_step = uniform_step(&phi);
        Ok(Self {
            theta,
            phi,
            gain,
            phase,
            label: label.into(),
            theta_step,
            phi_step,
        })
    }

    /// Unit gain, zero phase everywhere.
    pub fn isotropic() -> Self {
        Self::new(
            vec![0.0, PI],
            vec![0.0],
            vec![1.0, 1.0],
            vec![0.0, 0.0],
            "isotropic",
        )
        .expect("isotropic pattern is valid")
    }

    pub fn theta_grid(&self) -> &[f64] {
        &self.theta
    }

    pub fn phi_grid(&self) -> &[f64] {
        &self.phi
    }

    /// Linear power gain at grid node `(i, j)`.
    pub fn gain_at(&self, i: usize, j: usize) -> f64 {
        self.gain[i * self.phi.len() + j]
    }

    /// Phase in radians at grid node `(i, j)`.
    pub fn phase_at(&self, i: usize, j: usize) -> f64 {
        self.phase[i * self.phi.len() + j]
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Multiplies every gain by `10^(offset_db/10)`.
    pub fn scaled_db(mut self, offset_db: f64) -> Self {
        let s = 10f64.powf(offset_db / 10.0);
        self.gain.iter_mut().for_each(|g| *g *= s);
        self
    }

    /// Complex amplitude `√G(θ,φ)·e^{jΩ(θ,φ)}`; `phi` may be any finite angle.
    pub fn eval(&self, theta: f64, phi: f64) -> Result<Complex64, PatternError> {
        let (i, t) = self.theta_cell(theta, phi)?;
        let (j, s) = self.phi_cell(wrap_angle(phi));
        Ok(self.eval_in_cell(i, j, t, s))
    }

    fn theta_cell(&self, theta: f64, phi: f64) -> Result<(usize, f64), PatternError> {
        if !theta.is_finite() || !phi.is_finite() || !(-ANGLE_EPS..=PI + ANGLE_EPS).contains(&theta) {
            return Err(PatternError::OutOfDomain { theta, phi });
        }
        let n = self.theta.len();
        if n == 1 {
            return Ok((0, 0.0));
        }
        let th = theta.clamp(self.theta[0], self.theta[n - 1]);
        let i = match self.theta_step {
            Some(h) => (((th - self.theta[0]) / h) as usize).min(n - 2),
            None => self.theta.partition_point(|&x| x <= th).clamp(1, n - 1) - 1,
        };
        let t = (th - self.theta[i]) / (self.theta[i + 1] - self.theta[i]);
        Ok((i, t.clamp(0.0, 1.0)))
    }

    /// Cell `j` spans `[phi[j], phi[j+1]]`; the last cell wraps to `phi[0] + 2π`.
    fn phi_cell(&self, phi: f64) -> (usize, f64) {
        let n = self.phi.len();
        let first = self.phi[0];
        let last = self.phi[n - 1];
        if n == 1 {
            let s = (phi - first).rem_euclid(TAU) / TAU;
            return (0, s);
        }
        if phi >= first && phi <= last {
            let j = match self.phi_step {
                Some(h) => (((phi - first) / h) as usize).min(n - 2),
                None => self.phi.partition_point(|&x| x <= phi).clamp(1, n - 1) - 1,
            };
            let s = (phi - self.phi[j]) / (self.phi[j + 1] - self.phi[j]);
            return (j, s.clamp(0.0, 1.0));
        }
        let span = first + TAU - last;
        let s = (phi - last).rem_euclid(TAU) / span;
        (n - 1, s.clamp(0.0, 1.0))
    }

    /// Evaluates inside a specific cell at local coordinates `t` (along
    /// theta) and `s` (along phi), both in `[0, 1]`.
    pub(crate) fn eval_in_cell(&self, i: usize, j: usize, t: f64, s: f64) -> Complex64 {
        let nt = self.theta.len();
        let np = self.phi.len();
        let i1 = if nt == 1 { 0 } else { i + 1 };
        let j1 = (j + 1) % np;
        let g00 = self.gain_at(i, j);
        let g01 = self.gain_at(i, j1);
        let g10 = self.gain_at(i1, j);
        let g11 = self.gain_at(i1, j1);
        let gain = (1.0 - t) * ((1.0 - s) * g00 + s * g01) + t * ((1.0 - s) * g10 + s * g11);

        // Interpolate along theta on each phi edge using the principal phase
        // difference, then across phi the same way. Every edge then depends
        // only on its own two nodes, so e^{jΩ} is continuous between cells.
        let p00 = self.phase_at(i, j);
        let p01 = self.phase_at(i, j1);
        let p10 = self.phase_at(i1, j);
        let p11 = self.phase_at(i1, j1);
        let left = p00 + t * wrap_angle(p10 - p00);
        let right = p01 + t * wrap_angle(p11 - p01);
        let phase = left + s * wrap_angle(right - left);

        Complex64::from_polar(gain.max(0.0).sqrt(), phase)
    }

    #[cfg(test)]
    pub(crate) fn cell_counts(&self) -> (usize, usize) {
        (self.theta.len().saturating_sub(1).max(1), self.phi.len())
    }
}

/// Common spacing of an evenly spaced grid, if it is one.
fn uniform_step(v: &[f64]) -> Option<f64> {
    if v.len() < 3 {
        return None;
    }
    let h = (v[v.len() - 1] - v[0]) / (v.len() - 1) as f64;
    v.windows(2)
        .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h)
        .then_some(h)
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

/// Free-function form of [`RadiationPattern::eval`].
pub fn eval_pattern(rp: &RadiationPattern, theta: f64, phi: f64) -> Result<Complex64, PatternError> {
    rp.eval(theta, phi)
}

/// Ordered set of patterns the transmitter can switch between.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    patterns: Vec<RadiationPattern>,
}

impl Codebook {
    pub fn new(patterns: Vec<RadiationPattern>) -> Result<Self, PatternError> {
        if patterns.is_empty() {
            return Err(PatternError::Invalid("codebook needs at least one pattern".into()));
        }
        Ok(Self { patterns })
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn patterns(&self) -> &[RadiationPattern] {
        &self.patterns
    }

    pub fn get(&self, p: usize) -> Option<&RadiationPattern> {
        self.patterns.get(p)
    }

    /// Sub-codebook made of the given indices, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, PatternError> {
        let picked = indices
            .iter()
            .map(|&i| {
                self.patterns
                    .get(i)
                    .cloned()
                    .ok_or_else(|| PatternError::Invalid(format!("pattern index {i} out of range")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(picked)
    }
}

/// Pattern-difference kernel `|G_q(θ,φ) x_n − G_p(θ,φ) x_m|²` for complex
/// amplitudes `G_p`, `G_q`.
pub fn psi(
    rp_p: &RadiationPattern,
    rp_q: &RadiationPattern,
    x_m: Complex64,
    x_n: Complex64,
    theta: f64,
    phi: f64,
) -> Result<f64, PatternError> {
    let gp = rp_p.eval(theta, phi)?;
    let gq = rp_q.eval(theta, phi)?;
    Ok(psi_from_amplitudes(gp, gq, x_m, x_n))
}

#[inline]
pub(crate) fn psi_from_amplitudes(gp: Complex64, gq: Complex64, x_m: Complex64, x_n: Complex64) -> f64 {
    (gq * x_n - gp * x_m).norm_sqr()
}

/// 4×4 feed matrix of the planar array: `+1`, `-1` (180° phase) or `0` (off).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExcitationMatrix {
    entries: [[i8; 4]; 4],
}

impl ExcitationMatrix {
    pub const A: Self = Self::from_rows([[0, 1, 1, 0], [0, 1, 1, 0], [0, -1, -1, 0], [0, -1, -1, 0]]);
    pub const B: Self = Self::from_rows([[0, 0, 1, 1], [0, 0, 1, 1], [-1, -1, 0, 0], [-1, -1, 0, 0]]);
    pub const C: Self = Self::from_rows([[0, 0, 0, 0], [-1, -1, 1, 1], [-1, -1, 1, 1], [0, 0, 0, 0]]);
    pub const D: Self = Self::from_rows([[-1, -1, 0, 0], [-1, -1, 0, 0], [0, 0, 1, 1], [0, 0, 1, 1]]);
    pub const E: Self = Self::from_rows([[0, -1, -1, 0], [0, -1, -1, 0], [0, 1, 1, 0], [0, 1, 1, 0]]);

    const fn from_rows(entries: [[i8; 4]; 4]) -> Self {
        Self { entries }
    }

    /// Validates that every entry is in `{-1, 0, 1}` and at least one is set.
    pub fn new(entries: [[i8; 4]; 4]) -> Result<Self, PatternError> {
        if entries.iter().flatten().any(|e| !(-1..=1).contains(e)) {
            return Err(PatternError::Invalid("excitation entries must be -1, 0 or +1".into()));
        }
        if entries.iter().flatten().all(|&e| e == 0) {
            return Err(PatternError::EmptyExcitation);
        }
        Ok(Self { entries })
    }

    /// Named matrix `A`..`E`.
    pub fn named(name: &str) -> Option<Self> {
        match name {
            "A" => Some(Self::A),
            "B" => Some(Self::B),
            "C" => Some(Self::C),
            "D" => Some(Self::D),
            "E" => Some(Self::E),
            _ => None,
        }
    }

    pub fn entries(&self) -> &[[i8; 4]; 4] {
        &self.entries
    }

    pub fn active_elements(&self) -> usize {
        self.entries.iter().flatten().filter(|&&e| e != 0).count()
    }

    /// Quarter turn clockwise in the array plane.
    pub fn rotate90(&self) -> Self {
        let mut out = [[0i8; 4]; 4];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.entries[3 - c][r];
            }
        }
        Self { entries: out }
    }

    pub fn negated(&self) -> Self {
        let mut out = self.entries;
        out.iter_mut().flatten().for_each(|e| *e = -*e);
        Self { entries: out }
    }
}

impl fmt::Display for ExcitationMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (r, row) in self.entries.iter().enumerate() {
            if r > 0 {
                f.write_str(",")?;
            }
            for e in row {
                f.write_str(match e {
                    1 => "+",
                    -1 => "-",
                    _ => "0",
                })?;
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for ExcitationMatrix {
    type Err = PatternError;

    /// Parses four comma-separated rows of `+`, `-`, `0`, e.g.
    /// `0++0,0++0,0--0,0--0`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let rows: Vec<&str> = s.split(',').map(str::trim).collect();
        let bad = || PatternError::Invalid(format!("bad excitation matrix {s:?}"));
        if rows.len() != 4 {
            return Err(bad());
        }
        let mut entries = [[0i8; 4]; 4];
        for (r, row) in rows.iter().enumerate() {
            let chars: Vec<char> = row.chars().collect();
            if chars.len() != 4 {
                return Err(bad());
            }
            for (c, ch) in chars.iter().enumerate() {
                entries[r][c] = match ch {
                    '+' => 1,
                    '-' => -1,
                    '0' => 0,
                    _ => return Err(bad()),
                };
            }
        }
        Self::new(entries)
    }
}

/// Element positions in wavelengths: row 0 at +y, column 0 at −x, centred on
/// the origin, array in the x–y plane (broadside along θ = 0).
fn element_position(r: usize, c: usize, spacing: f64) -> (f64, f64) {
    ((c as f64 - 1.5) * spacing, (1.5 - r as f64) * spacing)
}

/// Complex array factor of the excitation in direction `(θ, φ)`.
pub fn array_factor(ex: &ExcitationMatrix, spacing: f64, theta: f64, phi: f64) -> Complex64 {
    let st = theta.sin();
    let ux = st * phi.cos();
    let uy = st * phi.sin();
    let mut af = Complex64::new(0.0, 0.0);
    for (r, row) in ex.entries.iter().enumerate() {
        for (c, &e) in row.iter().enumerate() {
            if e == 0 {
                continue;
            }
            let (x, y) = element_position(r, c, spacing);
            let arg = TAU * (x * ux + y * uy);
            af += Complex64::from_polar(e as f64, arg);
        }
    }
    af
}

/// Mean of `|AF|²` over the sphere (solid-angle weighted).
///
/// For isotropic elements this is `Σ_i Σ_l w_i w_l sinc(2π r_il)` with
/// `r_il` the element separation in wavelengths.
pub fn array_factor_mean_power(ex: &ExcitationMatrix, spacing: f64) -> f64 {
    let mut elems = Vec::new();
    for (r, row) in ex.entries.iter().enumerate() {
        for (c, &e) in row.iter().enumerate() {
            if e != 0 {
                let (x, y) = element_position(r, c, spacing);
                elems.push((e as f64, x, y));
            }
        }
    }
    let mut total = 0.0;
    for &(wi, xi, yi) in &elems {
        for &(wl, xl, yl) in &elems {
            let k = TAU * ((xi - xl).powi(2) + (yi - yl).powi(2)).sqrt();
            let sinc = if k == 0.0 { 1.0 } else { k.sin() / k };
            total += wi * wl * sinc;
        }
    }
    total
}

/// Grid resolution of synthesized patterns, in degrees.
pub const SYNTH_RESOLUTION_DEG: f64 = 1.0;

/// Default element spacing of the synthesized array, in wavelengths.
pub const DEFAULT_SPACING: f64 = 0.5;

/// Tabulates the far-field pattern of a 4×4 array of isotropic elements fed
/// by `ex`, on a 1° grid (θ from 0° to 180°, φ from −179° to 180°).
///
/// The gain is normalized by the sphere mean of `|AF|²`, so the result is
/// the array directivity; the normalization constant is recorded in the
/// label. Phase is `arg(AF)`.
pub fn synth_array_pattern(ex: &ExcitationMatrix, spacing: f64) -> Result<RadiationPattern, PatternError> {
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(PatternError::BadSpacing(spacing));
    }
    if ex.active_elements() == 0 {
        return Err(PatternError::EmptyExcitation);
    }
    let n_theta = (180.0 / SYNTH_RESOLUTION_DEG).round() as usize + 1;
    let n_phi = (360.0 / SYNTH_RESOLUTION_DEG).round() as usize;
    let theta: Vec<f64> = (0..n_theta)
        .map(|i| (i as f64 * SYNTH_RESOLUTION_DEG).to_radians())
        .collect();
    let phi: Vec<f64> = (0..n_phi)
        .map(|j| (-180.0 + (j + 1) as f64 * SYNTH_RESOLUTION_DEG).to_radians())
        .collect();
    let norm = array_factor_mean_power(ex, spacing);
    let mut gain = Vec::with_capacity(n_theta * n_phi);
    let mut phase = Vec::with_capacity(n_theta * n_phi);
    for &th in &theta {
        for &ph in &phi {
            let af = array_factor(ex, spacing, th, ph);
            gain.push(af.norm_sqr() / norm);
            phase.push(if af.norm_sqr() == 0.0 { 0.0 } else { af.arg() });
        }
    }
    RadiationPattern::new(
        theta,
        phi,
        gain,
        phase,
        format!("array[{ex}] d={spacing} mean|AF|^2={norm:.6}"),
    )
}

/// Reads a pattern in the `RP v1` text format.
///
/// ```text
/// RP v1 <n_theta> <n_phi>
/// <theta grid, degrees>
/// <phi grid, degrees>
/// <n_theta lines of n_phi gains, dB>
/// <n_theta lines of n_phi phases, degrees>
/// ```
///
/// Tokens are whitespace separated and `#` starts a comment. A gain of
/// `-inf` dB is accepted and maps to zero linear gain.
pub fn load_pattern(path: impl AsRef<Path>) -> Result<RadiationPattern, PatternError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| PatternError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_pattern(&text, &path.display().to_string(), &label)
}

/// Parses `RP v1` text; `origin` is used in error messages.
pub fn parse_pattern(text: &str, origin: &str, label: &str) -> Result<RadiationPattern, PatternError> {
    let err = |line: usize, message: String| PatternError::Parse {
        path: origin.to_string(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines.next().ok_or_else(|| err(1, "empty pattern file".into()))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 4 || toks[0] != "RP" || toks[1] != "v1" {
        return Err(err(hline, format!("expected header `RP v1 <n_theta> <n_phi>`, got {header:?}")));
    }
    let n_theta: usize = toks[2]
        .parse()
        .map_err(|_| err(hline, format!("bad n_theta {:?}", toks[2])))?;
    let n_phi: usize = toks[3]
        .parse()
        .map_err(|_| err(hline, format!("bad n_phi {:?}", toks[3])))?;
    if n_theta < 2 || n_phi < 1 {
        return Err(err(hline, "need n_theta >= 2 and n_phi >= 1".into()));
    }

    let mut row = |expected: usize, what: &str| -> Result<(usize, Vec<f64>), PatternError> {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| err(0, format!("unexpected end of file while reading {what}")))?;
        let vals = l
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| err(ln, format!("bad number {t:?} in {what}"))))
            .collect::<Result<Vec<f64>, _>>()?;
        if vals.len() != expected {
            return Err(err(ln, format!("{what}: expected {expected} values, found {}", vals.len())));
        }
        if let Some(v) = vals.iter().find(|v| v.is_nan()) {
            return Err(err(ln, format!("{what}: NaN entry ({v})")));
        }
        Ok((ln, vals))
    };

    let (tl, theta_deg) = row(n_theta, "theta grid")?;
    if !strictly_increasing(&theta_deg) || theta_deg.iter().any(|v| !v.is_finite()) {
        return Err(err(tl, "theta grid is not strictly increasing".into()));
    }
    let (pl, phi_deg) = row(n_phi, "phi grid")?;
    if !strictly_increasing(&phi_deg) || phi_deg.iter().any(|v| !v.is_finite()) {
        return Err(err(pl, "phi grid is not strictly increasing".into()));
    }
    let mut gain = Vec::with_capacity(n_theta * n_phi);
    for i in 0..n_theta {
        let (ln, vals) = row(n_phi, &format!("gain row {}", i + 1))?;
        for v in vals {
            if v == f64::INFINITY {
                return Err(err(ln, "gain of +inf dB".into()));
            }
            gain.push(10f64.powf(v / 10.0));
        }
    }
    let mut phase = Vec::with_capacity(n_theta * n_phi);
    for i in 0..n_theta {
        let (ln, vals) = row(n_phi, &format!("phase row {}", i + 1))?;
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(err(ln, "phase entries must be finite".into()));
        }
        phase.extend(vals.into_iter().map(f64::to_radians));
    }
    if let Some((ln, _)) = lines.next() {
        return Err(err(ln, "trailing data after phase table".into()));
    }
    RadiationPattern::new(
        theta_deg.iter().map(|d| d.to_radians()).collect(),
        phi_deg.iter().map(|d| d.to_radians()).collect(),
        gain,
        phase,
        label,
    )
    .map_err(|e| err(tl, e.to_string()))
}

/// Serializes a pattern in the `RP v1` format (gains in dB, angles in degrees).
pub fn format_pattern(rp: &RadiationPattern) -> String {
    use fmt::Write;
    let mut s = String::new();
    let _ = writeln!(s, "# {}", rp.label().replace('\n', " "));
    let _ = writeln!(s, "RP v1 {} {}", rp.theta.len(), rp.phi.len());
    let join = |v: &mut dyn Iterator<Item = f64>| v.map(|x| format!("{x}")).collect::<Vec<_>>().join(" ");
    let _ = writeln!(s, "{}", join(&mut rp.theta.iter().map(|t| t.to_degrees())));
    let _ = writeln!(s, "{}", join(&mut rp.phi.iter().map(|p| p.to_degrees())));
    for row in rp.gain.chunks(rp.phi.len()) {
        let _ = writeln!(s, "{}", join(&mut row.iter().map(|g| 10.0 * g.log10())));
    }
    for row in rp.phase.chunks(rp.phi.len()) {
        let _ = writeln!(s, "{}", join(&mut row.iter().map(|p| p.to_degrees())));
    }
    s
}
