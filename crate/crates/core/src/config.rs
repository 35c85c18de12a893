//! Experiment configuration files.
//!
//! Configs are TOML. Every key is optional except `patterns.sources`; missing
//! keys take the defaults listed on [`ExperimentConfig`]. Angles are written in
//! degrees and converted to radians when the channel model is built. Errors
//! name the offending key path and the line it appears on.

use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use thiserror::Error;
use toml::de::{DeString, DeTable, DeValue};
use toml::Spanned;

use crate::analysis::{AnalysisSettings, BoundKind};
use crate::channel::{AnglePair, AngularDistribution, ChannelModel, Fading};
use crate::modem::{Constellation, Labeling};
use crate::montecarlo::SmConfig;
use crate::patterns::{load_pattern, synth_array_pattern, Codebook, ExcitationMatrix, PatternError, RadiationPattern};

pub const DEFAULT_SNR_GRID_DB: [f64; 5] = [0.0, 5.0, 10.0, 15.0, 20.0];
pub const DEFAULT_RAYS: usize = 64;
/// Metres (2.4 GHz).
pub const DEFAULT_WAVELENGTH: f64 = 0.125;
pub const DEFAULT_MAX_TRIALS: u64 = 1_000_000;
pub const DEFAULT_TARGET_ERRORS: u64 = 200;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("`{key}` (line {line}): {message}")]
    Invalid { key: String, line: usize, message: String },
    #[error("pattern source {spec:?}: {err}")]
    Pattern { spec: String, err: PatternError },
}

/// One angular law as written in a config, angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LawSpec {
    Laplacian { theta0_deg: f64, sigma: f64 },
    VonMises { mu_deg: f64, kappa: f64 },
    Gaussian { phi0_deg: f64, sigma: f64 },
    Uniform { a_deg: f64, b_deg: f64 },
}

impl LawSpec {
    pub const FULL_CIRCLE: Self = Self::Uniform { a_deg: -180.0, b_deg: 180.0 };

    pub fn to_distribution(&self) -> AngularDistribution {
        match *self {
            Self::Laplacian { theta0_deg, sigma } => AngularDistribution::TruncatedLaplacian { theta0: theta0_deg.to_radians(), sigma },
            Self::VonMises { mu_deg, kappa } => AngularDistribution::VonMises { mu: mu_deg.to_radians(), kappa },
            Self::Gaussian { phi0_deg, sigma } => AngularDistribution::TruncatedGaussian { phi0: phi0_deg.to_radians(), sigma },
            Self::Uniform { a_deg, b_deg } => AngularDistribution::Uniform { a: a_deg.to_radians(), b: b_deg.to_radians() },
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Self::Laplacian { .. } => "laplacian",
            Self::VonMises { .. } => "von_mises",
            Self::Gaussian { .. } => "gaussian",
            Self::Uniform { .. } => "uniform",
        }
    }

    fn params(&self) -> [(&'static str, f64); 2] {
        match *self {
            Self::Laplacian { theta0_deg, sigma } => [("theta0", theta0_deg), ("sigma", sigma)],
            Self::VonMises { mu_deg, kappa } => [("mu", mu_deg), ("kappa", kappa)],
            Self::Gaussian { phi0_deg, sigma } => [("phi0", phi0_deg), ("sigma", sigma)],
            Self::Uniform { a_deg, b_deg } => [("a", a_deg), ("b", b_deg)],
        }
    }
}

/// Where a pattern comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum PatternSource {
    Isotropic,
    Array(ExcitationMatrix),
    /// Resolved against the config file's directory.
    File(PathBuf),
}

/// A pattern source together with the text it was parsed from.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSpec {
    pub text: String,
    pub source: PatternSource,
}

impl PatternSpec {
    /// Parses `isotropic`, `file:<path>`, or `array:<ops>:<matrix>` where
    /// `<matrix>` is `A`..`E` or `custom:<rows>` and each op is one of `rot90`,
    /// `rot180`, `rot270` (clockwise) or `neg`, applied right to left.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, String> {
        let source = if text == "isotropic" {
            PatternSource::Isotropic
        } else if let Some(path) = text.strip_prefix("file:") {
            if path.is_empty() {
                return Err("empty file path".into());
            }
            PatternSource::File(base_dir.join(path))
        } else if let Some(rest) = text.strip_prefix("array:") {
            PatternSource::Array(parse_array_expr(rest)?)
        } else {
            return Err("expected `isotropic`, `array:...` or `file:...`".into());
        };
        Ok(Self { text: text.to_string(), source })
    }

    /// Builds the pattern; synthesized arrays use `spacing` wavelengths, and
    /// every gain is scaled by `gain_offset_db`.
    pub fn load(&self, spacing: f64, gain_offset_db: f64) -> Result<RadiationPattern, ConfigError> {
        let wrap = |err| ConfigError::Pattern { spec: self.text.clone(), err };
        let rp = match &self.source {
            PatternSource::Isotropic => RadiationPattern::isotropic(),
            PatternSource::Array(ex) => synth_array_pattern(ex, spacing).map_err(wrap)?,
            PatternSource::File(path) => load_pattern(path).map_err(wrap)?,
        };
        Ok(rp.scaled_db(gain_offset_db).with_label(self.text.clone()))
    }
}

fn parse_array_expr(expr: &str) -> Result<ExcitationMatrix, String> {
    if let Some(rows) = expr.strip_prefix("custom:") {
        return rows.parse().map_err(|e: PatternError| e.to_string());
    }
    if let Some((op, rest)) = expr.split_once(':') {
        let inner = parse_array_expr(rest)?;
        return match op {
            "rot90" => Ok(inner.rotate90()),
            "rot180" => Ok(inner.rotate90().rotate90()),
            "rot270" => Ok(inner.rotate90().rotate90().rotate90()),
            "neg" => Ok(inner.negated()),
            _ => Err(format!("unknown array operation {op:?}")),
        };
    }
    ExcitationMatrix::named(expr).ok_or_else(|| format!("unknown excitation matrix {expr:?} (expected A..E or custom:<rows>)"))
}

/// A complete experiment description.
///
/// | key | default |
/// |---|---|
/// | `experiment.seed` | 1 |
/// | `experiment.snr_db` | `[0, 5, 10, 15, 20]` |
/// | `experiment.max_trials` | 1 000 000 |
/// | `experiment.target_errors` | 200 |
/// | `experiment.n_r` | 1 |
/// | `experiment.constellation` | `"bpsk"` |
/// | `experiment.labeling` | `"natural"` |
/// | `experiment.fading` | `"per_symbol"` |
/// | `channel.rays` | 64 |
/// | `channel.wavelength` | 0.125 m |
/// | `channel.rx_spacing` | half the wavelength |
/// | `channel.aod.theta`, `channel.aoa.theta` | laplacian, `theta0 = 90`, `sigma = 0.5` |
/// | `channel.aod.phi`, `channel.aoa.phi` | uniform, `a = -180`, `b = 180` |
/// | `patterns.spacing` | 0.5 wavelengths |
/// | `patterns.gain_offset_db` | 0 |
/// | `analysis.kinds` | every kind valid for `n_r` |
/// | `analysis.*` | [`AnalysisSettings::default`] |
/// | `optimizer.choose` | 4, or the largest power of two in the pool if smaller |
/// | `optimizer.ranking_snr_db` | 30 |
/// | `optimizer.kind` | `"asymptotic"` |
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub snr_grid_db: Vec<f64>,
    pub max_trials: u64,
    pub target_errors: u64,
    pub n_r: usize,
    pub constellation: String,
    pub labeling: Labeling,
    pub fading: Fading,
    pub rays: usize,
    pub wavelength: f64,
    pub rx_spacing: f64,
    pub aod_theta: LawSpec,
    pub aod_phi: LawSpec,
    pub aoa_theta: LawSpec,
    pub aoa_phi: LawSpec,
    pub patterns: Vec<PatternSpec>,
    pub spacing: f64,
    pub gain_offset_db: f64,
    pub kinds: Vec<BoundKind>,
    pub analysis: AnalysisSettings,
    pub choose: usize,
    pub ranking_snr_db: f64,
    pub ranking_kind: BoundKind,
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn constellation(&self) -> Constellation {
        Constellation::by_name(&self.constellation, self.labeling).expect("validated on parse")
    }

    pub fn aod(&self) -> AnglePair {
        AnglePair { theta: self.aod_theta.to_distribution(), phi: self.aod_phi.to_distribution() }
    }

    pub fn aoa(&self) -> AnglePair {
        AnglePair { theta: self.aoa_theta.to_distribution(), phi: self.aoa_phi.to_distribution() }
    }

    pub fn channel_model(&self) -> ChannelModel {
        ChannelModel::new(self.rays, self.wavelength, self.rx_spacing, self.aod(), self.aoa()).expect("validated on parse")
    }

    /// Every configured pattern, in order.
    pub fn load_pool(&self) -> Result<Codebook, ConfigError> {
        let patterns = self
            .patterns
            .iter()
            .map(|p| p.load(self.spacing, self.gain_offset_db))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Codebook::new(patterns).expect("at least one source"))
    }

    pub fn sm_config(&self, codebook: Codebook) -> SmConfig {
        SmConfig {
            codebook,
            channel: self.channel_model(),
            n_r: self.n_r,
            constellation: self.constellation(),
            snr_grid_db: self.snr_grid_db.clone(),
            max_trials: self.max_trials,
            target_errors: self.target_errors,
            seed: self.seed,
            fading: self.fading,
        }
    }

    /// Canonical TOML with every key spelled out; parsing it back gives an
    /// equal config.
    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        let list = |v: &[f64]| v.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(", ");
        let strs = |v: &mut dyn Iterator<Item = &str>| v.map(toml_str).collect::<Vec<_>>().join(", ");
        let _ = writeln!(s, "[experiment]");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "snr_db = [{}]", list(&self.snr_grid_db));
        let _ = writeln!(s, "max_trials = {}", self.max_trials);
        let _ = writeln!(s, "target_errors = {}", self.target_errors);
        let _ = writeln!(s, "n_r = {}", self.n_r);
        let _ = writeln!(s, "constellation = {}", toml_str(&self.constellation));
        let _ = writeln!(s, "labeling = {}", toml_str(&self.labeling.to_string()));
        let _ = writeln!(s, "fading = {}", toml_str(&self.fading.to_string()));
        let _ = writeln!(s, "\n[channel]");
        let _ = writeln!(s, "rays = {}", self.rays);
        let _ = writeln!(s, "wavelength = {}", fmt_f64(self.wavelength));
        let _ = writeln!(s, "rx_spacing = {}", fmt_f64(self.rx_spacing));
        for (name, law) in [
            ("aod.theta", &self.aod_theta),
            ("aod.phi", &self.aod_phi),
            ("aoa.theta", &self.aoa_theta),
            ("aoa.phi", &self.aoa_phi),
        ] {
            let _ = writeln!(s, "\n[channel.{name}]");
            let _ = writeln!(s, "law = {}", toml_str(law.name()));
            for (k, v) in law.params() {
                let _ = writeln!(s, "{k} = {}", fmt_f64(v));
            }
        }
        let _ = writeln!(s, "\n[patterns]");
        let _ = writeln!(s, "sources = [{}]", strs(&mut self.patterns.iter().map(|p| p.text.as_str())));
        let _ = writeln!(s, "spacing = {}", fmt_f64(self.spacing));
        let _ = writeln!(s, "gain_offset_db = {}", fmt_f64(self.gain_offset_db));
        let a = &self.analysis;
        let _ = writeln!(s, "\n[analysis]");
        let _ = writeln!(s, "kinds = [{}]", strs(&mut self.kinds.iter().map(|k| k.as_str())));
        let _ = writeln!(s, "quad_theta_nodes = {}", a.quad_theta_nodes);
        let _ = writeln!(s, "quad_phi_nodes = {}", a.quad_phi_nodes);
        let _ = writeln!(s, "quad_craig_nodes = {}", a.quad_craig_nodes);
        let _ = writeln!(s, "quad_z_nodes = {}", a.quad_z_nodes);
        let _ = writeln!(s, "z_cutoff = {}", fmt_f64(a.z_cutoff));
        let _ = writeln!(s, "rel_tol = {}", fmt_f64(a.rel_tol));
        let _ = writeln!(s, "\n[optimizer]");
        let _ = writeln!(s, "choose = {}", self.choose);
        let _ = writeln!(s, "ranking_snr_db = {}", fmt_f64(self.ranking_snr_db));
        let _ = writeln!(s, "kind = {}", toml_str(self.ranking_kind.as_str()));
        s
    }
}

fn fmt_f64(x: f64) -> String {
    // Debug prints the shortest round-tripping form but omits ".0" after
    // exponents; TOML accepts both shapes.
    let s = format!("{x:?}");
    if s.contains(['.', 'e', 'i', 'N']) {
        s
    } else {
        format!("{s}.0")
    }
}

fn toml_str(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

/// Reads and validates a config file. Relative `file:` sources resolve
/// against the file's directory.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config_str(&text, &base)
}

/// Parses config text; `base_dir` anchors relative pattern files.
pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<ExperimentConfig, ConfigError> {
    let doc = DeTable::parse(text).map_err(|e| ConfigError::Syntax {
        line: e.span().map_or(1, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    let root = Section { text, table: doc.get_ref(), path: String::new(), line: 1 };
    root.allow(&["experiment", "channel", "patterns", "analysis", "optimizer"])?;

    let ex = root.section("experiment")?;
    ex.allow(&["seed", "snr_db", "max_trials", "target_errors", "n_r", "constellation", "labeling", "fading"])?;
    let seed = ex.u64("seed")?.unwrap_or(1);
    let snr_grid_db = match ex.f64_list("snr_db")? {
        Some(v) if v.is_empty() => return Err(ex.invalid("snr_db", "SNR grid must not be empty")),
        Some(v) => v,
        None => DEFAULT_SNR_GRID_DB.to_vec(),
    };
    let max_trials = ex.u64("max_trials")?.unwrap_or(DEFAULT_MAX_TRIALS);
    if max_trials == 0 {
        return Err(ex.invalid("max_trials", "must be at least 1"));
    }
    let target_errors = ex.u64("target_errors")?.unwrap_or(DEFAULT_TARGET_ERRORS);
    if target_errors == 0 {
        return Err(ex.invalid("target_errors", "must be at least 1"));
    }
    let n_r = ex.u64("n_r")?.unwrap_or(1) as usize;
    if n_r == 0 {
        return Err(ex.invalid("n_r", "need at least one receive antenna"));
    }
    let labeling = match ex.str("labeling")? {
        Some(s) => s.parse().map_err(|e: String| ex.invalid("labeling", &e))?,
        None => Labeling::Natural,
    };
    let constellation = ex.str("constellation")?.unwrap_or("bpsk").to_string();
    if let Err(e) = Constellation::by_name(&constellation, labeling) {
        return Err(ex.invalid("constellation", &e.to_string()));
    }
    let fading = match ex.str("fading")? {
        Some(s) => s.parse().map_err(|e: String| ex.invalid("fading", &e))?,
        None => Fading::PerSymbol,
    };

    let ch = root.section("channel")?;
    ch.allow(&["rays", "wavelength", "rx_spacing", "aod", "aoa"])?;
    let rays = ch.u64("rays")?.map_or(DEFAULT_RAYS, |v| v as usize);
    if rays == 0 {
        return Err(ch.invalid("rays", "need at least one ray"));
    }
    let wavelength = ch.f64("wavelength")?.unwrap_or(DEFAULT_WAVELENGTH);
    if !(wavelength > 0.0) {
        return Err(ch.invalid("wavelength", "must be positive"));
    }
    let rx_spacing = ch.f64("rx_spacing")?.unwrap_or(0.5 * wavelength);
    if !(rx_spacing >= 0.0) {
        return Err(ch.invalid("rx_spacing", "must be non-negative"));
    }
    let aod = ch.section("aod")?;
    aod.allow(&["theta", "phi"])?;
    let aoa = ch.section("aoa")?;
    aoa.allow(&["theta", "phi"])?;
    let default_theta = LawSpec::Laplacian { theta0_deg: 90.0, sigma: 0.5 };
    let aod_theta = aod.law("theta", default_theta)?;
    let aod_phi = aod.law("phi", LawSpec::FULL_CIRCLE)?;
    let aoa_theta = aoa.law("theta", default_theta)?;
    let aoa_phi = aoa.law("phi", LawSpec::FULL_CIRCLE)?;

    let pt = root.section("patterns")?;
    pt.allow(&["sources", "spacing", "gain_offset_db"])?;
    let sources = pt.str_list("sources")?.ok_or_else(|| pt.invalid("sources", "at least one pattern source is required"))?;
    if sources.is_empty() {
        return Err(pt.invalid("sources", "at least one pattern source is required"));
    }
    let mut patterns = Vec::with_capacity(sources.len());
    for s in &sources {
        let spec = PatternSpec::parse(s, base_dir).map_err(|e| pt.invalid("sources", &format!("{s:?}: {e}")))?;
        if let PatternSource::File(p) = &spec.source {
            if !p.is_file() {
                return Err(pt.invalid("sources", &format!("pattern file {} does not exist", p.display())));
            }
        }
        patterns.push(spec);
    }
    let spacing = pt.f64("spacing")?.unwrap_or(0.5);
    if !(spacing > 0.0) {
        return Err(pt.invalid("spacing", "must be positive"));
    }
    let gain_offset_db = pt.f64("gain_offset_db")?.unwrap_or(0.0);

    let an = root.section("analysis")?;
    an.allow(&["kinds", "quad_theta_nodes", "quad_phi_nodes", "quad_craig_nodes", "quad_z_nodes", "z_cutoff", "rel_tol"])?;
    let kinds = match an.str_list("kinds")? {
        Some(list) => {
            let mut out = Vec::new();
            for k in list {
                let kind: BoundKind = k.parse().map_err(|e: String| an.invalid("kinds", &e))?;
                if !kind.supports(n_r) {
                    return Err(an.invalid("kinds", &format!("bound kind {k} is not available for n_r = {n_r}")));
                }
                out.push(kind);
            }
            out
        }
        None => BoundKind::ALL.into_iter().filter(|k| k.supports(n_r)).collect(),
    };
    let rel_tol = an.f64("rel_tol")?.unwrap_or(1e-3);
    let mut analysis = AnalysisSettings::with_rel_tol(rel_tol);
    for (key, slot) in [
        ("quad_theta_nodes", &mut analysis.quad_theta_nodes),
        ("quad_phi_nodes", &mut analysis.quad_phi_nodes),
        ("quad_craig_nodes", &mut analysis.quad_craig_nodes),
        ("quad_z_nodes", &mut analysis.quad_z_nodes),
    ] {
        if let Some(v) = an.u64(key)? {
            *slot = v as usize;
        }
    }
    if let Some(z) = an.f64("z_cutoff")? {
        analysis.z_cutoff = z;
    }
    if let Err(e) = analysis.validate() {
        return Err(an.invalid("", &e.to_string()));
    }

    let op = root.section("optimizer")?;
    op.allow(&["choose", "ranking_snr_db", "kind"])?;
    let default_choose = 1usize << patterns.len().min(4).ilog2();
    let choose = op.u64("choose")?.map_or(default_choose, |v| v as usize);
    if choose > patterns.len() {
        return Err(op.invalid("choose", &format!("choose = {choose} exceeds the pool of {} patterns", patterns.len())));
    }
    if choose == 0 || !choose.is_power_of_two() {
        return Err(op.invalid("choose", &format!("choose = {choose} must be a power of two")));
    }
    let ranking_snr_db = op.f64("ranking_snr_db")?.unwrap_or(30.0);
    let ranking_kind = match op.str("kind")? {
        Some(k) => k.parse().map_err(|e: String| op.invalid("kind", &e))?,
        None => BoundKind::Asymptotic,
    };
    if !ranking_kind.supports(n_r) {
        return Err(op.invalid("kind", &format!("bound kind {} is not available for n_r = {n_r}", ranking_kind.as_str())));
    }

    Ok(ExperimentConfig {
        seed,
        snr_grid_db,
        max_trials,
        target_errors,
        n_r,
        constellation,
        labeling,
        fading,
        rays,
        wavelength,
        rx_spacing,
        aod_theta,
        aod_phi,
        aoa_theta,
        aoa_phi,
        patterns,
        spacing,
        gain_offset_db,
        kinds,
        analysis,
        choose,
        ranking_snr_db,
        ranking_kind,
        base_dir: base_dir.to_path_buf(),
    })
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// A table of the document plus its dotted path, for error reporting.
struct Section<'a, 'i> {
    text: &'a str,
    table: &'a DeTable<'i>,
    path: String,
    line: usize,
}

impl<'a, 'i> Section<'a, 'i> {
    fn key_path(&self, key: &str) -> String {
        match (self.path.is_empty(), key.is_empty()) {
            (true, _) => key.to_string(),
            (false, true) => self.path.clone(),
            (false, false) => format!("{}.{key}", self.path),
        }
    }

    fn entry(&self, key: &str) -> Option<(&'a Spanned<DeString<'i>>, &'a Spanned<DeValue<'i>>)> {
        self.table.iter().find(|(k, _)| k.get_ref().as_ref() == key)
    }

    fn invalid(&self, key: &str, message: &str) -> ConfigError {
        let line = self.entry(key).map_or(self.line, |(k, _)| line_of(self.text, k.span().start));
        ConfigError::Invalid { key: self.key_path(key), line, message: message.to_string() }
    }

    fn at(&self, key: &str, span: Range<usize>, message: String) -> ConfigError {
        ConfigError::Invalid { key: self.key_path(key), line: line_of(self.text, span.start), message }
    }

    /// Rejects keys outside `known`.
    fn allow(&self, known: &[&str]) -> Result<(), ConfigError> {
        for (k, _) in self.table.iter() {
            let name = k.get_ref().as_ref();
            if !known.contains(&name) {
                return Err(self.at(name, k.span(), format!("unknown key (expected one of: {})", known.join(", "))));
            }
        }
        Ok(())
    }

    /// A sub-table; absent tables read as empty.
    fn section(&self, key: &str) -> Result<Section<'a, 'i>, ConfigError> {
        static EMPTY: std::sync::OnceLock<DeTable<'static>> = std::sync::OnceLock::new();
        match self.entry(key) {
            Some((k, v)) => match v.get_ref().as_table() {
                Some(t) => Ok(Section { text: self.text, table: t, path: self.key_path(key), line: line_of(self.text, k.span().start) }),
                None => Err(self.at(key, v.span(), format!("expected a table, found {}", v.get_ref().type_str()))),
            },
            None => Ok(Section {
                text: self.text,
                table: EMPTY.get_or_init(DeTable::new),
                path: self.key_path(key),
                line: self.line,
            }),
        }
    }

    fn number(&self, key: &str, v: &Spanned<DeValue<'i>>) -> Result<f64, ConfigError> {
        let x = match v.get_ref() {
            DeValue::Integer(i) => i64::from_str_radix(i.as_str(), i.radix()).ok().map(|n| n as f64),
            DeValue::Float(f) => f.as_str().parse::<f64>().ok(),
            other => return Err(self.at(key, v.span(), format!("expected a number, found {}", other.type_str()))),
        };
        match x {
            Some(x) if x.is_finite() => Ok(x),
            _ => Err(self.at(key, v.span(), "expected a finite number".into())),
        }
    }

    fn f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.entry(key).map(|(_, v)| self.number(key, v)).transpose()
    }

    fn u64(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        let Some((_, v)) = self.entry(key) else { return Ok(None) };
        match v.get_ref() {
            DeValue::Integer(i) => u64::from_str_radix(i.as_str(), i.radix())
                .map(Some)
                .map_err(|_| self.at(key, v.span(), format!("expected a non-negative integer, found {}", i.as_str()))),
            other => Err(self.at(key, v.span(), format!("expected an integer, found {}", other.type_str()))),
        }
    }

    fn str(&self, key: &str) -> Result<Option<&'a str>, ConfigError> {
        let Some((_, v)) = self.entry(key) else { return Ok(None) };
        match v.get_ref() {
            DeValue::String(s) => Ok(Some(s.as_ref())),
            other => Err(self.at(key, v.span(), format!("expected a string, found {}", other.type_str()))),
        }
    }

    fn array(&self, key: &str) -> Result<Option<&'a [Spanned<DeValue<'i>>]>, ConfigError> {
        let Some((_, v)) = self.entry(key) else { return Ok(None) };
        match v.get_ref() {
            DeValue::Array(a) => Ok(Some(a.as_ref())),
            other => Err(self.at(key, v.span(), format!("expected an array, found {}", other.type_str()))),
        }
    }

    fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        self.array(key)?.map(|a| a.iter().map(|v| self.number(key, v)).collect()).transpose()
    }

    fn str_list(&self, key: &str) -> Result<Option<Vec<String>>, ConfigError> {
        let Some(a) = self.array(key)? else { return Ok(None) };
        a.iter()
            .map(|v| match v.get_ref() {
                DeValue::String(s) => Ok(s.to_string()),
                other => Err(self.at(key, v.span(), format!("expected a string, found {}", other.type_str()))),
            })
            .collect::<Result<_, _>>()
            .map(Some)
    }

    /// An angular-law table such as `[channel.aod.theta]`.
    fn law(&self, key: &str, default: LawSpec) -> Result<LawSpec, ConfigError> {
        if self.entry(key).is_none() {
            return Ok(default);
        }
        let t = self.section(key)?;
        let name = t.str("law")?.ok_or_else(|| t.invalid("law", "missing `law` (laplacian, von_mises, gaussian or uniform)"))?;
        let need = |k: &str| -> Result<f64, ConfigError> { t.f64(k)?.ok_or_else(|| t.invalid(k, &format!("{name} law needs `{k}`"))) };
        let spec = match name {
            "laplacian" => {
                t.allow(&["law", "theta0", "sigma"])?;
                LawSpec::Laplacian { theta0_deg: need("theta0")?, sigma: need("sigma")? }
            }
            "von_mises" => {
                t.allow(&["law", "mu", "kappa"])?;
                LawSpec::VonMises { mu_deg: need("mu")?, kappa: need("kappa")? }
            }
            "gaussian" => {
                t.allow(&["law", "phi0", "sigma"])?;
                LawSpec::Gaussian { phi0_deg: need("phi0")?, sigma: need("sigma")? }
            }
            "uniform" => {
                t.allow(&["law", "a", "b"])?;
                LawSpec::Uniform { a_deg: need("a")?, b_deg: need("b")? }
            }
            other => return Err(t.invalid("law", &format!("unknown law {other:?} (expected laplacian, von_mises, gaussian or uniform)"))),
        };
        if let Err(e) = spec.to_distribution().validate() {
            return Err(t.invalid("", &e.to_string()));
        }
        let is_theta = key == "theta";
        match spec {
            LawSpec::Laplacian { .. } if !is_theta => Err(t.invalid("law", "the truncated Laplacian is an elevation law; use it for `theta`")),
            LawSpec::VonMises { .. } | LawSpec::Gaussian { .. } | LawSpec::Uniform { .. } if is_theta => {
                Err(t.invalid("law", "elevation angles must use the laplacian law"))
            }
            _ => Ok(spec),
        }
    }
}
