use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config invalid: {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    EmbeddingCheck,
    OptimalNorm,
    EquivalenceSweep,
    Envelope,
    BesovCase,
    LorentzKaramataCase,
    CoveringSample,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::EmbeddingCheck,
        Scenario::OptimalNorm,
        Scenario::EquivalenceSweep,
        Scenario::Envelope,
        Scenario::BesovCase,
        Scenario::LorentzKaramataCase,
        Scenario::CoveringSample,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::EmbeddingCheck => "embedding_check",
            Scenario::OptimalNorm => "optimal_norm",
            Scenario::EquivalenceSweep => "equivalence_sweep",
            Scenario::Envelope => "envelope",
            Scenario::BesovCase => "besov_case",
            Scenario::LorentzKaramataCase => "lorentz_karamata_case",
            Scenario::CoveringSample => "covering_sample",
        }
    }

    fn parse(s: &str) -> Option<Scenario> {
        Scenario::ALL.into_iter().find(|x| x.name() == s)
    }

    /// Scenarios that convolve sampled fields with the kernel.
    pub fn uses_fields(self) -> bool {
        matches!(self, Scenario::BesovCase | Scenario::CoveringSample)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightKind {
    Uniform,
    /// v(t) = t^a
    Power { a: f64 },
    /// v(t) = t^(q/p - 1) b(t)^q with b(t) = (1 + ln(T/t))^beta
    LorentzKaramata { p: f64, beta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelKind {
    /// phi(tau) = tau^(alpha/n - 1) sampled directly.
    Power,
    /// Bessel-McDonald potential of order alpha.
    Bessel,
    /// |x|^(alpha-n) (1 + ln(z1/|x|))^lambda near 0, exponential tail.
    PowerSv { lambda: f64, z1: f64, tail_rate: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub q: f64,
    pub weight: WeightKind,
    pub kernel: KernelKind,
    pub alpha: f64,
    pub k: u32,
    pub n: usize,
    pub t_max: f64,
    pub grid_points: usize,
    pub t_min: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub resolution: usize,
    pub halfwidth: f64,
    pub field_count: usize,
    pub directions: usize,
    pub tgrid_points: usize,
    /// Lowest t of the modulus / envelope grid, relative to T.
    pub tgrid_floor: f64,
    pub expect_embeds: Option<bool>,
    pub expect_condition: Option<String>,
    pub factor_limit: f64,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub grid_points: Option<usize>,
    pub t_min: Option<f64>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

const KNOWN_KEYS: &[&str] = &[
    "scenario",
    "space.q",
    "space.weight",
    "space.a",
    "space.p",
    "space.b",
    "kernel.variant",
    "kernel.alpha",
    "kernel.nu",
    "kernel.lambda",
    "kernel.z1",
    "kernel.tail_rate",
    "k",
    "n",
    "T",
    "grid.points",
    "grid.tmin",
    "seed",
    "output.dir",
    "field.resolution",
    "field.halfwidth",
    "field.count",
    "field.directions",
    "tgrid.points",
    "tgrid.floor",
    "expect.embeds",
    "expect.condition",
    "expect.factor",
];

/// Split the text into key/value pairs. Blank lines and lines starting
/// with '#' are skipped; a repeated key is an error.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(invalid(&format!("line {}", i + 1), "expected key = value"));
        };
        let key = key.trim();
        let value = value.trim();
        if !KNOWN_KEYS.contains(&key) {
            return Err(invalid(key, "unknown key"));
        }
        if value.is_empty() {
            return Err(invalid(key, "empty value"));
        }
        if out.insert(key.to_string(), value.to_string()).is_some() {
            return Err(invalid(key, "given twice"));
        }
    }
    Ok(out)
}

struct Reader<'a> {
    pairs: &'a BTreeMap<String, String>,
}

impl Reader<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.pairs.get(key).map(String::as_str)
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(s) => {
                let v: f64 = s.parse().map_err(|_| invalid(key, format!("not a number: {s}")))?;
                if !v.is_finite() {
                    return Err(invalid(key, "must be finite"));
                }
                Ok(v)
            }
        }
    }

    fn opt_f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.raw(key).map(|_| self.f64_or(key, 0.0)).transpose()
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(s) => s.parse().map_err(|_| invalid(key, format!("not a non-negative integer: {s}"))),
        }
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(s) => parse_seed(s).ok_or_else(|| invalid(key, format!("not an unsigned integer: {s}"))),
        }
    }
}

/// Decimal or 0x-prefixed hexadecimal.
pub fn parse_seed(s: &str) -> Option<u64> {
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

pub const DEFAULT_SEED: u64 = 0x5EED;

impl ExperimentConfig {
    pub fn from_pairs(pairs: &BTreeMap<String, String>, ov: &Overrides) -> Result<Self, ConfigError> {
        let r = Reader { pairs };
        let scenario_name = r.raw("scenario").ok_or_else(|| invalid("scenario", "missing"))?;
        let scenario = Scenario::parse(scenario_name)
            .ok_or_else(|| invalid("scenario", format!("unknown scenario {scenario_name}")))?;

        let q = r.f64_or("space.q", 2.0)?;
        if !(q >= 1.0) {
            return Err(invalid("space.q", format!("need q >= 1, got {q}")));
        }
        let weight_name = r.raw("space.weight").unwrap_or(if scenario == Scenario::LorentzKaramataCase {
            "lorentz_karamata"
        } else {
            "uniform"
        });
        let weight = match weight_name {
            "uniform" => WeightKind::Uniform,
            "power" => WeightKind::Power {
                a: r.f64_or("space.a", 0.0)?,
            },
            "lorentz_karamata" => {
                let p = r.f64_or("space.p", 2.0)?;
                if !(p > 0.0) {
                    return Err(invalid("space.p", format!("need p > 0, got {p}")));
                }
                WeightKind::LorentzKaramata {
                    p,
                    beta: r.f64_or("space.b", 0.0)?,
                }
            }
            other => return Err(invalid("space.weight", format!("unknown weight {other}"))),
        };
        if scenario == Scenario::LorentzKaramataCase && !matches!(weight, WeightKind::LorentzKaramata { .. }) {
            return Err(invalid("space.weight", "lorentz_karamata_case needs the lorentz_karamata weight"));
        }

        let n = r.usize_or("n", 1)?;
        if !(1..=3).contains(&n) {
            return Err(invalid("n", format!("need 1 <= n <= 3, got {n}")));
        }
        let k = r.usize_or("k", 1)?;
        if k < 1 || k > 16 {
            return Err(invalid("k", format!("need 1 <= k <= 16, got {k}")));
        }
        let default_variant = if scenario.uses_fields() { "bessel" } else { "power" };
        let variant = r.raw("kernel.variant").unwrap_or(default_variant);
        let kernel = match variant {
            "power" => KernelKind::Power,
            "bessel" => KernelKind::Bessel,
            "power_sv" => KernelKind::PowerSv {
                lambda: r.f64_or("kernel.lambda", 0.0)?,
                z1: r.f64_or("kernel.z1", 1.0)?,
                tail_rate: r.f64_or("kernel.tail_rate", 1.0)?,
            },
            other => return Err(invalid("kernel.variant", format!("unknown variant {other}"))),
        };
        if scenario.uses_fields() && kernel == KernelKind::Power {
            return Err(invalid("kernel.variant", "field scenarios need bessel or power_sv"));
        }
        if scenario.uses_fields() && n != 1 {
            return Err(invalid("n", "the reference field family is one-dimensional"));
        }
        let alpha = match (r.opt_f64("kernel.alpha")?, r.opt_f64("kernel.nu")?) {
            (Some(_), Some(_)) => return Err(invalid("kernel.nu", "give either kernel.alpha or kernel.nu")),
            (Some(a), None) => a,
            (None, Some(nu)) => {
                if kernel != KernelKind::Bessel {
                    return Err(invalid("kernel.nu", "only the bessel variant takes nu"));
                }
                n as f64 - 2.0 * nu
            }
            (None, None) => return Err(invalid("kernel.alpha", "missing")),
        };
        if !(alpha > 0.0) {
            return Err(invalid("kernel.alpha", format!("need alpha > 0, got {alpha}")));
        }
        // the bare power profile is admitted past n for condition sweeps
        if kernel != KernelKind::Power && !(alpha < n as f64) {
            return Err(invalid("kernel.alpha", format!("need alpha < n = {n}, got {alpha}")));
        }

        let t_max = r.f64_or("T", 1.0)?;
        if !(t_max > 0.0) {
            return Err(invalid("T", format!("need T > 0, got {t_max}")));
        }
        let grid_points = match ov.grid_points {
            Some(g) => g,
            None => r.usize_or("grid.points", 512)?,
        };
        if grid_points < 16 {
            return Err(invalid("grid.points", format!("need at least 16, got {grid_points}")));
        }
        let t_min = match ov.t_min {
            Some(t) => t,
            None => r.f64_or("grid.tmin", 1e-8 * t_max)?,
        };
        if !(t_min > 0.0 && t_min < t_max) {
            return Err(invalid("grid.tmin", format!("need 0 < tmin < T, got {t_min}")));
        }
        let seed = match ov.seed {
            Some(s) => s,
            None => r.u64_or("seed", DEFAULT_SEED)?,
        };
        let out_dir = match &ov.out_dir {
            Some(p) => p.clone(),
            None => PathBuf::from(r.raw("output.dir").unwrap_or("out")),
        };

        let resolution = r.usize_or("field.resolution", 256)?;
        if !(16..=8192).contains(&resolution) {
            return Err(invalid(
                "field.resolution",
                format!("need 16 <= resolution <= 8192, got {resolution}"),
            ));
        }
        let halfwidth = r.f64_or("field.halfwidth", 2.0)?;
        if !(halfwidth > 0.0) {
            return Err(invalid("field.halfwidth", "must be positive"));
        }
        let field_count = r.usize_or("field.count", 10)?;
        if !(1..=10).contains(&field_count) {
            return Err(invalid("field.count", format!("need 1..=10, got {field_count}")));
        }
        let directions = r.usize_or("field.directions", 32)?;
        if directions == 0 {
            return Err(invalid("field.directions", "must be positive"));
        }
        let (pts_default, floor_default) = if scenario == Scenario::Envelope {
            (64, 1e-6)
        } else {
            (24, 0.04)
        };
        let tgrid_points = r.usize_or("tgrid.points", pts_default)?;
        if tgrid_points < 2 {
            return Err(invalid("tgrid.points", "need at least 2"));
        }
        let tgrid_floor = r.f64_or("tgrid.floor", floor_default)?;
        if !(tgrid_floor > 0.0 && tgrid_floor < 1.0) {
            return Err(invalid("tgrid.floor", format!("need 0 < floor < 1, got {tgrid_floor}")));
        }
        let expect_embeds = match r.raw("expect.embeds") {
            None => None,
            Some("true") => Some(true),
            Some("false") => Some(false),
            Some(s) => return Err(invalid("expect.embeds", format!("expected true or false, got {s}"))),
        };
        let expect_condition = match r.raw("expect.condition") {
            None => None,
            Some(s @ ("A" | "B" | "neither")) => Some(s.to_string()),
            Some(s) => return Err(invalid("expect.condition", format!("expected A, B or neither, got {s}"))),
        };
        let factor_limit = r.f64_or("expect.factor", 8.0)?;
        if !(factor_limit >= 1.0) {
            return Err(invalid("expect.factor", "must be at least 1"));
        }

        Ok(ExperimentConfig {
            scenario,
            q,
            weight,
            kernel,
            alpha,
            k: k as u32,
            n,
            t_max,
            grid_points,
            t_min,
            seed,
            out_dir,
            resolution,
            halfwidth,
            field_count,
            directions,
            tgrid_points,
            tgrid_floor,
            expect_embeds,
            expect_condition,
            factor_limit,
        })
    }

    pub fn from_text(text: &str, ov: &Overrides) -> Result<Self, ConfigError> {
        ExperimentConfig::from_pairs(&parse_pairs(text)?, ov)
    }

    pub fn load(path: &Path, ov: &Overrides) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        ExperimentConfig::from_text(&text, ov)
    }

    /// Every resolved setting, defaults included, for the report echo.
    /// The output directory is left out so reports do not depend on it.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("scenario", self.scenario.name().into());
        put("space.q", fmt(self.q));
        match &self.weight {
            WeightKind::Uniform => put("space.weight", "uniform".into()),
            WeightKind::Power { a } => {
                put("space.weight", "power".into());
                put("space.a", fmt(*a));
            }
            WeightKind::LorentzKaramata { p, beta } => {
                put("space.weight", "lorentz_karamata".into());
                put("space.p", fmt(*p));
                put("space.b", fmt(*beta));
            }
        }
        match &self.kernel {
            KernelKind::Power => put("kernel.variant", "power".into()),
            KernelKind::Bessel => put("kernel.variant", "bessel".into()),
            KernelKind::PowerSv { lambda, z1, tail_rate } => {
                put("kernel.variant", "power_sv".into());
                put("kernel.lambda", fmt(*lambda));
                put("kernel.z1", fmt(*z1));
                put("kernel.tail_rate", fmt(*tail_rate));
            }
        }
        put("kernel.alpha", fmt(self.alpha));
        put("k", self.k.to_string());
        put("n", self.n.to_string());
        put("T", fmt(self.t_max));
        put("grid.points", self.grid_points.to_string());
        put("grid.tmin", fmt(self.t_min));
        put("seed", self.seed.to_string());
        if self.scenario.uses_fields() {
            put("field.resolution", self.resolution.to_string());
            put("field.halfwidth", fmt(self.halfwidth));
            put("field.count", self.field_count.to_string());
            put("field.directions", self.directions.to_string());
        }
        if self.scenario.uses_fields() || self.scenario == Scenario::Envelope {
            put("tgrid.points", self.tgrid_points.to_string());
            put("tgrid.floor", fmt(self.tgrid_floor));
        }
        if let Some(e) = self.expect_embeds {
            put("expect.embeds", e.to_string());
        }
        if let Some(c) = &self.expect_condition {
            put("expect.condition", c.clone());
        }
        if self.scenario == Scenario::BesovCase {
            put("expect.factor", fmt(self.factor_limit));
        }
        m
    }
}

fn fmt(x: f64) -> String {
    format!("{x:?}")
}
