//! Run configuration: the model document plus `run.*` keys.

use std::path::{Path, PathBuf};

use svasym::kv::{Document, KvError};
use svasym::measures::WindowSpec;
use svasym::model::MODEL_KEYS;
use svasym::simulate::{McConfig, Scheme};
use svasym::verify::CRITERION_8_EPS;
use svasym::{ModelParams, Regime};
use thiserror::Error;

pub const RUN_KEYS: &[&str] = &[
    "run.regime",
    "run.t",
    "run.p",
    "run.p_grid",
    "run.x_grid",
    "run.logK_grid",
    "run.window.points",
    "run.window.y_lo",
    "run.window.y_hi",
    "run.mc.paths",
    "run.mc.steps_per_unit_time",
    "run.mc.seed",
    "run.mc.scheme",
    "run.eps",
    "run.eps_seq",
    "run.x",
    "run.method",
    "run.allow_extrapolation",
    "run.resolution",
    "run.out",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Kv { path: String, source: KvError },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("{path}: {source}")]
    Read { path: String, source: std::io::Error },
}

impl ConfigError {
    /// True when the document parsed but describes an inadmissible model.
    pub fn is_validation(&self) -> bool {
        matches!(self, ConfigError::Kv { source: KvError::Validation(_), .. })
    }
}

/// How the `hamiltonian`, `rate`, `price` and `smile` commands get H̄₀.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HamMethod {
    Eigen,
    MonteCarlo,
    ClosedForm,
}

impl HamMethod {
    pub fn name(self) -> &'static str {
        match self {
            HamMethod::Eigen => "eigen",
            HamMethod::MonteCarlo => "mc",
            HamMethod::ClosedForm => "closed_form",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "eigen" => Some(HamMethod::Eigen),
            "mc" => Some(HamMethod::MonteCarlo),
            "closed_form" => Some(HamMethod::ClosedForm),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelParams,
    pub regime: Regime,
    pub t: f64,
    /// Tilt for `invariant` and `poisson`; those commands default to 0 and 1.
    pub p: Option<f64>,
    pub p_grid: Vec<f64>,
    pub x_grid: Vec<f64>,
    pub logk_grid: Vec<f64>,
    pub window: WindowSpec,
    pub mc: McConfig,
    /// ε for `simulate`.
    pub eps: f64,
    /// Decreasing ε sequence for `verify-ldp`.
    pub eps_seq: Vec<f64>,
    /// Tail threshold for `verify-ldp`.
    pub x: f64,
    pub method: HamMethod,
    pub allow_extrapolation: bool,
    /// Strikes closer than this to x0 are treated as at the money.
    pub resolution: f64,
    pub out: PathBuf,
}

fn symmetric(max: f64, step: f64) -> Vec<f64> {
    let k = (max / step).round() as i64;
    (-k..=k).map(|i| i as f64 * step).collect()
}

fn around(x0: f64, half: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| x0 - half + 2.0 * half * i as f64 / (n - 1) as f64)
        .collect()
}

impl RunConfig {
    /// Defaults for everything but the model.
    pub fn new(model: ModelParams) -> Self {
        let x0 = model.x0;
        Self {
            regime: Regime::Fast,
            t: 1.0,
            p: None,
            p_grid: symmetric(4.0, 0.25),
            x_grid: around(x0, 0.3, 61),
            logk_grid: around(x0, 0.3, 61),
            window: WindowSpec::default(),
            mc: McConfig::default(),
            eps: 0.1,
            eps_seq: CRITERION_8_EPS.to_vec(),
            x: x0 + 0.15,
            method: HamMethod::Eigen,
            allow_extrapolation: false,
            resolution: 1e-6,
            out: PathBuf::from("."),
            model,
        }
    }

    pub fn from_document(doc: &Document) -> Result<Self, KvError> {
        doc.check_keys(|k| MODEL_KEYS.contains(&k) || RUN_KEYS.contains(&k))?;
        let model = ModelParams::from_document(doc)?;
        let mut c = RunConfig::new(model);
        if let Some(r) = doc.parsed::<u32>("run.regime")? {
            c.regime = Regime::from_exponent(r).map_err(|e| invalid(doc, "run.regime", e))?;
        }
        set(&mut c.t, doc.parsed("run.t")?);
        c.p = doc.parsed("run.p")?;
        set(&mut c.p_grid, doc.list("run.p_grid")?);
        set(&mut c.x_grid, doc.list("run.x_grid")?);
        set(&mut c.logk_grid, doc.list("run.logK_grid")?);
        set(&mut c.window.points, doc.parsed("run.window.points")?);
        c.window.y_lo = doc.parsed("run.window.y_lo")?;
        c.window.y_hi = doc.parsed("run.window.y_hi")?;
        set(&mut c.mc.paths, doc.parsed("run.mc.paths")?);
        set(&mut c.mc.steps_per_unit_time, doc.parsed("run.mc.steps_per_unit_time")?);
        set(&mut c.mc.seed, doc.parsed("run.mc.seed")?);
        if let Some(s) = doc.parsed::<String>("run.mc.scheme")? {
            c.mc.scheme = Scheme::parse(&s).ok_or_else(|| {
                invalid(doc, "run.mc.scheme", "expected full_truncation or reflect")
            })?;
        }
        set(&mut c.eps, doc.parsed("run.eps")?);
        set(&mut c.eps_seq, doc.list("run.eps_seq")?);
        set(&mut c.x, doc.parsed("run.x")?);
        if let Some(s) = doc.parsed::<String>("run.method")? {
            c.method = HamMethod::parse(&s)
                .ok_or_else(|| invalid(doc, "run.method", "expected eigen, mc or closed_form"))?;
        }
        set(&mut c.allow_extrapolation, doc.parsed("run.allow_extrapolation")?);
        set(&mut c.resolution, doc.parsed("run.resolution")?);
        if let Some(s) = doc.parsed::<String>("run.out")? {
            c.out = PathBuf::from(s);
        }
        c.check().map_err(KvError::Validation)?;
        Ok(c)
    }

    /// Grid and budget sanity; the model itself is checked by `validate`.
    pub fn check(&self) -> Result<(), String> {
        for (key, g) in [
            ("run.p_grid", &self.p_grid),
            ("run.x_grid", &self.x_grid),
            ("run.logK_grid", &self.logk_grid),
        ] {
            if g.is_empty() {
                return Err(format!("{key} is empty"));
            }
            if g.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(format!("{key} must be strictly increasing"));
            }
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(format!("run.t must be positive, got {}", self.t));
        }
        if self.eps_seq.is_empty() || self.eps_seq.windows(2).any(|w| !(w[1] < w[0])) {
            return Err("run.eps_seq must be nonempty and strictly decreasing".into());
        }
        if self.window.points < 16 {
            return Err(format!("run.window.points must be at least 16, got {}", self.window.points));
        }
        Ok(())
    }

    pub fn to_document(&self) -> Document {
        let mut doc = Document::new();
        self.model.write_document(&mut doc);
        doc.set("run.regime", self.regime.exponent());
        doc.set("run.t", self.t);
        if let Some(p) = self.p {
            doc.set("run.p", p);
        }
        doc.set_list("run.p_grid", &self.p_grid);
        doc.set_list("run.x_grid", &self.x_grid);
        doc.set_list("run.logK_grid", &self.logk_grid);
        doc.set("run.window.points", self.window.points);
        if let Some(y) = self.window.y_lo {
            doc.set("run.window.y_lo", y);
        }
        if let Some(y) = self.window.y_hi {
            doc.set("run.window.y_hi", y);
        }
        doc.set("run.mc.paths", self.mc.paths);
        doc.set("run.mc.steps_per_unit_time", self.mc.steps_per_unit_time);
        doc.set("run.mc.seed", self.mc.seed);
        doc.set("run.mc.scheme", self.mc.scheme.name());
        doc.set("run.eps", self.eps);
        doc.set_list("run.eps_seq", &self.eps_seq);
        doc.set("run.x", self.x);
        doc.set("run.method", self.method.name());
        doc.set("run.allow_extrapolation", self.allow_extrapolation);
        doc.set("run.resolution", self.resolution);
        doc.set("run.out", self.out.display());
        doc
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn invalid(doc: &Document, key: &str, message: impl std::fmt::Display) -> KvError {
    KvError::Parse {
        line: doc.get(key).map(|e| e.line).unwrap_or(0),
        message: format!("{key}: {message}"),
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: name.clone(),
        source,
    })?;
    let doc = Document::parse(&text).map_err(|source| ConfigError::Kv {
        path: name.clone(),
        source,
    })?;
    RunConfig::from_document(&doc).map_err(|source| ConfigError::Kv { path: name, source })
}

pub fn write_config(config: &RunConfig, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, config.to_document().to_string())
}
