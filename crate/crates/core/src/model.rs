//! Model parameters, admissibility checks and boundary behaviour of the
//! volatility factor.
//!
//! The log-price and the fast factor follow
//!
//! ```text
//! dX = (r − σ²(Y)/2) dt + σ(Y) dW¹
//! dY = (1/δ)(m − Y) dt + (ν/√δ) Y^β dW²,   ⟨W¹, W²⟩ = ρ t
//! ```
//!
//! with state space `E₀ = ℝ` for `β = 0` and `E₀ = (0, ∞)` for `β ∈ [1/2, 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::{Document, KvError};
use crate::quad;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StateSpace {
    Real,
    PositiveHalfLine,
}

impl StateSpace {
    pub fn contains(self, y: f64) -> bool {
        match self {
            StateSpace::Real => y.is_finite(),
            StateSpace::PositiveHalfLine => y.is_finite() && y > 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StateSpace::Real => "ℝ",
            StateSpace::PositiveHalfLine => "(0, ∞)",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VolKind {
    Constant { s0: f64 },
    /// σ(y) = c·(a + |y|)^q
    PowerAbs { c: f64, q: f64, a: f64 },
    /// Linear interpolation inside the table, power-law extrapolation outside.
    Tabulated { grid: Vec<f64>, values: Vec<f64> },
}

/// Volatility function σ(·) together with its declared growth exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolFnSpec {
    pub kind: VolKind,
    pub growth_exponent: f64,
}

impl VolFnSpec {
    pub fn constant(s0: f64) -> Self {
        Self {
            kind: VolKind::Constant { s0 },
            growth_exponent: 0.0,
        }
    }

    pub fn power_abs(c: f64, q: f64, a: f64) -> Self {
        Self {
            kind: VolKind::PowerAbs { c, q, a },
            growth_exponent: q,
        }
    }

    pub fn tabulated(grid: Vec<f64>, values: Vec<f64>, growth_exponent: f64) -> Self {
        Self {
            kind: VolKind::Tabulated { grid, values },
            growth_exponent,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, VolKind::Constant { .. })
    }

    /// σ(y) for any finite real `y`; domain checks live in [`sigma_eval`].
    #[inline]
    pub fn eval(&self, y: f64) -> f64 {
        match &self.kind {
            VolKind::Constant { s0 } => *s0,
            VolKind::PowerAbs { c, q, a } => {
                let base = a + y.abs();
                if *q == 0.5 {
                    c * base.sqrt()
                } else if *q == 0.25 {
                    c * base.sqrt().sqrt()
                } else if *q == 0.0 {
                    *c
                } else {
                    c * base.powf(*q)
                }
            }
            VolKind::Tabulated { grid, values } => {
                tabulated_eval(grid, values, self.growth_exponent, y)
            }
        }
    }

    /// σ²(y), avoiding a square root where the kind allows it.
    #[inline]
    pub fn eval_sq(&self, y: f64) -> f64 {
        match &self.kind {
            VolKind::PowerAbs { c, q, a } if *q == 0.5 => c * c * (a + y.abs()),
            _ => {
                let s = self.eval(y);
                s * s
            }
        }
    }

    fn check_shape(&self) -> std::result::Result<(), String> {
        match &self.kind {
            VolKind::Constant { s0 } => {
                if !(*s0 > 0.0 && s0.is_finite()) {
                    return Err(format!("constant volatility must be positive, got {s0}"));
                }
            }
            VolKind::PowerAbs { c, q, a } => {
                if !(*c > 0.0 && c.is_finite()) {
                    return Err(format!("power_abs scale c must be positive, got {c}"));
                }
                if !(0.0..1.0).contains(q) {
                    return Err(format!("power_abs exponent q must lie in [0, 1), got {q}"));
                }
                if !(*a >= 0.0 && a.is_finite()) {
                    return Err(format!("power_abs offset a must be ≥ 0, got {a}"));
                }
            }
            VolKind::Tabulated { grid, values } => {
                if grid.len() < 2 || grid.len() != values.len() {
                    return Err("tabulated σ needs ≥ 2 nodes and matching values".into());
                }
                if grid.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err("tabulated σ grid must be strictly increasing".into());
                }
                if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err("tabulated σ values must be finite and ≥ 0".into());
                }
            }
        }
        Ok(())
    }
}

fn tabulated_eval(grid: &[f64], values: &[f64], growth: f64, y: f64) -> f64 {
    let n = grid.len();
    let extrapolate = |edge_y: f64, edge_v: f64| {
        if y.abs() > edge_y.abs() {
            edge_v * ((1.0 + y.abs()) / (1.0 + edge_y.abs())).powf(growth)
        } else {
            edge_v
        }
    };
    if y <= grid[0] {
        return extrapolate(grid[0], values[0]);
    }
    if y >= grid[n - 1] {
        return extrapolate(grid[n - 1], values[n - 1]);
    }
    let k = grid.partition_point(|g| *g <= y) - 1;
    let t = (y - grid[k]) / (grid[k + 1] - grid[k]);
    values[k] * (1.0 - t) + values[k + 1] * t
}

/// σ(y) with a state-space check.
pub fn sigma_eval(spec: &VolFnSpec, space: StateSpace, y: f64) -> Result<f64> {
    if !space.contains(y) {
        return Err(Error::Domain {
            y,
            space: space.name(),
        });
    }
    Ok(spec.eval(y))
}

/// Mean-reversion exponent `r` in `δ = ε^r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// δ = ε²
    Fast,
    /// δ = ε⁴
    UltraFast,
}

impl Regime {
    pub fn from_exponent(r: u32) -> Result<Self> {
        match r {
            2 => Ok(Regime::Fast),
            4 => Ok(Regime::UltraFast),
            _ => Err(Error::InvalidInput(format!(
                "regime exponent must be 2 or 4, got {r}"
            ))),
        }
    }

    pub fn exponent(self) -> u32 {
        match self {
            Regime::Fast => 2,
            Regime::UltraFast => 4,
        }
    }

    pub fn delta(self, eps: f64) -> f64 {
        eps.powi(self.exponent() as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub m: f64,
    pub nu: f64,
    pub beta: f64,
    pub rho: f64,
    pub rate: f64,
    pub sigma: VolFnSpec,
    pub y0: f64,
    pub x0: f64,
}

impl ModelParams {
    pub fn state_space(&self) -> StateSpace {
        if self.beta == 0.0 {
            StateSpace::Real
        } else {
            StateSpace::PositiveHalfLine
        }
    }

    /// `y^β` on the state space; the positive part is used for `β > 0`.
    #[inline]
    pub fn pow_beta(&self, y: f64) -> f64 {
        if self.beta == 0.0 {
            1.0
        } else if self.beta == 0.5 {
            y.max(0.0).sqrt()
        } else {
            y.max(0.0).powf(self.beta)
        }
    }

    /// Drift of the tilted factor: `(m − y) + ρ p σ(y) ν y^β`.
    #[inline]
    pub fn tilted_drift(&self, y: f64, p: f64) -> f64 {
        let base = self.m - y;
        if p == 0.0 || self.rho == 0.0 {
            base
        } else {
            base + self.rho * p * self.sigma.eval(y) * self.nu * self.pow_beta(y)
        }
    }

    /// Half the squared diffusion coefficient, `ν² y^{2β} / 2`.
    #[inline]
    pub fn half_diffusion_sq(&self, y: f64) -> f64 {
        let yb = self.pow_beta(y);
        0.5 * self.nu * self.nu * yb * yb
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClauseId {
    /// Finite parameters, ν > 0, |ρ| < 1, r ≥ 0, y0 ∈ E₀.
    Structure,
    /// β ∈ {0} ∪ [1/2, 1).
    ExponentRange,
    /// m > ν²/2 for β = 1/2, m > 0 for β ∈ (1/2, 1), and y0 > 0.
    Positivity,
    /// 0 ≤ growth < 1 − β, with σ bounded by C(1 + |y|^growth) on samples.
    VolGrowth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub id: ClauseId,
    pub label: String,
    pub pass: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub clauses: Vec<Clause>,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.clauses.iter().all(|c| c.pass)
    }

    pub fn clause(&self, id: ClauseId) -> &Clause {
        self.clauses
            .iter()
            .find(|c| c.id == id)
            .expect("every clause is always reported")
    }

    pub fn into_result(self) -> Result<()> {
        match self.clauses.iter().find(|c| !c.pass) {
            None => Ok(()),
            Some(c) => Err(Error::Validation(format!("{}: {}", c.label, c.message))),
        }
    }
}

fn clause(id: ClauseId, label: &'static str, failure: Option<String>) -> Clause {
    Clause {
        id,
        label: label.to_string(),
        pass: failure.is_none(),
        message: failure.unwrap_or_else(|| "ok".into()),
    }
}

/// Checks every admissibility clause; failures are reported, never thrown.
pub fn validate(params: &ModelParams) -> ValidationReport {
    let ModelParams {
        m,
        nu,
        beta,
        rho,
        rate,
        y0,
        x0,
        ..
    } = *params;

    let structure = if ![m, nu, beta, rho, rate, y0, x0].iter().all(|v| v.is_finite()) {
        Some("all parameters must be finite".to_string())
    } else if !(nu > 0.0) {
        Some(format!("ν must be positive, got {nu}"))
    } else if !(rho.abs() < 1.0) {
        Some(format!("|ρ| must be < 1, got {rho}"))
    } else if !(rate >= 0.0) {
        Some(format!("r must be ≥ 0, got {rate}"))
    } else {
        params.sigma.check_shape().err()
    };

    let exponent_ok = beta == 0.0 || (0.5..1.0).contains(&beta);
    let exponent = (!exponent_ok).then(|| format!("β must lie in {{0}} ∪ [1/2, 1), got {beta}"));

    let positivity = if !exponent_ok || beta == 0.0 {
        None
    } else if beta == 0.5 && !(m > 0.5 * nu * nu) {
        Some(format!(
            "β = 1/2 requires m > ν²/2 = {}, got m = {m}",
            0.5 * nu * nu
        ))
    } else if beta > 0.5 && !(m > 0.0) {
        Some(format!("β ∈ (1/2, 1) requires m > 0, got m = {m}"))
    } else if !(y0 > 0.0) {
        Some(format!("β > 0 requires y0 > 0, got y0 = {y0}"))
    } else {
        None
    };

    let g = params.sigma.growth_exponent;
    let growth = if !(g >= 0.0 && g < 1.0 - beta) {
        Some(format!(
            "σ growth exponent must satisfy 0 ≤ {g} < 1 − β = {}",
            1.0 - beta
        ))
    } else {
        sampled_growth_violation(params)
    };

    ValidationReport {
        clauses: vec![
            clause(ClauseId::Structure, "clause (0) structure", structure),
            clause(ClauseId::ExponentRange, "clause (1) exponent range", exponent),
            clause(ClauseId::Positivity, "clause (2) positivity", positivity),
            clause(ClauseId::VolGrowth, "clause (3) volatility growth", growth),
        ],
    }
}

/// Samples σ over a wide geometric grid and checks that σ/(1 + |y|)^g stays
/// bounded, nonnegative and finite.
fn sampled_growth_violation(params: &ModelParams) -> Option<String> {
    let spec = &params.sigma;
    if let VolKind::PowerAbs { q, .. } = spec.kind {
        if spec.growth_exponent < q {
            return Some(format!(
                "declared growth {} is below the power-law exponent {q}",
                spec.growth_exponent
            ));
        }
    }
    if let Err(msg) = spec.check_shape() {
        return Some(msg);
    }
    let g = spec.growth_exponent;
    let signs: &[f64] = if params.beta == 0.0 {
        &[1.0, -1.0]
    } else {
        &[1.0]
    };
    for &sign in signs {
        let ratio = |y: f64| spec.eval(sign * y) / (1.0 + y).powf(g);
        let mut head_max = 0.0f64;
        for k in -60..=80 {
            let y = 10f64.powf(k as f64 / 10.0);
            let s = spec.eval(sign * y);
            if !(s >= 0.0 && s.is_finite()) {
                return Some(format!("σ({}) = {s} is negative or non-finite", sign * y));
            }
            head_max = head_max.max(ratio(y));
        }
        let far = ratio(1e8);
        let mid = ratio(1e6);
        if far > 1.01 * mid.max(1e-300) && far > 1e-12 * head_max {
            return Some(format!(
                "σ(y)/(1+|y|)^{g} keeps growing over y ∈ [1e6, 1e8] ({mid:e} → {far:e})"
            ));
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    Inaccessible,
    Accessible,
}

/// Log of the scale density of the untilted factor, anchored at 1.
fn log_scale_untilted(params: &ModelParams, y: f64) -> Result<f64> {
    let ModelParams { m, nu, beta, .. } = *params;
    // In v = ln z: 2(m − z)/(ν² z^{2β}) dz = 2(m − e^v) e^{v(1−2β)}/ν² dv
    let integrand = |v: f64| 2.0 * (m - v.exp()) * (v * (1.0 - 2.0 * beta)).exp() / (nu * nu);
    Ok(-quad::integrate(integrand, 0.0, y.ln(), 1e-13)?)
}

/// Classifies the left boundary `0` of the half-line state space by evaluating
/// `S(ε) = −∫_ε¹ s(y) dy` along `ε = 2^{-k}`, `k = 1..=40`.
///
/// Divergence is declared when `S` drops below `−10⁶`, or when the per-octave
/// increments stop shrinking over the last five octaves (a non-summable tail).
pub fn boundary_classification(params: &ModelParams) -> Result<Boundary> {
    if params.beta == 0.0 {
        return Err(Error::NotApplicable(
            "β = 0: the state space is ℝ and has no boundary".into(),
        ));
    }
    if !(params.beta >= 0.5 && params.beta < 1.0) {
        return Err(Error::InvalidInput(format!(
            "β must lie in [1/2, 1), got {}",
            params.beta
        )));
    }
    let mut s_total = 0.0;
    let mut increments = Vec::with_capacity(40);
    for k in 1..=40 {
        // ∫ s(y) dy over [2^{-k}, 2^{1-k}], in v = ln y
        let v_hi = -((k - 1) as f64) * std::f64::consts::LN_2;
        let v_lo = -(k as f64) * std::f64::consts::LN_2;
        let panels = 8;
        let width = (v_hi - v_lo) / panels as f64;
        let mut inc = 0.0;
        for j in 0..panels {
            let a = v_lo + j as f64 * width;
            let b = a + width;
            inc += quad::gauss_legendre5(
                |v| {
                    let ls = log_scale_untilted(params, v.exp()).unwrap_or(f64::INFINITY);
                    (ls + v).exp()
                },
                a,
                b,
            );
        }
        s_total -= inc;
        increments.push(inc);
        if !(s_total > -1e6) {
            return Ok(Boundary::Inaccessible);
        }
    }
    let tail = &increments[increments.len() - 5..];
    let non_shrinking = tail.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9));
    Ok(if non_shrinking {
        Boundary::Inaccessible
    } else {
        Boundary::Accessible
    })
}

/// Canonical document keys for a model.
pub const MODEL_KEYS: &[&str] = &[
    "m",
    "nu",
    "beta",
    "rho",
    "rate",
    "sigma.kind",
    "sigma.s0",
    "sigma.c",
    "sigma.q",
    "sigma.a",
    "sigma.growth",
    "sigma.grid",
    "sigma.values",
    "y0",
    "x0",
];

impl ModelParams {
    pub fn from_document(doc: &Document) -> std::result::Result<Self, KvError> {
        let m: f64 = doc.required("m")?;
        let nu: f64 = doc.required("nu")?;
        let beta: f64 = doc.required("beta")?;
        let rho: f64 = doc.parsed("rho")?.unwrap_or(0.0);
        let rate: f64 = doc.parsed("rate")?.unwrap_or(0.0);
        let x0: f64 = doc.parsed("x0")?.unwrap_or(0.0);
        let kind: String = doc.required("sigma.kind")?;
        let growth: Option<f64> = doc.parsed("sigma.growth")?;
        let sigma = match kind.as_str() {
            "constant" => {
                let mut s = VolFnSpec::constant(doc.required("sigma.s0")?);
                if let Some(g) = growth {
                    s.growth_exponent = g;
                }
                s
            }
            "power_abs" => {
                let mut s = VolFnSpec::power_abs(
                    doc.required("sigma.c")?,
                    doc.required("sigma.q")?,
                    doc.parsed("sigma.a")?.unwrap_or(0.0),
                );
                if let Some(g) = growth {
                    s.growth_exponent = g;
                }
                s
            }
            "tabulated" => VolFnSpec::tabulated(
                doc.list("sigma.grid")?
                    .ok_or_else(|| KvError::Missing("sigma.grid".into()))?,
                doc.list("sigma.values")?
                    .ok_or_else(|| KvError::Missing("sigma.values".into()))?,
                growth.ok_or_else(|| KvError::Missing("sigma.growth".into()))?,
            ),
            other => {
                let line = doc.get("sigma.kind").map(|e| e.line).unwrap_or(0);
                return Err(KvError::Parse {
                    line,
                    message: format!(
                        "unknown sigma.kind `{other}` (expected constant, power_abs or tabulated)"
                    ),
                });
            }
        };
        let y0 = match doc.parsed::<f64>("y0")? {
            Some(y0) => y0,
            None if beta == 0.0 => m,
            None => {
                return Err(KvError::Validation(
                    "clause (2) positivity: y0 is required and must be > 0 when beta > 0".into(),
                ))
            }
        };
        Ok(ModelParams {
            m,
            nu,
            beta,
            rho,
            rate,
            sigma,
            y0,
            x0,
        })
    }

    pub fn write_document(&self, doc: &mut Document) {
        doc.set("m", self.m);
        doc.set("nu", self.nu);
        doc.set("beta", self.beta);
        doc.set("rho", self.rho);
        doc.set("rate", self.rate);
        match &self.sigma.kind {
            VolKind::Constant { s0 } => {
                doc.set("sigma.kind", "constant");
                doc.set("sigma.s0", s0);
            }
            VolKind::PowerAbs { c, q, a } => {
                doc.set("sigma.kind", "power_abs");
                doc.set("sigma.c", c);
                doc.set("sigma.q", q);
                doc.set("sigma.a", a);
            }
            VolKind::Tabulated { grid, values } => {
                doc.set("sigma.kind", "tabulated");
                doc.set_list("sigma.grid", grid);
                doc.set_list("sigma.values", values);
            }
        }
        doc.set("sigma.growth", self.sigma.growth_exponent);
        doc.set("y0", self.y0);
        doc.set("x0", self.x0);
    }
}
