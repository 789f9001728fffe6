//! Euler simulation of the two-scale system, the tilted factor processes and
//! the Monte Carlo estimators built on them.
//!
//! Every path (or particle slot) `i` draws from its own random stream keyed by
//! `(seed, i)`, results are collected in index order and reduced sequentially,
//! so outputs do not depend on the number of worker threads.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFn;
use crate::model::{ModelParams, Regime};
use crate::rng;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    /// Coefficients evaluated at max(Y, 0); the recorded value is max(Y, 0).
    EulerFullTruncation,
    /// Y replaced by |Y| after every step.
    EulerReflect,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::EulerFullTruncation => "full_truncation",
            Scheme::EulerReflect => "reflect",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full_truncation" => Some(Scheme::EulerFullTruncation),
            "reflect" => Some(Scheme::EulerReflect),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub paths: usize,
    /// Steps per unit of fast time (one mean-reversion time).
    pub steps_per_unit_time: usize,
    pub seed: u64,
    pub scheme: Scheme,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            paths: 10_000,
            steps_per_unit_time: 100,
            seed: 42,
            scheme: Scheme::EulerFullTruncation,
        }
    }
}

impl McConfig {
    pub fn check(&self, params: &ModelParams) -> Result<()> {
        if self.paths == 0 {
            return Err(Error::InvalidInput("at least one path is required".into()));
        }
        if params.beta > 0.0 && self.steps_per_unit_time < 100 {
            return Err(Error::InvalidInput(format!(
                "steps_per_unit_time must be ≥ 100 for β > 0, got {}",
                self.steps_per_unit_time
            )));
        }
        if self.steps_per_unit_time < 10 {
            return Err(Error::Stability(format!(
                "{} steps per mean-reversion time cannot resolve the fast factor",
                self.steps_per_unit_time
            )));
        }
        Ok(())
    }
}

/// A Monte Carlo estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub se: f64,
    pub samples: u64,
    pub seed: u64,
    /// Set when the estimator's error bar is not trustworthy (heavy tails,
    /// slow mixing).
    pub warning: Option<String>,
}

/// Tilt applied to the factor's drift.
#[derive(Debug, Clone, PartialEq)]
pub enum Tilt {
    None,
    /// Drift `(m − y) + ρ p σ(y) ν y^β`.
    P(f64),
    /// Drift of the tilted process plus `ν² y^{2β} h′(y)`.
    H { p: f64, h: GridFn },
}

impl Tilt {
    pub fn p(&self) -> f64 {
        match self {
            Tilt::None => 0.0,
            Tilt::P(p) | Tilt::H { p, .. } => *p,
        }
    }
}

/// Euler step for the factor in fast time.
#[derive(Debug, Clone)]
struct Stepper<'a> {
    params: &'a ModelParams,
    p: f64,
    h_prime: Option<GridFn>,
    half_line: bool,
    scheme: Scheme,
}

impl<'a> Stepper<'a> {
    fn new(params: &'a ModelParams, tilt: &Tilt, scheme: Scheme) -> Self {
        let h_prime = match tilt {
            Tilt::H { h, .. } => Some(GridFn {
                grid: h.grid,
                values: h.grid.derivative(&h.values),
            }),
            _ => None,
        };
        Self {
            params,
            p: tilt.p(),
            h_prime,
            half_line: params.beta > 0.0,
            scheme,
        }
    }

    /// The value used in coefficients.
    #[inline]
    fn eff(&self, y: f64) -> f64 {
        if self.half_line {
            y.max(0.0)
        } else {
            y
        }
    }

    #[inline]
    fn drift(&self, y: f64) -> f64 {
        let mut d = self.params.tilted_drift(y, self.p);
        if let Some(hp) = &self.h_prime {
            d += 2.0 * self.params.half_diffusion_sq(y) * hp.eval(y);
        }
        d
    }

    /// Advances the internal state; returns the new state and whether the raw
    /// Euler update went negative on the half-line.
    #[inline]
    fn step(&self, y: f64, ds: f64, sq_ds: f64, z: f64) -> (f64, bool) {
        let ye = self.eff(y);
        let raw = y + self.drift(ye) * ds + self.params.nu * self.params.pow_beta(ye) * sq_ds * z;
        if !self.half_line {
            return (raw, false);
        }
        let neg = raw < 0.0;
        match self.scheme {
            Scheme::EulerFullTruncation => (raw, neg),
            Scheme::EulerReflect => (raw.abs(), neg),
        }
    }
}

#[inline]
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Outcome of simulating the two-scale system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathBatch {
    pub x_terminal: Vec<f64>,
    pub y_terminal: Option<Vec<f64>>,
    /// ∫σ²(Y)dt per path.
    pub int_sigma_sq: Option<Vec<f64>>,
    /// ∫σ(Y)dW¹ per path.
    pub int_sigma_dw: Option<Vec<f64>>,
    pub steps_per_path: u64,
    pub dt: f64,
    /// Raw Euler updates of Y that went negative (truncated or reflected).
    pub negative_steps: u64,
    /// Recorded Y samples below zero (must stay 0 on the half-line).
    pub negative_samples: u64,
    /// Negative σ evaluations (must stay 0).
    pub negative_sigma: u64,
    pub min_y: f64,
    pub seed: u64,
    pub scheme: Scheme,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct XyOptions {
    pub record_y: bool,
    pub record_integrals: bool,
}

struct PathOut {
    x: f64,
    y: f64,
    int_s2: f64,
    int_sdw: f64,
    neg_steps: u64,
    neg_samples: u64,
    neg_sigma: u64,
    min_y: f64,
    finite: bool,
}

/// Simulates `(X, Y)` on `[0, t]` with `δ = ε^r`:
/// `dX = ε(r − σ²/2)dt + √ε σ dW¹`, `dY = (ε/δ)(m − Y)dt + ν√(ε/δ) Y^β dW²`.
pub fn simulate_xy(
    params: &ModelParams,
    regime: Regime,
    eps: f64,
    t: f64,
    mc: &McConfig,
    opts: XyOptions,
) -> Result<PathBatch> {
    mc.check(params)?;
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidInput(format!("ε must lie in (0, 1], got {eps}")));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidInput(format!("t must be positive, got {t}")));
    }
    let kappa = eps / regime.delta(eps);
    let (n_steps, ds) = fast_steps(kappa * t, mc.steps_per_unit_time);
    // in slow time: dt = ds/κ
    let dt = ds / kappa;
    let sq_dt = dt.sqrt();
    let sq_ds = ds.sqrt();
    let rho = params.rho;
    let rho_perp = (1.0 - rho * rho).sqrt();
    let drift_x = eps * params.rate * dt;
    let sq_eps = eps.sqrt();
    let stepper = Stepper::new(params, &Tilt::None, mc.scheme);
    let sigma = &params.sigma;
    let independent = rho == 0.0;

    let outs: Vec<PathOut> = (0..mc.paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(mc.seed, i);
            let mut x = params.x0;
            let mut y = params.y0;
            let mut out = PathOut {
                x: 0.0,
                y: 0.0,
                int_s2: 0.0,
                int_sdw: 0.0,
                neg_steps: 0,
                neg_samples: 0,
                neg_sigma: 0,
                min_y: f64::INFINITY,
                finite: true,
            };
            // with ρ = 0, X_t given the factor path is Gaussian: one draw at the end
            let mut int_s2 = 0.0;
            for _ in 0..n_steps {
                let (z1, z2) = if independent {
                    (0.0, normal(&mut rng))
                } else {
                    let z1 = normal(&mut rng);
                    (z1, rho * z1 + rho_perp * normal(&mut rng))
                };
                let ye = stepper.eff(y);
                let s = sigma.eval(ye);
                if s < 0.0 {
                    out.neg_sigma += 1;
                }
                let s2 = s * s;
                int_s2 += s2 * dt;
                if independent {
                    x += drift_x - 0.5 * eps * s2 * dt;
                } else {
                    x += drift_x - 0.5 * eps * s2 * dt + sq_eps * s * sq_dt * z1;
                    out.int_sdw += s * sq_dt * z1;
                }
                let (yn, neg) = stepper.step(y, ds, sq_ds, z2);
                y = yn;
                if neg {
                    out.neg_steps += 1;
                }
                let rec = stepper.eff(y);
                if stepper.half_line && rec < 0.0 {
                    out.neg_samples += 1;
                }
                out.min_y = out.min_y.min(rec);
            }
            if independent {
                let w = int_s2.sqrt() * normal(&mut rng);
                x += sq_eps * w;
                out.int_sdw = w;
            }
            out.int_s2 = int_s2;
            out.x = x;
            out.y = stepper.eff(y);
            out.finite = x.is_finite() && y.is_finite();
            out
        })
        .collect();

    if let Some(i) = outs.iter().position(|o| !o.finite) {
        return Err(Error::Stability(format!(
            "path {i} produced a non-finite state; increase steps_per_unit_time"
        )));
    }
    Ok(PathBatch {
        x_terminal: outs.iter().map(|o| o.x).collect(),
        y_terminal: opts.record_y.then(|| outs.iter().map(|o| o.y).collect()),
        int_sigma_sq: opts
            .record_integrals
            .then(|| outs.iter().map(|o| o.int_s2).collect()),
        int_sigma_dw: opts
            .record_integrals
            .then(|| outs.iter().map(|o| o.int_sdw).collect()),
        steps_per_path: n_steps,
        dt,
        negative_steps: outs.iter().map(|o| o.neg_steps).sum(),
        negative_samples: outs.iter().map(|o| o.neg_samples).sum(),
        negative_sigma: outs.iter().map(|o| o.neg_sigma).sum(),
        min_y: outs.iter().map(|o| o.min_y).fold(f64::INFINITY, f64::min),
        seed: mc.seed,
        scheme: mc.scheme,
    })
}

/// Number of steps and step size covering `horizon` units of fast time.
fn fast_steps(horizon: f64, spu: usize) -> (u64, f64) {
    let n = (horizon * spu as f64 - 1e-9).ceil().max(1.0) as u64;
    (n, horizon / n as f64)
}

impl PathBatch {
    pub fn paths(&self) -> usize {
        self.x_terminal.len()
    }

    pub fn truncated_fraction(&self) -> f64 {
        self.negative_steps as f64 / (self.steps_per_path as f64 * self.paths() as f64)
    }

    /// (statistic, value) rows of the summary CSV.
    pub fn summary(&self) -> Vec<(&'static str, String)> {
        let x = &self.x_terminal;
        let mean = stats::mean(x);
        let var = stats::variance(x);
        let mut rows = vec![
            ("paths", self.paths().to_string()),
            ("steps_per_path", self.steps_per_path.to_string()),
            ("dt", format!("{:e}", self.dt)),
            ("seed", self.seed.to_string()),
            ("scheme", self.scheme.name().to_string()),
            ("mean_x", format!("{mean:.17e}")),
            ("var_x", format!("{var:.17e}")),
            ("se_mean_x", format!("{:.17e}", (var / x.len() as f64).sqrt())),
        ];
        if let Some(y) = &self.y_terminal {
            rows.push(("mean_y", format!("{:.17e}", stats::mean(y))));
        }
        if let Some(s) = &self.int_sigma_sq {
            rows.push(("mean_int_sigma_sq", format!("{:.17e}", stats::mean(s))));
        }
        rows.push(("min_y", format!("{:.17e}", self.min_y)));
        rows.push(("negative_steps", self.negative_steps.to_string()));
        rows.push(("negative_samples", self.negative_samples.to_string()));
        rows.push(("truncated_fraction", format!("{:e}", self.truncated_fraction())));
        rows
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["statistic", "value"])?;
        for (k, v) in self.summary() {
            w.write_record([k, v.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Binary dump of the per-path records.
    ///
    /// Layout (all little-endian): the 8 magic bytes `SVASYMP1`, a `u64`
    /// record count, a `u64` field count `k`, then `k` field names as
    /// NUL-padded 16-byte ASCII strings, then the records as `k` consecutive
    /// `f64` values each.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let mut fields: Vec<(&str, &Vec<f64>)> = vec![("x", &self.x_terminal)];
        if let Some(y) = &self.y_terminal {
            fields.push(("y", y));
        }
        if let Some(s) = &self.int_sigma_sq {
            fields.push(("int_sigma_sq", s));
        }
        if let Some(s) = &self.int_sigma_dw {
            fields.push(("int_sigma_dw", s));
        }
        out.write_all(b"SVASYMP1")?;
        out.write_all(&(self.paths() as u64).to_le_bytes())?;
        out.write_all(&(fields.len() as u64).to_le_bytes())?;
        for (name, _) in &fields {
            let mut buf = [0u8; 16];
            buf[..name.len()].copy_from_slice(name.as_bytes());
            out.write_all(&buf)?;
        }
        for i in 0..self.paths() {
            for (_, v) in &fields {
                out.write_all(&v[i].to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Path functionals of the tilted factor on `[0, T]` in fast time.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltedBatch {
    pub y_terminal: Vec<f64>,
    /// ∫ φ(Y_s) ds over `[burn, T]`, divided by `T − burn`.
    pub time_average: Vec<f64>,
    /// Per path, the averages over 10 equal sub-windows of `[burn, T]`.
    pub batch_averages: Vec<[f64; 10]>,
    pub negative_steps: u64,
    pub steps_per_path: u64,
}

/// Simulates the factor under `tilt` from `y_start` for `horizon` units of
/// fast time, accumulating time averages of `phi` after `burn`.
pub fn simulate_tilted<F: Fn(f64) -> f64 + Sync>(
    params: &ModelParams,
    tilt: &Tilt,
    y_start: f64,
    horizon: f64,
    burn: f64,
    phi: F,
    mc: &McConfig,
) -> Result<TiltedBatch> {
    mc.check(params)?;
    if !(horizon > burn && burn >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "need 0 ≤ burn < horizon, got burn = {burn}, horizon = {horizon}"
        )));
    }
    let spu = mc.steps_per_unit_time;
    let (n_burn, _) = fast_steps(burn, spu);
    let n_burn = if burn == 0.0 { 0 } else { n_burn };
    let ds = 1.0 / spu as f64;
    let n_main = ((horizon - burn) * spu as f64).round().max(10.0) as u64;
    let n_main = n_main.div_ceil(10) * 10;
    let per_batch = n_main / 10;
    let sq_ds = ds.sqrt();
    let stepper = Stepper::new(params, tilt, mc.scheme);
    let outs: Vec<(f64, f64, [f64; 10], u64, bool)> = (0..mc.paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(mc.seed, i);
            let mut y = y_start;
            let mut neg = 0;
            for _ in 0..n_burn {
                let (yn, n) = stepper.step(y, ds, sq_ds, normal(&mut rng));
                y = yn;
                neg += n as u64;
            }
            let mut batches = [0.0; 10];
            for b in batches.iter_mut() {
                let mut acc = 0.0;
                for _ in 0..per_batch {
                    acc += phi(stepper.eff(y));
                    let (yn, n) = stepper.step(y, ds, sq_ds, normal(&mut rng));
                    y = yn;
                    neg += n as u64;
                }
                *b = acc / per_batch as f64;
            }
            let avg = batches.iter().sum::<f64>() / 10.0;
            (stepper.eff(y), avg, batches, neg, y.is_finite())
        })
        .collect();
    if let Some(i) = outs.iter().position(|o| !o.4) {
        return Err(Error::Stability(format!(
            "path {i} produced a non-finite state; increase steps_per_unit_time"
        )));
    }
    Ok(TiltedBatch {
        y_terminal: outs.iter().map(|o| o.0).collect(),
        time_average: outs.iter().map(|o| o.1).collect(),
        batch_averages: outs.iter().map(|o| o.2).collect(),
        negative_steps: outs.iter().map(|o| o.3).sum(),
        steps_per_path: n_burn + n_main,
    })
}

/// `(1/T)∫φ(Y_s)ds` after a burn-in of `T/10`, averaged over paths.
///
/// The standard error treats paths as independent batches. A warning is set
/// when consecutive sub-window averages within paths are strongly correlated.
pub fn ergodic_average<F: Fn(f64) -> f64 + Sync>(
    params: &ModelParams,
    tilt: &Tilt,
    phi: F,
    horizon: f64,
    mc: &McConfig,
) -> Result<McEstimate> {
    let b = simulate_tilted(params, tilt, params.y0, horizon, horizon / 10.0, phi, mc)?;
    let (value, se) = if b.time_average.len() > 1 {
        stats::batch_mean_se(&b.time_average)
    } else {
        (b.time_average[0], 0.0)
    };
    let rho1 = stats::mean(
        &b.batch_averages
            .iter()
            .map(|a| stats::lag1_autocorrelation(a))
            .filter(|r| r.is_finite())
            .collect::<Vec<_>>(),
    );
    let warning = (rho1 > 0.5).then(|| {
        format!("slow mixing: sub-window averages have lag-1 autocorrelation {rho1:.2}")
    });
    Ok(McEstimate {
        value,
        se,
        samples: mc.paths as u64,
        seed: mc.seed,
        warning,
    })
}

/// One row of [`moment_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub eps: f64,
    /// ε log E[S_t^p].
    pub estimate: McEstimate,
    /// Lognormal value, for constant σ.
    pub closed_form: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub p: f64,
    pub rows: Vec<MomentRow>,
    /// |ε log E[S^p]| decreases along the ε sequence.
    pub decreasing: bool,
}

/// `ε log E[S_t^p]` along a decreasing ε sequence, with `S = e^X`.
pub fn moment_check(
    params: &ModelParams,
    regime: Regime,
    eps_seq: &[f64],
    p: f64,
    t: f64,
    mc: &McConfig,
) -> Result<MomentReport> {
    if !(p > 1.0) {
        return Err(Error::InvalidInput(format!("moment order must exceed 1, got {p}")));
    }
    let mut rows = Vec::with_capacity(eps_seq.len());
    for &eps in eps_seq {
        let b = simulate_xy(params, regime, eps, t, mc, XyOptions::default())?;
        let logs: Vec<f64> = b.x_terminal.iter().map(|x| p * x).collect();
        let (lme, rel_se) = log_mean_exp(&logs);
        let warning = (rel_se > 0.25).then(|| {
            format!("heavy tail: relative standard error of E[S^p] is {rel_se:.2}")
        });
        let closed_form = match params.sigma.kind {
            crate::model::VolKind::Constant { s0 } => Some(
                eps * p * params.x0
                    + eps * eps * t * (p * params.rate + 0.5 * s0 * s0 * p * (p - 1.0)),
            ),
            _ => None,
        };
        rows.push(MomentRow {
            eps,
            estimate: McEstimate {
                value: eps * lme,
                se: eps * rel_se,
                samples: mc.paths as u64,
                seed: mc.seed,
                warning,
            },
            closed_form,
        });
    }
    let decreasing = rows
        .windows(2)
        .all(|w| w[1].estimate.value.abs() < w[0].estimate.value.abs());
    Ok(MomentReport {
        p,
        rows,
        decreasing,
    })
}

/// `log mean exp(a_i)` and the relative standard error of `mean exp(a_i)`.
pub fn log_mean_exp(a: &[f64]) -> (f64, f64) {
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = a.iter().map(|v| (v - max).exp()).collect();
    let m = stats::mean(&w);
    let se = (stats::variance(&w) / w.len() as f64).sqrt();
    (max + m.ln(), se / m)
}

/// Estimator used for the Feynman–Kac growth rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FkEstimator {
    /// Average of the exponential functional over independent paths.
    Plain,
    /// Interacting particles with systematic resampling.
    Particle,
}

/// Which exponential functional to average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FkForm {
    /// Tilted factor, weight `(p²/2)σ²(Y)ds`.
    Tilted,
    /// Base factor, weight `ρpσ(Y)dW² + ((1−ρ²)/2)p²σ²(Y)ds`.
    Girsanov,
}

/// `T⁻¹ log E[exp(∫ weight)]` over `[T/10, T]`, started from `y_start`.
pub fn feynman_kac(
    params: &ModelParams,
    p: f64,
    horizon: f64,
    y_start: f64,
    form: FkForm,
    estimator: FkEstimator,
    mc: &McConfig,
) -> Result<McEstimate> {
    mc.check(params)?;
    if p == 0.0 {
        return Ok(McEstimate {
            value: 0.0,
            se: 0.0,
            samples: mc.paths as u64,
            seed: mc.seed,
            warning: None,
        });
    }
    let tilt = match form {
        FkForm::Tilted => Tilt::P(p),
        FkForm::Girsanov => Tilt::None,
    };
    let stepper = Stepper::new(params, &tilt, mc.scheme);
    let ds = 1.0 / mc.steps_per_unit_time as f64;
    let sq_ds = ds.sqrt();
    let n_burn = (0.1 * horizon * mc.steps_per_unit_time as f64).round() as u64;
    let n_main = ((0.9 * horizon * mc.steps_per_unit_time as f64).round() as u64).div_ceil(10) * 10;
    let span = n_main as f64 * ds;
    let half_p2 = 0.5 * p * p;
    let rho = params.rho;
    let weight = move |y: f64, z: f64| -> f64 {
        let s2 = params.sigma.eval_sq(y);
        match form {
            FkForm::Tilted => half_p2 * s2 * ds,
            FkForm::Girsanov => {
                let s = params.sigma.eval(y);
                rho * p * s * sq_ds * z + (1.0 - rho * rho) * half_p2 * s2 * ds
            }
        }
    };
    match estimator {
        FkEstimator::Plain => {
            let logs: Vec<f64> = (0..mc.paths as u64)
                .into_par_iter()
                .map(|i| {
                    let mut rng = rng::stream(mc.seed, i);
                    let mut y = y_start;
                    for _ in 0..n_burn {
                        y = stepper.step(y, ds, sq_ds, normal(&mut rng)).0;
                    }
                    let mut a = 0.0;
                    for _ in 0..n_main {
                        let z = normal(&mut rng);
                        a += weight(stepper.eff(y), z);
                        y = stepper.step(y, ds, sq_ds, z).0;
                    }
                    a
                })
                .collect();
            if logs.iter().any(|v| !v.is_finite()) {
                return Err(Error::Stability("non-finite exponential functional".into()));
            }
            let (lme, rel_se) = log_mean_exp(&logs);
            let warning = (rel_se > 0.25).then(|| {
                format!("heavy tail: relative standard error of the exponential mean is {rel_se:.2}")
            });
            Ok(McEstimate {
                value: lme / span,
                se: rel_se / span,
                samples: mc.paths as u64,
                seed: mc.seed,
                warning,
            })
        }
        FkEstimator::Particle => {
            particle_estimate(&stepper, y_start, n_burn, n_main, ds, sq_ds, &weight, mc)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn particle_estimate<W: Fn(f64, f64) -> f64 + Sync>(
    stepper: &Stepper<'_>,
    y_start: f64,
    n_burn: u64,
    n_main: u64,
    ds: f64,
    sq_ds: f64,
    weight: &W,
    mc: &McConfig,
) -> Result<McEstimate> {
    let n = mc.paths;
    let mut rngs: Vec<ChaCha8Rng> = (0..n as u64).map(|i| rng::stream(mc.seed, i)).collect();
    let mut ys = vec![y_start; n];
    let mut logw = vec![0.0f64; n];
    let mut scratch = vec![0.0f64; n];
    let mut resampler = rng::stream(mc.seed, rng::AUX_STREAM_BASE);
    let per_batch = n_main / 10;
    let mut batch_sums = [0.0f64; 10];
    // log Σ_j exp(logw_j), tracked across steps
    let mut log_total = (n as f64).ln();

    for step in 0..n_burn + n_main {
        ys.par_iter_mut()
            .zip(logw.par_iter_mut())
            .zip(rngs.par_iter_mut())
            .for_each(|((y, lw), rng)| {
                let z = normal(rng);
                *lw += weight(stepper.eff(*y), z);
                *y = stepper.step(*y, ds, sq_ds, z).0;
            });
        let new_total = stats::log_sum_exp(&logw);
        if !new_total.is_finite() {
            return Err(Error::Stability("particle weights became non-finite".into()));
        }
        if step >= n_burn {
            let k = ((step - n_burn) / per_batch).min(9) as usize;
            batch_sums[k] += new_total - log_total;
        }
        log_total = new_total;
        // effective sample size
        let sum_sq: f64 = logw.iter().map(|l| (2.0 * (l - new_total)).exp()).sum();
        if 1.0 / sum_sq < 0.5 * n as f64 {
            let u0: f64 = resampler.random::<f64>() / n as f64;
            let mut cum = 0.0;
            let mut j = 0;
            scratch.copy_from_slice(&ys);
            for i in 0..n {
                let target = u0 + i as f64 / n as f64;
                while j + 1 < n && cum + (logw[j] - new_total).exp() < target {
                    cum += (logw[j] - new_total).exp();
                    j += 1;
                }
                ys[i] = scratch[j];
            }
            let level = new_total - (n as f64).ln();
            logw.iter_mut().for_each(|l| *l = level);
        }
        // keep weights near zero to avoid drift in the exponent
        if step % 64 == 0 {
            let shift = log_total - (n as f64).ln();
            logw.iter_mut().for_each(|l| *l -= shift);
            log_total -= shift;
        }
    }
    let batch_len = per_batch as f64 * ds;
    let rates: Vec<f64> = batch_sums.iter().map(|s| s / batch_len).collect();
    let (value, se) = stats::batch_mean_se(&rates);
    Ok(McEstimate {
        value,
        se,
        samples: n as u64,
        seed: mc.seed,
        warning: None,
    })
}

/// Empirical correlation of the two driving increment streams over
/// `paths × steps` draws, generated exactly as in [`simulate_xy`].
pub fn increment_correlation(rho: f64, mc: &McConfig, steps: usize) -> f64 {
    let rho_perp = (1.0 - rho * rho).sqrt();
    let sums: Vec<[f64; 5]> = (0..mc.paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(mc.seed, i);
            let mut s = [0.0; 5];
            for _ in 0..steps {
                let z1 = normal(&mut rng);
                let z2 = rho * z1 + rho_perp * normal(&mut rng);
                s[0] += z1;
                s[1] += z2;
                s[2] += z1 * z1;
                s[3] += z2 * z2;
                s[4] += z1 * z2;
            }
            s
        })
        .collect();
    let mut t = [0.0; 5];
    for s in &sums {
        for k in 0..5 {
            t[k] += s[k];
        }
    }
    let n = (mc.paths * steps) as f64;
    let (m1, m2) = (t[0] / n, t[1] / n);
    let cov = t[4] / n - m1 * m2;
    let v1 = t[2] / n - m1 * m1;
    let v2 = t[3] / n - m2 * m2;
    cov / (v1 * v2).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VolFnSpec;
    use std::f64::consts::SQRT_2;

    fn const_sigma(s0: f64) -> ModelParams {
        ModelParams {
            m: 0.0,
            nu: SQRT_2,
            beta: 0.0,
            rho: 0.0,
            rate: 0.0,
            sigma: VolFnSpec::constant(s0),
            y0: 0.0,
            x0: 0.0,
        }
    }

    fn mc(paths: usize) -> McConfig {
        McConfig {
            paths,
            ..McConfig::default()
        }
    }

    #[test]
    fn deterministic_factor_relaxes_exponentially() {
        let mut p = const_sigma(0.2);
        p.nu = 1e-300;
        p.m = 1.0;
        p.y0 = 3.0;
        let cfg = McConfig {
            paths: 3,
            steps_per_unit_time: 100_000,
            ..McConfig::default()
        };
        let b = simulate_tilted(&p, &Tilt::None, 3.0, 1.0, 0.0, |y| y, &cfg).unwrap();
        let exact = 1.0 + 2.0 * (-1.0f64).exp();
        assert!((b.y_terminal[0] - exact).abs() < 1e-4);
    }

    #[test]
    fn x_is_gaussian_for_constant_sigma() {
        let p = ModelParams {
            rate: 0.05,
            x0: 0.1,
            ..const_sigma(0.3)
        };
        let cfg = McConfig {
            paths: 20_000,
            steps_per_unit_time: 20,
            ..McConfig::default()
        };
        let b = simulate_xy(&p, Regime::Fast, 1.0, 1.0, &cfg, XyOptions::default()).unwrap();
        let mean = stats::mean(&b.x_terminal);
        let var = stats::variance(&b.x_terminal);
        let n = b.paths() as f64;
        let want_mean = 0.1 + (0.05 - 0.045);
        assert!((mean - want_mean).abs() < 4.0 * (0.09 / n).sqrt());
        assert!((var - 0.09).abs() < 4.0 * 0.09 * (2.0 / n).sqrt());
    }

    #[test]
    fn runs_are_reproducible() {
        let p = const_sigma(0.3);
        let a = simulate_xy(&p, Regime::Fast, 0.5, 1.0, &mc(50), XyOptions::default()).unwrap();
        let b = simulate_xy(&p, Regime::Fast, 0.5, 1.0, &mc(50), XyOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn positivity_under_full_truncation() {
        let p = ModelParams {
            m: 1.0,
            nu: 1.0,
            beta: 0.5,
            y0: 1.0,
            sigma: VolFnSpec::power_abs(1.0, 0.25, 0.0),
            ..const_sigma(0.3)
        };
        let b = simulate_xy(&p, Regime::Fast, 0.5, 1.0, &mc(2000), XyOptions::default()).unwrap();
        assert_eq!(b.negative_samples, 0);
        assert_eq!(b.negative_sigma, 0);
        assert!(b.min_y >= 0.0);
        assert!(b.truncated_fraction() < 0.01);
    }

    #[test]
    fn coarse_steps_are_rejected() {
        let p = const_sigma(0.3);
        let cfg = McConfig {
            steps_per_unit_time: 5,
            ..mc(10)
        };
        assert!(matches!(
            simulate_xy(&p, Regime::Fast, 0.5, 1.0, &cfg, XyOptions::default()),
            Err(Error::Stability(_))
        ));
    }

    #[test]
    fn ergodic_average_of_one_is_exact() {
        let p = const_sigma(0.3);
        let e = ergodic_average(&p, &Tilt::None, |_| 1.0, 5.0, &mc(20)).unwrap();
        assert_eq!(e.value, 1.0);
    }

    #[test]
    fn tilted_ou_mean_is_shifted() {
        let mut p = const_sigma(0.5);
        p.rho = 0.5;
        let tilt = 1.0;
        let shift = p.rho * tilt * 0.5 * p.nu;
        let e = ergodic_average(&p, &Tilt::P(tilt), |y| y, 20.0, &mc(2000)).unwrap();
        assert!((e.value - shift).abs() < 4.0 * e.se, "{e:?} vs {shift}");
    }

    #[test]
    fn correlation_of_drivers() {
        let cfg = mc(200);
        let r = increment_correlation(0.6, &cfg, 500);
        assert!((r - 0.6).abs() < 4.0 / ((200 * 500) as f64).sqrt());
    }

    #[test]
    fn constant_sigma_fk_is_exact() {
        let p = const_sigma(0.3);
        for est in [FkEstimator::Plain, FkEstimator::Particle] {
            let e = feynman_kac(&p, 2.0, 20.0, 0.0, FkForm::Tilted, est, &mc(200)).unwrap();
            assert!((e.value - 0.18).abs() < 1e-9, "{est:?} {e:?}");
        }
        let z = feynman_kac(&p, 0.0, 20.0, 0.0, FkForm::Tilted, FkEstimator::Plain, &mc(10)).unwrap();
        assert_eq!((z.value, z.se), (0.0, 0.0));
    }

    #[test]
    fn binary_dump_layout() {
        let p = const_sigma(0.3);
        let b = simulate_xy(
            &p,
            Regime::Fast,
            0.5,
            0.5,
            &mc(3),
            XyOptions {
                record_y: true,
                record_integrals: false,
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        b.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"SVASYMP1");
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(buf[16..24].try_into().unwrap()), 2);
        assert_eq!(buf.len(), 24 + 2 * 16 + 3 * 2 * 8);
        let x1 = f64::from_le_bytes(buf[56 + 16..56 + 24].try_into().unwrap());
        assert_eq!(x1, b.x_terminal[1]);
    }
}
