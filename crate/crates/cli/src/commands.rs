//! Subcommand definitions and their implementations.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use svasym::hamiltonian::{self, CurveOptions, HamiltonianCurve, Method};
use svasym::measures;
use svasym::model::{self, StateSpace};
use svasym::poisson;
use svasym::rates::{self, RateSource, Side};
use svasym::simulate::{self, XyOptions};
use svasym::verify::{self, AcceptanceConfig, Scale};
use svasym::{Error, Regime};

use crate::config::{load_config, ConfigError, HamMethod, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "svasym", version, about = "Small-time asymptotics for fast mean-reverting stochastic volatility")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Model and run configuration (flat `key = value` file).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Mean-reversion regime: 2 (δ = ε²) or 4 (δ = ε⁴).
    #[arg(long, global = true, value_parser = parse_regime)]
    pub regime: Option<Regime>,
    /// Maturity.
    #[arg(long, global = true, value_parser = parse_positive)]
    pub t: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the model against every admissibility clause.
    Validate(Common),
    /// Invariant density of the (tilted) factor.
    Invariant {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        p: Option<f64>,
    },
    /// Averaged variance σ̄².
    SigmaBar(Common),
    /// Corrector of the centred Poisson equation.
    Poisson {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        p: Option<f64>,
    },
    /// Effective Hamiltonian on the p grid and its Legendre transform.
    Hamiltonian(Common),
    /// Rate function on the x grid.
    Rate(Common),
    /// Log-price asymptotes of out-of-the-money options on the logK grid.
    Price(Common),
    /// Asymptotic implied variance on the logK grid.
    Smile(Common),
    /// Monte Carlo paths of the two-scale system.
    Simulate(Common),
    /// Monte Carlo tail probabilities against the predicted rate.
    VerifyLdp(Common),
    /// Run the acceptance suite.
    Accept {
        #[command(flatten)]
        common: Common,
        /// Reduced path counts.
        #[arg(long)]
        quick: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    let r: u32 = s.parse().map_err(|_| format!("expected 2 or 4, got `{s}`"))?;
    Regime::from_exponent(r).map_err(|_| format!("expected 2 or 4, got `{s}`"))
}

fn parse_positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got `{s}`")),
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Validation(_) | CliError::Failed(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Validation(_) => CliError::Validation(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

type Outcome = Result<(), CliError>;

/// Loaded config with the command-line overrides applied.
fn resolve(common: &Common) -> Result<RunConfig, CliError> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config <FILE> is required for this command".into()))?;
    let mut c = load_config(path)?;
    if let Some(r) = common.regime {
        c.regime = r;
    }
    if let Some(t) = common.t {
        c.t = t;
    }
    if let Some(o) = &common.out {
        c.out = o.clone();
    }
    fs::create_dir_all(&c.out)?;
    Ok(c)
}

fn admissible(c: &RunConfig) -> Outcome {
    model::validate(&c.model).into_result()?;
    Ok(())
}

fn artifact(dir: &Path, name: &str, bytes: &[u8], summary: &str) -> Outcome {
    let path = dir.join(name);
    fs::write(&path, bytes)?;
    println!("{}: {summary}", path.display());
    Ok(())
}

fn json<T: serde::Serialize + ?Sized>(v: &T) -> Result<Vec<u8>, CliError> {
    let mut s = serde_json::to_vec_pretty(v)?;
    s.push(b'\n');
    Ok(s)
}

fn csv_bytes<F: FnOnce(&mut Vec<u8>) -> svasym::Result<()>>(f: F) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

pub fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Validate(common) => validate(&resolve(&common)?),
        Command::Invariant { common, p } => invariant(&resolve(&common)?, p),
        Command::SigmaBar(common) => sigma_bar(&resolve(&common)?),
        Command::Poisson { common, p } => poisson_cmd(&resolve(&common)?, p),
        Command::Hamiltonian(common) => hamiltonian_cmd(&resolve(&common)?),
        Command::Rate(common) => rate(&resolve(&common)?),
        Command::Price(common) => price(&resolve(&common)?),
        Command::Smile(common) => smile(&resolve(&common)?),
        Command::Simulate(common) => simulate_cmd(&resolve(&common)?),
        Command::VerifyLdp(common) => verify_ldp(&resolve(&common)?),
        Command::Accept { common, quick, seed } => accept(&common, quick, seed),
    }
}

fn validate(c: &RunConfig) -> Outcome {
    let report = model::validate(&c.model);
    for cl in &report.clauses {
        println!("{} {}: {}", if cl.pass { "PASS" } else { "FAIL" }, cl.label, cl.message);
    }
    let boundary = if report.pass() && c.model.state_space() == StateSpace::PositiveHalfLine {
        Some(model::boundary_classification(&c.model)?)
    } else {
        None
    };
    let doc = serde_json::json!({ "pass": report.pass(), "clauses": report.clauses, "boundary_at_zero": boundary });
    artifact(&c.out, "validation.json", &json(&doc)?, if report.pass() { "valid" } else { "invalid" })?;
    if report.pass() {
        Ok(())
    } else {
        Err(CliError::Validation("model failed validation".into()))
    }
}

fn invariant(c: &RunConfig, p: Option<f64>) -> Outcome {
    admissible(c)?;
    let p = p.or(c.p).unwrap_or(0.0);
    let d = measures::invariant_density(&c.model, p, &c.window)?;
    let summary = format!(
        "{} points on [{:.6}, {:.6}], p = {p}, tail mass {:.3e}",
        d.values.len(),
        d.grid.y_lo(),
        d.grid.y_hi(),
        d.tail_mass
    );
    artifact(&c.out, "invariant.csv", &csv_bytes(|b| d.write_csv(b))?, &summary)
}

fn sigma_bar(c: &RunConfig) -> Outcome {
    admissible(c)?;
    let e = measures::sigma_bar_sq_with(&c.model, &c.window)?;
    println!("sigma_bar_sq = {:.15e} ± {:.1e}", e.value, e.err);
    let doc = serde_json::json!({ "sigma_bar_sq": e.value, "err": e.err, "window_points": c.window.points });
    artifact(&c.out, "sigma_bar.json", &json(&doc)?, &format!("σ̄² = {:.12}", e.value))
}

fn poisson_cmd(c: &RunConfig, p: Option<f64>) -> Outcome {
    admissible(c)?;
    let p = p.or(c.p).unwrap_or(1.0);
    let k = poisson::solve_corrector(&c.model, p, &c.window)?;
    let growth = match poisson::growth_bound_check(&k, &c.model) {
        Ok(g) => Some(g),
        Err(Error::NotApplicable(_)) => None,
        Err(e) => return Err(e.into()),
    };
    artifact(
        &c.out,
        "poisson.csv",
        &csv_bytes(|b| k.write_csv(b))?,
        &format!("χ on {} points, p = {p}", k.grid.len),
    )?;
    let doc = serde_json::json!({
        "p": p,
        "sigma_bar_sq": k.sigma_bar_sq,
        "core_residual": k.core_residual(),
        "centering_residual": k.centering_residual,
        "quad_err": k.quad_err,
        "representation_gap": k.representation_gap,
        "growth": growth,
    });
    artifact(
        &c.out,
        "poisson.json",
        &json(&doc)?,
        &format!(
            "core residual {:.3e}, growth check {}",
            k.core_residual(),
            match &growth {
                Some(g) if g.pass => "ok",
                Some(_) => "FAILED",
                None => "not applicable",
            }
        ),
    )
}

fn curve(c: &RunConfig) -> Result<HamiltonianCurve, CliError> {
    let method = match c.method {
        HamMethod::Eigen => Method::Eigen,
        HamMethod::MonteCarlo => Method::MonteCarlo,
        HamMethod::ClosedForm => Method::ClosedForm,
    };
    let opts = CurveOptions {
        window: c.window,
        mc: c.mc,
        ..CurveOptions::default()
    };
    Ok(hamiltonian::build_curve(&c.model, &c.p_grid, method, &opts)?)
}

fn source(c: &RunConfig) -> Result<(RateSource, f64), CliError> {
    let sbar = measures::sigma_bar_sq_with(&c.model, &c.window)?.value;
    let src = match c.regime {
        Regime::UltraFast => RateSource::Regime4 { sigma_bar_sq: sbar },
        Regime::Fast => RateSource::Regime2 {
            legendre: hamiltonian::legendre(&curve(c)?, &[0.0], c.allow_extrapolation)?,
        },
    };
    Ok((src, sbar))
}

fn hamiltonian_cmd(c: &RunConfig) -> Outcome {
    admissible(c)?;
    let h = curve(c)?;
    artifact(
        &c.out,
        "hamiltonian.csv",
        &csv_bytes(|b| h.write_csv(b))?,
        &format!(
            "{} points by {}, max convexity violation {:.3e}",
            h.p_grid.len(),
            h.method.name(),
            h.max_convexity_violation()
        ),
    )?;
    let q = hamiltonian::matched_q_grid(&h)?;
    let l = hamiltonian::legendre(&h, &q, false)?;
    artifact(
        &c.out,
        "legendre.csv",
        &csv_bytes(|b| l.write_csv(b))?,
        &format!("L̄₀ at {} matched slopes", q.len()),
    )
}

fn rate(c: &RunConfig) -> Outcome {
    admissible(c)?;
    let (src, _) = source(c)?;
    let r = rates::rate_curve(&src, c.model.x0, c.t, &c.x_grid)?;
    let extrapolated = r.flags.iter().filter(|f| **f == hamiltonian::Flag::Extrapolated).count();
    artifact(
        &c.out,
        "rate.csv",
        &csv_bytes(|b| r.write_csv(b))?,
        &format!(
            "regime {}, t = {}, {} points ({extrapolated} extrapolated)",
            c.regime.exponent(),
            c.t,
            r.x_grid.len()
        ),
    )
}

fn price(c: &RunConfig) -> Outcome {
    admissible(c)?;
    let (src, _) = source(c)?;
    let mut w = csv_writer();
    w.write_record(["logK", "side", "eps_log_price", "warning"]).map_err(csv_err)?;
    for &k in &c.logk_grid {
        let a = rates::option_price_log_asymptote(k, c.model.x0, c.t, &src, c.resolution)?;
        let side = match a.side {
            Side::Call => "call",
            Side::Put => "put",
        };
        w.write_record([k.to_string(), side.into(), a.value.to_string(), a.warning.unwrap_or_default()])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Failed(e.to_string()))?;
    artifact(
        &c.out,
        "price.csv",
        &bytes,
        &format!("regime {}, {} strikes", c.regime.exponent(), c.logk_grid.len()),
    )
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Failed(e.to_string())
}

fn smile(c: &RunConfig) -> Outcome {
    admissible(c)?;
    let (src, sbar) = source(c)?;
    let s = rates::implied_vol_curve(&src, c.model.x0, c.t, &c.logk_grid, sbar, c.resolution)?;
    artifact(
        &c.out,
        "smile.csv",
        &csv_bytes(|b| s.write_csv(b))?,
        &format!("regime {}, {} strikes, σ̄² = {:.10}", c.regime.exponent(), s.logk_grid.len(), sbar),
    )
}

fn simulate_cmd(c: &RunConfig) -> Outcome {
    admissible(c)?;
    let opts = XyOptions {
        record_y: true,
        record_integrals: true,
    };
    let b = simulate::simulate_xy(&c.model, c.regime, c.eps, c.t, &c.mc, opts)?;
    artifact(
        &c.out,
        "simulate_summary.csv",
        &csv_bytes(|w| b.write_summary_csv(w))?,
        &format!("{} paths, seed {}", b.paths(), b.seed),
    )?;
    artifact(
        &c.out,
        "paths.bin",
        &csv_bytes(|w| b.write_binary(w))?,
        &format!("per-path records, seed {}", b.seed),
    )
}

fn verify_ldp(c: &RunConfig) -> Outcome {
    admissible(c)?;
    let (src, _) = source(c)?;
    let r = verify::ldp_tail(&c.model, &src, c.x, c.t, &c.eps_seq, &c.mc)?;
    let mut w = csv_writer();
    w.write_record(["eps", "hits", "paths", "probability", "eps_log_p", "ci_lo", "ci_hi", "undersampled"])
        .map_err(csv_err)?;
    for p in &r.points {
        w.write_record([
            p.eps.to_string(),
            p.hits.to_string(),
            p.paths.to_string(),
            p.probability.to_string(),
            p.estimate.to_string(),
            p.ci.0.to_string(),
            p.ci.1.to_string(),
            p.undersampled.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Failed(e.to_string()))?;
    artifact(&c.out, "ldp.csv", &bytes, &format!("{} ε values, seed {}", r.points.len(), r.seed))?;
    let verdict = format!(
        "{}: predicted {:.6}, final gap {:.4} (tolerance {:.4}), trend {}",
        if r.pass { "PASS" } else { "FAIL" },
        r.predicted,
        r.final_gap,
        r.final_tolerance,
        if r.trend_ok { "ok" } else { "wrong" }
    );
    artifact(&c.out, "ldp.json", &json(&r)?, &verdict)?;
    if r.pass {
        Ok(())
    } else {
        Err(CliError::Failed("tail estimates do not match the predicted rate".into()))
    }
}

fn accept(common: &Common, quick: bool, seed: Option<u64>) -> Outcome {
    let (cfg_seed, out) = match &common.config {
        Some(_) => {
            let c = resolve(common)?;
            (c.mc.seed, c.out)
        }
        None => (42, common.out.clone().unwrap_or_else(|| PathBuf::from("."))),
    };
    fs::create_dir_all(&out)?;
    let config = AcceptanceConfig {
        scale: if quick { Scale::Quick } else { Scale::Full },
        seed: seed.unwrap_or(cfg_seed),
        ..AcceptanceConfig::default()
    };
    let report = verify::run_acceptance(&config);
    for c in &report.criteria {
        println!(
            "{} {:<16} measured {:<12.4e} expected {:<10.4e} tol {:<9.2e} {:>7.1}s  {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.criterion_id,
            c.measured,
            c.expected,
            c.tolerance,
            c.runtime_s,
            c.description
        );
    }
    let failed = report.criteria.iter().filter(|c| !c.pass).count();
    artifact(
        &out,
        "acceptance.json",
        &json(&report)?,
        &format!("{} checks, {failed} failed", report.criteria.len()),
    )?;
    artifact(
        &out,
        "acceptance_report.json",
        &json(&report.without_timing())?,
        "same report without timings",
    )?;
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::Failed(format!("{failed} acceptance checks failed")))
    }
}
