//! Rate functions for both regimes, Lax-formula solutions, log-asymptotic
//! option prices and implied-volatility smiles.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{Flag, LegendreCurve};
use crate::model::Regime;

/// `|x0 − x|² / (2σ̄²t)`.
pub fn rate_i4(x: f64, x0: f64, t: f64, sigma_bar_sq: f64) -> f64 {
    let d = x0 - x;
    d * d / (2.0 * sigma_bar_sq * t)
}

/// `t·L̄₀((x0 − x)/t)`.
pub fn rate_i2(x: f64, x0: f64, t: f64, legendre: &LegendreCurve) -> Result<f64> {
    check_t(t)?;
    Ok(t * legendre.eval((x0 - x) / t)?.value)
}

fn check_t(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidInput(format!("t must be positive, got {t}")));
    }
    Ok(())
}

/// What a rate function is built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RateSource {
    Regime4 { sigma_bar_sq: f64 },
    Regime2 { legendre: LegendreCurve },
}

impl RateSource {
    pub fn regime(&self) -> Regime {
        match self {
            RateSource::Regime4 { .. } => Regime::UltraFast,
            RateSource::Regime2 { .. } => Regime::Fast,
        }
    }

    /// The running cost at velocity `q`, with its extrapolation flag.
    pub fn lagrangian(&self, q: f64) -> Result<(f64, Flag)> {
        match self {
            RateSource::Regime4 { sigma_bar_sq } => Ok((q * q / (2.0 * sigma_bar_sq), Flag::Interior)),
            RateSource::Regime2 { legendre } => legendre.eval(q).map(|c| (c.value, c.flag)),
        }
    }

    pub fn rate(&self, x: f64, x0: f64, t: f64) -> Result<f64> {
        check_t(t)?;
        match self {
            RateSource::Regime4 { sigma_bar_sq } => Ok(rate_i4(x, x0, t, *sigma_bar_sq)),
            RateSource::Regime2 { legendre } => rate_i2(x, x0, t, legendre),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCurve {
    pub regime: Regime,
    pub x0: f64,
    pub t: f64,
    pub x_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub flags: Vec<Flag>,
    pub sigma_bar_sq: Option<f64>,
    pub legendre: Option<LegendreCurve>,
}

pub fn rate_curve(source: &RateSource, x0: f64, t: f64, x_grid: &[f64]) -> Result<RateCurve> {
    check_t(t)?;
    let points = x_grid
        .par_iter()
        .map(|&x| {
            let flag = match source {
                RateSource::Regime4 { .. } => Flag::Interior,
                RateSource::Regime2 { .. } => source.lagrangian((x0 - x) / t)?.1,
            };
            source.rate(x, x0, t).map(|v| (v, flag))
        })
        .collect::<Result<Vec<_>>>()?;
    let (sigma_bar_sq, legendre) = match source {
        RateSource::Regime4 { sigma_bar_sq } => (Some(*sigma_bar_sq), None),
        RateSource::Regime2 { legendre } => (None, Some(legendre.clone())),
    };
    Ok(RateCurve {
        regime: source.regime(),
        x0,
        t,
        x_grid: x_grid.to_vec(),
        values: points.iter().map(|p| p.0).collect(),
        flags: points.iter().map(|p| p.1).collect(),
        sigma_bar_sq,
        legendre,
    })
}

impl RateCurve {
    /// Largest amount by which a point lies above the chord of its neighbours.
    pub fn max_concavity(&self) -> f64 {
        crate::hamiltonian::convexity_excess(&self.x_grid, &self.values)
            .into_iter()
            .fold(0.0, f64::max)
    }

    /// Largest violation of monotonicity away from `x0`.
    pub fn max_monotonicity_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 1..self.x_grid.len() {
            let (a, b) = (self.x_grid[i - 1], self.x_grid[i]);
            let dv = self.values[i] - self.values[i - 1];
            if a >= self.x0 {
                worst = worst.max(-dv);
            } else if b <= self.x0 {
                worst = worst.max(dv);
            }
        }
        worst
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "rate", "flag"])?;
        for i in 0..self.x_grid.len() {
            w.write_record([
                self.x_grid[i].to_string(),
                self.values[i].to_string(),
                self.flags[i].name().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A terminal function tabulated on a sorted grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffTable {
    pub x: Vec<f64>,
    pub values: Vec<f64>,
}

impl PayoffTable {
    pub fn sample<F: Fn(f64) -> f64>(x: Vec<f64>, h: F) -> Result<Self> {
        if x.len() < 3 || x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(
                "payoff table needs at least 3 strictly increasing nodes".into(),
            ));
        }
        let values = x.iter().map(|&v| h(v)).collect();
        Ok(Self { x, values })
    }
}

/// `sup_{x′} h(x′) − t·L((x − x′)/t)` over the table nodes, refined by a
/// parabola through the best node and its neighbours.
pub fn lax_solution(h: &PayoffTable, source: &RateSource, t: f64, x: f64) -> Result<f64> {
    check_t(t)?;
    let objective: Vec<f64> = h
        .x
        .iter()
        .zip(&h.values)
        .map(|(&xp, &hv)| match source.lagrangian((x - xp) / t) {
            Ok((l, Flag::Interior)) => hv - t * l,
            // beyond the sampled slopes the cost is only bounded below
            Ok((_, Flag::Extrapolated)) | Err(Error::Range { .. }) => f64::NEG_INFINITY,
            Err(_) => f64::NAN,
        })
        .collect();
    if objective.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("payoff table contains NaN".into()));
    }
    let (k, best) = objective
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
    if !best.is_finite() {
        return Err(Error::InvalidInput(format!(
            "no table node is reachable from x = {x} at t = {t}"
        )));
    }
    let n = objective.len();
    let on_edge = |i: usize| i == 0 || i + 1 == n;
    if on_edge(k) {
        return Err(Error::EdgeSupremum { at: h.x[k] });
    }
    let (g0, g1, g2) = (objective[k - 1], objective[k], objective[k + 1]);
    if !(g0.is_finite() && g2.is_finite()) {
        return Ok(best);
    }
    let (x0, x1, x2) = (h.x[k - 1], h.x[k], h.x[k + 1]);
    let d01 = (g1 - g0) / (x1 - x0);
    let d12 = (g2 - g1) / (x2 - x1);
    let a = (d12 - d01) / (x2 - x0);
    if a < 0.0 {
        let b = d01 - a * (x0 + x1);
        let xs = -b / (2.0 * a);
        if xs > x0 && xs < x2 {
            let v = g1 + a * (xs - x1) * (xs - x1) + (b + 2.0 * a * x1) * (xs - x1);
            return Ok(v.max(best));
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Call,
    Put,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceAsymptote {
    /// Limit of `ε log` of the out-of-the-money price.
    pub value: f64,
    pub side: Side,
    pub warning: Option<String>,
}

/// `−I_r(log K; x0, t)`: a call when `log K > x0`, otherwise a put.
pub fn option_price_log_asymptote(
    log_k: f64,
    x0: f64,
    t: f64,
    source: &RateSource,
    resolution: f64,
) -> Result<PriceAsymptote> {
    let value = -source.rate(log_k, x0, t)?;
    let side = if log_k > x0 { Side::Call } else { Side::Put };
    let warning = ((log_k - x0).abs() < resolution).then(|| {
        format!("log K = {log_k} is within {resolution:e} of x0; the asymptote degenerates to 0")
    });
    Ok(PriceAsymptote {
        value,
        side,
        warning,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmileCurve {
    pub logk_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub regime: Regime,
    pub atm_value: f64,
    /// Strikes inside the at-the-money band, filled with `atm_value`.
    pub atm_filled: Vec<bool>,
}

/// `(log K − x0)² / (2 I_r t)`, with strikes within `resolution` of `x0`
/// set to σ̄².
pub fn implied_vol_curve(
    source: &RateSource,
    x0: f64,
    t: f64,
    logk_grid: &[f64],
    sigma_bar_sq: f64,
    resolution: f64,
) -> Result<SmileCurve> {
    check_t(t)?;
    let points = logk_grid
        .par_iter()
        .map(|&k| {
            let d = k - x0;
            if d.abs() < resolution {
                return Ok((sigma_bar_sq, true));
            }
            let var = match source {
                RateSource::Regime4 { sigma_bar_sq } => {
                    d * d / (2.0 * t * (d * d / (2.0 * sigma_bar_sq * t)))
                }
                RateSource::Regime2 { .. } => d * d / (2.0 * t * source.rate(k, x0, t)?),
            };
            Ok((var, false))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SmileCurve {
        logk_grid: logk_grid.to_vec(),
        values: points.iter().map(|p| p.0).collect(),
        regime: source.regime(),
        atm_value: sigma_bar_sq,
        atm_filled: points.iter().map(|p| p.1).collect(),
    })
}

impl SmileCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["logK", "implied_var", "regime"])?;
        let r = self.regime.exponent().to_string();
        for i in 0..self.logk_grid.len() {
            w.write_record([
                self.logk_grid[i].to_string(),
                self.values[i].to_string(),
                r.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evidence on the small-z limit of `z²/(2t²L̄₀(z/t))`. Reported only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtmProbe {
    pub label: String,
    pub z: Vec<f64>,
    pub ratio: Vec<f64>,
    pub sigma_bar_sq: f64,
    pub monotone: bool,
    /// Gap between the smallest-z ratio and σ̄².
    pub final_gap: f64,
}

pub fn atm_conjecture_probe(
    legendre: &LegendreCurve,
    t: f64,
    z: &[f64],
    sigma_bar_sq: f64,
    noise_floor: f64,
) -> Result<AtmProbe> {
    check_t(t)?;
    let ratio = z
        .iter()
        .map(|&z| {
            let l = legendre.eval(z / t)?.value;
            if !(l > noise_floor) {
                return Err(Error::Resolution { z });
            }
            Ok(z * z / (2.0 * t * t * l))
        })
        .collect::<Result<Vec<f64>>>()?;
    let monotone = ratio.windows(2).all(|w| w[1] >= w[0]) || ratio.windows(2).all(|w| w[1] <= w[0]);
    let final_gap = ratio.last().map_or(f64::NAN, |r| r - sigma_bar_sq);
    Ok(AtmProbe {
        label: "CONJECTURE PROBE".into(),
        z: z.to_vec(),
        ratio,
        sigma_bar_sq,
        monotone,
        final_gap,
    })
}

/// For tents `h(x′) = −c|x′ − x|`, `h(x) − u₀^h(t, x0)` for each slope `c`.
/// Every value is a lower bound for `I_r(x)` and they approach it as `c`
/// grows.
pub fn tent_lower_bounds(
    source: &RateSource,
    x0: f64,
    t: f64,
    x: f64,
    slopes: &[f64],
    table: &[f64],
) -> Result<Vec<f64>> {
    slopes
        .iter()
        .map(|&c| {
            let h = PayoffTable::sample(table.to_vec(), |xp| -c * (xp - x).abs())?;
            Ok(-lax_solution(&h, source, t, x0)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{legendre, HamiltonianCurve, Method};

    fn quadratic_legendre(s0: f64) -> LegendreCurve {
        let p: Vec<f64> = (-100..=100).map(|i| i as f64 * 0.1).collect();
        let c = HamiltonianCurve {
            values: p.iter().map(|x| 0.5 * s0 * s0 * x * x).collect(),
            errors: vec![0.0; p.len()],
            convexity_excess: vec![0.0; p.len()],
            p_grid: p,
            method: Method::ClosedForm,
        };
        legendre(&c, &[0.0], false).unwrap()
    }

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn i4_arithmetic() {
        assert!((rate_i4(0.1, 0.0, 1.0, 0.04) - 0.125).abs() < 1e-15);
        assert_eq!(rate_i4(0.3, 0.3, 1.0, 0.04), 0.0);
        assert!((rate_i4(0.1, 0.0, 2.0, 0.04) - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn constant_sigma_regimes_agree() {
        let l = quadratic_legendre(0.2);
        for x in linspace(-0.3, 0.3, 13) {
            let a = rate_i2(x, 0.0, 1.0, &l).unwrap();
            let b = rate_i4(x, 0.0, 1.0, 0.04);
            assert!((a - b).abs() <= 1e-12 * b.max(1e-12), "{x}: {a} vs {b}");
        }
        let src = RateSource::Regime2 { legendre: l };
        let s = implied_vol_curve(&src, 0.0, 1.0, &linspace(-0.3, 0.3, 7), 0.04, 1e-6).unwrap();
        assert!(s.values.iter().all(|v| (v - 0.04).abs() < 1e-10));
    }

    #[test]
    fn price_asymptote() {
        let src = RateSource::Regime4 { sigma_bar_sq: 0.04 };
        let p = option_price_log_asymptote(0.1, 0.0, 1.0, &src, 1e-3).unwrap();
        assert!((p.value + 0.125).abs() < 1e-15);
        assert_eq!(p.side, Side::Call);
        assert!(p.warning.is_none());
        let atm = option_price_log_asymptote(1e-5, 0.0, 1.0, &src, 1e-3).unwrap();
        assert!(atm.warning.is_some());
        assert!(atm.value.abs() < 1e-8);
    }

    #[test]
    fn lax_constant_and_short_time() {
        let src = RateSource::Regime4 { sigma_bar_sq: 0.04 };
        let xs = linspace(-2.0, 2.0, 4001);
        let c = PayoffTable::sample(xs.clone(), |_| 0.7).unwrap();
        assert!((lax_solution(&c, &src, 1.0, 0.1).unwrap() - 0.7).abs() < 1e-12);
        let h = PayoffTable::sample(xs, |x| (3.0 * x).sin()).unwrap();
        let u = lax_solution(&h, &src, 0.001, 0.2).unwrap();
        assert!((u - (0.6f64).sin()).abs() < 0.01 * 3.0);
    }

    #[test]
    fn lax_tent_matches_brute_force() {
        let src = RateSource::Regime4 { sigma_bar_sq: 0.09 };
        let xs = linspace(-3.0, 3.0, 601);
        let h = PayoffTable::sample(xs, |x| -(x - 0.4).abs()).unwrap();
        let fine = linspace(-3.0, 3.0, 600_001);
        for x in [-0.5, 0.0, 0.4, 1.0] {
            let u = lax_solution(&h, &src, 0.5, x).unwrap();
            let brute = fine
                .iter()
                .map(|&xp| -(xp - 0.4f64).abs() - (x - xp).powi(2) / (2.0 * 0.09 * 0.5))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((u - brute).abs() < 1e-4, "{x}: {u} vs {brute}");
        }
    }

    #[test]
    fn lax_linear_payoff_gives_hamiltonian() {
        let l = quadratic_legendre(0.3);
        let src = RateSource::Regime2 { legendre: l };
        let xs = linspace(-5.0, 5.0, 2001);
        let p = 1.5;
        let h = PayoffTable::sample(xs, |x| p * x).unwrap();
        let t = 0.5;
        let u = lax_solution(&h, &src, t, 0.2).unwrap();
        let expect = t * 0.5 * 0.09 * p * p + p * 0.2;
        assert!((u - expect).abs() < 1e-8, "{u} vs {expect}");
    }

    #[test]
    fn lax_edge_supremum() {
        let src = RateSource::Regime4 { sigma_bar_sq: 1.0 };
        let h = PayoffTable::sample(linspace(-1.0, 1.0, 201), |x| 10.0 * x).unwrap();
        assert!(matches!(
            lax_solution(&h, &src, 1.0, 0.0),
            Err(Error::EdgeSupremum { .. })
        ));
    }

    #[test]
    fn regime4_smile_is_flat() {
        let src = RateSource::Regime4 { sigma_bar_sq: 0.7978845608 };
        let s = implied_vol_curve(&src, 0.1, 2.0, &linspace(-1.0, 1.0, 41), 0.7978845608, 1e-4)
            .unwrap();
        for v in &s.values {
            assert!((v - 0.7978845608).abs() < 1e-10);
        }
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("logK,implied_var,regime\n"));
    }

    #[test]
    fn probe_on_quadratic_is_exact() {
        let l = quadratic_legendre(0.5);
        let r = atm_conjecture_probe(&l, 1.0, &[0.4, 0.2, 0.1, 0.05], 0.25, 1e-14).unwrap();
        assert!(r.ratio.iter().all(|v| (v - 0.25).abs() < 1e-12));
        assert!(matches!(
            atm_conjecture_probe(&l, 1.0, &[1e-9], 0.25, 1e-14),
            Err(Error::Resolution { .. })
        ));
    }

    #[test]
    fn tents_bound_the_rate() {
        let src = RateSource::Regime4 { sigma_bar_sq: 0.04 };
        let table = linspace(-2.0, 2.0, 4001);
        let b = tent_lower_bounds(&src, 0.0, 1.0, 0.2, &[0.5, 2.0, 10.0, 50.0], &table).unwrap();
        let i = rate_i4(0.2, 0.0, 1.0, 0.04);
        for w in b.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
        assert!(b.iter().all(|v| *v <= i + 1e-9));
        assert!((b[3] - i).abs() < 1e-3 * i, "{} vs {i}", b[3]);
    }

    #[test]
    fn rate_curve_shape() {
        let src = RateSource::Regime4 { sigma_bar_sq: 0.04 };
        let c = rate_curve(&src, 0.0, 1.0, &linspace(-0.5, 0.5, 101)).unwrap();
        assert!(c.max_concavity() <= 0.0);
        assert_eq!(c.max_monotonicity_violation(), 0.0);
    }
}
