//! The centred Poisson equation `Bχ = (p²/2)(σ̄² − σ²)` for the base
//! generator, solved through the closed integral formula for χ′.
//!
//! With `a = ν²y^{2β}/2` and `B = (1/π)(aπ ∂_y)′` we have
//! `χ′(y) = p² F(y) / (ν² y^{2β} π(y))`, where `F(y) = ∫_lo^y π(σ̄² − σ²)`
//! or, by centring, `F(y) = −∫_y^hi π(σ̄² − σ²)`. The left form is used below
//! the density mode and the right form above it.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Coord, Grid};
use crate::measures::{LogSpeed, WindowSpec};
use crate::model::{ModelParams, VolKind};
use crate::quad;

#[derive(Debug, Clone)]
pub struct Corrector {
    pub grid: Grid,
    pub chi: Vec<f64>,
    pub chi_prime: Vec<f64>,
    pub p: f64,
    pub sigma_bar_sq: f64,
    /// ∫(σ̄² − σ²)dπ over the window, including the tail corrections.
    pub centering_residual: f64,
    /// Quadrature error estimate for the centring integral.
    pub quad_err: f64,
    /// max |F_left − F_right| over the core window, where χ′ ∝ F/π.
    pub representation_gap: f64,
    density: LogSpeed,
}

/// Solves for χ with σ̄² computed on the same grid.
pub fn solve_corrector(params: &ModelParams, p: f64, spec: &WindowSpec) -> Result<Corrector> {
    let ls = LogSpeed::build(params, 0.0, spec)?;
    let sbar = ls.expectation(|y| params.sigma.eval_sq(y)).value;
    solve_on(ls, p, sbar)
}

/// Solves for χ on a given grid with a caller-supplied σ̄².
pub fn solve_corrector_on_grid(
    params: &ModelParams,
    p: f64,
    grid: Grid,
    sigma_bar_sq: Option<f64>,
) -> Result<Corrector> {
    let ls = LogSpeed::on_grid(params, 0.0, grid)?;
    let sbar = match sigma_bar_sq {
        Some(s) => s,
        None => ls.expectation(|y| params.sigma.eval_sq(y)).value,
    };
    solve_on(ls, p, sbar)
}

fn solve_on(ls: LogSpeed, p: f64, sbar: f64) -> Result<Corrector> {
    if !p.is_finite() {
        return Err(Error::InvalidInput(format!("p must be finite, got {p}")));
    }
    let params = ls.params.clone();
    let g = ls.grid;
    let n = g.len;
    let h = g.step;
    let coord = g.coord;
    let rhs = |y: f64| sbar - params.sigma.eval_sq(y);

    // Centring residual, from F_L(hi) plus both tail corrections, in units of π.
    let cell = |a: f64, b: f64, ref_l: f64| {
        quad::gauss_legendre5(
            |u| rhs(coord.to_y(u)) * (ls.at(u) - ref_l).exp() * coord.jacobian(u),
            a,
            b,
        )
    };
    let (tail_l, tail_r) = tail_terms(&ls, &rhs);
    let mut total = tail_l * (ls.values[0] - ls.log_z).exp();
    let mut coarse = total;
    for i in 0..n - 1 {
        total += cell(g.u(i), g.u(i + 1), ls.log_z);
    }
    for i in (0..n - 2).step_by(2) {
        coarse += cell(g.u(i), g.u(i + 2), ls.log_z);
    }
    let right_tail = tail_r * (ls.values[n - 1] - ls.log_z).exp();
    total += right_tail;
    coarse += right_tail;
    let quad_err = (total - coarse).abs().max(n as f64 * f64::EPSILON * sbar.abs());
    if total.abs() > 1e-5 {
        return Err(Error::Centering { residual: total.abs() });
    }

    if p == 0.0 || params.sigma.is_constant() {
        return Ok(Corrector {
            grid: g,
            chi: vec![0.0; n],
            chi_prime: vec![0.0; n],
            p,
            sigma_bar_sq: sbar,
            centering_residual: total,
            quad_err,
            representation_gap: 0.0,
            density: ls,
        });
    }

    // G(u) = F(u)/e^{ℓ(u) − log Z}, accumulated with local rescaling. Values at
    // nodes (even indices) and midpoints (odd indices) of a half-step grid.
    let m2 = 2 * n - 1;
    let uu = |k: usize| g.start + 0.5 * h * k as f64;
    let ell: Vec<f64> = (0..m2).map(|k| if k % 2 == 0 { ls.values[k / 2] } else { ls.at(uu(k)) }).collect();
    let mut gl = vec![0.0; m2];
    gl[0] = tail_l;
    for k in 1..m2 {
        gl[k] = gl[k - 1] * (ell[k - 1] - ell[k]).exp() + cell(uu(k - 1), uu(k), ell[k]);
    }
    let mut gr = vec![0.0; m2];
    gr[m2 - 1] = tail_r;
    for k in (0..m2 - 1).rev() {
        gr[k] = gr[k + 1] * (ell[k + 1] - ell[k]).exp() - cell(uu(k), uu(k + 1), ell[k]);
    }
    let mode_u = coord.to_u(ls.mode());
    let unit_prime = |k: usize, gk: f64| {
        let y = coord.to_y(uu(k));
        gk / (2.0 * params.half_diffusion_sq(y))
    };
    let dprime: Vec<f64> = (0..m2)
        .map(|k| unit_prime(k, if uu(k) <= mode_u { gl[k] } else { gr[k] }))
        .collect();

    let (core_lo, core_hi) = core_range(&g);
    let gap = (core_lo..=core_hi)
        .map(|i| ((gl[2 * i] - gr[2 * i]) * (ell[2 * i] - ls.log_z).exp()).abs())
        .fold(0.0, f64::max);

    // Simpson in u over each cell, using the midpoint value of χ′.
    let mut unit_chi = vec![0.0; n];
    for i in 1..n {
        let (a, m, b) = (2 * i - 2, 2 * i - 1, 2 * i);
        unit_chi[i] = unit_chi[i - 1]
            + h / 6.0
                * (dprime[a] * coord.jacobian(uu(a))
                    + 4.0 * dprime[m] * coord.jacobian(uu(m))
                    + dprime[b] * coord.jacobian(uu(b)));
    }
    let gauge = g.interpolate(&unit_chi, params.m.max(g.y_lo()).min(g.y_hi()));
    let p2 = p * p;
    let chi = unit_chi.iter().map(|c| p2 * (c - gauge)).collect();
    let chi_prime = (0..n).map(|i| p2 * dprime[2 * i]).collect();
    Ok(Corrector {
        grid: g,
        chi,
        chi_prime,
        p,
        sigma_bar_sq: sbar,
        centering_residual: total,
        quad_err,
        representation_gap: gap,
        density: ls,
    })
}

/// Tail integrals of `rhs·π` beyond each window edge, in units of the edge
/// density, assuming exponential decay at the edge rate in `u`.
fn tail_terms(ls: &LogSpeed, rhs: &dyn Fn(f64) -> f64) -> (f64, f64) {
    let g = &ls.grid;
    let d_log_jac = if g.coord == Coord::Log { 1.0 } else { 0.0 };
    let (u0, u1) = (g.u(0), g.u_end());
    let sl = ls.dl_du(u0) + d_log_jac;
    let sr = ls.dl_du(u1) + d_log_jac;
    let left = if sl > 0.0 {
        rhs(g.y(0)) * g.jacobian(0) / sl
    } else {
        0.0
    };
    let right = if sr < 0.0 {
        -rhs(g.y_hi()) * g.jacobian(g.len - 1) / -sr
    } else {
        0.0
    };
    (left, right)
}

/// Nodes of a linear grid sitting on a kink of σ (the origin for the power
/// kind, table nodes for the tabulated kind).
fn kink_nodes(params: &ModelParams, g: &Grid) -> Vec<usize> {
    if g.coord != Coord::Linear {
        return Vec::new();
    }
    let on_node = |y: f64| {
        let s = (y - g.start) / g.step;
        let k = s.round();
        ((s - k).abs() < 1e-9 && k >= 0.0 && (k as usize) < g.len).then_some(k as usize)
    };
    match &params.sigma.kind {
        VolKind::PowerAbs { q, .. } if *q > 0.0 => on_node(0.0).into_iter().collect(),
        VolKind::Tabulated { grid, .. } => grid.iter().filter_map(|y| on_node(*y)).collect(),
        _ => Vec::new(),
    }
}

/// Node range of the middle half of the window (in the native coordinate).
pub fn core_range(g: &Grid) -> (usize, usize) {
    let n = g.len;
    (n / 4, n - 1 - n / 4)
}

impl Corrector {
    /// Pointwise residual `μχ′ + aχ″ − (p²/2)(σ̄² − σ²)` with central
    /// differences; at nodes where σ has a kink, χ″ is the mean of the two
    /// one-sided second-order stencils.
    pub fn residual(&self) -> Vec<f64> {
        let g = &self.grid;
        let params = &self.density.params;
        let n = g.len;
        let d1 = g.derivative(&self.chi);
        let mut d2 = g.second_derivative(&self.chi);
        let h2 = g.step * g.step;
        for i in kink_nodes(params, g) {
            if i >= 3 && i + 3 < n {
                let c = &self.chi;
                let right = (2.0 * c[i] - 5.0 * c[i + 1] + 4.0 * c[i + 2] - c[i + 3]) / h2;
                let left = (2.0 * c[i] - 5.0 * c[i - 1] + 4.0 * c[i - 2] - c[i - 3]) / h2;
                d2[i] = 0.5 * (left + right);
            }
        }
        let half_p2 = 0.5 * self.p * self.p;
        (0..n)
            .map(|i| {
                if i == 0 || i == n - 1 {
                    return 0.0;
                }
                let y = g.y(i);
                params.tilted_drift(y, 0.0) * d1[i] + params.half_diffusion_sq(y) * d2[i]
                    - half_p2 * (self.sigma_bar_sq - params.sigma.eval_sq(y))
            })
            .collect()
    }

    /// max |residual| over the middle half of the window.
    pub fn core_residual(&self) -> f64 {
        let r = self.residual();
        let (lo, hi) = core_range(&self.grid);
        r[lo..=hi].iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["y", "chi", "chi_prime"])?;
        for i in 0..self.grid.len {
            w.write_record([
                self.grid.y(i).to_string(),
                self.chi[i].to_string(),
                self.chi_prime[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    /// max |χ′|/y^{2g−1} over the outer quartile.
    pub c1: f64,
    /// Log-log slope of that ratio against y over the outer quartile.
    pub slope: f64,
    pub pass: bool,
}

/// Checks `|χ′(y)| ≤ C₁ y^{2g−1}` for large y: the ratio over the outer
/// quartile of the window must not keep growing.
pub fn growth_bound_check(c: &Corrector, params: &ModelParams) -> Result<GrowthReport> {
    if c.chi_prime.iter().all(|v| *v == 0.0) {
        return Ok(GrowthReport {
            c1: 0.0,
            slope: 0.0,
            pass: true,
        });
    }
    let g = params.sigma.growth_exponent;
    if params.beta == 0.0 || g == 0.0 {
        return Err(Error::NotApplicable(
            "the power bound on χ′ needs β ∈ [1/2, 1) and a positive σ growth exponent".into(),
        ));
    }
    let grid = &c.grid;
    let start = grid.len - 1 - (grid.len - 1) / 4;
    let pts: Vec<(f64, f64)> = (start..grid.len)
        .map(|i| {
            let y = grid.y(i);
            (y.ln(), c.chi_prime[i].abs() / y.powf(2.0 * g - 1.0))
        })
        .collect();
    let c1 = pts.iter().fold(0.0f64, |m, (_, r)| m.max(*r));
    let logs: Vec<(f64, f64)> = pts
        .iter()
        .filter(|(_, r)| *r > 0.0)
        .map(|(x, r)| (*x, r.ln()))
        .collect();
    let slope = if logs.len() < 2 {
        0.0
    } else {
        let k = logs.len() as f64;
        let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
        let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = logs.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
        if sxx > 0.0 {
            sxy / sxx
        } else {
            0.0
        }
    };
    Ok(GrowthReport {
        c1,
        slope,
        pass: c1.is_finite() && slope <= 0.2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VolFnSpec;
    use std::f64::consts::SQRT_2;

    fn ou_sqrt() -> ModelParams {
        ModelParams {
            m: 0.0,
            nu: SQRT_2,
            beta: 0.0,
            rho: 0.0,
            rate: 0.0,
            sigma: VolFnSpec::power_abs(1.0, 0.5, 0.0),
            y0: 0.0,
            x0: 0.0,
        }
    }

    fn cir_quarter() -> ModelParams {
        ModelParams {
            m: 1.0,
            nu: 1.0,
            beta: 0.5,
            y0: 1.0,
            sigma: VolFnSpec::power_abs(1.0, 0.25, 0.0),
            ..ou_sqrt()
        }
    }

    #[test]
    fn trivial_cases_vanish() {
        let mut p = ou_sqrt();
        let c = solve_corrector(&p, 0.0, &WindowSpec::default()).unwrap();
        assert!(c.chi.iter().all(|v| *v == 0.0));
        p.sigma = VolFnSpec::constant(0.3);
        let c = solve_corrector(&p, 1.5, &WindowSpec::default()).unwrap();
        assert!(c.chi_prime.iter().all(|v| *v == 0.0));
        assert!(growth_bound_check(&c, &p).unwrap().pass);
    }

    #[test]
    fn ou_residual_is_small_and_second_order() {
        let p = ou_sqrt();
        let c = solve_corrector(&p, 1.0, &WindowSpec::default()).unwrap();
        let r1 = c.core_residual();
        assert!(r1 < 1e-4, "{r1}");
        let fine = solve_corrector_on_grid(&p, 1.0, c.grid.refine(), None).unwrap();
        let r2 = fine.core_residual();
        assert!(r2 <= 0.5 * r1, "{r1} → {r2}");
    }

    #[test]
    fn representations_agree() {
        let c = solve_corrector(&cir_quarter(), 1.0, &WindowSpec::default()).unwrap();
        assert!(c.centering_residual.abs() <= 10.0 * c.quad_err, "{c:?}");
        assert!(c.representation_gap <= 10.0 * c.quad_err, "{c:?}");
    }

    #[test]
    fn quadratic_scaling_in_p() {
        let p = cir_quarter();
        let a = solve_corrector(&p, 0.7, &WindowSpec::with_points(1025)).unwrap();
        let b = solve_corrector(&p, 1.4, &WindowSpec::with_points(1025)).unwrap();
        for (x, y) in a.chi.iter().zip(&b.chi) {
            assert_eq!(4.0 * x, *y);
        }
    }

    #[test]
    fn gauge_fixed_at_mean_level() {
        let p = cir_quarter();
        let c = solve_corrector(&p, 1.0, &WindowSpec::default()).unwrap();
        assert!(c.grid.interpolate(&c.chi, p.m).abs() < 1e-12);
    }

    #[test]
    fn growth_bound_plateaus_for_cir() {
        let p = cir_quarter();
        let c = solve_corrector(&p, 1.0, &WindowSpec::default()).unwrap();
        let r = growth_bound_check(&c, &p).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(matches!(
            growth_bound_check(&solve_corrector(&ou_sqrt(), 1.0, &WindowSpec::default()).unwrap(), &ou_sqrt()),
            Err(Error::NotApplicable(_))
        ));
    }

    #[test]
    fn inconsistent_sigma_bar_is_rejected() {
        let p = ou_sqrt();
        let g = Grid::spanning(Coord::Linear, -8.0, 8.0, 2001).unwrap();
        let err = solve_corrector_on_grid(&p, 1.0, g, Some(0.7)).unwrap_err();
        assert!(matches!(err, Error::Centering { .. }));
    }
}
