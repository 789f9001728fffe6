//! Scale and speed densities, invariant laws of the base and tilted factor,
//! the averaged variance σ̄², and discrete versions of the generator.
//!
//! Everything is computed from the log-speed density
//! `ℓ(y) = log(2/ν²) − 2β log y − log s_p(y)` sampled on a uniform grid in the
//! native coordinate, so that densities spanning hundreds of orders of
//! magnitude never underflow before normalization.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Coord, Grid, GridFn};
use crate::model::{ModelParams, StateSpace};
use crate::quad;

/// Options for the truncation window and grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub points: usize,
    pub y_lo: Option<f64>,
    pub y_hi: Option<f64>,
    /// Each tail may hold at most this fraction of the total mass.
    pub tail_tol: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            points: 4096,
            y_lo: None,
            y_hi: None,
            tail_tol: 1e-12,
        }
    }
}

impl WindowSpec {
    pub fn with_points(points: usize) -> Self {
        Self {
            points,
            ..Self::default()
        }
    }
}

fn coord_for(params: &ModelParams) -> Coord {
    match params.state_space() {
        StateSpace::Real => Coord::Linear,
        StateSpace::PositiveHalfLine => Coord::Log,
    }
}

fn check_p(p: f64) -> Result<()> {
    if p.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("tilt p must be finite, got {p}")))
    }
}

/// dℓ/du in the native coordinate.
#[inline]
fn dl_du(params: &ModelParams, p: f64, coord: Coord, u: f64) -> f64 {
    let nu2 = params.nu * params.nu;
    match coord {
        Coord::Linear => 2.0 * params.tilted_drift(u, p) / nu2,
        Coord::Log => {
            let y = u.exp();
            let b = params.beta;
            let y_pow = if b == 0.5 { 1.0 } else { y.powf(1.0 - 2.0 * b) };
            -2.0 * b + 2.0 * params.tilted_drift(y, p) * y_pow / nu2
        }
    }
}

/// `log s_p(y)`, anchored so that `s_p(1) = 1`.
pub fn log_scale_density(params: &ModelParams, p: f64, y: f64) -> Result<f64> {
    check_p(p)?;
    let space = params.state_space();
    if !space.contains(y) {
        return Err(Error::Domain {
            y,
            space: space.name(),
        });
    }
    let coord = coord_for(params);
    // d(log s)/du = −(dℓ/du + 2β d(log y)/du) = −(dℓ/du) − 2β on the log grid
    let correction = match coord {
        Coord::Linear => 0.0,
        Coord::Log => 2.0 * params.beta,
    };
    let integral = quad::integrate(
        |u| dl_du(params, p, coord, u) + correction,
        coord.to_u(1.0),
        coord.to_u(y),
        1e-13,
    )?;
    Ok(-integral)
}

/// `s_p(y) = exp{−∫₁^y 2μ_p(z)/(ν² z^{2β}) dz}`.
pub fn scale_density(params: &ModelParams, p: f64, y: f64) -> Result<f64> {
    Ok(log_scale_density(params, p, y)?.exp())
}

/// Log-speed density sampled on a grid, with a normalizing constant.
#[derive(Debug, Clone)]
pub struct LogSpeed {
    pub params: ModelParams,
    pub p: f64,
    pub grid: Grid,
    /// ℓ at the grid nodes.
    pub values: Vec<f64>,
    /// log Z, with Z = ∫ e^ℓ dy over the window.
    pub log_z: f64,
    /// Estimated mass outside the window, relative to Z.
    pub tail_mass: f64,
}

impl LogSpeed {
    /// Chooses the window automatically (unless overridden) and samples ℓ.
    pub fn build(params: &ModelParams, p: f64, spec: &WindowSpec) -> Result<Self> {
        check_p(p)?;
        let coord = coord_for(params);
        let (u_lo, u_hi) = match (spec.y_lo, spec.y_hi) {
            (Some(lo), Some(hi)) => {
                let space = params.state_space();
                for y in [lo, hi] {
                    if !space.contains(y) {
                        return Err(Error::Domain {
                            y,
                            space: space.name(),
                        });
                    }
                }
                (coord.to_u(lo), coord.to_u(hi))
            }
            (lo, hi) => {
                let (a, b) = choose_window(params, p, coord, spec.tail_tol)?;
                (lo.map_or(a, |y| coord.to_u(y)), hi.map_or(b, |y| coord.to_u(y)))
            }
        };
        let grid = Grid::spanning(coord, u_lo, u_hi, spec.points)?;
        Self::on_grid(params, p, grid)
    }

    /// Samples ℓ on a given grid.
    pub fn on_grid(params: &ModelParams, p: f64, grid: Grid) -> Result<Self> {
        check_p(p)?;
        let coord = grid.coord;
        if coord != coord_for(params) {
            return Err(Error::GridMismatch);
        }
        let f = |u: f64| dl_du(params, p, coord, u);
        let n = grid.len;
        let u_anchor = coord.to_u(1.0);
        let k = nearest_node(&grid, u_anchor);
        let mut values = vec![0.0; n];
        values[k] = (2.0 / (params.nu * params.nu)).ln()
            + quad::integrate(f, u_anchor, grid.u(k), 1e-13)?;
        for i in k + 1..n {
            values[i] = values[i - 1] + quad::gauss_legendre5(f, grid.u(i - 1), grid.u(i));
        }
        for i in (0..k).rev() {
            values[i] = values[i + 1] - quad::gauss_legendre5(f, grid.u(i), grid.u(i + 1));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Truncation(
                "log-speed density is not finite on the window".into(),
            ));
        }
        let mut out = Self {
            params: params.clone(),
            p,
            grid,
            values,
            log_z: 0.0,
            tail_mass: 0.0,
        };
        let shift = out.shift();
        let z = out.integrate_unnormalized(|_| 1.0, 1, shift);
        out.log_z = shift + z.ln();
        let (left, right) = out.tail_estimates();
        out.tail_mass = left + right;
        Ok(out)
    }

    #[inline]
    pub fn dl_du(&self, u: f64) -> f64 {
        dl_du(&self.params, self.p, self.grid.coord, u)
    }

    /// ℓ at any native coordinate, integrated from the nearest node.
    pub fn at(&self, u: f64) -> f64 {
        let k = nearest_node(&self.grid, u);
        let uk = self.grid.u(k);
        if u == uk {
            self.values[k]
        } else {
            self.values[k] + quad::gauss_legendre5(|v| self.dl_du(v), uk, u)
        }
    }

    /// Normalized density π(y) at node `i`.
    #[inline]
    pub fn density_at(&self, i: usize) -> f64 {
        (self.values[i] - self.log_z).exp()
    }

    /// Normalized density at an arbitrary point of the window.
    pub fn density(&self, y: f64) -> f64 {
        (self.at(self.grid.coord.to_u(y)) - self.log_z).exp()
    }

    fn shift(&self) -> f64 {
        (0..self.grid.len)
            .map(|i| self.values[i] + self.grid.jacobian(i).ln())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Σ over cells of width `stride·h` of the GL5 approximation to
    /// `∫ f(y) e^{ℓ(y) − shift} dy`.
    fn integrate_unnormalized<F: Fn(f64) -> f64>(&self, f: F, stride: usize, shift: f64) -> f64 {
        let g = &self.grid;
        let coord = g.coord;
        let mut total = 0.0;
        let mut j = 0;
        while j + stride < g.len {
            let (a, b) = (g.u(j), g.u(j + stride));
            total += quad::gauss_legendre5(
                |u| {
                    let y = coord.to_y(u);
                    f(y) * (self.at(u) - shift).exp() * coord.jacobian(u)
                },
                a,
                b,
            );
            j += stride;
        }
        total
    }

    /// `E_π[f]` on the window, with an error estimate from the coarsened grid.
    pub fn expectation<F: Fn(f64) -> f64>(&self, f: F) -> Estimate {
        let shift = self.shift();
        let ratio = |stride| {
            self.integrate_unnormalized(&f, stride, shift)
                / self.integrate_unnormalized(|_| 1.0, stride, shift)
        };
        let fine = ratio(1);
        let coarse = ratio(2);
        let floor = self.grid.len as f64 * f64::EPSILON * fine.abs();
        Estimate {
            value: fine,
            err: (fine - coarse).abs().max(floor),
        }
    }

    /// Tail masses beyond each edge, relative to Z, from the local exponential
    /// decay rate of the density in the native coordinate.
    pub fn tail_estimates(&self) -> (f64, f64) {
        let g = &self.grid;
        let coord = g.coord;
        let log_jac = |u: f64| match coord {
            Coord::Linear => 0.0,
            Coord::Log => u,
        };
        let d_log_jac = match coord {
            Coord::Linear => 0.0,
            Coord::Log => 1.0,
        };
        let (u0, u1) = (g.u(0), g.u_end());
        let slope_l = self.dl_du(u0) + d_log_jac;
        let slope_r = self.dl_du(u1) + d_log_jac;
        let left = if slope_l > 0.0 {
            (self.values[0] + log_jac(u0) - self.log_z).exp() / slope_l
        } else {
            f64::INFINITY
        };
        let right = if slope_r < 0.0 {
            (self.values[g.len - 1] + log_jac(u1) - self.log_z).exp() / -slope_r
        } else {
            f64::INFINITY
        };
        (left, right)
    }

    /// Grid node with the largest density in `y`.
    pub fn mode(&self) -> f64 {
        let i = (0..self.grid.len)
            .max_by(|&a, &b| self.values[a].total_cmp(&self.values[b]))
            .unwrap_or(0);
        self.grid.y(i)
    }

    pub fn table(&self) -> DensityTable {
        DensityTable {
            grid: self.grid,
            values: (0..self.grid.len).map(|i| self.density_at(i)).collect(),
            norm_constant: self.log_z.exp(),
            log_norm_constant: self.log_z,
            tail_mass: self.tail_mass,
            p: self.p,
        }
    }
}

fn nearest_node(grid: &Grid, u: f64) -> usize {
    let s = ((u - grid.start) / grid.step).round();
    if s <= 0.0 {
        0
    } else {
        (s as usize).min(grid.len - 1)
    }
}

/// Expands `[c − a, c + b]` by doubling each side until both tail estimates are
/// below `tol`.
fn choose_window(params: &ModelParams, p: f64, coord: Coord, tol: f64) -> Result<(f64, f64)> {
    let center = match coord {
        Coord::Linear => params.m,
        Coord::Log => params.m.max(1e-300).ln(),
    };
    let (mut wl, mut wr) = (1.0f64, 1.0f64);
    for _ in 0..60 {
        let (lo, hi) = (center - wl, center + wr);
        let probe = Grid::spanning(coord, lo, hi, 513)
            .and_then(|g| LogSpeed::on_grid(params, p, g));
        let (left, right) = match probe {
            Ok(ls) if ls.log_z.is_finite() => ls.tail_estimates(),
            _ => {
                return Err(Error::Truncation(format!(
                    "density is not finite on [{}, {}]",
                    coord.to_y(lo),
                    coord.to_y(hi)
                )))
            }
        };
        if left < tol && right < tol {
            return Ok((lo, hi));
        }
        if !(left < tol) {
            wl *= 2.0;
        }
        if !(right < tol) {
            wr *= 2.0;
        }
    }
    Err(Error::Truncation(
        "tail mass still above tolerance after 60 doublings".into(),
    ))
}

/// A quadrature value with an absolute error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub err: f64,
}

/// Normalized density on a truncated window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityTable {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub norm_constant: f64,
    pub log_norm_constant: f64,
    pub tail_mass: f64,
    pub p: f64,
}

impl DensityTable {
    pub fn ys(&self) -> Vec<f64> {
        self.grid.ys()
    }

    /// Trapezoid integral over the window.
    pub fn integral(&self) -> f64 {
        self.grid
            .weights()
            .iter()
            .zip(&self.values)
            .map(|(w, v)| w * v)
            .sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["y", "density"])?;
        for (i, v) in self.values.iter().enumerate() {
            w.write_record([self.grid.y(i).to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Invariant density of the factor tilted by `p` (`p = 0` is the base law).
pub fn invariant_density(params: &ModelParams, p: f64, spec: &WindowSpec) -> Result<DensityTable> {
    Ok(LogSpeed::build(params, p, spec)?.table())
}

/// σ̄² = ∫σ² dπ, refined until the relative error estimate is below 10⁻⁶.
pub fn sigma_bar_sq(params: &ModelParams) -> Result<Estimate> {
    sigma_bar_sq_with(params, &WindowSpec::default())
}

pub fn sigma_bar_sq_with(params: &ModelParams, spec: &WindowSpec) -> Result<Estimate> {
    if let crate::model::VolKind::Constant { s0 } = params.sigma.kind {
        return Ok(Estimate {
            value: s0 * s0,
            err: 0.0,
        });
    }
    let mut ls = LogSpeed::build(params, 0.0, spec)?;
    for _ in 0..6 {
        let est = ls.expectation(|y| params.sigma.eval_sq(y));
        if est.err <= 1e-6 * est.value.abs() {
            return Ok(est);
        }
        let finer = ls.grid.refine();
        ls = LogSpeed::on_grid(params, 0.0, finer)?;
    }
    let est = ls.expectation(|y| params.sigma.eval_sq(y));
    if est.err <= 1e-6 * est.value.abs() {
        Ok(est)
    } else {
        Err(Error::Quadrature(format!(
            "σ̄² relative error {:e} after refinement",
            est.err / est.value
        )))
    }
}

/// Discrete generator `Bᵖ = μ_p ∂_y + (ν²/2) y^{2β} ∂²_y` on the grid of a
/// [`LogSpeed`], in both a pointwise and a conservative (flux) form.
#[derive(Debug, Clone)]
pub struct Generator {
    pub grid: Grid,
    /// μ_p at the nodes.
    pub drift: Vec<f64>,
    /// ν² y^{2β}/2 at the nodes.
    pub diffusion: Vec<f64>,
    /// π_i J_i du: the mass of node `i`.
    pub mass: Vec<f64>,
    /// (ν² y^{2β}/2) π / (J du) at the midpoints `i + ½`, for `i = −1..n−1`,
    /// stored at offset `i + 1`.
    pub conductance: Vec<f64>,
}

impl Generator {
    pub fn new(ls: &LogSpeed) -> Self {
        let g = &ls.grid;
        let n = g.len;
        let h = g.step;
        let params = &ls.params;
        let drift = (0..n).map(|i| params.tilted_drift(g.y(i), ls.p)).collect();
        let diffusion = (0..n).map(|i| params.half_diffusion_sq(g.y(i))).collect();
        let mass = (0..n).map(|i| ls.density_at(i) * g.jacobian(i) * h).collect();
        let conductance = (0..=n)
            .map(|k| {
                let u = g.start + (k as f64 - 0.5) * h;
                let y = g.coord.to_y(u);
                params.half_diffusion_sq(y) * (ls.at(u) - ls.log_z).exp() / (g.coord.jacobian(u) * h)
            })
            .collect();
        Self {
            grid: *g,
            drift,
            diffusion,
            mass,
            conductance,
        }
    }

    /// Central-difference `μ g′ + a g″`; zero at the end nodes.
    pub fn apply_pointwise(&self, g: &[f64]) -> Vec<f64> {
        let d1 = self.grid.derivative(g);
        let d2 = self.grid.second_derivative(g);
        let n = self.grid.len;
        (0..n)
            .map(|i| {
                if i == 0 || i == n - 1 {
                    0.0
                } else {
                    self.drift[i] * d1[i] + self.diffusion[i] * d2[i]
                }
            })
            .collect()
    }

    /// Flux form `(1/π)(a π g′)′`, exactly self-adjoint in the node masses.
    /// Values outside the window are taken as equal to the end values.
    pub fn apply_flux(&self, g: &[f64]) -> Vec<f64> {
        let n = self.grid.len;
        (0..n)
            .map(|i| {
                let right = if i + 1 < n {
                    self.conductance[i + 1] * (g[i + 1] - g[i])
                } else {
                    0.0
                };
                let left = if i > 0 {
                    self.conductance[i] * (g[i] - g[i - 1])
                } else {
                    0.0
                };
                (right - left) / self.mass[i]
            })
            .collect()
    }

    /// Trapezoid-type sum `Σ f_i π_i J_i du`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.mass).map(|(a, b)| a * b).sum()
    }
}

fn check_grid(ls: &LogSpeed, f: &GridFn) -> Result<()> {
    if f.grid == ls.grid {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// `𝓔ᵖ(h, h) = (ν²/2)∫ y^{2β} |h′|² dπᵖ`, with h′ from cell differences.
pub fn dirichlet_form(ls: &LogSpeed, h: &GridFn) -> Result<f64> {
    check_grid(ls, h)?;
    let gen = Generator::new(ls);
    let v = &h.values;
    Ok((0..ls.grid.len - 1)
        .map(|i| {
            let d = v[i + 1] - v[i];
            gen.conductance[i + 1] * d * d
        })
        .sum())
}

/// `|∫ f·Bᵖg dπᵖ − ∫ g·Bᵖf dπᵖ|` with the pointwise central-difference
/// generator.
pub fn reversibility_check(ls: &LogSpeed, f: &GridFn, g: &GridFn) -> Result<f64> {
    check_grid(ls, f)?;
    check_grid(ls, g)?;
    let gen = Generator::new(ls);
    let bg = gen.apply_pointwise(&g.values);
    let bf = gen.apply_pointwise(&f.values);
    let fbg: Vec<f64> = f.values.iter().zip(&bg).map(|(a, b)| a * b).collect();
    let gbf: Vec<f64> = g.values.iter().zip(&bf).map(|(a, b)| a * b).collect();
    Ok((gen.integrate(&fbg) - gen.integrate(&gbf)).abs())
}

/// `|∫ Bᵖξ dπᵖ|` with the pointwise generator.
pub fn stationarity_residual(ls: &LogSpeed, xi: &GridFn) -> Result<f64> {
    check_grid(ls, xi)?;
    let gen = Generator::new(ls);
    Ok(gen.integrate(&gen.apply_pointwise(&xi.values)).abs())
}
