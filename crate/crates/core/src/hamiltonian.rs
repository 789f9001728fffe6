//! The effective Hamiltonian H̄₀(p), as the top eigenvalue of the tilted
//! generator plus the potential `(p²/2)σ²` and as a Feynman–Kac growth rate,
//! and its Legendre transform L̄₀.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Coord, Grid};
use crate::measures::{LogSpeed, WindowSpec};
use crate::model::{ModelParams, VolKind};
use crate::simulate::{self, FkEstimator, FkForm, McConfig, McEstimate};
use crate::tridiag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Eigen,
    MonteCarlo,
    ClosedForm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Eigen => "eigen",
            Method::MonteCarlo => "monte-carlo",
            Method::ClosedForm => "closed-form",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenEstimate {
    pub value: f64,
    /// Richardson estimate from the coarsened grid.
    pub err: f64,
    /// Share of the eigenfunction's mass on the outer 2% of nodes at both ends.
    pub edge_mass: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

/// Symmetric tridiagonal form of the discretized Rayleigh quotient
/// `(p²/2)∫σ²h²dπᵖ − (ν²/2)∫y^{2β}|h′|²dπᵖ` over `∫h²dπᵖ`, with `h = 0` beyond
/// the window. Returns `(diagonal, off-diagonal)`.
pub fn discretize(ls: &LogSpeed) -> (Vec<f64>, Vec<f64>) {
    let g = &ls.grid;
    let n = g.len;
    let h = g.step;
    let params = &ls.params;
    let half_p2 = 0.5 * ls.p * ls.p;
    // conductance over node mass, kept in logs: k_{i+½}/√(w_i w_{i+1}) etc.
    let mids: Vec<(f64, f64)> = (0..=n)
        .map(|k| {
            let u = g.start + (k as f64 - 0.5) * h;
            let y = g.coord.to_y(u);
            let c = params.half_diffusion_sq(y) / (g.coord.jacobian(u) * h * h);
            (c, ls.at(u))
        })
        .collect();
    let jac: Vec<f64> = (0..n).map(|i| g.jacobian(i)).collect();
    let diag = (0..n)
        .map(|i| {
            let li = ls.values[i];
            let (cl, ll) = mids[i];
            let (cr, lr) = mids[i + 1];
            let leak = (cl * (ll - li).exp() + cr * (lr - li).exp()) / jac[i];
            half_p2 * params.sigma.eval_sq(g.y(i)) - leak
        })
        .collect();
    let off = (0..n - 1)
        .map(|i| {
            let (c, lm) = mids[i + 1];
            let mean = 0.5 * (ls.values[i] + ls.values[i + 1]);
            c * (lm - mean).exp() / (jac[i] * jac[i + 1]).sqrt()
        })
        .collect();
    (diag, off)
}

/// Top eigenvalue and the unit eigenvector in the symmetrized basis.
pub fn eigen_on(ls: &LogSpeed) -> (f64, Vec<f64>) {
    let (d, e) = discretize(ls);
    let lambda = tridiag::largest_eigenvalue(&d, &e);
    let v = tridiag::top_eigenvector(&d, &e, lambda);
    (lambda, v)
}

/// Squared mass on the outer 2% of nodes at the low and high ends.
fn edge_mass(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    let k = (n / 50).max(1);
    let sq = |s: &[f64]| s.iter().map(|x| x * x).sum::<f64>();
    (sq(&v[..k]), sq(&v[n - k..]))
}

/// Top eigenvalue on a fixed grid, with no window adaptation.
pub fn hbar0_eigen_on_grid(params: &ModelParams, p: f64, grid: Grid) -> Result<f64> {
    if p == 0.0 {
        return Ok(0.0);
    }
    Ok(eigen_on(&LogSpeed::on_grid(params, p, grid)?).0)
}

/// H̄₀(p) by the eigen method. The window starts at the πᵖ truncation window
/// and is widened while the eigenfunction has mass at its edges.
pub fn hbar0_eigen(params: &ModelParams, p: f64, spec: &WindowSpec) -> Result<EigenEstimate> {
    if !p.is_finite() {
        return Err(Error::InvalidInput(format!("p must be finite, got {p}")));
    }
    let mut ls = LogSpeed::build(params, p, spec)?;
    if p == 0.0 {
        return Ok(EigenEstimate {
            value: 0.0,
            err: 0.0,
            edge_mass: 0.0,
            y_lo: ls.grid.y_lo(),
            y_hi: ls.grid.y_hi(),
        });
    }
    for _ in 0..8 {
        let (lambda, v) = eigen_on(&ls);
        let (lo_mass, hi_mass) = edge_mass(&v);
        let edge = lo_mass + hi_mass;
        if !(edge.is_finite() && lambda.is_finite()) {
            return Err(Error::Truncation(format!(
                "eigenproblem for p = {p} overflowed on [{}, {}]",
                ls.grid.y_lo(),
                ls.grid.y_hi()
            )));
        }
        if edge <= 1e-10 {
            let coarse = LogSpeed::on_grid(params, p, ls.grid.coarsen()?)?;
            let (lc, _) = eigen_on(&coarse);
            return Ok(EigenEstimate {
                value: lambda,
                err: (lambda - lc).abs() / 3.0,
                edge_mass: edge,
                y_lo: ls.grid.y_lo(),
                y_hi: ls.grid.y_hi(),
            });
        }
        // widen by half on the side(s) holding the mass: the width on a
        // linear grid, the end value of y on a log grid
        let g = ls.grid;
        let (a, b) = (g.u(0), g.u_end());
        let grow = |m: f64| if m >= 0.1 * edge { 1.0 } else { 0.0 };
        let (gl, gh) = (grow(lo_mass), grow(hi_mass));
        let extra = match g.coord {
            Coord::Linear => 0.5 * (b - a) / (gl + gh),
            Coord::Log => 1.5f64.ln(),
        };
        let wider = Grid::spanning(g.coord, a - gl * extra, b + gh * extra, g.len)?;
        ls = LogSpeed::on_grid(params, p, wider)?;
    }
    Err(Error::Truncation(format!(
        "eigenfunction for p = {p} keeps mass at the window edge"
    )))
}

/// The two Monte Carlo forms of H̄₀(p).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HbarMc {
    /// Tilted factor with weight (p²/2)σ².
    pub tilted: McEstimate,
    /// Base factor with the Girsanov weight.
    pub girsanov: McEstimate,
}

/// H̄₀(p) by simulation over a horizon `T` (in mean-reversion times), from
/// the mode of πᵖ with a burn-in of `T/10`.
pub fn hbar0_mc(
    params: &ModelParams,
    p: f64,
    horizon: f64,
    mc: &McConfig,
    estimator: FkEstimator,
) -> Result<HbarMc> {
    if !(horizon > 10.0) {
        return Err(Error::InvalidInput(format!(
            "horizon must exceed 10 mean-reversion times, got {horizon}"
        )));
    }
    if mc.paths < 10_000 {
        return Err(Error::InvalidInput(format!(
            "at least 10⁴ paths are required, got {}",
            mc.paths
        )));
    }
    let start = |q: f64| -> Result<f64> {
        Ok(LogSpeed::build(params, q, &WindowSpec::with_points(1025))?.mode())
    };
    let tilted = simulate::feynman_kac(params, p, horizon, start(p)?, FkForm::Tilted, estimator, mc)?;
    let girsanov =
        simulate::feynman_kac(params, p, horizon, start(0.0)?, FkForm::Girsanov, estimator, mc)?;
    Ok(HbarMc { tilted, girsanov })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianCurve {
    pub p_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    pub method: Method,
    /// Height of each point above the chord of its neighbours (positive means
    /// locally concave); zero at the ends.
    pub convexity_excess: Vec<f64>,
}

/// Options for [`build_curve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveOptions {
    pub window: WindowSpec,
    pub mc: McConfig,
    pub horizon: f64,
    pub estimator: FkEstimator,
}

impl Default for CurveOptions {
    fn default() -> Self {
        Self {
            window: WindowSpec::default(),
            mc: McConfig::default(),
            horizon: 50.0,
            estimator: FkEstimator::Particle,
        }
    }
}

pub fn build_curve(
    params: &ModelParams,
    p_grid: &[f64],
    method: Method,
    opts: &CurveOptions,
) -> Result<HamiltonianCurve> {
    check_p_grid(p_grid)?;
    let points: Vec<(f64, f64)> = match method {
        Method::ClosedForm => match params.sigma.kind {
            VolKind::Constant { s0 } => p_grid.iter().map(|p| (0.5 * s0 * s0 * p * p, 0.0)).collect(),
            _ => {
                return Err(Error::NotApplicable(
                    "a closed form is only available for constant σ".into(),
                ))
            }
        },
        Method::Eigen => p_grid
            .par_iter()
            .map(|&p| hbar0_eigen(params, p, &opts.window).map(|e| (e.value, e.err)))
            .collect::<Result<Vec<_>>>()?,
        Method::MonteCarlo => p_grid
            .iter()
            .map(|&p| {
                let start = LogSpeed::build(params, p, &WindowSpec::with_points(1025))?.mode();
                simulate::feynman_kac(
                    params,
                    p,
                    opts.horizon,
                    start,
                    FkForm::Tilted,
                    opts.estimator,
                    &opts.mc,
                )
                .map(|e| (e.value, e.se))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let mut values: Vec<f64> = points.iter().map(|v| v.0).collect();
    let errors: Vec<f64> = points.iter().map(|v| v.1).collect();
    for (v, p) in values.iter_mut().zip(p_grid) {
        if *p == 0.0 {
            *v = 0.0;
        }
    }
    let excess = convexity_excess(p_grid, &values);
    for i in 1..p_grid.len().saturating_sub(1) {
        let tol = 3.0 * (errors[i - 1] + errors[i] + errors[i + 1])
            + 1e-12 * values[i].abs().max(1.0);
        if excess[i] > tol {
            return Err(Error::Convexity {
                p: p_grid[i],
                second_difference: excess[i],
                tolerance: tol,
            });
        }
    }
    Ok(HamiltonianCurve {
        p_grid: p_grid.to_vec(),
        values,
        errors,
        method,
        convexity_excess: excess,
    })
}

fn check_p_grid(p_grid: &[f64]) -> Result<()> {
    if p_grid.len() < 3 {
        return Err(Error::InvalidInput("p grid needs at least 3 points".into()));
    }
    if p_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("p grid must be strictly increasing".into()));
    }
    if !p_grid.contains(&0.0) {
        return Err(Error::InvalidInput("p grid must include 0".into()));
    }
    let n = p_grid.len();
    let symmetric = (0..n).all(|i| (p_grid[i] + p_grid[n - 1 - i]).abs() <= 1e-12 * p_grid[i].abs().max(1.0));
    if !symmetric {
        return Err(Error::InvalidInput("p grid must be symmetric about 0".into()));
    }
    Ok(())
}

/// `f_i − chord_i` where the chord joins the two neighbours.
pub fn convexity_excess(x: &[f64], f: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    for i in 1..n.saturating_sub(1) {
        let lam = (x[i + 1] - x[i]) / (x[i + 1] - x[i - 1]);
        out[i] = f[i] - (lam * f[i - 1] + (1.0 - lam) * f[i + 1]);
    }
    out
}

impl HamiltonianCurve {
    pub fn max_convexity_violation(&self) -> f64 {
        self.convexity_excess.iter().fold(0.0, |m, v| m.max(*v))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["p", "value", "err"])?;
        for i in 0..self.p_grid.len() {
            w.write_record([
                self.p_grid[i].to_string(),
                self.values[i].to_string(),
                self.errors[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Lower convex hull of points sorted by `x`.
pub fn lower_hull(x: &[f64], f: &[f64]) -> Vec<(f64, f64)> {
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(x.len());
    for (&xi, &fi) in x.iter().zip(f) {
        while hull.len() >= 2 {
            let (x1, f1) = hull[hull.len() - 2];
            let (x2, f2) = hull[hull.len() - 1];
            // drop the middle point when it lies on or above the chord
            if (f2 - f1) * (xi - x1) >= (fi - f1) * (x2 - x1) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push((xi, fi));
    }
    hull
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flag {
    Interior,
    /// The slope lies beyond the range of the sampled curve; the value is the
    /// linear lower bound from the end point.
    Extrapolated,
}

impl Flag {
    pub fn name(self) -> &'static str {
        match self {
            Flag::Interior => "interior",
            Flag::Extrapolated => "extrapolated",
        }
    }
}

/// One evaluation of a conjugate `sup_x (qx − f(x))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conjugate {
    pub value: f64,
    pub argmax: f64,
    /// Neighbouring hull vertices around the maximizer.
    pub bracket: (f64, f64),
    pub flag: Flag,
}

/// Convex conjugate of a sampled function, through its lower hull.
///
/// Between hull vertices the function is read as the C¹ cubic Hermite
/// interpolant with the `slopes` stored per vertex, so that
/// `sup_x (qx − f(x))` at `q = slopes[k]` is attained exactly at vertex `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conjugator {
    pub hull: Vec<(f64, f64)>,
    pub slopes: Vec<f64>,
}

/// Derivative at `x[k]` of the polynomial through the given nodes.
fn node_derivative(x: &[f64], f: &[f64], k: usize) -> f64 {
    let xk = x[k];
    let mut d = 0.0;
    for j in 0..x.len() {
        if j == k {
            d += f[k] * (0..x.len()).filter(|&m| m != k).map(|m| 1.0 / (xk - x[m])).sum::<f64>();
        } else {
            let mut w = 1.0 / (x[j] - xk);
            for m in (0..x.len()).filter(|&m| m != j && m != k) {
                w *= (xk - x[m]) / (x[j] - x[m]);
            }
            d += f[j] * w;
        }
    }
    d
}

fn vertex_slopes(h: &[(f64, f64)]) -> Vec<f64> {
    let n = h.len();
    let secant = |i: usize| (h[i + 1].1 - h[i].1) / (h[i + 1].0 - h[i].0);
    if n == 2 {
        return vec![secant(0); 2];
    }
    let width = n.min(5);
    (0..n)
        .map(|k| {
            let start = k.saturating_sub(width / 2).min(n - width);
            let xs: Vec<f64> = h[start..start + width].iter().map(|v| v.0).collect();
            let fs: Vec<f64> = h[start..start + width].iter().map(|v| v.1).collect();
            let s = node_derivative(&xs, &fs, k - start);
            let lo = if k > 0 { secant(k - 1) } else { f64::NEG_INFINITY };
            let hi = if k + 1 < n { secant(k) } else { f64::INFINITY };
            s.clamp(lo, hi)
        })
        .collect()
}

impl Conjugator {
    pub fn new(x: &[f64], f: &[f64]) -> Result<Self> {
        if x.len() < 2 || x.len() != f.len() {
            return Err(Error::InvalidInput("need at least two samples".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("samples must be strictly increasing".into()));
        }
        let hull = lower_hull(x, f);
        let slopes = vertex_slopes(&hull);
        Ok(Self { hull, slopes })
    }

    pub fn slope_range(&self) -> (f64, f64) {
        let h = &self.hull;
        let n = h.len();
        let s = |i: usize| (h[i + 1].1 - h[i].1) / (h[i + 1].0 - h[i].0);
        (s(0), s(n - 2))
    }

    /// `sup_x (qx − f(x))` by a scan over the hull vertices, refined on the
    /// Hermite segment next to the maximizing vertex.
    pub fn eval(&self, q: f64, allow_extrapolation: bool) -> Result<Conjugate> {
        self.eval_with(q, allow_extrapolation, true)
    }

    /// As [`Conjugator::eval`]; without refinement the value is the plain
    /// maximum over the hull vertices.
    pub fn eval_with(&self, q: f64, allow_extrapolation: bool, refine: bool) -> Result<Conjugate> {
        let h = &self.hull;
        let n = h.len();
        let (lo, hi) = self.slope_range();
        let flag = if q < lo || q > hi {
            if !allow_extrapolation {
                return Err(Error::Range { q, lo, hi });
            }
            Flag::Extrapolated
        } else {
            Flag::Interior
        };
        let (k, best) = h
            .iter()
            .enumerate()
            .map(|(i, (x, f))| (i, q * x - f))
            .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        let mut value = best;
        let mut argmax = h[k].0;
        if refine && flag == Flag::Interior {
            let seg = if q >= self.slopes[k] && k + 1 < n {
                Some(k)
            } else {
                k.checked_sub(1)
            };
            if let Some((xs, v)) = seg.and_then(|s| self.hermite_step(s, q)) {
                if v > value {
                    value = v;
                    argmax = xs;
                }
            }
        }
        let bracket = (h[k.saturating_sub(1)].0, h[(k + 1).min(n - 1)].0);
        Ok(Conjugate {
            value,
            argmax,
            bracket,
            flag,
        })
    }

    /// Maximizes `qx − C(x)` on segment `[s, s+1]` of the Hermite interpolant.
    fn hermite_step(&self, s: usize, q: f64) -> Option<(f64, f64)> {
        let (x0, f0) = self.hull[s];
        let (x1, f1) = self.hull[s + 1];
        let (m0, m1) = (self.slopes[s], self.slopes[s + 1]);
        let w = x1 - x0;
        let eval = |x: f64| {
            let t = (x - x0) / w;
            let (t2, t3) = (t * t, t * t * t);
            (2.0 * t3 - 3.0 * t2 + 1.0) * f0
                + (t3 - 2.0 * t2 + t) * w * m0
                + (-2.0 * t3 + 3.0 * t2) * f1
                + (t3 - t2) * w * m1
        };
        let slope = |x: f64| {
            let t = (x - x0) / w;
            let t2 = t * t;
            ((6.0 * t2 - 6.0 * t) * (f0 - f1)) / w + (3.0 * t2 - 4.0 * t + 1.0) * m0 + (3.0 * t2 - 2.0 * t) * m1
        };
        if !(m0 <= q && q <= m1) {
            return None;
        }
        let (mut lo, mut hi) = (x0, x1);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if slope(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let xs = 0.5 * (lo + hi);
        Some((xs, q * xs - eval(xs)))
    }

    /// Slopes matched to the hull vertices: `(x_k, s_k)` such that the
    /// conjugate at `s_k` is attained at `x_k`. End vertices are omitted.
    pub fn matched_slopes(&self) -> Vec<(f64, f64)> {
        (1..self.hull.len().saturating_sub(1))
            .map(|k| (self.hull[k].0, self.slopes[k]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegendreCurve {
    pub q_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub argmax: Vec<f64>,
    pub brackets: Vec<(f64, f64)>,
    pub flags: Vec<Flag>,
    pub allow_extrapolation: bool,
    /// The conjugated curve's hull, for evaluation off the grid.
    pub conjugator: Conjugator,
}

/// `L̄₀(q) = sup_p (pq − H̄₀(p))` on `q_grid`.
pub fn legendre(
    curve: &HamiltonianCurve,
    q_grid: &[f64],
    allow_extrapolation: bool,
) -> Result<LegendreCurve> {
    let conj = Conjugator::new(&curve.p_grid, &curve.values)?;
    let evals = q_grid
        .iter()
        .map(|&q| conj.eval(q, allow_extrapolation))
        .collect::<Result<Vec<_>>>()?;
    Ok(LegendreCurve {
        q_grid: q_grid.to_vec(),
        values: evals.iter().map(|e| e.value).collect(),
        argmax: evals.iter().map(|e| e.argmax).collect(),
        brackets: evals.iter().map(|e| e.bracket).collect(),
        flags: evals.iter().map(|e| e.flag).collect(),
        allow_extrapolation,
        conjugator: conj,
    })
}

impl LegendreCurve {
    /// L̄₀ at any `q`, by the same conjugation used for the grid.
    pub fn eval(&self, q: f64) -> Result<Conjugate> {
        self.conjugator.eval(q, self.allow_extrapolation)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["q", "value", "flag"])?;
        for i in 0..self.q_grid.len() {
            w.write_record([
                self.q_grid[i].to_string(),
                self.values[i].to_string(),
                self.flags[i].name().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `max_j (p q_j − L(q_j))` over the sampled Legendre curve, at each `p`.
pub fn biconjugate(l: &LegendreCurve, p: &[f64]) -> Result<Vec<f64>> {
    let conj = Conjugator::new(&l.q_grid, &l.values)?;
    p.iter()
        .map(|&x| conj.eval_with(x, true, false).map(|c| c.value))
        .collect()
}

/// A q grid containing the matched slopes of every interior hull vertex.
pub fn matched_q_grid(curve: &HamiltonianCurve) -> Result<Vec<f64>> {
    let conj = Conjugator::new(&curve.p_grid, &curve.values)?;
    let mut q: Vec<f64> = conj.matched_slopes().into_iter().map(|(_, s)| s).collect();
    q.dedup();
    Ok(q)
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

    fn spec() -> WindowSpec {
        WindowSpec::with_points(1025)
    }

    #[test]
    fn constant_sigma_eigenvalue_is_the_potential() {
        let mut p = ou_sqrt();
        p.sigma = VolFnSpec::constant(0.3);
        p.rho = 0.4;
        let e = hbar0_eigen(&p, 2.0, &spec()).unwrap();
        assert!((e.value - 0.18).abs() < 1e-9, "{e:?}");
        assert_eq!(hbar0_eigen(&p, 0.0, &spec()).unwrap().value, 0.0);
    }

    #[test]
    fn variational_lower_bound_and_symmetry() {
        let p = ou_sqrt();
        let sbar = (2.0 / std::f64::consts::PI).sqrt();
        let a = hbar0_eigen(&p, 1.0, &spec()).unwrap().value;
        let b = hbar0_eigen(&p, -1.0, &spec()).unwrap().value;
        assert!(a >= 0.5 * sbar - 1e-8, "{a}");
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn enlarging_window_never_decreases_eigenvalue() {
        let p = ou_sqrt();
        let g = Grid::spanning(crate::grid::Coord::Linear, -3.0, 3.0, 601).unwrap();
        let small = hbar0_eigen_on_grid(&p, 1.5, g).unwrap();
        let big = hbar0_eigen_on_grid(&p, 1.5, g.extend(100)).unwrap();
        assert!(big >= small - 1e-12, "{small} > {big}");
    }

    #[test]
    fn hull_drops_concave_points() {
        let h = lower_hull(&[0.0, 1.0, 2.0, 3.0], &[0.0, 2.0, 1.0, 3.0]);
        assert_eq!(h, vec![(0.0, 0.0), (2.0, 1.0), (3.0, 3.0)]);
    }

    fn parabola(s0: f64) -> HamiltonianCurve {
        let p: Vec<f64> = (-40..=40).map(|i| i as f64 * 0.1).collect();
        let v = p.iter().map(|x| 0.5 * s0 * s0 * x * x).collect();
        HamiltonianCurve {
            convexity_excess: vec![0.0; p.len()],
            errors: vec![0.0; p.len()],
            p_grid: p,
            values: v,
            method: Method::ClosedForm,
        }
    }

    #[test]
    fn quadratic_conjugate() {
        let c = parabola(0.3);
        let l = legendre(&c, &[0.0, 0.3], false).unwrap();
        assert!(l.values[0].abs() < 1e-15);
        assert!((l.values[1] - 0.5).abs() < 1e-12, "{}", l.values[1]);
        assert!(matches!(legendre(&c, &[5.0], false), Err(Error::Range { .. })));
        let x = legendre(&c, &[5.0], true).unwrap();
        assert_eq!(x.flags[0], Flag::Extrapolated);
    }

    #[test]
    fn biconjugate_reproduces_hull() {
        let mut c = parabola(0.5);
        for (v, p) in c.values.iter_mut().zip(&c.p_grid) {
            *v += 0.1 * p.powi(4);
        }
        let q = matched_q_grid(&c).unwrap();
        let l = legendre(&c, &q, true).unwrap();
        let back = biconjugate(&l, &c.p_grid).unwrap();
        for i in 1..c.p_grid.len() - 1 {
            assert!((back[i] - c.values[i]).abs() < 1e-6, "{i}: {} vs {}", back[i], c.values[i]);
        }
    }

    #[test]
    fn convexity_violation_is_reported() {
        let e = convexity_excess(&[-1.0, 0.0, 1.0], &[1.0, 1.5, 1.0]);
        assert!((e[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn p_grid_must_be_symmetric() {
        let p = ou_sqrt();
        let o = CurveOptions::default();
        assert!(build_curve(&p, &[-1.0, 0.0, 2.0], Method::Eigen, &o).is_err());
        assert!(build_curve(&p, &[-1.0, 1.0], Method::Eigen, &o).is_err());
    }
}
