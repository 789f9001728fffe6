//! Uniform grids in a native coordinate `u`, with `y = u` (linear) or
//! `y = exp(u)` (logarithmic, for the half-line state space).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coord {
    Linear,
    Log,
}

impl Coord {
    #[inline]
    pub fn to_y(self, u: f64) -> f64 {
        match self {
            Coord::Linear => u,
            Coord::Log => u.exp(),
        }
    }

    #[inline]
    pub fn to_u(self, y: f64) -> f64 {
        match self {
            Coord::Linear => y,
            Coord::Log => y.ln(),
        }
    }

    /// dy/du at native coordinate `u`.
    #[inline]
    pub fn jacobian(self, u: f64) -> f64 {
        match self {
            Coord::Linear => 1.0,
            Coord::Log => u.exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub coord: Coord,
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl Grid {
    pub fn new(coord: Coord, start: f64, step: f64, len: usize) -> Result<Self> {
        if len < 3 || !(step > 0.0) || !start.is_finite() {
            return Err(Error::InvalidInput(format!(
                "grid needs ≥ 3 points and a positive step (len = {len}, step = {step})"
            )));
        }
        Ok(Self {
            coord,
            start,
            step,
            len,
        })
    }

    /// Grid spanning native coordinates `[u_lo, u_hi]` with at least `points`
    /// nodes, an odd node count, and (for linear grids containing the origin)
    /// a node exactly at `y = 0`.
    pub fn spanning(coord: Coord, u_lo: f64, u_hi: f64, points: usize) -> Result<Self> {
        if !(u_hi > u_lo) {
            return Err(Error::InvalidInput(format!(
                "empty window [{u_lo}, {u_hi}]"
            )));
        }
        let points = points.max(5);
        let step = (u_hi - u_lo) / (points - 1) as f64;
        let (start, mut len) = if coord == Coord::Linear && u_lo < 0.0 && u_hi > 0.0 {
            let start = (u_lo / step).floor() * step;
            let len = ((u_hi - start) / step - 1e-9).ceil() as usize + 1;
            (start, len)
        } else {
            (u_lo, points)
        };
        if len % 2 == 0 {
            len += 1;
        }
        Grid::new(coord, start, step, len)
    }

    #[inline]
    pub fn u(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    #[inline]
    pub fn y(&self, i: usize) -> f64 {
        self.coord.to_y(self.u(i))
    }

    #[inline]
    pub fn jacobian(&self, i: usize) -> f64 {
        self.coord.jacobian(self.u(i))
    }

    pub fn u_end(&self) -> f64 {
        self.u(self.len - 1)
    }

    pub fn y_lo(&self) -> f64 {
        self.y(0)
    }

    pub fn y_hi(&self) -> f64 {
        self.y(self.len - 1)
    }

    pub fn ys(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.y(i)).collect()
    }

    /// Trapezoid weights for ∫ f(y) dy expressed in the native coordinate.
    pub fn weights(&self) -> Vec<f64> {
        (0..self.len)
            .map(|i| {
                let end = if i == 0 || i == self.len - 1 { 0.5 } else { 1.0 };
                end * self.step * self.jacobian(i)
            })
            .collect()
    }

    /// Every other node; spans the same window when `len` is odd.
    pub fn coarsen(&self) -> Result<Self> {
        Grid::new(self.coord, self.start, 2.0 * self.step, self.len.div_ceil(2))
    }

    /// Twice the resolution over the same window.
    pub fn refine(&self) -> Self {
        Self {
            step: 0.5 * self.step,
            len: 2 * self.len - 1,
            ..*self
        }
    }

    /// Same spacing, `extra` nodes added on each side.
    pub fn extend(&self, extra: usize) -> Self {
        Self {
            start: self.start - extra as f64 * self.step,
            len: self.len + 2 * extra,
            ..*self
        }
    }

    /// Cell index `i` with `u(i) ≤ u < u(i+1)` (clamped) and the fractional offset.
    #[inline]
    pub fn locate(&self, y: f64) -> (usize, f64) {
        let u = self.coord.to_u(y);
        let s = (u - self.start) / self.step;
        if !(s > 0.0) {
            return (0, 0.0);
        }
        let i = (s.floor() as usize).min(self.len - 2);
        (i, (s - i as f64).min(1.0))
    }

    pub fn interpolate(&self, values: &[f64], y: f64) -> f64 {
        let (i, t) = self.locate(y);
        values[i] * (1.0 - t) + values[i + 1] * t
    }

    /// dv/dy at the nodes by central differences (one-sided at the ends).
    pub fn derivative(&self, values: &[f64]) -> Vec<f64> {
        let n = self.len;
        (0..n)
            .map(|i| {
                let du = if i == 0 {
                    (values[1] - values[0]) / self.step
                } else if i == n - 1 {
                    (values[n - 1] - values[n - 2]) / self.step
                } else {
                    (values[i + 1] - values[i - 1]) / (2.0 * self.step)
                };
                du / self.jacobian(i)
            })
            .collect()
    }

    /// d²v/dy² at interior nodes; zero at the two end nodes.
    pub fn second_derivative(&self, values: &[f64]) -> Vec<f64> {
        let n = self.len;
        let h = self.step;
        let mut out = vec![0.0; n];
        for i in 1..n - 1 {
            let vuu = (values[i + 1] - 2.0 * values[i] + values[i - 1]) / (h * h);
            out[i] = match self.coord {
                Coord::Linear => vuu,
                Coord::Log => {
                    let vu = (values[i + 1] - values[i - 1]) / (2.0 * h);
                    let y = self.y(i);
                    (vuu - vu) / (y * y)
                }
            };
        }
        out
    }
}

/// Values of a function sampled on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFn {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridFn {
    pub fn sample<F: Fn(f64) -> f64>(grid: &Grid, f: F) -> Self {
        Self {
            grid: *grid,
            values: (0..grid.len).map(|i| f(grid.y(i))).collect(),
        }
    }

    pub fn eval(&self, y: f64) -> f64 {
        self.grid.interpolate(&self.values, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spanning_linear_grid_has_node_at_origin_and_odd_length() {
        let g = Grid::spanning(Coord::Linear, -3.3, 4.1, 100).unwrap();
        assert_eq!(g.len % 2, 1);
        assert!(g.y_lo() <= -3.3 + 1e-12 && g.y_hi() >= 4.1 - 1e-9);
        let hits = (0..g.len).filter(|&i| g.y(i).abs() < 1e-12).count();
        assert_eq!(hits, 1);
    }

    #[test]
    fn coarsen_spans_same_window() {
        let g = Grid::spanning(Coord::Log, -2.0, 3.0, 101).unwrap();
        let c = g.coarsen().unwrap();
        assert!((c.u_end() - g.u_end()).abs() < 1e-12);
        assert_eq!(g.refine().coarsen().unwrap(), g);
    }

    #[test]
    fn log_grid_derivatives_are_second_order() {
        let g = Grid::spanning(Coord::Log, 0.0, 1.0, 2001).unwrap();
        let v: Vec<f64> = g.ys().iter().map(|y| y * y * y).collect();
        let d1 = g.derivative(&v);
        let d2 = g.second_derivative(&v);
        for i in 1..g.len - 1 {
            let y = g.y(i);
            assert!((d1[i] - 3.0 * y * y).abs() < 1e-4 * y * y);
            assert!((d2[i] - 6.0 * y).abs() < 1e-4 * y);
        }
    }

    #[test]
    fn weights_integrate_exponential_in_log_coordinates() {
        let g = Grid::spanning(Coord::Log, -30.0, 3.5, 4001).unwrap();
        let s: f64 = g
            .weights()
            .iter()
            .zip(g.ys())
            .map(|(w, y)| w * (-y).exp())
            .sum();
        assert!((s - 1.0).abs() < 1e-10);
    }
}
