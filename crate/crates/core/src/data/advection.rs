//! Wave advection: square-plus-parabolic initial profiles and the exact
//! translation solution of ∂ₜu + ν·∂ₓu = 0 on the periodic unit interval.

use crate::data::grid::{FunctionSample, Grid};
use crate::error::{Error, Result};
use std::sync::Arc;

/// Parameters of the initial profile: a height-h square wave of width ω
/// centered at c, superposed with a parabolic bump whose support matches the
/// square wave (sharpness a = 2h/ω).
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct AdvectionProfile {
    pub center: f64,
    pub width: f64,
    pub height: f64,
}

impl AdvectionProfile {
    pub fn sharpness(&self) -> f64 {
        2.0 * self.height / self.width
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (c, w, h) = (self.center, self.width, self.height);
        let square = if x >= c - w / 2.0 && x <= c + w / 2.0 { h } else { 0.0 };
        let arg = h * h - (self.sharpness() * (x - c)).powi(2);
        square + arg.max(0.0).sqrt()
    }

    /// Profile advected by νt, evaluated with periodic wrap.
    pub fn eval_shifted(&self, x: f64, shift: f64) -> f64 {
        self.eval((x - shift).rem_euclid(1.0))
    }
}

pub fn advection_initial(c: f64, omega: f64, h: f64, grid: &Arc<Grid>) -> FunctionSample {
    assert_eq!(grid.dims(), 1);
    let p = AdvectionProfile { center: c, width: omega, height: h };
    let n = grid.shape[0];
    let values = (0..n).map(|j| p.eval(grid.coordinate(0, j))).collect();
    FunctionSample { grid: Arc::clone(grid), values }
}

/// Exact translation by νt, realized as an index rotation. The shift must
/// land on grid points; that keeps the output values exactly the sampled
/// initial profile rather than an interpolation.
pub fn advect_exact(u0: &FunctionSample, nu: f64, t: f64) -> Result<FunctionSample> {
    let grid = &u0.grid;
    assert_eq!(grid.dims(), 1);
    assert!(grid.periodic[0]);
    let n = grid.shape[0];
    let (lo, hi) = grid.extent[0];
    let shift_cells = nu * t / (hi - lo) * n as f64;
    let rounded = shift_cells.round();
    if (shift_cells - rounded).abs() > 1e-9 {
        return Err(Error::NonIntegerShift { shift_cells });
    }
    let s = (rounded as i64).rem_euclid(n as i64) as usize;
    let mut values = vec![0.0; n];
    for (j, v) in values.iter_mut().enumerate() {
        *v = u0.values[(j + n - s) % n];
    }
    Ok(FunctionSample { grid: Arc::clone(grid), values })
}
