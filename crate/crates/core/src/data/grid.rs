//! Uniform tensor-product grids and discretized function samples.

use crate::error::{Error, Result};
use std::sync::Arc;

/// Uniform 1D or 2D tensor-product grid.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Grid {
    pub shape: Vec<usize>,
    pub extent: Vec<(f64, f64)>,
    pub periodic: Vec<bool>,
}

impl Grid {
    pub fn new_1d(n: usize, lo: f64, hi: f64, periodic: bool) -> Arc<Grid> {
        Arc::new(Grid { shape: vec![n], extent: vec![(lo, hi)], periodic: vec![periodic] })
    }

    pub fn unit_1d(n: usize) -> Arc<Grid> {
        Self::new_1d(n, 0.0, 1.0, true)
    }

    pub fn new_2d(n1: usize, n2: usize, extent: [(f64, f64); 2], periodic: [bool; 2]) -> Arc<Grid> {
        Arc::new(Grid {
            shape: vec![n1, n2],
            extent: extent.to_vec(),
            periodic: periodic.to_vec(),
        })
    }

    pub fn dims(&self) -> usize {
        self.shape.len()
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        let (lo, hi) = self.extent[axis];
        (hi - lo) / self.shape[axis] as f64
    }

    /// Coordinate of index `i` along `axis`; periodic axes place points at
    /// lo + i·h (the point at hi is the wrap of lo).
    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        let (lo, _) = self.extent[axis];
        lo + self.spacing(axis) * i as f64
    }

    pub fn power_of_two_shape(&self) -> bool {
        self.shape.iter().all(|n| n.is_power_of_two())
    }

    /// All grid points as row-major flattened coordinates (len·dims floats).
    pub fn points(&self) -> Vec<f64> {
        let d = self.dims();
        let mut out = Vec::with_capacity(self.len() * d);
        match d {
            1 => {
                for i in 0..self.shape[0] {
                    out.push(self.coordinate(0, i));
                }
            }
            2 => {
                for i in 0..self.shape[0] {
                    let x0 = self.coordinate(0, i);
                    for j in 0..self.shape[1] {
                        out.push(x0);
                        out.push(self.coordinate(1, j));
                    }
                }
            }
            _ => unreachable!("grids are 1D or 2D"),
        }
        out
    }

    pub fn same_layout(&self, other: &Grid) -> bool {
        self.shape == other.shape && self.extent == other.extent && self.periodic == other.periodic
    }
}

/// A function discretized on a grid.
#[derive(Debug, Clone)]
pub struct FunctionSample {
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
}

impl FunctionSample {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "sample has {} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        Ok(FunctionSample { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        FunctionSample { grid, values: vec![0.0; n] }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
