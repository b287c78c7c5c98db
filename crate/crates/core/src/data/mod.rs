//! Datasets: grids, function samples, PDE data generation, and binary IO.

pub mod advection;
pub mod burgers;
pub mod grf;
pub mod grid;
pub mod io;

pub use advection::{advect_exact, advection_initial, AdvectionProfile};
pub use burgers::{burgers_trajectory, solve_burgers};
pub use grf::sample_grf;
pub use grid::{FunctionSample, Grid};
pub use io::{read_dataset, write_dataset};

use crate::error::{Error, Result};
use crate::exec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

#[derive(Debug, Clone)]
pub struct DatasetMeta {
    pub problem: String,
    pub params: serde_json::Value,
    pub seed: u64,
}

/// N input/output function pairs sharing one grid. Values are stored flat,
/// sample-major.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub grid: Arc<Grid>,
    pub n: usize,
    pub inputs: Vec<f64>,
    pub outputs: Vec<f64>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn input(&self, i: usize) -> &[f64] {
        let d = self.grid.len();
        &self.inputs[i * d..(i + 1) * d]
    }

    pub fn output(&self, i: usize) -> &[f64] {
        let d = self.grid.len();
        &self.outputs[i * d..(i + 1) * d]
    }
}

/// Settings for the viscous Burgers dataset: GRF initial conditions pushed
/// through the pseudo-spectral solver.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BurgersGenConfig {
    pub grid_size: usize,
    pub viscosity: f64,
    pub t_final: f64,
    pub n_steps: usize,
    pub grf_tau: f64,
    pub grf_alpha: f64,
    pub grf_scale: f64,
}

impl Default for BurgersGenConfig {
    fn default() -> Self {
        BurgersGenConfig {
            grid_size: 256,
            viscosity: 0.1,
            t_final: 1.0,
            n_steps: 2000,
            grf_tau: 5.0,
            grf_alpha: 2.0,
            grf_scale: 625.0,
        }
    }
}

pub fn generate_burgers(n: usize, cfg: &BurgersGenConfig, seed: u64) -> Result<Dataset> {
    let grid = Grid::unit_1d(cfg.grid_size);
    let d = grid.len();
    let pairs = exec::map_indexed(n, |i| {
        let u0 = sample_grf(&grid, cfg.grf_tau, cfg.grf_alpha, cfg.grf_scale, seed ^ i as u64);
        let ut = solve_burgers(&u0, cfg.viscosity, cfg.t_final, cfg.n_steps)?;
        Ok::<_, Error>((u0.values, ut.values))
    });
    let mut inputs = Vec::with_capacity(n * d);
    let mut outputs = Vec::with_capacity(n * d);
    for p in pairs {
        let (i, o) = p?;
        inputs.extend(i);
        outputs.extend(o);
    }
    Ok(Dataset {
        grid,
        n,
        inputs,
        outputs,
        meta: DatasetMeta {
            problem: "burgers".into(),
            params: serde_json::to_value(cfg)?,
            seed,
        },
    })
}

/// Settings for the advection dataset: random square-plus-bump profiles
/// translated by ν·t.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AdvectionGenConfig {
    pub grid_size: usize,
    pub speed: f64,
    pub t_final: f64,
    pub center_range: (f64, f64),
    pub width_range: (f64, f64),
    pub height_range: (f64, f64),
}

impl Default for AdvectionGenConfig {
    fn default() -> Self {
        AdvectionGenConfig {
            grid_size: 128,
            speed: 1.0,
            t_final: 0.5,
            center_range: (0.3, 0.7),
            width_range: (0.3, 0.6),
            height_range: (1.0, 2.0),
        }
    }
}

pub fn generate_advection(n: usize, cfg: &AdvectionGenConfig, seed: u64) -> Result<Dataset> {
    let grid = Grid::unit_1d(cfg.grid_size);
    let d = grid.len();
    let shift = cfg.speed * cfg.t_final;
    let pairs = exec::map_indexed(n, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i as u64);
        let c = rng.gen_range(cfg.center_range.0..=cfg.center_range.1);
        let w = rng.gen_range(cfg.width_range.0..=cfg.width_range.1);
        let h = rng.gen_range(cfg.height_range.0..=cfg.height_range.1);
        let u0 = advection_initial(c, w, h, &grid);
        let ut = advect_exact(&u0, cfg.speed, cfg.t_final)?;
        Ok::<_, Error>((u0.values, ut.values))
    });
    let mut inputs = Vec::with_capacity(n * d);
    let mut outputs = Vec::with_capacity(n * d);
    for p in pairs {
        let (i, o) = p?;
        inputs.extend(i);
        outputs.extend(o);
    }
    let mut params = serde_json::to_value(cfg)?;
    params["shift"] = serde_json::json!(shift);
    Ok(Dataset {
        grid,
        n,
        inputs,
        outputs,
        meta: DatasetMeta { problem: "advection".into(), params, seed },
    })
}
