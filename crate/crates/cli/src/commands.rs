//! Subcommand implementations.

use logos_gpo::checkpoint::{load_checkpoint, save_checkpoint};
use logos_gpo::data::{
    generate_advection, generate_burgers, read_dataset, write_dataset, AdvectionGenConfig,
    BurgersGenConfig, Dataset, DatasetMeta,
};
use logos_gpo::memtrack;
use logos_gpo::metrics::{coverage_95, mean_std, relative_l2};
use logos_gpo::svgp::GpModel;
use logos_gpo::train::{train_with_callback, TrainConfig};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const METRICS_CSV_HEADER: &str = "dataset,n_train,grid_d,m_inducing,k_neighbors,rel_l2_mean,rel_l2_std,coverage_95,epoch_wall_seconds_mean,peak_bytes,seed,status";

fn fail(code: u8, msg: &str) -> u8 {
    eprintln!("error: {msg}");
    code
}

#[allow(clippy::too_many_arguments)]
pub fn generate(
    problem: &str,
    n: usize,
    grid: usize,
    seed: u64,
    nu: Option<f64>,
    t_final: Option<f64>,
    steps: Option<usize>,
    out: &Path,
) -> u8 {
    if n == 0 || !grid.is_power_of_two() {
        return fail(2, "need n >= 1 and a power-of-two grid");
    }
    let result = match problem {
        "burgers" => {
            let cfg = BurgersGenConfig {
                grid_size: grid,
                viscosity: nu.unwrap_or(0.1),
                t_final: t_final.unwrap_or(1.0),
                n_steps: steps.unwrap_or(2000),
                ..Default::default()
            };
            generate_burgers(n, &cfg, seed)
        }
        "advection" => {
            let cfg = AdvectionGenConfig {
                grid_size: grid,
                speed: nu.unwrap_or(1.0),
                t_final: t_final.unwrap_or(0.5),
                ..Default::default()
            };
            generate_advection(n, &cfg, seed)
        }
        other => return fail(2, &format!("unknown problem '{other}' (try burgers | advection)")),
    };
    let ds = match result {
        Ok(d) => d,
        Err(e) => return fail(2, &e.to_string()),
    };
    if let Err(e) = write_dataset(&ds, out) {
        return fail(2, &e.to_string());
    }
    println!(
        "wrote {} samples of '{}' on a {}-point grid (seed {}) to {}",
        ds.n,
        ds.meta.problem,
        ds.grid.len(),
        seed,
        out.display()
    );
    0
}

pub struct TrainArgs {
    pub data: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub history: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub neighbors: Option<usize>,
    pub inducing: Option<usize>,
    pub width: Option<usize>,
    pub levels: Option<usize>,
    pub modes: Option<usize>,
    pub zero_timings: bool,
}

/// Precedence: CLI flags > config file > built-in per-problem defaults.
fn resolve_config(args: &TrainArgs, problem: &str) -> Result<TrainConfig, String> {
    let defaults = TrainConfig::for_problem(problem);
    let mut merged = serde_json::to_value(&defaults).map_err(|e| e.to_string())?;
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        let overlay: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        let obj = overlay.as_object().ok_or("config file must be a JSON object")?;
        let base = merged.as_object_mut().expect("config serializes to an object");
        for (k, v) in obj {
            if !base.contains_key(k) {
                return Err(format!("unknown config field '{k}'"));
            }
            base.insert(k.clone(), v.clone());
        }
    }
    let mut cfg: TrainConfig = serde_json::from_value(merged).map_err(|e| e.to_string())?;
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.neighbors {
        cfg.neighbors = v;
    }
    if let Some(v) = args.inducing {
        cfg.n_inducing = v;
    }
    if let Some(v) = args.width {
        cfg.width = v;
    }
    if let Some(v) = args.levels {
        cfg.levels = v;
    }
    if let Some(v) = args.modes {
        cfg.modes = v;
    }
    if args.zero_timings {
        cfg.zero_timings = true;
    }
    Ok(cfg)
}

pub fn train(args: TrainArgs) -> u8 {
    let data = match read_dataset(&args.data) {
        Ok(d) => d,
        Err(e) => return fail(2, &e.to_string()),
    };
    let mut cfg = match resolve_config(&args, &data.meta.problem) {
        Ok(c) => c,
        Err(e) => return fail(2, &e),
    };
    if cfg.batch_size > data.n {
        cfg.batch_size = data.n;
    }
    let history_path = args
        .history
        .clone()
        .unwrap_or_else(|| args.out.with_extension("history.csv"));
    let out_path = args.out.clone();
    let seed = cfg.seed;
    let mut cadence_cb = move |_epoch: usize, model: &GpModel, params: &[f64]| {
        save_checkpoint(model, params, seed, &out_path)
    };
    let outcome = match train_with_callback(&data, &cfg, &mut cadence_cb) {
        Ok(o) => o,
        Err(e) => return fail(3, &format!("training failed: {e}")),
    };
    if let Err(e) = save_checkpoint(&outcome.model, &outcome.params, cfg.seed, &args.out) {
        return fail(3, &e.to_string());
    }
    if let Err(e) = std::fs::write(&history_path, outcome.history.to_csv()) {
        return fail(3, &e.to_string());
    }
    if let Some(epoch) = outcome.aborted_at {
        eprintln!(
            "training aborted at epoch {epoch}; last good checkpoint written to {}",
            args.out.display()
        );
        return 3;
    }
    let last = outcome.history.records.last();
    println!(
        "trained {} epochs (final elbo {:.4}); checkpoint {}, history {}",
        outcome.history.records.len(),
        last.map(|r| r.elbo).unwrap_or(f64::NAN),
        args.out.display(),
        history_path.display()
    );
    0
}

fn load_for_inference(checkpoint: &Path, data: &Path) -> Result<(GpModel, Vec<f64>, u64, Dataset), (u8, String)> {
    let (model, params, seed) =
        load_checkpoint(checkpoint).map_err(|e| (2u8, e.to_string()))?;
    let ds = read_dataset(data).map_err(|e| (2u8, e.to_string()))?;
    if !model.grid.same_layout(&ds.grid) {
        return Err((
            4,
            format!(
                "checkpoint grid {:?} does not match dataset grid {:?}",
                model.grid.shape, ds.grid.shape
            ),
        ));
    }
    Ok((model, params, seed, ds))
}

pub fn predict(
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    variance_out: Option<&Path>,
    include_noise: bool,
) -> u8 {
    let (model, params, seed, ds) = match load_for_inference(checkpoint, data) {
        Ok(v) => v,
        Err((code, msg)) => return fail(code, &msg),
    };
    let inputs: Vec<&[f64]> = (0..ds.n).map(|i| ds.input(i)).collect();
    let preds = match model.predict(&params, &inputs, include_noise) {
        Ok(p) => p,
        Err(e) => return fail(4, &e.to_string()),
    };
    let d = ds.grid.len();
    let mut means = Vec::with_capacity(ds.n * d);
    let mut vars = Vec::with_capacity(ds.n * d);
    for p in &preds {
        means.extend_from_slice(&p.mean);
        vars.extend_from_slice(&p.variance);
    }
    let mean_ds = Dataset {
        grid: ds.grid.clone(),
        n: ds.n,
        inputs: ds.inputs.clone(),
        outputs: means,
        meta: DatasetMeta {
            problem: format!("predictions:{}", ds.meta.problem),
            params: serde_json::json!({"include_noise": include_noise}),
            seed,
        },
    };
    if let Err(e) = write_dataset(&mean_ds, out) {
        return fail(2, &e.to_string());
    }
    if let Some(vpath) = variance_out {
        let var_ds = Dataset {
            grid: ds.grid.clone(),
            n: ds.n,
            inputs: ds.inputs.clone(),
            outputs: vars,
            meta: DatasetMeta {
                problem: format!("variances:{}", ds.meta.problem),
                params: serde_json::json!({"include_noise": include_noise}),
                seed,
            },
        };
        if let Err(e) = write_dataset(&var_ds, vpath) {
            return fail(2, &e.to_string());
        }
    }
    println!("wrote predictions for {} samples to {}", ds.n, out.display());
    0
}

pub struct EvalSummary {
    pub rel_l2_mean: f64,
    pub rel_l2_std: f64,
    pub coverage: f64,
}

pub fn evaluate_model(model: &GpModel, params: &[f64], ds: &Dataset) -> Result<EvalSummary, logos_gpo::Error> {
    let inputs: Vec<&[f64]> = (0..ds.n).map(|i| ds.input(i)).collect();
    let preds = model.predict(params, &inputs, true)?;
    let mut rels = Vec::with_capacity(ds.n);
    let mut covs = Vec::with_capacity(ds.n);
    for (i, p) in preds.iter().enumerate() {
        let truth = ds.output(i);
        rels.push(relative_l2(&p.mean, truth));
        covs.push(coverage_95(&p.mean, &p.variance, truth));
    }
    let (rel_mean, rel_std) = mean_std(&rels);
    let (cov_mean, _) = mean_std(&covs);
    Ok(EvalSummary { rel_l2_mean: rel_mean, rel_l2_std: rel_std, coverage: cov_mean })
}

pub fn evaluate(checkpoint: &Path, data: &Path, out: &Path) -> u8 {
    let (model, params, seed, ds) = match load_for_inference(checkpoint, data) {
        Ok(v) => v,
        Err((code, msg)) => return fail(code, &msg),
    };
    let summary = match evaluate_model(&model, &params, &ds) {
        Ok(s) => s,
        Err(e) => return fail(4, &e.to_string()),
    };
    let mut csv = String::from(METRICS_CSV_HEADER);
    csv.push('\n');
    csv.push_str(&format!(
        "{},{},{},{},{},{},{},{},{},{},{},ok\n",
        ds.meta.problem,
        ds.n,
        ds.grid.len(),
        model.config.n_inducing,
        model.config.neighbor_count,
        summary.rel_l2_mean,
        summary.rel_l2_std,
        summary.coverage,
        0.0,
        0,
        seed,
    ));
    if let Err(e) = std::fs::write(out, &csv) {
        return fail(2, &e.to_string());
    }
    println!(
        "rel_l2 {:.4} ± {:.4}, coverage_95 {:.3} over {} samples -> {}",
        summary.rel_l2_mean,
        summary.rel_l2_std,
        summary.coverage,
        ds.n,
        out.display()
    );
    0
}

#[allow(clippy::too_many_arguments)]
pub fn bench(
    problem: &str,
    grids: &[usize],
    n_train_list: &[usize],
    n_test: usize,
    epochs: usize,
    seed: u64,
    config: Option<&Path>,
    out: &Path,
) -> u8 {
    if grids.is_empty() || n_train_list.is_empty() {
        return fail(2, "need at least one grid size and one training size");
    }
    if problem != "burgers" && problem != "advection" {
        return fail(2, &format!("unknown problem '{problem}'"));
    }
    let mut csv = String::from(METRICS_CSV_HEADER);
    csv.push('\n');
    for &grid in grids {
        for &n_train in n_train_list {
            let row = bench_cell(problem, grid, n_train, n_test, epochs, seed, config);
            match row {
                Ok(r) => csv.push_str(&r),
                Err(msg) => {
                    // per-cell failures become rows; the run continues
                    csv.push_str(&format!(
                        "{problem},{n_train},{grid},0,0,,,,,,{seed},error: {msg}\n"
                    ));
                }
            }
            if let Err(e) = std::fs::write(out, &csv) {
                return fail(2, &e.to_string());
            }
        }
    }
    println!("scaling study written to {}", out.display());
    0
}

fn bench_cell(
    problem: &str,
    grid: usize,
    n_train: usize,
    n_test: usize,
    epochs: usize,
    seed: u64,
    config: Option<&Path>,
) -> Result<String, String> {
    let gen = |n: usize, s: u64| -> Result<Dataset, String> {
        match problem {
            "burgers" => {
                let cfg = BurgersGenConfig { grid_size: grid, ..Default::default() };
                generate_burgers(n, &cfg, s).map_err(|e| e.to_string())
            }
            _ => {
                let cfg = AdvectionGenConfig { grid_size: grid, ..Default::default() };
                generate_advection(n, &cfg, s).map_err(|e| e.to_string())
            }
        }
    };
    let train_ds = gen(n_train, seed)?;
    let test_ds = gen(n_test, seed ^ 0x5eed_7e57)?;
    let mut cfg = TrainConfig::for_problem(problem);
    if let Some(path) = config {
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        let overlay: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        let mut merged = serde_json::to_value(&cfg).map_err(|e| e.to_string())?;
        if let (Some(base), Some(obj)) = (merged.as_object_mut(), overlay.as_object()) {
            for (k, v) in obj {
                base.insert(k.clone(), v.clone());
            }
        }
        cfg = serde_json::from_value(merged).map_err(|e| e.to_string())?;
    }
    cfg.epochs = epochs;
    cfg.seed = seed;
    if cfg.batch_size > n_train {
        cfg.batch_size = n_train;
    }
    memtrack::reset_peak();
    let started = Instant::now();
    let outcome =
        train_with_callback(&train_ds, &cfg, &mut |_, _, _| Ok(())).map_err(|e| e.to_string())?;
    let wall = started.elapsed().as_secs_f64();
    if outcome.aborted_at.is_some() {
        return Err("training aborted on non-finite objective".into());
    }
    let peak = memtrack::peak_bytes_best_effort();
    let epoch_wall = wall / epochs.max(1) as f64;
    let summary =
        evaluate_model(&outcome.model, &outcome.params, &test_ds).map_err(|e| e.to_string())?;
    Ok(format!(
        "{problem},{n_train},{grid},{},{},{},{},{},{},{},{},ok\n",
        cfg.n_inducing,
        cfg.neighbors,
        summary.rel_l2_mean,
        summary.rel_l2_std,
        summary.coverage,
        epoch_wall,
        peak,
        seed,
    ))
}
