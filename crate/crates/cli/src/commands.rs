//! The three subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fieldnet::mrce::default_lambda_index;
use fieldnet::solver::{flatten_coefficients, KktReport, NonzeroCounts};
use fieldnet::summary::{
    compute_degree_maps, compute_separation_profile, compute_weight_density, memory_map, stimulus_timecourse,
};
use fieldnet::{
    dta, fit_mrce, fit_path, simulate_euler, var_parameter_count, BasisDims, BasisSet, DriftCoefficients, Grid,
    ImplicitDesign, LambdaFit, PathFit, ResponseConvention, SimConfig, Stimulus, TensorD,
};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::LoadedConfig;
use crate::manifest::{file_sha256, write_json, Manifest};
use crate::CliError;

fn out_dir(cfg: &LoadedConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf).or_else(|| cfg.config.io.out.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::other(format!("cannot create {}: {e}", dir.display())))
}

fn load_input(path: &Path, what: &str) -> Result<TensorD, CliError> {
    if !path.is_file() {
        return Err(CliError::usage(format!("{what} {} does not exist", path.display())));
    }
    dta::load(path).map_err(|e| CliError::usage(format!("{what} {}: {e}", path.display())))
}

fn save(dir: &Path, relative: &str, t: &TensorD, manifest: &mut Manifest) -> Result<(), CliError> {
    let path = dir.join(relative);
    dta::save(&path, t).map_err(|e| CliError::other(format!("cannot write {}: {e}", path.display())))?;
    manifest.record(dir, relative)
}

fn basis(cfg: &LoadedConfig) -> Result<BasisSet, CliError> {
    cfg.config.basis_set().map_err(CliError::usage)
}

pub fn simulate(cfg: &LoadedConfig, out: Option<&Path>) -> Result<(), CliError> {
    let c = &cfg.config;
    let sim = c.simulate.as_ref().ok_or_else(|| CliError::usage("simulate needs a [simulate] section"))?;
    let basis = basis(cfg)?;
    let truth = c.truth(&basis).map_err(CliError::usage)?.expect("simulate section present");
    let mut inputs = BTreeMap::new();
    let history = match &sim.history {
        Some(path) => {
            let h = load_input(path, "history")?;
            let g = &basis.grid;
            let want = [g.nx, g.ny, g.lags + 1];
            if h.shape() != want {
                return Err(CliError::usage(format!("history is {:?}, the grid needs {want:?}", h.shape())));
            }
            inputs.insert("history".to_string(), file_sha256(path)?);
            Some(h)
        }
        None => None,
    };
    let noise = sim.noise.noise_model(&basis.grid)?;
    let started = Instant::now();
    let data = simulate_euler(&SimConfig { history, seed: c.seed }, &basis, &truth, &noise)?;
    eprintln!("simulated {} frames in {:.2?}", data.shape()[2], started.elapsed());

    let dir = out_dir(cfg, out);
    create_dir(&dir)?;
    let mut manifest = Manifest::new("simulate", c.seed, &cfg.sha256, inputs);
    save(&dir, "data.dta", &data, &mut manifest)?;
    save(&dir, "truth_stimulus.dta", &truth.stimulus.assemble(), &mut manifest)?;
    save(&dir, "truth_network.dta", &truth.network, &mut manifest)?;
    save(&dir, "truth_memory.dta", &truth.memory, &mut manifest)?;
    manifest.write(&dir)?;
    println!("wrote {}", dir.display());
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct FitEntry {
    pub index: usize,
    pub lambda: f64,
    pub file: String,
    pub objective: f64,
    pub objective_trace: Vec<f64>,
    pub sweeps: usize,
    pub inner_iterations: usize,
    pub converged: bool,
    pub stimulus_collapsed: bool,
    pub kkt: KktReport,
    pub nonzeros: NonzeroCounts,
}

impl FitEntry {
    fn new(index: usize, fit: &LambdaFit) -> Self {
        Self {
            index,
            lambda: fit.lambda,
            file: coefficient_file(index),
            objective: fit.objective(),
            objective_trace: fit.objective_trace.clone(),
            sweeps: fit.sweeps,
            inner_iterations: fit.inner_iterations,
            converged: fit.converged,
            stimulus_collapsed: fit.stimulus_collapsed,
            kkt: fit.kkt,
            nonzeros: fit.nonzeros,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MrceReport {
    pub lambda_index: usize,
    pub nu: f64,
    /// λ_max of the unweighted first pass.
    pub first_lambda_max: f64,
    pub precision_edges: usize,
    pub glasso_converged: bool,
    pub duality_gap: f64,
    pub glasso_sweeps: usize,
    pub ridge: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SupportScore {
    pub index: usize,
    pub lambda: f64,
    pub recall: f64,
    pub fdr: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SupportReport {
    pub true_nonzeros: usize,
    pub path: Vec<SupportScore>,
    /// Highest F1 along the path (first on ties).
    pub best: SupportScore,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParameterCounts {
    /// p = p_s + p_w + p_h of the basis expansion.
    pub model: usize,
    pub stimulus: usize,
    pub network: usize,
    pub memory: usize,
    /// L D² of an unrestricted VAR(L) on the same grid.
    pub var: u64,
}

pub fn parameter_counts(dims: &BasisDims, grid: &Grid) -> ParameterCounts {
    ParameterCounts {
        model: dims.n_parameters(),
        stimulus: dims.n_stimulus(),
        network: dims.n_network(),
        memory: dims.n_memory(),
        var: var_parameter_count(grid.lags, grid.n_pixels()),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    /// `ok` or `diverged`.
    pub status: String,
    pub error: Option<String>,
    pub response: ResponseConvention,
    pub parameter_counts: ParameterCounts,
    pub lambda_max: Option<f64>,
    pub fits: Vec<FitEntry>,
    pub mrce: Option<MrceReport>,
    pub support_recovery: Option<SupportReport>,
}

pub fn coefficient_file(index: usize) -> String {
    format!("coefficients/lambda_{index:02}.dta")
}

/// `(recall, false discovery rate, F1)` of the non-zero pattern of
/// `estimate` against `truth`.
pub fn support_scores(estimate: &TensorD, truth: &TensorD) -> (f64, f64, f64) {
    let (mut tp, mut fp, mut pos) = (0usize, 0usize, 0usize);
    for (e, t) in estimate.data().iter().zip(truth.data()) {
        pos += usize::from(*t != 0.0);
        match (*e != 0.0, *t != 0.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            _ => {}
        }
    }
    let recall = tp as f64 / pos.max(1) as f64;
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let f1 = if recall + precision == 0.0 { 0.0 } else { 2.0 * recall * precision / (recall + precision) };
    let fdr = if tp + fp == 0 { 0.0 } else { 1.0 - precision };
    (recall, fdr, f1)
}

fn support_report(path: &PathFit, truth: &TensorD) -> SupportReport {
    let scores: Vec<SupportScore> = path
        .fits
        .iter()
        .enumerate()
        .map(|(index, f)| {
            let (recall, fdr, f1) = support_scores(&f.coefficients.network, truth);
            SupportScore { index, lambda: f.lambda, recall, fdr, f1 }
        })
        .collect();
    let best = *scores.iter().reduce(|a, b| if b.f1 > a.f1 { b } else { a }).expect("non-empty path");
    SupportReport { true_nonzeros: truth.count_nonzero(), path: scores, best }
}

fn lambda_index(cfg: &LoadedConfig, flag: Option<usize>) -> Result<usize, CliError> {
    let n = cfg.config.n_fits();
    let idx = flag.or(cfg.config.solver.lambda_index).unwrap_or_else(|| default_lambda_index(n));
    if idx >= n {
        return Err(CliError::usage(format!("λ index {idx} outside a path of {n}")));
    }
    Ok(idx)
}

pub fn fit(cfg: &LoadedConfig, data: Option<&Path>, out: Option<&Path>, index_flag: Option<usize>) -> Result<(), CliError> {
    let c = &cfg.config;
    let basis = basis(cfg)?;
    let dir = out_dir(cfg, out);
    let data_path = data
        .map(Path::to_path_buf)
        .or_else(|| c.io.data.clone())
        .unwrap_or_else(|| dir.join("data.dta"));
    let frames = load_input(&data_path, "data")?;
    let g = &basis.grid;
    let want = [g.nx, g.ny, g.n_frames()];
    if frames.shape() != want {
        return Err(CliError::usage(format!("data is {:?}, the grid needs {want:?}", frames.shape())));
    }
    if frames.data().iter().any(|v| !v.is_finite()) {
        return Err(CliError::numerical(format!("data {} contains non-finite values", data_path.display())));
    }
    let lambda_index = lambda_index(cfg, index_flag)?;
    let penalty = c.penalty_weights(&basis).map_err(CliError::usage)?;
    let truth = c.truth(&basis).map_err(CliError::usage)?;
    let design = ImplicitDesign::new(&frames, &basis, c.solver.response)?;
    let mut inputs = BTreeMap::new();
    inputs.insert("data".to_string(), file_sha256(&data_path)?);

    create_dir(&dir.join("coefficients"))?;
    let mut manifest = Manifest::new("fit", c.seed, &cfg.sha256, inputs);
    let mut report = FitReport {
        status: "ok".into(),
        error: None,
        response: c.solver.response,
        parameter_counts: parameter_counts(&basis.dims(), g),
        lambda_max: None,
        fits: Vec::new(),
        mrce: None,
        support_recovery: None,
    };

    let started = Instant::now();
    let lambdas = c.solver.lambdas.as_deref();
    let result = if c.solver.mrce {
        fit_mrce(&design, &penalty, c.penalty.nu, lambdas, Some(lambda_index), &c.solver.path, &c.glasso).map(|m| {
            let mrce = MrceReport {
                lambda_index: m.lambda_index,
                nu: c.penalty.nu,
                first_lambda_max: m.first.lambda_max,
                precision_edges: m.precision.edges(),
                glasso_converged: m.precision.converged,
                duality_gap: m.precision.duality_gap,
                glasso_sweeps: m.precision.sweeps,
                ridge: m.precision.ridge,
            };
            (m.weighted, m.precision.omega, Some(mrce))
        })
    } else {
        fit_path(&design, &penalty, None, lambdas, &c.solver.path)
            .map(|p| (p, DMatrix::identity(g.n_pixels(), g.n_pixels()), None))
    };
    let diverged = |report: &mut FitReport, manifest: &mut Manifest, message: String| -> Result<(), CliError> {
        report.status = "diverged".into();
        report.error = Some(message.clone());
        write_json(&dir.join("fit_report.json"), report)?;
        manifest.record(&dir, "fit_report.json")?;
        manifest.write(&dir)?;
        Err(CliError::numerical(message))
    };
    let (path, omega, mrce) = match result {
        Ok(r) => r,
        Err(e) if e.is_numerical() => return diverged(&mut report, &mut manifest, e.to_string()),
        Err(e) => return Err(e.into()),
    };
    eprintln!("fitted {} λ values in {:.2?}", path.fits.len(), started.elapsed());

    report.lambda_max = Some(path.lambda_max);
    report.fits = path.fits.iter().enumerate().map(|(i, f)| FitEntry::new(i, f)).collect();
    report.mrce = mrce;
    if let Some(bad) = path.fits.iter().find(|f| !f.objective().is_finite()) {
        let message = format!("non-finite objective at λ = {}", bad.lambda);
        return diverged(&mut report, &mut manifest, message);
    }
    if let Some(t) = &truth {
        report.support_recovery = Some(support_report(&path, &t.network));
    }

    for (i, f) in path.fits.iter().enumerate() {
        let flat = flatten_coefficients(&f.coefficients);
        let n = flat.len();
        save(&dir, &coefficient_file(i), &TensorD::new(vec![n], flat)?, &mut manifest)?;
    }
    save(&dir, "omega.dta", &TensorD::from_matrix(&omega), &mut manifest)?;
    write_json(&dir.join("fit_report.json"), &report)?;
    manifest.record(&dir, "fit_report.json")?;
    manifest.write(&dir)?;

    println!("λ_max = {:.6e}", path.lambda_max);
    println!("{:>5} {:>14} {:>8} {:>8} {:>8} {:>10}", "index", "lambda", "network", "memory", "stimulus", "converged");
    for e in &report.fits {
        let stim = e.nonzeros.stimulus_temporal * e.nonzeros.stimulus_spatial;
        println!(
            "{:>5} {:>14.6e} {:>8} {:>8} {:>8} {:>10}",
            e.index, e.lambda, e.nonzeros.network, e.nonzeros.memory, stim, e.converged
        );
    }
    if let Some(s) = &report.support_recovery {
        let b = s.best;
        println!(
            "support recovery: best λ index {} (λ = {:.6e}): recall {:.3}, FDR {:.3}, F1 {:.3}",
            b.index, b.lambda, b.recall, b.fdr, b.f1
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

/// Inverse of [`flatten_coefficients`] for a rank-one stimulus.
pub fn unflatten_coefficients(flat: &[f64], dims: &BasisDims) -> Result<DriftCoefficients, CliError> {
    let sizes = [dims.pt, dims.n_memory(), dims.n_network(), dims.n_memory()];
    let total: usize = sizes.iter().sum();
    if flat.len() != total {
        return Err(CliError::usage(format!("coefficient file has {} values, the basis needs {total}", flat.len())));
    }
    let (temporal, rest) = flat.split_at(dims.pt);
    let (spatial, rest) = rest.split_at(dims.n_memory());
    let (network, memory) = rest.split_at(dims.n_network());
    Ok(DriftCoefficients {
        stimulus: Stimulus::RankOne {
            temporal: temporal.to_vec(),
            spatial: TensorD::new(dims.memory_shape().to_vec(), spatial.to_vec())?,
        },
        network: TensorD::new(dims.network_shape().to_vec(), network.to_vec())?,
        memory: TensorD::new(dims.memory_shape().to_vec(), memory.to_vec())?,
    })
}

/// Separations from 0 to the domain diagonal in steps of the smaller cell
/// side.
pub fn default_radii(grid: &Grid) -> Vec<f64> {
    let h = grid.dx().min(grid.dy());
    let w = grid.x_range.1 - grid.x_range.0;
    let v = grid.y_range.1 - grid.y_range.0;
    let n = ((w * w + v * v).sqrt() / h).floor() as usize;
    (0..=n).map(|i| i as f64 * h).collect()
}

/// Delays Δ_t, 2Δ_t, ..., τ.
pub fn default_delays(grid: &Grid) -> Vec<f64> {
    (1..=grid.lags).map(|l| l as f64 * grid.time_step).collect()
}

/// One delay bin per lag node: edges at (k + ½)Δ_t for k = 0..L.
pub fn default_delay_edges(grid: &Grid) -> Vec<f64> {
    (0..=grid.lags).map(|k| (k as f64 + 0.5) * grid.time_step).collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::other(format!("cannot write {}: {e}", path.display())))
}

fn csv_err(e: impl std::fmt::Display) -> CliError {
    CliError::other(e.to_string())
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

pub fn summarize(
    cfg: &LoadedConfig,
    fit_dir: Option<&Path>,
    out: Option<&Path>,
    index_flag: Option<usize>,
) -> Result<(), CliError> {
    let c = &cfg.config;
    let basis = basis(cfg)?;
    let g = &basis.grid;
    let fit_dir = out_dir(cfg, fit_dir);
    let index = lambda_index(cfg, index_flag)?;
    let rel = coefficient_file(index);
    let coef_path = fit_dir.join(&rel);
    let flat = load_input(&coef_path, "coefficients")?;
    let coeffs = unflatten_coefficients(flat.data(), &basis.dims())?;

    let s = &c.summary;
    let radii = s.radii.clone().unwrap_or_else(|| default_radii(g));
    let delays = s.delays.clone().unwrap_or_else(|| default_delays(g));
    let edges = s.delay_edges.clone().unwrap_or_else(|| default_delay_edges(g));

    let degrees = compute_degree_maps(&coeffs.network, &basis, s.epsilon)?;
    let profile = compute_separation_profile(&coeffs.network, &basis, &radii, &delays, s.n_theta)?;
    let histogram = compute_weight_density(&coeffs.network, &basis, &edges, s.value_bins, s.epsilon)?;
    let stimulus = stimulus_timecourse(&coeffs, &basis)?;
    let memory = memory_map(&coeffs, &basis)?;

    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| fit_dir.join("summary"));
    create_dir(&dir)?;
    let mut inputs = BTreeMap::new();
    inputs.insert("coefficients".to_string(), file_sha256(&coef_path)?);
    let mut manifest = Manifest::new("summarize", c.seed, &cfg.sha256, inputs);

    let xs = g.x_centers();
    let ys = g.y_centers();
    let pixels = || ys.iter().enumerate().flat_map(|(j, y)| xs.iter().enumerate().map(move |(i, x)| (i, j, *x, *y)));

    let at = |t: &TensorD, i: usize, j: usize| t.data()[i + g.nx * j];
    write_rows(
        &dir.join("degree_maps.csv"),
        &["x", "y", "deg_in", "deg_out", "w_in", "w_out"],
        pixels().map(|(i, j, x, y)| {
            vec![
                num(x),
                num(y),
                num(at(&degrees.deg_in, i, j)),
                num(at(&degrees.deg_out, i, j)),
                num(at(&degrees.w_in, i, j)),
                num(at(&degrees.w_out, i, j)),
            ]
        }),
    )?;
    write_rows(
        &dir.join("separation_profile.csv"),
        &["s", "t", "w"],
        profile.delays.iter().enumerate().flat_map(|(b, t)| {
            let profile = &profile;
            profile.radii.iter().enumerate().map(move |(a, r)| vec![num(*r), num(*t), num(profile.values[(a, b)])])
        }),
    )?;
    write_rows(
        &dir.join("weight_density.csv"),
        &["delay_lo", "delay_hi", "value_lo", "value_hi", "count"],
        histogram.counts.iter().enumerate().flat_map(|(d, row)| {
            let h = &histogram;
            row.iter().enumerate().map(move |(v, n)| {
                vec![num(h.delay_edges[d]), num(h.delay_edges[d + 1]), num(h.value_edges[v]), num(h.value_edges[v + 1]), n.to_string()]
            })
        }),
    )?;
    let times = g.model_times();
    write_rows(
        &dir.join("stimulus_timecourse.csv"),
        &["x", "y", "t", "s"],
        times.iter().enumerate().flat_map(|(k, t)| {
            let stimulus = &stimulus;
            pixels().map(move |(i, j, x, y)| vec![num(x), num(y), num(*t), num(stimulus.data()[i + g.nx * (j + g.ny * k)])])
        }),
    )?;
    write_rows(
        &dir.join("memory_map.csv"),
        &["x", "y", "h"],
        pixels().map(|(i, j, x, y)| vec![num(x), num(y), num(at(&memory, i, j))]),
    )?;
    for f in ["degree_maps.csv", "separation_profile.csv", "weight_density.csv", "stimulus_timecourse.csv", "memory_map.csv"] {
        manifest.record(&dir, f)?;
    }
    manifest.write(&dir)?;
    println!(
        "λ index {index}: ε = {:.3e}, {} network weights above ε; wrote {}",
        degrees.epsilon,
        histogram.total(),
        dir.display()
    );
    Ok(())
}
