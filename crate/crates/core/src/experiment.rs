//! α/β sweeps comparing scaling-path solutions with trained networks, predictor
//! surfaces, and the files they are written to.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gd_trainer::{empirical_measure, init_from_grid, train, GdConfig, TrainResult};
use crate::io::fmt_f64;
use crate::measures::{total_variation, uniform_on, DiscreteMeasure};
use crate::ntk::{gram, solve_interpolation, KernelSolution};
use crate::path_solver::{
    shifted_warm_start, solve_rich_limit, solve_scaling_path_from, FbsOptions, PathConfig, PathSolution,
    ProjectionOptions, RichOptions, SolveStatus,
};
use crate::relu_model::{lift_input, Dataset};
use crate::sphere_grid::{build_grid, GridLabel, SphereGrid};
use crate::uot::HkObjective;

/// Clipping range of plotted surfaces.
pub const SURFACE_CLIP: f64 = 2.0;

/// A sweep scale: a finite `α ≥ 0` or the kernel limit, written `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub enum Scale {
    Finite(f64),
    Infinite,
}

impl Scale {
    pub fn value(self) -> f64 {
        match self {
            Scale::Finite(a) => a,
            Scale::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&fmt_f64(self.value()))
    }
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") {
            return Ok(Scale::Infinite);
        }
        match t.parse::<f64>() {
            Ok(a) if a.is_finite() && a >= 0.0 => Ok(Scale::Finite(a)),
            _ => Err(Error::Schema(format!(
                "scale must be a number >= 0 or \"inf\", got {s:?}"
            ))),
        }
    }
}

impl Serialize for Scale {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Scale::Finite(a) => s.serialize_f64(*a),
            Scale::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Scale {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(a) if a.is_finite() && a >= 0.0 => Ok(Scale::Finite(a)),
            Raw::Num(a) => Err(serde::de::Error::custom(format!("scale must be >= 0, got {a}"))),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Settings shared by every CLI command; sweeps also use the α and β lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub alphas: Vec<Scale>,
    pub betas: Vec<f64>,
    /// Dataset JSON; the bundled synthetic dataset when absent.
    pub dataset_path: Option<PathBuf>,
    /// Points of the Fibonacci lattice `F`.
    pub fib_n: usize,
    /// Support of the unknown measure (`P` or `Q`).
    pub grid: GridLabel,
    pub eps: f64,
    pub output_dir: PathBuf,
    pub debias: bool,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iter: usize,
    pub feasibility_tol: f64,
    pub fbs: FbsOptions,
    pub projection: ProjectionOptions,
    pub rich: RichOptions,
    pub gd: GdConfig,
    pub ridge: f64,
    /// Warm-start each α from the previous solution, shifted by the change in reference mass.
    pub continuation: bool,
    /// Grid resolution of predictor surfaces; none are written when absent.
    pub surface_resolution: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            alphas: [
                1e-1, 3.3e-1, 6.6e-1, 1e0, 3.3e0, 6.6e0, 1e1, 1.6e1, 2.4e1, 4.2e1, 4.8e1, 6.6e1,
            ]
            .into_iter()
            .map(Scale::Finite)
            .collect(),
            betas: vec![
                1e-1, 3.3e-1, 6.6e-1, 1e0, 3.3e0, 6.6e0, 1e1, 1.6e1, 2.4e1, 4.2e1, 4.8e1, 6.6e1,
            ],
            dataset_path: None,
            fib_n: 576,
            grid: GridLabel::P,
            eps: 1e-2,
            output_dir: PathBuf::from("out"),
            debias: false,
            sinkhorn_tol: 1e-9,
            sinkhorn_max_iter: 5000,
            feasibility_tol: 1e-4,
            fbs: FbsOptions::default(),
            projection: ProjectionOptions::default(),
            rich: RichOptions::default(),
            gd: GdConfig::default(),
            ridge: 0.0,
            continuation: true,
            surface_resolution: None,
        }
    }
}

impl SweepConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Schema(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.betas.is_empty() {
            return Err(Error::Schema("alphas and betas must be nonempty".into()));
        }
        if self.alphas.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Schema("alphas must be strictly increasing".into()));
        }
        if self.betas.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Schema("betas must be strictly increasing".into()));
        }
        if self.betas.iter().any(|b| !(*b > 0.0) || !b.is_finite()) {
            return Err(Error::Schema("betas must be finite and > 0".into()));
        }
        if self.fib_n == 0 {
            return Err(Error::Schema("fib_n must be positive".into()));
        }
        if !matches!(self.grid, GridLabel::P | GridLabel::Q) {
            return Err(Error::Schema("grid must be P or Q".into()));
        }
        if !(self.eps > 0.0) || !(self.ridge >= 0.0) {
            return Err(Error::Schema("eps must be > 0 and ridge >= 0".into()));
        }
        if self.surface_resolution.is_some_and(|r| r < 2) {
            return Err(Error::Schema("surface_resolution must be >= 2".into()));
        }
        Ok(())
    }

    /// The configuration without its output location, which does not affect results.
    pub fn canonical(&self) -> Self {
        Self {
            output_dir: PathBuf::new(),
            ..self.clone()
        }
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&self.canonical()).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn dataset(&self) -> Result<Dataset> {
        match &self.dataset_path {
            Some(p) => Dataset::load(p),
            None => Ok(Dataset::bundled()),
        }
    }

    /// The initialization grid `P`.
    pub fn p_grid(&self) -> Result<Arc<SphereGrid>> {
        Ok(Arc::new(build_grid(GridLabel::P, self.fib_n)?))
    }

    /// The support grid of the unknown measure.
    pub fn solve_grid(&self, p: &Arc<SphereGrid>) -> Result<Arc<SphereGrid>> {
        match self.grid {
            GridLabel::P => Ok(p.clone()),
            label => Ok(Arc::new(build_grid(label, self.fib_n)?)),
        }
    }

    pub fn path_config(&self, grid: Arc<SphereGrid>, p: Arc<SphereGrid>, alpha: f64) -> Result<PathConfig> {
        let mu0 = uniform_on(p, 1.0)?;
        let mut cfg = PathConfig::with_init(grid, mu0, alpha)?;
        cfg.eps = self.eps;
        cfg.fbs = self.fbs;
        cfg.projection = self.projection;
        cfg.sinkhorn_tol = self.sinkhorn_tol;
        cfg.sinkhorn_max_iter = self.sinkhorn_max_iter;
        cfg.debias = self.debias;
        cfg.feasibility_tol = self.feasibility_tol;
        Ok(cfg)
    }
}

/// Outcome of the variational problem at one scale.
#[derive(Clone, Debug)]
pub enum VpSolution {
    /// `α > 0` (scaling path) or `α = 0` (rich limit).
    Measure(PathSolution),
    /// `α = ∞`: the kernel interpolant and its minimal norm.
    Kernel(KernelSolution),
}

impl VpSolution {
    pub fn value(&self) -> f64 {
        match self {
            VpSolution::Measure(s) => s.objective,
            VpSolution::Kernel(k) => k.min_norm_value,
        }
    }

    /// `"ok"` or a short description of what went wrong.
    pub fn status(&self, feasibility_tol: f64) -> String {
        match self {
            VpSolution::Measure(s) => {
                let mut issues = Vec::new();
                if s.status != SolveStatus::Converged {
                    issues.push(format!("vp_{}", s.status.as_str()));
                }
                if !(s.constraint_residual <= feasibility_tol) {
                    issues.push("vp_infeasible".to_string());
                }
                join_issues(issues)
            }
            VpSolution::Kernel(_) => "ok".into(),
        }
    }
}

fn join_issues(issues: Vec<String>) -> String {
    if issues.is_empty() {
        "ok".into()
    } else {
        issues.join(";")
    }
}

/// Solves at one scale: the rich limit at 0, the kernel limit at ∞, the
/// scaling path otherwise (optionally from a warm start).
pub fn solve_at(
    cfg: &SweepConfig,
    data: &Dataset,
    p: &Arc<SphereGrid>,
    grid: &Arc<SphereGrid>,
    alpha: Scale,
    warm: Option<&[f64]>,
) -> Result<VpSolution> {
    match alpha {
        Scale::Infinite => {
            let mut k = gram(data, p)?;
            Ok(VpSolution::Kernel(solve_interpolation(
                &mut k,
                &data.labels(),
                cfg.ridge,
            )?))
        }
        Scale::Finite(0.0) => Ok(VpSolution::Measure(solve_rich_limit(grid.clone(), data, &cfg.rich)?)),
        Scale::Finite(a) => {
            let pc = cfg.path_config(grid.clone(), p.clone(), a)?;
            Ok(VpSolution::Measure(solve_scaling_path_from(&pc, data, warm)?))
        }
    }
}

/// One `(α, β)` cell of the comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRecord {
    pub alpha: Scale,
    pub beta: f64,
    pub vp_value: f64,
    pub gd_value: f64,
    pub gap: f64,
    pub status: String,
}

/// The per-α summary row: the variational value and the best trained value over β.
#[derive(Clone, Debug, PartialEq)]
pub struct MinimumRecord {
    pub alpha: Scale,
    pub vp_value: f64,
    pub gd_min: f64,
    pub argmin_beta: Option<f64>,
    pub status: String,
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub records: Vec<ComparisonRecord>,
    pub minima: Vec<MinimumRecord>,
    pub meta: serde_json::Value,
}

/// `(1+α²)·HK_ε(ν, α²μ₀)` for each measure `ν`, or `TV(ν)` at `α = 0`.
///
/// At `α = ∞` the value is `+∞` for every measure that does not reproduce the
/// initialization, so `+∞` is returned.
pub fn scaled_divergences(
    cfg: &SweepConfig,
    p: &Arc<SphereGrid>,
    grid: &Arc<SphereGrid>,
    alpha: Scale,
    measures: &[DiscreteMeasure],
) -> Vec<Result<f64>> {
    match alpha {
        Scale::Infinite => measures.iter().map(|_| Ok(f64::INFINITY)).collect(),
        Scale::Finite(0.0) => measures.iter().map(|m| Ok(total_variation(m))).collect(),
        Scale::Finite(a) => {
            let pc = match cfg.path_config(grid.clone(), p.clone(), a) {
                Ok(pc) => pc,
                Err(e) => {
                    return measures
                        .iter()
                        .map(|_| Err(Error::InvalidArgument(e.to_string())))
                        .collect()
                }
            };
            let reference = match pc.reference() {
                Ok(r) => r,
                Err(e) => {
                    return measures
                        .iter()
                        .map(|_| Err(Error::InvalidArgument(e.to_string())))
                        .collect()
                }
            };
            let mut hk = match HkObjective::on_grid(grid, &reference, pc.sinkhorn(), cfg.debias) {
                Ok(h) => h,
                Err(e) => {
                    return measures
                        .iter()
                        .map(|_| Err(Error::InvalidArgument(e.to_string())))
                        .collect()
                }
            };
            let scale = 1.0 + a * a;
            measures.iter().map(|m| Ok(scale * hk.value(m.weights())?)).collect()
        }
    }
}

/// Trains one network per β from the `P` initialization.
pub fn train_all(cfg: &SweepConfig, data: &Dataset, p: &Arc<SphereGrid>) -> Vec<Result<TrainResult>> {
    cfg.betas
        .par_iter()
        .map(|&beta| train(&init_from_grid(p, beta)?, data, &cfg.gd))
        .collect()
}

/// Runs the sweep and writes `table.csv`, `heatmap.csv`, `meta.json` (and
/// `surface_*.csv` when a surface resolution is configured) into the output directory.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let data = cfg.dataset()?;
    let p = cfg.p_grid()?;
    let grid = cfg.solve_grid(&p)?;

    // Phase 1: the variational problem for every α, with continuation.
    let mut solutions: Vec<std::result::Result<VpSolution, String>> = Vec::with_capacity(cfg.alphas.len());
    let mut previous: Option<(f64, Vec<f64>)> = None;
    for &alpha in &cfg.alphas {
        let warm = match (&previous, alpha) {
            (Some((from, w)), Scale::Finite(a)) if cfg.continuation && a > 0.0 => {
                let pc = cfg.path_config(grid.clone(), p.clone(), a)?;
                Some(shifted_warm_start(&pc, *from, w)?)
            }
            _ => None,
        };
        let sol = solve_at(cfg, &data, &p, &grid, alpha, warm.as_deref());
        if let Ok(VpSolution::Measure(s)) = &sol {
            if let Scale::Finite(a) = alpha {
                if a > 0.0 {
                    previous = Some((a, s.measure.weights().to_vec()));
                }
            }
        }
        solutions.push(sol.map_err(|e| e.to_string()));
    }

    // Phase 2: trained networks, their measures, and every cell.
    let trained: Vec<std::result::Result<TrainResult, String>> = train_all(cfg, &data, &p)
        .into_iter()
        .map(|r| r.map_err(|e| e.to_string()))
        .collect();
    let gd_measures: Vec<Option<DiscreteMeasure>> = trained
        .iter()
        .map(|t| {
            t.as_ref()
                .ok()
                .and_then(|t| empirical_measure(&t.cloud, grid.clone()).ok())
        })
        .collect();
    let present: Vec<DiscreteMeasure> = gd_measures.iter().flatten().cloned().collect();
    let values_per_alpha: Vec<Vec<Result<f64>>> = cfg
        .alphas
        .par_iter()
        .map(|&alpha| scaled_divergences(cfg, &p, &grid, alpha, &present))
        .collect();

    let mut records = Vec::new();
    let mut minima = Vec::new();
    for (ai, &alpha) in cfg.alphas.iter().enumerate() {
        let (vp_value, vp_status) = match &solutions[ai] {
            Ok(s) => (s.value(), s.status(cfg.feasibility_tol)),
            Err(e) => (f64::NAN, format!("vp_error: {e}")),
        };
        let mut values = values_per_alpha[ai].iter();
        let mut best: Option<(f64, f64)> = None;
        for (bi, &beta) in cfg.betas.iter().enumerate() {
            let mut issues = Vec::new();
            if vp_status != "ok" {
                issues.push(vp_status.clone());
            }
            let gd_value = match (&trained[bi], &gd_measures[bi]) {
                (Err(e), _) => {
                    issues.push(format!("gd_error: {e}"));
                    f64::NAN
                }
                (Ok(_), None) => {
                    issues.push("gd_error: empirical measure".into());
                    f64::NAN
                }
                (Ok(t), Some(_)) => {
                    if !t.converged {
                        issues.push("gd_not_converged".into());
                    }
                    match values.next().expect("one value per trained measure") {
                        Ok(v) => *v,
                        Err(e) => {
                            issues.push(format!("hk_error: {e}"));
                            f64::NAN
                        }
                    }
                }
            };
            if alpha == Scale::Infinite {
                issues.push("gd_value_unbounded".into());
            }
            if gd_value.is_finite() && best.is_none_or(|(v, _)| gd_value < v) {
                best = Some((gd_value, beta));
            }
            records.push(ComparisonRecord {
                alpha,
                beta,
                vp_value,
                gd_value,
                gap: gd_value - vp_value,
                status: join_issues(issues),
            });
        }
        minima.push(MinimumRecord {
            alpha,
            vp_value,
            gd_min: best.map_or(f64::NAN, |b| b.0),
            argmin_beta: best.map(|b| b.1),
            status: vp_status,
        });
    }

    std::fs::create_dir_all(&cfg.output_dir)?;
    write_table(&cfg.output_dir.join("table.csv"), &records, &minima)?;
    write_heatmap(&cfg.output_dir.join("heatmap.csv"), &records)?;
    if let Some(res) = cfg.surface_resolution {
        for (ai, &alpha) in cfg.alphas.iter().enumerate() {
            if let Ok(sol) = &solutions[ai] {
                let rows = surface_of_solution(sol, &data, &p, res)?;
                write_surface(&cfg.output_dir.join(format!("surface_vp_alpha_{alpha}.csv")), &rows)?;
            }
        }
        for (bi, &beta) in cfg.betas.iter().enumerate() {
            if let Ok(t) = &trained[bi] {
                let cloud = &t.cloud;
                let rows = eval_surface(|x| cloud.predict(&[x])[0], res)?;
                write_surface(
                    &cfg.output_dir.join(format!("surface_gd_beta_{}.csv", fmt_f64(beta))),
                    &rows,
                )?;
            }
        }
    }

    let meta = sweep_meta(cfg, &data, &p, &grid, &solutions, &trained);
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    std::fs::write(cfg.output_dir.join("meta.json"), text)?;
    Ok(SweepOutput { records, minima, meta })
}

fn sweep_meta(
    cfg: &SweepConfig,
    data: &Dataset,
    p: &SphereGrid,
    grid: &SphereGrid,
    solutions: &[std::result::Result<VpSolution, String>],
    trained: &[std::result::Result<TrainResult, String>],
) -> serde_json::Value {
    let vp: Vec<serde_json::Value> = cfg
        .alphas
        .iter()
        .zip(solutions)
        .map(|(alpha, s)| match s {
            Ok(VpSolution::Measure(m)) => serde_json::json!({
                "alpha": alpha,
                "status": m.status.as_str(),
                "iterations": m.iterations,
                "constraint_residual": m.constraint_residual,
                "stationarity": m.stationarity,
            }),
            Ok(VpSolution::Kernel(k)) => serde_json::json!({
                "alpha": alpha,
                "status": "converged",
                "jitter": k.jitter,
            }),
            Err(e) => serde_json::json!({ "alpha": alpha, "status": "error", "error": e }),
        })
        .collect();
    let gd: Vec<serde_json::Value> = cfg
        .betas
        .iter()
        .zip(trained)
        .map(|(beta, t)| match t {
            Ok(t) => serde_json::json!({
                "beta": beta,
                "converged": t.converged,
                "iterations": t.iterations,
                "final_loss": t.history.last().copied().unwrap_or(f64::NAN),
            }),
            Err(e) => serde_json::json!({ "beta": beta, "error": e }),
        })
        .collect();
    serde_json::json!({
        "config_hash": cfg.hash(),
        "config": cfg.canonical(),
        "synthetic_dataset": data.is_synthetic(),
        "samples": data.len(),
        "grid": {
            "fib_n": cfg.fib_n,
            "p_nodes": p.len(),
            "solve_grid": cfg.grid,
            "solve_nodes": grid.len(),
        },
        "eps": cfg.eps,
        "tolerances": {
            "sinkhorn_tol": cfg.sinkhorn_tol,
            "sinkhorn_max_iter": cfg.sinkhorn_max_iter,
            "fbs_grad_tol": cfg.fbs.grad_tol,
            "fbs_max_outer": cfg.fbs.max_outer,
            "projection_tol": cfg.projection.tol,
            "feasibility_tol": cfg.feasibility_tol,
            "gd_loss_tol": cfg.gd.loss_tol,
            "gd_max_iter": cfg.gd.max_iter,
        },
        "vp_solves": vp,
        "gd_runs": gd,
    })
}

/// Writes `alpha,beta,vp_value,gd_value,gap,status`, then one `beta = min` row per α.
///
/// In the minimum rows `gd_value` is the smallest trained value over β and the
/// status names the minimizing β.
pub fn write_table(path: &Path, records: &[ComparisonRecord], minima: &[MinimumRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["alpha", "beta", "vp_value", "gd_value", "gap", "status"])?;
    for r in records {
        w.write_record([
            r.alpha.to_string(),
            fmt_f64(r.beta),
            fmt_f64(r.vp_value),
            fmt_f64(r.gd_value),
            fmt_f64(r.gap),
            r.status.clone(),
        ])?;
    }
    for m in minima {
        let status = match m.argmin_beta {
            Some(b) => format!("{};argmin_beta={}", m.status, fmt_f64(b)),
            None => m.status.clone(),
        };
        w.write_record([
            m.alpha.to_string(),
            "min".to_string(),
            fmt_f64(m.vp_value),
            fmt_f64(m.gd_min),
            fmt_f64(m.gd_min - m.vp_value),
            status,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `alpha,beta,gap`.
pub fn write_heatmap(path: &Path, records: &[ComparisonRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["alpha", "beta", "gap"])?;
    for r in records {
        w.write_record([r.alpha.to_string(), fmt_f64(r.beta), fmt_f64(r.gap)])?;
    }
    w.flush()?;
    Ok(())
}

/// One point of a predictor surface.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfacePoint {
    pub x: f64,
    pub y: f64,
    /// Value clipped to `[-2, 2]`.
    pub f: f64,
    pub f_raw: f64,
}

/// Lifted inputs of a uniform `resolution × resolution` grid over `[-1, 1]²`,
/// row-major in `y`, then `x`.
pub fn surface_inputs(resolution: usize) -> Result<Vec<[f64; 3]>> {
    if resolution < 2 {
        return Err(Error::InvalidArgument(format!(
            "resolution must be >= 2, got {resolution}"
        )));
    }
    let coord = |i: usize| -1.0 + 2.0 * i as f64 / (resolution - 1) as f64;
    Ok((0..resolution * resolution)
        .map(|k| lift_input([coord(k % resolution), coord(k / resolution)]))
        .collect())
}

fn surface_rows(inputs: &[[f64; 3]], values: &[f64]) -> Vec<SurfacePoint> {
    inputs
        .iter()
        .zip(values)
        .map(|(x, &raw)| SurfacePoint {
            x: x[0],
            y: x[1],
            f: raw.clamp(-SURFACE_CLIP, SURFACE_CLIP),
            f_raw: raw,
        })
        .collect()
}

/// Evaluates `f` on the surface grid of [`surface_inputs`].
pub fn eval_surface<F: Fn([f64; 3]) -> f64>(f: F, resolution: usize) -> Result<Vec<SurfacePoint>> {
    let inputs = surface_inputs(resolution)?;
    let values: Vec<f64> = inputs.iter().map(|x| f(*x)).collect();
    Ok(surface_rows(&inputs, &values))
}

/// The predictor of a variational solution on the surface grid.
pub fn surface_of_solution(
    sol: &VpSolution,
    data: &Dataset,
    p: &SphereGrid,
    resolution: usize,
) -> Result<Vec<SurfacePoint>> {
    let inputs = surface_inputs(resolution)?;
    let values = match sol {
        VpSolution::Measure(s) => crate::relu_model::eval_network(&s.measure, &inputs)?,
        VpSolution::Kernel(k) => crate::ntk::eval_kernel_predictor(&k.coeffs, data, p, &inputs)?,
    };
    Ok(surface_rows(&inputs, &values))
}

/// The surface of a measure CSV (`node_index,weight` on the solve grid) or of a
/// kernel coefficient CSV (`sample,coefficient`).
pub fn surface_from_file(cfg: &SweepConfig, path: &Path, resolution: usize) -> Result<Vec<SurfacePoint>> {
    let first = csv::Reader::from_path(path)?.headers()?.get(0).map(str::to_owned);
    let p = cfg.p_grid()?;
    let inputs = surface_inputs(resolution)?;
    let values = match first.as_deref() {
        Some("node_index") => {
            let measure = DiscreteMeasure::read_csv(path, cfg.solve_grid(&p)?)?;
            crate::relu_model::eval_network(&measure, &inputs)?
        }
        Some("sample") => {
            let coeffs = read_coefficients(path)?;
            crate::ntk::eval_kernel_predictor(&coeffs, &cfg.dataset()?, &p, &inputs)?
        }
        _ => {
            return Err(Error::Schema(format!(
                "{}: expected a node_index,weight or sample,coefficient CSV",
                path.display()
            )))
        }
    };
    Ok(surface_rows(&inputs, &values))
}

/// Writes `x,y,f,f_raw`.
pub fn write_surface(path: &Path, rows: &[SurfacePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "f", "f_raw"])?;
    for r in rows {
        w.write_record([fmt_f64(r.x), fmt_f64(r.y), fmt_f64(r.f), fmt_f64(r.f_raw)])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `measure.csv` (or `coefficients.csv` for the kernel limit) and the
/// `solution.json` sidecar into `dir`.
pub fn write_solution(dir: &Path, cfg: &SweepConfig, alpha: Scale, sol: &VpSolution) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let sidecar = match sol {
        VpSolution::Measure(s) => {
            s.measure.write_csv(&dir.join("measure.csv"))?;
            serde_json::json!({
                "kind": if alpha == Scale::Finite(0.0) { "rich" } else { "scaling_path" },
                "alpha": alpha,
                "eps": cfg.eps,
                "debias": cfg.debias,
                "objective": s.objective,
                "divergence": s.divergence,
                "residual": s.constraint_residual,
                "iterations": s.iterations,
                "stationarity": s.stationarity,
                "status": s.status.as_str(),
                "grid": cfg.grid,
                "fib_n": cfg.fib_n,
                "total_mass": total_variation(&s.measure),
            })
        }
        VpSolution::Kernel(k) => {
            write_coefficients(&dir.join("coefficients.csv"), &k.coeffs)?;
            serde_json::json!({
                "kind": "kernel",
                "alpha": alpha,
                "objective": k.min_norm_value,
                "ridge": cfg.ridge,
                "jitter": k.jitter,
                "fib_n": cfg.fib_n,
            })
        }
    };
    let mut text = serde_json::to_string_pretty(&sidecar)?;
    text.push('\n');
    std::fs::write(dir.join("solution.json"), text)?;
    Ok(())
}

/// Writes `sample,coefficient`.
pub fn write_coefficients(path: &Path, coeffs: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sample", "coefficient"])?;
    for (k, c) in coeffs.iter().enumerate() {
        w.write_record([k.to_string(), fmt_f64(*c)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_coefficients(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().collect::<Vec<_>>() != ["sample", "coefficient"] {
        return Err(Error::Schema(format!(
            "{} lacks the sample,coefficient header",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let c = rec
            .get(1)
            .and_then(crate::io::parse_f64)
            .ok_or_else(|| Error::Schema(format!("row {k}: bad coefficient")))?;
        out.push(c);
    }
    Ok(out)
}

/// Writes the trained cloud, its loss history, its empirical measure on
/// `grid`, and a `training.json` sidecar into `dir`.
pub fn write_training(dir: &Path, grid: Arc<SphereGrid>, result: &TrainResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    result.cloud.write_csv(&dir.join("cloud.csv"))?;
    result.write_history_csv(&dir.join("history.csv"))?;
    let measure = empirical_measure(&result.cloud, grid)?;
    measure.write_csv(&dir.join("measure.csv"))?;
    let sidecar = serde_json::json!({
        "kind": "gradient_descent",
        "beta": result.cloud.beta,
        "atoms": result.cloud.m(),
        "converged": result.converged,
        "iterations": result.iterations,
        "final_loss": result.history.last().copied().unwrap_or(f64::NAN),
        "final_step": result.final_step,
        "total_mass": total_variation(&measure),
    });
    let mut text = serde_json::to_string_pretty(&sidecar)?;
    text.push('\n');
    std::fs::write(dir.join("training.json"), text)?;
    Ok(())
}

/// Reads a `solution.json` or `training.json` sidecar.
pub fn read_sidecar(path: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

/// Compares a stored scaling-path solution (directory written by
/// [`write_solution`]) with a stored training run (written by [`write_training`]).
pub fn compare_dirs(cfg: &SweepConfig, vp_dir: &Path, gd_dir: &Path) -> Result<ComparisonRecord> {
    let vp_meta = read_sidecar(&vp_dir.join("solution.json"))?;
    let gd_meta = read_sidecar(&gd_dir.join("training.json"))?;
    let alpha: Scale =
        serde_json::from_value(vp_meta["alpha"].clone()).map_err(|e| Error::Schema(format!("solution alpha: {e}")))?;
    let beta = gd_meta["beta"]
        .as_f64()
        .ok_or_else(|| Error::Schema("training.json lacks beta".into()))?;
    let vp_value = vp_meta["objective"]
        .as_f64()
        .ok_or_else(|| Error::Schema("solution.json lacks objective".into()))?;
    let p = cfg.p_grid()?;
    let grid = cfg.solve_grid(&p)?;
    let gd = DiscreteMeasure::read_csv(&gd_dir.join("measure.csv"), grid.clone())?;
    let gd_value = scaled_divergences(cfg, &p, &grid, alpha, std::slice::from_ref(&gd))
        .pop()
        .expect("one value")?;
    let status = if vp_meta["status"].as_str().is_none_or(|s| s == "converged") {
        "ok".to_string()
    } else {
        format!("vp_{}", vp_meta["status"].as_str().unwrap_or("unknown"))
    };
    Ok(ComparisonRecord {
        alpha,
        beta,
        vp_value,
        gd_value,
        gap: gd_value - vp_value,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_parsing() {
        assert_eq!("inf".parse::<Scale>().unwrap(), Scale::Infinite);
        assert_eq!("0.5".parse::<Scale>().unwrap(), Scale::Finite(0.5));
        assert!("-1".parse::<Scale>().is_err());
        let v: Vec<Scale> = serde_json::from_str("[0, 1.5, \"inf\"]").unwrap();
        assert_eq!(v, vec![Scale::Finite(0.0), Scale::Finite(1.5), Scale::Infinite]);
        assert_eq!(serde_json::to_string(&v).unwrap(), "[0.0,1.5,\"inf\"]");
        assert!(Scale::Finite(1e9) < Scale::Infinite);
    }

    #[test]
    fn config_validation() {
        let ok = SweepConfig::default();
        ok.validate().unwrap();
        let bad = SweepConfig {
            betas: vec![1.0, 1.0],
            ..SweepConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SweepConfig {
            alphas: vec![Scale::Infinite, Scale::Finite(1.0)],
            ..SweepConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(SweepConfig::from_json_str("{\"nonsense\": 1}").is_err());
        let parsed = SweepConfig::from_json_str("{\"alphas\": [1, \"inf\"], \"betas\": [2]}").unwrap();
        assert_eq!(parsed.alphas, vec![Scale::Finite(1.0), Scale::Infinite]);
    }

    #[test]
    fn hash_depends_on_content() {
        let a = SweepConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.eps = 2e-2;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn surface_clipping_and_size() {
        let rows = eval_surface(|_| 5.0, 3).unwrap();
        assert_eq!(rows.len(), 9);
        assert!(rows.iter().all(|r| r.f == 2.0 && r.f_raw == 5.0));
        assert_eq!((rows[0].x, rows[0].y), (-1.0, -1.0));
        assert_eq!((rows[8].x, rows[8].y), (1.0, 1.0));
        assert!(eval_surface(|_| 0.0, 1).is_err());
    }
}
