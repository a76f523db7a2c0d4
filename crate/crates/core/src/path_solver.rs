//! Discrete scaling-path problems.
//!
//! * [`solve_scaling_path`]: minimize `HK_ε(μ, α²μ₀)` over nonnegative weights
//!   with `Φμ = y`, by forward-backward splitting (spectral step, Armijo
//!   backtracking along the projected segment).
//! * [`solve_rich_limit`]: the `α = 0` limit, minimal total mass subject to the
//!   same constraints.
//! * [`solve_penalized`]: `Σ(Φμ - y)² + λ(1+α²)HK_ε(μ, α²μ₀)` over nonnegative weights.

use std::sync::{Arc, Mutex};

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{scale_mass, DiscreteMeasure};
use crate::relu_model::{feature_matrix, Dataset, FeatureMatrix};
use crate::sphere_grid::SphereGrid;
use crate::uot::{HkObjective, SinkhornOptions};

/// Relative eigenvalue threshold below which `ΦΦᵀ` is treated as singular.
const RANK_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMethod {
    /// Dykstra's alternating projections between the affine set and the orthant.
    Dykstra,
    /// Semismooth Newton on the dual `λ ↦ λᵀy - ½‖(m + Φᵀλ)⁺‖²`.
    Newton,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionOptions {
    pub method: ProjectionMethod,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            method: ProjectionMethod::Newton,
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

impl ProjectionOptions {
    pub fn dykstra() -> Self {
        Self {
            method: ProjectionMethod::Dykstra,
            ..Self::default()
        }
    }
}

/// Euclidean projection onto `{w ≥ 0, Φw = y}`.
#[derive(Debug)]
pub struct PolyhedronProjector {
    phi: FeatureMatrix,
    y: Vec<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    opts: ProjectionOptions,
    y_scale: f64,
    gram_trace: f64,
    /// Dual point of the previous Newton projection, reused as a starting point.
    last_dual: Mutex<Vec<f64>>,
}

impl Clone for PolyhedronProjector {
    fn clone(&self) -> Self {
        Self {
            phi: self.phi.clone(),
            y: self.y.clone(),
            chol: self.chol.clone(),
            opts: self.opts,
            y_scale: self.y_scale,
            gram_trace: self.gram_trace,
            last_dual: Mutex::new(self.last_dual.lock().expect("dual cache").clone()),
        }
    }
}

/// Result of one projection.
#[derive(Clone, Debug)]
pub struct Projection {
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl PolyhedronProjector {
    pub fn new(phi: FeatureMatrix, y: Vec<f64>, opts: ProjectionOptions) -> Result<Self> {
        let n = phi.rows();
        if y.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {n} constraints",
                y.len()
            )));
        }
        let gram = DMatrix::from_row_slice(n, n, &phi.gram());
        let eig = SymmetricEigen::new(gram.clone());
        let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let rank = eig.eigenvalues.iter().filter(|&&l| l > RANK_TOL * max).count();
        if max <= 0.0 || rank < n {
            return Err(Error::RankDeficient { rank, rows: n });
        }
        let gram_trace = gram.trace();
        let chol = Cholesky::new(gram).ok_or(Error::RankDeficient { rank, rows: n })?;
        let y_scale = 1.0 + y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(Self {
            phi,
            y,
            chol,
            opts,
            y_scale,
            gram_trace,
            last_dual: Mutex::new(vec![0.0; n]),
        })
    }

    pub fn phi(&self) -> &FeatureMatrix {
        &self.phi
    }

    pub fn labels(&self) -> &[f64] {
        &self.y
    }

    pub fn options(&self) -> ProjectionOptions {
        self.opts
    }

    /// `‖Φw - y‖∞`.
    pub fn residual(&self, w: &[f64]) -> f64 {
        self.phi
            .apply(w)
            .iter()
            .zip(&self.y)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Projection onto the affine set `{Φw = y}`.
    pub fn project_affine(&self, w: &[f64]) -> Vec<f64> {
        let r: Vec<f64> = self.phi.apply(w).iter().zip(&self.y).map(|(a, b)| a - b).collect();
        let lambda = self.chol.solve(&DVector::from_vec(r));
        let correction = self.phi.apply_transpose(lambda.as_slice());
        w.iter().zip(&correction).map(|(a, c)| a - c).collect()
    }

    /// Projects `m` with the configured method.
    pub fn project(&self, m: &[f64]) -> Result<Projection> {
        if m.len() != self.phi.cols() {
            return Err(Error::InvalidArgument(format!(
                "{} weights for {} grid nodes",
                m.len(),
                self.phi.cols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("projection input"));
        }
        match self.opts.method {
            ProjectionMethod::Dykstra => self.project_dykstra(m),
            ProjectionMethod::Newton => self.project_newton(m),
        }
    }

    /// Dykstra's alternating projections between the affine set and the orthant.
    ///
    /// The affine set needs no correction term; the orthant keeps one.
    pub fn project_dykstra(&self, m: &[f64]) -> Result<Projection> {
        let tol = self.opts.tol;
        let mut x = m.to_vec();
        let mut q = vec![0.0; x.len()];
        let mut iterations = 0;
        loop {
            iterations += 1;
            let a = self.project_affine(&x);
            let mut change: f64 = 0.0;
            for i in 0..x.len() {
                let v = a[i] + q[i];
                let clipped = v.max(0.0);
                q[i] = v - clipped;
                change = change.max((clipped - x[i]).abs());
                x[i] = clipped;
            }
            if !change.is_finite() {
                return Err(Error::NonFinite("polyhedral projection"));
            }
            if change < tol {
                let residual = self.residual(&x);
                if residual <= tol * self.residual_scale(&x) {
                    return Ok(Projection {
                        weights: x,
                        iterations,
                        residual,
                    });
                }
            }
            if iterations >= self.opts.max_iter {
                return Err(Error::Infeasible {
                    residual: self.residual(&x),
                    iterations,
                });
            }
        }
    }
}

impl PolyhedronProjector {
    /// `1 + ‖y‖∞ + max_k Σ_j |Φ_kj w_j|` at the candidate `w`: the residual
    /// tolerance is relative to this, since `Φw` cannot be formed more
    /// accurately than the magnitudes entering it.
    fn residual_scale(&self, w: &[f64]) -> f64 {
        let spread = (0..self.phi.rows())
            .map(|k| self.phi.row(k).iter().zip(w).map(|(a, b)| (a * b).abs()).sum::<f64>())
            .fold(0.0f64, f64::max);
        self.y_scale + spread
    }

    fn dual_value(&self, m: &[f64], metric: Option<&[f64]>, lambda: &[f64]) -> (f64, Vec<f64>) {
        let shift = self.phi.apply_transpose(lambda);
        let w: Vec<f64> = match metric {
            None => m.iter().zip(&shift).map(|(a, b)| (a + b).max(0.0)).collect(),
            Some(d) => m
                .iter()
                .zip(&shift)
                .zip(d)
                .map(|((a, b), d)| (a + d * b).max(0.0))
                .collect(),
        };
        let energy: f64 = match metric {
            None => w.iter().map(|v| v * v).sum(),
            Some(d) => w.iter().zip(d).map(|(v, d)| v * v / d).sum(),
        };
        let value = lambda.iter().zip(&self.y).map(|(l, y)| l * y).sum::<f64>() - 0.5 * energy;
        (value, w)
    }

    /// Projection in the norm `‖v‖² = Σ v_j² / d_j`, for positive `d`.
    ///
    /// Always uses the Newton method.
    pub fn project_weighted(&self, m: &[f64], metric: &[f64]) -> Result<Projection> {
        if m.len() != self.phi.cols() || metric.len() != m.len() {
            return Err(Error::InvalidArgument(format!(
                "{} weights and {} metric entries for {} grid nodes",
                m.len(),
                metric.len(),
                self.phi.cols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("projection input"));
        }
        if metric.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::InvalidArgument("projection metric must be positive".into()));
        }
        self.newton(m, Some(metric))
    }

    /// Semismooth Newton on the dual of the projection problem.
    ///
    /// The primal point is `w(λ) = (m + Φᵀλ)⁺` and the dual gradient is
    /// `y - Φw(λ)`; the generalized Hessian is `Φ_S Φ_Sᵀ` over the active set
    /// `S = {w_j > 0}`, regularized by a tiny multiple of `tr(ΦΦᵀ)`. Steps are
    /// damped by an Armijo test on the concave dual.
    pub fn project_newton(&self, m: &[f64]) -> Result<Projection> {
        self.newton(m, None)
    }

    /// Newton projection; a metric `d` replaces `Φᵀλ` by `d ∘ Φᵀλ` and the
    /// Hessian by `Φ_S diag(d) Φ_Sᵀ`.
    fn newton(&self, m: &[f64], metric: Option<&[f64]>) -> Result<Projection> {
        let n = self.phi.rows();
        // `(m + Φᵀλ)⁺` cancels; its rounding error grows with the input.
        let floor = ROUNDING_FLOOR * f64::EPSILON * self.residual_scale(m);
        let mut lambda = self.last_dual.lock().expect("dual cache").clone();
        let (mut value, mut w) = self.dual_value(m, metric, &lambda);
        let mut iterations = 0;
        let mut reg = 1e-14 * self.gram_trace;
        loop {
            let fit = self.phi.apply(&w);
            let grad: Vec<f64> = self.y.iter().zip(&fit).map(|(y, f)| y - f).collect();
            let residual = grad.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if !residual.is_finite() {
                return Err(Error::NonFinite("polyhedral projection"));
            }
            if residual <= (self.opts.tol * self.residual_scale(&w)).max(floor) {
                *self.last_dual.lock().expect("dual cache") = lambda;
                return Ok(Projection {
                    weights: w,
                    iterations,
                    residual,
                });
            }
            if iterations >= self.opts.max_iter.min(NEWTON_MAX_ITER) {
                *self.last_dual.lock().expect("dual cache") = vec![0.0; n];
                return Err(Error::Infeasible { residual, iterations });
            }
            iterations += 1;

            let mut h = DMatrix::<f64>::zeros(n, n);
            for a in 0..n {
                let ra = self.phi.row(a);
                for b in a..n {
                    let rb = self.phi.row(b);
                    let mut v = 0.0;
                    for j in 0..w.len() {
                        if w[j] > 0.0 {
                            v += ra[j] * rb[j] * metric.map_or(1.0, |d| d[j]);
                        }
                    }
                    h[(a, b)] = v;
                    h[(b, a)] = v;
                }
            }
            let direction = loop {
                let mut hr = h.clone();
                for a in 0..n {
                    hr[(a, a)] += reg;
                }
                if let Some(c) = Cholesky::new(hr) {
                    break c.solve(&DVector::from_column_slice(&grad));
                }
                reg *= 10.0;
            };
            let slope: f64 = direction.iter().zip(&grad).map(|(d, g)| d * g).sum();
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let cand: Vec<f64> = lambda.iter().zip(direction.iter()).map(|(l, d)| l + t * d).collect();
                let (v, wc) = self.dual_value(m, metric, &cand);
                // Near the solution the dual increase drops below round-off; a
                // sufficient decrease of the constraint residual is accepted instead.
                let cand_residual = self.residual(&wc);
                if v >= value + 1e-4 * t * slope || cand_residual <= (1.0 - 1e-4 * t) * residual {
                    lambda = cand;
                    value = v;
                    w = wc;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                // Regularize more strongly and retry from the same point.
                reg = (reg * 100.0).max(1e-12 * self.gram_trace);
            }
        }
    }
}

const NEWTON_MAX_ITER: usize = 1000;
/// Multiple of the machine epsilon (times the input magnitude) that a Newton
/// projection may leave as residual.
const ROUNDING_FLOOR: f64 = 100.0;

/// Euclidean projection of `m` onto `{w ≥ 0, Φw = y}`.
pub fn project_polyhedron(m: &[f64], phi: &FeatureMatrix, y: &[f64], cfg: ProjectionOptions) -> Result<Vec<f64>> {
    Ok(PolyhedronProjector::new(phi.clone(), y.to_vec(), cfg)?
        .project(m)?
        .weights)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BbVariant {
    /// `sᵀs / sᵀΔg`
    Bb1,
    /// `sᵀΔg / Δgᵀ Δg`
    Bb2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FbsOptions {
    pub max_outer: usize,
    pub grad_tol: f64,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub bb_variant: BbVariant,
    pub step_min: f64,
    pub step_max: f64,
    pub metric: StepMetric,
    /// Lower bound of the diagonal metric, relative to the mean weight.
    pub metric_floor: f64,
}

/// Geometry of the gradient step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMetric {
    /// Plain projected gradient.
    Euclidean,
    /// Steps `x - t D∇` with `D = diag(max(x, floor))` and projections in the
    /// `D⁻¹`-weighted norm. Keeps the step length bounded where the
    /// curvature grows like the inverse of the weight.
    Diagonal,
}

impl Default for FbsOptions {
    fn default() -> Self {
        Self {
            max_outer: 2000,
            grad_tol: 1e-6,
            armijo_c: 1e-4,
            backtrack: 0.5,
            max_backtracks: 50,
            bb_variant: BbVariant::Bb1,
            step_min: 1e-8,
            step_max: 1e8,
            metric: StepMetric::Diagonal,
            metric_floor: 1e-3,
        }
    }
}

/// Smooth part of a forward-backward problem.
trait SmoothObjective {
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Projection part of a forward-backward problem, optionally in a diagonal metric.
trait Projector {
    fn project(&self, x: &[f64], metric: Option<&[f64]>) -> Result<Vec<f64>>;

    fn supports_metric(&self) -> bool;
}

impl Projector for PolyhedronProjector {
    fn project(&self, x: &[f64], metric: Option<&[f64]>) -> Result<Vec<f64>> {
        match metric {
            Some(d) => Ok(self.project_weighted(x, d)?.weights),
            None => Ok(PolyhedronProjector::project(self, x)?.weights),
        }
    }

    fn supports_metric(&self) -> bool {
        self.opts.method == ProjectionMethod::Newton
    }
}

struct Orthant;

impl Projector for Orthant {
    fn project(&self, x: &[f64], _metric: Option<&[f64]>) -> Result<Vec<f64>> {
        Ok(x.iter().map(|v| v.max(0.0)).collect())
    }

    fn supports_metric(&self) -> bool {
        true
    }
}

fn diagonal_metric(x: &[f64], floor: f64) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len().max(1) as f64;
    let lo = (floor * mean).max(f64::MIN_POSITIVE);
    x.iter().map(|v| v.max(lo)).collect()
}

#[derive(Clone, Debug)]
struct FbsOutcome {
    x: Vec<f64>,
    value: f64,
    iterations: usize,
    stationarity: f64,
    converged: bool,
    history: Vec<f64>,
}

/// Spectral projected gradient with Armijo backtracking along `x + λ(P(x - t∇) - x)`.
fn forward_backward(
    objective: &mut dyn SmoothObjective,
    projector: &dyn Projector,
    x0: Vec<f64>,
    opts: &FbsOptions,
) -> Result<FbsOutcome> {
    let mut x = x0;
    let (mut value, mut grad) = objective.eval(&x)?;
    let mut history = vec![value];
    let scaled = opts.metric == StepMetric::Diagonal && projector.supports_metric();
    let mut metric = scaled.then(|| diagonal_metric(&x, opts.metric_floor));
    let mut step = initial_step(&grad, metric.as_deref(), opts);
    let mut stationarity = f64::INFINITY;

    for iteration in 0..opts.max_outer {
        let probe: Vec<f64> = x.iter().zip(&grad).map(|(a, g)| a - g).collect();
        let p = projector.project(&probe, None)?;
        stationarity = sup_diff(&p, &x);
        if stationarity < opts.grad_tol {
            return Ok(FbsOutcome {
                x,
                value,
                iterations: iteration,
                stationarity,
                converged: true,
                history,
            });
        }

        let trial: Vec<f64> = match &metric {
            None => x.iter().zip(&grad).map(|(a, g)| a - step * g).collect(),
            Some(d) => x.iter().zip(&grad).zip(d).map(|((a, g), d)| a - step * d * g).collect(),
        };
        let z = projector.project(&trial, metric.as_deref())?;
        let d: Vec<f64> = z.iter().zip(&x).map(|(a, b)| a - b).collect();
        let slope: f64 = grad.iter().zip(&d).map(|(g, v)| g * v).sum();

        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let cand: Vec<f64> = x.iter().zip(&d).map(|(a, v)| (a + lambda * v).max(0.0)).collect();
            // Zero-mass points can have unbounded gradients; such candidates are rejected.
            match objective.eval(&cand) {
                Ok((v, g)) if v <= value + opts.armijo_c * lambda * slope => {
                    accepted = Some((cand, v, g));
                    break;
                }
                Ok(_) | Err(Error::NonFinite(_)) => {}
                Err(e) => return Err(e),
            }
            lambda *= opts.backtrack;
        }
        let Some((x_new, v_new, g_new)) = accepted else {
            // No sufficient decrease: the iterate is stationary to working precision.
            return Ok(FbsOutcome {
                x,
                value,
                iterations: iteration,
                stationarity,
                converged: false,
                history,
            });
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        if scaled {
            metric = Some(diagonal_metric(&x_new, opts.metric_floor));
        }
        // Spectral steps in the metric: `s` is measured through `D⁻¹`, `Δg` through `D`.
        let unit = vec![1.0; s.len()];
        let d = metric.as_deref().unwrap_or(&unit);
        let ss: f64 = s.iter().zip(d).map(|(v, d)| v * v / d).sum();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let yy: f64 = yv.iter().zip(d).map(|(v, d)| v * v * d).sum();
        step = if sy > 0.0 {
            match opts.bb_variant {
                BbVariant::Bb1 => ss / sy,
                BbVariant::Bb2 => sy / yy,
            }
        } else {
            opts.step_max
        }
        .clamp(opts.step_min, opts.step_max);

        x = x_new;
        // Armijo acceptance guarantees v_new ≤ value; keep the record monotone.
        value = v_new.min(value);
        grad = g_new;
        history.push(value);
    }
    Ok(FbsOutcome {
        x,
        value,
        iterations: opts.max_outer,
        stationarity,
        converged: false,
        history,
    })
}

fn initial_step(grad: &[f64], metric: Option<&[f64]>, opts: &FbsOptions) -> f64 {
    let g = grad
        .iter()
        .enumerate()
        .fold(0.0f64, |m, (i, v)| m.max((v * metric.map_or(1.0, |d| d[i])).abs()));
    if g > 0.0 {
        (1.0 / g).clamp(opts.step_min, opts.step_max)
    } else {
        1.0
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Configuration of a scaling-path solve.
#[derive(Clone, Debug)]
pub struct PathConfig {
    pub alpha: f64,
    pub eps: f64,
    pub lambda: f64,
    /// Support of the unknown measure (`P` or `Q`).
    pub grid: Arc<SphereGrid>,
    /// Initialization measure, usually uniform on `P`.
    pub mu0: DiscreteMeasure,
    pub fbs: FbsOptions,
    pub projection: ProjectionOptions,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iter: usize,
    /// Subtract the self-transport terms from the divergence.
    pub debias: bool,
    pub feasibility_tol: f64,
}

impl PathConfig {
    /// Defaults with the uniform unit-mass initialization on `grid`.
    pub fn new(grid: Arc<SphereGrid>, alpha: f64) -> Result<Self> {
        let mu0 = crate::measures::uniform_on(grid.clone(), 1.0)?;
        Self::with_init(grid, mu0, alpha)
    }

    /// Defaults with an explicit initialization measure, whose grid may differ
    /// from the solve grid.
    pub fn with_init(grid: Arc<SphereGrid>, mu0: DiscreteMeasure, alpha: f64) -> Result<Self> {
        Ok(Self {
            alpha,
            eps: 1e-2,
            lambda: 1.0,
            grid,
            mu0,
            fbs: FbsOptions::default(),
            projection: ProjectionOptions::default(),
            sinkhorn_tol: 1e-9,
            sinkhorn_max_iter: 5000,
            debias: false,
            feasibility_tol: 1e-4,
        })
    }

    pub fn sinkhorn(&self) -> SinkhornOptions {
        SinkhornOptions {
            eps: self.eps,
            tol: self.sinkhorn_tol,
            max_iter: self.sinkhorn_max_iter,
            ..SinkhornOptions::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!("eps must be > 0, got {}", self.eps)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        let tols = [
            self.fbs.grad_tol,
            self.projection.tol,
            self.sinkhorn_tol,
            self.feasibility_tol,
        ];
        if tols.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::InvalidArgument("all tolerances must be positive".into()));
        }
        if self.mu0.grid().dim() != self.grid.dim() {
            return Err(Error::InvalidArgument(
                "initialization and solve grids differ in dimension".into(),
            ));
        }
        Ok(())
    }

    /// `α²μ₀`.
    pub fn reference(&self) -> Result<DiscreteMeasure> {
        scale_mass(&self.mu0, self.alpha * self.alpha)
    }

    /// `α²μ₀` moved node by node to the nearest solve-grid node (exact when
    /// the initialization grid is contained in the solve grid).
    pub fn reference_on_grid(&self) -> Result<DiscreteMeasure> {
        let reference = self.reference()?;
        if reference.grid().as_ref() == self.grid.as_ref() {
            return Ok(reference);
        }
        let mut weights = vec![0.0; self.grid.len()];
        for (i, w) in reference.weights().iter().enumerate() {
            weights[self.grid.nearest(reference.grid().point(i))] += w;
        }
        DiscreteMeasure::new(self.grid.clone(), weights)
    }

    fn objective(&self) -> Result<HkObjective> {
        HkObjective::on_grid(&self.grid, &self.reference()?, self.sinkhorn(), self.debias)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Stalled,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIterations => "max_iterations",
            SolveStatus::Stalled => "stalled",
        }
    }
}

#[derive(Clone, Debug)]
pub struct PathSolution {
    pub measure: DiscreteMeasure,
    /// `(1+α²)·HK_ε(μ, α²μ₀)` for the constrained problem, total mass for the
    /// rich limit, the full penalized objective in penalized mode.
    pub objective: f64,
    /// `HK_ε(μ, α²μ₀)` without the `(1+α²)` factor (zero for the rich limit).
    pub divergence: f64,
    pub constraint_residual: f64,
    pub iterations: usize,
    pub stationarity: f64,
    pub status: SolveStatus,
    /// Objective after each accepted step (unscaled).
    pub history: Vec<f64>,
    /// Divergence evaluations and the Sinkhorn iterations they took.
    pub evaluations: usize,
    pub sinkhorn_iterations: usize,
}

struct HkSmooth<'a> {
    hk: &'a mut HkObjective,
}

impl SmoothObjective for HkSmooth<'_> {
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let e = self.hk.evaluate(x)?;
        Ok((e.value, e.gradient))
    }
}

/// Solves the constrained problem from the projected scaled initialization.
pub fn solve_scaling_path(cfg: &PathConfig, data: &Dataset) -> Result<PathSolution> {
    solve_scaling_path_from(cfg, data, None)
}

/// Same as [`solve_scaling_path`], starting from the projection of `warm` when given.
pub fn solve_scaling_path_from(cfg: &PathConfig, data: &Dataset, warm: Option<&[f64]>) -> Result<PathSolution> {
    cfg.validate()?;
    if cfg.alpha == 0.0 {
        return Err(Error::InvalidArgument(
            "alpha = 0 is the rich limit; use solve_rich_limit".into(),
        ));
    }
    let phi = feature_matrix(&cfg.grid, data)?;
    let projector = PolyhedronProjector::new(phi, data.labels(), cfg.projection)?;
    let start = match warm {
        Some(w) if w.len() == cfg.grid.len() => w.to_vec(),
        Some(w) => {
            return Err(Error::InvalidArgument(format!(
                "warm start has {} weights for {} grid nodes",
                w.len(),
                cfg.grid.len()
            )))
        }
        None => cfg.reference_on_grid()?.into_weights(),
    };
    let x0 = projector.project(&start)?.weights;
    let mut hk = cfg.objective()?;
    let mut out = forward_backward(&mut HkSmooth { hk: &mut hk }, &projector, x0, &cfg.fbs)?;
    polish(&mut out, &projector, |x| hk.value(x))?;
    finish_constrained(cfg, &projector, out, hk.counters())
}

/// Starting point at `cfg.alpha` from a solution at scale `from`: the weights
/// plus `(α² − from²)·μ₀` on the solve grid, clipped at zero.
///
/// When `μ₀` represents the zero function (as the uniform measure on `P` does)
/// the shift keeps the solution feasible, which makes it a much closer start
/// than the unshifted weights once the reference mass dominates.
pub fn shifted_warm_start(cfg: &PathConfig, from: f64, weights: &[f64]) -> Result<Vec<f64>> {
    if !(from > 0.0) || !from.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "warm-start scale must be positive, got {from}"
        )));
    }
    if weights.len() != cfg.grid.len() {
        return Err(Error::InvalidArgument(format!(
            "warm start has {} weights for {} grid nodes",
            weights.len(),
            cfg.grid.len()
        )));
    }
    let a2 = cfg.alpha * cfg.alpha;
    let factor = (a2 - from * from) / a2;
    let reference = cfg.reference_on_grid()?;
    Ok(weights
        .iter()
        .zip(reference.weights())
        .map(|(w, r)| (w + factor * r).max(0.0))
        .collect())
}

/// Re-projects an iterate whose constraint residual exceeds the projection
/// tolerance, which happens when trial points of very large magnitude were
/// projected.
fn polish(
    out: &mut FbsOutcome,
    projector: &PolyhedronProjector,
    mut value: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<()> {
    let tol = projector.options().tol * projector.residual_scale(&out.x);
    if projector.residual(&out.x) > tol {
        out.x = projector.project(&out.x)?.weights;
        out.value = value(&out.x)?;
    }
    Ok(())
}

fn finish_constrained(
    cfg: &PathConfig,
    projector: &PolyhedronProjector,
    out: FbsOutcome,
    (evaluations, sinkhorn_iterations): (usize, usize),
) -> Result<PathSolution> {
    let residual = projector.residual(&out.x);
    let status = status_of(&out, cfg.fbs.max_outer);
    let scale = 1.0 + cfg.alpha * cfg.alpha;
    Ok(PathSolution {
        measure: DiscreteMeasure::new(cfg.grid.clone(), out.x)?,
        objective: scale * out.value,
        divergence: out.value,
        constraint_residual: residual,
        iterations: out.iterations,
        stationarity: out.stationarity,
        status,
        history: out.history,
        evaluations,
        sinkhorn_iterations,
    })
}

fn status_of(out: &FbsOutcome, max_outer: usize) -> SolveStatus {
    if out.converged {
        SolveStatus::Converged
    } else if out.iterations >= max_outer {
        SolveStatus::MaxIterations
    } else {
        SolveStatus::Stalled
    }
}

/// Options of the rich-limit linear program.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RichOptions {
    /// Fixed proximal step of `x ← P(x - t·1)`.
    pub step: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub projection: ProjectionOptions,
}

impl Default for RichOptions {
    fn default() -> Self {
        Self {
            step: 1.0,
            max_iter: 10_000,
            tol: 1e-10,
            projection: ProjectionOptions::default(),
        }
    }
}

/// Weights of minimal total mass subject to `w ≥ 0, Φw = y`.
#[derive(Clone, Debug)]
pub struct RichSolution {
    pub weights: Vec<f64>,
    pub objective: f64,
    pub constraint_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `Σw` over `{w ≥ 0, Φw = y}` by projected gradient with a fixed step.
///
/// For a linear objective each step is a proximal-point step, which reaches an
/// optimal vertex set in finitely many iterations.
pub fn solve_rich_lp(phi: &FeatureMatrix, y: &[f64], opts: &RichOptions) -> Result<RichSolution> {
    if !(opts.step > 0.0) || !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(
            "rich-limit step and tolerance must be positive".into(),
        ));
    }
    let projector = PolyhedronProjector::new(phi.clone(), y.to_vec(), opts.projection)?;
    let mut x = projector.project(&vec![0.0; phi.cols()])?.weights;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let shifted: Vec<f64> = x.iter().map(|v| v - opts.step).collect();
        let next = projector.project(&shifted)?.weights;
        let change = sup_diff(&next, &x);
        x = next;
        if change / opts.step < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(RichSolution {
        objective: x.iter().sum(),
        constraint_residual: projector.residual(&x),
        weights: x,
        iterations,
        converged,
    })
}

/// The `α = 0` limit on the configured grid.
pub fn solve_rich_limit(grid: Arc<SphereGrid>, data: &Dataset, opts: &RichOptions) -> Result<PathSolution> {
    let phi = feature_matrix(&grid, data)?;
    let sol = solve_rich_lp(&phi, &data.labels(), opts)?;
    Ok(PathSolution {
        measure: DiscreteMeasure::new(grid, sol.weights)?,
        objective: sol.objective,
        divergence: 0.0,
        constraint_residual: sol.constraint_residual,
        iterations: sol.iterations,
        stationarity: 0.0,
        status: if sol.converged {
            SolveStatus::Converged
        } else {
            SolveStatus::MaxIterations
        },
        history: Vec::new(),
        evaluations: 0,
        sinkhorn_iterations: 0,
    })
}

struct PenalizedSmooth<'a> {
    hk: &'a mut HkObjective,
    phi: &'a FeatureMatrix,
    y: &'a [f64],
    weight: f64,
}

impl SmoothObjective for PenalizedSmooth<'_> {
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let r: Vec<f64> = self.phi.apply(x).iter().zip(self.y).map(|(a, b)| a - b).collect();
        let loss: f64 = r.iter().map(|v| v * v).sum();
        let twice_r: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        let mut grad = self.phi.apply_transpose(&twice_r);
        if self.weight == 0.0 {
            return Ok((loss, grad));
        }
        let e = self.hk.evaluate(x)?;
        for (g, h) in grad.iter_mut().zip(&e.gradient) {
            *g += self.weight * h;
        }
        Ok((loss + self.weight * e.value, grad))
    }
}

/// Minimizes `Σ(Φμ - y)² + λ(1+α²)HK_ε(μ, α²μ₀)` over nonnegative weights.
pub fn solve_penalized(cfg: &PathConfig, data: &Dataset) -> Result<PathSolution> {
    cfg.validate()?;
    if !(cfg.lambda > 0.0) {
        return Err(Error::InvalidArgument("penalized mode needs lambda > 0".into()));
    }
    let phi = feature_matrix(&cfg.grid, data)?;
    let y = data.labels();
    let start = cfg.reference_on_grid()?.into_weights();
    let mut hk = cfg.objective()?;
    let weight = cfg.lambda * (1.0 + cfg.alpha * cfg.alpha);
    let mut smooth = PenalizedSmooth {
        hk: &mut hk,
        phi: &phi,
        y: &y,
        weight,
    };
    let out = forward_backward(&mut smooth, &Orthant, start, &cfg.fbs)?;
    let residual = phi
        .apply(&out.x)
        .iter()
        .zip(&y)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let divergence = {
        let r: Vec<f64> = phi.apply(&out.x).iter().zip(&y).map(|(a, b)| a - b).collect();
        (out.value - r.iter().map(|v| v * v).sum::<f64>()) / weight
    };
    Ok(PathSolution {
        measure: DiscreteMeasure::new(cfg.grid.clone(), out.x.clone())?,
        objective: out.value,
        divergence,
        constraint_residual: residual,
        iterations: out.iterations,
        stationarity: out.stationarity,
        status: status_of(&out, cfg.fbs.max_outer),
        history: out.history,
        evaluations: hk.counters().0,
        sinkhorn_iterations: hk.counters().1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(rows: Vec<Vec<f64>>) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn two_variable_projection() {
        for opts in [ProjectionOptions::dykstra(), ProjectionOptions::default()] {
            let w = project_polyhedron(&[0.0, 0.0], &fm(vec![vec![1.0, 1.0]]), &[2.0], opts).unwrap();
            assert!((w[0] - 1.0).abs() < 1e-9 && (w[1] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn feasible_point_is_fixed() {
        let phi = fm(vec![vec![1.0, 2.0, 0.5], vec![0.0, 1.0, 1.0]]);
        let w0 = [0.3, 0.2, 0.9];
        let y = phi.apply(&w0);
        let w = project_polyhedron(&w0, &phi, &y, ProjectionOptions::default()).unwrap();
        assert!(sup_diff(&w, &w0) < 1e-9);
    }

    #[test]
    fn clip_active_projection() {
        // Projection of (-1, 3) onto {w ≥ 0, w1 + w2 = 1} is (0, 1).
        let w = project_polyhedron(
            &[-1.0, 3.0],
            &fm(vec![vec![1.0, 1.0]]),
            &[1.0],
            ProjectionOptions::default(),
        )
        .unwrap();
        assert!(w[0].abs() < 1e-9 && (w[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rank_deficiency_reported() {
        let phi = fm(vec![vec![1.0, 2.0], vec![2.0, 4.0]]);
        match PolyhedronProjector::new(phi, vec![1.0, 2.0], ProjectionOptions::default()) {
            Err(Error::RankDeficient { rank, rows }) => assert_eq!((rank, rows), (1, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn infeasible_reported() {
        for method in [ProjectionMethod::Dykstra, ProjectionMethod::Newton] {
            let opts = ProjectionOptions {
                method,
                tol: 1e-10,
                max_iter: 500,
            };
            let r = project_polyhedron(&[1.0, 1.0], &fm(vec![vec![1.0, 1.0]]), &[-1.0], opts);
            assert!(matches!(r, Err(Error::Infeasible { .. })), "{method:?}");
        }
    }

    #[test]
    fn methods_agree() {
        let phi = fm(vec![vec![1.0, 2.0, 0.5, 0.0, 1.5], vec![0.0, 1.0, 1.0, 2.0, -0.5]]);
        let y = [2.0, 1.0];
        let m = [0.4, -0.3, 1.2, 0.1, -2.0];
        let a = project_polyhedron(&m, &phi, &y, ProjectionOptions::dykstra()).unwrap();
        let b = project_polyhedron(&m, &phi, &y, ProjectionOptions::default()).unwrap();
        assert!(sup_diff(&a, &b) < 1e-8, "{a:?} vs {b:?}");
    }

    #[test]
    fn single_constraint_lp() {
        let phi = fm(vec![vec![0.2, 0.9, 0.5, 0.0]]);
        let sol = solve_rich_lp(&phi, &[1.8], &RichOptions::default()).unwrap();
        assert!(sol.converged);
        assert!((sol.objective - 2.0).abs() < 1e-8, "{}", sol.objective);
        assert!((sol.weights[1] - 2.0).abs() < 1e-8);
    }
}
