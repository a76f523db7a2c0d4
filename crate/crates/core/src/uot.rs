//! Entropic Hellinger–Kantorovich divergence between measures on S³.
//!
//! The divergence is the value of the unbalanced transport problem
//!
//! ```text
//! min_{π ≥ 0}  Σ c_ij π_ij + KL(π1 | a) + KL(πᵀ1 | b) + ε KL(π | a⊗b)
//! ```
//!
//! with `c = -2 log(θ₁ᵀθ₂)` on pairs with positive inner product and `+∞`
//! elsewhere. It is solved by log-domain Sinkhorn with damping exponent
//! `1/(1+ε)`. Two accelerations are used:
//!
//! * after every full iteration the potentials are shifted along the
//!   direction `(f + λ, g - λ)` with the optimal `λ`, which removes the slow
//!   mass mode of unbalanced Sinkhorn;
//! * the potentials are periodically absorbed into a stabilized kernel
//!   `exp((f̂ + ĝ - c)/ε)`, so most half-steps are sparse matrix-vector
//!   products instead of log-sum-exp reductions.
//!
//! Pairs with infinite cost are never stored: the cost is kept in compressed
//! sparse rows.

use crate::error::{Error, Result};
use crate::measures::{total_variation, DiscreteMeasure};
use crate::sphere_grid::{SphereGrid, UnitVector};

/// Re-absorb potentials into the kernel once they drift by this many multiples of ε.
const ABSORB_THRESHOLD: f64 = 30.0;
/// Largest exponent allowed inside the stabilized kernel.
const MAX_EXPONENT: f64 = 700.0;
/// Iterations without a new smallest potential change before relaxation is dropped.
const RELAXATION_PATIENCE: usize = 100;

/// Transport cost restricted to admissible pairs (positive inner product).
#[derive(Clone, Debug)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    cost: Vec<f64>,
}

impl CostMatrix {
    /// Builds the cost between every node of `a` and every node of `b`.
    pub fn between(a: &SphereGrid, b: &SphereGrid) -> Result<Self> {
        if a.dim() != b.dim() {
            return Err(Error::InvalidArgument(format!(
                "grids of dimension {} and {} cannot be compared",
                a.dim(),
                b.dim()
            )));
        }
        let mut row_ptr = Vec::with_capacity(a.len() + 1);
        let mut col_idx = Vec::new();
        let mut cost = Vec::new();
        row_ptr.push(0);
        for p in a.points() {
            for (j, q) in b.points().enumerate() {
                let ip: f64 = p.iter().zip(q).map(|(x, y)| x * y).sum();
                if ip > 0.0 {
                    col_idx.push(j);
                    cost.push(pair_cost(ip));
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            rows: a.len(),
            cols: b.len(),
            row_ptr,
            col_idx,
            cost,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of admissible (finite-cost) pairs.
    pub fn nnz(&self) -> usize {
        self.cost.len()
    }

    /// Cost of the pair `(i, j)`; `+∞` when the pair is masked.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(k) => self.cost[range.start + k],
            Err(_) => f64::INFINITY,
        }
    }

    pub fn is_admissible(&self, i: usize, j: usize) -> bool {
        self.entry(i, j).is_finite()
    }

    #[inline]
    fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.cost[r])
    }
}

/// `-2 log(ip)` for a positive inner product, clamped so identical points cost exactly 0.
fn pair_cost(ip: f64) -> f64 {
    if ip >= 1.0 {
        0.0
    } else {
        -2.0 * ip.ln()
    }
}

/// Cost between two grids.
pub fn cost_matrix(a: &SphereGrid, b: &SphereGrid) -> Result<CostMatrix> {
    CostMatrix::between(a, b)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornOptions {
    pub eps: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Over-relaxation factor `ω` in `x ← x + ω (T(x) - x)`; 1 is plain Sinkhorn.
    /// Falls back to 1 if the potential change grows tenfold above its best value
    /// or stops improving.
    pub relaxation: f64,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            eps: 1e-2,
            tol: 1e-9,
            max_iter: 5000,
            relaxation: 1.8,
        }
    }
}

impl SinkhornOptions {
    pub fn with_eps(eps: f64) -> Self {
        Self { eps, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(Error::InvalidArgument(format!(
                "relaxation must lie in (0, 2), got {}",
                self.relaxation
            )));
        }
        Ok(())
    }
}

/// Outcome of one entropic HK evaluation.
#[derive(Clone, Debug)]
pub struct UotResult {
    /// Objective value of the plan induced by the final potentials.
    pub value: f64,
    /// First potential, one entry per node of the first measure.
    pub f: Vec<f64>,
    /// Second potential, one entry per node of the second measure.
    pub g: Vec<f64>,
    /// `S_i = Σ_j b_j exp((f_i + g_j - c_ij)/ε)`, the plan's row mass per unit of `a_i`.
    pub row_density: Vec<f64>,
    /// Column counterpart of `row_density`.
    pub col_density: Vec<f64>,
    pub iterations: usize,
    /// Sup-norm change of the potentials over the last iteration.
    pub marginal_residual: f64,
    pub converged: bool,
    pub eps: f64,
    pub mass_a: f64,
    pub mass_b: f64,
    /// Potential change after each iteration.
    pub history: Vec<f64>,
}

impl UotResult {
    /// Total mass of the plan.
    pub fn plan_mass(&self, a: &[f64]) -> f64 {
        a.iter().zip(&self.row_density).map(|(a, s)| a * s).sum()
    }
}

/// Reusable Sinkhorn solver over a fixed cost.
#[derive(Clone, Debug)]
pub struct Sinkhorn<'c> {
    cost: &'c CostMatrix,
    opts: SinkhornOptions,
}

struct Kernel {
    values: Vec<f64>,
    f_hat: Vec<f64>,
    g_hat: Vec<f64>,
    row_valid: Vec<bool>,
    col_valid: Vec<bool>,
}

impl<'c> Sinkhorn<'c> {
    pub fn new(cost: &'c CostMatrix, opts: SinkhornOptions) -> Result<Self> {
        opts.validate()?;
        Ok(Self { cost, opts })
    }

    pub fn options(&self) -> SinkhornOptions {
        self.opts
    }

    /// Solves for weights `a` (rows) and `b` (columns), optionally warm-started.
    pub fn solve(&self, a: &[f64], b: &[f64], warm: Option<(&[f64], &[f64])>) -> Result<UotResult> {
        let cost = self.cost;
        check_weights(a, cost.rows, "first")?;
        check_weights(b, cost.cols, "second")?;
        let eps = self.opts.eps;
        let mass_a: f64 = a.iter().sum();
        let mass_b: f64 = b.iter().sum();

        if mass_a == 0.0 || mass_b == 0.0 {
            return Ok(self.degenerate(a, b, mass_a, mass_b));
        }

        let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
        let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
        let kappa = 1.0 / (1.0 + eps);

        let (mut f, mut g) = match warm {
            Some((wf, wg)) if wf.len() == cost.rows && wg.len() == cost.cols => (wf.to_vec(), wg.to_vec()),
            _ => (vec![0.0; cost.rows], vec![0.0; cost.cols]),
        };
        let mut f_prev = f.clone();
        let mut g_prev = g.clone();
        let mut kernel: Option<Kernel> = None;
        let mut history = Vec::new();
        let mut change = f64::INFINITY;
        let mut iterations = 0;
        let mut converged = false;
        let mut omega = self.opts.relaxation;
        let mut best_change = f64::INFINITY;
        let mut best_at = 0;

        while iterations < self.opts.max_iter {
            iterations += 1;
            if iterations == 1 {
                self.row_update_log(&log_b, &g, kappa, &mut f, None);
                self.col_update_log(&log_a, &f, kappa, &mut g, None);
            } else {
                let stale = match &kernel {
                    None => true,
                    Some(k) => drift(&f, &k.f_hat, eps) || drift(&g, &k.g_hat, eps),
                };
                if stale {
                    kernel = Some(self.absorb(&f, &g));
                }
                let k = kernel.as_ref().expect("kernel present");
                self.row_update_kernel(k, b, &log_b, &g, kappa, &mut f);
                relax(&mut f, &f_prev, omega);
                self.col_update_kernel(k, a, &log_a, &f, kappa, &mut g);
                relax(&mut g, &g_prev, omega);
            }
            translate(a, b, &mut f, &mut g);

            change = sup_change(&f, &f_prev).max(sup_change(&g, &g_prev));
            history.push(change);
            if change.is_nan() {
                return Err(Error::NonFinite("sinkhorn potentials"));
            }
            if change < self.opts.tol {
                converged = true;
                break;
            }
            if change < best_change {
                best_change = change;
                best_at = iterations;
            }
            if omega != 1.0 && (change > 10.0 * best_change || iterations - best_at > RELAXATION_PATIENCE) {
                omega = 1.0;
                best_at = iterations;
            }
            f_prev.copy_from_slice(&f);
            g_prev.copy_from_slice(&g);
        }

        let (row_density, col_density) = self.densities(&log_a, &log_b, &f, &g);
        let value = primal_value(a, b, &f, &g, &row_density, &col_density, eps, mass_a, mass_b);
        if !value.is_finite() {
            return Err(Error::NonFinite("transport value"));
        }
        Ok(UotResult {
            value,
            f,
            g,
            row_density,
            col_density,
            iterations,
            marginal_residual: change,
            converged,
            eps,
            mass_a,
            mass_b,
            history,
        })
    }

    /// One of the measures vanishes: the optimal plan is zero.
    fn degenerate(&self, a: &[f64], b: &[f64], mass_a: f64, mass_b: f64) -> UotResult {
        let eps = self.opts.eps;
        let mut f = vec![f64::INFINITY; a.len()];
        let mut g = vec![f64::INFINITY; b.len()];
        // Rows facing positive mass on the other side have unbounded favorable potential.
        if mass_a == 0.0 && mass_b > 0.0 {
            for (i, fi) in f.iter_mut().enumerate() {
                let (cols, _) = self.cost.row(i);
                if cols.iter().any(|&j| b[j] > 0.0) {
                    *fi = f64::NEG_INFINITY;
                }
            }
        }
        if mass_b == 0.0 && mass_a > 0.0 {
            for (i, &ai) in a.iter().enumerate() {
                if ai > 0.0 {
                    for &j in self.cost.row(i).0 {
                        g[j] = f64::NEG_INFINITY;
                    }
                }
            }
        }
        let row_density = f
            .iter()
            .map(|&x| if x == f64::NEG_INFINITY { f64::INFINITY } else { 0.0 })
            .collect();
        let col_density = g
            .iter()
            .map(|&x| if x == f64::NEG_INFINITY { f64::INFINITY } else { 0.0 })
            .collect();
        UotResult {
            value: mass_a + mass_b,
            f,
            g,
            row_density,
            col_density,
            iterations: 0,
            marginal_residual: 0.0,
            converged: true,
            eps,
            mass_a,
            mass_b,
            history: Vec::new(),
        }
    }

    fn absorb(&self, f: &[f64], g: &[f64]) -> Kernel {
        let eps = self.opts.eps;
        let row_valid: Vec<bool> = f.iter().map(|x| x.is_finite()).collect();
        let col_valid: Vec<bool> = g.iter().map(|x| x.is_finite()).collect();
        let f_hat: Vec<f64> = f.iter().map(|&x| if x.is_finite() { x } else { 0.0 }).collect();
        let g_hat: Vec<f64> = g.iter().map(|&x| if x.is_finite() { x } else { 0.0 }).collect();
        let mut values = Vec::with_capacity(self.cost.nnz());
        for (i, &fi) in f_hat.iter().enumerate() {
            let (cols, costs) = self.cost.row(i);
            for (&j, &c) in cols.iter().zip(costs) {
                values.push(((fi + g_hat[j] - c) / eps).min(MAX_EXPONENT).exp());
            }
        }
        Kernel {
            values,
            f_hat,
            g_hat,
            row_valid,
            col_valid,
        }
    }

    fn row_lse(&self, i: usize, log_b: &[f64], g: &[f64]) -> f64 {
        let eps = self.opts.eps;
        let (cols, costs) = self.cost.row(i);
        let mut max = f64::NEG_INFINITY;
        for (&j, &c) in cols.iter().zip(costs) {
            let v = log_b[j] + (g[j] - c) / eps;
            if v > max {
                max = v;
            }
        }
        if !max.is_finite() {
            return max;
        }
        let mut sum = 0.0;
        for (&j, &c) in cols.iter().zip(costs) {
            let v = log_b[j] + (g[j] - c) / eps;
            if v > f64::NEG_INFINITY {
                sum += (v - max).exp();
            }
        }
        max + sum.ln()
    }

    fn row_update_log(&self, log_b: &[f64], g: &[f64], kappa: f64, f: &mut [f64], only: Option<&[bool]>) {
        let eps = self.opts.eps;
        for i in 0..self.cost.rows {
            if only.is_some_and(|o| !o[i]) {
                continue;
            }
            f[i] = -eps * kappa * self.row_lse(i, log_b, g);
        }
    }

    fn col_update_log(&self, log_a: &[f64], f: &[f64], kappa: f64, g: &mut [f64], only: Option<&[bool]>) {
        let eps = self.opts.eps;
        let lse = self.col_lse(log_a, f, only);
        for (j, gj) in g.iter_mut().enumerate() {
            if only.is_none_or(|o| o[j]) {
                *gj = -eps * kappa * lse[j];
            }
        }
    }

    /// Column log-sum-exp of `log a_i + (f_i - c_ij)/ε`, scattered over the rows.
    /// Columns outside `only` are left at `-∞`.
    fn col_lse(&self, log_a: &[f64], f: &[f64], only: Option<&[bool]>) -> Vec<f64> {
        let eps = self.opts.eps;
        let m = self.cost.cols;
        let active = |j: usize| only.is_none_or(|o| o[j]);
        let mut max = vec![f64::NEG_INFINITY; m];
        for i in 0..self.cost.rows {
            if log_a[i] == f64::NEG_INFINITY {
                continue;
            }
            let (cols, costs) = self.cost.row(i);
            for (&j, &c) in cols.iter().zip(costs) {
                if active(j) {
                    let v = log_a[i] + (f[i] - c) / eps;
                    if v > max[j] {
                        max[j] = v;
                    }
                }
            }
        }
        let mut sum = vec![0.0; m];
        for i in 0..self.cost.rows {
            if log_a[i] == f64::NEG_INFINITY {
                continue;
            }
            let (cols, costs) = self.cost.row(i);
            for (&j, &c) in cols.iter().zip(costs) {
                if active(j) && max[j].is_finite() {
                    let v = log_a[i] + (f[i] - c) / eps;
                    if v > f64::NEG_INFINITY {
                        sum[j] += (v - max[j]).exp();
                    }
                }
            }
        }
        max.iter()
            .zip(&sum)
            .map(|(&mx, &s)| if mx.is_finite() { mx + s.ln() } else { mx })
            .collect()
    }

    fn row_update_kernel(&self, k: &Kernel, b: &[f64], log_b: &[f64], g: &[f64], kappa: f64, f: &mut [f64]) {
        let eps = self.opts.eps;
        let v: Vec<f64> = b
            .iter()
            .zip(g)
            .zip(&k.g_hat)
            .map(|((&bj, &gj), &gh)| if bj > 0.0 { bj * ((gj - gh) / eps).exp() } else { 0.0 })
            .collect();
        let mut fallback = vec![false; self.cost.rows];
        let mut any_fallback = false;
        for i in 0..self.cost.rows {
            let r = self.cost.row_ptr[i]..self.cost.row_ptr[i + 1];
            let s: f64 = self.cost.col_idx[r.clone()]
                .iter()
                .zip(&k.values[r])
                .map(|(&j, &kv)| kv * v[j])
                .sum();
            if k.row_valid[i] && s > 0.0 && s.is_finite() {
                f[i] = kappa * (k.f_hat[i] - eps * s.ln());
            } else {
                fallback[i] = true;
                any_fallback = true;
            }
        }
        if any_fallback {
            self.row_update_log(log_b, g, kappa, f, Some(&fallback));
        }
    }

    fn col_update_kernel(&self, k: &Kernel, a: &[f64], log_a: &[f64], f: &[f64], kappa: f64, g: &mut [f64]) {
        let eps = self.opts.eps;
        let mut t = vec![0.0; self.cost.cols];
        for i in 0..self.cost.rows {
            if a[i] == 0.0 {
                continue;
            }
            let u = a[i] * ((f[i] - k.f_hat[i]) / eps).exp();
            let r = self.cost.row_ptr[i]..self.cost.row_ptr[i + 1];
            for (&j, &kv) in self.cost.col_idx[r.clone()].iter().zip(&k.values[r]) {
                t[j] += kv * u;
            }
        }
        let mut fallback = vec![false; self.cost.cols];
        let mut any_fallback = false;
        for j in 0..self.cost.cols {
            let s = t[j];
            if k.col_valid[j] && s > 0.0 && s.is_finite() {
                g[j] = kappa * (k.g_hat[j] - eps * s.ln());
            } else {
                fallback[j] = true;
                any_fallback = true;
            }
        }
        if any_fallback {
            self.col_update_log(log_a, f, kappa, g, Some(&fallback));
        }
    }

    /// Row and column densities of the plan `a_i b_j exp((f_i + g_j - c_ij)/ε)`.
    fn densities(&self, log_a: &[f64], log_b: &[f64], f: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let eps = self.opts.eps;
        let row: Vec<f64> = (0..self.cost.rows)
            .map(|i| combine(f[i] / eps, self.row_lse(i, log_b, g)))
            .collect();
        let col_lse = self.col_lse(log_a, f, None);
        let col: Vec<f64> = (0..self.cost.cols).map(|j| combine(g[j] / eps, col_lse[j])).collect();
        (row, col)
    }
}

/// `exp(x + y)` with `+∞ + -∞` read as an empty sum.
fn combine(x: f64, y: f64) -> f64 {
    if y == f64::NEG_INFINITY || x == f64::NEG_INFINITY {
        0.0
    } else {
        (x + y).exp()
    }
}

fn drift(x: &[f64], hat: &[f64], eps: f64) -> bool {
    x.iter()
        .zip(hat)
        .any(|(&v, &h)| v.is_finite() && ((v - h) / eps).abs() > ABSORB_THRESHOLD)
}

/// Optimal shift `f + λ, g - λ` of the dual.
fn relax(x: &mut [f64], old: &[f64], omega: f64) {
    if omega == 1.0 {
        return;
    }
    for (x, &o) in x.iter_mut().zip(old) {
        if x.is_finite() && o.is_finite() {
            *x = o + omega * (*x - o);
        }
    }
}

fn translate(a: &[f64], b: &[f64], f: &mut [f64], g: &mut [f64]) {
    let sa: f64 = a
        .iter()
        .zip(f.iter())
        .filter(|(&w, _)| w > 0.0)
        .map(|(w, x)| w * (-x).exp())
        .sum();
    let sb: f64 = b
        .iter()
        .zip(g.iter())
        .filter(|(&w, _)| w > 0.0)
        .map(|(w, x)| w * (-x).exp())
        .sum();
    if sa > 0.0 && sb > 0.0 && sa.is_finite() && sb.is_finite() {
        let lambda = 0.5 * (sa / sb).ln();
        f.iter_mut().filter(|x| x.is_finite()).for_each(|x| *x += lambda);
        g.iter_mut().filter(|x| x.is_finite()).for_each(|x| *x -= lambda);
    }
}

fn sup_change(new: &[f64], old: &[f64]) -> f64 {
    let mut m: f64 = 0.0;
    for (&x, &y) in new.iter().zip(old) {
        if x.is_finite() && y.is_finite() {
            m = m.max((x - y).abs());
        } else if x != y {
            return f64::INFINITY;
        }
    }
    m
}

/// `Σ w (S log S - S + 1)`, the KL divergence of the marginal `w·S` from `w`.
fn marginal_kl(w: &[f64], s: &[f64]) -> f64 {
    w.iter()
        .zip(s)
        .filter(|(&wi, _)| wi > 0.0)
        .map(|(&wi, &si)| if si > 0.0 { wi * (si * si.ln() - si + 1.0) } else { wi })
        .sum()
}

/// `Σ w S p` with zero-mass terms dropped.
fn potential_pairing(w: &[f64], s: &[f64], p: &[f64]) -> f64 {
    w.iter()
        .zip(s)
        .zip(p)
        .filter(|((&wi, &si), _)| wi > 0.0 && si > 0.0)
        .map(|((wi, si), pi)| wi * si * pi)
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn primal_value(
    a: &[f64],
    b: &[f64],
    f: &[f64],
    g: &[f64],
    s: &[f64],
    t: &[f64],
    eps: f64,
    mass_a: f64,
    mass_b: f64,
) -> f64 {
    let plan_mass: f64 = a.iter().zip(s).map(|(x, y)| x * y).sum();
    potential_pairing(a, s, f) + potential_pairing(b, t, g) - eps * (plan_mass - mass_a * mass_b)
        + marginal_kl(a, s)
        + marginal_kl(b, t)
}

fn check_weights(w: &[f64], len: usize, which: &str) -> Result<()> {
    if w.len() != len {
        return Err(Error::InvalidArgument(format!(
            "{which} measure has {} weights, cost expects {len}",
            w.len()
        )));
    }
    if let Some(x) = w.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "{which} measure has invalid weight {x}"
        )));
    }
    Ok(())
}

/// Entropic HK divergence between two measures.
pub fn hk_entropic(mu: &DiscreteMeasure, nu: &DiscreteMeasure, opts: &SinkhornOptions) -> Result<UotResult> {
    let cost = CostMatrix::between(mu.grid(), nu.grid())?;
    Sinkhorn::new(&cost, *opts)?.solve(mu.weights(), nu.weights(), None)
}

/// Gradient of the divergence with respect to the first measure's weights.
pub fn hk_gradient(r: &UotResult, mu: &DiscreteMeasure) -> Result<Vec<f64>> {
    gradient_from_result(r, mu.weights())
}

pub(crate) fn gradient_from_result(r: &UotResult, a: &[f64]) -> Result<Vec<f64>> {
    if !r.converged {
        return Err(Error::StalePotentials {
            change: r.marginal_residual,
        });
    }
    if a.len() != r.f.len() {
        return Err(Error::InvalidArgument(format!(
            "measure has {} weights, potentials cover {}",
            a.len(),
            r.f.len()
        )));
    }
    Ok(r.f
        .iter()
        .zip(&r.row_density)
        .map(|(&f, &s)| 1.0 - (-f).exp() - r.eps * (s - r.mass_b))
        .collect())
}

/// Divergence between single Dirac masses `a δ_{t1}` and `b δ_{t2}` without regularization.
pub fn hk_dirac_exact(a: f64, t1: &UnitVector, b: f64, t2: &UnitVector) -> Result<f64> {
    if !(a >= 0.0) || !(b >= 0.0) {
        return Err(Error::InvalidArgument("Dirac masses must be nonnegative".into()));
    }
    if t1.dim() != t2.dim() {
        return Err(Error::InvalidArgument("Dirac directions differ in dimension".into()));
    }
    let c = t1.dot(t2);
    Ok(if c > 0.0 {
        a + b - 2.0 * (a * b).sqrt() * c.min(1.0)
    } else {
        a + b
    })
}

/// Largest plan size accepted by [`hk_bruteforce`].
pub const BRUTEFORCE_MAX_ENTRIES: usize = 64;
/// Default sweep budget of [`hk_bruteforce`].
pub const BRUTEFORCE_DEFAULT_ITERS: usize = 100_000;

/// Unregularized divergence by exact coordinate minimization over the plan entries.
///
/// Each entry update solves `c + log((r' + t)/a_i) + log((c' + t)/b_j) = 0` in
/// closed form, where `r'` and `c'` are the row and column masses without the
/// entry. Sweeps stop once no entry moves by more than `1e-15` relative to the
/// total mass, or after `iters` sweeps. The pair is put in a canonical order
/// first, so the result is exactly symmetric.
pub fn hk_bruteforce(mu: &DiscreteMeasure, nu: &DiscreteMeasure, iters: usize) -> Result<f64> {
    if canonical_key(nu) < canonical_key(mu) {
        bruteforce_ordered(nu, mu, iters)
    } else {
        bruteforce_ordered(mu, nu, iters)
    }
}

fn canonical_key(m: &DiscreteMeasure) -> Vec<u64> {
    let mut key: Vec<u64> = vec![m.len() as u64];
    key.extend(m.weights().iter().map(|w| w.to_bits()));
    for j in 0..m.len() {
        key.extend(m.grid().point(j).iter().map(|c| c.to_bits()));
    }
    key
}

fn bruteforce_ordered(mu: &DiscreteMeasure, nu: &DiscreteMeasure, iters: usize) -> Result<f64> {
    let a = mu.weights();
    let b = nu.weights();
    let rows: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..b.len()).filter(|&j| b[j] > 0.0).collect();
    if rows.len() * cols.len() > BRUTEFORCE_MAX_ENTRIES {
        return Err(Error::InvalidArgument(format!(
            "brute force limited to {BRUTEFORCE_MAX_ENTRIES} plan entries, got {}x{}",
            rows.len(),
            cols.len()
        )));
    }
    if mu.grid().dim() != nu.grid().dim() {
        return Err(Error::InvalidArgument(
            "measures live on spheres of different dimension".into(),
        ));
    }
    let mass = total_variation(mu) + total_variation(nu);
    if rows.is_empty() || cols.is_empty() {
        return Ok(mass);
    }

    struct Entry {
        r: usize,
        c: usize,
        target: f64,
        cost: f64,
    }
    let sa: Vec<f64> = rows.iter().map(|&i| a[i]).collect();
    let sb: Vec<f64> = cols.iter().map(|&j| b[j]).collect();
    let mut entries = Vec::new();
    let mut plan = Vec::new();
    for (r, &i) in rows.iter().enumerate() {
        for (c, &j) in cols.iter().enumerate() {
            let ip: f64 = mu
                .grid()
                .point(i)
                .iter()
                .zip(nu.grid().point(j))
                .map(|(x, y)| x * y)
                .sum();
            if ip > 0.0 {
                let cost = pair_cost(ip);
                entries.push(Entry {
                    r,
                    c,
                    target: sa[r] * sb[c] * (-cost).exp(),
                    cost,
                });
                plan.push((sa[r] * sb[c]).sqrt() * ip.min(1.0));
            }
        }
    }
    let mut row_mass = vec![0.0; rows.len()];
    let mut col_mass = vec![0.0; cols.len()];
    for (e, &p) in entries.iter().zip(&plan) {
        row_mass[e.r] += p;
        col_mass[e.c] += p;
    }
    let stop = 1e-15 * mass;
    for _ in 0..iters {
        let mut moved: f64 = 0.0;
        for (e, p) in entries.iter().zip(plan.iter_mut()) {
            let rp = (row_mass[e.r] - *p).max(0.0);
            let cp = (col_mass[e.c] - *p).max(0.0);
            let d = rp - cp;
            let t = ((-(rp + cp) + (d * d + 4.0 * e.target).sqrt()) / 2.0).max(0.0);
            moved = moved.max((t - *p).abs());
            row_mass[e.r] = rp + t;
            col_mass[e.c] = cp + t;
            *p = t;
        }
        if moved <= stop {
            break;
        }
    }
    // Recompute marginals from scratch to avoid accumulated drift.
    row_mass.iter_mut().for_each(|x| *x = 0.0);
    col_mass.iter_mut().for_each(|x| *x = 0.0);
    let mut transport = 0.0;
    for (e, &p) in entries.iter().zip(&plan) {
        row_mass[e.r] += p;
        col_mass[e.c] += p;
        transport += e.cost * p;
    }
    Ok(transport + kl(&row_mass, &sa) + kl(&col_mass, &sb))
}

/// `Σ p log(p/q) - p + q` with `0 log 0 = 0`.
fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| if pi > 0.0 { pi * (pi / qi).ln() - pi + qi } else { qi })
        .sum()
}

/// `μ ↦ HK_ε(μ, ν)` for a fixed target, with `μ` on a fixed source grid and
/// warm-started potentials.
///
/// With `debias` set, the value becomes
/// `OT(μ,ν) - ½OT(μ,μ) - ½OT(ν,ν) + (ε/2)(m_μ - m_ν)²`.
#[derive(Clone, Debug)]
pub struct HkObjective {
    cost: CostMatrix,
    /// Source-to-source cost for the self term; present only when debiasing.
    self_cost: Option<CostMatrix>,
    opts: SinkhornOptions,
    target: Vec<f64>,
    debias: bool,
    target_self: f64,
    warm: Option<(Vec<f64>, Vec<f64>)>,
    warm_self: Option<(Vec<f64>, Vec<f64>)>,
    evaluations: usize,
    sinkhorn_iterations: usize,
}

/// Value and gradient of [`HkObjective`] at one point.
#[derive(Clone, Debug)]
pub struct HkEvaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
}

impl HkObjective {
    /// Source grid equal to the target's grid.
    pub fn new(target: &DiscreteMeasure, opts: SinkhornOptions, debias: bool) -> Result<Self> {
        Self::on_grid(target.grid(), target, opts, debias)
    }

    pub fn on_grid(source: &SphereGrid, target: &DiscreteMeasure, opts: SinkhornOptions, debias: bool) -> Result<Self> {
        let cost = CostMatrix::between(source, target.grid())?;
        let self_cost = match debias {
            true if source == target.grid().as_ref() => Some(cost.clone()),
            true => Some(CostMatrix::between(source, source)?),
            false => None,
        };
        let mut obj = Self {
            cost,
            self_cost,
            opts,
            target: target.weights().to_vec(),
            debias,
            target_self: 0.0,
            warm: None,
            warm_self: None,
            evaluations: 0,
            sinkhorn_iterations: 0,
        };
        if debias {
            let target_cost = CostMatrix::between(target.grid(), target.grid())?;
            let r = Self::solve_with(&target_cost, opts, &obj.target, &obj.target, None)?;
            obj.target_self = r.value;
        }
        Ok(obj)
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn debiased(&self) -> bool {
        self.debias
    }

    pub fn options(&self) -> SinkhornOptions {
        self.opts
    }

    /// Number of evaluations and total Sinkhorn iterations so far.
    pub fn counters(&self) -> (usize, usize) {
        (self.evaluations, self.sinkhorn_iterations)
    }

    fn solve_with(
        cost: &CostMatrix,
        opts: SinkhornOptions,
        a: &[f64],
        b: &[f64],
        warm: Option<&(Vec<f64>, Vec<f64>)>,
    ) -> Result<UotResult> {
        let solver = Sinkhorn::new(cost, opts)?;
        let r = solver.solve(a, b, warm.map(|(f, g)| (f.as_slice(), g.as_slice())))?;
        if !r.converged {
            return Err(Error::StalePotentials {
                change: r.marginal_residual,
            });
        }
        Ok(r)
    }

    fn warm_ok(w: &Option<(Vec<f64>, Vec<f64>)>) -> Option<&(Vec<f64>, Vec<f64>)> {
        w.as_ref().filter(|(f, g)| f.iter().chain(g).all(|x| x.is_finite()))
    }

    /// Divergence value only.
    pub fn value(&mut self, a: &[f64]) -> Result<f64> {
        Ok(self.evaluate(a)?.value)
    }

    /// Divergence value and gradient at `a`.
    pub fn evaluate(&mut self, a: &[f64]) -> Result<HkEvaluation> {
        if a.len() != self.cost.rows() {
            return Err(Error::InvalidArgument(format!(
                "{} weights for a source grid of {} nodes",
                a.len(),
                self.cost.rows()
            )));
        }
        let r = Self::solve_with(&self.cost, self.opts, a, &self.target, Self::warm_ok(&self.warm))?;
        let mut gradient = gradient_from_result(&r, a)?;
        let mut value = r.value;
        let mut iterations = r.iterations;
        if r.f.iter().chain(&r.g).all(|x| x.is_finite()) {
            self.warm = Some((r.f, r.g));
        }
        if let Some(self_cost) = &self.self_cost {
            let s = Self::solve_with(self_cost, self.opts, a, a, Self::warm_ok(&self.warm_self))?;
            let self_grad = gradient_from_result(&s, a)?;
            let ma: f64 = a.iter().sum();
            let mb: f64 = self.target.iter().sum();
            let eps = self.opts.eps;
            value = value - 0.5 * s.value - 0.5 * self.target_self + 0.5 * eps * (ma - mb).powi(2);
            for (gi, si) in gradient.iter_mut().zip(&self_grad) {
                *gi += -si + eps * (ma - mb);
            }
            iterations += s.iterations;
            if s.f.iter().chain(&s.g).all(|x| x.is_finite()) {
                self.warm_self = Some((s.f, s.g));
            }
        }
        if gradient.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("divergence gradient"));
        }
        self.evaluations += 1;
        self.sinkhorn_iterations += iterations;
        Ok(HkEvaluation {
            value,
            gradient,
            iterations,
        })
    }
}
