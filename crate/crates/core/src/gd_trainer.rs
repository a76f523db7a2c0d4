//! Full-batch gradient descent on the scaled finite-width network
//! `x ↦ (β²/m) Σ_l w1_l (w2_lᵀx)⁺`, started from the grid `P`.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::measures::{pi2_project, DiscreteMeasure, ParamAtom};
use crate::relu_model::{pre_activation, Dataset};
use crate::sphere_grid::{GridLabel, SphereGrid};

/// Network parameters `(w1, w2)` with output scale `β`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamCloud {
    pub atoms: Vec<[f64; 4]>,
    pub beta: f64,
}

impl ParamCloud {
    pub fn m(&self) -> usize {
        self.atoms.len()
    }

    /// `(β²/m) Σ_l φ(w_l, x)` at each lifted input.
    pub fn predict(&self, inputs: &[[f64; 3]]) -> Vec<f64> {
        let scale = self.beta * self.beta / self.m() as f64;
        inputs
            .iter()
            .map(|x| {
                scale
                    * self
                        .atoms
                        .iter()
                        .map(|w| w[0] * pre_activation(w, x).max(0.0))
                        .sum::<f64>()
            })
            .collect()
    }

    /// Writes `w1,w2x,w2y,w2bias` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "w1,w2x,w2y,w2bias")?;
        for w in &self.atoms {
            let row: Vec<String> = w.iter().map(|v| fmt_f64(*v)).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// One atom per node of `p`, split as `(first coordinate, last three)`.
pub fn init_from_grid(p: &SphereGrid, beta: f64) -> Result<ParamCloud> {
    if p.is_empty() || p.dim() != 4 {
        return Err(Error::InvalidArgument(
            "initialization needs a nonempty grid on S3".into(),
        ));
    }
    if p.label() != GridLabel::P && p.label() != GridLabel::Custom {
        return Err(Error::InvalidArgument("initialization grid must be P or custom".into()));
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    Ok(ParamCloud {
        atoms: p.points().map(|q| [q[0], q[1], q[2], q[3]]).collect(),
        beta,
    })
}

/// `Σ_k (pred_k - y_k)²` and its gradient with respect to every atom.
pub fn loss_and_grad(pc: &ParamCloud, data: &Dataset) -> (f64, Vec<[f64; 4]>) {
    let inputs = data.lifted_inputs();
    let y = data.labels();
    let residual: Vec<f64> = pc.predict(&inputs).iter().zip(&y).map(|(p, y)| p - y).collect();
    let loss = residual.iter().map(|r| r * r).sum();
    let scale = 2.0 * pc.beta * pc.beta / pc.m() as f64;
    let grads = pc
        .atoms
        .iter()
        .map(|w| {
            let mut g = [0.0; 4];
            for (x, r) in inputs.iter().zip(&residual) {
                let z = pre_activation(w, x);
                if z > 0.0 {
                    let c = scale * r;
                    g[0] += c * z;
                    g[1] += c * w[0] * x[0];
                    g[2] += c * w[0] * x[1];
                    g[3] += c * w[0] * x[2];
                }
            }
            g
        })
        .collect();
    (loss, grads)
}

fn loss_only(pc: &ParamCloud, data: &Dataset) -> f64 {
    pc.predict(&data.lifted_inputs())
        .iter()
        .zip(data.labels())
        .map(|(p, y)| (p - y) * (p - y))
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GdConfig {
    /// Step size; `None` picks `m / (β⁴ λ_max(K))` from the tangent kernel at initialization.
    pub step: Option<f64>,
    pub loss_tol: f64,
    pub max_iter: usize,
    /// Reserved; training is deterministic.
    pub seed: u64,
    /// Factor applied to the step after each accepted iteration, capped at the
    /// initial step (1 keeps every halving permanent).
    pub step_growth: f64,
    pub max_halvings: usize,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self {
            step: None,
            loss_tol: 1e-8,
            max_iter: 500_000,
            seed: 0,
            step_growth: 2.0,
            max_halvings: 60,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub cloud: ParamCloud,
    /// Loss before the first step and after every accepted step.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_step: f64,
}

impl TrainResult {
    pub fn write_history_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "iteration,loss")?;
        for (i, l) in self.history.iter().enumerate() {
            writeln!(out, "{i},{}", fmt_f64(*l))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Step `m / (β⁴ λ_max(K))`, with `K` the tangent-kernel Gram matrix of the cloud.
pub fn natural_step(pc: &ParamCloud, data: &Dataset) -> f64 {
    let inputs = data.lifted_inputs();
    let n = inputs.len();
    let m = pc.m() as f64;
    let mut k = vec![0.0; n * n];
    for w in &pc.atoms {
        let feats: Vec<[f64; 4]> = inputs
            .iter()
            .map(|x| {
                let z = pre_activation(w, x);
                if z > 0.0 {
                    [z, w[0] * x[0], w[0] * x[1], w[0] * x[2]]
                } else {
                    [0.0; 4]
                }
            })
            .collect();
        for a in 0..n {
            for b in 0..n {
                k[a * n + b] += feats[a].iter().zip(&feats[b]).map(|(u, v)| u * v).sum::<f64>() / m;
            }
        }
    }
    // Power iteration for the largest eigenvalue of the PSD matrix.
    let mut v = vec![1.0; n];
    let mut lambda = 0.0;
    for _ in 0..200 {
        let kv: Vec<f64> = (0..n).map(|a| (0..n).map(|b| k[a * n + b] * v[b]).sum()).collect();
        let norm = kv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        lambda = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = kv.iter().map(|x| x / norm).collect();
    }
    let b4 = pc.beta.powi(4);
    if lambda > 0.0 {
        m / (b4 * lambda)
    } else {
        1.0
    }
}

/// Full-batch gradient descent, halving the step whenever the loss would increase
/// and letting it grow back by `step_growth` after accepted iterations.
pub fn train(pc: &ParamCloud, data: &Dataset, cfg: &GdConfig) -> Result<TrainResult> {
    if !(cfg.loss_tol > 0.0) || cfg.max_iter == 0 || !(cfg.step_growth >= 1.0) {
        return Err(Error::InvalidArgument(
            "loss_tol and max_iter must be positive and step_growth >= 1".into(),
        ));
    }
    let step0 = match cfg.step {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => return Err(Error::InvalidArgument(format!("step must be positive, got {s}"))),
        None => natural_step(pc, data),
    };
    let mut step = step0;
    let mut cloud = pc.clone();
    let (mut loss, mut grads) = loss_and_grad(&cloud, data);
    let mut history = vec![loss];
    let mut iterations = 0;
    while loss >= cfg.loss_tol && iterations < cfg.max_iter {
        let mut halvings = 0;
        let (next, next_loss) = loop {
            let mut cand = cloud.clone();
            for (w, g) in cand.atoms.iter_mut().zip(&grads) {
                for c in 0..4 {
                    w[c] -= step * g[c];
                }
            }
            let l = loss_only(&cand, data);
            if l <= loss {
                break (cand, l);
            }
            if halvings >= cfg.max_halvings {
                return Err(Error::NoDescent { halvings });
            }
            halvings += 1;
            step *= 0.5;
        };
        if !next_loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        cloud = next;
        iterations += 1;
        let (l, g) = loss_and_grad(&cloud, data);
        loss = l;
        grads = g;
        history.push(loss);
        step = (step * cfg.step_growth).min(step0);
    }
    Ok(TrainResult {
        converged: loss < cfg.loss_tol,
        cloud,
        history,
        iterations,
        final_step: step,
    })
}

/// `Π₂` of the scaled atoms `β·w_l` with mass `1/m` each.
pub fn empirical_measure(pc: &ParamCloud, grid: Arc<SphereGrid>) -> Result<DiscreteMeasure> {
    let mass = 1.0 / pc.m() as f64;
    let atoms: Vec<ParamAtom> = pc
        .atoms
        .iter()
        .map(|w| ParamAtom::new(pc.beta * w[0], [pc.beta * w[1], pc.beta * w[2], pc.beta * w[3]], mass))
        .collect::<Result<_>>()?;
    pi2_project(&atoms, grid)
}
