//! The 2-homogeneous ReLU unit, feature matrices over grids, network evaluation
//! and the tangent-kernel integrand.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;
use crate::sphere_grid::SphereGrid;

const BUNDLED: &str = include_str!("../data/synthetic10.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: [f64; 2],
    pub y: f64,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    samples: Vec<Sample>,
    #[serde(default)]
    synthetic: bool,
}

/// Labeled planar samples; inputs are lifted to `(x, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    synthetic: bool,
}

impl Dataset {
    /// Validates that inputs lie in `[-1, 1]²`, are pairwise distinct, and labels are finite.
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("dataset has no samples".into()));
        }
        for (k, s) in samples.iter().enumerate() {
            if s.x.iter().any(|c| !(c.abs() <= 1.0)) {
                return Err(Error::InvalidArgument(format!(
                    "sample {k} input {:?} outside [-1,1]^2",
                    s.x
                )));
            }
            if !s.y.is_finite() {
                return Err(Error::InvalidArgument(format!("sample {k} label is not finite")));
            }
        }
        for i in 0..samples.len() {
            for j in i + 1..samples.len() {
                if samples[i].x == samples[j].x {
                    return Err(Error::InvalidArgument(format!(
                        "samples {i} and {j} share the input {:?}",
                        samples[i].x
                    )));
                }
            }
        }
        Ok(Self {
            samples,
            synthetic: false,
        })
    }

    /// The 10-point synthetic dataset shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_json_str(BUNDLED).expect("bundled dataset is valid")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(s).map_err(|e| Error::Schema(format!("dataset: {e}")))?;
        let mut data = Self::new(file.samples)?;
        data.synthetic = file.synthetic;
        Ok(data)
    }

    /// Whether the file marks the data as synthetic.
    pub fn is_synthetic(&self) -> bool {
        self.synthetic
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.y).collect()
    }

    pub fn lifted_inputs(&self) -> Vec<[f64; 3]> {
        self.samples.iter().map(|s| lift_input(s.x)).collect()
    }

    /// Same inputs with new labels.
    pub fn with_labels(&self, labels: &[f64]) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {} samples",
                labels.len(),
                self.len()
            )));
        }
        let samples = self
            .samples
            .iter()
            .zip(labels)
            .map(|(s, &y)| Sample { x: s.x, y })
            .collect();
        let mut data = Self::new(samples)?;
        data.synthetic = self.synthetic;
        Ok(data)
    }
}

pub fn lift_input(x: [f64; 2]) -> [f64; 3] {
    [x[0], x[1], 1.0]
}

/// Row-major `n × |grid|` matrix with entries `φ(θ_j, x_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        if n == 0 || cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument(
                "feature matrix must be a nonempty rectangle".into(),
            ));
        }
        Ok(Self {
            rows: n,
            cols,
            values: rows.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.values[k * self.cols + j]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.cols..(k + 1) * self.cols]
    }

    /// `Φw`.
    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        debug_assert_eq!(w.len(), self.cols);
        (0..self.rows)
            .map(|k| self.row(k).iter().zip(w).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `Φᵀr`.
    pub fn apply_transpose(&self, r: &[f64]) -> Vec<f64> {
        debug_assert_eq!(r.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (k, &rk) in r.iter().enumerate() {
            if rk == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(self.row(k)) {
                *o += rk * v;
            }
        }
        out
    }

    /// `ΦΦᵀ` as a row-major `n × n` matrix.
    pub fn gram(&self) -> Vec<f64> {
        let n = self.rows;
        let mut g = vec![0.0; n * n];
        for a in 0..n {
            for b in a..n {
                let v: f64 = self.row(a).iter().zip(self.row(b)).map(|(x, y)| x * y).sum();
                g[a * n + b] = v;
                g[b * n + a] = v;
            }
        }
        g
    }
}

/// `w1 · (w2ᵀx)⁺`.
pub fn phi_relu(w: &[f64; 4], x: &[f64; 3]) -> f64 {
    w[0] * pre_activation(w, x).max(0.0)
}

#[inline]
pub(crate) fn pre_activation(w: &[f64], x: &[f64; 3]) -> f64 {
    w[1] * x[0] + w[2] * x[1] + w[3] * x[2]
}

fn node(grid: &SphereGrid, j: usize) -> [f64; 4] {
    let p = grid.point(j);
    [p[0], p[1], p[2], p[3]]
}

pub fn feature_matrix(grid: &SphereGrid, data: &Dataset) -> Result<FeatureMatrix> {
    if grid.dim() != 4 || grid.is_empty() {
        return Err(Error::InvalidArgument(
            "feature matrix needs a nonempty grid on S3".into(),
        ));
    }
    let inputs = data.lifted_inputs();
    let cols = grid.len();
    let values: Vec<f64> = inputs
        .par_iter()
        .flat_map_iter(|x| (0..cols).map(move |j| phi_relu(&node(grid, j), x)))
        .collect();
    Ok(FeatureMatrix {
        rows: inputs.len(),
        cols,
        values,
    })
}

/// `x ↦ Σ_j weights[j] φ(θ_j, x)` at each point.
pub fn eval_network(m: &DiscreteMeasure, points: &[[f64; 3]]) -> Result<Vec<f64>> {
    let grid = m.grid();
    if grid.dim() != 4 {
        return Err(Error::InvalidArgument("networks are defined on grids in S3".into()));
    }
    let weights = m.weights();
    Ok(points
        .par_iter()
        .map(|x| {
            weights
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(j, w)| w * phi_relu(&node(grid, j), x))
                .sum()
        })
        .collect())
}

/// Tangent-kernel integrand `(w2ᵀx)⁺(w2ᵀx')⁺ + w1² xᵀx' [w2ᵀx > 0][w2ᵀx' > 0]`.
pub fn ntk_integrand(w: &[f64; 4], x: &[f64; 3], xp: &[f64; 3]) -> f64 {
    let a = pre_activation(w, x);
    let b = pre_activation(w, xp);
    if a > 0.0 && b > 0.0 {
        let xx = x[0] * xp[0] + x[1] * xp[1] + x[2] * xp[2];
        a * b + w[0] * w[0] * xx
    } else {
        0.0
    }
}
