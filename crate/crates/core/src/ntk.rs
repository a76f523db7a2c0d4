//! Tangent-kernel Gram matrix of the initialization on `P`, kernel
//! interpolation, and the kernel predictor.

use std::io::Write;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::relu_model::{ntk_integrand, Dataset};
use crate::sphere_grid::SphereGrid;

/// Jitter escalation starts at this multiple of the trace.
const JITTER_START: f64 = 1e-14;
/// Largest jitter, relative to the trace.
const JITTER_MAX: f64 = 1e-8;

/// Symmetric `n × n` kernel matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    n: usize,
    entries: Vec<f64>,
    /// Diagonal jitter used by the last factorization.
    pub jitter: f64,
}

impl GramMatrix {
    pub fn from_entries(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n || n == 0 {
            return Err(Error::InvalidArgument(format!(
                "{} entries do not form a nonempty {n}x{n} matrix",
                entries.len()
            )));
        }
        Ok(Self {
            n,
            entries,
            jitter: 0.0,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.entries[a * self.n + b]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|a| self.get(a, a)).sum()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.entries)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.to_matrix()
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header: Vec<String> = (0..self.n).map(|k| format!("k{k}")).collect();
        writeln!(out, "{}", header.join(","))?;
        for a in 0..self.n {
            let row: Vec<String> = (0..self.n).map(|b| fmt_f64(self.get(a, b))).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}

fn kernel_value(grid: &SphereGrid, x: &[f64; 3], xp: &[f64; 3]) -> f64 {
    let total: f64 = grid
        .points()
        .map(|w| ntk_integrand(&[w[0], w[1], w[2], w[3]], x, xp))
        .sum();
    total / grid.len() as f64
}

/// `K_kl = (1/|P|) Σ_{w∈P} ntk_integrand(w, x_k, x_l)`.
pub fn gram(data: &Dataset, mu0_grid: &SphereGrid) -> Result<GramMatrix> {
    if mu0_grid.dim() != 4 || mu0_grid.is_empty() {
        return Err(Error::InvalidArgument(
            "kernel quadrature needs a nonempty grid on S3".into(),
        ));
    }
    let xs = data.lifted_inputs();
    let n = xs.len();
    let mut entries = vec![0.0; n * n];
    for a in 0..n {
        for b in a..n {
            let v = kernel_value(mu0_grid, &xs[a], &xs[b]);
            entries[a * n + b] = v;
            entries[b * n + a] = v;
        }
    }
    GramMatrix::from_entries(n, entries)
}

#[derive(Clone, Debug)]
pub struct KernelSolution {
    pub coeffs: Vec<f64>,
    /// `yᵀc`; equals `yᵀK⁻¹y` without ridge.
    pub min_norm_value: f64,
    pub jitter: f64,
}

/// Solves `(K + ridge·I + jitter·I) c = y`, escalating the jitter by ×10 from
/// `1e-14·tr K` up to `1e-8·tr K` when the factorization fails.
pub fn solve_interpolation(k: &mut GramMatrix, y: &[f64], ridge: f64) -> Result<KernelSolution> {
    if y.len() != k.n {
        return Err(Error::InvalidArgument(format!(
            "{} labels for a {}x{} kernel",
            y.len(),
            k.n,
            k.n
        )));
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge must be >= 0, got {ridge}")));
    }
    let base = k.to_matrix() + DMatrix::identity(k.n, k.n) * ridge;
    let trace = k.trace().abs().max(f64::MIN_POSITIVE);
    let rhs = DVector::from_column_slice(y);
    let mut jitter = 0.0;
    loop {
        let m = &base + DMatrix::identity(k.n, k.n) * jitter;
        if let Some(chol) = Cholesky::new(m) {
            let l_diag_min = chol.l_dirty().diagonal().iter().cloned().fold(f64::INFINITY, f64::min);
            if l_diag_min > 0.0 && l_diag_min * l_diag_min > f64::EPSILON * trace {
                let c = chol.solve(&rhs);
                let coeffs: Vec<f64> = c.iter().cloned().collect();
                let value = coeffs.iter().zip(y).map(|(c, y)| c * y).sum();
                k.jitter = jitter;
                return Ok(KernelSolution {
                    coeffs,
                    min_norm_value: value,
                    jitter,
                });
            }
        }
        jitter = if jitter == 0.0 {
            JITTER_START * trace
        } else {
            jitter * 10.0
        };
        if jitter > JITTER_MAX * trace * (1.0 + 1e-9) {
            return Err(Error::SingularGram { jitter: jitter / 10.0 });
        }
    }
}

/// `f(x) = Σ_k c_k K(x, x_k)`.
pub fn eval_kernel_predictor(
    coeffs: &[f64],
    data: &Dataset,
    mu0_grid: &SphereGrid,
    points: &[[f64; 3]],
) -> Result<Vec<f64>> {
    if coeffs.len() != data.len() {
        return Err(Error::InvalidArgument(format!(
            "{} coefficients for {} samples",
            coeffs.len(),
            data.len()
        )));
    }
    let xs = data.lifted_inputs();
    Ok(points
        .iter()
        .map(|x| {
            xs.iter()
                .zip(coeffs)
                .filter(|(_, c)| **c != 0.0)
                .map(|(xk, c)| c * kernel_value(mu0_grid, x, xk))
                .sum()
        })
        .collect())
}
