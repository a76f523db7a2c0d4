//! Spherical discretizations.
//!
//! Three constructions are provided:
//!
//! * the Fibonacci lattice `F` on S², built from the offset lattice
//!   `z_i = 1 - (2i+1)/n` with golden-angle azimuth;
//! * the lifted grid `P = {±1/√2} × F/√2 ⊂ S³`, the support of the
//!   initialization measure;
//! * the radial-shell grid `Q = {(±k, √(98-k²)·x)/(7√2) : 1 ≤ k ≤ 9, x ∈ F}`,
//!   whose `k = 7` slice is `P`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;

const UNIT_NORM_TOL: f64 = 1e-12;
/// Two points closer than this geodesic distance are considered duplicates.
pub const DUPLICATE_TOL: f64 = 1e-10;

/// A direction on S² or S³.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Wraps `coords`, rejecting vectors that are not unit length within 1e-12.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        check_dim(coords.len())?;
        let norm = norm(&coords);
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::InvalidArgument(format!("vector has norm {norm}, expected 1")));
        }
        Ok(Self(coords))
    }

    /// Normalizes `coords`; fails for the zero vector.
    pub fn normalized(coords: Vec<f64>) -> Result<Self> {
        check_dim(coords.len())?;
        let norm = norm(&coords);
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidArgument("cannot normalize zero vector".into()));
        }
        Ok(Self(coords.into_iter().map(|c| c / norm).collect()))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        dot(&self.0, &other.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GridLabel {
    F,
    P,
    Q,
    Custom,
}

/// An ordered, immutable set of distinct unit vectors of a common dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct SphereGrid {
    coords: Vec<f64>,
    dim: usize,
    label: GridLabel,
}

impl SphereGrid {
    /// Builds a custom grid, validating unit norms and rejecting duplicates.
    pub fn from_points(points: Vec<UnitVector>) -> Result<Self> {
        let dim = match points.first() {
            Some(p) => p.dim(),
            None => return Err(Error::InvalidArgument("grid needs at least one point".into())),
        };
        if points.iter().any(|p| p.dim() != dim) {
            return Err(Error::InvalidArgument("grid points differ in dimension".into()));
        }
        let coords: Vec<f64> = points.into_iter().flat_map(|p| p.0).collect();
        let grid = Self {
            coords,
            dim,
            label: GridLabel::Custom,
        };
        if let Some((i, j)) = grid.find_duplicate() {
            return Err(Error::InvalidArgument(format!("grid points {i} and {j} coincide")));
        }
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> GridLabel {
        self.label
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn inner(&self, i: usize, j: usize) -> f64 {
        dot(self.point(i), self.point(j))
    }

    /// Index of the node with the smallest geodesic distance to `direction`
    /// (largest inner product). Ties resolve to the lowest index.
    pub fn nearest(&self, direction: &[f64]) -> usize {
        debug_assert_eq!(direction.len(), self.dim);
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (i, p) in self.points().enumerate() {
            let d = dot(p, direction);
            if d > best_dot {
                best_dot = d;
                best = i;
            }
        }
        best
    }

    /// Geodesic distance from each node to its nearest other node.
    pub fn nearest_neighbor_distances(&self) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut best = f64::NEG_INFINITY;
                for j in 0..n {
                    if j != i {
                        best = best.max(self.inner(i, j));
                    }
                }
                geodesic(best)
            })
            .collect()
    }

    fn find_duplicate(&self) -> Option<(usize, usize)> {
        let n = self.len();
        let threshold = DUPLICATE_TOL.cos();
        for i in 0..n {
            for j in i + 1..n {
                if self.inner(i, j) >= threshold {
                    return Some((i, j));
                }
            }
        }
        None
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header: Vec<String> = (0..self.dim).map(|k| format!("x{k}")).collect();
        writeln!(out, "{}", header.join(","))?;
        for p in self.points() {
            let row: Vec<String> = p.iter().map(|&c| fmt_f64(c)).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Fibonacci lattice with `n` points on S².
pub fn fibonacci_s2(n: usize) -> Result<SphereGrid> {
    if n == 0 {
        return Err(Error::InvalidArgument("fibonacci lattice needs n >= 1".into()));
    }
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    let angle = 2.0 * PI * (2.0 - golden);
    let nf = n as f64;
    let mut coords = Vec::with_capacity(3 * n);
    for i in 0..n {
        let z = 1.0 - (2.0 * i as f64 + 1.0) / nf;
        let r = (1.0 - z * z).max(0.0).sqrt();
        let psi = angle * i as f64;
        coords.extend_from_slice(&[r * psi.cos(), r * psi.sin(), z]);
    }
    Ok(SphereGrid {
        coords,
        dim: 3,
        label: GridLabel::F,
    })
}

fn require_f(f: &SphereGrid) -> Result<()> {
    if f.label != GridLabel::F || f.dim != 3 {
        return Err(Error::InvalidArgument("lift expects a Fibonacci grid on S2".into()));
    }
    Ok(())
}

fn p_point(sign: f64, x: &[f64]) -> [f64; 4] {
    [
        sign * FRAC_1_SQRT_2,
        x[0] * FRAC_1_SQRT_2,
        x[1] * FRAC_1_SQRT_2,
        x[2] * FRAC_1_SQRT_2,
    ]
}

/// `P = {±1/√2} × F/√2`. Each lattice point yields its `+` node followed by its `-` node.
pub fn lift_p(f: &SphereGrid) -> Result<SphereGrid> {
    require_f(f)?;
    let mut coords = Vec::with_capacity(8 * f.len());
    for x in f.points() {
        coords.extend_from_slice(&p_point(1.0, x));
        coords.extend_from_slice(&p_point(-1.0, x));
    }
    Ok(SphereGrid {
        coords,
        dim: 4,
        label: GridLabel::P,
    })
}

/// Radial-shell grid with 18|F| nodes; the `k = 7` shell reproduces `P` bit for bit.
pub fn lift_q(f: &SphereGrid) -> Result<SphereGrid> {
    require_f(f)?;
    let denom = 7.0 * 2f64.sqrt();
    let mut coords = Vec::with_capacity(72 * f.len());
    for k in 1..=9u32 {
        let first = k as f64 / denom;
        let radial = ((98 - k * k) as f64).sqrt() / denom;
        for x in f.points() {
            for sign in [1.0, -1.0] {
                if k == 7 {
                    coords.extend_from_slice(&p_point(sign, x));
                } else {
                    coords.extend_from_slice(&[sign * first, radial * x[0], radial * x[1], radial * x[2]]);
                }
            }
        }
    }
    Ok(SphereGrid {
        coords,
        dim: 4,
        label: GridLabel::Q,
    })
}

/// Builds the grid named by `label` from a Fibonacci lattice of `fib_n` points.
pub fn build_grid(label: GridLabel, fib_n: usize) -> Result<SphereGrid> {
    let f = fibonacci_s2(fib_n)?;
    match label {
        GridLabel::F => Ok(f),
        GridLabel::P => lift_p(&f),
        GridLabel::Q => lift_q(&f),
        GridLabel::Custom => Err(Error::InvalidArgument(
            "custom grids cannot be rebuilt from a lattice size".into(),
        )),
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Geodesic distance for a given inner product of unit vectors.
pub fn geodesic(inner: f64) -> f64 {
    inner.clamp(-1.0, 1.0).acos()
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 3 || dim == 4 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "unit vectors must have dimension 3 or 4, got {dim}"
        )))
    }
}
