//! Nonnegative measures on sphere grids and the 2-homogeneous projection.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::io::{fmt_f64, parse_f64};
use crate::sphere_grid::{norm, SphereGrid};

/// A nonnegative weight vector attached to a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    grid: Arc<SphereGrid>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(grid: Arc<SphereGrid>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "{} weights for a grid of {} nodes",
                weights.len(),
                grid.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "weights must be finite and nonnegative, found {w}"
            )));
        }
        Ok(Self { grid, weights })
    }

    pub fn zero(grid: Arc<SphereGrid>) -> Self {
        let n = grid.len();
        Self {
            grid,
            weights: vec![0.0; n],
        }
    }

    pub fn grid(&self) -> &Arc<SphereGrid> {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Sum of two measures on the same grid.
    pub fn add(&self, other: &DiscreteMeasure) -> Result<DiscreteMeasure> {
        if !same_grid(&self.grid, &other.grid) {
            return Err(Error::InvalidArgument("measures live on different grids".into()));
        }
        let weights = self.weights.iter().zip(&other.weights).map(|(a, b)| a + b).collect();
        Ok(Self {
            grid: self.grid.clone(),
            weights,
        })
    }

    /// Writes `(node_index, weight)` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "node_index,weight")?;
        for (i, w) in self.weights.iter().enumerate() {
            writeln!(out, "{i},{}", fmt_f64(*w))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a measure written by [`DiscreteMeasure::write_csv`]. Missing nodes get weight 0.
    pub fn read_csv(path: &Path, grid: Arc<SphereGrid>) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "node_index" || &headers[1] != "weight" {
            return Err(Error::Schema(format!(
                "expected header node_index,weight in {}",
                path.display()
            )));
        }
        let mut weights = vec![0.0; grid.len()];
        for record in reader.records() {
            let record = record?;
            let idx: usize = record[0]
                .trim()
                .parse()
                .map_err(|_| Error::Schema(format!("bad node index {:?}", &record[0])))?;
            let w = parse_f64(&record[1]).ok_or_else(|| Error::Schema(format!("bad weight {:?}", &record[1])))?;
            if idx >= weights.len() {
                return Err(Error::Schema(format!(
                    "node index {idx} outside grid of {} nodes",
                    weights.len()
                )));
            }
            weights[idx] = w;
        }
        Self::new(grid, weights)
    }
}

pub(crate) fn same_grid(a: &Arc<SphereGrid>, b: &Arc<SphereGrid>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

/// A parameter atom `w = (w1, w2)` carrying a nonnegative mass.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamAtom {
    pub w1: f64,
    pub w2: [f64; 3],
    pub mass: f64,
}

impl ParamAtom {
    pub fn new(w1: f64, w2: [f64; 3], mass: f64) -> Result<Self> {
        if !(mass >= 0.0) {
            return Err(Error::InvalidArgument(format!("atom mass {mass} is negative")));
        }
        Ok(Self { w1, w2, mass })
    }

    pub fn as_vector(&self) -> [f64; 4] {
        [self.w1, self.w2[0], self.w2[1], self.w2[2]]
    }
}

/// Uniform measure with the given total mass.
pub fn uniform_on(grid: Arc<SphereGrid>, total_mass: f64) -> Result<DiscreteMeasure> {
    if !(total_mass >= 0.0) || !total_mass.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "total mass {total_mass} must be finite and nonnegative"
        )));
    }
    let n = grid.len();
    let w = total_mass / n as f64;
    Ok(DiscreteMeasure {
        grid,
        weights: vec![w; n],
    })
}

/// Bins `mass·‖w‖²` of every atom onto the node nearest to `w/‖w‖`.
pub fn pi2_project(atoms: &[ParamAtom], grid: Arc<SphereGrid>) -> Result<DiscreteMeasure> {
    if grid.is_empty() || grid.dim() != 4 {
        return Err(Error::InvalidArgument(
            "projection target must be a nonempty grid on S3".into(),
        ));
    }
    let mut weights = vec![0.0; grid.len()];
    for atom in atoms {
        let w = atom.as_vector();
        let r = norm(&w);
        if r == 0.0 || atom.mass == 0.0 {
            continue;
        }
        let j = grid.nearest(&w);
        weights[j] += atom.mass * r * r;
    }
    DiscreteMeasure::new(grid, weights)
}

/// Multiplies every weight by `c ≥ 0`.
pub fn scale_mass(m: &DiscreteMeasure, c: f64) -> Result<DiscreteMeasure> {
    if !(c >= 0.0) || !c.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "scale {c} must be finite and nonnegative"
        )));
    }
    Ok(DiscreteMeasure {
        grid: m.grid.clone(),
        weights: m.weights.iter().map(|w| w * c).collect(),
    })
}

/// Total mass.
pub fn total_variation(m: &DiscreteMeasure) -> f64 {
    m.weights.iter().sum()
}
