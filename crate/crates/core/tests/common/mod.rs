//! Seeded random measures and small oracles shared by the integration tests.

#![allow(dead_code)]

use std::sync::Arc;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scaling_path::measures::DiscreteMeasure;
use scaling_path::sphere_grid::{SphereGrid, UnitVector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one draw is enough here.
    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
    let v: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

/// Uniform direction on S³.
pub fn direction(rng: &mut ChaCha8Rng) -> UnitVector {
    loop {
        let v: Vec<f64> = (0..4).map(|_| gaussian(rng)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-6 {
            return UnitVector::normalized(v).unwrap();
        }
    }
}

/// Direction scattered around `center` with Gaussian spread `spread`.
pub fn direction_near(rng: &mut ChaCha8Rng, center: &UnitVector, spread: f64) -> UnitVector {
    loop {
        let v: Vec<f64> = center.coords().iter().map(|c| c + spread * gaussian(rng)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-6 {
            return UnitVector::normalized(v).unwrap();
        }
    }
}

/// Measure with `atoms` nodes scattered around `center` and weights in `[0.1, 2)`.
pub fn cluster_measure(rng: &mut ChaCha8Rng, center: &UnitVector, atoms: usize) -> DiscreteMeasure {
    let points: Vec<UnitVector> = (0..atoms).map(|_| direction_near(rng, center, 0.5)).collect();
    let grid = Arc::new(SphereGrid::from_points(points).unwrap());
    let dist = Uniform::new(0.1, 2.0);
    let weights = (0..atoms).map(|_| dist.sample(rng)).collect();
    DiscreteMeasure::new(grid, weights).unwrap()
}

/// Pair of measures with 1 to 6 atoms each around a shared random center.
pub fn small_pair(rng: &mut ChaCha8Rng) -> (DiscreteMeasure, DiscreteMeasure) {
    let center = direction(rng);
    let n = rng.gen_range(1..=6);
    let k = rng.gen_range(1..=6);
    (cluster_measure(rng, &center, n), cluster_measure(rng, &center, k))
}

pub fn with_weights(m: &DiscreteMeasure, weights: Vec<f64>) -> DiscreteMeasure {
    DiscreteMeasure::new(m.grid().clone(), weights).unwrap()
}

/// Dirac measure `mass · δ_direction`.
pub fn dirac(direction: UnitVector, mass: f64) -> DiscreteMeasure {
    let grid = Arc::new(SphereGrid::from_points(vec![direction]).unwrap());
    DiscreteMeasure::new(grid, vec![mass]).unwrap()
}

/// `‖a - b‖∞ / ‖b‖∞`.
pub fn relative_sup_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = b.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    diff / scale.max(f64::MIN_POSITIVE)
}
