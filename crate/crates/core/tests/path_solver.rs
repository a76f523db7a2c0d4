use std::sync::Arc;

use scaling_path::measures::{total_variation, DiscreteMeasure};
use scaling_path::path_solver::{
    shifted_warm_start, solve_penalized, solve_rich_limit, solve_scaling_path, PathConfig, RichOptions, SolveStatus,
    StepMetric,
};
use scaling_path::relu_model::{feature_matrix, Dataset};
use scaling_path::sphere_grid::{fibonacci_s2, lift_p, SphereGrid};
use scaling_path::uot::HkObjective;

fn p_grid(n: usize) -> Arc<SphereGrid> {
    Arc::new(lift_p(&fibonacci_s2(n).unwrap()).unwrap())
}

fn residual(grid: &SphereGrid, data: &Dataset, w: &[f64]) -> f64 {
    let phi = feature_matrix(grid, data).unwrap();
    phi.apply(w)
        .iter()
        .zip(data.labels())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
}

#[test]
fn solutions_interpolate_the_labels() {
    let p = p_grid(64);
    let data = Dataset::bundled();
    for debias in [false, true] {
        for alpha in [0.3, 3.0] {
            let mut cfg = PathConfig::new(p.clone(), alpha).unwrap();
            cfg.debias = debias;
            cfg.fbs.max_outer = 300;
            let sol = solve_scaling_path(&cfg, &data).unwrap();
            assert!(sol.constraint_residual <= 1e-4, "alpha {alpha} debias {debias}");
            assert!(residual(&p, &data, sol.measure.weights()) <= 1e-4);
            assert!(sol.measure.weights().iter().all(|&w| w >= 0.0));
            assert!(sol.history.windows(2).all(|h| h[1] <= h[0]));
        }
    }
}

/// The plain divergence of a measure with itself is a positive bias; the
/// debiased one vanishes. Either way the solver must not do worse than the
/// feasible point `α²μ₀`.
fn check_initialization_is_optimal(p: Arc<SphereGrid>, mu0: DiscreteMeasure, alpha: f64, data: &Dataset) {
    for debias in [false, true] {
        let mut cfg = PathConfig::with_init(p.clone(), mu0.clone(), alpha).unwrap();
        cfg.debias = debias;
        cfg.fbs.max_outer = 300;
        let sol = solve_scaling_path(&cfg, data).unwrap();
        let reference = cfg.reference().unwrap();
        let mut hk = HkObjective::new(&reference, cfg.sinkhorn(), debias).unwrap();
        let at_reference = hk.value(reference.weights()).unwrap();
        assert!(sol.divergence <= at_reference + 1e-9, "debias {debias}");
        if debias {
            assert!(sol.divergence <= 5.0 * cfg.eps * total_variation(&reference));
        }
        assert!(sol.constraint_residual <= 1e-4);
    }
}

#[test]
fn realizable_labels_keep_the_scaled_initialization() {
    let p = p_grid(40);
    let alpha: f64 = 1.5;
    let phi = feature_matrix(&p, &Dataset::bundled()).unwrap();
    // Uniform weights on P represent the zero function; tilt them to get a
    // nonzero realizable target.
    let tilted: Vec<f64> = (0..p.len())
        .map(|j| (1.0 + 0.5 * p.point(j)[1]) / p.len() as f64)
        .collect();
    let scaled: Vec<f64> = tilted.iter().map(|w| w * alpha * alpha).collect();
    let data = Dataset::bundled().with_labels(&phi.apply(&scaled)).unwrap();
    let mu0 = DiscreteMeasure::new(p.clone(), tilted).unwrap();
    check_initialization_is_optimal(p, mu0, alpha, &data);
}

#[test]
fn zero_labels_keep_the_symmetric_initialization() {
    let p = p_grid(40);
    let data = Dataset::bundled().with_labels(&[0.0; 10]).unwrap();
    let mu0 = scaling_path::measures::uniform_on(p.clone(), 1.0).unwrap();
    check_initialization_is_optimal(p, mu0, 2.0, &data);
}

#[test]
fn rich_limit_beats_feasible_competitors() {
    let p = p_grid(64);
    let data = Dataset::bundled();
    let rich = solve_rich_limit(p.clone(), &data, &RichOptions::default()).unwrap();
    assert!(rich.constraint_residual <= 1e-6);
    for alpha in [0.5, 2.0] {
        let cfg = PathConfig::new(p.clone(), alpha).unwrap();
        let sol = solve_scaling_path(&cfg, &data).unwrap();
        assert!(rich.objective <= total_variation(&sol.measure) + 1e-6);
    }
    // Labels generated by a single node: that node alone is feasible.
    let phi = feature_matrix(&p, &data).unwrap();
    let mut single = vec![0.0; p.len()];
    single[5] = 0.7;
    let data = data.with_labels(&phi.apply(&single)).unwrap();
    let rich = solve_rich_limit(p.clone(), &data, &RichOptions::default()).unwrap();
    assert!(rich.objective <= 0.7 + 1e-6);
}

#[test]
fn rich_objective_approached_from_small_alpha() {
    let p = p_grid(64);
    let data = Dataset::bundled();
    let rich = solve_rich_limit(p.clone(), &data, &RichOptions::default()).unwrap();
    let gaps: Vec<f64> = [1e-1, 1e-2, 1e-3]
        .iter()
        .map(|&alpha| {
            let sol = solve_scaling_path(&PathConfig::new(p.clone(), alpha).unwrap(), &data).unwrap();
            (sol.objective - rich.objective).abs()
        })
        .collect();
    assert!(gaps[2] < gaps[0], "{gaps:?}");
    assert!(gaps[2] <= 0.05 * rich.objective, "{gaps:?}");
}

#[test]
fn step_metrics_agree() {
    let p = p_grid(64);
    let data = Dataset::bundled();
    let mut cfg = PathConfig::new(p, 1.0).unwrap();
    let diagonal = solve_scaling_path(&cfg, &data).unwrap();
    cfg.fbs.metric = StepMetric::Euclidean;
    let euclidean = solve_scaling_path(&cfg, &data).unwrap();
    assert_eq!(diagonal.status, SolveStatus::Converged);
    assert_eq!(euclidean.status, SolveStatus::Converged);
    let rel = (diagonal.objective - euclidean.objective).abs() / euclidean.objective;
    assert!(rel < 1e-4, "{} vs {}", diagonal.objective, euclidean.objective);
}

#[test]
fn penalized_solution_improves_on_the_initialization() {
    let p = p_grid(40);
    let data = Dataset::bundled();
    let mut cfg = PathConfig::new(p.clone(), 1.0).unwrap();
    cfg.lambda = 1e3;
    cfg.fbs.max_outer = 300;
    let sol = solve_penalized(&cfg, &data).unwrap();
    let reference = cfg.reference().unwrap();
    let mut hk = HkObjective::new(&reference, cfg.sinkhorn(), false).unwrap();
    let at_reference =
        data.labels().iter().map(|y| y * y).sum::<f64>() + cfg.lambda * 2.0 * hk.value(reference.weights()).unwrap();
    assert!(sol.objective <= at_reference + 1e-9);
    assert!(sol.divergence <= 5.0 * cfg.eps * total_variation(&reference));
}

#[test]
fn invalid_configurations_are_rejected() {
    let p = p_grid(20);
    let data = Dataset::bundled();
    let cfg = PathConfig::new(p.clone(), 0.0).unwrap();
    assert!(solve_scaling_path(&cfg, &data).is_err());
    let mut cfg = PathConfig::new(p, 1.0).unwrap();
    cfg.eps = -1.0;
    assert!(solve_scaling_path(&cfg, &data).is_err());
}

#[test]
fn shifted_warm_start_stays_feasible() {
    let p = p_grid(64);
    let data = Dataset::bundled();
    let mut low = PathConfig::new(p.clone(), 2.0).unwrap();
    low.fbs.max_outer = 200;
    let sol = solve_scaling_path(&low, &data).unwrap();
    let high = PathConfig::new(p.clone(), 5.0).unwrap();
    let start = shifted_warm_start(&high, 2.0, sol.measure.weights()).unwrap();
    // Uniform weights on P represent the zero function, so the shift adds no residual.
    assert!(residual(&p, &data, &start) <= sol.constraint_residual + 1e-9);
    let added: f64 = start.iter().sum::<f64>() - total_variation(&sol.measure);
    assert!((added - (25.0 - 4.0)).abs() < 1e-9, "{added}");
    assert!(shifted_warm_start(&high, 0.0, sol.measure.weights()).is_err());
    assert!(shifted_warm_start(&high, 2.0, &[1.0]).is_err());
}
