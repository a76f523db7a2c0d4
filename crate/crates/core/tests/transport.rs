mod common;

use common::{cluster_measure, dirac, direction, direction_near, relative_sup_error, rng, small_pair, with_weights};
use proptest::prelude::*;
use scaling_path::measures::{scale_mass, total_variation, DiscreteMeasure};
use scaling_path::uot::{hk_bruteforce, hk_dirac_exact, hk_entropic, hk_gradient, HkObjective, SinkhornOptions};
use scaling_path::Error;

fn tight(eps: f64) -> SinkhornOptions {
    SinkhornOptions {
        tol: 1e-12,
        max_iter: 200_000,
        ..SinkhornOptions::with_eps(eps)
    }
}

#[test]
fn entropic_approaches_bruteforce_as_eps_shrinks() {
    let mut r = rng(7);
    for _ in 0..5 {
        let (mu, nu) = small_pair(&mut r);
        let exact = hk_bruteforce(&mu, &nu, 100_000).unwrap();
        let errors: Vec<f64> = [1e-1, 1e-2, 1e-3]
            .iter()
            .map(|&eps| (hk_entropic(&mu, &nu, &tight(eps)).unwrap().value - exact).abs())
            .collect();
        assert!(errors[2] < errors[0], "{errors:?}");
        let tv = total_variation(&mu) + total_variation(&nu);
        assert!(errors[2] <= (5.0 * 1e-3 * tv).max(1e-2), "{errors:?}");
    }
}

#[test]
fn zero_measure_gives_total_variation() {
    let mut r = rng(3);
    let center = direction(&mut r);
    let mu = cluster_measure(&mut r, &center, 4);
    let zero = DiscreteMeasure::zero(mu.grid().clone());
    let v = hk_entropic(&mu, &zero, &SinkhornOptions::default()).unwrap();
    assert_eq!(v.value, total_variation(&mu));
    let b = hk_bruteforce(&mu, &zero, 10).unwrap();
    assert_eq!(b, total_variation(&mu));
}

#[test]
fn orthogonal_diracs_do_not_transport() {
    let mut r = rng(11);
    let t1 = direction(&mut r);
    let c = t1.coords();
    let t2 = scaling_path::sphere_grid::UnitVector::normalized(vec![-c[1], c[0], -c[3], c[2]]).unwrap();
    assert!(t1.dot(&t2).abs() < 1e-12);
    let v = hk_entropic(
        &dirac(t1.clone(), 1.5),
        &dirac(t2.clone(), 0.5),
        &SinkhornOptions::default(),
    )
    .unwrap();
    // Zero plan: both marginal penalties plus the entropic term ε·m_μ·m_ν.
    assert!((v.value - (2.0 + 1e-2 * 1.5 * 0.5)).abs() < 1e-12, "{}", v.value);
    assert_eq!(hk_dirac_exact(1.5, &t1, 0.5, &t2).unwrap(), 2.0);
}

#[test]
fn entropic_mass_scaling_within_bias() {
    let mut r = rng(19);
    for alpha in [0.5, 2.0, 4.0] {
        let (mu, nu) = small_pair(&mut r);
        let eps = 1e-2;
        let base = hk_entropic(&mu, &nu, &tight(eps)).unwrap().value;
        let c = alpha * alpha;
        let scaled = hk_entropic(&scale_mass(&mu, c).unwrap(), &scale_mass(&nu, c).unwrap(), &tight(eps))
            .unwrap()
            .value;
        let tv = total_variation(&mu) + total_variation(&nu);
        assert!(
            (scaled - c * base).abs() <= 5.0 * eps * c * tv * c.max(1.0),
            "alpha {alpha}"
        );
    }
}

#[test]
fn gradient_matches_finite_differences_on_debiased_objective() {
    let mut r = rng(23);
    let center = direction(&mut r);
    let nu = cluster_measure(&mut r, &center, 5);
    let mu = with_weights(&nu, vec![0.4, 1.1, 0.9, 0.2, 1.6]);
    let mut obj = HkObjective::new(&nu, tight(1e-2), true).unwrap();
    let grad = obj.evaluate(mu.weights()).unwrap().gradient;
    let h = 1e-5;
    let fd: Vec<f64> = (0..mu.len())
        .map(|i| {
            let mut up = mu.weights().to_vec();
            let mut down = up.clone();
            up[i] += h;
            down[i] -= h;
            (obj.value(&up).unwrap() - obj.value(&down).unwrap()) / (2.0 * h)
        })
        .collect();
    assert!(relative_sup_error(&grad, &fd) < 1e-4, "{grad:?} vs {fd:?}");
}

#[test]
fn debiased_divergence_vanishes_on_the_diagonal() {
    let mut r = rng(29);
    let center = direction(&mut r);
    let nu = cluster_measure(&mut r, &center, 5);
    let mut obj = HkObjective::new(&nu, tight(1e-2), true).unwrap();
    let e = obj.evaluate(nu.weights()).unwrap();
    assert!(e.value.abs() < 1e-9, "{}", e.value);
    assert!(e.gradient.iter().all(|g| g.abs() < 1e-7), "{:?}", e.gradient);
}

#[test]
fn objective_matches_direct_evaluation() {
    let mut r = rng(31);
    let center = direction(&mut r);
    let nu = cluster_measure(&mut r, &center, 6);
    let mu = with_weights(&nu, vec![0.3, 0.1, 2.0, 0.7, 0.0, 1.2]);
    let mut obj = HkObjective::new(&nu, tight(1e-2), false).unwrap();
    let direct = hk_entropic(&mu, &nu, &tight(1e-2)).unwrap();
    assert!((obj.value(mu.weights()).unwrap() - direct.value).abs() < 1e-9);
    let g = hk_gradient(&direct, &mu).unwrap();
    let e = obj.evaluate(mu.weights()).unwrap();
    assert!(relative_sup_error(&e.gradient, &g) < 1e-8);
}

#[test]
fn mismatched_lengths_are_rejected() {
    let mut r = rng(37);
    let center = direction(&mut r);
    let nu = cluster_measure(&mut r, &center, 3);
    let mut obj = HkObjective::new(&nu, SinkhornOptions::default(), false).unwrap();
    assert!(matches!(obj.evaluate(&[1.0, 2.0]), Err(Error::InvalidArgument(_))));
}

#[test]
fn relaxation_does_not_change_the_fixed_point() {
    let mut r = rng(41);
    let (mu, nu) = small_pair(&mut r);
    let plain = SinkhornOptions {
        relaxation: 1.0,
        ..tight(1e-2)
    };
    let a = hk_entropic(&mu, &nu, &plain).unwrap();
    let b = hk_entropic(&mu, &nu, &tight(1e-2)).unwrap();
    assert!((a.value - b.value).abs() < 1e-9);
    let bad = SinkhornOptions {
        relaxation: 2.0,
        ..tight(1e-2)
    };
    assert!(hk_entropic(&mu, &nu, &bad).is_err());
}

fn measure_strategy() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 1usize..=4, 1usize..=4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bruteforce_is_symmetric_and_homogeneous((seed, n, k) in measure_strategy(), alpha in 0.2f64..5.0) {
        let mut r = rng(seed);
        let center = direction(&mut r);
        let mu = cluster_measure(&mut r, &center, n);
        let other = direction_near(&mut r, &center, 0.3);
        let nu = cluster_measure(&mut r, &other, k);
        let ab = hk_bruteforce(&mu, &nu, 100_000).unwrap();
        let ba = hk_bruteforce(&nu, &mu, 100_000).unwrap();
        prop_assert_eq!(ab.sqrt(), ba.sqrt());
        let c = alpha * alpha;
        let scaled = hk_bruteforce(&scale_mass(&mu, c).unwrap(), &scale_mass(&nu, c).unwrap(), 100_000).unwrap();
        prop_assert!((scaled - c * ab).abs() <= 1e-8 * (c * ab).max(1.0));
    }

    #[test]
    fn entropic_value_is_nonnegative_and_bounded((seed, n, k) in measure_strategy()) {
        let mut r = rng(seed);
        let center = direction(&mut r);
        let mu = cluster_measure(&mut r, &center, n);
        let nu = cluster_measure(&mut r, &center, k);
        let v = hk_entropic(&mu, &nu, &SinkhornOptions::default()).unwrap();
        prop_assert!(v.converged);
        prop_assert!(v.value >= -1e-9);
        // The zero plan is admissible, and its entropic value is TV(μ)+TV(ν)+ε·m_μ·m_ν.
        let tv = total_variation(&mu) + total_variation(&nu);
        prop_assert!(v.value <= tv + 1e-2 * total_variation(&mu) * total_variation(&nu) + 1e-9);
    }
}
