use std::path::Path;

use scaling_path::experiment::{
    compare_dirs, read_coefficients, read_sidecar, run_sweep, solve_at, surface_from_file, surface_inputs,
    write_solution, write_training, Scale, SweepConfig, VpSolution,
};
use scaling_path::gd_trainer::{init_from_grid, train};
use scaling_path::io::fmt_f64;
use scaling_path::relu_model::Dataset;

fn tiny(out: &Path) -> SweepConfig {
    let mut cfg = SweepConfig {
        alphas: vec![Scale::Finite(0.5), Scale::Finite(2.0)],
        betas: vec![4.0, 16.0],
        fib_n: 40,
        output_dir: out.to_path_buf(),
        ..SweepConfig::default()
    };
    cfg.gd.max_iter = 2000;
    cfg.fbs.max_outer = 300;
    cfg
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

#[test]
fn sweep_writes_table_heatmap_and_meta() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let out = run_sweep(&cfg).unwrap();
    assert_eq!(files_in(dir.path()), ["heatmap.csv", "meta.json", "table.csv"]);
    assert_eq!(out.records.len(), 4);
    assert_eq!(out.minima.len(), 2);

    let table = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "alpha,beta,vp_value,gd_value,gap,status");
    assert_eq!(lines.len(), 1 + 4 + 2);
    for line in &lines[1..5] {
        let fields: Vec<&str> = line.split(',').collect();
        // Seventeen significant digits: one leading digit and sixteen decimals.
        let mantissa = fields[2].trim_start_matches('-').split('e').next().unwrap();
        assert_eq!(mantissa.len(), 18, "{line}");
    }
    for line in &lines[5..] {
        assert_eq!(line.split(',').nth(1), Some("min"));
        assert!(line.contains("argmin_beta="), "{line}");
    }
    for m in &out.minima {
        let in_alpha: Vec<f64> = out
            .records
            .iter()
            .filter(|r| r.alpha == m.alpha)
            .map(|r| r.gd_value)
            .collect();
        assert_eq!(m.gd_min, in_alpha.iter().copied().fold(f64::INFINITY, f64::min));
    }
    for r in &out.records {
        assert_eq!(r.gap, r.gd_value - r.vp_value);
    }

    let heatmap = std::fs::read_to_string(dir.path().join("heatmap.csv")).unwrap();
    assert_eq!(heatmap.lines().next(), Some("alpha,beta,gap"));
    assert_eq!(heatmap.lines().count(), 5);

    let meta = read_sidecar(&dir.path().join("meta.json")).unwrap();
    assert_eq!(meta["config_hash"], cfg.hash());
    assert_eq!(meta["vp_solves"].as_array().unwrap().len(), 2);
    assert_eq!(meta["gd_runs"].as_array().unwrap().len(), 2);
}

#[test]
fn sweeps_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_sweep(&tiny(a.path())).unwrap();
    run_sweep(&tiny(b.path())).unwrap();
    for name in ["table.csv", "heatmap.csv", "meta.json"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn hash_ignores_the_output_directory() {
    let a = tiny(Path::new("/tmp/a"));
    let b = tiny(Path::new("/tmp/b"));
    assert_eq!(a.hash(), b.hash());
    let mut c = tiny(Path::new("/tmp/a"));
    c.eps = 2e-2;
    assert_ne!(a.hash(), c.hash());
}

#[test]
fn limits_and_surfaces_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.alphas = vec![Scale::Finite(0.0), Scale::Finite(1.0), Scale::Infinite];
    cfg.betas = vec![16.0];
    cfg.surface_resolution = Some(5);
    let out = run_sweep(&cfg).unwrap();
    let names = files_in(dir.path());
    for expected in [
        format!("surface_vp_alpha_{}.csv", fmt_f64(0.0)),
        format!("surface_vp_alpha_{}.csv", fmt_f64(1.0)),
        "surface_vp_alpha_inf.csv".to_string(),
        format!("surface_gd_beta_{}.csv", fmt_f64(16.0)),
    ] {
        assert!(names.contains(&expected), "{expected} missing from {names:?}");
    }
    let surface = std::fs::read_to_string(dir.path().join("surface_vp_alpha_inf.csv")).unwrap();
    assert_eq!(surface.lines().next(), Some("x,y,f,f_raw"));
    assert_eq!(surface.lines().count(), 1 + 25);
    let kernel = out.records.iter().find(|r| r.alpha == Scale::Infinite).unwrap();
    assert_eq!(kernel.gd_value, f64::INFINITY);
    assert!(kernel.status.contains("gd_value_unbounded"));
    let table = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
    assert!(table.lines().any(|l| l.starts_with("inf,") && l.contains(",inf,inf,")));
}

#[test]
fn stored_solutions_reproduce_their_surfaces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let data = Dataset::bundled();
    let p = cfg.p_grid().unwrap();
    let grid = cfg.solve_grid(&p).unwrap();
    let inputs = surface_inputs(4).unwrap();

    let sol = solve_at(&cfg, &data, &p, &grid, Scale::Finite(1.0), None).unwrap();
    let vp_dir = dir.path().join("vp");
    write_solution(&vp_dir, &cfg, Scale::Finite(1.0), &sol).unwrap();
    let rows = surface_from_file(&cfg, &vp_dir.join("measure.csv"), 4).unwrap();
    let VpSolution::Measure(m) = &sol else {
        panic!("expected a measure")
    };
    let direct = scaling_path::relu_model::eval_network(&m.measure, &inputs).unwrap();
    for (r, d) in rows.iter().zip(&direct) {
        assert!((r.f_raw - d).abs() <= 1e-12 * d.abs().max(1.0));
    }

    let kernel = solve_at(&cfg, &data, &p, &grid, Scale::Infinite, None).unwrap();
    let k_dir = dir.path().join("ntk");
    write_solution(&k_dir, &cfg, Scale::Infinite, &kernel).unwrap();
    let VpSolution::Kernel(k) = &kernel else {
        panic!("expected a kernel solution")
    };
    assert_eq!(read_coefficients(&k_dir.join("coefficients.csv")).unwrap(), k.coeffs);
    assert_eq!(read_sidecar(&k_dir.join("solution.json")).unwrap()["kind"], "kernel");
    assert_eq!(
        surface_from_file(&cfg, &k_dir.join("coefficients.csv"), 4)
            .unwrap()
            .len(),
        16
    );

    assert!(surface_from_file(&cfg, &k_dir.join("solution.json"), 4).is_err());
}

#[test]
fn compare_matches_the_sweep_cell() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(&dir.path().join("sweep"));
    cfg.alphas = vec![Scale::Finite(1.0)];
    cfg.betas = vec![16.0];
    let out = run_sweep(&cfg).unwrap();

    let data = cfg.dataset().unwrap();
    let p = cfg.p_grid().unwrap();
    let grid = cfg.solve_grid(&p).unwrap();
    let sol = solve_at(&cfg, &data, &p, &grid, Scale::Finite(1.0), None).unwrap();
    write_solution(&dir.path().join("vp"), &cfg, Scale::Finite(1.0), &sol).unwrap();
    let trained = train(&init_from_grid(&p, 16.0).unwrap(), &data, &cfg.gd).unwrap();
    write_training(&dir.path().join("gd"), grid, &trained).unwrap();

    let r = compare_dirs(&cfg, &dir.path().join("vp"), &dir.path().join("gd")).unwrap();
    let cell = &out.records[0];
    assert_eq!(r.alpha, cell.alpha);
    assert_eq!(r.beta, cell.beta);
    assert_eq!(r.vp_value, cell.vp_value);
    // The stored measure goes through a 17-digit round trip.
    assert!((r.gd_value - cell.gd_value).abs() <= 1e-9 * cell.gd_value.abs());
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(SweepConfig::from_json_str(r#"{"alphas": []}"#).is_err());
    assert!(SweepConfig::from_json_str(r#"{"betas": [2, 1]}"#).is_err());
    assert!(SweepConfig::from_json_str(r#"{"eps": 0}"#).is_err());
    assert!(SweepConfig::from_json_str(r#"{"surface_resolution": 1}"#).is_err());
    assert!(SweepConfig::from_json_str(r#"{"unknown_field": 1}"#).is_err());
    let cfg = SweepConfig::from_json_str(r#"{"alphas": [0, 1, "inf"], "fib_n": 100}"#).unwrap();
    assert_eq!(cfg.alphas, [Scale::Finite(0.0), Scale::Finite(1.0), Scale::Infinite]);
}
