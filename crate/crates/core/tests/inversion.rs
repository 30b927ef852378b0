use rfek_core::feasibility::drift_norms;
use rfek_core::inversion::{split_isotropic, Truth};
use rfek_core::{
    generate_observations, is_reached, objective_and_grad, recover, solve, DriftField, GridSpec, InverseConfig,
    MetricField, ObservationSet, Parameterization, SolveOptions, SourceMask, Sym2,
};

fn observe(metric: &MetricField, drift: &DriftField, spec: GridSpec, at: (usize, usize), density: f64, seed: u64) -> ObservationSet {
    let src = SourceMask::point(spec.rows, spec.cols, at.0, at.1).unwrap();
    generate_observations(metric, drift, &src, spec, density, 0.0, seed, &SolveOptions::default()).unwrap()
}

fn wavy_metric(n: usize) -> MetricField {
    MetricField::from_fn(n, n, |r, c| {
        let w = (r as f64 / 4.0).sin() * (c as f64 / 5.0).cos();
        Sym2::from_eigen(1.5 + 0.4 * w, 0.8, 0.2 + 0.5 * w)
    })
}

#[test]
fn full_noiseless_observations_reproduce_the_solve() {
    let n = 30;
    let spec = GridSpec::unit_square(n).unwrap();
    let (metric, drift) = (wavy_metric(n), DriftField::constant(n, n, [0.1, -0.05]));
    let obs = observe(&metric, &drift, spec, (10, 20), 1.0, 1);
    let (t, _) = solve(&metric, &drift, &obs.sources, spec, &SolveOptions::default()).unwrap();
    let expected: Vec<usize> = (0..spec.len())
        .filter(|&i| !obs.sources.is_source(i) && is_reached(t.as_slice()[i]))
        .collect();
    assert_eq!(obs.nodes, expected);
    for (&i, &v) in obs.nodes.iter().zip(&obs.times) {
        assert_eq!(v, t.as_slice()[i]);
    }
}

#[test]
fn seven_percent_of_a_64_grid_is_286_nodes() {
    let n = 64;
    let spec = GridSpec::unit_square(n).unwrap();
    let obs = observe(&MetricField::isotropic(n, n, 1.0), &DriftField::zeros(n, n), spec, (32, 32), 0.07, 5);
    assert_eq!(obs.len(), 286);
}

#[test]
fn ground_truth_is_a_stationary_point() {
    let n = 30;
    let spec = GridSpec::unit_square(n).unwrap();
    let (metric, drift) = (wavy_metric(n), DriftField::constant(n, n, [0.1, -0.05]));
    let obs = vec![observe(&metric, &drift, spec, (15, 15), 1.0, 2)];
    let sum_sq: f64 = obs[0].times.iter().map(|t| t * t).sum();
    let cfg = InverseConfig {
        param: Parameterization::Joint,
        iters: 5,
        ..InverseConfig::default()
    };
    let obj = objective_and_grad(&metric, &drift, &obs, spec, &cfg).unwrap();
    assert!(obj.data_loss <= 1e-6 * sum_sq);
    let res = recover(&obs, spec, &cfg, &metric, &drift, Some(Truth { metric: &metric, drift: &drift })).unwrap();
    assert!(res.final_error().unwrap() <= 1e-6);
}

#[test]
fn gradients_add_over_sources() {
    let n = 32;
    let spec = GridSpec::unit_square(n).unwrap();
    let truth = split_isotropic(n, n, 1.0, 1.6);
    let drift = DriftField::zeros(n, n);
    let a = observe(&truth, &drift, spec, (8, 8), 0.3, 3);
    let b = observe(&truth, &drift, spec, (24, 20), 0.3, 4);
    let at = wavy_metric(n);
    let cfg = InverseConfig {
        param: Parameterization::Full,
        ..InverseConfig::default()
    };
    let both = objective_and_grad(&at, &drift, &[a.clone(), b.clone()], spec, &cfg).unwrap();
    let mut sum = objective_and_grad(&at, &drift, &[a], spec, &cfg).unwrap().grad;
    sum.add_assign(&objective_and_grad(&at, &drift, &[b], spec, &cfg).unwrap().grad);
    for (x, y) in both.grad.channels().iter().zip(sum.channels()) {
        for (u, v) in x.iter().zip(y.iter()) {
            assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
        }
    }
}

#[test]
fn unregularized_gradient_is_the_data_gradient() {
    let n = 24;
    let spec = GridSpec::unit_square(n).unwrap();
    let obs = vec![observe(&split_isotropic(n, n, 1.0, 2.0), &DriftField::zeros(n, n), spec, (12, 12), 1.0, 6)];
    let cfg = InverseConfig {
        param: Parameterization::Joint,
        lambda_g: 0.0,
        lambda_b: 0.0,
        ..InverseConfig::default()
    };
    let obj = objective_and_grad(&wavy_metric(n), &DriftField::zeros(n, n), &obs, spec, &cfg).unwrap();
    assert_eq!(obj.reg_loss, 0.0);
    assert_eq!(obj.grad, obj.data_grad);
}

#[test]
fn iterates_stay_feasible_under_large_steps() {
    let n = 24;
    let spec = GridSpec::unit_square(n).unwrap();
    let truth = MetricField::isotropic(n, n, 1.0);
    let obs = vec![observe(&truth, &DriftField::constant(n, n, [0.6, 0.0]), spec, (12, 4), 1.0, 8)];
    let cfg = InverseConfig {
        param: Parameterization::Joint,
        step_g: 0.5,
        step_b: 0.5,
        iters: 15,
        ..InverseConfig::default()
    };
    let res = recover(&obs, spec, &cfg, &truth, &DriftField::zeros(n, n), None).unwrap();
    let p = cfg.projection;
    for i in 0..res.metric.len() {
        let e = res.metric.at(i).eigen();
        assert!(e.minor >= p.eps_min * (1.0 - 1e-9) && e.major <= p.lambda_max * (1.0 + 1e-9));
    }
    assert!(drift_norms(&res.drift, &res.metric).iter().all(|&v| v <= p.tau * (1.0 + 1e-9)));
}

#[test]
fn adam_loss_falls_across_every_twenty_iteration_window() {
    let n = 80;
    let spec = GridSpec::unit_square(n).unwrap();
    let truth = split_isotropic(n, n, 1.0, 2.0);
    let obs = vec![observe(&truth, &DriftField::zeros(n, n), spec, (40, 40), 1.0, 42)];
    let cfg = InverseConfig::default();
    let init = MetricField::isotropic(n, n, 1.0);
    let res = recover(&obs, spec, &cfg, &init, &DriftField::zeros(n, n), None).unwrap();
    let h = &res.loss_history;
    assert_eq!(h.len(), 300);
    for i in 0..h.len() - 20 {
        assert!(h[i + 20] <= h[i], "loss rose from {} at {i} to {} at {}", h[i], h[i + 20], i + 20);
    }
}
