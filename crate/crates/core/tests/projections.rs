use proptest::prelude::*;
use rfek_core::linalg::norm;
use rfek_core::{project_drift, project_spd, ProjectionConfig, Sym2, Vec2};

fn any_sym() -> impl Strategy<Value = Sym2> {
    // Entries spread over several decades, including indefinite and
    // negative-definite matrices.
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -4.0f64..4.0)
        .prop_map(|(a, b, c, e)| {
            let s = 10f64.powf(e);
            Sym2::new(a * s, b * s, c * s)
        })
}

fn any_drift() -> impl Strategy<Value = Vec2> {
    (-1.0f64..1.0, -1.0f64..1.0, -3.0f64..2.0).prop_map(|(x, y, e)| {
        let s = 10f64.powf(e);
        [x * s, y * s]
    })
}

fn config() -> ProjectionConfig {
    ProjectionConfig::default()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn spd_projection_is_idempotent(g in any_sym()) {
        let cfg = config();
        let p = project_spd(g, &cfg);
        prop_assert_eq!(project_spd(p, &cfg), p);
    }

    #[test]
    fn spd_projection_bounds_the_spectrum(g in any_sym()) {
        let cfg = config();
        let e = project_spd(g, &cfg).eigen();
        prop_assert!(e.minor >= cfg.eps_min * (1.0 - 1e-9), "minor {}", e.minor);
        prop_assert!(e.major <= cfg.lambda_max * (1.0 + 1e-9), "major {}", e.major);
    }

    #[test]
    fn feasible_metrics_are_untouched(major in 1e-3f64..1e3, ratio in 0.0f64..1.0, angle in -3.2f64..3.2) {
        let cfg = config();
        let minor = (cfg.eps_min + ratio * (major - cfg.eps_min)).max(cfg.eps_min);
        let g = Sym2::from_eigen(major, minor, angle);
        prop_assert_eq!(project_spd(g, &cfg), g);
    }

    #[test]
    fn drift_projection_is_idempotent(g in any_sym(), b in any_drift()) {
        let cfg = config();
        let g = project_spd(g, &cfg);
        let p = project_drift(b, &g, &cfg);
        prop_assert_eq!(project_drift(p, &g, &cfg), p);
    }

    #[test]
    fn drift_projection_caps_both_norms(g in any_sym(), b in any_drift()) {
        let cfg = config();
        let g = project_spd(g, &cfg);
        let p = project_drift(b, &g, &cfg);
        prop_assert!(g.inv_quad(p).sqrt() <= cfg.tau * (1.0 + 1e-9));
        prop_assert!(g.inv_quad(p).sqrt() < 1.0);
        prop_assert!(norm(p) <= cfg.euclid_cap * (1.0 + 1e-9));
    }

    #[test]
    fn drift_projection_only_shrinks(g in any_sym(), b in any_drift()) {
        let cfg = config();
        let g = project_spd(g, &cfg);
        let p = project_drift(b, &g, &cfg);
        // Same direction, no longer than the input.
        let cross = b[0] * p[1] - b[1] * p[0];
        prop_assert!(cross.abs() <= 1e-12 * norm(b) * norm(b).max(1.0));
        prop_assert!(b[0] * p[0] + b[1] * p[1] >= 0.0);
        prop_assert!(norm(p) <= norm(b) * (1.0 + 1e-12));
    }
}
