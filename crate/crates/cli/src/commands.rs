use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rfek_core::feasibility::TvVariant;
use rfek_core::inversion::{Regularizer, Truth};
use rfek_core::io::{
    read_drift, read_metric, read_observations, read_sources, write_drift, write_field, write_metric,
    write_observations, write_sources,
};
use rfek_core::oracle::{
    convergence_study, fit_rate, gradient_check, scenario as build_scenario, CaseProblem, GradCase, GradProblem,
    ScenarioKind, ScenarioParams, StudyCase,
};
use rfek_core::{
    generate_observations, recover, solve as sweep_solve, solve_jacobi, DriftField, GridSpec, InverseConfig,
    MetricField, ObservationSet, Optimizer, Parameterization, SolveOptions,
};

use crate::args::{
    BenchArgs, CaseArg, ConvergenceArgs, GradCaseArg, GradcheckArgs, InvertArgs, ObserveArgs, OptimizerArg,
    ParamArg, RegArg, ScenarioArgs, SolveArgs, SolverKind,
};
use crate::Failure;

type CmdResult = std::result::Result<(), Failure>;

/// Relative error above which a gradient-check point fails.
const GRADCHECK_THRESHOLD: f64 = 1e-5;

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn solve_options(tol: f64, max_iters: usize) -> std::result::Result<SolveOptions, Failure> {
    if !(tol >= 0.0 && tol.is_finite()) {
        return Err(Failure::usage(format!("--tol must be a finite value >= 0, got {tol}")));
    }
    if max_iters == 0 {
        return Err(Failure::usage("--max-iters must be at least 1"));
    }
    Ok(SolveOptions::with_tol(tol, max_iters))
}

fn grid_spec(rows: usize, cols: usize, h: Option<f64>) -> std::result::Result<GridSpec, Failure> {
    Ok(GridSpec::new(rows, cols, h.unwrap_or(1.0 / cols as f64))?)
}

fn study_case(c: CaseArg) -> StudyCase {
    match c {
        CaseArg::Iso => StudyCase::Isotropic,
        CaseArg::Aniso => StudyCase::Diagonal,
        CaseArg::Rotated => StudyCase::Rotated,
        CaseArg::Combined => StudyCase::Combined,
    }
}

pub fn solve(a: SolveArgs) -> CmdResult {
    let opts = solve_options(a.tol, a.max_iters)?;
    let metric = read_metric(&a.metric)?;
    let drift = read_drift(&a.drift)?;
    let sources = read_sources(&a.sources)?;
    let (rows, cols) = sources.dims();
    let spec = GridSpec::new(rows, cols, a.h)?;
    let (t, report) = match a.solver {
        SolverKind::Sweep => sweep_solve(&metric, &drift, &sources, spec, &opts)?,
        SolverKind::Jacobi => solve_jacobi(&metric, &drift, &sources, spec, &opts)?,
    };
    write_field(&a.out, &[&t.t])?;
    println!("iters={} max_delta={:e}", report.iterations, report.final_delta());
    report.ensure_converged()?;
    Ok(())
}

pub fn observe(a: ObserveArgs) -> CmdResult {
    let metric = read_metric(&a.metric)?;
    let drift = read_drift(&a.drift)?;
    let sources = read_sources(&a.sources)?;
    let (rows, cols) = sources.dims();
    let spec = grid_spec(rows, cols, a.h)?;
    let obs = generate_observations(
        &metric,
        &drift,
        &sources,
        spec,
        a.density,
        a.noise,
        a.seed,
        &SolveOptions::default(),
    )?;
    write_observations(&a.out, &obs)?;
    println!("observations={}", obs.len());
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> CmdResult {
    if a.points == 0 {
        return Err(Failure::usage("--points must be at least 1"));
    }
    if !(a.eps > 0.0) {
        return Err(Failure::usage("--eps must be positive"));
    }
    let case = match a.case {
        GradCaseArg::Iso => GradCase::Isotropic,
        GradCaseArg::Aniso => GradCase::Anisotropic,
        GradCaseArg::Drift => GradCase::Drift,
    };
    let problem = GradProblem::new(case, a.size)?;
    let checks = gradient_check(&problem, a.points, a.eps, a.seed)?;
    let mut worst = 0.0f64;
    for (k, p) in checks.iter().enumerate() {
        let e = p.max_rel_error();
        worst = worst.max(e);
        println!("point={k} row={} col={} max_rel_error={e:e}", p.row, p.col);
    }
    let pass = worst < GRADCHECK_THRESHOLD;
    println!(
        "points={} max_rel_error={worst:e} result={}",
        checks.len(),
        if pass { "PASS" } else { "FAIL" }
    );
    if pass {
        Ok(())
    } else {
        Err(Failure::numerical(format!(
            "gradient check failed: max relative error {worst:e} >= {GRADCHECK_THRESHOLD:e}"
        )))
    }
}

fn inverse_config(a: &InvertArgs) -> InverseConfig {
    InverseConfig {
        param: match a.param {
            ParamArg::Iso => Parameterization::Isotropic,
            ParamArg::Diag => Parameterization::Diagonal,
            ParamArg::Full => Parameterization::Full,
            ParamArg::Drift => Parameterization::DriftOnly,
            ParamArg::Joint => Parameterization::Joint,
        },
        optimizer: match a.optimizer {
            OptimizerArg::Adam => Optimizer::Adam,
            OptimizerArg::Gd => Optimizer::GradientDescent,
        },
        regularizer: match a.reg {
            RegArg::TvFrobenius => Regularizer::Tv(TvVariant::Frobenius),
            RegArg::TvLogEuclidean => Regularizer::Tv(TvVariant::LogEuclidean),
            RegArg::Tikhonov => Regularizer::Tikhonov,
        },
        lambda_g: a.lambda_g,
        lambda_b: a.lambda_b,
        iters: a.iters,
        step_g: a.step_g,
        step_b: a.step_b,
        ..InverseConfig::default()
    }
}

pub fn invert(a: InvertArgs) -> CmdResult {
    let cfg = inverse_config(&a);
    cfg.validate()?;
    let obs: Vec<ObservationSet> = a.obs.iter().map(read_observations).collect::<Result<_, _>>()?;
    let (rows, cols) = obs[0].sources.dims();
    if obs.iter().any(|o| o.sources.dims() != (rows, cols)) {
        return Err(Failure::usage("dimension mismatch: observation bundles differ in size"));
    }
    let spec = grid_spec(rows, cols, a.h)?;
    let init_metric = if a.init == "default" {
        MetricField::isotropic(rows, cols, 1.0)
    } else {
        read_metric(&a.init)?
    };
    let init_drift = match &a.init_drift {
        Some(p) => read_drift(p)?,
        None => DriftField::zeros(rows, cols),
    };
    let truth = match &a.truth {
        Some(p) => {
            let m = read_metric(p)?;
            let d = match &a.truth_drift {
                Some(q) => read_drift(q)?,
                None => DriftField::zeros(rows, cols),
            };
            spec.check_dims("truth metric", m.dims())?;
            spec.check_dims("truth drift", d.dims())?;
            Some((m, d))
        }
        None => None,
    };
    let result = recover(
        &obs,
        spec,
        &cfg,
        &init_metric,
        &init_drift,
        truth.as_ref().map(|(metric, drift)| Truth { metric, drift }),
    )?;

    write_metric(with_suffix(&a.out_prefix, "_metric.rfek"), &result.metric)?;
    write_drift(with_suffix(&a.out_prefix, "_drift.rfek"), &result.drift)?;
    write_history(&with_suffix(&a.out_prefix, "_history.csv"), &result.loss_history, &result.error_history)?;

    let final_loss = result.loss_history.last().copied().unwrap_or(f64::NAN);
    println!("iterations={} final_loss={final_loss:e}", result.iterations);
    if let Some(e) = result.final_error() {
        println!("rel_error={e}");
        for (name, e) in cfg.param.channel_names().iter().zip(&result.component_errors) {
            println!("rel_error_{name}={e}");
        }
    }
    Ok(())
}

fn write_history(path: &Path, loss: &[f64], error: &[f64]) -> std::io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "iteration,loss,rel_error")?;
    for (k, l) in loss.iter().enumerate() {
        match error.get(k) {
            Some(e) => writeln!(w, "{k},{l},{e}")?,
            None => writeln!(w, "{k},{l},")?,
        }
    }
    w.flush()
}

pub fn convergence(a: ConvergenceArgs) -> CmdResult {
    let report = convergence_study(&a.sizes, study_case(a.case), &SolveOptions::default())?;
    report.write_csv(&a.out)?;
    for r in &report.rows {
        println!("n={} rel_l2={:e} iterations={}", r.n, r.rel_l2, r.iterations);
    }
    println!("alpha={}", report.alpha);
    Ok(())
}

pub fn scenario(a: ScenarioArgs) -> CmdResult {
    let kind: ScenarioKind = a.kind.parse()?;
    let defaults = ScenarioParams::default();
    let params = ScenarioParams {
        size: a.size,
        alpha: a.alpha.unwrap_or(defaults.alpha),
        correlation_length: a.correlation_length.unwrap_or(defaults.correlation_length),
        ..defaults
    };
    let s = build_scenario(kind, &params, a.seed)?;
    write_metric(with_suffix(&a.out_prefix, "_metric.rfek"), &s.metric)?;
    write_drift(with_suffix(&a.out_prefix, "_drift.rfek"), &s.drift)?;
    write_sources(with_suffix(&a.out_prefix, "_sources.rfek"), &s.sources)?;
    println!("kind={} size={}", kind.name(), a.size);
    if let Some(rep) = &s.report {
        rep.write_csv(with_suffix(&a.out_prefix, "_report.csv"))?;
        println!("report_rows={}", rep.rows.len());
    }
    Ok(())
}

pub fn bench(a: BenchArgs) -> CmdResult {
    if a.repeat == 0 {
        return Err(Failure::usage("--repeat must be at least 1"));
    }
    if a.sizes.is_empty() || a.sizes.contains(&0) {
        return Err(Failure::usage("--sizes must list positive grid sizes"));
    }
    let opts = SolveOptions::default();
    let case = study_case(a.case);
    let mut rows = Vec::with_capacity(a.sizes.len());
    for &n in &a.sizes {
        let p = CaseProblem::new(case, n)?;
        let mut times = Vec::with_capacity(a.repeat);
        let mut iterations = 0;
        for _ in 0..a.repeat {
            let start = Instant::now();
            let (_, report) = match a.solver {
                SolverKind::Sweep => sweep_solve(&p.metric, &p.drift, &p.sources, p.spec, &opts)?,
                SolverKind::Jacobi => {
                    let jopts = SolveOptions::with_tol(opts.tol, 100 * n);
                    solve_jacobi(&p.metric, &p.drift, &p.sources, p.spec, &jopts)?
                }
            };
            times.push(start.elapsed().as_secs_f64());
            report.ensure_converged()?;
            iterations = report.iterations;
        }
        times.sort_by(f64::total_cmp);
        rows.push((n, iterations, times[times.len() / 2]));
    }

    let mut w = BufWriter::new(fs::File::create(&a.out)?);
    writeln!(w, "size,iterations,median_seconds")?;
    for (n, it, t) in &rows {
        writeln!(w, "{n},{it},{t}")?;
    }
    w.flush()?;

    for (n, it, _) in &rows {
        println!("size={n} iterations={it}");
    }
    if rows.len() >= 2 {
        let n: Vec<f64> = rows.iter().map(|r| r.0 as f64).collect();
        let it: Vec<f64> = rows.iter().map(|r| r.1 as f64).collect();
        println!("iteration_slope={}", fit_rate(&n, &it));
    }
    Ok(())
}
