//! Recovery of `(G, b)` from arrival-time observations by projected
//! first-order optimization.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::adjoint::{backward, loss_grad_mse, ObservationSet, ParamGradients};
use crate::error::{Error, Result};
use crate::feasibility::{
    project_drift_field, project_metric_field, tikhonov_value_grad, tv_value_grad, ProjectionConfig,
    RegValueGrad, TvVariant, DEFAULT_EPS_TV,
};
use crate::fields::{is_reached, DriftField, Grid2, GridSpec, MetricField, ScalarField, SourceMask};
use crate::sweeper::{solve, SolveOptions};

/// Which parameters are optimized and how they are stored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parameterization {
    /// `G = g I` with one scalar per node.
    Isotropic,
    /// `G = diag(g11, g22)`.
    Diagonal,
    /// All three metric channels.
    Full,
    /// `b` only; `G` stays at its initial value.
    DriftOnly,
    /// All three metric channels and both drift channels.
    Joint,
}

impl Parameterization {
    pub fn channel_names(self) -> &'static [&'static str] {
        match self {
            Parameterization::Isotropic => &["g"],
            Parameterization::Diagonal => &["g11", "g22"],
            Parameterization::Full => &["g11", "g12", "g22"],
            Parameterization::DriftOnly => &["b1", "b2"],
            Parameterization::Joint => &["g11", "g12", "g22", "b1", "b2"],
        }
    }

    pub fn optimizes_metric(self) -> bool {
        self != Parameterization::DriftOnly
    }

    pub fn optimizes_drift(self) -> bool {
        matches!(self, Parameterization::DriftOnly | Parameterization::Joint)
    }

    fn is_drift_channel(self, k: usize) -> bool {
        match self {
            Parameterization::DriftOnly => true,
            Parameterization::Joint => k >= 3,
            _ => false,
        }
    }

    /// Optimization variables of `(metric, drift)`.
    pub fn pack(self, metric: &MetricField, drift: &DriftField) -> Vec<ScalarField> {
        match self {
            Parameterization::Isotropic => vec![metric.g11.clone()],
            Parameterization::Diagonal => vec![metric.g11.clone(), metric.g22.clone()],
            Parameterization::Full => vec![metric.g11.clone(), metric.g12.clone(), metric.g22.clone()],
            Parameterization::DriftOnly => vec![drift.b1.clone(), drift.b2.clone()],
            Parameterization::Joint => vec![
                metric.g11.clone(),
                metric.g12.clone(),
                metric.g22.clone(),
                drift.b1.clone(),
                drift.b2.clone(),
            ],
        }
    }

    /// Writes optimization variables back into `(metric, drift)`.
    pub fn unpack(self, vars: &[ScalarField], metric: &mut MetricField, drift: &mut DriftField) {
        match self {
            Parameterization::Isotropic => {
                metric.g11 = vars[0].clone();
                metric.g22 = vars[0].clone();
                metric.g12.as_mut_slice().fill(0.0);
            }
            Parameterization::Diagonal => {
                metric.g11 = vars[0].clone();
                metric.g22 = vars[1].clone();
                metric.g12.as_mut_slice().fill(0.0);
            }
            Parameterization::Full => {
                metric.g11 = vars[0].clone();
                metric.g12 = vars[1].clone();
                metric.g22 = vars[2].clone();
            }
            Parameterization::DriftOnly => {
                drift.b1 = vars[0].clone();
                drift.b2 = vars[1].clone();
            }
            Parameterization::Joint => {
                metric.g11 = vars[0].clone();
                metric.g12 = vars[1].clone();
                metric.g22 = vars[2].clone();
                drift.b1 = vars[3].clone();
                drift.b2 = vars[4].clone();
            }
        }
    }

    /// Maps a gradient in `(g11, g12, g22, b1, b2)` onto the variables.
    pub fn pull_gradient(self, g: &ParamGradients) -> Vec<ScalarField> {
        match self {
            Parameterization::Isotropic => {
                let mut s = g.g11.clone();
                for (a, b) in s.as_mut_slice().iter_mut().zip(g.g22.iter()) {
                    *a += b;
                }
                vec![s]
            }
            Parameterization::Diagonal => vec![g.g11.clone(), g.g22.clone()],
            Parameterization::Full => vec![g.g11.clone(), g.g12.clone(), g.g22.clone()],
            Parameterization::DriftOnly => vec![g.b1.clone(), g.b2.clone()],
            Parameterization::Joint => {
                vec![g.g11.clone(), g.g12.clone(), g.g22.clone(), g.b1.clone(), g.b2.clone()]
            }
        }
    }
}

/// Penalty applied to the optimized fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regularizer {
    /// Total variation; the variant applies to `G`, drift always uses
    /// [`TvVariant::Drift`].
    Tv(TvVariant),
    /// `0.5 * lambda * sum theta^2`.
    Tikhonov,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Optimizer {
    Adam,
    GradientDescent,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Halve the step sizes when the loss stops improving.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlateauSchedule {
    /// Iterations without a relative improvement of `min_rel_improvement`
    /// before the steps are multiplied by `factor`.
    pub patience: usize,
    pub factor: f64,
    pub min_rel_improvement: f64,
}

impl Default for PlateauSchedule {
    fn default() -> Self {
        PlateauSchedule {
            patience: 20,
            factor: 0.5,
            min_rel_improvement: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InverseConfig {
    pub param: Parameterization,
    pub step_g: f64,
    pub step_b: f64,
    pub optimizer: Optimizer,
    pub adam: AdamConfig,
    pub grad_clip_norm: f64,
    pub lambda_g: f64,
    pub lambda_b: f64,
    pub regularizer: Regularizer,
    pub eps_tv: f64,
    pub iters: usize,
    pub plateau: Option<PlateauSchedule>,
    pub solve: SolveOptions,
    pub projection: ProjectionConfig,
}

impl Default for InverseConfig {
    fn default() -> Self {
        InverseConfig {
            param: Parameterization::Isotropic,
            step_g: 1e-2,
            step_b: 5e-3,
            optimizer: Optimizer::Adam,
            adam: AdamConfig::default(),
            grad_clip_norm: 1.0,
            lambda_g: 0.0,
            lambda_b: 0.0,
            regularizer: Regularizer::Tv(TvVariant::Frobenius),
            eps_tv: DEFAULT_EPS_TV,
            iters: 300,
            plateau: None,
            solve: SolveOptions::default(),
            projection: ProjectionConfig::default(),
        }
    }
}

impl InverseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_g > 0.0 && self.step_b > 0.0) {
            return Err(Error::InvalidArgument("step sizes must be positive".into()));
        }
        if self.iters == 0 {
            return Err(Error::InvalidArgument("iters must be at least 1".into()));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::InvalidArgument("grad_clip_norm must be positive".into()));
        }
        if self.lambda_g < 0.0 || self.lambda_b < 0.0 {
            return Err(Error::InvalidArgument("regularization weights must be >= 0".into()));
        }
        self.projection.validate()
    }
}

/// Loss and gradient at one parameter point. Gradients are in the full
/// `(g11, g12, g22, b1, b2)` layout.
#[derive(Clone, Debug)]
pub struct Objective {
    pub loss: f64,
    pub data_loss: f64,
    pub reg_loss: f64,
    pub data_grad: ParamGradients,
    pub grad: ParamGradients,
    /// Observed nodes left unreached, summed over sources.
    pub unreached_observed: usize,
}

/// Data term and gradient for one observation set.
pub fn data_term(
    metric: &MetricField,
    drift: &DriftField,
    obs: &ObservationSet,
    spec: GridSpec,
    solve_opts: &SolveOptions,
) -> Result<(f64, ParamGradients, usize)> {
    let (t, report) = solve(metric, drift, &obs.sources, spec, solve_opts)?;
    report.ensure_converged()?;
    let mse = loss_grad_mse(&t, obs)?;
    let bw = backward(&t, metric, drift, &obs.sources, spec, solve_opts.tol, &mse.grad)?;
    Ok((mse.loss, bw.grads, mse.unreached_observed))
}

fn regularizer_term(
    metric: &MetricField,
    drift: &DriftField,
    cfg: &InverseConfig,
) -> Result<(f64, ParamGradients)> {
    let (rows, cols) = metric.dims();
    let mut grad = ParamGradients::zeros(rows, cols);
    let mut value = 0.0;
    let mut add = |r: RegValueGrad, lambda: f64, out: &mut [&mut ScalarField]| {
        value += lambda * r.value;
        for (dst, src) in out.iter_mut().zip(&r.grad) {
            for (a, b) in dst.as_mut_slice().iter_mut().zip(src.iter()) {
                *a += lambda * b;
            }
        }
    };
    if cfg.param.optimizes_metric() && cfg.lambda_g > 0.0 {
        let ch = metric.channels();
        let r = match cfg.regularizer {
            Regularizer::Tv(v) => tv_value_grad(&ch, v, cfg.eps_tv)?,
            Regularizer::Tikhonov => tikhonov_value_grad(&ch, 1.0),
        };
        add(r, cfg.lambda_g, &mut [&mut grad.g11, &mut grad.g12, &mut grad.g22]);
    }
    if cfg.param.optimizes_drift() && cfg.lambda_b > 0.0 {
        let ch = drift.channels();
        let r = match cfg.regularizer {
            Regularizer::Tv(_) => tv_value_grad(&ch, TvVariant::Drift, cfg.eps_tv)?,
            Regularizer::Tikhonov => tikhonov_value_grad(&ch, 1.0),
        };
        add(r, cfg.lambda_b, &mut [&mut grad.b1, &mut grad.b2]);
    }
    Ok((value, grad))
}

/// Regularized least-squares loss summed over all observation sets, and its
/// gradient. Sources are evaluated on separate threads.
pub fn objective_and_grad(
    metric: &MetricField,
    drift: &DriftField,
    obs: &[ObservationSet],
    spec: GridSpec,
    cfg: &InverseConfig,
) -> Result<Objective> {
    if obs.is_empty() {
        return Err(Error::InvalidArgument("no observation sets".into()));
    }
    let terms: Vec<Result<(f64, ParamGradients, usize)>> = if obs.len() == 1 {
        vec![data_term(metric, drift, &obs[0], spec, &cfg.solve)]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = obs
                .iter()
                .map(|o| s.spawn(move || data_term(metric, drift, o, spec, &cfg.solve)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("source worker panicked"))
                .collect()
        })
    };

    let (rows, cols) = metric.dims();
    let mut data_grad = ParamGradients::zeros(rows, cols);
    let mut data_loss = 0.0;
    let mut unreached_observed = 0;
    for term in terms {
        let (l, g, u) = term?;
        data_loss += l;
        data_grad.add_assign(&g);
        unreached_observed += u;
    }
    let (reg_loss, reg_grad) = regularizer_term(metric, drift, cfg)?;
    let mut grad = data_grad.clone();
    grad.add_assign(&reg_grad);
    Ok(Objective {
        loss: data_loss + reg_loss,
        data_loss,
        reg_loss,
        data_grad,
        grad,
        unreached_observed,
    })
}

/// Scales `grads` so their joint Euclidean norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [ScalarField], max_norm: f64) -> f64 {
    let n = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if n > max_norm {
        let s = max_norm / n;
        for g in grads.iter_mut() {
            for v in g.as_mut_slice() {
                *v *= s;
            }
        }
    }
    n
}

/// First and second moment estimates for [`adam_step`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<ScalarField>,
    pub v: Vec<ScalarField>,
    pub t: u32,
}

impl AdamState {
    pub fn new(like: &[ScalarField]) -> Self {
        let zeros: Vec<ScalarField> = like.iter().map(|g| g.map(|_| 0.0)).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// Clips `grads` to `clip_norm` jointly, then applies one bias-corrected
/// Adam update with per-channel step sizes.
pub fn adam_step(
    params: &mut [ScalarField],
    grads: &[ScalarField],
    steps: &[f64],
    clip_norm: f64,
    cfg: &AdamConfig,
    state: &mut AdamState,
) -> Result<()> {
    check_shapes(params, grads, steps)?;
    if state.m.len() != params.len() || state.m.iter().zip(params.iter()).any(|(m, p)| m.dims() != p.dims()) {
        return Err(Error::DimensionMismatch("Adam state does not match parameters".into()));
    }
    let mut g = grads.to_vec();
    clip_global_norm(&mut g, clip_norm);
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for k in 0..params.len() {
        let p = params[k].as_mut_slice();
        let m = state.m[k].as_mut_slice();
        let v = state.v[k].as_mut_slice();
        for (i, &gi) in g[k].iter().enumerate() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] -= steps[k] * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Clipped plain gradient descent with per-channel step sizes.
pub fn gd_step(params: &mut [ScalarField], grads: &[ScalarField], steps: &[f64], clip_norm: f64) -> Result<()> {
    check_shapes(params, grads, steps)?;
    let mut g = grads.to_vec();
    clip_global_norm(&mut g, clip_norm);
    for k in 0..params.len() {
        for (p, gi) in params[k].as_mut_slice().iter_mut().zip(g[k].iter()) {
            *p -= steps[k] * gi;
        }
    }
    Ok(())
}

fn check_shapes(params: &[ScalarField], grads: &[ScalarField], steps: &[f64]) -> Result<()> {
    if params.len() != grads.len()
        || params.len() != steps.len()
        || params.iter().zip(grads).any(|(p, g)| p.dims() != g.dims())
    {
        return Err(Error::DimensionMismatch("parameters, gradients and steps differ".into()));
    }
    Ok(())
}

/// `||est - truth||_2 / ||truth||_2` over all nodes and the given channels.
/// Falls back to the RMS of `est - truth` when the truth is identically zero.
pub fn relative_error(est: &[&ScalarField], truth: &[&ScalarField]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut n = 0usize;
    for (e, t) in est.iter().zip(truth) {
        for (a, b) in e.iter().zip(t.iter()) {
            num += (a - b) * (a - b);
            den += b * b;
            n += 1;
        }
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        (num / n.max(1) as f64).sqrt()
    }
}

/// Ground-truth fields for error reporting.
#[derive(Clone, Copy, Debug)]
pub struct Truth<'a> {
    pub metric: &'a MetricField,
    pub drift: &'a DriftField,
}

impl Truth<'_> {
    /// Combined and per-channel relative errors of the optimized channels.
    pub fn errors(&self, param: Parameterization, metric: &MetricField, drift: &DriftField) -> (f64, Vec<f64>) {
        let est = param.pack(metric, drift);
        let tru = param.pack(self.metric, self.drift);
        let e: Vec<&ScalarField> = est.iter().collect();
        let t: Vec<&ScalarField> = tru.iter().collect();
        let per = e
            .iter()
            .zip(&t)
            .map(|(a, b)| relative_error(&[a], &[b]))
            .collect();
        (relative_error(&e, &t), per)
    }
}

#[derive(Clone, Debug)]
pub struct RecoveryResult {
    pub metric: MetricField,
    pub drift: DriftField,
    /// Loss at the iterate each step started from.
    pub loss_history: Vec<f64>,
    /// Error against the truth after each step; empty without a truth.
    pub error_history: Vec<f64>,
    /// Per-channel errors of the returned fields, in
    /// [`Parameterization::channel_names`] order; empty without a truth.
    pub component_errors: Vec<f64>,
    pub iterations: usize,
    /// Step-size multiplier in effect at the end.
    pub step_scale: f64,
}

impl RecoveryResult {
    pub fn final_error(&self) -> Option<f64> {
        self.error_history.last().copied()
    }
}

/// Projects `(metric, drift)` onto the feasible set.
pub fn project_fields(metric: &mut MetricField, drift: &mut DriftField, cfg: &ProjectionConfig) {
    project_metric_field(metric, cfg);
    project_drift_field(drift, metric, cfg);
}

/// Runs `cfg.iters` projected optimizer steps from `(init_metric, init_drift)`.
pub fn recover(
    obs: &[ObservationSet],
    spec: GridSpec,
    cfg: &InverseConfig,
    init_metric: &MetricField,
    init_drift: &DriftField,
    truth: Option<Truth<'_>>,
) -> Result<RecoveryResult> {
    cfg.validate()?;
    spec.check_dims("initial metric", init_metric.dims())?;
    spec.check_dims("initial drift", init_drift.dims())?;
    let param = cfg.param;
    let mut metric = init_metric.clone();
    let mut drift = init_drift.clone();
    project_fields(&mut metric, &mut drift, &cfg.projection);
    let mut vars = param.pack(&metric, &drift);
    let base_steps: Vec<f64> = (0..vars.len())
        .map(|k| if param.is_drift_channel(k) { cfg.step_b } else { cfg.step_g })
        .collect();
    let mut scale = 1.0;
    let mut adam = AdamState::new(&vars);

    let mut loss_history = Vec::with_capacity(cfg.iters);
    let mut error_history = Vec::new();
    let mut initial = None;
    let mut best = f64::INFINITY;
    let mut since_best = 0;

    for it in 0..cfg.iters {
        let obj = objective_and_grad(&metric, &drift, obs, spec, cfg)?;
        let init_loss = *initial.get_or_insert(obj.loss);
        if !obj.loss.is_finite() || obj.loss > 1e6 * init_loss {
            return Err(Error::DivergedLoss {
                iteration: it,
                loss: obj.loss,
                initial: init_loss,
            });
        }
        loss_history.push(obj.loss);

        if let Some(p) = cfg.plateau {
            if obj.loss < best * (1.0 - p.min_rel_improvement) {
                best = obj.loss;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= p.patience {
                    scale *= p.factor;
                    since_best = 0;
                    best = obj.loss;
                }
            }
        }

        let grads = param.pull_gradient(&obj.grad);
        let steps: Vec<f64> = base_steps.iter().map(|s| s * scale).collect();
        match cfg.optimizer {
            Optimizer::Adam => adam_step(&mut vars, &grads, &steps, cfg.grad_clip_norm, &cfg.adam, &mut adam)?,
            Optimizer::GradientDescent => gd_step(&mut vars, &grads, &steps, cfg.grad_clip_norm)?,
        }
        param.unpack(&vars, &mut metric, &mut drift);
        project_fields(&mut metric, &mut drift, &cfg.projection);
        vars = param.pack(&metric, &drift);

        if let Some(t) = truth {
            error_history.push(t.errors(param, &metric, &drift).0);
        }
    }

    let component_errors = truth.map(|t| t.errors(param, &metric, &drift).1).unwrap_or_default();
    Ok(RecoveryResult {
        metric,
        drift,
        loss_history,
        error_history,
        component_errors,
        iterations: cfg.iters,
        step_scale: scale,
    })
}

/// Synthetic observations from a forward solve with the true fields.
///
/// Samples `floor(density * n)` of the `n` reached non-source nodes without
/// replacement and adds Gaussian noise with standard deviation
/// `noise_level * std(T)` over the sample, clamping times at zero.
#[allow(clippy::too_many_arguments)]
pub fn generate_observations(
    metric: &MetricField,
    drift: &DriftField,
    sources: &SourceMask,
    spec: GridSpec,
    density: f64,
    noise_level: f64,
    seed: u64,
    solve_opts: &SolveOptions,
) -> Result<ObservationSet> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidArgument(format!("density {density} not in (0, 1]")));
    }
    if !(noise_level >= 0.0 && noise_level.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise level {noise_level} must be >= 0")));
    }
    let (t, report) = solve(metric, drift, sources, spec, solve_opts)?;
    report.ensure_converged()?;
    let candidates: Vec<usize> = (0..spec.len())
        .filter(|&i| !sources.is_source(i) && is_reached(t.as_slice()[i]))
        .collect();
    let count = (density * candidates.len() as f64).floor() as usize;
    if count == 0 {
        return Err(Error::InvalidArgument(format!(
            "density {density} selects no nodes out of {}",
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, candidates.len(), count)
        .into_iter()
        .map(|k| candidates[k])
        .collect();
    picked.sort_unstable();
    let mut times: Vec<f64> = picked.iter().map(|&i| t.as_slice()[i]).collect();

    if noise_level > 0.0 {
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        let var = times.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / times.len() as f64;
        let sigma = noise_level * var.sqrt();
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma)
                .map_err(|e| Error::InvalidArgument(format!("noise distribution: {e}")))?;
            for v in &mut times {
                *v = (*v + normal.sample(&mut rng)).max(0.0);
            }
        }
    }
    let mut obs = ObservationSet::new(sources.clone(), picked, times)?;
    obs.noise_level = Some(noise_level);
    Ok(obs)
}

/// One row of a multi-source study.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiSourceRow {
    pub sources: usize,
    pub observations: usize,
    pub error: f64,
}

/// Source locations used by [`multi_source_recover`], as fractions of the
/// grid extent `(row, col)`.
pub const MULTI_SOURCE_SITES: [(f64, f64); 5] = [(0.5, 0.5), (0.2, 0.2), (0.8, 0.8), (0.2, 0.8), (0.8, 0.2)];

pub fn multi_source_site(spec: GridSpec, k: usize) -> (usize, usize) {
    let (fr, fc) = MULTI_SOURCE_SITES[k];
    let r = (fr * (spec.rows - 1) as f64).round() as usize;
    let c = (fc * (spec.cols - 1) as f64).round() as usize;
    (r, c)
}

/// Joint recovery from the first `k` sites of [`MULTI_SOURCE_SITES`] for each
/// `k` in `counts`, each source observed at `density` with its own seed.
#[allow(clippy::too_many_arguments)]
pub fn multi_source_recover(
    counts: &[usize],
    truth_metric: &MetricField,
    truth_drift: &DriftField,
    spec: GridSpec,
    density: f64,
    noise_level: f64,
    seed: u64,
    cfg: &InverseConfig,
    init_metric: &MetricField,
    init_drift: &DriftField,
) -> Result<Vec<MultiSourceRow>> {
    let max_k = counts.iter().copied().max().unwrap_or(0);
    if max_k > MULTI_SOURCE_SITES.len() || counts.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "source counts must lie in 1..={}",
            MULTI_SOURCE_SITES.len()
        )));
    }
    let all: Vec<ObservationSet> = (0..max_k)
        .map(|k| {
            let (r, c) = multi_source_site(spec, k);
            let src = SourceMask::point(spec.rows, spec.cols, r, c)?;
            generate_observations(
                truth_metric,
                truth_drift,
                &src,
                spec,
                density,
                noise_level,
                seed.wrapping_add(k as u64),
                &cfg.solve,
            )
        })
        .collect::<Result<_>>()?;
    let truth = Truth {
        metric: truth_metric,
        drift: truth_drift,
    };
    counts
        .iter()
        .map(|&k| {
            let res = recover(&all[..k], spec, cfg, init_metric, init_drift, Some(truth))?;
            Ok(MultiSourceRow {
                sources: k,
                observations: all[..k].iter().map(|o| o.len()).sum(),
                error: res.final_error().unwrap_or(f64::NAN),
            })
        })
        .collect()
}

/// Piecewise-constant isotropic metric: `left` for columns below `cols / 2`,
/// `right` elsewhere.
pub fn split_isotropic(rows: usize, cols: usize, left: f64, right: f64) -> MetricField {
    let g = Grid2::from_fn(rows, cols, |_, c| if c < cols / 2 { left } else { right });
    MetricField::new(g.clone(), Grid2::filled(rows, cols, 0.0), g).expect("shapes agree")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Sym2;

    fn field(v: &[f64]) -> ScalarField {
        Grid2::from_vec(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = vec![field(&[1.0, -2.0])];
        let g = vec![field(&[0.0, 0.0])];
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &[0.1], 1.0, &AdamConfig::default(), &mut st).unwrap();
        assert_eq!(p[0].as_slice(), &[1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_moves_by_the_step() {
        let mut p = vec![field(&[0.0, 0.0, 0.0])];
        let g = vec![field(&[0.5, -0.3, 1e-3])];
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &[0.01], 10.0, &AdamConfig::default(), &mut st).unwrap();
        // The bias-corrected first step is step * g / (|g| + eps).
        for (x, gi) in p[0].iter().zip(g[0].iter()) {
            let want = -0.01 * gi / (gi.abs() + 1e-8);
            assert!((x - want).abs() < 1e-15, "{x} vs {want}");
        }
    }

    #[test]
    fn clipping_rescales_to_the_cap() {
        let mut g = vec![field(&[6.0]), field(&[8.0])];
        let before = clip_global_norm(&mut g, 1.0);
        assert_eq!(before, 10.0);
        let after = (g[0][0].powi(2) + g[1][0].powi(2)).sqrt();
        assert!((after - 1.0).abs() < 1e-15);
        let mut small = vec![field(&[0.1])];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0][0], 0.1);
    }

    #[test]
    fn pack_unpack_round_trip() {
        let m = MetricField::constant(3, 3, Sym2::new(2.0, 0.1, 1.5));
        let d = DriftField::constant(3, 3, [0.1, -0.2]);
        for p in [
            Parameterization::Full,
            Parameterization::DriftOnly,
            Parameterization::Joint,
        ] {
            let vars = p.pack(&m, &d);
            assert_eq!(vars.len(), p.channel_names().len());
            let (mut m2, mut d2) = (MetricField::isotropic(3, 3, 1.0), DriftField::zeros(3, 3));
            if p == Parameterization::DriftOnly {
                m2 = m.clone();
            }
            p.unpack(&vars, &mut m2, &mut d2);
            assert_eq!(m2, m);
            if p.optimizes_drift() {
                assert_eq!(d2, d);
            }
        }
    }

    #[test]
    fn isotropic_gradient_sums_the_diagonal() {
        let mut g = ParamGradients::zeros(1, 2);
        g.g11[0] = 1.0;
        g.g22[0] = 2.0;
        g.g12[0] = 5.0;
        let v = Parameterization::Isotropic.pull_gradient(&g);
        assert_eq!(v[0].as_slice(), &[3.0, 0.0]);
        let v = Parameterization::Diagonal.pull_gradient(&g);
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn relative_error_cases() {
        let a = field(&[1.0, 2.0]);
        assert_eq!(relative_error(&[&a], &[&a]), 0.0);
        let b = field(&[1.0, 1.0]);
        assert!((relative_error(&[&a], &[&b]) - (0.5f64).sqrt()).abs() < 1e-15);
        let z = field(&[0.0, 0.0]);
        assert!((relative_error(&[&b], &[&z]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn observations_are_deterministic_and_sized() {
        let spec = GridSpec::new(20, 20, 1.0).unwrap();
        let m = MetricField::isotropic(20, 20, 1.0);
        let d = DriftField::zeros(20, 20);
        let src = SourceMask::point(20, 20, 10, 10).unwrap();
        let opts = SolveOptions::default();
        let a = generate_observations(&m, &d, &src, spec, 0.1, 0.05, 9, &opts).unwrap();
        let b = generate_observations(&m, &d, &src, spec, 0.1, 0.05, 9, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 39);
        let full = generate_observations(&m, &d, &src, spec, 1.0, 0.0, 1, &opts).unwrap();
        assert_eq!(full.len(), 399);
        let (t, _) = solve(&m, &d, &src, spec, &opts).unwrap();
        for (&n, &v) in full.nodes.iter().zip(&full.times) {
            assert_eq!(v, t.as_slice()[n]);
        }
    }

    #[test]
    fn bad_density_is_rejected() {
        let spec = GridSpec::new(5, 5, 1.0).unwrap();
        let m = MetricField::isotropic(5, 5, 1.0);
        let d = DriftField::zeros(5, 5);
        let src = SourceMask::point(5, 5, 2, 2).unwrap();
        let o = SolveOptions::default();
        assert!(generate_observations(&m, &d, &src, spec, 0.0, 0.0, 1, &o).is_err());
        assert!(generate_observations(&m, &d, &src, spec, 1.5, 0.0, 1, &o).is_err());
        assert!(generate_observations(&m, &d, &src, spec, 0.01, 0.0, 1, &o).is_err());
    }
}
