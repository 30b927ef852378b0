//! Finite-difference checks of the adjoint gradient, stencil-selection
//! diagnostics and gradient stability under parameter noise.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::adjoint::{
    backward, identify_stencils, loss_grad_mse, ObservationSet, ParamGradients, StencilRecords, UNREACHED_TIME_CAP,
};
use crate::error::{Error, Result};
use crate::feasibility::{project_metric_field, ProjectionConfig};
use crate::fields::{is_reached, ArrivalField, DriftField, Grid2, GridSpec, MetricField, ScalarField, SourceMask};
use crate::linalg::Sym2;
use crate::sweeper::{solve, SolveOptions};

/// Solve until an iteration changes nothing, so perturbed solves land on
/// exact fixed points.
pub fn exact_solve_options() -> SolveOptions {
    SolveOptions::with_tol(0.0, 1000)
}

/// One of the five per-node parameter channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    G11,
    /// The off-diagonal value, entering both off-diagonal entries.
    G12,
    G22,
    B1,
    B2,
}

impl Channel {
    pub const ALL: [Channel; 5] = [Channel::G11, Channel::G12, Channel::G22, Channel::B1, Channel::B2];

    pub fn name(self) -> &'static str {
        match self {
            Channel::G11 => "g11",
            Channel::G12 => "g12",
            Channel::G22 => "g22",
            Channel::B1 => "b1",
            Channel::B2 => "b2",
        }
    }

    pub fn field_mut<'a>(self, metric: &'a mut MetricField, drift: &'a mut DriftField) -> &'a mut ScalarField {
        match self {
            Channel::G11 => &mut metric.g11,
            Channel::G12 => &mut metric.g12,
            Channel::G22 => &mut metric.g22,
            Channel::B1 => &mut drift.b1,
            Channel::B2 => &mut drift.b2,
        }
    }

    pub fn gradient(self, g: &ParamGradients) -> &ScalarField {
        match self {
            Channel::G11 => &g.g11,
            Channel::G12 => &g.g12,
            Channel::G22 => &g.g22,
            Channel::B1 => &g.b1,
            Channel::B2 => &g.b2,
        }
    }
}

/// `(L(theta + eps e) - L(theta - eps e)) / (2 eps)` for the unit vector `e`
/// of `channel` at `node`.
pub fn fd_gradient(
    metric: &MetricField,
    drift: &DriftField,
    node: usize,
    channel: Channel,
    eps: f64,
    loss: impl Fn(&MetricField, &DriftField) -> Result<f64>,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let (mut m, mut d) = (metric.clone(), drift.clone());
    let base = channel.field_mut(&mut m, &mut d)[node];
    channel.field_mut(&mut m, &mut d)[node] = base + eps;
    let up = loss(&m, &d)?;
    channel.field_mut(&mut m, &mut d)[node] = base - eps;
    let down = loss(&m, &d)?;
    Ok((up - down) / (2.0 * eps))
}

/// Gradient-verification configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradCase {
    /// Smoothly varying isotropic metric, zero drift; checks all channels.
    Isotropic,
    /// Smoothly varying rotated anisotropic metric; checks the metric.
    Anisotropic,
    /// Identity metric with a varying drift; checks the drift.
    Drift,
}

impl GradCase {
    pub fn channels(self) -> &'static [Channel] {
        match self {
            GradCase::Isotropic => &Channel::ALL,
            GradCase::Anisotropic => &[Channel::G11, Channel::G12, Channel::G22],
            GradCase::Drift => &[Channel::B1, Channel::B2],
        }
    }
}

impl FromStr for GradCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iso" | "isotropic" => Ok(GradCase::Isotropic),
            "aniso" | "anisotropic" => Ok(GradCase::Anisotropic),
            "drift" => Ok(GradCase::Drift),
            _ => Err(Error::InvalidArgument(format!("unknown gradient case {s:?}"))),
        }
    }
}

/// A least-squares loss over full observations of a target medium, evaluated
/// at a different, smoothly varying medium.
#[derive(Clone, Debug)]
pub struct GradProblem {
    pub case: GradCase,
    pub spec: GridSpec,
    pub metric: MetricField,
    pub drift: DriftField,
    pub obs: ObservationSet,
}

impl GradProblem {
    /// `n x n` grid with unit spacing and a source at the center.
    pub fn new(case: GradCase, n: usize) -> Result<Self> {
        let spec = GridSpec::new(n, n, 1.0)?;
        let wave = |r: usize, c: usize| (r as f64 / 5.0).sin() * (c as f64 / 7.0).cos();
        let (target_m, target_d, metric, drift) = match case {
            GradCase::Isotropic => (
                MetricField::isotropic(n, n, 1.2),
                DriftField::zeros(n, n),
                MetricField::from_fn(n, n, |r, c| Sym2::scaled_identity(1.0 + 0.3 * wave(r, c))),
                DriftField::zeros(n, n),
            ),
            GradCase::Anisotropic => (
                MetricField::constant(n, n, Sym2::from_eigen(2.2, 0.6, 0.5)),
                DriftField::zeros(n, n),
                MetricField::from_fn(n, n, |r, c| {
                    let w = wave(r, c);
                    Sym2::from_eigen(2.0 * (1.0 + 0.2 * w), 0.5, std::f64::consts::FRAC_PI_6 + 0.3 * w)
                }),
                DriftField::zeros(n, n),
            ),
            GradCase::Drift => {
                let mut d = DriftField::zeros(n, n);
                for i in 0..spec.len() {
                    let (r, c) = spec.coords(i);
                    d.set(i, [0.15 + 0.05 * wave(r, c), 0.08 - 0.04 * wave(c, r)]);
                }
                (
                    MetricField::isotropic(n, n, 1.0),
                    DriftField::constant(n, n, [0.1, 0.1]),
                    MetricField::isotropic(n, n, 1.0),
                    d,
                )
            }
        };
        let sources = SourceMask::point(n, n, n / 2, n / 2)?;
        let (t, rep) = solve(&target_m, &target_d, &sources, spec, &exact_solve_options())?;
        rep.ensure_converged()?;
        let nodes: Vec<usize> = (0..spec.len()).filter(|&i| !sources.is_source(i)).collect();
        let times = nodes.iter().map(|&i| t.as_slice()[i]).collect();
        let obs = ObservationSet::new(sources, nodes, times)?;
        Ok(GradProblem {
            case,
            spec,
            metric,
            drift,
            obs,
        })
    }

    /// Exact fixed point at `(metric, drift)`.
    pub fn arrival(&self, metric: &MetricField, drift: &DriftField) -> Result<ArrivalField> {
        let (t, rep) = solve(metric, drift, &self.obs.sources, self.spec, &exact_solve_options())?;
        rep.ensure_converged()?;
        Ok(t)
    }

    pub fn loss(&self, metric: &MetricField, drift: &DriftField) -> Result<f64> {
        Ok(loss_grad_mse(&self.arrival(metric, drift)?, &self.obs)?.loss)
    }

    /// `L(a) - L(b)`, summed per node as `0.5 (T_a - T_b)(T_a + T_b - 2 T_obs)`.
    /// Nodes a perturbation does not reach contribute exactly zero, so the
    /// difference keeps its precision when the loss itself is large.
    pub fn loss_difference(&self, a: &ArrivalField, b: &ArrivalField) -> f64 {
        let capped = |t: f64| if is_reached(t) { t } else { UNREACHED_TIME_CAP };
        self.obs
            .nodes
            .iter()
            .zip(&self.obs.times)
            .map(|(&n, &obs)| {
                let (ta, tb) = (capped(a.as_slice()[n]), capped(b.as_slice()[n]));
                0.5 * (ta - tb) * (ta + tb - 2.0 * obs)
            })
            .sum()
    }

    /// Loss, adjoint gradient and stencil records at `(metric, drift)`.
    pub fn evaluate(&self, metric: &MetricField, drift: &DriftField) -> Result<(f64, ParamGradients, StencilRecords)> {
        let t = self.arrival(metric, drift)?;
        let mse = loss_grad_mse(&t, &self.obs)?;
        let bw = backward(&t, metric, drift, &self.obs.sources, self.spec, 0.0, &mse.grad)?;
        Ok((mse.loss, bw.grads, bw.records))
    }
}

/// `true` when both record sets pick the same stencil, update type and donors
/// at every node.
pub fn same_selection(a: &StencilRecords, b: &StencilRecords) -> bool {
    a.len() == b.len()
        && a.iter().zip(b.iter()).all(|(x, y)| {
            x.node == y.node && x.stencil == y.stencil && x.is_two_point() == y.is_two_point() && x.donors() == y.donors()
        })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelCheck {
    pub channel: Channel,
    pub fd: f64,
    pub adjoint: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointCheck {
    pub node: usize,
    pub row: usize,
    pub col: usize,
    pub channels: Vec<ChannelCheck>,
}

impl PointCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.channels.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_gap(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares adjoint and central-difference gradients at `points` random
/// interior nodes whose stencil selection is unchanged by every `+-eps`
/// perturbation of the checked channels. Relative errors use a floor of
/// `1e-5 * max |adjoint gradient|`, since the difference quotient resolves
/// components only to about `1e-8` in absolute terms.
pub fn gradient_check(problem: &GradProblem, points: usize, eps: f64, seed: u64) -> Result<Vec<PointCheck>> {
    if points == 0 {
        return Err(Error::InvalidArgument("need at least one point".into()));
    }
    let (_, grads, base_records) = problem.evaluate(&problem.metric, &problem.drift)?;
    let channels = problem.case.channels();
    let gmax = channels
        .iter()
        .flat_map(|c| c.gradient(&grads).iter())
        .fold(0.0f64, |a, v| a.max(v.abs()));
    let floor = 1e-5 * gmax.max(f64::MIN_POSITIVE);

    let spec = problem.spec;
    let mut candidates: Vec<usize> = (0..spec.len())
        .filter(|&i| {
            let (r, c) = spec.coords(i);
            spec.is_interior(r, c) && base_records.get(i).is_some()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);

    let mut out = Vec::with_capacity(points);
    for node in candidates {
        if out.len() == points {
            break;
        }
        let mut checks = Vec::with_capacity(channels.len());
        let mut stable = true;
        for &ch in channels {
            let mut fields = Vec::with_capacity(2);
            for sign in [1.0, -1.0] {
                let (mut m, mut d) = (problem.metric.clone(), problem.drift.clone());
                ch.field_mut(&mut m, &mut d)[node] += sign * eps;
                let t = problem.arrival(&m, &d)?;
                let rec = identify_stencils(&t, &m, &d, &problem.obs.sources, spec, 0.0)?;
                if !same_selection(&rec, &base_records) {
                    stable = false;
                    break;
                }
                fields.push(t);
            }
            if !stable {
                break;
            }
            let fd = problem.loss_difference(&fields[0], &fields[1]) / (2.0 * eps);
            let adjoint = ch.gradient(&grads)[node];
            checks.push(ChannelCheck {
                channel: ch,
                fd,
                adjoint,
                rel_error: relative_gap(fd, adjoint, floor),
            });
        }
        if stable {
            let (row, col) = spec.coords(node);
            out.push(PointCheck {
                node,
                row,
                col,
                channels: checks,
            });
        }
    }
    if out.len() < points {
        return Err(Error::InvalidArgument(format!(
            "only {} stencil-stable interior points available",
            out.len()
        )));
    }
    Ok(out)
}

/// Stencil map and update statistics of one converged solve.
#[derive(Clone, Debug, PartialEq)]
pub struct StencilDiagnostics {
    /// Winning stencil index per node, `-1` where there is no record.
    pub stencil_map: Grid2<i8>,
    /// Nodes whose 4-neighborhood holds a record with another stencil.
    pub boundary: Grid2<bool>,
    pub two_point_fraction: f64,
    pub one_point_fraction: f64,
    /// Boundary nodes over all grid nodes.
    pub boundary_fraction: f64,
    pub records: usize,
}

pub fn stencil_diagnostics(records: &StencilRecords) -> StencilDiagnostics {
    let spec = records.spec;
    let mut stencil_map = Grid2::filled(spec.rows, spec.cols, -1i8);
    let mut two = 0usize;
    for r in records.iter() {
        stencil_map[r.node] = r.stencil as i8;
        two += r.is_two_point() as usize;
    }
    let mut boundary = Grid2::filled(spec.rows, spec.cols, false);
    let mut nb = 0usize;
    for r in records.iter() {
        let (row, col) = spec.coords(r.node);
        let me = stencil_map[r.node];
        let differs = [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)].iter().any(|&(dr, dc)| {
            let (rr, cc) = (row as isize + dr, col as isize + dc);
            if rr < 0 || cc < 0 || rr >= spec.rows as isize || cc >= spec.cols as isize {
                return false;
            }
            let other = stencil_map[(rr as usize, cc as usize)];
            other >= 0 && other != me
        });
        if differs {
            boundary[r.node] = true;
            nb += 1;
        }
    }
    let n = records.len();
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    StencilDiagnostics {
        stencil_map,
        boundary,
        two_point_fraction: frac(two),
        one_point_fraction: frac(n - two),
        boundary_fraction: nb as f64 / spec.len() as f64,
        records: n,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomDirectionReport {
    pub rel_errors: Vec<f64>,
    /// Fraction of directions with relative error below 10%.
    pub fraction_within: f64,
}

/// Directional derivative along `(dm, dd)` by central differences.
pub fn directional_fd(problem: &GradProblem, dir: &[ScalarField], eps: f64) -> Result<f64> {
    let norm: f64 = dir.iter().flat_map(|f| f.iter()).map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidArgument("zero direction".into()));
    }
    let shifted = |sign: f64| {
        let (mut m, mut d) = (problem.metric.clone(), problem.drift.clone());
        for (k, ch) in problem.case.channels().iter().enumerate() {
            let f = ch.field_mut(&mut m, &mut d);
            for (x, v) in f.as_mut_slice().iter_mut().zip(dir[k].iter()) {
                *x += sign * eps * v;
            }
        }
        problem.arrival(&m, &d)
    };
    Ok(problem.loss_difference(&shifted(1.0)?, &shifted(-1.0)?) / (2.0 * eps))
}

/// Compares `grad . d` with central differences along `n_dirs` random unit
/// directions spanning every checked channel at every node.
pub fn random_direction_test(problem: &GradProblem, n_dirs: usize, eps: f64, seed: u64) -> Result<RandomDirectionReport> {
    if n_dirs < 50 {
        return Err(Error::InvalidArgument(format!("need at least 50 directions, got {n_dirs}")));
    }
    let (_, grads, _) = problem.evaluate(&problem.metric, &problem.drift)?;
    let channels = problem.case.channels();
    let (rows, cols) = problem.metric.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rel_errors = Vec::with_capacity(n_dirs);
    for _ in 0..n_dirs {
        let mut dir: Vec<ScalarField> = channels
            .iter()
            .map(|_| Grid2::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let norm = dir.iter().flat_map(|f| f.iter()).map(|v| v * v).sum::<f64>().sqrt();
        for f in &mut dir {
            for v in f.as_mut_slice() {
                *v /= norm;
            }
        }
        let analytic: f64 = channels
            .iter()
            .zip(&dir)
            .map(|(ch, f)| ch.gradient(&grads).iter().zip(f.iter()).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        let fd = directional_fd(problem, &dir, eps)?;
        rel_errors.push(relative_gap(fd, analytic, f64::MIN_POSITIVE));
    }
    let within = rel_errors.iter().filter(|&&e| e < 0.10).count();
    Ok(RandomDirectionReport {
        fraction_within: within as f64 / n_dirs as f64,
        rel_errors,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    /// `||g(theta + delta) - g(theta)|| / ||g(theta)||` per trial.
    pub variations: Vec<f64>,
    pub mean: f64,
    pub median: f64,
}

/// Multiplies every metric channel by `1 + noise * N(0, 1)` independently
/// per node, projects back to SPD, and measures the change of the full
/// gradient.
pub fn perturbation_stability(problem: &GradProblem, noise: f64, n_trials: usize, seed: u64) -> Result<StabilityReport> {
    if n_trials < 10 {
        return Err(Error::InvalidArgument(format!("need at least 10 trials, got {n_trials}")));
    }
    if !(noise >= 0.0) {
        return Err(Error::InvalidArgument("noise must be >= 0".into()));
    }
    let (_, base, _) = problem.evaluate(&problem.metric, &problem.drift)?;
    let base_norm = base.norm();
    let cfg = ProjectionConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut variations = Vec::with_capacity(n_trials);
    for _ in 0..n_trials {
        let mut m = problem.metric.clone();
        for ch in m.channels_mut() {
            for v in ch.as_mut_slice() {
                *v *= 1.0 + noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
        project_metric_field(&mut m, &cfg);
        let (_, g, _) = problem.evaluate(&m, &problem.drift)?;
        let mut diff = g;
        for (a, b) in diff.channels_mut().into_iter().zip(base.channels()) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.iter()) {
                *x -= y;
            }
        }
        variations.push(diff.norm() / base_norm);
    }
    let mean = variations.iter().sum::<f64>() / n_trials as f64;
    let mut sorted = variations.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if n_trials % 2 == 1 {
        sorted[n_trials / 2]
    } else {
        0.5 * (sorted[n_trials / 2 - 1] + sorted[n_trials / 2])
    };
    Ok(StabilityReport {
        variations,
        mean,
        median,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::identify_stencils;

    #[test]
    fn fd_of_constant_loss_is_zero() {
        let m = MetricField::isotropic(3, 3, 1.0);
        let d = DriftField::zeros(3, 3);
        let g = fd_gradient(&m, &d, 4, Channel::G11, 1e-5, |_, _| Ok(3.0)).unwrap();
        assert_eq!(g, 0.0);
        assert!(fd_gradient(&m, &d, 4, Channel::G11, 0.0, |_, _| Ok(3.0)).is_err());
    }

    #[test]
    fn fd_error_is_second_order() {
        let m = MetricField::isotropic(3, 3, 0.7);
        let d = DriftField::zeros(3, 3);
        let loss = |m: &MetricField, _: &DriftField| Ok(m.g11[4].powi(3));
        let exact = 3.0 * 0.49;
        let e1 = (fd_gradient(&m, &d, 4, Channel::G11, 1e-2, loss).unwrap() - exact).abs();
        let e2 = (fd_gradient(&m, &d, 4, Channel::G11, 5e-3, loss).unwrap() - exact).abs();
        assert!((e1 / e2 - 4.0).abs() < 1e-3, "ratio {}", e1 / e2);
    }

    #[test]
    fn all_source_grid_has_empty_diagnostics() {
        let spec = GridSpec::new(4, 4, 1.0).unwrap();
        let m = MetricField::isotropic(4, 4, 1.0);
        let d = DriftField::zeros(4, 4);
        let src = SourceMask::new(Grid2::filled(4, 4, true)).unwrap();
        let (t, _) = solve(&m, &d, &src, spec, &SolveOptions::default()).unwrap();
        let rec = identify_stencils(&t, &m, &d, &src, spec, 1e-6).unwrap();
        let diag = stencil_diagnostics(&rec);
        assert_eq!(diag.records, 0);
        assert!(diag.stencil_map.iter().all(|&s| s == -1));
        assert!(diag.boundary.iter().all(|&b| !b));
    }

    #[test]
    fn gradient_check_small_grid() {
        for case in [GradCase::Isotropic, GradCase::Anisotropic, GradCase::Drift] {
            let p = GradProblem::new(case, 15).unwrap();
            let checks = gradient_check(&p, 5, 1e-5, 1).unwrap();
            for pc in &checks {
                assert!(pc.max_rel_error() < 1e-5, "{case:?} {pc:?}");
            }
        }
    }

    #[test]
    fn zero_noise_is_perfectly_stable() {
        let p = GradProblem::new(GradCase::Isotropic, 11).unwrap();
        let rep = perturbation_stability(&p, 0.0, 10, 3).unwrap();
        assert_eq!(rep.mean, 0.0);
        assert!(perturbation_stability(&p, 0.01, 5, 3).is_err());
    }

    #[test]
    fn zero_direction_is_rejected() {
        let p = GradProblem::new(GradCase::Drift, 7).unwrap();
        let zero = vec![Grid2::filled(7, 7, 0.0); 2];
        assert!(directional_fd(&p, &zero, 1e-5).is_err());
        assert!(random_direction_test(&p, 10, 1e-5, 1).is_err());
    }
}
