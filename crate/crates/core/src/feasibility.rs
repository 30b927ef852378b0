//! Feasibility projections for `(G, b)` and the spatial regularizers used by
//! the inversion driver.

use crate::error::{Error, Result};
use crate::fields::{DriftField, Grid2, MetricField, ScalarField};
use crate::linalg::{norm, Sym2, Vec2};

pub const DEFAULT_EPS_TV: f64 = 1e-8;

/// Relative slack under which a value already counts as feasible. Inputs
/// inside the slack are returned unchanged, which makes both projections
/// exactly idempotent despite rounding in the reconstruction.
const FEASIBLE_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionConfig {
    /// Smallest admissible eigenvalue of `G`.
    pub eps_min: f64,
    /// Largest admissible eigenvalue of `G`.
    pub lambda_max: f64,
    /// Cap on `||b||_{G^-1}`.
    pub tau: f64,
    /// Cap on the Euclidean norm of `b`, applied first.
    pub euclid_cap: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            eps_min: 1e-3,
            lambda_max: 1e3,
            tau: 0.95,
            euclid_cap: 10.0,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.eps_min > 0.0
            && self.eps_min < self.lambda_max
            && self.lambda_max.is_finite()
            && self.tau > 0.0
            && self.tau < 1.0
            && self.euclid_cap > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad projection config {self:?}")))
        }
    }
}

/// Clamps the eigenvalues of `g` to `[eps_min, lambda_max]`.
pub fn project_spd(g: Sym2, cfg: &ProjectionConfig) -> Sym2 {
    let e = g.eigen();
    let slack = FEASIBLE_SLACK * e.major.abs().max(e.minor.abs()).max(cfg.eps_min);
    if e.minor >= cfg.eps_min - slack && e.major <= cfg.lambda_max + slack {
        return g;
    }
    let clamp = |v: f64| v.clamp(cfg.eps_min, cfg.lambda_max);
    Sym2::from_eigen(clamp(e.major), clamp(e.minor), e.angle)
}

/// Clips `b` to the Euclidean cap, then rescales it onto `||b||_{G^-1} = tau`
/// if it lies outside. `g` must already be SPD.
pub fn project_drift(b: Vec2, g: &Sym2, cfg: &ProjectionConfig) -> Vec2 {
    let mut b = b;
    let e = norm(b);
    if e > cfg.euclid_cap * (1.0 + FEASIBLE_SLACK) {
        let s = cfg.euclid_cap / e;
        b = [b[0] * s, b[1] * s];
    }
    let d = g.inv_quad(b).max(0.0).sqrt();
    if d > cfg.tau * (1.0 + FEASIBLE_SLACK) {
        let s = cfg.tau / d;
        b = [b[0] * s, b[1] * s];
    }
    b
}

/// Projects every node of `metric` in place.
pub fn project_metric_field(metric: &mut MetricField, cfg: &ProjectionConfig) {
    for i in 0..metric.len() {
        let g = metric.at(i);
        let p = project_spd(g, cfg);
        if p != g {
            metric.set(i, p);
        }
    }
}

/// Projects every node of `drift` in place against an SPD `metric`.
pub fn project_drift_field(drift: &mut DriftField, metric: &MetricField, cfg: &ProjectionConfig) {
    for i in 0..drift.len() {
        let b = drift.at(i);
        let p = project_drift(b, &metric.at(i), cfg);
        if p != b {
            drift.set(i, p);
        }
    }
}

/// `||b||_{G^-1}` at every node.
pub fn drift_norms(drift: &DriftField, metric: &MetricField) -> ScalarField {
    let (rows, cols) = drift.dims();
    let mut out = Grid2::filled(rows, cols, 0.0);
    for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
        *v = metric.at(i).inv_quad(drift.at(i)).max(0.0).sqrt();
    }
    out
}

/// Channel layout and weighting of a total-variation term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TvVariant {
    /// Metric channels `(g11, g12, g22)` with the off-diagonal weighted by 2.
    Frobenius,
    /// Same weights applied to the channels of `log G`.
    LogEuclidean,
    /// Drift channels `(b1, b2)` with unit weights.
    Drift,
}

impl TvVariant {
    fn weights(self) -> &'static [f64] {
        match self {
            TvVariant::Frobenius | TvVariant::LogEuclidean => &[1.0, 2.0, 1.0],
            TvVariant::Drift => &[1.0, 1.0],
        }
    }
}

/// Value and gradient of a regularizer, one gradient grid per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct RegValueGrad {
    pub value: f64,
    pub grad: Vec<ScalarField>,
}

/// Smoothed total variation
/// `sum_nodes sqrt(sum_c w_c (dx_c^2 + dy_c^2) + eps^2) - eps` with forward
/// differences and zero flux across the boundary. Subtracting `eps` per node
/// makes a constant field score exactly zero.
pub fn tv_value_grad(channels: &[&ScalarField], variant: TvVariant, eps_tv: f64) -> Result<RegValueGrad> {
    let weights = variant.weights();
    if channels.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{variant:?} TV expects {} channels, found {}",
            weights.len(),
            channels.len()
        )));
    }
    let dims = channels[0].dims();
    if channels.iter().any(|c| c.dims() != dims) {
        return Err(Error::DimensionMismatch("TV channels differ in shape".into()));
    }
    match variant {
        TvVariant::LogEuclidean => log_euclidean_tv(channels, eps_tv),
        _ => Ok(weighted_tv(channels, weights, eps_tv)),
    }
}

fn weighted_tv(channels: &[&ScalarField], weights: &[f64], eps: f64) -> RegValueGrad {
    let (rows, cols) = channels[0].dims();
    let mut grad = vec![Grid2::filled(rows, cols, 0.0); channels.len()];
    let mut value = 0.0;
    let mut dx = vec![0.0; channels.len()];
    let mut dy = vec![0.0; channels.len()];
    for r in 0..rows {
        for c in 0..cols {
            let mut sq = eps * eps;
            for (k, ch) in channels.iter().enumerate() {
                let f = ch[(r, c)];
                dx[k] = if c + 1 < cols { ch[(r, c + 1)] - f } else { 0.0 };
                dy[k] = if r + 1 < rows { ch[(r + 1, c)] - f } else { 0.0 };
                sq += weights[k] * (dx[k] * dx[k] + dy[k] * dy[k]);
            }
            let n = sq.sqrt();
            value += n - eps;
            if n == 0.0 {
                continue;
            }
            for (k, g) in grad.iter_mut().enumerate() {
                let gx = weights[k] * dx[k] / n;
                let gy = weights[k] * dy[k] / n;
                if c + 1 < cols {
                    g[(r, c + 1)] += gx;
                    g[(r, c)] -= gx;
                }
                if r + 1 < rows {
                    g[(r + 1, c)] += gy;
                    g[(r, c)] -= gy;
                }
            }
        }
    }
    RegValueGrad { value, grad }
}

/// Orthonormal eigenbasis `(c, s)` of the major eigenvector plus the two
/// eigenvalues of an SPD matrix.
fn spd_eigen(g: &Sym2) -> (f64, f64, f64, f64) {
    let e = g.eigen();
    let (s, c) = e.angle.sin_cos();
    (e.major, e.minor, c, s)
}

/// First divided difference of `log` at `(a, b)`.
fn log_divided(a: f64, b: f64) -> f64 {
    let d = a - b;
    if d.abs() <= 1e-10 * a.abs().max(b.abs()) {
        2.0 / (a + b)
    } else {
        (a.ln() - b.ln()) / d
    }
}

fn log_euclidean_tv(channels: &[&ScalarField], eps: f64) -> Result<RegValueGrad> {
    let (rows, cols) = channels[0].dims();
    let n = rows * cols;
    let mut logs = vec![Grid2::filled(rows, cols, 0.0); 3];
    for i in 0..n {
        let g = Sym2::new(channels[0][i], channels[1][i], channels[2][i]);
        if !g.is_spd() || !g.is_finite() {
            return Err(Error::NonSpdInput { node: i });
        }
        let (l1, l2, c, s) = spd_eigen(&g);
        let log_g = Sym2::from_eigen(l1.ln(), l2.ln(), s.atan2(c));
        logs[0][i] = log_g.a11;
        logs[1][i] = log_g.a12;
        logs[2][i] = log_g.a22;
    }
    let refs: Vec<&ScalarField> = logs.iter().collect();
    let inner = weighted_tv(&refs, TvVariant::LogEuclidean.weights(), eps);

    // Pull the gradient back through the matrix logarithm (Daleckii-Krein).
    let mut grad = vec![Grid2::filled(rows, cols, 0.0); 3];
    for i in 0..n {
        let g = Sym2::new(channels[0][i], channels[1][i], channels[2][i]);
        let (l1, l2, c, s) = spd_eigen(&g);
        let a = Sym2::new(inner.grad[0][i], 0.5 * inner.grad[1][i], inner.grad[2][i]);
        // Rotate into the eigenbasis U = [[c, -s], [s, c]].
        let u1 = [c, s];
        let u2 = [-s, c];
        let a11 = a.bilinear(u1, u1) / l1;
        let a22 = a.bilinear(u2, u2) / l2;
        let a12 = a.bilinear(u1, u2) * log_divided(l1, l2);
        let b11 = a11 * c * c - 2.0 * a12 * c * s + a22 * s * s;
        let b12 = a11 * c * s + a12 * (c * c - s * s) - a22 * c * s;
        let b22 = a11 * s * s + 2.0 * a12 * c * s + a22 * c * c;
        grad[0][i] = b11;
        grad[1][i] = 2.0 * b12;
        grad[2][i] = b22;
    }
    Ok(RegValueGrad {
        value: inner.value,
        grad,
    })
}

/// `0.5 * weight * sum field^2` over all channels.
pub fn tikhonov_value_grad(channels: &[&ScalarField], weight: f64) -> RegValueGrad {
    let mut value = 0.0;
    let grad = channels
        .iter()
        .map(|ch| {
            value += ch.iter().map(|v| v * v).sum::<f64>();
            ch.map(|v| weight * v)
        })
        .collect();
    RegValueGrad {
        value: 0.5 * weight * value,
        grad,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ProjectionConfig {
        ProjectionConfig::default()
    }

    #[test]
    fn feasible_metric_is_untouched() {
        let g = Sym2::diag(1.0, 2.0);
        assert_eq!(project_spd(g, &cfg()), g);
    }

    #[test]
    fn indefinite_metric_is_clamped() {
        let eps = cfg().eps_min;
        let p = project_spd(Sym2::new(1.0, 2.0, 1.0), &cfg());
        let want = Sym2::new(0.5 * (3.0 + eps), 0.5 * (3.0 - eps), 0.5 * (3.0 + eps));
        assert!((p.a11 - want.a11).abs() < 1e-14);
        assert!((p.a12 - want.a12).abs() < 1e-14);
        assert!((p.a22 - want.a22).abs() < 1e-14);
        assert_eq!(project_spd(p, &cfg()), p);
    }

    #[test]
    fn drift_examples() {
        let i = Sym2::IDENTITY;
        assert_eq!(project_drift([0.0, 0.0], &i, &cfg()), [0.0, 0.0]);
        let p = project_drift([2.0, 0.0], &i, &cfg());
        assert!((p[0] - 0.95).abs() < 1e-15 && p[1] == 0.0);
        let p = project_drift([30.0, 40.0], &Sym2::scaled_identity(1e3), &cfg());
        assert!((norm(p) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn tv_constant_and_step() {
        let c = Grid2::filled(4, 5, 3.0);
        let r = tv_value_grad(&[&c, &c], TvVariant::Drift, DEFAULT_EPS_TV).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.grad.iter().all(|g| g.iter().all(|&v| v == 0.0)));

        let f = Grid2::from_vec(1, 2, vec![0.0, 1.0]).unwrap();
        let z = Grid2::filled(1, 2, 0.0);
        let r = tv_value_grad(&[&f, &z], TvVariant::Drift, DEFAULT_EPS_TV).unwrap();
        assert!((r.value - 1.0).abs() < 1e-7);
    }

    #[test]
    fn tv_channel_count_is_checked() {
        let c = Grid2::filled(2, 2, 1.0);
        assert!(tv_value_grad(&[&c], TvVariant::Frobenius, 1e-8).is_err());
    }

    #[test]
    fn log_euclidean_rejects_non_spd() {
        let one = Grid2::filled(2, 2, 1.0);
        let mut bad = one.clone();
        bad[(1, 1)] = -1.0;
        let z = Grid2::filled(2, 2, 0.0);
        let r = tv_value_grad(&[&one, &z, &bad], TvVariant::LogEuclidean, 1e-8);
        assert!(matches!(r, Err(Error::NonSpdInput { node: 3 })));
    }

    fn random_metric(rng: &mut ChaCha8Rng, n: usize) -> [ScalarField; 3] {
        let mut ch = [
            Grid2::filled(n, n, 0.0),
            Grid2::filled(n, n, 0.0),
            Grid2::filled(n, n, 0.0),
        ];
        for i in 0..n * n {
            let g = Sym2::from_eigen(
                rng.random_range(1.0..3.0),
                rng.random_range(0.2..1.0),
                rng.random_range(0.0..std::f64::consts::PI),
            );
            ch[0][i] = g.a11;
            ch[1][i] = g.a12;
            ch[2][i] = g.a22;
        }
        ch
    }

    fn check_tv_gradient(variant: TvVariant, channels: &mut [ScalarField], eps_tv: f64) {
        let eval = |ch: &[ScalarField]| {
            let refs: Vec<&ScalarField> = ch.iter().collect();
            tv_value_grad(&refs, variant, eps_tv).unwrap()
        };
        let base = eval(channels);
        let h = 1e-6;
        for k in 0..channels.len() {
            for i in 0..channels[k].len() {
                let orig = channels[k][i];
                channels[k][i] = orig + h;
                let up = eval(channels).value;
                channels[k][i] = orig - h;
                let dn = eval(channels).value;
                channels[k][i] = orig;
                let fd = (up - dn) / (2.0 * h);
                let an = base.grad[k][i];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
                assert!(rel < 1e-6, "{variant:?} ch{k} node {i}: fd {fd} analytic {an}");
            }
        }
    }

    #[test]
    fn tv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut m = random_metric(&mut rng, 8);
        check_tv_gradient(TvVariant::Frobenius, &mut m, 1e-3);
        check_tv_gradient(TvVariant::LogEuclidean, &mut m, 1e-3);
        let mut b: Vec<ScalarField> = (0..2)
            .map(|_| Grid2::from_fn(8, 8, |_, _| rng.random_range(-0.5..0.5)))
            .collect();
        check_tv_gradient(TvVariant::Drift, &mut b, 1e-3);
    }

    #[test]
    fn log_euclidean_ignores_global_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_metric(&mut rng, 6);
        let rot = 0.7f64;
        let rotated: Vec<ScalarField> = {
            let mut out = vec![Grid2::filled(6, 6, 0.0); 3];
            for i in 0..36 {
                let e = Sym2::new(m[0][i], m[1][i], m[2][i]).eigen();
                let g = Sym2::from_eigen(e.major, e.minor, e.angle + rot);
                out[0][i] = g.a11;
                out[1][i] = g.a12;
                out[2][i] = g.a22;
            }
            out
        };
        let a = tv_value_grad(&[&m[0], &m[1], &m[2]], TvVariant::LogEuclidean, 1e-8).unwrap();
        let b = tv_value_grad(&[&rotated[0], &rotated[1], &rotated[2]], TvVariant::LogEuclidean, 1e-8)
            .unwrap();
        assert!((a.value - b.value).abs() < 1e-10 * a.value);
    }

    #[test]
    fn tikhonov_examples() {
        let z = Grid2::filled(3, 3, 0.0);
        let r = tikhonov_value_grad(&[&z], 2.0);
        assert_eq!(r.value, 0.0);
        assert!(r.grad[0].iter().all(|&v| v == 0.0));
        let ones = Grid2::filled(2, 2, 1.0);
        assert_eq!(tikhonov_value_grad(&[&ones], 1.0).value, 2.0);

        let f = Grid2::from_vec(1, 3, vec![0.5, -1.5, 2.0]).unwrap();
        let r = tikhonov_value_grad(&[&f], 0.3);
        for i in 0..3 {
            let mut p = f.clone();
            p[i] += 1e-4;
            let mut m = f.clone();
            m[i] -= 1e-4;
            let fd = (tikhonov_value_grad(&[&p], 0.3).value - tikhonov_value_grad(&[&m], 0.3).value) / 2e-4;
            assert!((fd - r.grad[0][i]).abs() < 1e-10);
        }
    }
}
