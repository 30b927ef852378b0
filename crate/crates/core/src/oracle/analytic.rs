//! Closed-form constant-coefficient arrival times, error norms against them,
//! and the discrete eikonal residual.

use crate::error::{Error, Result};
use crate::fields::{is_reached, ArrivalField, DriftField, Grid2, GridSpec, MetricField, SourceMask};
use crate::linalg::{dot, Sym2, Vec2};

/// Nodes closer than this many cells to a source are left out of error and
/// residual statistics.
pub const SOURCE_EXCLUSION_RADIUS: f64 = 2.0;

/// `T(x) = sqrt(d^T G d) - b . d` with `d = x - x0`, the exact arrival time
/// for constant `G` and `b` from a point source at physical position `source`.
pub fn analytic_distance(spec: GridSpec, source: Vec2, g: Sym2, b: Vec2) -> Result<ArrivalField> {
    if !g.is_spd() || !g.is_finite() {
        return Err(Error::NonSpdInput { node: 0 });
    }
    let norm = g.inv_quad(b).max(0.0).sqrt();
    if !(norm < 1.0) {
        return Err(Error::InfeasibleDrift { norm });
    }
    let t = Grid2::from_fn(spec.rows, spec.cols, |r, c| {
        let x = spec.point(r as f64, c as f64);
        let d = [x[0] - source[0], x[1] - source[1]];
        g.quad(d).sqrt() - dot(b, d)
    });
    Ok(ArrivalField::new(t))
}

/// `true` for nodes at least [`SOURCE_EXCLUSION_RADIUS`] cells from every
/// source.
pub fn away_from_sources(sources: &SourceMask, radius: f64) -> Grid2<bool> {
    let (rows, cols) = sources.dims();
    let mut keep = Grid2::filled(rows, cols, true);
    let reach = radius.ceil() as isize;
    for s in sources.indices() {
        let (sr, sc) = ((s / cols) as isize, (s % cols) as isize);
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                let (r, c) = (sr + dr, sc + dc);
                if r < 0 || c < 0 || r >= rows as isize || c >= cols as isize {
                    continue;
                }
                if ((dr * dr + dc * dc) as f64).sqrt() < radius {
                    keep[(r as usize, c as usize)] = false;
                }
            }
        }
    }
    keep
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorNorms {
    /// Root-mean-square error.
    pub l2: f64,
    pub linf: f64,
    /// `||T - T*||_2 / ||T*||_2`.
    pub rel_l2: f64,
    pub count: usize,
}

/// Error of `t` against `exact` over reached nodes away from the sources.
pub fn error_norms(t: &ArrivalField, exact: &ArrivalField, sources: &SourceMask) -> Result<ErrorNorms> {
    if t.dims() != exact.dims() || t.dims() != sources.dims() {
        return Err(Error::DimensionMismatch("error norms need matching fields".into()));
    }
    let keep = away_from_sources(sources, SOURCE_EXCLUSION_RADIUS);
    let (mut sq, mut ref_sq, mut linf, mut count) = (0.0, 0.0, 0.0f64, 0usize);
    for (i, (&a, &e)) in t.as_slice().iter().zip(exact.as_slice()).enumerate() {
        if !keep[i] || !is_reached(a) {
            continue;
        }
        let d = a - e;
        sq += d * d;
        ref_sq += e * e;
        linf = linf.max(d.abs());
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidArgument("no nodes to compare".into()));
    }
    Ok(ErrorNorms {
        l2: (sq / count as f64).sqrt(),
        linf,
        rel_l2: (sq / ref_sq).sqrt(),
        count,
    })
}

#[derive(Clone, Debug)]
pub struct ResidualReport {
    /// Per-node residual; NaN where it was not evaluated.
    pub residual: Grid2<f64>,
    pub mean: f64,
    pub max: f64,
    pub count: usize,
}

/// `| ||grad T + b||_{G^-1} - 1 |` with central differences, on interior
/// nodes whose four axis neighbors are reached, away from the sources.
///
/// The sign of `b` matches the solver's update `T_0 = T_i + m . b + ...`: a
/// drift `b` lowers arrival times in the `+b` direction.
pub fn eikonal_residual(
    t: &ArrivalField,
    metric: &MetricField,
    drift: &DriftField,
    sources: &SourceMask,
    spec: GridSpec,
) -> Result<ResidualReport> {
    spec.check_dims("arrival field", t.dims())?;
    spec.check_dims("metric", metric.dims())?;
    spec.check_dims("drift", drift.dims())?;
    spec.check_dims("source mask", sources.dims())?;
    let keep = away_from_sources(sources, SOURCE_EXCLUSION_RADIUS);
    let mut residual = Grid2::filled(spec.rows, spec.cols, f64::NAN);
    let (mut sum, mut max, mut count) = (0.0, 0.0f64, 0usize);
    for r in 1..spec.rows - 1 {
        for c in 1..spec.cols - 1 {
            let i = spec.index(r, c);
            let nb = [t.get(r, c - 1), t.get(r, c + 1), t.get(r - 1, c), t.get(r + 1, c)];
            if !keep[i] || !is_reached(t.as_slice()[i]) || !nb.iter().all(|&v| is_reached(v)) {
                continue;
            }
            let grad = [(nb[1] - nb[0]) / (2.0 * spec.h), (nb[3] - nb[2]) / (2.0 * spec.h)];
            let b = drift.at(i);
            let p = [grad[0] + b[0], grad[1] + b[1]];
            let res = (metric.at(i).inv_quad(p).max(0.0).sqrt() - 1.0).abs();
            residual[i] = res;
            sum += res;
            max = max.max(res);
            count += 1;
        }
    }
    Ok(ResidualReport {
        residual,
        mean: if count > 0 { sum / count as f64 } else { 0.0 },
        max,
        count,
    })
}

/// Time per unit length along row `row` between columns `c0 < c1`.
pub fn row_pace(t: &ArrivalField, spec: GridSpec, row: usize, c0: usize, c1: usize) -> f64 {
    (t.get(row, c1) - t.get(row, c0)) / ((c1 - c0) as f64 * spec.h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euclidean_and_elliptic_cases() {
        let spec = GridSpec::new(11, 11, 1.0).unwrap();
        let t = analytic_distance(spec, [5.0, 5.0], Sym2::IDENTITY, [0.0, 0.0]).unwrap();
        assert_eq!(t.get(5, 8), 3.0);
        assert_eq!(t.get(1, 2), 5.0);
        let t = analytic_distance(spec, [5.0, 5.0], Sym2::diag(4.0, 0.25), [0.0, 0.0]).unwrap();
        assert_eq!(t.get(5, 9), 8.0);
        assert_eq!(t.get(9, 5), 2.0);
    }

    #[test]
    fn drift_endpoints() {
        let spec = GridSpec::new(3, 61, 1.0).unwrap();
        let t = analytic_distance(spec, [30.0, 1.0], Sym2::IDENTITY, [0.3, 0.0]).unwrap();
        assert!((t.get(1, 0) - 39.0).abs() < 1e-12);
        assert!((t.get(1, 60) - 21.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_inputs() {
        let spec = GridSpec::new(3, 3, 1.0).unwrap();
        let r = analytic_distance(spec, [1.0, 1.0], Sym2::IDENTITY, [1.0, 0.0]);
        assert!(matches!(r, Err(Error::InfeasibleDrift { .. })));
        let r = analytic_distance(spec, [1.0, 1.0], Sym2::new(1.0, 2.0, 1.0), [0.0, 0.0]);
        assert!(matches!(r, Err(Error::NonSpdInput { .. })));
    }

    #[test]
    fn exact_plane_wave_has_zero_residual() {
        // Central differences are exact on linear fields, so a plane wave
        // solving the equation leaves only rounding.
        let spec = GridSpec::new(9, 9, 0.5).unwrap();
        let g = Sym2::new(2.0, 0.3, 0.8);
        let b = [0.2, -0.1];
        let dir = [0.6, 0.8];
        // p = grad T + b must satisfy p^T G^-1 p = 1.
        let s = 1.0 / g.inv_quad(dir).sqrt();
        let p = [dir[0] * s, dir[1] * s];
        let grad = [p[0] - b[0], p[1] - b[1]];
        let t = Grid2::from_fn(9, 9, |r, c| {
            let x = spec.point(r as f64, c as f64);
            10.0 + dot(grad, x)
        });
        let metric = MetricField::constant(9, 9, g);
        let drift = DriftField::constant(9, 9, b);
        let src = SourceMask::point(9, 9, 0, 0).unwrap();
        let rep = eikonal_residual(&ArrivalField::new(t), &metric, &drift, &src, spec).unwrap();
        assert!(rep.count > 30);
        assert!(rep.max < 1e-10, "max residual {}", rep.max);
    }

    #[test]
    fn exclusion_disk() {
        let src = SourceMask::point(7, 7, 3, 3).unwrap();
        let keep = away_from_sources(&src, 2.0);
        assert!(!keep[(3, 3)] && !keep[(4, 4)] && !keep[(3, 4)]);
        assert!(keep[(3, 5)] && keep[(5, 5)]);
    }
}
