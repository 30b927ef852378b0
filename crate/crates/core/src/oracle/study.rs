//! Grid-refinement studies against the closed-form solution, and the
//! two-resolution Richardson comparison.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use super::analytic::{analytic_distance, away_from_sources, error_norms, SOURCE_EXCLUSION_RADIUS};
use crate::error::{Error, Result};
use crate::fields::{is_reached, ArrivalField, DriftField, GridSpec, MetricField, SourceMask};
use crate::linalg::{Sym2, Vec2};
use crate::sweeper::{solve, SolveOptions};

/// Constant-coefficient media used by the refinement studies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StudyCase {
    /// `G = I`, `b = 0`.
    Isotropic,
    /// `G = diag(4, 0.25)`.
    Diagonal,
    /// Eigenvalues 4 and 0.25 rotated by 45 degrees.
    Rotated,
    /// Eigenvalues 2 and 0.5 rotated by 30 degrees, `b = (0.2, 0.1)`.
    Combined,
}

impl StudyCase {
    pub fn metric(self) -> Sym2 {
        match self {
            StudyCase::Isotropic => Sym2::IDENTITY,
            StudyCase::Diagonal => Sym2::diag(4.0, 0.25),
            StudyCase::Rotated => Sym2::from_eigen(4.0, 0.25, std::f64::consts::FRAC_PI_4),
            StudyCase::Combined => Sym2::from_eigen(2.0, 0.5, std::f64::consts::FRAC_PI_6),
        }
    }

    pub fn drift(self) -> Vec2 {
        match self {
            StudyCase::Combined => [0.2, 0.1],
            _ => [0.0, 0.0],
        }
    }
}

impl FromStr for StudyCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iso" | "isotropic" => Ok(StudyCase::Isotropic),
            "aniso" | "diagonal" => Ok(StudyCase::Diagonal),
            "rotated" => Ok(StudyCase::Rotated),
            "combined" => Ok(StudyCase::Combined),
            _ => Err(Error::InvalidArgument(format!("unknown study case {s:?}"))),
        }
    }
}

/// An `n x n` unit-square problem (`h = 1/n`) with a point source at node
/// `(n/2, n/2)`.
#[derive(Clone, Debug)]
pub struct CaseProblem {
    pub spec: GridSpec,
    pub metric: MetricField,
    pub drift: DriftField,
    pub sources: SourceMask,
    pub source_point: Vec2,
}

impl CaseProblem {
    pub fn new(case: StudyCase, n: usize) -> Result<Self> {
        let spec = GridSpec::unit_square(n)?;
        let c = n / 2;
        Ok(CaseProblem {
            spec,
            metric: MetricField::constant(n, n, case.metric()),
            drift: DriftField::constant(n, n, case.drift()),
            sources: SourceMask::point(n, n, c, c)?,
            source_point: spec.point(c as f64, c as f64),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyRow {
    pub n: usize,
    pub h: f64,
    /// Root-mean-square error.
    pub l2: f64,
    pub linf: f64,
    pub rel_l2: f64,
    pub iterations: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyReport {
    pub case: StudyCase,
    pub rows: Vec<StudyRow>,
    /// Least-squares slope of `log l2` against `log h`.
    pub alpha: f64,
}

impl StudyReport {
    /// One line per size: `n,h,l2,linf,rel_l2,iterations,seconds,alpha`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "n,h,l2,linf,rel_l2,iterations,seconds,alpha")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.n, r.h, r.l2, r.linf, r.rel_l2, r.iterations, r.seconds, self.alpha
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_rate(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Solves `case` at every size and compares with the closed form.
pub fn convergence_study(sizes: &[usize], case: StudyCase, opts: &SolveOptions) -> Result<StudyReport> {
    if sizes.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs at least 3 sizes, got {}",
            sizes.len()
        )));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("sizes must be strictly ascending".into()));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let p = CaseProblem::new(case, n)?;
        let start = Instant::now();
        let (t, report) = solve(&p.metric, &p.drift, &p.sources, p.spec, opts)?;
        let seconds = start.elapsed().as_secs_f64();
        report.ensure_converged()?;
        let exact = analytic_distance(p.spec, p.source_point, case.metric(), case.drift())?;
        let e = error_norms(&t, &exact, &p.sources)?;
        rows.push(StudyRow {
            n,
            h: p.spec.h,
            l2: e.l2,
            linf: e.linf,
            rel_l2: e.rel_l2,
            iterations: report.iterations,
            seconds,
        });
    }
    let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let l2: Vec<f64> = rows.iter().map(|r| r.l2).collect();
    Ok(StudyReport {
        case,
        alpha: fit_rate(&h, &l2),
        rows,
    })
}

/// Bilinear interpolation of `t` at physical point `x`, or `None` outside
/// the grid or next to an unreached node.
pub fn bilinear_sample(t: &ArrivalField, spec: GridSpec, x: Vec2) -> Option<f64> {
    let (fc, fr) = (x[0] / spec.h, x[1] / spec.h);
    if fc < 0.0 || fr < 0.0 || fc > (spec.cols - 1) as f64 || fr > (spec.rows - 1) as f64 {
        return None;
    }
    let c0 = (fc.floor() as usize).min(spec.cols - 2);
    let r0 = (fr.floor() as usize).min(spec.rows - 2);
    let (u, v) = (fc - c0 as f64, fr - r0 as f64);
    let q = [
        t.get(r0, c0),
        t.get(r0, c0 + 1),
        t.get(r0 + 1, c0),
        t.get(r0 + 1, c0 + 1),
    ];
    if !q.iter().all(|&s| is_reached(s)) {
        return None;
    }
    Some((1.0 - v) * ((1.0 - u) * q[0] + u * q[1]) + v * ((1.0 - u) * q[2] + u * q[3]))
}

/// Relative L2 difference between the coarse solution and the fine one
/// sampled at the coarse nodes' physical positions.
pub fn richardson_difference(case: StudyCase, coarse: usize, fine: usize, opts: &SolveOptions) -> Result<f64> {
    if coarse >= fine {
        return Err(Error::InvalidArgument("coarse size must be below fine size".into()));
    }
    let pc = CaseProblem::new(case, coarse)?;
    let pf = CaseProblem::new(case, fine)?;
    let (tc, rc) = solve(&pc.metric, &pc.drift, &pc.sources, pc.spec, opts)?;
    rc.ensure_converged()?;
    let (tf, rf) = solve(&pf.metric, &pf.drift, &pf.sources, pf.spec, opts)?;
    rf.ensure_converged()?;
    relative_difference(&tc, pc.spec, &pc.sources, &tf, pf.spec)
}

/// `||T_c - T_f||_2 / ||T_f||_2` over coarse nodes away from the sources,
/// with `T_f` bilinearly sampled.
pub fn relative_difference(
    coarse: &ArrivalField,
    coarse_spec: GridSpec,
    coarse_sources: &SourceMask,
    fine: &ArrivalField,
    fine_spec: GridSpec,
) -> Result<f64> {
    let keep = away_from_sources(coarse_sources, SOURCE_EXCLUSION_RADIUS);
    let (mut num, mut den) = (0.0, 0.0);
    for r in 0..coarse_spec.rows {
        for c in 0..coarse_spec.cols {
            let a = coarse.get(r, c);
            if !keep[(r, c)] || !is_reached(a) {
                continue;
            }
            let Some(b) = bilinear_sample(fine, fine_spec, coarse_spec.point(r as f64, c as f64)) else {
                continue;
            };
            num += (a - b) * (a - b);
            den += b * b;
        }
    }
    if den == 0.0 {
        return Err(Error::InvalidArgument("no overlapping reached nodes".into()));
    }
    Ok((num / den).sqrt())
}
