//! Synthetic propagation scenarios: terrain, drift, heterogeneous media,
//! their combination, sparse-data wavefront reconstruction and metric
//! sensitivity.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::analytic::{away_from_sources, SOURCE_EXCLUSION_RADIUS};
use crate::error::{Error, Result};
use crate::feasibility::{project_drift_field, project_metric_field, ProjectionConfig};
use crate::fields::{is_reached, ArrivalField, DriftField, Grid2, GridSpec, MetricField, ScalarField, SourceMask};
use crate::linalg::{Sym2, Vec2};
use crate::sweeper::{solve, solve_seeded, SolveOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenarioKind {
    Terrain,
    Drift,
    Heterogeneous,
    Combined,
    Reconstruction,
    Sensitivity,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::Terrain,
        ScenarioKind::Drift,
        ScenarioKind::Heterogeneous,
        ScenarioKind::Combined,
        ScenarioKind::Reconstruction,
        ScenarioKind::Sensitivity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Terrain => "terrain",
            ScenarioKind::Drift => "drift",
            ScenarioKind::Heterogeneous => "heterogeneous",
            ScenarioKind::Combined => "combined",
            ScenarioKind::Reconstruction => "reconstruction",
            ScenarioKind::Sensitivity => "sensitivity",
        }
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownScenario(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioParams {
    /// Grid is `size x size` with unit spacing and a source at the center.
    pub size: usize,
    /// Slope sensitivity in `g = 1 + alpha |grad z|`.
    pub alpha: f64,
    /// Hill height as a fraction of the grid size.
    pub hill_height: f64,
    /// Hill standard deviation as a fraction of the grid size.
    pub hill_width: f64,
    pub drift: Vec2,
    pub disks: usize,
    /// Metric value inside the high-resistance disks.
    pub disk_metric: f64,
    /// Observed fraction of nodes for reconstruction.
    pub density: f64,
    /// Relative metric perturbation levels for the sensitivity sweep.
    pub noise_levels: Vec<f64>,
    /// Correlation length of the sensitivity noise, in cells.
    pub correlation_length: f64,
    /// Noise draws per sensitivity level.
    pub draws: usize,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            size: 101,
            alpha: 1.0,
            hill_height: 0.25,
            hill_width: 1.0 / 6.0,
            drift: [0.3, 0.0],
            disks: 8,
            disk_metric: 4.0,
            density: 0.088,
            noise_levels: vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.5],
            correlation_length: 5.0,
            draws: 5,
        }
    }
}

/// Tabular scenario output.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioReport {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ScenarioReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub spec: GridSpec,
    pub metric: MetricField,
    pub drift: DriftField,
    pub sources: SourceMask,
    pub report: Option<ScenarioReport>,
}

/// Slope-driven isotropic metric over a Gaussian hill centered on the grid.
pub fn terrain_metric(n: usize, p: &ScenarioParams) -> MetricField {
    let c = (n / 2) as f64;
    let height = p.hill_height * n as f64;
    let sigma = p.hill_width * n as f64;
    MetricField::from_fn(n, n, |r, col| {
        let (dx, dy) = (col as f64 - c, r as f64 - c);
        let rr = (dx * dx + dy * dy).sqrt();
        let z = height * (-(rr * rr) / (2.0 * sigma * sigma)).exp();
        let slope = z * rr / (sigma * sigma);
        Sym2::scaled_identity(1.0 + p.alpha * slope)
    })
}

/// Multiplicative resistance factor: `disk_metric` inside seeded disks, 1
/// elsewhere.
pub fn disk_factor(n: usize, p: &ScenarioParams, rng: &mut ChaCha8Rng) -> ScalarField {
    let disks: Vec<(f64, f64, f64)> = (0..p.disks)
        .map(|_| {
            let r = rng.random_range(0.0..n as f64);
            let c = rng.random_range(0.0..n as f64);
            let rad = rng.random_range(n as f64 / 20.0..n as f64 / 10.0);
            (r, c, rad)
        })
        .collect();
    Grid2::from_fn(n, n, |r, c| {
        let inside = disks.iter().any(|&(dr, dc, rad)| {
            let (a, b) = (r as f64 - dr, c as f64 - dc);
            a * a + b * b <= rad * rad
        });
        if inside {
            p.disk_metric
        } else {
            1.0
        }
    })
}

/// Zero-mean, unit-variance Gaussian noise smoothed with a Gaussian kernel
/// of standard deviation `length` cells.
pub fn correlated_noise(n: usize, length: f64, rng: &mut ChaCha8Rng) -> ScalarField {
    let white: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
    if length <= 0.0 {
        return Grid2::from_vec(n, n, white).expect("n x n values");
    }
    let radius = (3.0 * length).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * length * length)).exp())
        .collect();
    let blur = |src: &[f64], along_rows: bool| {
        let mut out = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                let mut acc = 0.0;
                for (j, w) in kernel.iter().enumerate() {
                    let k = j as isize - radius;
                    let (rr, cc) = if along_rows {
                        (r as isize + k, c as isize)
                    } else {
                        (r as isize, c as isize + k)
                    };
                    if rr >= 0 && cc >= 0 && (rr as usize) < n && (cc as usize) < n {
                        acc += w * src[rr as usize * n + cc as usize];
                    }
                }
                out[r * n + c] = acc;
            }
        }
        out
    };
    let mut v = blur(&blur(&white, false), true);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let sd = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64).sqrt();
    for x in &mut v {
        *x = (*x - mean) / sd;
    }
    Grid2::from_vec(n, n, v).expect("n x n values")
}

/// `||a - b||_2 / ||b||_2` over nodes reached in both fields and outside
/// `skip`.
fn relative_l2(a: &ArrivalField, b: &ArrivalField, keep: &Grid2<bool>) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, (&x, &y)) in a.as_slice().iter().zip(b.as_slice()).enumerate() {
        if keep[i] && is_reached(x) && is_reached(y) {
            num += (x - y) * (x - y);
            den += y * y;
        }
    }
    (num / den).sqrt()
}

pub fn scenario(kind: ScenarioKind, p: &ScenarioParams, seed: u64) -> Result<Scenario> {
    let n = p.size;
    let spec = GridSpec::new(n, n, 1.0)?;
    let sources = SourceMask::point(n, n, n / 2, n / 2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ProjectionConfig::default();
    let opts = SolveOptions::default();

    let combined = |rng: &mut ChaCha8Rng| {
        let mut m = terrain_metric(n, p);
        let f = disk_factor(n, p, rng);
        for ch in m.channels_mut() {
            for (v, k) in ch.as_mut_slice().iter_mut().zip(f.iter()) {
                *v *= k;
            }
        }
        m
    };

    let (mut metric, mut drift, report) = match kind {
        ScenarioKind::Terrain => (terrain_metric(n, p), DriftField::zeros(n, n), None),
        ScenarioKind::Drift => (MetricField::isotropic(n, n, 1.0), DriftField::constant(n, n, p.drift), None),
        ScenarioKind::Heterogeneous => {
            let f = disk_factor(n, p, &mut rng);
            let m = MetricField::new(f.clone(), Grid2::filled(n, n, 0.0), f)?;
            (m, DriftField::zeros(n, n), None)
        }
        ScenarioKind::Combined => (combined(&mut rng), DriftField::constant(n, n, p.drift), None),
        ScenarioKind::Reconstruction => {
            let mut m = combined(&mut rng);
            let mut d = DriftField::constant(n, n, p.drift);
            project_metric_field(&mut m, &cfg);
            project_drift_field(&mut d, &m, &cfg);
            let rep = reconstruction_report(&m, &d, &sources, spec, p, &mut rng, &opts)?;
            (m, d, Some(rep))
        }
        ScenarioKind::Sensitivity => {
            let m = terrain_metric(n, p);
            let d = DriftField::zeros(n, n);
            let rep = sensitivity_report(&m, &d, &sources, spec, p, &mut rng, &opts, &cfg)?;
            (m, d, Some(rep))
        }
    };
    project_metric_field(&mut metric, &cfg);
    project_drift_field(&mut drift, &metric, &cfg);
    Ok(Scenario {
        spec,
        metric,
        drift,
        sources,
        report,
    })
}

/// Re-solves from a random sample of true arrival times alone (the source is
/// not given) and compares with the full solution.
fn reconstruction_report(
    metric: &MetricField,
    drift: &DriftField,
    sources: &SourceMask,
    spec: GridSpec,
    p: &ScenarioParams,
    rng: &mut ChaCha8Rng,
    opts: &SolveOptions,
) -> Result<ScenarioReport> {
    if !(p.density > 0.0 && p.density <= 1.0) {
        return Err(Error::InvalidArgument(format!("density {} not in (0, 1]", p.density)));
    }
    let (t, rep) = solve(metric, drift, sources, spec, opts)?;
    rep.ensure_converged()?;
    let candidates: Vec<usize> = (0..spec.len())
        .filter(|&i| !sources.is_source(i) && is_reached(t.as_slice()[i]))
        .collect();
    let count = ((p.density * candidates.len() as f64).floor() as usize).max(1);
    let seeds: Vec<(usize, f64)> = sample(rng, candidates.len(), count)
        .into_iter()
        .map(|k| (candidates[k], t.as_slice()[candidates[k]]))
        .collect();
    let (rec, rep) = solve_seeded(metric, drift, &seeds, spec, opts)?;
    rep.ensure_converged()?;
    let all = Grid2::filled(spec.rows, spec.cols, true);
    let away = away_from_sources(sources, 5.0 * SOURCE_EXCLUSION_RADIUS);
    let mean_abs_away = {
        let diffs: Vec<f64> = (0..spec.len())
            .filter(|&i| away[i])
            .map(|i| (rec.as_slice()[i] - t.as_slice()[i]).abs())
            .collect();
        diffs.iter().sum::<f64>() / diffs.len().max(1) as f64
    };
    Ok(ScenarioReport {
        columns: vec!["observations".into(), "rel_l2".into(), "mean_abs_away_from_source".into()],
        rows: vec![vec![count as f64, relative_l2(&rec, &t, &all), mean_abs_away]],
    })
}

/// Arrival-time change under `g -> g (1 + level xi)` with correlated unit
/// noise `xi`, one row per level holding the median and mean over draws.
#[allow(clippy::too_many_arguments)]
fn sensitivity_report(
    metric: &MetricField,
    drift: &DriftField,
    sources: &SourceMask,
    spec: GridSpec,
    p: &ScenarioParams,
    rng: &mut ChaCha8Rng,
    opts: &SolveOptions,
    cfg: &ProjectionConfig,
) -> Result<ScenarioReport> {
    if p.draws == 0 {
        return Err(Error::InvalidArgument("sensitivity needs at least one draw".into()));
    }
    let (t, rep) = solve(metric, drift, sources, spec, opts)?;
    rep.ensure_converged()?;
    let keep = Grid2::filled(spec.rows, spec.cols, true);
    let fields: Vec<ScalarField> = (0..p.draws)
        .map(|_| correlated_noise(spec.rows, p.correlation_length, rng))
        .collect();
    let mut rows = Vec::with_capacity(p.noise_levels.len());
    for &level in &p.noise_levels {
        let mut errs = Vec::with_capacity(p.draws);
        for xi in &fields {
            let mut m = metric.clone();
            for ch in m.channels_mut() {
                for (v, x) in ch.as_mut_slice().iter_mut().zip(xi.iter()) {
                    *v *= 1.0 + level * x;
                }
            }
            project_metric_field(&mut m, cfg);
            let (tp, rep) = solve(&m, drift, sources, spec, opts)?;
            rep.ensure_converged()?;
            errs.push(relative_l2(&tp, &t, &keep));
        }
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        errs.sort_by(f64::total_cmp);
        let k = errs.len();
        let median = if k % 2 == 1 {
            errs[k / 2]
        } else {
            0.5 * (errs[k / 2 - 1] + errs[k / 2])
        };
        rows.push(vec![level, median, mean]);
    }
    Ok(ScenarioReport {
        columns: vec!["noise_level".into(), "median_rel_error".into(), "mean_rel_error".into()],
        rows,
    })
}
