//! Fast sweeping forward solver and the Jacobi baseline.
//!
//! Every node update takes the minimum over the eight triangular stencils of
//! the valid two-point candidate, falling back to the two one-point
//! candidates of a stencil whose two-point update is invalid or whose pair
//! is incomplete. Ties go to the lowest stencil index, and within a stencil
//! the two-point candidate beats the one-point ones.

use crate::error::{Error, Result};
use crate::fields::{
    is_reached, ArrivalField, DriftField, Grid2, GridSpec, MetricField, SourceMask, UNREACHED,
};
use crate::linalg::Vec2;
use crate::stencil::{one_point_update, two_point_update, StencilTable};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 50;

/// One directional Gauss-Seidel pass over the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sweep {
    /// Columns left to right, each column top to bottom.
    ColsLeftToRight,
    /// Rows top to bottom, each row right to left.
    RowsTopToBottom,
    /// Columns right to left, each column bottom to top.
    ColsRightToLeft,
    /// Rows bottom to top, each row left to right.
    RowsBottomToTop,
}

pub const SWEEP_ORDER: [Sweep; 4] = [
    Sweep::ColsLeftToRight,
    Sweep::RowsTopToBottom,
    Sweep::ColsRightToLeft,
    Sweep::RowsBottomToTop,
];

impl Sweep {
    fn for_each(self, rows: usize, cols: usize, mut f: impl FnMut(usize, usize)) {
        match self {
            Sweep::ColsLeftToRight => {
                for c in 0..cols {
                    for r in 0..rows {
                        f(r, c);
                    }
                }
            }
            Sweep::RowsTopToBottom => {
                for r in 0..rows {
                    for c in (0..cols).rev() {
                        f(r, c);
                    }
                }
            }
            Sweep::ColsRightToLeft => {
                for c in (0..cols).rev() {
                    for r in (0..rows).rev() {
                        f(r, c);
                    }
                }
            }
            Sweep::RowsBottomToTop => {
                for r in (0..rows).rev() {
                    for c in 0..cols {
                        f(r, c);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    /// Stop once the largest per-iteration change drops below this. An
    /// iteration that changes nothing always stops the solve, so `0.0` asks
    /// for the exact fixed point.
    pub tol: f64,
    pub max_iters: usize,
    pub sweeps: [Sweep; 4],
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            sweeps: SWEEP_ORDER,
        }
    }
}

impl SolveOptions {
    pub fn with_tol(tol: f64, max_iters: usize) -> Self {
        SolveOptions {
            tol,
            max_iters,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    /// Full iterations performed (four sweeps each for the sweeping solver).
    pub iterations: usize,
    pub max_delta_history: Vec<f64>,
    pub converged: bool,
}

impl SolveReport {
    pub fn final_delta(&self) -> f64 {
        self.max_delta_history.last().copied().unwrap_or(f64::INFINITY)
    }

    pub fn ensure_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
                max_delta: self.final_delta(),
            })
        }
    }
}

/// The candidate that produced a node's value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Active {
    TwoPoint {
        stencil: u8,
        donors: [usize; 2],
    },
    OnePoint {
        stencil: u8,
        /// Neighbor direction (index into the stencil table offsets).
        neighbor: u8,
        donor: usize,
    },
}

impl Active {
    pub fn stencil(&self) -> usize {
        match *self {
            Active::TwoPoint { stencil, .. } | Active::OnePoint { stencil, .. } => stencil as usize,
        }
    }

    pub fn donors(&self) -> &[usize] {
        match self {
            Active::TwoPoint { donors, .. } => donors,
            Active::OnePoint { donor, .. } => std::slice::from_ref(donor),
        }
    }

    pub fn is_two_point(&self) -> bool {
        matches!(self, Active::TwoPoint { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeUpdate {
    pub value: f64,
    /// `None` when no candidate improved on the current value.
    pub active: Option<Active>,
}

/// Read-only view of one forward problem.
pub struct Problem<'a> {
    pub spec: GridSpec,
    pub metric: &'a MetricField,
    pub drift: &'a DriftField,
    pub table: &'a StencilTable,
    disp: [Vec2; 8],
}

impl<'a> Problem<'a> {
    pub fn new(
        spec: GridSpec,
        metric: &'a MetricField,
        drift: &'a DriftField,
        table: &'a StencilTable,
    ) -> Result<Self> {
        spec.check_dims("metric", metric.dims())?;
        spec.check_dims("drift", drift.dims())?;
        Ok(Problem {
            spec,
            metric,
            drift,
            table,
            disp: table.displacements(spec.h),
        })
    }

    /// Physical displacement of neighbor direction `n`.
    #[inline]
    pub fn displacement(&self, n: usize) -> Vec2 {
        self.disp[n]
    }

    /// Smallest candidate over all stencils at `node`, ignoring the node's
    /// current value.
    pub fn best_candidate(&self, node: usize, t: &[f64]) -> Option<(f64, Active)> {
        let (row, col) = self.spec.coords(node);
        let g = self.metric.at(node);
        let b = self.drift.at(node);

        let mut nbr = [None; 8];
        for (n, slot) in nbr.iter_mut().enumerate() {
            *slot = self
                .table
                .neighbor(&self.spec, row, col, n)
                .filter(|&j| is_reached(t[j]));
        }

        let mut best: Option<(f64, Active)> = None;
        let mut offer = |value: f64, active: Active| {
            if value.is_finite() && best.is_none_or(|(v, _)| value < v) {
                best = Some((value, active));
            }
        };

        for (k, &(n1, n2)) in self.table.pairs.iter().enumerate() {
            let (j1, j2) = (nbr[n1], nbr[n2]);
            if let (Some(j1), Some(j2)) = (j1, j2) {
                let up = two_point_update(t[j1], t[j2], self.disp[n1], self.disp[n2], &g, b);
                if up.valid() {
                    offer(
                        up.t0,
                        Active::TwoPoint {
                            stencil: k as u8,
                            donors: [j1, j2],
                        },
                    );
                    continue;
                }
            }
            for (n, j) in [(n1, j1), (n2, j2)] {
                if let Some(j) = j {
                    let v = one_point_update(t[j], self.disp[n], &g, b);
                    if v > t[j] {
                        offer(
                            v,
                            Active::OnePoint {
                                stencil: k as u8,
                                neighbor: n as u8,
                                donor: j,
                            },
                        );
                    }
                }
            }
        }
        best
    }

    pub fn node_update(&self, node: usize, t: &[f64]) -> NodeUpdate {
        match self.best_candidate(node, t) {
            Some((v, active)) if v < t[node] => NodeUpdate {
                value: v,
                active: Some(active),
            },
            _ => NodeUpdate {
                value: t[node],
                active: None,
            },
        }
    }
}

/// Convenience wrapper around [`Problem::node_update`].
pub fn node_update(
    node: usize,
    t: &ArrivalField,
    metric: &MetricField,
    drift: &DriftField,
    spec: GridSpec,
    table: &StencilTable,
) -> Result<NodeUpdate> {
    spec.check_dims("arrival field", t.dims())?;
    let p = Problem::new(spec, metric, drift, table)?;
    Ok(p.node_update(node, t.as_slice()))
}

fn initial_field(spec: &GridSpec, seeds: &[(usize, f64)]) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut t = vec![UNREACHED; spec.len()];
    let mut frozen = vec![false; spec.len()];
    if seeds.is_empty() {
        return Err(Error::EmptySourceMask);
    }
    for &(i, v) in seeds {
        if i >= spec.len() || !(v >= 0.0 && is_reached(v)) {
            return Err(Error::InvalidArgument(format!("bad seed ({i}, {v})")));
        }
        t[i] = v;
        frozen[i] = true;
    }
    Ok((t, frozen))
}

fn source_seeds(sources: &SourceMask, spec: &GridSpec) -> Result<Vec<(usize, f64)>> {
    spec.check_dims("source mask", sources.dims())?;
    Ok(sources.indices().into_iter().map(|i| (i, 0.0)).collect())
}

/// Fast sweeping solve from `T = 0` at the sources.
pub fn solve(
    metric: &MetricField,
    drift: &DriftField,
    sources: &SourceMask,
    spec: GridSpec,
    opts: &SolveOptions,
) -> Result<(ArrivalField, SolveReport)> {
    let seeds = source_seeds(sources, &spec)?;
    solve_seeded(metric, drift, &seeds, spec, opts)
}

/// Rounding allowance for comparing a stored time with a recomputed one.
#[inline]
fn allowance(tol: f64, t: f64) -> f64 {
    tol + 1e-12 * t.abs().max(1.0)
}

/// Fast sweeping solve with arbitrary fixed values at the seed nodes. Seed
/// nodes are never updated.
///
/// Sweeps only ever lower a value. With strong, rapidly varying drift a
/// node can keep a value whose stencil later turned invalid as its donors
/// moved; if the converged field holds such a node, extra passes assign
/// every node its best candidate outright until nothing moves by more than
/// `tol`. These passes count as iterations.
pub fn solve_seeded(
    metric: &MetricField,
    drift: &DriftField,
    seeds: &[(usize, f64)],
    spec: GridSpec,
    opts: &SolveOptions,
) -> Result<(ArrivalField, SolveReport)> {
    let table = StencilTable::default();
    let problem = Problem::new(spec, metric, drift, &table)?;
    let (mut t, frozen) = initial_field(&spec, seeds)?;

    let mut history = Vec::new();
    let mut converged = false;
    let mut stale = false;
    while history.len() < opts.max_iters {
        let mut max_delta = 0.0f64;
        stale = false;
        for sweep in opts.sweeps {
            sweep.for_each(spec.rows, spec.cols, |r, c| {
                let i = r * spec.cols + c;
                if frozen[i] {
                    return;
                }
                match problem.best_candidate(i, &t) {
                    Some((v, _)) if v < t[i] => {
                        max_delta = max_delta.max(t[i] - v);
                        t[i] = v;
                    }
                    Some((v, _)) => stale |= v - t[i] > allowance(opts.tol, t[i]),
                    None => stale |= is_reached(t[i]),
                }
            });
        }
        history.push(max_delta);
        if max_delta < opts.tol || max_delta == 0.0 {
            converged = true;
            break;
        }
    }

    if converged && stale {
        converged = false;
        while history.len() < opts.max_iters {
            let mut max_delta = 0.0f64;
            let mut moved = false;
            for sweep in opts.sweeps {
                sweep.for_each(spec.rows, spec.cols, |r, c| {
                    let i = r * spec.cols + c;
                    if frozen[i] {
                        return;
                    }
                    if let Some((v, _)) = problem.best_candidate(i, &t) {
                        let d = (v - t[i]).abs();
                        moved |= d > allowance(opts.tol, t[i]);
                        max_delta = max_delta.max(d);
                        t[i] = v;
                    }
                });
            }
            history.push(max_delta);
            if !moved {
                converged = true;
                break;
            }
        }
    }

    let report = SolveReport {
        iterations: history.len(),
        max_delta_history: history,
        converged,
    };
    Ok((ArrivalField::new(Grid2::from_vec(spec.rows, spec.cols, t)?), report))
}

/// Jacobi baseline: every node is updated simultaneously from the previous
/// iterate. Converges to the same fixed point in `O(N)` iterations.
pub fn solve_jacobi(
    metric: &MetricField,
    drift: &DriftField,
    sources: &SourceMask,
    spec: GridSpec,
    opts: &SolveOptions,
) -> Result<(ArrivalField, SolveReport)> {
    let seeds = source_seeds(sources, &spec)?;
    let table = StencilTable::default();
    let problem = Problem::new(spec, metric, drift, &table)?;
    let (mut t, frozen) = initial_field(&spec, &seeds)?;
    let mut next = t.clone();

    let mut history = Vec::new();
    let mut converged = false;
    while history.len() < opts.max_iters {
        let mut max_delta = 0.0f64;
        for i in 0..spec.len() {
            if frozen[i] {
                continue;
            }
            let up = problem.node_update(i, &t);
            max_delta = max_delta.max(t[i] - up.value);
            next[i] = up.value;
        }
        std::mem::swap(&mut t, &mut next);
        history.push(max_delta);
        if max_delta < opts.tol || max_delta == 0.0 {
            converged = true;
            break;
        }
    }
    let report = SolveReport {
        iterations: history.len(),
        max_delta_history: history,
        converged,
    };
    Ok((ArrivalField::new(Grid2::from_vec(spec.rows, spec.cols, t)?), report))
}
