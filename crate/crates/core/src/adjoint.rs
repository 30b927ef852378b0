//! Implicit differentiation of the converged sweeping fixed point.
//!
//! Each reached non-source node `i` carries a residual `R_i(T, G_i, b_i) = 0`
//! from its winning local update:
//!
//! * two-point: `R = u^T Q u - 1` with `u = s - T_i 1`, `s_k = T_k + m_k . b`
//! * one-point: `R = r^2 - m^T G m` with `r = T_j + m . b - T_i`
//!
//! Ordering nodes by arrival time makes `J = dR/dT` lower triangular, so the
//! adjoint system `J^T lambda = dL/dT` is a single back-substitution in
//! decreasing `T`, after which `dL/dtheta_i = -lambda_i dR_i/dtheta_i`.

use crate::error::{Error, Result};
use crate::fields::{
    is_reached, ArrivalField, DriftField, Grid2, GridSpec, MetricField, ScalarField, SourceMask,
};
use crate::linalg::{dot, Sym2, Vec2};
use crate::stencil::{stencil_q, StencilTable};
use crate::sweeper::{Active, Problem};

/// Relative threshold below which `J_ii` is treated as degenerate.
pub const DEGENERATE_DIAGONAL_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RecordKind {
    TwoPoint {
        donors: [usize; 2],
        m: [Vec2; 2],
        q: Sym2,
    },
    OnePoint {
        donor: usize,
        m: Vec2,
    },
}

/// Winning update of one node at the converged field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StencilRecord {
    pub node: usize,
    pub stencil: u8,
    pub kind: RecordKind,
}

impl StencilRecord {
    pub fn donors(&self) -> &[usize] {
        match &self.kind {
            RecordKind::TwoPoint { donors, .. } => donors,
            RecordKind::OnePoint { donor, .. } => std::slice::from_ref(donor),
        }
    }

    pub fn is_two_point(&self) -> bool {
        matches!(self.kind, RecordKind::TwoPoint { .. })
    }
}

/// All records of one converged solve, with a node lookup.
#[derive(Clone, Debug)]
pub struct StencilRecords {
    pub spec: GridSpec,
    pub records: Vec<StencilRecord>,
    by_node: Vec<Option<u32>>,
}

impl StencilRecords {
    pub fn get(&self, node: usize) -> Option<&StencilRecord> {
        self.by_node[node].map(|k| &self.records[k as usize])
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, StencilRecord> {
        self.records.iter()
    }

    /// Checks that every donor arrives strictly before its dependent, i.e.
    /// the Jacobian is strictly lower triangular in arrival order. Returns
    /// the first violating `(node, donor)` pair.
    pub fn first_causality_violation(&self, t: &ArrivalField) -> Option<(usize, usize)> {
        let t = t.as_slice();
        self.records.iter().find_map(|r| {
            r.donors()
                .iter()
                .find(|&&d| !(t[d] < t[r.node]))
                .map(|&d| (r.node, d))
        })
    }
}

/// Re-runs the forward selection at every reached non-source node of a
/// converged field and records the winner.
///
/// Fails with [`Error::InconsistentFixedPoint`] when a recomputed value
/// differs from the stored one by more than `100 * tol` plus a rounding
/// allowance of `1e-12 * max(1, |T|)`.
pub fn identify_stencils(
    t: &ArrivalField,
    metric: &MetricField,
    drift: &DriftField,
    sources: &SourceMask,
    spec: GridSpec,
    tol: f64,
) -> Result<StencilRecords> {
    spec.check_dims("arrival field", t.dims())?;
    spec.check_dims("source mask", sources.dims())?;
    let table = StencilTable::default();
    let problem = Problem::new(spec, metric, drift, &table)?;
    let tv = t.as_slice();
    let mut records = Vec::new();
    let mut by_node = vec![None; spec.len()];
    for node in 0..spec.len() {
        if sources.is_source(node) || !is_reached(tv[node]) {
            continue;
        }
        let Some((value, active)) = problem.best_candidate(node, tv) else {
            return Err(Error::InconsistentFixedPoint {
                node,
                stored: tv[node],
                recomputed: f64::INFINITY,
            });
        };
        if (value - tv[node]).abs() > 100.0 * tol + 1e-12 * tv[node].abs().max(1.0) {
            return Err(Error::InconsistentFixedPoint {
                node,
                stored: tv[node],
                recomputed: value,
            });
        }
        let kind = match active {
            Active::TwoPoint { stencil, donors } => {
                let (n1, n2) = table.pairs[stencil as usize];
                let m = [problem.displacement(n1), problem.displacement(n2)];
                let q = stencil_q(m[0], m[1], &metric.at(node))
                    .expect("valid two-point stencil has invertible metric");
                RecordKind::TwoPoint { donors, m, q }
            }
            Active::OnePoint {
                neighbor, donor, ..
            } => RecordKind::OnePoint {
                donor,
                m: problem.displacement(neighbor as usize),
            },
        };
        by_node[node] = Some(records.len() as u32);
        records.push(StencilRecord {
            node,
            stencil: active.stencil() as u8,
            kind,
        });
    }
    Ok(StencilRecords {
        spec,
        records,
        by_node,
    })
}

/// Nonzero entries of one Jacobian row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JacobianRow {
    /// `dR_i/dT_i`, clamped away from zero when `degenerate` is set.
    pub diag: f64,
    /// `(donor, dR_i/dT_donor)`; only the first `n_off` entries are used.
    pub off: [(usize, f64); 2],
    pub n_off: usize,
    pub degenerate: bool,
}

impl JacobianRow {
    pub fn off_diagonal(&self) -> &[(usize, f64)] {
        &self.off[..self.n_off]
    }
}

#[inline]
fn drift_adjusted(t: &[f64], donors: [usize; 2], m: &[Vec2; 2], b: Vec2) -> Vec2 {
    [t[donors[0]] + dot(m[0], b), t[donors[1]] + dot(m[1], b)]
}

/// Jacobian entries of a record's residual at the stored arrival times.
pub fn jacobian_entries(record: &StencilRecord, t: &ArrivalField, drift: &DriftField) -> JacobianRow {
    let tv = t.as_slice();
    let t0 = tv[record.node];
    let b = drift.at(record.node);
    let (diag, off, n_off, scale) = match record.kind {
        RecordKind::TwoPoint { donors, m, q } => {
            let s = drift_adjusted(tv, donors, &m, b);
            let u = [s[0] - t0, s[1] - t0];
            let qu = q.mul(u);
            let scale = (q.a11.abs() + 2.0 * q.a12.abs() + q.a22.abs()) * (u[0].abs() + u[1].abs());
            (
                -2.0 * (qu[0] + qu[1]),
                [(donors[0], 2.0 * qu[0]), (donors[1], 2.0 * qu[1])],
                2,
                scale,
            )
        }
        RecordKind::OnePoint { donor, m } => {
            let r = tv[donor] + dot(m, b) - t0;
            (-2.0 * r, [(donor, 2.0 * r), (donor, 0.0)], 1, r.abs() + m[0].abs() + m[1].abs())
        }
    };
    let floor = DEGENERATE_DIAGONAL_TOL * scale.max(f64::MIN_POSITIVE);
    let degenerate = !(diag.abs() >= floor);
    let diag = if degenerate {
        if diag < 0.0 {
            -floor
        } else {
            floor
        }
    } else {
        diag
    };
    JacobianRow {
        diag,
        off,
        n_off,
        degenerate,
    }
}

#[derive(Clone, Debug)]
pub struct AdjointField {
    pub lambda: ScalarField,
    /// Number of rows whose diagonal had to be clamped.
    pub degenerate_rows: usize,
}

/// Solves `J^T lambda = g` by back-substitution in decreasing arrival time
/// (ties by decreasing node index). Nodes without a record keep
/// `lambda = 0`.
pub fn solve_adjoint(
    records: &StencilRecords,
    t: &ArrivalField,
    drift: &DriftField,
    g: &ScalarField,
) -> Result<AdjointField> {
    let spec = records.spec;
    spec.check_dims("loss gradient", g.dims())?;
    spec.check_dims("arrival field", t.dims())?;
    let tv = t.as_slice();

    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        let (na, nb) = (records.records[a].node, records.records[b].node);
        tv[nb].total_cmp(&tv[na]).then(nb.cmp(&na))
    });

    let mut acc = g.as_slice().to_vec();
    let mut lambda = vec![0.0; spec.len()];
    let mut degenerate_rows = 0;
    for k in order {
        let rec = &records.records[k];
        let row = jacobian_entries(rec, t, drift);
        degenerate_rows += row.degenerate as usize;
        let l = acc[rec.node] / row.diag;
        lambda[rec.node] = l;
        for &(j, v) in row.off_diagonal() {
            acc[j] -= v * l;
        }
    }
    Ok(AdjointField {
        lambda: Grid2::from_vec(spec.rows, spec.cols, lambda)?,
        degenerate_rows,
    })
}

/// `J^T lambda` assembled row by row from the records; used to check the
/// adjoint solve.
pub fn apply_jacobian_transpose(
    records: &StencilRecords,
    t: &ArrivalField,
    drift: &DriftField,
    lambda: &ScalarField,
) -> ScalarField {
    let spec = records.spec;
    let mut out = vec![0.0; spec.len()];
    for rec in records.iter() {
        let row = jacobian_entries(rec, t, drift);
        let l = lambda[rec.node];
        out[rec.node] += row.diag * l;
        for &(j, v) in row.off_diagonal() {
            out[j] += v * l;
        }
    }
    Grid2::from_vec(spec.rows, spec.cols, out).expect("grid dims")
}

/// Per-node loss gradients with respect to the five parameter channels.
///
/// The `g12` entry holds the derivative with respect to the single stored
/// off-diagonal component, i.e. the sum of both symmetric entries.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradients {
    pub g11: ScalarField,
    pub g12: ScalarField,
    pub g22: ScalarField,
    pub b1: ScalarField,
    pub b2: ScalarField,
}

impl ParamGradients {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let z = Grid2::filled(rows, cols, 0.0);
        ParamGradients {
            g11: z.clone(),
            g12: z.clone(),
            g22: z.clone(),
            b1: z.clone(),
            b2: z,
        }
    }

    pub fn channels(&self) -> [&ScalarField; 5] {
        [&self.g11, &self.g12, &self.g22, &self.b1, &self.b2]
    }

    pub fn channels_mut(&mut self) -> [&mut ScalarField; 5] {
        [
            &mut self.g11,
            &mut self.g12,
            &mut self.g22,
            &mut self.b1,
            &mut self.b2,
        ]
    }

    pub fn add_assign(&mut self, other: &ParamGradients) {
        for (a, b) in self.channels_mut().into_iter().zip(other.channels()) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x += y;
            }
        }
    }

    /// Euclidean norm over all five channels.
    pub fn norm(&self) -> f64 {
        self.channels()
            .iter()
            .flat_map(|c| c.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Partial derivatives `(dR/dG as (g11, g12, g22), dR/db)` of one record's
/// residual.
pub fn residual_partials(record: &StencilRecord, t: &ArrivalField, drift: &DriftField) -> ([f64; 3], Vec2) {
    let tv = t.as_slice();
    let t0 = tv[record.node];
    let b = drift.at(record.node);
    // dR/dG = -v v^T and dR/db = c v for a direction v and scalar c.
    let (v, c) = match record.kind {
        RecordKind::TwoPoint { donors, m, q } => {
            let s = drift_adjusted(tv, donors, &m, b);
            let qu = q.mul([s[0] - t0, s[1] - t0]);
            let v = [
                m[0][0] * qu[0] + m[1][0] * qu[1],
                m[0][1] * qu[0] + m[1][1] * qu[1],
            ];
            return (
                [-v[0] * v[0], -2.0 * v[0] * v[1], -v[1] * v[1]],
                [2.0 * v[0], 2.0 * v[1]],
            );
        }
        RecordKind::OnePoint { donor, m } => (m, 2.0 * (tv[donor] + dot(m, b) - t0)),
    };
    (
        [-v[0] * v[0], -2.0 * v[0] * v[1], -v[1] * v[1]],
        [c * v[0], c * v[1]],
    )
}

/// `dL/dtheta_i = -lambda_i dR_i/dtheta_i` at every recorded node.
pub fn param_gradients(
    records: &StencilRecords,
    adjoint: &AdjointField,
    t: &ArrivalField,
    drift: &DriftField,
) -> ParamGradients {
    let spec = records.spec;
    let mut out = ParamGradients::zeros(spec.rows, spec.cols);
    for rec in records.iter() {
        let l = adjoint.lambda[rec.node];
        if l == 0.0 {
            continue;
        }
        let (dg, db) = residual_partials(rec, t, drift);
        let i = rec.node;
        out.g11[i] = -l * dg[0];
        out.g12[i] = -l * dg[1];
        out.g22[i] = -l * dg[2];
        out.b1[i] = -l * db[0];
        out.b2[i] = -l * db[1];
    }
    out
}

/// Sparse observed arrival times.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    pub sources: SourceMask,
    /// Observed node indices, never sources.
    pub nodes: Vec<usize>,
    /// Observed times, parallel to `nodes`.
    pub times: Vec<f64>,
    /// Relative noise level used to generate the data, if synthetic.
    pub noise_level: Option<f64>,
}

impl ObservationSet {
    pub fn new(sources: SourceMask, nodes: Vec<usize>, times: Vec<f64>) -> Result<Self> {
        if nodes.len() != times.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} observed nodes but {} times",
                nodes.len(),
                times.len()
            )));
        }
        let (rows, cols) = sources.dims();
        for (&n, &t) in nodes.iter().zip(&times) {
            if n >= rows * cols {
                return Err(Error::InvalidArgument(format!("observed node {n} outside grid")));
            }
            if sources.is_source(n) {
                return Err(Error::InvalidArgument(format!("observed node {n} is a source")));
            }
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::InvalidArgument(format!("observed time {t} at node {n}")));
            }
        }
        Ok(ObservationSet {
            sources,
            nodes,
            times,
            noise_level: None,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Observed nodes the current field leaves unreached are given this time in
/// the loss so that the penalty pushes the front outwards.
pub const UNREACHED_TIME_CAP: f64 = 1e4;

#[derive(Clone, Debug)]
pub struct MseGradient {
    /// `1/2 sum (T - T_obs)^2` over observed nodes, with the capped penalty
    /// for unreached ones.
    pub loss: f64,
    /// `dL/dT`, zero off the observed set and at unreached nodes.
    pub grad: ScalarField,
    pub unreached_observed: usize,
}

pub fn loss_grad_mse(t: &ArrivalField, obs: &ObservationSet) -> Result<MseGradient> {
    let (rows, cols) = t.dims();
    if obs.sources.dims() != (rows, cols) {
        return Err(Error::DimensionMismatch("observations and arrival field differ".into()));
    }
    let mut grad = Grid2::filled(rows, cols, 0.0);
    let mut loss = 0.0;
    let mut unreached_observed = 0;
    for (&n, &obs_t) in obs.nodes.iter().zip(&obs.times) {
        let tn = t.as_slice()[n];
        if is_reached(tn) {
            let r = tn - obs_t;
            loss += 0.5 * r * r;
            grad[n] += r;
        } else {
            unreached_observed += 1;
            let r = UNREACHED_TIME_CAP - obs_t;
            loss += 0.5 * r * r;
        }
    }
    Ok(MseGradient {
        loss,
        grad,
        unreached_observed,
    })
}

/// Everything a backward pass produces.
#[derive(Clone, Debug)]
pub struct Backward {
    pub records: StencilRecords,
    pub adjoint: AdjointField,
    pub grads: ParamGradients,
}

/// Runs stencil identification, the adjoint solve and the parameter
/// contraction for a loss gradient `g = dL/dT`.
pub fn backward(
    t: &ArrivalField,
    metric: &MetricField,
    drift: &DriftField,
    sources: &SourceMask,
    spec: GridSpec,
    tol: f64,
    g: &ScalarField,
) -> Result<Backward> {
    let records = identify_stencils(t, metric, drift, sources, spec, tol)?;
    let adjoint = solve_adjoint(&records, t, drift, g)?;
    let grads = param_gradients(&records, &adjoint, t, drift);
    Ok(Backward {
        records,
        adjoint,
        grads,
    })
}
