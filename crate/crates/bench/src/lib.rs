//! Shared fixtures for the solver benchmarks.

use rfek_core::oracle::{CaseProblem, StudyCase};
use rfek_core::{solve, ArrivalField, ObservationSet, SolveOptions};

/// Grid sizes swept by every benchmark group.
pub const SIZES: [usize; 3] = [50, 100, 200];

/// Combined anisotropic-drift problem on an `n x n` unit square.
pub fn combined(n: usize) -> CaseProblem {
    CaseProblem::new(StudyCase::Combined, n).expect("valid benchmark size")
}

/// Converged arrival field and full observations of it, shifted by a
/// smooth offset so the loss gradient is nonzero everywhere.
pub fn solved_with_observations(p: &CaseProblem) -> (ArrivalField, ObservationSet) {
    let (t, _) = solve(&p.metric, &p.drift, &p.sources, p.spec, &SolveOptions::default()).expect("benchmark solve");
    let nodes: Vec<usize> = (0..p.spec.len()).filter(|&i| !p.sources.is_source(i)).collect();
    let times = nodes.iter().map(|&i| 0.95 * t.as_slice()[i]).collect();
    let obs = ObservationSet::new(p.sources.clone(), nodes, times).expect("observation set");
    (t, obs)
}
