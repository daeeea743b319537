//! Discrete pairwise MRF over per-scan placement candidates, minimized with
//! sequential tree-reweighted message passing, plus an exact enumeration
//! oracle for small instances.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{
    coverage_terms, scan_pair_energy, PairScan, PotentialWeights, UnaryEvaluator, UnaryKind,
};
use crate::error::{Error, Result};
use crate::floorplan::FloorplanContext;
use crate::scanprep::ScanEvidence;
use crate::search::CandidateSet;

/// Which potentials participate in the assembled model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationSwitches {
    pub use_sf: bool,
    pub use_ss: bool,
    pub use_cov: bool,
    /// Keep the per-label term for pixels only one scan can reach.
    pub coverage_singleton_unary: bool,
}

impl Default for AblationSwitches {
    fn default() -> Self {
        AblationSwitches {
            use_sf: true,
            use_ss: true,
            use_cov: true,
            coverage_singleton_unary: true,
        }
    }
}

/// One pairwise term; `i < j` and the table is row-major over (label_i, label_j).
#[derive(Debug, Clone)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub table: Vec<f64>,
}

/// Pairwise MRF over small per-variable label sets.
#[derive(Debug, Clone, Default)]
pub struct EnergyModel {
    pub unary: Vec<Vec<f64>>,
    pub edges: Vec<Edge>,
    pub constant: f64,
}

impl EnergyModel {
    pub fn num_vars(&self) -> usize {
        self.unary.len()
    }

    pub fn num_labels(&self, var: usize) -> usize {
        self.unary[var].len()
    }
}

/// Solver output; `bound_history` holds one lower bound per iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveResult {
    pub assignment: Vec<usize>,
    pub energy: f64,
    pub lower_bound: f64,
    pub iterations: usize,
    pub bound_history: Vec<f64>,
}

/// Energy of a full assignment.
pub fn total_energy(model: &EnergyModel, assignment: &[usize]) -> Result<f64> {
    if assignment.len() != model.num_vars() {
        return Err(Error::invalid("assignment length mismatch"));
    }
    let mut e = model.constant;
    for (i, &l) in assignment.iter().enumerate() {
        let u = model
            .unary
            .get(i)
            .and_then(|u| u.get(l))
            .ok_or_else(|| Error::invalid(format!("label {l} out of range for var {i}")))?;
        e += u;
    }
    for edge in &model.edges {
        let nj = model.num_labels(edge.j);
        e += edge.table[assignment[edge.i] * nj + assignment[edge.j]];
    }
    Ok(e)
}

pub const DEFAULT_MAX_ITERS: usize = 50;
const CONVERGENCE_REL_TOL: f64 = 1e-9;

/// Sequential tree-reweighted message passing over monotonic chains.
///
/// Variables are visited in index order; the message weight at a node is the
/// reciprocal of its maximum incident chain count. The reported per-iteration
/// lower bound is non-decreasing.
pub fn trws_solve(model: &EnergyModel, max_iters: usize) -> SolveResult {
    let n = model.num_vars();
    if n == 0 {
        return SolveResult {
            assignment: Vec::new(),
            energy: model.constant,
            lower_bound: model.constant,
            iterations: 0,
            bound_history: Vec::new(),
        };
    }
    // neighbor lists: (edge index, other var)
    let mut fwd: Vec<Vec<usize>> = vec![Vec::new(); n]; // edges where var == i
    let mut bwd: Vec<Vec<usize>> = vec![Vec::new(); n]; // edges where var == j
    for (ei, e) in model.edges.iter().enumerate() {
        fwd[e.i].push(ei);
        bwd[e.j].push(ei);
    }
    let gamma: Vec<f64> = (0..n)
        .map(|i| 1.0 / (fwd[i].len().max(bwd[i].len()).max(1) as f64))
        .collect();

    // messages per edge, both directions, normalized to min 0
    let mut msg_to_j: Vec<Vec<f64>> = model
        .edges
        .iter()
        .map(|e| vec![0.0; model.num_labels(e.j)])
        .collect();
    let mut msg_to_i: Vec<Vec<f64>> = model
        .edges
        .iter()
        .map(|e| vec![0.0; model.num_labels(e.i)])
        .collect();

    let reparam_unary = |var: usize,
                         msg_to_j: &[Vec<f64>],
                         msg_to_i: &[Vec<f64>]|
     -> Vec<f64> {
        let mut d = model.unary[var].clone();
        for &ei in &fwd[var] {
            for (x, m) in d.iter_mut().zip(&msg_to_i[ei]) {
                *x += m;
            }
        }
        for &ei in &bwd[var] {
            for (x, m) in d.iter_mut().zip(&msg_to_j[ei]) {
                *x += m;
            }
        }
        d
    };

    // initial assignment: per-variable best unary
    let argmin = |v: &[f64]| -> usize {
        let mut best = 0;
        for (i, x) in v.iter().enumerate() {
            if *x < v[best] {
                best = i;
            }
        }
        best
    };
    let mut best_assignment: Vec<usize> =
        model.unary.iter().map(|u| argmin(u)).collect();
    let mut best_energy = total_energy(model, &best_assignment).unwrap();

    let mut bound_history = Vec::new();
    let mut prev_assignment = best_assignment.clone();
    let mut iterations = 0usize;

    for iter in 0..max_iters {
        iterations = iter + 1;
        // ---- forward pass: decode greedily, send messages to later vars ----
        let mut assignment = vec![0usize; n];
        for i in 0..n {
            // decode from reparametrized unary: earlier neighbors fixed,
            // later neighbors represented by their messages
            let mut dec = model.unary[i].clone();
            for &ei in &fwd[i] {
                let e = &model.edges[ei];
                for (x, m) in dec.iter_mut().zip(&msg_to_i[ei]) {
                    *x += m;
                }
                let _ = e;
            }
            for &ei in &bwd[i] {
                let e = &model.edges[ei];
                let nj = model.num_labels(e.j);
                let li_fixed = assignment[e.i];
                for (lj, x) in dec.iter_mut().enumerate() {
                    *x += e.table[li_fixed * nj + lj];
                }
            }
            assignment[i] = argmin(&dec);

            let d = reparam_unary(i, &msg_to_j, &msg_to_i);
            for &ei in &fwd[i] {
                let e = &model.edges[ei];
                let nj = model.num_labels(e.j);
                let ni = model.num_labels(e.i);
                let mut new_msg = vec![f64::INFINITY; nj];
                for li in 0..ni {
                    let base = gamma[i] * d[li] - msg_to_i[ei][li];
                    for (lj, nm) in new_msg.iter_mut().enumerate() {
                        let cand = base + e.table[li * nj + lj];
                        if cand < *nm {
                            *nm = cand;
                        }
                    }
                }
                let mn = new_msg.iter().cloned().fold(f64::INFINITY, f64::min);
                for m in new_msg.iter_mut() {
                    *m -= mn;
                }
                msg_to_j[ei] = new_msg;
            }
        }
        let e = total_energy(model, &assignment).unwrap();
        if e < best_energy {
            best_energy = e;
            best_assignment = assignment.clone();
        }

        // ---- backward pass: send messages to earlier vars, collect bound ----
        let mut lb = model.constant;
        for i in (0..n).rev() {
            let mut d = reparam_unary(i, &msg_to_j, &msg_to_i);
            let dmin = d.iter().cloned().fold(f64::INFINITY, f64::min);
            lb += dmin;
            for x in d.iter_mut() {
                *x -= dmin;
            }
            for &ei in &bwd[i] {
                let e = &model.edges[ei];
                let nj = model.num_labels(e.j);
                let ni = model.num_labels(e.i);
                // this node is e.j; send toward e.i
                let mut new_msg = vec![f64::INFINITY; ni];
                for lj in 0..nj {
                    let base = gamma[i] * d[lj] - msg_to_j[ei][lj];
                    for (li, nm) in new_msg.iter_mut().enumerate() {
                        let cand = base + e.table[li * nj + lj];
                        if cand < *nm {
                            *nm = cand;
                        }
                    }
                }
                let mn = new_msg.iter().cloned().fold(f64::INFINITY, f64::min);
                for m in new_msg.iter_mut() {
                    *m -= mn;
                }
                lb += mn;
                msg_to_i[ei] = new_msg;
            }
        }
        bound_history.push(lb);

        let converged = iter > 0 && {
            let prev = bound_history[iter - 1];
            let rel = (lb - prev).abs() / lb.abs().max(1.0);
            rel < CONVERGENCE_REL_TOL && assignment == prev_assignment
        };
        prev_assignment = assignment;
        if converged {
            break;
        }
    }

    SolveResult {
        assignment: best_assignment,
        energy: best_energy,
        lower_bound: *bound_history.last().unwrap(),
        iterations,
        bound_history,
    }
}

const BRUTE_FORCE_LIMIT: u64 = 10_000_000;

/// Exact minimum by enumeration; ties resolve to the lexicographically
/// smallest assignment.
pub fn brute_force_solve(model: &EnergyModel) -> Result<SolveResult> {
    let n = model.num_vars();
    let mut count: u64 = 1;
    for u in &model.unary {
        count = count.saturating_mul(u.len() as u64);
        if count > BRUTE_FORCE_LIMIT {
            return Err(Error::ModelTooLarge(count));
        }
    }
    let mut assignment = vec![0usize; n];
    let mut best = assignment.clone();
    let mut best_e = total_energy(model, &assignment)?;
    loop {
        // advance odometer, last variable fastest
        let mut pos = n;
        loop {
            if pos == 0 {
                let result = SolveResult {
                    assignment: best.clone(),
                    energy: best_e,
                    lower_bound: best_e,
                    iterations: 1,
                    bound_history: vec![best_e],
                };
                return Ok(result);
            }
            pos -= 1;
            assignment[pos] += 1;
            if assignment[pos] < model.num_labels(pos) {
                break;
            }
            assignment[pos] = 0;
        }
        let e = total_energy(model, &assignment)?;
        if e < best_e {
            best_e = e;
            best.copy_from_slice(&assignment);
        }
    }
}

/// Placed free-space bounding box in floorplan coordinates.
fn placed_bbox(scan: &ScanEvidence, pl: &crate::energy::Placement) -> (i32, i32, i32, i32) {
    let (mut x0, mut y0, mut x1, mut y1) = (i32::MAX, i32::MAX, i32::MIN, i32::MIN);
    for p in scan.free_space.set_pixels() {
        let (fx, fy) = pl.map(p, scan.origin_px);
        x0 = x0.min(fx);
        y0 = y0.min(fy);
        x1 = x1.max(fx);
        y1 = y1.max(fy);
    }
    (x0, y0, x1, y1)
}

fn bboxes_overlap(a: (i32, i32, i32, i32), b: (i32, i32, i32, i32)) -> bool {
    a.0 <= b.2 && b.0 <= a.2 && a.1 <= b.3 && b.1 <= a.3
}

/// Build the placement MRF: unary per candidate, scan-to-scan tables for
/// every overlapping pair, coverage terms merged in. All-zero tables are
/// dropped; label-independent tables fold into the constant. `kind` selects
/// the unary metric, so a baseline can replace it wholesale.
pub fn assemble_model(
    scans: &[&ScanEvidence],
    sets: &[CandidateSet],
    ctx: &FloorplanContext,
    weights: &PotentialWeights,
    switches: &AblationSwitches,
    kind: UnaryKind,
) -> Result<EnergyModel> {
    let n = scans.len();
    if sets.len() != n {
        return Err(Error::invalid("one candidate set per scan required"));
    }
    for s in sets {
        if s.candidates.is_empty() {
            return Err(Error::NoCandidates(s.scan_id.clone()));
        }
    }

    // unary
    let mut unary: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (scan, set) in scans.iter().zip(sets) {
        if switches.use_sf {
            let ev = UnaryEvaluator::new(ctx, scan, weights, kind)?;
            let u = set
                .candidates
                .iter()
                .map(|c| ev.eval(&c.placement()))
                .collect::<Result<Vec<f64>>>()?;
            unary.push(u);
        } else {
            unary.push(vec![0.0; set.candidates.len()]);
        }
    }

    let mut tables: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();

    if switches.use_ss && weights.w_ss != 0.0 {
        // pre-rotated pair views per (scan, rotation actually used)
        let mut views: BTreeMap<(usize, u8), PairScan> = BTreeMap::new();
        for (s, set) in sets.iter().enumerate() {
            for c in &set.candidates {
                views
                    .entry((s, c.k % 4))
                    .or_insert_with(|| PairScan::build(scans[s], c.k));
            }
        }
        let bboxes: Vec<Vec<(i32, i32, i32, i32)>> = sets
            .iter()
            .enumerate()
            .map(|(s, set)| {
                set.candidates
                    .iter()
                    .map(|c| placed_bbox(scans[s], &c.placement()))
                    .collect()
            })
            .collect();
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .collect();
        let computed: Vec<((usize, usize), Vec<f64>)> = pairs
            .par_iter()
            .map(|&(i, j)| {
                let (ni, nj) = (sets[i].candidates.len(), sets[j].candidates.len());
                let mut table = vec![0.0; ni * nj];
                for (li, ci) in sets[i].candidates.iter().enumerate() {
                    for (lj, cj) in sets[j].candidates.iter().enumerate() {
                        if !bboxes_overlap(bboxes[i][li], bboxes[j][lj]) {
                            continue;
                        }
                        let a = &views[&(i, ci.k % 4)];
                        let b = &views[&(j, cj.k % 4)];
                        let e = scan_pair_energy(a, (ci.tx, ci.ty), b, (cj.tx, cj.ty));
                        table[li * nj + lj] = weights.w_ss * e;
                    }
                }
                ((i, j), table)
            })
            .collect();
        for (key, table) in computed {
            tables.insert(key, table);
        }
    }

    let mut constant = 0.0;
    if switches.use_cov && weights.w_cov != 0.0 {
        let cand_lists: Vec<Vec<crate::energy::Placement>> = sets
            .iter()
            .map(|s| s.candidates.iter().map(|c| c.placement()).collect())
            .collect();
        let cov = coverage_terms(
            scans,
            &cand_lists,
            ctx,
            weights.w_cov,
            switches.coverage_singleton_unary,
        );
        for (u, add) in unary.iter_mut().zip(&cov.unary) {
            for (a, b) in u.iter_mut().zip(add) {
                *a += b;
            }
        }
        for ((i, j), add) in cov.pairs {
            let nj = sets[j].candidates.len();
            let ni = sets[i].candidates.len();
            let t = tables.entry((i, j)).or_insert_with(|| vec![0.0; ni * nj]);
            for (a, b) in t.iter_mut().zip(&add) {
                *a += b;
            }
        }
    }

    let mut edges = Vec::new();
    for ((i, j), table) in tables {
        let mx = table.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mn = table.iter().cloned().fold(f64::INFINITY, f64::min);
        if mx == 0.0 && mn == 0.0 {
            continue;
        }
        if mx == mn {
            constant += mx;
            continue;
        }
        edges.push(Edge { i, j, table });
    }

    Ok(EnergyModel {
        unary,
        edges,
        constant,
    })
}
