//! Branch and bound over the relaxation binaries.
//!
//! Best-bound search. Each node solves the conic relaxation with a partial
//! pin set over the open/assignment binaries; its bound is the relaxation
//! objective less a slack covering the solver's reported error. Incumbents
//! come from the exact cost of an integral design with every used facility
//! sized optimally, so the final objective is exact no matter how tight
//! the relaxation was. The root can be tightened first with the
//! always-valid rows and rounds of projection cuts.

use std::collections::BinaryHeap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::conic::VarId;
use crate::cuts::{
    add_valid_inequalities, candidate_branch_sets, generate_cut, projection_options,
    CutGenSettings,
};
use crate::formulations::{
    add_closest_assignment, build, objective_value, BuiltModel, CostBreakdown,
    FormulationError, FormulationKind,
};
use crate::instance::Instance;
use crate::oracle::optimal_rate;
use crate::socp::{solve_program, SolverOptions, SolverResult, SolverStatus, StdFormError};

pub const INTEGRALITY_TOL: f64 = 1e-6;

/// Pinning binaries leaves the dual optimal set degenerate, so node solves
/// that stall just above the interior point tolerance are accepted on
/// their best iterate; the leftover error is charged against the bound.
const NODE_ACCEPT_ERR: f64 = 1e-6;

/// Named tightening recipes: the always-valid rows, projection cuts over
/// single binaries or pairs, and their combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    Basic,
    Vi,
    Cut1,
    ViCut1,
    Cut2,
    ViCut2,
}

impl Setting {
    pub const ALL: [Setting; 6] = [
        Setting::Basic,
        Setting::Vi,
        Setting::Cut1,
        Setting::ViCut1,
        Setting::Cut2,
        Setting::ViCut2,
    ];

    pub fn parse(s: &str) -> Option<Setting> {
        match s {
            "basic" => Some(Setting::Basic),
            "vi" => Some(Setting::Vi),
            "cut1" => Some(Setting::Cut1),
            "vi-cut1" => Some(Setting::ViCut1),
            "cut2" => Some(Setting::Cut2),
            "vi-cut2" => Some(Setting::ViCut2),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Setting::Basic => "basic",
            Setting::Vi => "vi",
            Setting::Cut1 => "cut1",
            Setting::ViCut1 => "vi-cut1",
            Setting::Cut2 => "cut2",
            Setting::ViCut2 => "vi-cut2",
        }
    }

    pub fn use_vi(self) -> bool {
        matches!(self, Setting::Vi | Setting::ViCut1 | Setting::ViCut2)
    }

    pub fn branch_size(self) -> usize {
        match self {
            Setting::Basic | Setting::Vi => 0,
            Setting::Cut1 | Setting::ViCut1 => 1,
            Setting::Cut2 | Setting::ViCut2 => 2,
        }
    }

    pub fn cut_settings(self) -> CutGenSettings {
        CutGenSettings {
            branch_size: self.branch_size(),
            use_vi: self.use_vi(),
            ..CutGenSettings::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct BnbConfig {
    pub kind: FormulationKind,
    pub setting: Setting,
    pub closest_assignment: bool,
    /// Stop once `(incumbent - bound) / max(|incumbent|, 1e-9)` drops here.
    pub gap_tol: f64,
    pub time_limit: Option<f64>,
    pub node_limit: Option<usize>,
    pub threads: usize,
}

impl Default for BnbConfig {
    fn default() -> Self {
        BnbConfig {
            kind: FormulationKind::General,
            setting: Setting::Basic,
            closest_assignment: false,
            gap_tol: 1e-6,
            time_limit: None,
            node_limit: None,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    TimeLimit,
    NodeLimit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub objective: Option<f64>,
    /// Proven lower bound on the optimum; `None` before any node solved.
    pub bound: Option<f64>,
    pub gap: Option<f64>,
    pub nodes: usize,
    pub cuts: usize,
    pub vi_rows: usize,
    pub wall_seconds: f64,
    pub open: Option<Vec<bool>>,
    pub assignment: Option<Vec<usize>>,
    #[serde(rename = "mu")]
    pub rates: Option<Vec<f64>>,
    pub breakdown: Option<CostBreakdown>,
}

#[derive(Debug, thiserror::Error)]
pub enum BnbError {
    #[error(transparent)]
    Formulation(#[from] FormulationError),
    #[error(transparent)]
    Solver(#[from] StdFormError),
}

struct Node {
    bound: f64,
    id: u64,
    pins: Vec<(VarId, f64)>,
}

// Min-heap on (bound, id): BinaryHeap pops the "largest" node.
impl Ord for Node {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then(self.id.cmp(&other.id))
            .reverse()
    }
}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}
impl Eq for Node {}

struct Incumbent {
    cost: f64,
    open: Vec<bool>,
    assignment: Vec<usize>,
    rates: Vec<f64>,
    breakdown: CostBreakdown,
}

/// Accept a node solve: a converged point, or a stalled one whose best
/// iterate is within [`NODE_ACCEPT_ERR`]. Returns the safe bound (objective
/// less the error charge) and the point.
fn accept(res: &SolverResult) -> Option<(f64, &[f64])> {
    match res.status {
        SolverStatus::Optimal => {}
        SolverStatus::IterationLimit | SolverStatus::NumericalFailure
            if res.composite_error <= NODE_ACCEPT_ERR => {}
        _ => return None,
    }
    let err = if res.composite_error.is_finite() {
        res.composite_error.max(1e-8)
    } else {
        return None;
    };
    Some((res.objective - err * res.objective.abs().max(1.0), &res.x))
}

fn is_integral(binaries: &[VarId], point: &[f64]) -> bool {
    binaries
        .iter()
        .all(|v| frac_of(point[v.0]) <= INTEGRALITY_TOL)
}

fn frac_of(value: f64) -> f64 {
    value.min(1.0 - value).abs()
}

/// Most fractional binary (ties to the lowest id).
fn branch_var(binaries: &[VarId], point: &[f64]) -> Option<VarId> {
    let mut best: Option<(VarId, f64)> = None;
    for &v in binaries {
        let f = frac_of(point[v.0]);
        if f > INTEGRALITY_TOL && best.is_none_or(|(_, bf)| f > bf) {
            best = Some((v, f));
        }
    }
    best.map(|(v, _)| v)
}

fn rel_gap(incumbent: f64, bound: f64) -> f64 {
    ((incumbent - bound) / incumbent.abs().max(1e-9)).max(0.0)
}

/// Exact cost of the design read off an integral point: open flags from the
/// location binaries, each zone to its largest assignment binary, each used
/// facility sized by the rate search. `None` when the design is infeasible
/// (a cap below the aggregate demand, or an assignment to a closed site).
fn extract_incumbent(model: &BuiltModel, point: &[f64]) -> Option<Incumbent> {
    let inst = &model.inst;
    let open: Vec<bool> = model.x.iter().map(|v| point[v.0] > 0.5).collect();
    let assignment: Vec<usize> = (0..inst.n_zones())
        .map(|j| {
            (0..inst.n_facilities())
                .max_by(|&a, &b| point[model.y[a][j].0].total_cmp(&point[model.y[b][j].0]))
                .unwrap()
        })
        .collect();
    incumbent_from(inst, open, assignment)
}

fn incumbent_from(inst: &Instance, open: Vec<bool>, assignment: Vec<usize>) -> Option<Incumbent> {
    let mut agg = vec![0.0f64; inst.n_facilities()];
    for (j, &i) in assignment.iter().enumerate() {
        if !open[i] {
            return None;
        }
        agg[i] += inst.zones[j].lambda;
    }
    let mut rates = vec![0.0f64; inst.n_facilities()];
    for (i, fac) in inst.facilities.iter().enumerate() {
        if !open[i] {
            continue;
        }
        rates[i] = if agg[i] > 0.0 {
            optimal_rate(agg[i], fac)?.rate
        } else {
            fac.rate_min
        };
    }
    let breakdown = objective_value(inst, &open, &assignment, &rates).ok()?;
    let cost = breakdown.total();
    if !cost.is_finite() {
        return None;
    }
    Some(Incumbent { cost, open, assignment, rates, breakdown })
}

/// Design encoded by a full pin set, for leaves whose relaxation will not
/// solve: zones to their pinned-one assignment binary.
fn incumbent_from_pins(model: &BuiltModel, pins: &[(VarId, f64)]) -> Option<Incumbent> {
    let inst = &model.inst;
    let mut point = vec![0.0f64; model.program.num_vars()];
    for &(v, val) in pins {
        point[v.0] = val;
    }
    let open: Vec<bool> = model.x.iter().map(|v| point[v.0] > 0.5).collect();
    let mut assignment = Vec::with_capacity(inst.n_zones());
    for j in 0..inst.n_zones() {
        let i = (0..inst.n_facilities()).find(|&i| point[model.y[i][j].0] > 0.5)?;
        assignment.push(i);
    }
    incumbent_from(inst, open, assignment)
}

pub fn solve(inst: &Instance, cfg: &BnbConfig) -> Result<SolveReport, BnbError> {
    let t0 = Instant::now();
    let mut model = build(inst, cfg.kind)?;
    if cfg.closest_assignment {
        add_closest_assignment(&mut model)?;
    }
    let cut_cfg = cfg.setting.cut_settings();
    let mut vi_rows = 0;
    if cut_cfg.use_vi {
        vi_rows = add_valid_inequalities(&mut model)?;
    }
    let opts = SolverOptions::default();
    let binaries = model.program.binary_vars();

    // Root tightening: alternate relaxation solves with projection cuts
    // until no candidate separates (or the relaxation goes integral).
    let mut cuts = 0usize;
    let mut root_bound = f64::NEG_INFINITY;
    if cut_cfg.branch_size > 0 {
        let popts = projection_options();
        for _ in 0..cut_cfg.max_rounds {
            let res = solve_program(&model.program, &[], &opts)?;
            let Some((bound, point)) = accept(&res) else {
                break;
            };
            root_bound = bound;
            if is_integral(&binaries, point) {
                break;
            }
            let point = point.to_vec();
            let mut added = 0;
            for b in
                candidate_branch_sets(&model, &point, cut_cfg.branch_size, cut_cfg.candidate_cap)
            {
                if let Some(cut) = generate_cut(&model, &point, &b, &popts, cut_cfg.violation_tol)
                {
                    cut.add_to(&mut model.program, format!("cut{cuts}"));
                    cuts += 1;
                    added += 1;
                }
            }
            if added == 0 {
                break;
            }
        }
    }

    let mut heap = BinaryHeap::new();
    let mut next_id = 0u64;
    heap.push(Node { bound: root_bound, id: next_id, pins: Vec::new() });
    next_id += 1;

    let mut incumbent: Option<Incumbent> = None;
    let mut nodes = 0usize;
    let mut status = SolveStatus::Optimal;
    let mut final_bound: Option<f64> = None;
    let threads = cfg.threads.max(1);

    loop {
        if let Some(inc) = &incumbent {
            while heap.peek().is_some_and(|n| n.bound >= inc.cost) {
                heap.pop();
            }
        }
        let Some(top_bound) = heap.peek().map(|n| n.bound) else {
            break;
        };
        if let Some(inc) = &incumbent {
            if rel_gap(inc.cost, top_bound) <= cfg.gap_tol {
                final_bound = Some(top_bound);
                break;
            }
        }
        if cfg
            .time_limit
            .is_some_and(|tl| t0.elapsed().as_secs_f64() >= tl)
        {
            status = SolveStatus::TimeLimit;
            final_bound = Some(top_bound);
            break;
        }
        if cfg.node_limit.is_some_and(|nl| nodes >= nl) {
            status = SolveStatus::NodeLimit;
            final_bound = Some(top_bound);
            break;
        }

        let mut batch = Vec::new();
        while batch.len() < threads {
            let Some(node) = heap.pop() else { break };
            if incumbent.as_ref().is_some_and(|inc| node.bound >= inc.cost) {
                continue;
            }
            batch.push(node);
        }

        let results: Vec<Result<SolverResult, StdFormError>> = std::thread::scope(|s| {
            let handles: Vec<_> = batch
                .iter()
                .map(|node| s.spawn(|| solve_program(&model.program, &node.pins, &opts)))
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });

        for (node, res) in batch.into_iter().zip(results) {
            nodes += 1;
            let res = res?;
            if matches!(
                res.status,
                SolverStatus::PrimalInfeasible | SolverStatus::DualInfeasible
            ) {
                continue;
            }
            if let Some((bound, point)) = accept(&res) {
                let bound = bound.max(node.bound);
                if incumbent.as_ref().is_some_and(|inc| bound >= inc.cost) {
                    continue;
                }
                if is_integral(&binaries, point) {
                    if let Some(cand) = extract_incumbent(&model, point) {
                        if incumbent.as_ref().is_none_or(|inc| cand.cost < inc.cost) {
                            incumbent = Some(cand);
                        }
                    }
                    continue;
                }
                let v = branch_var(&binaries, point).expect("fractional point");
                for val in [0.0, 1.0] {
                    let mut pins = node.pins.clone();
                    pins.push((v, val));
                    heap.push(Node { bound, id: next_id, pins });
                    next_id += 1;
                }
            } else {
                // Unresolved solve: subdivide on the first unpinned binary
                // so the children see more structure, or read the design
                // straight off a fully pinned leaf.
                let unpinned = binaries
                    .iter()
                    .find(|v| node.pins.iter().all(|&(p, _)| p != **v));
                if let Some(&v) = unpinned {
                    for val in [0.0, 1.0] {
                        let mut pins = node.pins.clone();
                        pins.push((v, val));
                        heap.push(Node { bound: node.bound, id: next_id, pins });
                        next_id += 1;
                    }
                } else if let Some(cand) = incumbent_from_pins(&model, &node.pins) {
                    if incumbent.as_ref().is_none_or(|inc| cand.cost < inc.cost) {
                        incumbent = Some(cand);
                    }
                }
            }
        }
    }

    if status == SolveStatus::Optimal {
        match &incumbent {
            Some(inc) => {
                if final_bound.is_none() {
                    // Heap exhausted: the incumbent is proven optimal.
                    final_bound = Some(inc.cost);
                }
            }
            None => status = SolveStatus::Infeasible,
        }
    }
    // A node may break the loop before the root ever solved; an infinite
    // bound carries no information (and JSON cannot hold it).
    let final_bound = final_bound.filter(|b| b.is_finite());
    let gap = match (&incumbent, final_bound) {
        (Some(inc), Some(b)) => Some(rel_gap(inc.cost, b)),
        _ => None,
    };
    Ok(SolveReport {
        status,
        objective: incumbent.as_ref().map(|i| i.cost),
        bound: final_bound,
        gap,
        nodes,
        cuts,
        vi_rows,
        wall_seconds: t0.elapsed().as_secs_f64(),
        open: incumbent.as_ref().map(|i| i.open.clone()),
        assignment: incumbent.as_ref().map(|i| i.assignment.clone()),
        rates: incumbent.as_ref().map(|i| i.rates.clone()),
        breakdown: incumbent.as_ref().map(|i| i.breakdown),
    })
}
