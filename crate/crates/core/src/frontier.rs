//! Mean-risk and mean-loss efficient frontiers on scenario trees.
//!
//! The mean-risk problem composes backward: the time-t frontier is the
//! bi-objective solution of a one-step problem whose children are constrained
//! to the scaled time-(t+1) upper image. Scaling by the child wealth is
//! linear (`z_i = w_i y_i`), which turns the set-valued recursion into plain
//! LPs; branches being iid, one frontier per depth suffices. The mean-loss
//! problem of the dynamic gain-to-loss ratio has no such recursion and is
//! solved as one full-tree bi-objective LP.
//!
//! All frontiers live in the (risk, mean) plane, normalized to unit wealth.

use std::io::Write as IoWrite;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bisect::{maximize, BisectionConfig, Variant};
use crate::dynrisk::recursive_risk;
use crate::dynrisk::OneStepRisk;
use crate::lp::{
    solve_biobjective, solve_lp, BiObjectiveLp, LinearProgram, LpStatus, ParetoFrontier, Relation,
};
use crate::market::{nodes_at_depth, DividendStream, NodeAddr, Strategy};
use crate::risk::RiskFamilySpec;
use crate::scenario::TreeModel;

/// Desk-scale cap on the leaves of the full-tree mean-loss LP.
pub const MAX_TREE_LEAVES: usize = 50_000;

#[derive(Debug, Error)]
pub enum FrontierError {
    #[error("tvar level q = {0} outside (0,1]")]
    BadLevel(f64),
    #[error("lp: {0}")]
    Lp(#[from] crate::lp::LpError),
    #[error("market: {0}")]
    Market(#[from] crate::market::MarketError),
    #[error("dynrisk: {0}")]
    DynRisk(#[from] crate::dynrisk::DynRiskError),
    #[error("bisect: {0}")]
    Bisect(#[from] crate::bisect::BisectError),
    #[error("risk: {0}")]
    Risk(#[from] crate::risk::RiskError),
    #[error("frontier is empty")]
    EmptyFrontier,
    #[error("point ({0}, {1}) does not lie on the frontier")]
    NotOnFrontier(f64, f64),
    #[error("scalarization needs positive mean and risk at the point, got ({0}, {1})")]
    NonPositivePoint(f64, f64),
    #[error("tree has {leaves} leaves, above the cap {cap}")]
    TooLarge { leaves: usize, cap: usize },
    #[error("path too short: need depth {need}, got {got}")]
    PathTooShort { need: usize, got: usize },
    #[error("frontier violates {0}")]
    InvalidPolyline(&'static str),
    #[error("probe solve failed with status {0:?}")]
    SolveFailed(LpStatus),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Vertex list of a 2-D polyhedral upper image's efficient boundary in the
/// (risk, mean) plane: risk and mean both strictly increasing, mean concave
/// in risk. `ray_direction` marks an unbounded frontier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPolyline {
    pub vertices: Vec<(f64, f64)>,
    pub ray_direction: Option<(f64, f64)>,
}

impl FrontierPolyline {
    pub fn from_pareto(front: &ParetoFrontier) -> Self {
        // minimize-space (f1, f2) = (-mean, risk) maps to (risk, mean)
        let vertices = front.vertices.iter().map(|&(f1, f2)| (f2, -f1)).collect();
        FrontierPolyline {
            vertices,
            ray_direction: front.ray.map(|(d1, d2)| (d2, -d1)),
        }
    }

    pub fn validate(&self) -> Result<(), FrontierError> {
        if self.vertices.is_empty() {
            return Err(FrontierError::EmptyFrontier);
        }
        for w in self.vertices.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(FrontierError::InvalidPolyline("strictly increasing risk"));
            }
            if w[1].1 <= w[0].1 {
                return Err(FrontierError::InvalidPolyline("strictly increasing mean"));
            }
        }
        for w in self.vertices.windows(3) {
            let s1 = slope(w[0], w[1]);
            let s2 = slope(w[1], w[2]);
            if s2 > s1 + 1e-7 * (1.0 + s1.abs()) {
                return Err(FrontierError::InvalidPolyline("concavity"));
            }
        }
        Ok(())
    }

    /// Halfspace form `a_r * risk + a_m * mean >= b` of the upper image.
    pub fn halfspaces(&self) -> Vec<(f64, f64, f64)> {
        let v = &self.vertices;
        let mut out = Vec::with_capacity(v.len() + 1);
        // risk floor at the first vertex
        out.push((1.0, 0.0, v[0].0));
        for w in v.windows(2) {
            let s = slope(w[0], w[1]);
            // mean <= mean_i + s (risk - risk_i)
            out.push((s, -1.0, s * w[0].0 - w[0].1));
        }
        match self.ray_direction {
            Some((dr, dm)) if dr > 0.0 => {
                let s = dm / dr;
                let last = v[v.len() - 1];
                out.push((s, -1.0, s * last.0 - last.1));
            }
            _ => {
                // mean cap at the last vertex
                let last = v[v.len() - 1];
                out.push((0.0, -1.0, -last.1));
            }
        }
        out
    }

    /// Euclidean distance from a point to the polyline.
    pub fn distance(&self, point: (f64, f64)) -> f64 {
        let mut best = f64::INFINITY;
        for &v in &self.vertices {
            best = best.min(((point.0 - v.0).powi(2) + (point.1 - v.1).powi(2)).sqrt());
        }
        for w in self.vertices.windows(2) {
            best = best.min(segment_distance(w[0], w[1], point));
        }
        if let (Some((dr, dm)), Some(&last)) = (self.ray_direction, self.vertices.last()) {
            let far = (last.0 + 1e6 * dr, last.1 + 1e6 * dm);
            best = best.min(segment_distance(last, far, point));
        }
        best
    }

    /// Margin by which some frontier point strictly dominates `point`
    /// (componentwise lower risk and higher mean); nonpositive when no
    /// frontier point dominates.
    pub fn domination_margin(&self, point: (f64, f64)) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for &v in &self.vertices {
            best = best.max((point.0 - v.0).min(v.1 - point.1));
        }
        best
    }
}

fn slope(a: (f64, f64), b: (f64, f64)) -> f64 {
    (b.1 - a.1) / (b.0 - a.0)
}

fn segment_distance(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// One frontier per decision time `t = 0..T-1`, each per unit wealth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrontierSequence {
    pub frontiers: Vec<FrontierPolyline>,
}

impl FrontierSequence {
    pub fn horizon(&self) -> usize {
        self.frontiers.len()
    }

    /// CSV with columns `t,rho,E,is_max_ratio`; one row per vertex.
    pub fn to_csv<W: IoWrite>(&self, out: W) -> Result<(), FrontierError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "rho", "E", "is_max_ratio"])?;
        for (t, poly) in self.frontiers.iter().enumerate() {
            let star = max_ratio_point_inner(poly);
            for &(rho, mean) in &poly.vertices {
                let is_star = star
                    .map(|(r, m, _)| (r - rho).abs() < 1e-12 && (m - mean).abs() < 1e-12)
                    .unwrap_or(false);
                w.write_record([
                    t.to_string(),
                    rho.to_string(),
                    mean.to_string(),
                    if is_star { "1" } else { "0" }.to_string(),
                ])?;
            }
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// A point on (or against) a time-t frontier with its mean-to-risk ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub time: usize,
    pub node: NodeAddr,
    pub mean: f64,
    pub risk: f64,
    /// `mean+ / risk+` with the a/0 = +inf convention.
    pub ratio: f64,
    /// Moving-scalarization exponent, when defined at the point.
    pub lambda: Option<f64>,
}

fn ratio_of(mean: f64, risk: f64) -> f64 {
    if mean <= 0.0 {
        0.0
    } else if risk <= 0.0 {
        f64::INFINITY
    } else {
        mean / risk
    }
}

// ---------------------------------------------------------------------------
// the one-step and recursion-step LPs
// ---------------------------------------------------------------------------

struct StepLayout {
    d: usize,
    n: usize,
    has_children: bool,
}

impl StepLayout {
    fn h(&self, j: usize) -> usize {
        j
    }
    fn z_rho(&self, b: usize) -> usize {
        debug_assert!(self.has_children);
        self.d + 2 * b
    }
    fn z_mean(&self, b: usize) -> usize {
        debug_assert!(self.has_children);
        self.d + 2 * b + 1
    }
    fn ru_z(&self) -> usize {
        self.d + if self.has_children { 2 * self.n } else { 0 }
    }
    fn ru_u(&self, b: usize) -> usize {
        self.ru_z() + 1 + b
    }
    fn n_vars(&self) -> usize {
        self.ru_z() + 1 + self.n
    }
}

/// Build the time-t step problem: objectives `(-mean, risk)` over one-step
/// allocations plus (when present) scaled child frontier points.
fn step_blp(
    model: &crate::scenario::ScenarioModel,
    q: f64,
    wealth: f64,
    shortselling: bool,
    child_halfspaces: Option<&[(f64, f64, f64)]>,
) -> (BiObjectiveLp, StepLayout) {
    let d = model.n_assets();
    let n = model.n_states();
    let layout = StepLayout {
        d,
        n,
        has_children: child_halfspaces.is_some(),
    };
    let nv = layout.n_vars();
    let mut lp = LinearProgram::new(nv);
    if shortselling {
        for j in 0..d {
            lp.set_free(j);
        }
    }
    if layout.has_children {
        for b in 0..n {
            lp.set_free(layout.z_rho(b));
            lp.set_free(layout.z_mean(b));
        }
    }
    lp.set_free(layout.ru_z());

    // budget
    let mut budget = vec![0.0; nv];
    for j in 0..d {
        budget[layout.h(j)] = 1.0;
    }
    lp.add_row(&budget, Relation::Eq, wealth).unwrap();

    let probs = model.probabilities();
    match child_halfspaces {
        None => {
            // terminal step: RU rows  u_b + z + R_b'h >= wealth
            for b in 0..n {
                let mut row = vec![(layout.ru_z(), 1.0), (layout.ru_u(b), 1.0)];
                for j in 0..d {
                    row.push((layout.h(j), model.ret(j, b)));
                }
                lp.add_row_sparse(&row, Relation::Ge, wealth).unwrap();
            }
        }
        Some(halfspaces) => {
            for b in 0..n {
                // child feasibility: a_r z_rho + a_m z_mean - b_hs w_b >= 0
                for &(a_r, a_m, b_hs) in halfspaces {
                    let mut row = vec![
                        (layout.z_rho(b), a_r),
                        (layout.z_mean(b), a_m),
                    ];
                    for j in 0..d {
                        row.push((layout.h(j), -b_hs * model.ret(j, b)));
                    }
                    lp.add_row_sparse(&row, Relation::Ge, 0.0).unwrap();
                }
                // one-step RU on branch values -(z_rho_b - w_b + wealth):
                // u_b + z - z_rho_b + R_b'h >= wealth
                let mut row = vec![
                    (layout.ru_z(), 1.0),
                    (layout.ru_u(b), 1.0),
                    (layout.z_rho(b), -1.0),
                ];
                for j in 0..d {
                    row.push((layout.h(j), model.ret(j, b)));
                }
                lp.add_row_sparse(&row, Relation::Ge, wealth).unwrap();
                if shortselling {
                    // the wealth scaling of the child image needs w_b >= 0
                    let mut row: Vec<(usize, f64)> = Vec::with_capacity(d);
                    for j in 0..d {
                        row.push((layout.h(j), model.ret(j, b)));
                    }
                    lp.add_row_sparse(&row, Relation::Ge, 0.0).unwrap();
                }
            }
        }
    }

    // objective 1: -E[V_T - wealth] = -(sum_b p_b (z_mean_b + w_b) - wealth)
    let mut f1 = vec![0.0; nv];
    for j in 0..d {
        let mut mean_ret = 0.0;
        for b in 0..n {
            mean_ret += probs[b] * model.ret(j, b);
        }
        f1[layout.h(j)] = -mean_ret;
    }
    if layout.has_children {
        for b in 0..n {
            f1[layout.z_mean(b)] = -probs[b];
        }
    }
    // objective 2: the one-step RU value
    let mut f2 = vec![0.0; nv];
    f2[layout.ru_z()] = 1.0;
    for b in 0..n {
        f2[layout.ru_u(b)] = probs[b] / q;
    }

    let mut blp = BiObjectiveLp::new(lp, f1, f2).unwrap();
    blp.offset1 = wealth;
    (blp, layout)
}

/// Mean-risk efficient frontiers for every decision time, by backward
/// set-valued recursion. `q` is the one-step TVaR level.
pub fn meanrisk_frontiers(
    tree: &TreeModel,
    q: f64,
    shortselling: bool,
) -> Result<FrontierSequence, FrontierError> {
    meanrisk_frontiers_at_wealth(tree, q, shortselling, 1.0)
}

/// Same recursion with the time-t wealth as an explicit parameter; frontiers
/// scale linearly in it.
pub fn meanrisk_frontiers_at_wealth(
    tree: &TreeModel,
    q: f64,
    shortselling: bool,
    wealth: f64,
) -> Result<FrontierSequence, FrontierError> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(FrontierError::BadLevel(q));
    }
    let horizon = tree.horizon();
    let mut rev: Vec<FrontierPolyline> = Vec::with_capacity(horizon);
    // base case: the static one-step frontier
    let (blp, _) = step_blp(tree.step(), q, wealth, shortselling, None);
    let front = solve_biobjective(&blp)?;
    rev.push(FrontierPolyline::from_pareto(&front));
    for _ in 1..horizon {
        let child = rev.last().unwrap();
        child.validate()?;
        let halfspaces = child.halfspaces();
        let (blp, _) = step_blp(tree.step(), q, wealth, shortselling, Some(&halfspaces));
        let front = solve_biobjective(&blp)?;
        rev.push(FrontierPolyline::from_pareto(&front));
    }
    rev.reverse();
    Ok(FrontierSequence { frontiers: rev })
}

fn max_ratio_point_inner(poly: &FrontierPolyline) -> Option<(f64, f64, f64)> {
    let mut best: Option<(f64, f64, f64)> = None;
    for &(rho, mean) in &poly.vertices {
        let r = ratio_of(mean, rho);
        let better = match best {
            None => true,
            Some((brho, _, br)) => r > br * (1.0 + 1e-12) || (r >= br * (1.0 - 1e-12) && rho < brho),
        };
        if better {
            best = Some((rho, mean, r));
        }
    }
    if let Some((dr, dm)) = poly.ray_direction {
        // a ray through increasing mean can dominate every vertex ratio only
        // when it passes over the origin direction; its asymptotic ratio is
        // the slope
        if dr > 0.0 {
            let asym = dm / dr;
            if let Some((_, _, br)) = best {
                if asym > br {
                    if let Some(&(rho, mean)) = poly.vertices.last() {
                        // report the ray foot; the ratio keeps improving along
                        // the ray toward the asymptote
                        best = Some((rho, mean, asym.max(ratio_of(mean, rho))));
                    }
                }
            }
        }
    }
    best
}

/// The frontier point with the highest mean-to-risk ratio.
pub fn max_ratio_point(poly: &FrontierPolyline) -> Result<ProfilePoint, FrontierError> {
    let (rho, mean, ratio) = max_ratio_point_inner(poly).ok_or(FrontierError::EmptyFrontier)?;
    Ok(ProfilePoint {
        time: 0,
        node: NodeAddr::root(),
        mean,
        risk: rho,
        ratio,
        lambda: None,
    })
}

// ---------------------------------------------------------------------------
// mean-loss frontier of the dynamic gain-to-loss ratio
// ---------------------------------------------------------------------------

struct TreeLpLayout {
    d: usize,
    internal: Vec<NodeAddr>,
    leaves: Vec<NodeAddr>,
    node_index: std::collections::BTreeMap<NodeAddr, usize>,
}

impl TreeLpLayout {
    fn new(tree: &TreeModel) -> Self {
        let mut internal = Vec::new();
        for t in 0..tree.horizon() {
            internal.extend(nodes_at_depth(tree, t));
        }
        let leaves = nodes_at_depth(tree, tree.horizon());
        let node_index = internal
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        TreeLpLayout {
            d: tree.step().n_assets(),
            internal,
            leaves,
            node_index,
        }
    }

    fn h(&self, node: &NodeAddr, j: usize) -> usize {
        self.node_index[node] * self.d + j
    }

    fn m(&self, leaf_idx: usize) -> usize {
        self.internal.len() * self.d + leaf_idx
    }

    fn n_vars(&self) -> usize {
        self.internal.len() * self.d + self.leaves.len()
    }
}

/// Self-financing rows plus leaf shortfall rows `m_l + V_l >= v0` shared by
/// both mean-loss solves. Allocations are free monetary amounts
/// (shortselling allowed, as in the dynamic gain-to-loss setup).
fn meanloss_base_lp(tree: &TreeModel, v0: f64, layout: &TreeLpLayout) -> LinearProgram {
    let step = tree.step();
    let mut lp = LinearProgram::new(layout.n_vars());
    for node in &layout.internal {
        for j in 0..layout.d {
            lp.set_free(layout.h(node, j));
        }
    }
    // root budget
    let root_row: Vec<(usize, f64)> = (0..layout.d)
        .map(|j| (layout.h(&NodeAddr::root(), j), 1.0))
        .collect();
    lp.add_row_sparse(&root_row, Relation::Eq, v0).unwrap();
    // internal link rows: 1'h_node = R_b' h_parent
    for node in &layout.internal {
        if let Some(parent) = node.parent() {
            let b = node.last_branch().unwrap() as usize;
            let mut row: Vec<(usize, f64)> = (0..layout.d)
                .map(|j| (layout.h(node, j), 1.0))
                .collect();
            for j in 0..layout.d {
                row.push((layout.h(&parent, j), -step.ret(j, b)));
            }
            lp.add_row_sparse(&row, Relation::Eq, 0.0).unwrap();
        }
    }
    // leaf shortfall rows: m_l + R_b' h_parent >= v0
    for (l, leaf) in layout.leaves.iter().enumerate() {
        let parent = leaf.parent().unwrap();
        let b = leaf.last_branch().unwrap() as usize;
        let mut row = vec![(layout.m(l), 1.0)];
        for j in 0..layout.d {
            row.push((layout.h(&parent, j), step.ret(j, b)));
        }
        lp.add_row_sparse(&row, Relation::Ge, v0).unwrap();
    }
    lp
}

fn leaf_probabilities(tree: &TreeModel, layout: &TreeLpLayout) -> Vec<f64> {
    layout
        .leaves
        .iter()
        .map(|leaf| crate::market::path_probability(tree, leaf))
        .collect()
}

fn terminal_mean_coeffs(tree: &TreeModel, layout: &TreeLpLayout, probs: &[f64]) -> Vec<f64> {
    // E[V_T] = sum_l P_l R_b' h_parent(l)
    let step = tree.step();
    let mut coeffs = vec![0.0; layout.n_vars()];
    for (l, leaf) in layout.leaves.iter().enumerate() {
        let parent = leaf.parent().unwrap();
        let b = leaf.last_branch().unwrap() as usize;
        for j in 0..layout.d {
            coeffs[layout.h(&parent, j)] += probs[l] * step.ret(j, b);
        }
    }
    coeffs
}

/// Solution of the mean-loss tree problem: the frontier plus the allocations
/// realizing its best-ratio element.
#[derive(Debug, Clone)]
pub struct MeanLossSolution {
    pub frontier: FrontierPolyline,
    /// dGLR_0: the highest mean-to-loss ratio on the frontier (the ray slope
    /// when v0 = 0).
    pub best_ratio: f64,
    /// Allocations attaining the best ratio.
    pub strategy: Strategy,
}

/// Full-tree bi-objective mean-loss solve for the dynamic gain-to-loss
/// ratio: objectives `(-E[V_T - v0], E[(V_T - v0)-])` over self-financing
/// allocation trees.
///
/// For `v0 = 0` the zero-cost strategies scale freely, the frontier is a ray
/// through the origin and its slope is extracted by the single LP
/// `max E[V_T]` subject to `E[V_T-] <= 1`.
pub fn meanloss_frontier_dglr(tree: &TreeModel, v0: f64) -> Result<MeanLossSolution, FrontierError> {
    let leaves = tree.nodes_at(tree.horizon());
    if leaves > MAX_TREE_LEAVES {
        return Err(FrontierError::TooLarge {
            leaves,
            cap: MAX_TREE_LEAVES,
        });
    }
    let layout = TreeLpLayout::new(tree);
    let probs = leaf_probabilities(tree, &layout);
    let mean_coeffs = terminal_mean_coeffs(tree, &layout, &probs);

    if v0 == 0.0 {
        // ray slope: max E[V_T] s.t. E[V_T-] <= 1
        let mut lp = meanloss_base_lp(tree, 0.0, &layout);
        let mut budget: Vec<(usize, f64)> = Vec::with_capacity(layout.leaves.len());
        for l in 0..layout.leaves.len() {
            budget.push((layout.m(l), probs[l]));
        }
        lp.add_row_sparse(&budget, Relation::Le, 1.0).unwrap();
        let obj: Vec<f64> = mean_coeffs.iter().map(|c| -c).collect();
        lp.set_objective(&obj).unwrap();
        let sol = solve_lp(&lp)?;
        if sol.status != LpStatus::Optimal {
            return Err(FrontierError::SolveFailed(sol.status));
        }
        let slope = -sol.value;
        let strategy = extract_strategy(&layout, &sol.point);
        let frontier = FrontierPolyline {
            vertices: vec![(0.0, 0.0)],
            ray_direction: Some((1.0, slope)),
        };
        return Ok(MeanLossSolution {
            frontier,
            best_ratio: slope.max(0.0),
            strategy,
        });
    }

    let lp = meanloss_base_lp(tree, v0, &layout);
    let f1: Vec<f64> = mean_coeffs.iter().map(|c| -c).collect();
    let mut f2 = vec![0.0; layout.n_vars()];
    for l in 0..layout.leaves.len() {
        f2[layout.m(l)] = probs[l];
    }
    let mut blp = BiObjectiveLp::new(lp, f1, f2).unwrap();
    blp.offset1 = v0; // -E[V_T - v0]
    let front = solve_biobjective(&blp)?;
    let frontier = FrontierPolyline::from_pareto(&front);
    let star = max_ratio_point_inner(&frontier).ok_or(FrontierError::EmptyFrontier)?;
    // recover the strategy at the best-ratio vertex
    let best_idx = front
        .vertices
        .iter()
        .position(|&(f1v, f2v)| {
            (f2v - star.0).abs() < 1e-9 * (1.0 + star.0.abs())
                && (-f1v - star.1).abs() < 1e-9 * (1.0 + star.1.abs())
        })
        .unwrap_or(0);
    let strategy = extract_strategy(&layout, &front.points[best_idx]);
    Ok(MeanLossSolution {
        frontier,
        best_ratio: star.2,
        strategy,
    })
}

fn extract_strategy(layout: &TreeLpLayout, point: &[f64]) -> Strategy {
    let mut strat = Strategy::new();
    for node in &layout.internal {
        let alloc: Vec<f64> = (0..layout.d).map(|j| point[layout.h(node, j)]).collect();
        strat.set(node.clone(), alloc);
    }
    strat
}

// ---------------------------------------------------------------------------
// moving scalarization
// ---------------------------------------------------------------------------

/// The scalarization exponent at a frontier point, with the subgradient
/// interval at vertices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MovingScalarization {
    pub lambda: f64,
    pub interval: (f64, f64),
}

/// Exponent lambda making the point the maximizer of `mean^lambda / risk`
/// over the frontier: first-order balance `lambda * slope * risk = mean`.
/// At a vertex the admissible slopes form an interval; the midpoint of the
/// lambda interval is returned together with the interval itself.
pub fn moving_scalarization(
    poly: &FrontierPolyline,
    point: (f64, f64),
) -> Result<MovingScalarization, FrontierError> {
    let (rho, mean) = point;
    if !(mean > 0.0 && rho > 0.0) {
        return Err(FrontierError::NonPositivePoint(rho, mean));
    }
    let tol = 1e-7 * (1.0 + rho.abs().max(mean.abs()));
    // vertex?
    for (k, &v) in poly.vertices.iter().enumerate() {
        if (v.0 - rho).abs() <= tol && (v.1 - mean).abs() <= tol {
            let left = if k > 0 {
                Some(slope(poly.vertices[k - 1], v))
            } else {
                None
            };
            let right = if k + 1 < poly.vertices.len() {
                Some(slope(v, poly.vertices[k + 1]))
            } else {
                poly.ray_direction.map(|(dr, dm)| dm / dr)
            };
            let lam = |s: f64| mean / (s * rho);
            return match (left, right) {
                (Some(sl), Some(sr)) => Ok(MovingScalarization {
                    lambda: 0.5 * (lam(sl) + lam(sr)),
                    interval: (lam(sl), lam(sr)),
                }),
                (Some(sl), None) => Ok(MovingScalarization {
                    lambda: lam(sl),
                    interval: (lam(sl), lam(sl)),
                }),
                (None, Some(sr)) => Ok(MovingScalarization {
                    lambda: lam(sr),
                    interval: (lam(sr), lam(sr)),
                }),
                (None, None) => Err(FrontierError::NotOnFrontier(rho, mean)),
            };
        }
    }
    // interior of an edge?
    for w in poly.vertices.windows(2) {
        if segment_distance(w[0], w[1], point) <= tol {
            let s = slope(w[0], w[1]);
            let l = mean / (s * rho);
            return Ok(MovingScalarization {
                lambda: l,
                interval: (l, l),
            });
        }
    }
    if let (Some((dr, dm)), Some(&last)) = (poly.ray_direction, poly.vertices.last()) {
        let far = (last.0 + 1e6 * dr, last.1 + 1e6 * dm);
        if segment_distance(last, far, point) <= tol {
            let s = dm / dr;
            let l = mean / (s * rho);
            return Ok(MovingScalarization {
                lambda: l,
                interval: (l, l),
            });
        }
    }
    Err(FrontierError::NotOnFrontier(rho, mean))
}

// ---------------------------------------------------------------------------
// policy simulation along a path
// ---------------------------------------------------------------------------

/// Mean-risk profiles of the three behaviors at one time along the path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyProfiles {
    pub time: usize,
    pub node: NodeAddr,
    /// The time-0 optimal strategy followed consistently.
    pub consistent: ProfilePoint,
    /// Re-optimizing to each frontier's best ratio and discarding.
    pub switching: ProfilePoint,
    /// One-period-lookahead maximization each period.
    pub myopic: ProfilePoint,
}

struct StepSolve {
    weights: Vec<f64>,
    child_points: Vec<(f64, f64)>,
}

/// Solve the time-t step problem pinned to a frontier point: minimize risk
/// at the target mean, then push the mean back up at the optimal risk so
/// that child decompositions land on efficient points.
fn solve_on_frontier(
    tree: &TreeModel,
    q: f64,
    shortselling: bool,
    t: usize,
    frontiers: &FrontierSequence,
    target: (f64, f64),
) -> Result<StepSolve, FrontierError> {
    let horizon = frontiers.horizon();
    let halfspaces = if t + 1 < horizon {
        Some(frontiers.frontiers[t + 1].halfspaces())
    } else {
        None
    };
    let (blp, layout) = step_blp(tree.step(), q, 1.0, shortselling, halfspaces.as_deref());
    let (_, mean_target) = target;

    // stage 1: min risk subject to mean >= target
    let mut lp1 = blp.base.clone();
    lp1.set_objective(&blp.objective2).unwrap();
    // mean row: -f1 >= mean_target  <=>  f1 <= -mean_target
    let mean_row: Vec<f64> = blp.objective1.iter().map(|c| -c).collect();
    lp1.add_row(&mean_row, Relation::Ge, mean_target - blp.offset1 - 1e-9)
        .unwrap();
    let s1 = solve_lp(&lp1)?;
    if s1.status != LpStatus::Optimal {
        return Err(FrontierError::SolveFailed(s1.status));
    }
    // stage 2: max mean subject to risk <= optimal risk
    let mut lp2 = blp.base.clone();
    lp2.set_objective(&blp.objective1).unwrap();
    lp2.set_offset(blp.offset1);
    lp2.add_row(&blp.objective2, Relation::Le, s1.value + 1e-9 * (1.0 + s1.value.abs()))
        .unwrap();
    let s2 = solve_lp(&lp2)?;
    if s2.status != LpStatus::Optimal {
        return Err(FrontierError::SolveFailed(s2.status));
    }
    let point = &s2.point;
    let weights: Vec<f64> = (0..layout.d).map(|j| point[layout.h(j)]).collect();
    let child_points = if layout.has_children {
        (0..layout.n)
            .map(|b| {
                let w_b: f64 = (0..layout.d)
                    .map(|j| weights[j] * tree.step().ret(j, b))
                    .sum();
                (
                    point[layout.z_rho(b)] / w_b,
                    point[layout.z_mean(b)] / w_b,
                )
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(StepSolve {
        weights,
        child_points,
    })
}

/// Normalized mean and recursive-TVaR risk of a time-varying proportional
/// strategy, evaluated by brute-force enumeration of its subtree.
fn proportional_profile(
    tree: &TreeModel,
    weights_by_time: &[Vec<f64>],
    q: f64,
) -> Result<(f64, f64), FrontierError> {
    let horizon = weights_by_time.len();
    let sub = TreeModel::new(horizon, tree.step().clone()).expect("horizon >= 1");
    let mut strat = Strategy::new();
    let mut wealth: std::collections::BTreeMap<NodeAddr, f64> = Default::default();
    wealth.insert(NodeAddr::root(), 1.0);
    for (s, w) in weights_by_time.iter().enumerate() {
        for node in nodes_at_depth(&sub, s) {
            let v = wealth[&node];
            strat.set(node.clone(), w.iter().map(|x| x * v).collect());
            for b in 0..sub.step().n_states() {
                let mut vc = 0.0;
                for (j, &x) in w.iter().enumerate() {
                    vc += x * v * sub.step().ret(j, b);
                }
                wealth.insert(node.child(b as u16), vc);
            }
        }
    }
    let process = crate::market::wealth_of(&sub, &strat, 1.0, true)?;
    let stream = DividendStream::from_wealth(&sub, &process);
    let mut mean = 0.0;
    for leaf in nodes_at_depth(&sub, horizon) {
        mean += crate::market::path_probability(&sub, &leaf) * process.values[&leaf];
    }
    mean -= 1.0;
    let step = OneStepRisk::Tvar { q };
    let vals = recursive_risk(&sub, &stream.tail(&sub, 1)?, &step)?;
    Ok((mean, vals.values[&NodeAddr::root()]))
}

/// Mean-risk profiles of the consistent, switching and myopic behaviors at
/// every decision time along a root-to-depth-(T-1) path.
pub fn simulate_policies(
    tree: &TreeModel,
    frontiers: &FrontierSequence,
    path: &[u16],
    q: f64,
) -> Result<Vec<PolicyProfiles>, FrontierError> {
    let horizon = frontiers.horizon();
    if path.len() + 1 < horizon {
        return Err(FrontierError::PathTooShort {
            need: horizon - 1,
            got: path.len(),
        });
    }
    // switching targets: the best-ratio point of every frontier
    let mut switch_weights: Vec<Vec<f64>> = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let star = max_ratio_point(&frontiers.frontiers[t])?;
        let sol = solve_on_frontier(tree, q, false, t, frontiers, (star.risk, star.mean))?;
        switch_weights.push(sol.weights);
    }
    // myopic weights: the one-period RAROC maximizer, identical each period
    let cfg = BisectionConfig::new(1.0, 40, 1e-6, Variant::Original);
    let trace = maximize(&RiskFamilySpec::raroc_family(q), tree.step(), false, &cfg)?;
    let myopic_w = trace
        .epsilon_solution
        .clone()
        .ok_or(FrontierError::EmptyFrontier)?;

    let mut out = Vec::with_capacity(horizon);
    let star0 = max_ratio_point(&frontiers.frontiers[0])?;
    let mut target = (star0.risk, star0.mean);
    for t in 0..horizon {
        let node = NodeAddr::from_path(&path[..t]);
        let lambda = moving_scalarization(&frontiers.frontiers[t], target)
            .ok()
            .map(|m| m.lambda);
        let consistent = ProfilePoint {
            time: t,
            node: node.clone(),
            mean: target.1,
            risk: target.0,
            ratio: ratio_of(target.1, target.0),
            lambda,
        };
        let (sm, sr) = proportional_profile(tree, &switch_weights[t..horizon], q)?;
        let switching = ProfilePoint {
            time: t,
            node: node.clone(),
            mean: sm,
            risk: sr,
            ratio: ratio_of(sm, sr),
            lambda: None,
        };
        let myo_seq: Vec<Vec<f64>> = (t..horizon).map(|_| myopic_w.clone()).collect();
        let (mm, mr) = proportional_profile(tree, &myo_seq, q)?;
        let myopic = ProfilePoint {
            time: t,
            node: node.clone(),
            mean: mm,
            risk: mr,
            ratio: ratio_of(mm, mr),
            lambda: None,
        };
        out.push(PolicyProfiles {
            time: t,
            node,
            consistent,
            switching,
            myopic,
        });
        // walk the consistent strategy one step down the path
        if t + 1 < horizon {
            let sol = solve_on_frontier(tree, q, false, t, frontiers, target)?;
            target = sol.child_points[path[t] as usize];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioModel;

    fn toy_tree(horizon: usize) -> TreeModel {
        TreeModel::new(horizon, ScenarioModel::toy()).unwrap()
    }

    #[test]
    fn one_period_frontier_is_the_static_mean_tvar_frontier() {
        let tree = toy_tree(1);
        let seq = meanrisk_frontiers(&tree, 0.01, false).unwrap();
        assert_eq!(seq.horizon(), 1);
        let poly = &seq.frontiers[0];
        poly.validate().unwrap();
        // best ratio matches the static RAROC optimum
        let star = max_ratio_point(poly).unwrap();
        assert!((star.ratio - 0.805 / 0.98).abs() < 1e-6, "{}", star.ratio);
        // the deep-tail risk at the best vertex is the worst-case loss of the
        // raroc-optimal portfolio
        assert!((star.risk - 0.245 / 16.0).abs() < 1e-6);
    }

    #[test]
    fn frontier_polyline_invariants_hold_at_every_time() {
        let tree = toy_tree(4);
        let seq = meanrisk_frontiers(&tree, 0.01, false).unwrap();
        assert_eq!(seq.horizon(), 4);
        for poly in &seq.frontiers {
            poly.validate().unwrap();
        }
        // the last frontier is the static one
        let static_seq = meanrisk_frontiers(&toy_tree(1), 0.01, false).unwrap();
        let a = &seq.frontiers[3];
        let b = &static_seq.frontiers[0];
        assert_eq!(a.vertices.len(), b.vertices.len());
        for (va, vb) in a.vertices.iter().zip(&b.vertices) {
            assert!((va.0 - vb.0).abs() < 1e-9);
            assert!((va.1 - vb.1).abs() < 1e-9);
        }
    }

    #[test]
    fn frontiers_scale_linearly_in_wealth() {
        let tree = toy_tree(2);
        let base = meanrisk_frontiers_at_wealth(&tree, 0.01, false, 1.0).unwrap();
        let twice = meanrisk_frontiers_at_wealth(&tree, 0.01, false, 2.0).unwrap();
        for (a, b) in base.frontiers.iter().zip(&twice.frontiers) {
            assert_eq!(a.vertices.len(), b.vertices.len());
            for (va, vb) in a.vertices.iter().zip(&b.vertices) {
                assert!((2.0 * va.0 - vb.0).abs() < 1e-7, "{va:?} {vb:?}");
                assert!((2.0 * va.1 - vb.1).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn degenerate_single_branch_tree_gives_single_points() {
        let step = ScenarioModel::new(vec![1.0], vec![vec![1.02], vec![1.01]]).unwrap();
        let tree = TreeModel::new(3, step).unwrap();
        let seq = meanrisk_frontiers(&tree, 0.5, false).unwrap();
        for poly in &seq.frontiers {
            assert_eq!(poly.vertices.len(), 1);
        }
        // deterministic best asset compounding: mean = 1.02^k - 1
        let f0 = &seq.frontiers[0];
        assert!((f0.vertices[0].1 - (1.02f64.powi(3) - 1.0)).abs() < 1e-9);
    }

    #[test]
    fn max_ratio_point_picks_the_right_vertex() {
        let poly = FrontierPolyline {
            vertices: vec![(1.0, 1.0), (2.0, 3.0), (4.0, 5.0)],
            ray_direction: None,
        };
        let p = max_ratio_point(&poly).unwrap();
        assert_eq!((p.risk, p.mean), (2.0, 3.0));
        assert!((p.ratio - 1.5).abs() < 1e-12);
        // nonpositive risk with positive mean: infinite ratio
        let poly = FrontierPolyline {
            vertices: vec![(-0.5, 0.5), (1.0, 1.0)],
            ray_direction: None,
        };
        let p = max_ratio_point(&poly).unwrap();
        assert!(p.ratio.is_infinite());
    }

    #[test]
    fn moving_scalarization_examples() {
        // locally linear with slope s at a point where mean = s * risk
        let poly = FrontierPolyline {
            vertices: vec![(0.5, 1.0), (1.5, 3.0)],
            ray_direction: None,
        };
        let m = moving_scalarization(&poly, (1.0, 2.0)).unwrap();
        assert!((m.lambda - 1.0).abs() < 1e-9, "{}", m.lambda);
        // right endpoint vertex with facet slope 2
        let poly = FrontierPolyline {
            vertices: vec![(1.0, 1.0), (2.0, 3.0)],
            ray_direction: None,
        };
        let m = moving_scalarization(&poly, (2.0, 3.0)).unwrap();
        assert!((m.lambda - 0.75).abs() < 1e-12);
        assert_eq!(m.interval, (0.75, 0.75));
        // interior of an edge with slope s: lambda = mean / (s * risk)
        let s = 2.0;
        let m = moving_scalarization(&poly, (1.5, 2.0)).unwrap();
        assert!((m.lambda - 2.0 / (s * 1.5)).abs() < 1e-9);
        // off-frontier and nonpositive points are rejected
        assert!(moving_scalarization(&poly, (1.5, 2.5)).is_err());
        assert!(moving_scalarization(&poly, (0.0, 1.0)).is_err());
    }

    #[test]
    fn meanloss_t1_reduction_recovers_the_static_ratio() {
        let tree = toy_tree(1);
        let sol = meanloss_frontier_dglr(&tree, 1.0).unwrap();
        sol.frontier.validate().unwrap();
        assert!(
            (sol.best_ratio - 22.0 / 7.0).abs() < 1e-6,
            "{}",
            sol.best_ratio
        );
    }

    #[test]
    fn meanloss_zero_wealth_is_a_ray_with_scalable_strategy() {
        let tree = toy_tree(2);
        let sol = meanloss_frontier_dglr(&tree, 0.0).unwrap();
        assert!(sol.frontier.ray_direction.is_some());
        assert_eq!(sol.frontier.vertices, vec![(0.0, 0.0)]);
        assert!(sol.best_ratio > 0.0);
        // ray membership: doubling the loss budget doubles the mean
        let layout = TreeLpLayout::new(&tree);
        let probs = leaf_probabilities(&tree, &layout);
        let mean_coeffs = terminal_mean_coeffs(&tree, &layout, &probs);
        let mut lp = meanloss_base_lp(&tree, 0.0, &layout);
        let budget: Vec<(usize, f64)> = (0..layout.leaves.len())
            .map(|l| (layout.m(l), probs[l]))
            .collect();
        lp.add_row_sparse(&budget, Relation::Le, 2.0).unwrap();
        let obj: Vec<f64> = mean_coeffs.iter().map(|c| -c).collect();
        lp.set_objective(&obj).unwrap();
        let sol2 = solve_lp(&lp).unwrap();
        assert!((-sol2.value - 2.0 * sol.best_ratio).abs() < 1e-8);
    }

    #[test]
    fn meanloss_arbitrage_free_single_asset_collapses_to_a_point() {
        // one risky asset with both up and down moves: no zero-cost profit
        let step = ScenarioModel::new(vec![0.5, 0.5], vec![vec![1.1, 0.95]]).unwrap();
        let tree = TreeModel::new(2, step).unwrap();
        let sol = meanloss_frontier_dglr(&tree, 0.0).unwrap();
        // only the zero strategy: ray slope 0
        assert!(sol.best_ratio.abs() < 1e-9, "{}", sol.best_ratio);
    }

    #[test]
    fn meanloss_respects_the_size_cap() {
        let tree = TreeModel::new(9, ScenarioModel::toy()).unwrap();
        assert!(matches!(
            meanloss_frontier_dglr(&tree, 0.0),
            Err(FrontierError::TooLarge { .. })
        ));
    }

    #[test]
    fn simulated_consistent_profiles_stay_on_the_frontiers() {
        let tree = toy_tree(2);
        let seq = meanrisk_frontiers(&tree, 0.01, false).unwrap();
        let profiles = simulate_policies(&tree, &seq, &[0, 0], 0.01).unwrap();
        assert_eq!(profiles.len(), 2);
        for p in &profiles {
            let d = seq.frontiers[p.time].distance((p.consistent.risk, p.consistent.mean));
            assert!(d < 1e-7, "time {}: distance {d}", p.time);
        }
        // at T-1 a single period remains: myopic equals the max-ratio point
        let last = &profiles[1];
        let star = max_ratio_point(&seq.frontiers[1]).unwrap();
        assert!((last.myopic.ratio - star.ratio).abs() < 1e-5);
    }

    #[test]
    fn frontier_csv_has_header_and_marks() {
        let tree = toy_tree(2);
        let seq = meanrisk_frontiers(&tree, 0.01, false).unwrap();
        let mut buf = Vec::new();
        seq.to_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,rho,E,is_max_ratio"));
        assert!(text.contains(",1"));
    }

    #[test]
    fn domination_margin_detects_interior_points() {
        let poly = FrontierPolyline {
            vertices: vec![(1.0, 1.0), (2.0, 3.0)],
            ray_direction: None,
        };
        // (2.5, 2.0) sits right of and below the vertex (2, 3)
        assert!(poly.domination_margin((2.5, 2.0)) > 0.0);
        // frontier points themselves are not strictly dominated
        assert!(poly.domination_margin((1.0, 1.0)) <= 1e-12);
    }
}
