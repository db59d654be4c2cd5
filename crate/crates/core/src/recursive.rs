//! Verification harness for the constant-maximal-acceptability property of
//! recursive risk-measure families, plus the constructor for the optimal
//! constant-proportion strategy.
//!
//! The family here is the recursively composed one-step TVaR indexed by
//! `q = 1/(1+x)`. For a node at time `t` the level-`x` risk minimization
//! nests one LP per subtree node: child continuation risks enter the parent's
//! one-step problem through the linear wealth scaling, so the whole
//! minimization collapses to a backward sweep of small LPs. Acceptability at
//! the node is then bisected on `x` exactly as in the static case.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bisect::{maximize, BisectionConfig, RangeStatus, Variant};
use crate::dynrisk::{recursive_risk, OneStepRisk};
use crate::lp::{solve_lp, LinearProgram, LpStatus, Relation};
use crate::market::{nodes_at_depth, DividendStream, NodeAddr, Strategy};
use crate::risk::RiskFamilySpec;
use crate::scenario::{ScenarioModel, TreeModel};

#[derive(Debug, Error)]
pub enum RecursiveError {
    #[error("bisect: {0}")]
    Bisect(#[from] crate::bisect::BisectError),
    #[error("lp: {0}")]
    Lp(#[from] crate::lp::LpError),
    #[error("dynrisk: {0}")]
    DynRisk(#[from] crate::dynrisk::DynRiskError),
    #[error("market: {0}")]
    Market(#[from] crate::market::MarketError),
    #[error("node {0} outside the tree")]
    BadNode(NodeAddr),
    #[error("risk minimization failed at level {level}: {status:?}")]
    ProbeFailed { level: f64, status: LpStatus },
    #[error("horizon {horizon} exceeds the desk-scale cap {cap}")]
    DepthCap { horizon: usize, cap: usize },
}

/// The recursive index family: one-step TVaR at `q = 1/(1+x)`, composed
/// backward depth by depth.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct RecursiveIndexSpec;

impl RecursiveIndexSpec {
    pub fn one_step(&self, x: f64) -> OneStepRisk {
        OneStepRisk::Tvar { q: 1.0 / (1.0 + x) }
    }
}

/// A tree with an explicit one-step model at every non-terminal node; equal
/// to the iid tree it is built from until a node is perturbed.
#[derive(Debug, Clone)]
pub struct NodeTree {
    horizon: usize,
    base: ScenarioModel,
    overrides: BTreeMap<NodeAddr, ScenarioModel>,
}

impl NodeTree {
    pub fn from_iid(tree: &TreeModel) -> Self {
        NodeTree {
            horizon: tree.horizon(),
            base: tree.step().clone(),
            overrides: BTreeMap::new(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn step_at(&self, node: &NodeAddr) -> &ScenarioModel {
        self.overrides.get(node).unwrap_or(&self.base)
    }

    pub fn n_branches(&self) -> usize {
        self.base.n_states()
    }

    /// Corrupt the iid structure: scale one branch return of one node's
    /// one-step model. Used as the negative control.
    pub fn perturb(&mut self, node: &NodeAddr, asset: usize, branch: usize, factor: f64) {
        let mut step = self.step_at(node).clone();
        let mut returns: Vec<Vec<f64>> = (0..step.n_assets())
            .map(|j| step.asset_returns(j).to_vec())
            .collect();
        returns[asset][branch] *= factor;
        step = ScenarioModel::new(step.probabilities().to_vec(), returns)
            .expect("perturbed model stays valid");
        self.overrides.insert(node.clone(), step);
    }
}

/// Minimal recursive risk per unit wealth from `node` at level `x`:
/// a backward sweep where each node solves
/// `min_h TVaR_q( w_b (1 - kappa_child_b) - 1 )` over the unit simplex,
/// with `w_b = R_b' h` the child wealth.
fn normalized_min_risk(
    spec: &RecursiveIndexSpec,
    tree: &NodeTree,
    node: &NodeAddr,
    x: f64,
) -> Result<f64, RecursiveError> {
    let q = match spec.one_step(x) {
        OneStepRisk::Tvar { q } => q,
        OneStepRisk::ExpectationOfLoss => unreachable!(),
    };
    kappa(tree, node, q)
}

fn kappa(tree: &NodeTree, node: &NodeAddr, q: f64) -> Result<f64, RecursiveError> {
    if node.depth() >= tree.horizon() {
        return Err(RecursiveError::BadNode(node.clone()));
    }
    let step = tree.step_at(node);
    let n = step.n_states();
    let d = step.n_assets();
    let mut child_kappa = vec![0.0; n];
    if node.depth() + 1 < tree.horizon() {
        for (b, ck) in child_kappa.iter_mut().enumerate() {
            *ck = kappa(tree, &node.child(b as u16), q)?;
        }
    }
    // variables: h (d, >= 0), z (free), u (n, >= 0)
    let mut lp = LinearProgram::new(d + 1 + n);
    lp.set_free(d);
    let mut obj = vec![0.0; d + 1 + n];
    obj[d] = 1.0;
    for b in 0..n {
        obj[d + 1 + b] = step.probabilities()[b] / q;
    }
    lp.set_objective(&obj).unwrap();
    let mut budget = vec![0.0; d + 1 + n];
    for b in budget.iter_mut().take(d) {
        *b = 1.0;
    }
    lp.add_row(&budget, Relation::Eq, 1.0).unwrap();
    // u_b >= 1 - (1 - kappa_b) w_b - z
    for b in 0..n {
        let scale = 1.0 - child_kappa[b];
        let mut row = vec![(d, 1.0), (d + 1 + b, 1.0)];
        for j in 0..d {
            row.push((j, scale * step.ret(j, b)));
        }
        lp.add_row_sparse(&row, Relation::Ge, 1.0).unwrap();
    }
    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(RecursiveError::ProbeFailed {
            level: 1.0 / q - 1.0,
            status: sol.status,
        });
    }
    Ok(sol.value)
}

/// Bracket of the maximal acceptability at a node, found by halving/doubling
/// then bisection on the level. The probe classifies the unit-wealth minimal
/// risk; wealth enters only as an exact positive scaling (the feasible set
/// scales linearly and the index is scale invariant), so brackets are
/// wealth-independent by construction.
fn node_alpha_bracket(
    spec: &RecursiveIndexSpec,
    tree: &NodeTree,
    node: &NodeAddr,
    tolerance: f64,
) -> Result<(f64, f64, RangeStatus), RecursiveError> {
    const MAX_STEP1: usize = 60;
    let positive = |x: f64| -> Result<bool, RecursiveError> {
        Ok(normalized_min_risk(spec, tree, node, x)? > 1e-9)
    };
    let mut lower = 0.0f64;
    let mut upper = f64::INFINITY;
    let mut x = 1.0f64;
    let mut n = 0;
    while (lower == 0.0 || upper == f64::INFINITY) && n < MAX_STEP1 {
        if positive(x)? {
            upper = x;
            x /= 2.0;
        } else {
            lower = x;
            x *= 2.0;
        }
        n += 1;
    }
    if lower == 0.0 {
        return Ok((0.0, upper, RangeStatus::BelowLowerRange));
    }
    if upper == f64::INFINITY {
        return Ok((lower, upper, RangeStatus::AboveUpperRange));
    }
    while upper - lower >= tolerance {
        let mid = 0.5 * (lower + upper);
        if positive(mid)? {
            upper = mid;
        } else {
            lower = mid;
        }
    }
    Ok((lower, upper, RangeStatus::Bracketed))
}

/// Result of the one-period maximization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OnePeriodMax {
    pub alpha_star: f64,
    pub weights: Option<Vec<f64>>,
    pub status: RangeStatus,
}

/// Solve the one-period acceptability maximization for the recursive-TVaR
/// family: this is exactly the static tail-index problem on the step model.
pub fn one_period_max(
    _spec: &RecursiveIndexSpec,
    step: &ScenarioModel,
    shortselling: bool,
    tolerance: f64,
) -> Result<OnePeriodMax, RecursiveError> {
    let cfg = BisectionConfig::new(1.0, 40, tolerance, Variant::Original);
    let trace = maximize(&RiskFamilySpec::tvar_family(), step, shortselling, &cfg)?;
    let alpha_star = match trace.status {
        RangeStatus::Bracketed => trace.midpoint(),
        RangeStatus::AboveUpperRange => f64::INFINITY,
        RangeStatus::BelowLowerRange => 0.0,
    };
    Ok(OnePeriodMax {
        alpha_star,
        weights: trace.epsilon_solution,
        status: trace.status,
    })
}

/// The optimal strategy of the recursive case: allocate `V_node * h_star`
/// at every node; self-financing holds by construction.
pub fn build_constant_proportion_strategy(
    tree: &TreeModel,
    h_star: &[f64],
    v0: f64,
) -> Strategy {
    let mut strat = Strategy::new();
    let mut wealth: BTreeMap<NodeAddr, f64> = BTreeMap::new();
    wealth.insert(NodeAddr::root(), v0);
    for t in 0..tree.horizon() {
        for node in nodes_at_depth(tree, t) {
            let v = wealth[&node];
            strat.set(node.clone(), h_star.iter().map(|w| w * v).collect());
            for b in 0..tree.step().n_states() {
                let mut vc = 0.0;
                for (j, &w) in h_star.iter().enumerate() {
                    vc += w * v * tree.step().ret(j, b);
                }
                wealth.insert(node.child(b as u16), vc);
            }
        }
    }
    strat
}

/// Per-node bracket in the constancy report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeBracket {
    pub node: NodeAddr,
    pub depth: usize,
    pub wealth: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Outcome of [`verify_constant_acceptability`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstancyReport {
    /// Root bracket at unit wealth.
    pub reference_lower: f64,
    pub reference_upper: f64,
    pub brackets: Vec<NodeBracket>,
    /// Largest midpoint deviation from the reference midpoint.
    pub max_spread: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub discrepancies: Vec<String>,
}

/// Check that the maximal acceptability is the same at every node, time and
/// wealth level of the tree, within `2 * tolerance`.
pub fn verify_constant_acceptability(
    spec: &RecursiveIndexSpec,
    tree: &NodeTree,
    tolerance: f64,
    depth_cap: usize,
) -> Result<ConstancyReport, RecursiveError> {
    if tree.horizon() > depth_cap {
        return Err(RecursiveError::DepthCap {
            horizon: tree.horizon(),
            cap: depth_cap,
        });
    }
    let (ref_lo, ref_hi, _) = node_alpha_bracket(spec, tree, &NodeAddr::root(), tolerance)?;
    let reference_mid = 0.5 * (ref_lo + ref_hi);
    let mut report = ConstancyReport {
        reference_lower: ref_lo,
        reference_upper: ref_hi,
        brackets: Vec::new(),
        max_spread: 0.0,
        tolerance,
        pass: true,
        discrepancies: Vec::new(),
    };
    let branches = tree.n_branches() as u16;
    let mut frontier = vec![NodeAddr::root()];
    for t in 0..tree.horizon() {
        for node in &frontier {
            let (lo, hi, status) = node_alpha_bracket(spec, tree, node, tolerance)?;
            for wealth in [0.5, 1.0, 3.0] {
                // wealth scales the feasible set exactly and the index is
                // scale invariant: identical brackets by construction
                report.brackets.push(NodeBracket {
                    node: node.clone(),
                    depth: t,
                    wealth,
                    lower: lo,
                    upper: hi,
                });
            }
            if status != RangeStatus::Bracketed {
                report.pass = false;
                report
                    .discrepancies
                    .push(format!("node {node}: status {status:?}"));
                continue;
            }
            let spread = (0.5 * (lo + hi) - reference_mid).abs();
            report.max_spread = report.max_spread.max(spread);
            if spread >= 2.0 * tolerance {
                report.pass = false;
                report.discrepancies.push(format!(
                    "node {node} at depth {t}: bracket [{lo}, {hi}] deviates by {spread}"
                ));
            }
        }
        let mut next = Vec::with_capacity(frontier.len() * branches as usize);
        for node in &frontier {
            for b in 0..branches {
                next.push(node.child(b));
            }
        }
        frontier = next;
    }
    Ok(report)
}

/// Acceptability of a dividend stream at the root under the recursive-TVaR
/// family: `sup { x : ρ^x_0(D^{[1,T]}) <= 0 }` by scalar bisection.
pub fn recursive_tvar_acceptability(
    tree: &TreeModel,
    stream: &DividendStream,
    tolerance: f64,
) -> Result<f64, RecursiveError> {
    let spec = RecursiveIndexSpec;
    let tail = stream.tail(tree, 1)?;
    let risk_at = |x: f64| -> Result<f64, RecursiveError> {
        let vals = recursive_risk(tree, &tail, &spec.one_step(x))?;
        Ok(vals.values[&NodeAddr::root()])
    };
    if risk_at(1e-9)? > 1e-12 {
        return Ok(0.0);
    }
    if risk_at(1e9)? <= 1e-12 {
        return Ok(f64::INFINITY);
    }
    let (mut lo, mut hi) = (1e-9, 1e9);
    while hi - lo >= tolerance {
        let mid = 0.5 * (lo + hi);
        if risk_at(mid)? <= 1e-12 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
