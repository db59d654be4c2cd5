//! Dynamic risk measures on scenario trees: one-step measures composed
//! backward through the recursiveness identity
//! `ρ_t(D) = ρ_t(-ρ_{t+1}(D) 1_{t+1}) - D_t`, strong-time-consistency
//! checks, and the dynamic RAROC / gain-to-loss evaluators.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{nodes_at_depth, DividendStream, MarketError, NodeAddr};
use crate::risk::tvar_discrete;
use crate::scenario::TreeModel;

#[derive(Debug, Error)]
pub enum DynRiskError {
    #[error("level q = {0} outside (0,1]")]
    BadLevel(f64),
    #[error("stream missing a value at node {0}")]
    MissingNode(NodeAddr),
    #[error("node {node} is at depth {found}, expected {expected}")]
    WrongDepth {
        node: NodeAddr,
        found: usize,
        expected: usize,
    },
    #[error("market: {0}")]
    Market(#[from] MarketError),
}

/// One-step conditional risk measure, identical across all nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OneStepRisk {
    /// Conditional TVaR of the child distribution at tail mass `q`.
    Tvar { q: f64 },
    /// Conditional expected loss `E[-Z]`.
    ExpectationOfLoss,
}

impl OneStepRisk {
    pub fn tvar(q: f64) -> Result<Self, DynRiskError> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(DynRiskError::BadLevel(q));
        }
        Ok(OneStepRisk::Tvar { q })
    }

    /// Apply to a child-indexed random variable.
    pub fn apply(&self, probs: &[f64], values: &[f64]) -> f64 {
        match self {
            OneStepRisk::Tvar { q } => tvar_discrete(probs, values, *q),
            OneStepRisk::ExpectationOfLoss => {
                -probs.iter().zip(values).map(|(p, v)| p * v).sum::<f64>()
            }
        }
    }
}

/// A conditional value per node.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeValuation {
    pub values: BTreeMap<NodeAddr, f64>,
}

fn stream_value(stream: &DividendStream, node: &NodeAddr) -> Result<f64, DynRiskError> {
    stream
        .values
        .get(node)
        .copied()
        .ok_or_else(|| DynRiskError::MissingNode(node.clone()))
}

/// Backward recursion of the composed dynamic risk measure over the whole
/// tree: `ρ_T = -D_T`, then one step at a time through the recursiveness
/// identity. The returned valuation holds `ρ_t(D^{[t,T]})`-style values that
/// account for the node's own dividend at every date.
pub fn recursive_risk(
    tree: &TreeModel,
    stream: &DividendStream,
    step: &OneStepRisk,
) -> Result<NodeValuation, DynRiskError> {
    let horizon = tree.horizon();
    let probs = tree.step().probabilities().to_vec();
    let n_branches = tree.step().n_states();
    let mut out = NodeValuation::default();
    for node in nodes_at_depth(tree, horizon) {
        let d_t = stream_value(stream, &node)?;
        out.values.insert(node, -d_t);
    }
    let mut child_values = vec![0.0; n_branches];
    for t in (0..horizon).rev() {
        for node in nodes_at_depth(tree, t) {
            for (b, cv) in child_values.iter_mut().enumerate() {
                let child = node.child(b as u16);
                *cv = -out.values[&child];
            }
            let d_t = stream_value(stream, &node)?;
            let v = step.apply(&probs, &child_values) - d_t;
            out.values.insert(node, v);
        }
    }
    Ok(out)
}

/// Conditional leaf statistics of the cumulative tail dividend
/// `X = Σ_{s>=t} D_s` under a node: (probabilities, values).
fn tail_sums_under(
    tree: &TreeModel,
    stream: &DividendStream,
    node: &NodeAddr,
) -> Result<(Vec<f64>, Vec<f64>), DynRiskError> {
    let horizon = tree.horizon();
    let depth = node.depth();
    let step_probs = tree.step().probabilities();
    let mut probs = vec![1.0];
    let mut sums = vec![stream_value(stream, node)?];
    let mut frontier = vec![node.clone()];
    for _ in depth..horizon {
        let mut next_probs = Vec::with_capacity(frontier.len() * step_probs.len());
        let mut next_sums = Vec::with_capacity(next_probs.capacity());
        let mut next_frontier = Vec::with_capacity(next_probs.capacity());
        for (i, n) in frontier.iter().enumerate() {
            for (b, &pb) in step_probs.iter().enumerate() {
                let child = n.child(b as u16);
                next_probs.push(probs[i] * pb);
                next_sums.push(sums[i] + stream_value(stream, &child)?);
                next_frontier.push(child);
            }
        }
        probs = next_probs;
        sums = next_sums;
        frontier = next_frontier;
    }
    Ok((probs, sums))
}

/// Non-recursive benchmark valuation: the one-step measure applied flat to
/// the conditional distribution of the cumulative tail dividend. Violates
/// strong time consistency; used as a negative control.
pub fn flat_terminal_valuation(
    tree: &TreeModel,
    stream: &DividendStream,
    step: &OneStepRisk,
    t: usize,
) -> Result<NodeValuation, DynRiskError> {
    let mut out = NodeValuation::default();
    for node in nodes_at_depth(tree, t) {
        let (probs, sums) = tail_sums_under(tree, stream, &node)?;
        out.values.insert(node, step.apply(&probs, &sums));
    }
    Ok(out)
}

/// Dynamic RAROC at a node: conditional mean of the cumulative tail over the
/// positive part of the recursively composed dynamic TVaR of the same tail,
/// with `a/0 = +inf` for nonnegative `a`.
pub fn eval_draroc(
    tree: &TreeModel,
    stream: &DividendStream,
    t: usize,
    node: &NodeAddr,
    pi_level: f64,
) -> Result<f64, DynRiskError> {
    check_node(tree, t, node)?;
    let step = OneStepRisk::tvar(pi_level)?;
    let (probs, sums) = tail_sums_under(tree, stream, node)?;
    let mean: f64 = probs.iter().zip(&sums).map(|(p, v)| p * v).sum();
    let tail = stream.tail(tree, t)?;
    let risk = recursive_risk(tree, &tail, &step)?.values[node];
    Ok(ratio_convention(mean, risk))
}

/// Dynamic gain-to-loss ratio at a node, by full conditional-leaf
/// enumeration of the cumulative tail dividend.
pub fn eval_dglr(
    tree: &TreeModel,
    stream: &DividendStream,
    t: usize,
    node: &NodeAddr,
) -> Result<f64, DynRiskError> {
    check_node(tree, t, node)?;
    let (probs, sums) = tail_sums_under(tree, stream, node)?;
    let mean: f64 = probs.iter().zip(&sums).map(|(p, v)| p * v).sum();
    let loss: f64 = probs
        .iter()
        .zip(&sums)
        .map(|(p, v)| p * (-v).max(0.0))
        .sum();
    Ok(ratio_convention(mean, loss))
}

fn ratio_convention(mean: f64, denom: f64) -> f64 {
    if mean <= 0.0 {
        0.0
    } else if denom <= 0.0 {
        f64::INFINITY
    } else {
        mean / denom
    }
}

fn check_node(tree: &TreeModel, t: usize, node: &NodeAddr) -> Result<(), DynRiskError> {
    if t > tree.horizon() || node.depth() != t {
        return Err(DynRiskError::WrongDepth {
            node: node.clone(),
            found: node.depth(),
            expected: t,
        });
    }
    Ok(())
}

/// Which valuation the consistency check exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValuationMode {
    Recursive,
    FlatTerminal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub samples: usize,
    pub failures: Vec<String>,
}

impl ConsistencyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Strong time consistency check by payout surgery: for sampled streams,
/// replace everything after `t+1` by the valuation's own certainty
/// equivalent paid at `t+1`; the axiom demands equal time-`t` values. The
/// recursive composition passes by construction, the flat benchmark fails.
pub fn check_strong_consistency(
    tree: &TreeModel,
    step: &OneStepRisk,
    mode: ValuationMode,
    samples: usize,
    seed: u64,
) -> Result<ConsistencyReport, DynRiskError> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let horizon = tree.horizon();
    let mut report = ConsistencyReport {
        samples,
        failures: Vec::new(),
    };
    let value_at = |stream: &DividendStream, t: usize| -> Result<NodeValuation, DynRiskError> {
        match mode {
            ValuationMode::Recursive => {
                let full = recursive_risk(tree, stream, step)?;
                let mut out = NodeValuation::default();
                for node in nodes_at_depth(tree, t) {
                    out.values.insert(node.clone(), full.values[&node]);
                }
                Ok(out)
            }
            ValuationMode::FlatTerminal => flat_terminal_valuation(tree, stream, step, t),
        }
    };
    for k in 0..samples {
        let stream = random_stream(tree, &mut rng);
        let t = if horizon >= 2 {
            rng.random_range(0..horizon - 1)
        } else {
            0
        };
        // surgery: collapse every (t+1)-subtree into its certainty equivalent
        let next_vals = value_at(&stream, t + 1)?;
        let mut surgically = stream.clone();
        for node in nodes_at_depth(tree, t + 1) {
            let ce = -next_vals.values[&node];
            // the flat value at t+1 includes the node's own dividend, so the
            // collapsed stream pays the full certainty equivalent there
            surgically.values.insert(node.clone(), ce);
            zero_below(tree, &mut surgically, &node);
        }
        let before = value_at(&stream, t)?;
        let after = value_at(&surgically, t)?;
        for node in nodes_at_depth(tree, t) {
            let a = before.values[&node];
            let b = after.values[&node];
            if (a - b).abs() > 1e-10 * (1.0 + a.abs()) {
                report.failures.push(format!(
                    "sample {k}: time {t} node {node}: {a} vs {b} after surgery"
                ));
            }
        }
    }
    Ok(report)
}

fn zero_below(tree: &TreeModel, stream: &mut DividendStream, node: &NodeAddr) {
    if node.depth() >= tree.horizon() {
        return;
    }
    for b in 0..tree.step().n_states() {
        let child = node.child(b as u16);
        stream.values.insert(child.clone(), 0.0);
        zero_below(tree, stream, &child);
    }
}

/// Random dividend stream with `D_0 = 0`.
pub fn random_stream(tree: &TreeModel, rng: &mut ChaCha12Rng) -> DividendStream {
    let mut stream = DividendStream::default();
    stream.values.insert(NodeAddr::root(), 0.0);
    for t in 1..=tree.horizon() {
        for node in nodes_at_depth(tree, t) {
            stream.values.insert(node, rng.random_range(-1.0..1.0));
        }
    }
    stream
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{pnl_of_weights, ScenarioModel};

    fn toy_tree(horizon: usize) -> TreeModel {
        TreeModel::new(horizon, ScenarioModel::toy()).unwrap()
    }

    fn constant_terminal_stream(tree: &TreeModel, c: f64) -> DividendStream {
        let mut stream = DividendStream::default();
        for t in 0..=tree.horizon() {
            for node in nodes_at_depth(tree, t) {
                let v = if t == tree.horizon() { c } else { 0.0 };
                stream.values.insert(node, v);
            }
        }
        stream
    }

    #[test]
    fn terminal_constant_payout_composes_to_its_negation() {
        let tree = toy_tree(3);
        let step = OneStepRisk::tvar(0.3).unwrap();
        let stream = constant_terminal_stream(&tree, 2.5);
        let vals = recursive_risk(&tree, &stream, &step).unwrap();
        assert!((vals.values[&NodeAddr::root()] + 2.5).abs() < 1e-12);
    }

    #[test]
    fn deep_tail_one_step_values_equal_worst_branch_loss() {
        let tree = toy_tree(2);
        let step = OneStepRisk::tvar(0.01).unwrap();
        // one-step payouts at depth T equal to the pnl of the raroc optimum
        let pnl = pnl_of_weights(tree.step(), &[15.0 / 16.0, 1.0 / 16.0], false).unwrap();
        let mut stream = DividendStream::default();
        for t in 0..=2 {
            for node in nodes_at_depth(&tree, t) {
                let v = if t == 2 {
                    pnl.values[node.last_branch().unwrap() as usize]
                } else {
                    0.0
                };
                stream.values.insert(node, v);
            }
        }
        let vals = recursive_risk(&tree, &stream, &step).unwrap();
        for node in nodes_at_depth(&tree, 1) {
            assert!((vals.values[&node] - 0.0153125).abs() < 1e-12);
        }
    }

    #[test]
    fn nonnegative_payouts_have_nonpositive_risk() {
        let tree = toy_tree(2);
        let step = OneStepRisk::tvar(0.25).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut stream = random_stream(&tree, &mut rng);
        for v in stream.values.values_mut() {
            *v = v.abs();
        }
        stream.values.insert(NodeAddr::root(), 0.0);
        let vals = recursive_risk(&tree, &stream, &step).unwrap();
        assert!(vals.values[&NodeAddr::root()] <= 0.0);
    }

    #[test]
    fn expectation_of_loss_composition_is_the_tower_property() {
        let tree = toy_tree(3);
        let step = OneStepRisk::ExpectationOfLoss;
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..20 {
            let stream = random_stream(&tree, &mut rng);
            let recursive = recursive_risk(&tree, &stream, &step).unwrap();
            for t in 0..=2 {
                for node in nodes_at_depth(&tree, t) {
                    let (probs, sums) = tail_sums_under(&tree, &stream, &node).unwrap();
                    let flat: f64 = -probs.iter().zip(&sums).map(|(p, v)| p * v).sum::<f64>();
                    assert!(
                        (recursive.values[&node] - flat).abs() < 1e-12,
                        "node {node}"
                    );
                }
            }
        }
    }

    #[test]
    fn axioms_r3_to_r6_hold_at_every_node() {
        let tree = toy_tree(2);
        let step = OneStepRisk::tvar(0.35).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..40 {
            let d1 = random_stream(&tree, &mut rng);
            let d2 = random_stream(&tree, &mut rng);
            let r1 = recursive_risk(&tree, &d1, &step).unwrap();
            let r2 = recursive_risk(&tree, &d2, &step).unwrap();
            // monotonicity: D1 + |D2| >= D1
            let mut bigger = d1.clone();
            for (k, v) in bigger.values.iter_mut() {
                *v += d2.values[k].abs();
            }
            let rb = recursive_risk(&tree, &bigger, &step).unwrap();
            for (k, v) in &r1.values {
                assert!(rb.values[k] <= v + 1e-10);
            }
            // homogeneity
            for lam in [0.5, 2.0] {
                let scaled = DividendStream {
                    values: d1.values.iter().map(|(k, v)| (k.clone(), lam * v)).collect(),
                };
                let rs = recursive_risk(&tree, &scaled, &step).unwrap();
                for (k, v) in &r1.values {
                    assert!((rs.values[k] - lam * v).abs() < 1e-10);
                }
            }
            // subadditivity
            let sum = DividendStream {
                values: d1
                    .values
                    .iter()
                    .map(|(k, v)| (k.clone(), v + d2.values[k]))
                    .collect(),
            };
            let rsum = recursive_risk(&tree, &sum, &step).unwrap();
            for (k, v) in &rsum.values {
                assert!(*v <= r1.values[k] + r2.values[k] + 1e-10);
            }
            // translation by a time-t measurable amount paid at t
            let m = 0.75;
            let mut shifted = d1.clone();
            for node in nodes_at_depth(&tree, 1) {
                *shifted.values.get_mut(&node).unwrap() += m;
            }
            let rshift = recursive_risk(&tree, &shifted, &step).unwrap();
            for node in nodes_at_depth(&tree, 1) {
                assert!((rshift.values[&node] - (r1.values[&node] - m)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn dynamic_consistency_sandwich_holds() {
        // 1_A (min_A rho_{t+1} - D_t) <= 1_A rho_t <= 1_A (max_A rho_{t+1} - D_t)
        let tree = toy_tree(3);
        let step = OneStepRisk::tvar(0.2).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for _ in 0..30 {
            let stream = random_stream(&tree, &mut rng);
            let vals = recursive_risk(&tree, &stream, &step).unwrap();
            for t in 0..3 {
                for node in nodes_at_depth(&tree, t) {
                    let children: Vec<f64> = (0..4)
                        .map(|b| vals.values[&node.child(b as u16)])
                        .collect();
                    let d_t = stream.values[&node];
                    let lo = children.iter().cloned().fold(f64::INFINITY, f64::min) - d_t;
                    let hi = children.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - d_t;
                    let v = vals.values[&node];
                    assert!(v >= lo - 1e-10 && v <= hi + 1e-10);
                }
            }
        }
    }

    #[test]
    fn recursive_composition_is_strongly_consistent() {
        let tree = toy_tree(3);
        let step = OneStepRisk::tvar(0.25).unwrap();
        let report =
            check_strong_consistency(&tree, &step, ValuationMode::Recursive, 25, 5).unwrap();
        assert!(report.passed(), "{:?}", report.failures);
        // constant streams pass trivially under both valuations
        let c = constant_terminal_stream(&tree, 1.0);
        let flat = flat_terminal_valuation(&tree, &c, &step, 0).unwrap();
        let rec = recursive_risk(&tree, &c, &step).unwrap();
        assert!((flat.values[&NodeAddr::root()] - rec.values[&NodeAddr::root()]).abs() < 1e-12);
    }

    #[test]
    fn flat_terminal_valuation_fails_the_consistency_check() {
        let tree = toy_tree(3);
        let step = OneStepRisk::tvar(0.25).unwrap();
        let report =
            check_strong_consistency(&tree, &step, ValuationMode::FlatTerminal, 25, 6).unwrap();
        assert!(
            !report.passed(),
            "flat valuation unexpectedly passed surgery"
        );
    }

    #[test]
    fn one_period_draroc_and_dglr_reduce_to_the_static_indices() {
        let tree = toy_tree(1);
        let weights = [15.0 / 16.0, 1.0 / 16.0];
        let pnl = pnl_of_weights(tree.step(), &weights, false).unwrap();
        let mut stream = DividendStream::default();
        stream.values.insert(NodeAddr::root(), 0.0);
        for (b, node) in nodes_at_depth(&tree, 1).into_iter().enumerate() {
            stream.values.insert(node, pnl.values[b]);
        }
        let draroc = eval_draroc(&tree, &stream, 0, &NodeAddr::root(), 0.01).unwrap();
        let static_raroc =
            crate::acceptability::eval_raroc(tree.step(), &pnl, 0.01).unwrap().value;
        assert!((draroc - static_raroc).abs() < 1e-12, "{draroc} vs {static_raroc}");

        let glr_weights = [11.0 / 15.0, 4.0 / 15.0];
        let pnl2 = pnl_of_weights(tree.step(), &glr_weights, false).unwrap();
        let mut stream2 = DividendStream::default();
        stream2.values.insert(NodeAddr::root(), 0.0);
        for (b, node) in nodes_at_depth(&tree, 1).into_iter().enumerate() {
            stream2.values.insert(node, pnl2.values[b]);
        }
        let dglr = eval_dglr(&tree, &stream2, 0, &NodeAddr::root()).unwrap();
        let static_glr = crate::acceptability::eval_glr(tree.step(), &pnl2).unwrap().value;
        assert!((dglr - static_glr).abs() < 1e-12);
    }

    #[test]
    fn ratio_conventions_for_dynamic_indices() {
        let tree = toy_tree(2);
        // nonnegative tail sums with positive mean: infinite dGLR
        let gains = constant_terminal_stream(&tree, 0.5);
        assert!(eval_dglr(&tree, &gains, 0, &NodeAddr::root())
            .unwrap()
            .is_infinite());
        // nonpositive conditional mean: zero
        let losses = constant_terminal_stream(&tree, -0.5);
        assert_eq!(eval_dglr(&tree, &losses, 0, &NodeAddr::root()).unwrap(), 0.0);
        assert_eq!(
            eval_draroc(&tree, &losses, 0, &NodeAddr::root(), 0.01).unwrap(),
            0.0
        );
    }

    #[test]
    fn draroc_cross_checked_by_leaf_enumeration_at_t2() {
        // constant proportional strategy on a two-step tree, checked against
        // direct enumeration over all 16 leaves
        let tree = toy_tree(2);
        let h = [15.0 / 16.0, 1.0 / 16.0];
        let step = tree.step().clone();
        let factor = |b: usize| h[0] * step.ret(0, b) + h[1] * step.ret(1, b);
        let mut stream = DividendStream::default();
        stream.values.insert(NodeAddr::root(), 0.0);
        for i in 0..4u16 {
            let vi = factor(i as usize);
            stream.values.insert(NodeAddr::from_path(&[i]), vi - 1.0);
            for j in 0..4u16 {
                stream
                    .values
                    .insert(NodeAddr::from_path(&[i, j]), vi * factor(j as usize) - vi);
            }
        }
        let val = eval_draroc(&tree, &stream, 0, &NodeAddr::root(), 0.01).unwrap();
        // oracle: mean from all 16 leaves, risk as worst child of worst child
        let mut mean = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                mean += 0.0625 * (factor(i) * factor(j) - 1.0);
            }
        }
        // q = 0.01 < 1/4 makes every one-step tvar the worst child
        let worst1 = (0..4).map(factor).fold(f64::INFINITY, f64::min);
        let rho = -(worst1 * worst1 - 1.0);
        let expected = if mean <= 0.0 {
            0.0
        } else if rho <= 0.0 {
            f64::INFINITY
        } else {
            mean / rho
        };
        if expected.is_finite() {
            assert!((val - expected).abs() < 1e-12, "{val} vs {expected}");
        } else {
            assert!(val.is_infinite());
        }
    }
}
