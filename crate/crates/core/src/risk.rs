//! Static coherent risk measures on finite scenario models and the LPs that
//! minimize them over portfolio weight sets.
//!
//! Everything here is exact discrete arithmetic: TVaR by tail sorting with a
//! fractional boundary atom, VaR as the displayed infimum, expectiles by
//! solving the piecewise-linear first-order condition on the bracketing
//! segment. The LP builders encode the same functionals so that the sorted
//! evaluation and the optimization path can cross-check each other.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{LinearProgram, Relation};
use crate::scenario::{PnlVector, ScenarioModel};

#[derive(Debug, Error)]
pub enum RiskError {
    #[error("level {name} = {value} outside {range}")]
    BadLevel {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("pnl vector has length {found}, model has {expected} states")]
    PnlLength { found: usize, expected: usize },
    #[error("expectile-based families have no LP encoding; use the gain-loss surrogate")]
    UnsupportedEncoding,
    #[error("lp: {0}")]
    Lp(#[from] crate::lp::LpError),
}

fn check_pnl(model: &ScenarioModel, d: &PnlVector) -> Result<(), RiskError> {
    if d.len() != model.n_states() {
        return Err(RiskError::PnlLength {
            found: d.len(),
            expected: model.n_states(),
        });
    }
    Ok(())
}

/// Tail value-at-risk on a discrete distribution given as parallel
/// probability/value slices: average loss of the worst probability mass `q`,
/// fractional weight on the boundary atom.
pub fn tvar_discrete(probs: &[f64], values: &[f64], q: f64) -> f64 {
    debug_assert!(q > 0.0 && q <= 1.0);
    let mut order: Vec<usize> = (0..values.len()).collect();
    // sort by loss descending; index tiebreak keeps this deterministic
    order.sort_by(|&a, &b| {
        (-values[a])
            .partial_cmp(&-values[b])
            .unwrap()
            .reverse()
            .then(a.cmp(&b))
    });
    let mut remaining = q;
    let mut acc = 0.0;
    for &i in &order {
        let loss = -values[i];
        let w = probs[i].min(remaining);
        acc += w * loss;
        remaining -= w;
        if remaining <= 0.0 {
            break;
        }
    }
    acc / q
}

/// TVaR of a position: `(1/q) ∫_0^q VaR_p dp`, evaluated exactly.
///
/// `q = 1` gives the expected loss; any `q` at or below the smallest atom
/// gives the worst-case loss.
pub fn tvar(model: &ScenarioModel, d: &PnlVector, q: f64) -> Result<f64, RiskError> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(RiskError::BadLevel {
            name: "q",
            value: q,
            range: "(0,1]",
        });
    }
    check_pnl(model, d)?;
    Ok(tvar_discrete(model.probabilities(), &d.values, q))
}

/// Value-at-risk: `inf { r : P(D + r < 0) <= p }`.
pub fn var(model: &ScenarioModel, d: &PnlVector, p: f64) -> Result<f64, RiskError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(RiskError::BadLevel {
            name: "p",
            value: p,
            range: "(0,1)",
        });
    }
    check_pnl(model, d)?;
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d.values[a].partial_cmp(&d.values[b]).unwrap().then(a.cmp(&b)));
    // P(D < v) as v passes each atom from below; the infimum is attained at
    // the largest atom whose strictly-below mass is still within p
    let probs = model.probabilities();
    let mut below = 0.0;
    let mut candidate = d.values[order[0]];
    let mut k = 0;
    while k < order.len() {
        // group equal values
        let v = d.values[order[k]];
        if below <= p {
            candidate = v;
        } else {
            break;
        }
        let mut mass = 0.0;
        while k < order.len() && d.values[order[k]] == v {
            mass += probs[order[k]];
            k += 1;
        }
        below += mass;
    }
    Ok(-candidate)
}

/// Expectile `e_q`: the unique solution of
/// `q E[(D-e)+] = (1-q) E[(D-e)-]`, found on its bracketing segment.
pub fn expectile(model: &ScenarioModel, d: &PnlVector, q: f64) -> Result<f64, RiskError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(RiskError::BadLevel {
            name: "q",
            value: q,
            range: "(0,1)",
        });
    }
    check_pnl(model, d)?;
    let probs = model.probabilities();
    let n = d.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d.values[a].partial_cmp(&d.values[b]).unwrap().then(a.cmp(&b)));

    // G(e) = q E[(D-e)+] - (1-q) E[(D-e)-] is continuous, piecewise linear
    // and strictly decreasing; the root lies within the atom range.
    let foc = |e: f64| -> f64 {
        let mut pos = 0.0;
        let mut neg = 0.0;
        for i in 0..n {
            let gap = d.values[i] - e;
            if gap > 0.0 {
                pos += probs[i] * gap;
            } else {
                neg += probs[i] * (-gap);
            }
        }
        q * pos - (1.0 - q) * neg
    };

    let lo = d.values[order[0]];
    if foc(lo) <= 0.0 {
        // all mass at a single point (degenerate), root at the atom
        return Ok(lo);
    }
    // find the bracketing segment [d_(k), d_(k+1)]
    for w in order.windows(2) {
        let (a, b) = (d.values[w[0]], d.values[w[1]]);
        if foc(b) <= 0.0 {
            // linear on [a, b]: solve q * sum_{d>a} p (d - e) = (1-q) sum_{d<=a} p (e - d)
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                if d.values[i] > a {
                    num += q * probs[i] * d.values[i];
                    den += q * probs[i];
                } else {
                    num += (1.0 - q) * probs[i] * d.values[i];
                    den += (1.0 - q) * probs[i];
                }
            }
            let e = num / den;
            // guard against fp spill just outside the segment
            return Ok(e.clamp(a.min(b), b.max(a)));
        }
    }
    Ok(d.values[order[n - 1]])
}

/// The four indexed risk families of the static examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RiskFamilyKind {
    /// `ρ^x = TVaR at q = 1/(1+x)`; represents the tail-value acceptability index.
    TvarFamily,
    /// `ρ^x = EVaR at q = 1/(2+x)` (negative expectile); evaluator only.
    EvarFamily,
    /// `ρ^x(D) = E[-D] + x E[D-]`, the sign-equivalent gain-loss surrogate.
    GlrSurrogateFamily,
    /// `ρ^x = q E[-D] + (1-q) π(D)` with `q = 1/(1+x)` and `π` a fixed TVaR.
    RarocFamily,
}

/// An indexed family `x ↦ ρ^x` of LP-buildable risk functionals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskFamilySpec {
    pub kind: RiskFamilyKind,
    /// Fixed inner level for the RAROC family's π (TVaR level).
    pub base_level: f64,
}

impl RiskFamilySpec {
    pub fn tvar_family() -> Self {
        RiskFamilySpec {
            kind: RiskFamilyKind::TvarFamily,
            base_level: 0.0,
        }
    }

    pub fn evar_family() -> Self {
        RiskFamilySpec {
            kind: RiskFamilyKind::EvarFamily,
            base_level: 0.0,
        }
    }

    pub fn glr_surrogate_family() -> Self {
        RiskFamilySpec {
            kind: RiskFamilyKind::GlrSurrogateFamily,
            base_level: 0.0,
        }
    }

    /// RAROC family with `π = TVaR` at `pi_level`.
    pub fn raroc_family(pi_level: f64) -> Self {
        RiskFamilySpec {
            kind: RiskFamilyKind::RarocFamily,
            base_level: pi_level,
        }
    }

    /// How the level x maps onto the family's inner parameter q.
    pub fn level_map(&self, x: f64) -> f64 {
        match self.kind {
            RiskFamilyKind::TvarFamily | RiskFamilyKind::RarocFamily => 1.0 / (1.0 + x),
            RiskFamilyKind::EvarFamily | RiskFamilyKind::GlrSurrogateFamily => 1.0 / (2.0 + x),
        }
    }

    /// Inverse of [`Self::level_map`]; `q = 0` maps to infinity.
    pub fn level_unmap(&self, q: f64) -> f64 {
        if q <= 0.0 {
            return f64::INFINITY;
        }
        match self.kind {
            RiskFamilyKind::TvarFamily | RiskFamilyKind::RarocFamily => 1.0 / q - 1.0,
            RiskFamilyKind::EvarFamily | RiskFamilyKind::GlrSurrogateFamily => 1.0 / q - 2.0,
        }
    }

    /// The bounded q-range `[0, q_max]` swept by the modified bisection.
    pub fn q_max(&self) -> f64 {
        match self.kind {
            RiskFamilyKind::TvarFamily | RiskFamilyKind::RarocFamily => 1.0,
            RiskFamilyKind::EvarFamily | RiskFamilyKind::GlrSurrogateFamily => 0.5,
        }
    }
}

/// Evaluate the family member `ρ^x` directly on a position.
pub fn family_risk(
    spec: &RiskFamilySpec,
    model: &ScenarioModel,
    d: &PnlVector,
    x: f64,
) -> Result<f64, RiskError> {
    if !(x > 0.0) {
        return Err(RiskError::BadLevel {
            name: "x",
            value: x,
            range: "(0,inf)",
        });
    }
    check_pnl(model, d)?;
    let mean: f64 = model.expect(&d.values);
    match spec.kind {
        RiskFamilyKind::TvarFamily => tvar(model, d, spec.level_map(x)),
        RiskFamilyKind::EvarFamily => Ok(-expectile(model, d, spec.level_map(x))?),
        RiskFamilyKind::GlrSurrogateFamily => {
            let loss: f64 = model.expect(
                &d.values
                    .iter()
                    .map(|&v| (-v).max(0.0))
                    .collect::<Vec<_>>(),
            );
            Ok(-mean + x * loss)
        }
        RiskFamilyKind::RarocFamily => {
            let pi = tvar(model, d, spec.base_level)?;
            let q = spec.level_map(x);
            Ok(pi.min(q * (-mean) + (1.0 - q) * pi))
        }
    }
}

/// LP behind the level-x risk minimization over weight vectors.
///
/// Variables are `(h, auxiliaries)` with `h` on the budget hyperplane
/// `1'h = 1` (nonnegative unless shortselling). The optimal value equals the
/// minimal `ρ^x` over feasible P&Ls, and the leading `n_assets` entries of
/// the optimal point recover the minimizer.
///
/// Encodings: TVaR via the Rockafellar-Uryasev auxiliary `z` plus per-state
/// shortfall variables, `E[D-]` via per-state `m_ω >= -d_ω(h), m_ω >= 0`,
/// the RAROC family via the affine combination (valid because
/// `E[-D] <= TVaR` always holds). Expectile minimization has no LP encoding
/// and is rejected.
pub fn build_minrisk_lp(
    spec: &RiskFamilySpec,
    model: &ScenarioModel,
    x: f64,
    shortselling: bool,
) -> Result<LinearProgram, RiskError> {
    if !(x > 0.0) {
        return Err(RiskError::BadLevel {
            name: "x",
            value: x,
            range: "(0,inf)",
        });
    }
    match spec.kind {
        RiskFamilyKind::EvarFamily => Err(RiskError::UnsupportedEncoding),
        RiskFamilyKind::TvarFamily => {
            Ok(tvar_min_lp(model, spec.level_map(x), shortselling, 1.0, 0.0))
        }
        RiskFamilyKind::GlrSurrogateFamily => Ok(glr_surrogate_lp(model, 1.0, x, shortselling)),
        RiskFamilyKind::RarocFamily => {
            let q = spec.level_map(x);
            Ok(raroc_combo_lp(model, q, spec.base_level, shortselling))
        }
    }
}

/// Same minimization indexed by the transformed parameter `q` over its full
/// bounded range, endpoints included; used by the modified bisection. The
/// gain-loss surrogate is rescaled to `q E[-D] + (1-2q) E[D-]`, which has
/// the same sign as the x-form on the interior.
pub fn build_minrisk_lp_q(
    spec: &RiskFamilySpec,
    model: &ScenarioModel,
    q: f64,
    shortselling: bool,
) -> Result<LinearProgram, RiskError> {
    if !(0.0..=spec.q_max()).contains(&q) {
        return Err(RiskError::BadLevel {
            name: "q",
            value: q,
            range: "[0, q_max]",
        });
    }
    match spec.kind {
        RiskFamilyKind::EvarFamily => Err(RiskError::UnsupportedEncoding),
        RiskFamilyKind::TvarFamily => {
            if q == 0.0 {
                Ok(worst_case_loss_lp(model, shortselling))
            } else {
                Ok(tvar_min_lp(model, q, shortselling, 1.0, 0.0))
            }
        }
        RiskFamilyKind::GlrSurrogateFamily => {
            Ok(glr_surrogate_lp(model, q, 1.0 - 2.0 * q, shortselling))
        }
        RiskFamilyKind::RarocFamily => {
            if q == 0.0 {
                Ok(tvar_min_lp(model, spec.base_level, shortselling, 1.0, 0.0))
            } else if q == 1.0 {
                Ok(mean_loss_only_lp(model, shortselling))
            } else {
                Ok(raroc_combo_lp(model, q, spec.base_level, shortselling))
            }
        }
    }
}

fn simplex_base(model: &ScenarioModel, extra: usize, shortselling: bool) -> LinearProgram {
    let d = model.n_assets();
    let mut lp = LinearProgram::new(d + extra);
    if shortselling {
        for j in 0..d {
            lp.set_free(j);
        }
    }
    let mut budget = vec![0.0; d + extra];
    for b in budget.iter_mut().take(d) {
        *b = 1.0;
    }
    lp.add_row(&budget, Relation::Eq, 1.0).unwrap();
    lp
}

/// `min mean_w * E[-D] + tail_w * RU-TVaR_q(D)` with D = R'h - 1.
/// Variables: h (d), z (1, free), u (n_states, >= 0).
fn tvar_min_lp(
    model: &ScenarioModel,
    q: f64,
    shortselling: bool,
    tail_w: f64,
    mean_w: f64,
) -> LinearProgram {
    let d = model.n_assets();
    let n = model.n_states();
    let mut lp = simplex_base(model, 1 + n, shortselling);
    lp.set_free(d); // z
    let mut obj = vec![0.0; d + 1 + n];
    obj[d] = tail_w;
    for s in 0..n {
        obj[d + 1 + s] = tail_w * model.probabilities()[s] / q;
    }
    if mean_w != 0.0 {
        // E[-D] = 1 - sum_s p_s R'h
        for j in 0..d {
            let mut c = 0.0;
            for s in 0..n {
                c += model.probabilities()[s] * model.ret(j, s);
            }
            obj[j] = -mean_w * c;
        }
        lp.set_offset(mean_w);
    }
    lp.set_objective(&obj).unwrap();
    // u_s >= -d_s(h) - z  <=>  sum_j R_js h_j + z + u_s >= 1
    for s in 0..n {
        let mut row = vec![(d, 1.0), (d + 1 + s, 1.0)];
        for j in 0..d {
            row.push((j, model.ret(j, s)));
        }
        lp.add_row_sparse(&row, Relation::Ge, 1.0).unwrap();
    }
    lp
}

/// `min max_s (-d_s(h))`: the q -> 0 limit of TVaR.
fn worst_case_loss_lp(model: &ScenarioModel, shortselling: bool) -> LinearProgram {
    let d = model.n_assets();
    let n = model.n_states();
    let mut lp = simplex_base(model, 1, shortselling);
    lp.set_free(d);
    let mut obj = vec![0.0; d + 1];
    obj[d] = 1.0;
    lp.set_objective(&obj).unwrap();
    // z >= 1 - R'h  <=>  z + R'h >= 1
    for s in 0..n {
        let mut row = vec![(d, 1.0)];
        for j in 0..d {
            row.push((j, model.ret(j, s)));
        }
        lp.add_row_sparse(&row, Relation::Ge, 1.0).unwrap();
    }
    lp
}

/// `min a E[-D] + c E[D-]`. Variables: h (d), m (n_states, >= 0).
fn glr_surrogate_lp(model: &ScenarioModel, a: f64, c: f64, shortselling: bool) -> LinearProgram {
    let d = model.n_assets();
    let n = model.n_states();
    let mut lp = simplex_base(model, n, shortselling);
    let mut obj = vec![0.0; d + n];
    for j in 0..d {
        let mut mean_ret = 0.0;
        for s in 0..n {
            mean_ret += model.probabilities()[s] * model.ret(j, s);
        }
        obj[j] = -a * mean_ret;
    }
    for s in 0..n {
        obj[d + s] = c * model.probabilities()[s];
    }
    lp.set_objective(&obj).unwrap();
    lp.set_offset(a);
    // m_s >= -d_s(h)  <=>  m_s + R'h >= 1
    for s in 0..n {
        let mut row = vec![(d + s, 1.0)];
        for j in 0..d {
            row.push((j, model.ret(j, s)));
        }
        lp.add_row_sparse(&row, Relation::Ge, 1.0).unwrap();
    }
    lp
}

/// `min q E[-D] + (1-q) TVaR_pi(D)`: the simplified RAROC family member.
fn raroc_combo_lp(model: &ScenarioModel, q: f64, pi_level: f64, shortselling: bool) -> LinearProgram {
    tvar_min_lp(model, pi_level, shortselling, 1.0 - q, q)
}

/// `min E[-D]` alone (the q = 1 endpoint of the RAROC family).
fn mean_loss_only_lp(model: &ScenarioModel, shortselling: bool) -> LinearProgram {
    let d = model.n_assets();
    let n = model.n_states();
    let mut lp = simplex_base(model, 0, shortselling);
    let mut obj = vec![0.0; d];
    for (j, o) in obj.iter_mut().enumerate() {
        let mut mean_ret = 0.0;
        for s in 0..n {
            mean_ret += model.probabilities()[s] * model.ret(j, s);
        }
        *o = -mean_ret;
    }
    lp.set_objective(&obj).unwrap();
    lp.set_offset(1.0);
    lp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{solve_lp, LpStatus};
    use crate::scenario::pnl_of_weights;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn uniform4(values: [f64; 4]) -> (ScenarioModel, PnlVector) {
        // carrier model: probabilities matter, returns do not
        let model = ScenarioModel::new(
            vec![0.25; 4],
            vec![vec![1.0; 4]],
        )
        .unwrap();
        (model, PnlVector::new(values.to_vec()))
    }

    fn random_instance(rng: &mut ChaCha12Rng, n: usize) -> (ScenarioModel, PnlVector) {
        let mut probs: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        let model = ScenarioModel::new(probs, vec![vec![1.0; n]]).unwrap();
        let d = PnlVector::new((0..n).map(|_| rng.random_range(-2.0..2.0)).collect());
        (model, d)
    }

    #[test]
    fn tvar_of_constant_is_negated_constant() {
        let (m, _) = uniform4([0.0; 4]);
        for c in [-1.5, 0.0, 2.0] {
            let d = PnlVector::new(vec![c; 4]);
            for q in [0.01, 0.25, 0.6, 1.0] {
                assert!((tvar(&m, &d, q).unwrap() + c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tvar_quarter_mass_is_worst_loss() {
        let (m, d) = uniform4([1.0, 2.0, -3.0, 4.0]);
        assert!((tvar(&m, &d, 0.25).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn tvar_deep_tail_on_toy_raroc_weights() {
        let toy = ScenarioModel::toy();
        let d = pnl_of_weights(&toy, &[15.0 / 16.0, 1.0 / 16.0], false).unwrap();
        let v = tvar(&toy, &d, 0.01).unwrap();
        assert!((v - 0.245 / 16.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn var_matches_brute_force_cases() {
        let (m, d) = uniform4([1.0, 2.0, -3.0, 4.0]);
        assert!((var(&m, &d, 0.3).unwrap() - (-1.0)).abs() < 1e-12);
        assert!((var(&m, &d, 0.2).unwrap() - 3.0).abs() < 1e-12);
        let c = PnlVector::new(vec![0.7; 4]);
        assert!((var(&m, &c, 0.4).unwrap() + 0.7).abs() < 1e-12);
    }

    #[test]
    fn expectile_half_is_mean_and_foc_holds() {
        let (m, d) = uniform4([1.0, 2.0, -3.0, 4.0]);
        let mean = m.expect(&d.values);
        assert!((expectile(&m, &d, 0.5).unwrap() - mean).abs() < 1e-12);
        let two = ScenarioModel::new(vec![0.5, 0.5], vec![vec![1.0, 1.0]]).unwrap();
        let pm = PnlVector::new(vec![1.0, -1.0]);
        let e = expectile(&two, &pm, 0.25).unwrap();
        assert!((e + 0.5).abs() < 1e-12, "{e}");
        let c = PnlVector::new(vec![0.3; 4]);
        for q in [0.1, 0.5, 0.9] {
            assert!((expectile(&m, &c, q).unwrap() - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn expectile_foc_residual_is_tiny_on_random_instances() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..200 {
            let (m, d) = random_instance(&mut rng, 16);
            let q = rng.random_range(0.02..0.98);
            let e = expectile(&m, &d, q).unwrap();
            let mut pos = 0.0;
            let mut neg = 0.0;
            for (p, v) in m.probabilities().iter().zip(&d.values) {
                let gap = v - e;
                if gap > 0.0 {
                    pos += p * gap;
                } else {
                    neg += p * (-gap);
                }
            }
            assert!((q * pos - (1.0 - q) * neg).abs() < 1e-12);
        }
    }

    #[test]
    fn glr_surrogate_vanishes_at_the_optimal_ratio() {
        let toy = ScenarioModel::toy();
        let d = pnl_of_weights(&toy, &[11.0 / 15.0, 4.0 / 15.0], false).unwrap();
        let spec = RiskFamilySpec::glr_surrogate_family();
        let v = family_risk(&spec, &toy, &d, 22.0 / 7.0).unwrap();
        assert!(v.abs() < 1e-12, "{v}");
    }

    #[test]
    fn raroc_family_nonnegative_when_mean_nonpositive() {
        let toy = ScenarioModel::toy();
        let d = PnlVector::new(vec![-0.1, -0.05, 0.02, 0.08]);
        let spec = RiskFamilySpec::raroc_family(0.01);
        // E[D] <= 0 <= pi(D) here
        assert!(toy.expect(&d.values) <= 0.0);
        for x in [0.1, 1.0, 10.0] {
            assert!(family_risk(&spec, &toy, &d, x).unwrap() >= 0.0);
        }
    }

    #[test]
    fn tvar_family_near_static_optimum_is_small() {
        let toy = ScenarioModel::toy();
        let d = pnl_of_weights(&toy, &[0.5517, 0.4483], false).unwrap();
        let spec = RiskFamilySpec::tvar_family();
        let v = family_risk(&spec, &toy, &d, 0.7653).unwrap();
        assert!(v.abs() < 1e-3, "{v}");
    }

    #[test]
    fn coherence_axioms_hold_for_tvar() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for _ in 0..100 {
            let (m, d) = random_instance(&mut rng, 16);
            let q = rng.random_range(0.05..1.0);
            let rd = tvar(&m, &d, q).unwrap();
            // monotonicity
            let better = PnlVector::new(d.values.iter().map(|v| v + rng.random_range(0.0..1.0)).collect());
            assert!(tvar(&m, &better, q).unwrap() <= rd + 1e-10);
            // positive homogeneity
            for lam in [0.5, 2.0, 7.0] {
                let scaled = PnlVector::new(d.values.iter().map(|v| lam * v).collect());
                assert!((tvar(&m, &scaled, q).unwrap() - lam * rd).abs() < 1e-10);
            }
            // translation invariance
            for k in [-1.0, 1.0, 3.0] {
                let shifted = PnlVector::new(d.values.iter().map(|v| v + k).collect());
                assert!((tvar(&m, &shifted, q).unwrap() - (rd - k)).abs() < 1e-10);
            }
            // subadditivity
            let (_, d2) = random_instance(&mut rng, 16);
            let sum = PnlVector::new(d.values.iter().zip(&d2.values).map(|(a, b)| a + b).collect());
            assert!(
                tvar(&m, &sum, q).unwrap() <= rd + tvar(&m, &d2, q).unwrap() + 1e-10
            );
        }
    }

    #[test]
    fn sorting_tvar_equals_rockafellar_uryasev_lp() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for _ in 0..50 {
            let (m, d) = random_instance(&mut rng, 12);
            let q = rng.random_range(0.05..1.0);
            let sorted = tvar(&m, &d, q).unwrap();
            // min over z of z + (1/q) E[(-D - z)+], as a 1 + n variable LP
            let n = d.len();
            let mut lp = LinearProgram::new(1 + n);
            lp.set_free(0);
            let mut obj = vec![0.0; 1 + n];
            obj[0] = 1.0;
            for s in 0..n {
                obj[1 + s] = m.probabilities()[s] / q;
            }
            lp.set_objective(&obj).unwrap();
            for s in 0..n {
                // u_s >= -d_s - z
                lp.add_row_sparse(&[(0, 1.0), (1 + s, 1.0)], Relation::Ge, -d.values[s])
                    .unwrap();
            }
            let sol = solve_lp(&lp).unwrap();
            assert_eq!(sol.status, LpStatus::Optimal);
            assert!((sol.value - sorted).abs() < 1e-8, "{} vs {}", sol.value, sorted);
        }
    }

    #[test]
    fn family_risk_is_monotone_in_x() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        let specs = [
            RiskFamilySpec::tvar_family(),
            RiskFamilySpec::evar_family(),
            RiskFamilySpec::glr_surrogate_family(),
            RiskFamilySpec::raroc_family(0.01),
        ];
        for _ in 0..100 {
            let (m, d) = random_instance(&mut rng, 16);
            let x = rng.random_range(0.01..20.0);
            let y = x + rng.random_range(0.01..20.0);
            for spec in &specs {
                let rx = family_risk(spec, &m, &d, x).unwrap();
                let ry = family_risk(spec, &m, &d, y).unwrap();
                assert!(ry >= rx - 1e-12, "{:?}: rho^{x} = {rx} > rho^{y} = {ry}", spec.kind);
            }
        }
    }

    #[test]
    fn minrisk_lp_matches_simplex_grid_on_two_assets() {
        let toy = ScenarioModel::toy();
        let cases = [
            (RiskFamilySpec::glr_surrogate_family(), 2.0),
            (RiskFamilySpec::glr_surrogate_family(), 4.0),
            (RiskFamilySpec::tvar_family(), 0.7653),
            (RiskFamilySpec::raroc_family(0.01), 0.8214),
        ];
        for (spec, x) in cases {
            let lp = build_minrisk_lp(&spec, &toy, x, false).unwrap();
            let sol = solve_lp(&lp).unwrap();
            assert_eq!(sol.status, LpStatus::Optimal);
            let mut grid_min = f64::INFINITY;
            let steps = 10_000;
            for k in 0..=steps {
                let h1 = k as f64 / steps as f64;
                let d = pnl_of_weights(&toy, &[h1, 1.0 - h1], false).unwrap();
                grid_min = grid_min.min(family_risk(&spec, &toy, &d, x).unwrap());
            }
            assert!(sol.value <= grid_min + 1e-9, "{:?}", spec.kind);
            assert!(grid_min - sol.value <= 5e-4, "{:?}: lp {} grid {}", spec.kind, sol.value, grid_min);
        }
    }

    #[test]
    fn glr_surrogate_lp_signs_match_the_iteration_table() {
        let toy = ScenarioModel::toy();
        let spec = RiskFamilySpec::glr_surrogate_family();
        let at = |x: f64| {
            let lp = build_minrisk_lp(&spec, &toy, x, false).unwrap();
            solve_lp(&lp).unwrap().value
        };
        assert!(at(2.0) < 0.0);
        assert!(at(4.0) > 0.0);
    }

    #[test]
    fn tvar_minimization_at_the_optimal_level_is_near_zero() {
        let toy = ScenarioModel::toy();
        let q = 1.0 / 1.7653;
        let lp = tvar_min_lp(&toy, q, false, 1.0, 0.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!(sol.value.abs() < 1e-3, "{}", sol.value);
        assert!((sol.point[0] - 0.5517).abs() < 5e-3, "{}", sol.point[0]);
        assert!((sol.point[1] - 0.4483).abs() < 5e-3, "{}", sol.point[1]);
    }

    #[test]
    fn sure_gain_asset_has_negative_risk_at_every_level() {
        let m = ScenarioModel::new(vec![0.5, 0.5], vec![vec![1.02, 1.07]]).unwrap();
        let spec = RiskFamilySpec::tvar_family();
        for x in [0.1, 1.0, 50.0] {
            let lp = build_minrisk_lp(&spec, &m, x, false).unwrap();
            let sol = solve_lp(&lp).unwrap();
            assert!(sol.value < 0.0);
        }
    }

    #[test]
    fn evar_family_has_no_lp_encoding() {
        let toy = ScenarioModel::toy();
        assert!(matches!(
            build_minrisk_lp(&RiskFamilySpec::evar_family(), &toy, 1.0, false),
            Err(RiskError::UnsupportedEncoding)
        ));
    }

    #[test]
    fn q_form_signs_agree_with_x_form() {
        let toy = ScenarioModel::toy();
        let specs = [
            RiskFamilySpec::tvar_family(),
            RiskFamilySpec::glr_surrogate_family(),
            RiskFamilySpec::raroc_family(0.01),
        ];
        for spec in &specs {
            for x in [0.3, 0.7653, 2.0, 22.0 / 7.0, 5.0] {
                let q = spec.level_map(x);
                let vx = solve_lp(&build_minrisk_lp(spec, &toy, x, false).unwrap())
                    .unwrap()
                    .value;
                let vq = solve_lp(&build_minrisk_lp_q(spec, &toy, q, false).unwrap())
                    .unwrap()
                    .value;
                assert_eq!(vx > 1e-9, vq > 1e-9, "{:?} at x={x}: {vx} vs {vq}", spec.kind);
            }
        }
    }
}
