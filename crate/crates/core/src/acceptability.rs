//! Closed-form evaluation of the three static acceptability indices and the
//! zero-risk levels used by the zero-level bisection variant.
//!
//! Infinite acceptability is represented as `f64::INFINITY`, never as a large
//! finite sentinel; it arises only from the `a/0 = +inf` convention for
//! nonnegative numerators.

use serde::{Deserialize, Serialize};

use crate::risk::{self, RiskError, RiskFamilyKind, RiskFamilySpec};
use crate::scenario::{PnlVector, ScenarioModel};

/// Which index a value belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndexKind {
    Ait,
    Glr,
    Raroc,
}

/// A nonnegative extended-real degree of acceptability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptabilityValue {
    pub value: f64,
    pub index_kind: IndexKind,
}

impl AcceptabilityValue {
    pub fn is_infinite(&self) -> bool {
        self.value.is_infinite()
    }
}

fn mean_and_loss(model: &ScenarioModel, d: &PnlVector) -> (f64, f64) {
    let mut mean = 0.0;
    let mut loss = 0.0;
    for (p, v) in model.probabilities().iter().zip(&d.values) {
        mean += p * v;
        loss += p * (-v).max(0.0);
    }
    (mean, loss)
}

/// Gain-to-loss ratio `E[D]+ / E[D-]`: zero for nonpositive means, infinite
/// when the expected loss vanishes with a positive mean.
pub fn eval_glr(model: &ScenarioModel, d: &PnlVector) -> Result<AcceptabilityValue, RiskError> {
    let (mean, loss) = mean_and_loss(model, d);
    let value = if mean <= 0.0 {
        0.0
    } else if loss == 0.0 {
        f64::INFINITY
    } else {
        mean / loss
    };
    Ok(AcceptabilityValue {
        value,
        index_kind: IndexKind::Glr,
    })
}

/// Risk-adjusted return on capital `E[D]+ / (π(D))+` with `π` the TVaR at
/// `pi_level`.
pub fn eval_raroc(
    model: &ScenarioModel,
    d: &PnlVector,
    pi_level: f64,
) -> Result<AcceptabilityValue, RiskError> {
    let pi = risk::tvar(model, d, pi_level)?;
    let (mean, _) = mean_and_loss(model, d);
    let value = if mean <= 0.0 {
        0.0
    } else if pi <= 0.0 {
        f64::INFINITY
    } else {
        mean / pi
    };
    Ok(AcceptabilityValue {
        value,
        index_kind: IndexKind::Raroc,
    })
}

/// The TVaR-based index: the supremum of levels `x` with
/// `TVaR_{1/(1+x)}(D) <= 0`.
///
/// `q TVaR_q(D)` is continuous, piecewise linear and concave in `q` with
/// slopes given by sorted losses, so the threshold level is found by a scan
/// of the cumulative-probability breakpoints plus one linear solve on the
/// crossing segment; this keeps golden values bit-stable.
pub fn eval_ait(model: &ScenarioModel, d: &PnlVector) -> Result<AcceptabilityValue, RiskError> {
    if d.len() != model.n_states() {
        return Err(RiskError::PnlLength {
            found: d.len(),
            expected: model.n_states(),
        });
    }
    let probs = model.probabilities();
    let mut order: Vec<usize> = (0..d.len()).collect();
    // losses descending, i.e. pnl ascending; index tiebreak for determinism
    order.sort_by(|&a, &b| {
        d.values[a]
            .partial_cmp(&d.values[b])
            .unwrap()
            .then(a.cmp(&b))
    });
    let worst_loss = -d.values[order[0]];
    if worst_loss <= 0.0 {
        // no losses anywhere: acceptable at every level
        return Ok(AcceptabilityValue {
            value: f64::INFINITY,
            index_kind: IndexKind::Ait,
        });
    }
    // W(q) = q TVaR_q is piecewise linear and concave with segment slopes
    // equal to the sorted losses; the threshold is its unique zero crossing.
    let mut w = 0.0;
    let mut cum_p = 0.0;
    for &i in &order {
        let loss = -d.values[i];
        let w_next = w + probs[i] * loss;
        if w_next <= 0.0 {
            // crossing within this segment: w + (q - cum_p) loss = 0
            let q_threshold = cum_p - w / loss;
            return Ok(AcceptabilityValue {
                value: (1.0 / q_threshold - 1.0).max(0.0),
                index_kind: IndexKind::Ait,
            });
        }
        w = w_next;
        cum_p += probs[i];
    }
    // W(1) = E[-D] > 0: no level is acceptable
    Ok(AcceptabilityValue {
        value: 0.0,
        index_kind: IndexKind::Ait,
    })
}

/// The largest level `y` at which the family risk of a fixed position is
/// still nonpositive: the closed-form lower-bound update of the zero-level
/// bisection variant. Coincides with the direct index evaluators wherever the
/// family and the index agree.
pub fn level_of_zero_risk(
    spec: &RiskFamilySpec,
    model: &ScenarioModel,
    d: &PnlVector,
) -> Result<f64, RiskError> {
    let (mean, loss) = mean_and_loss(model, d);
    match spec.kind {
        RiskFamilyKind::TvarFamily => Ok(eval_ait(model, d)?.value),
        RiskFamilyKind::GlrSurrogateFamily | RiskFamilyKind::EvarFamily => {
            // E[-D] + y E[D-] = 0 solves to the gain-to-loss ratio
            Ok(eval_glr(model, d)?.value)
        }
        RiskFamilyKind::RarocFamily => {
            let pi = risk::tvar(model, d, spec.base_level)?;
            if pi <= 0.0 {
                Ok(f64::INFINITY)
            } else if mean <= 0.0 {
                Ok(0.0)
            } else {
                let _ = loss;
                Ok(mean / pi)
            }
        }
    }
}
