//! Acceptability maximization by bisection on the risk level.
//!
//! Step 1 brackets the maximal acceptability by halving/doubling from a seed
//! level; Step 2 shrinks the bracket by bisection. Each probe solves one
//! linear risk minimization and only its sign feeds back into the search.
//! Probe values within `sign_tolerance` of zero count as nonpositive.
//!
//! Variants:
//! - `Original`: exactly the halving/doubling plus bisection scheme. The
//!   iteration counter is shared between the steps and tested, but not
//!   advanced, by Step 2's loop, so a Step 1 that stays under the cap leaves
//!   Step 2 free to run to its width criterion.
//! - `Modified`: probes the transformed parameter q over its bounded range
//!   after checking both endpoint signs; the termination criterion remains on
//!   the level x.
//! - `Mixed`: modified until a finite upper bound exists, then bisection on x.
//! - `ZeroLevel`: after every nonpositive probe the lower bound jumps to the
//!   closed-form zero-risk level of the found minimizer.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acceptability::level_of_zero_risk;
use crate::lp::{solve_lp, LpStatus};
use crate::risk::{build_minrisk_lp, build_minrisk_lp_q, RiskFamilySpec};
use crate::scenario::{PnlVector, ScenarioModel};

#[derive(Debug, Error)]
pub enum BisectError {
    #[error("initial level must be positive, got {0}")]
    NonPositiveX0(f64),
    #[error("tolerance must be positive, got {0}")]
    NonPositiveTolerance(f64),
    #[error("max iterations must be at least 1")]
    ZeroIterations,
    #[error("risk minimization unbounded at level {level}: feasible set is not compact")]
    UnboundedProbe { level: f64 },
    #[error("risk minimization infeasible at level {level}")]
    InfeasibleProbe { level: f64 },
    #[error("step 2 exceeded the safety cap of {0} iterations")]
    RunawayBisection(usize),
    #[error("risk: {0}")]
    Risk(#[from] crate::risk::RiskError),
    #[error("lp: {0}")]
    Lp(#[from] crate::lp::LpError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Algorithm flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Original,
    Modified,
    Mixed,
    ZeroLevel,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::Original => "original",
            Variant::Modified => "modified",
            Variant::Mixed => "mixed",
            Variant::ZeroLevel => "zero-level",
        };
        f.write_str(s)
    }
}

/// Inputs of the bisection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectionConfig {
    /// Initial level x0 > 0.
    pub x0: f64,
    /// Maximal iterations of Step 1.
    pub max_iterations: usize,
    /// Target width of the final level interval.
    pub tolerance: f64,
    pub variant: Variant,
    /// Probe values v with v <= sign_tolerance count as nonpositive.
    pub sign_tolerance: f64,
}

impl BisectionConfig {
    pub fn new(x0: f64, max_iterations: usize, tolerance: f64, variant: Variant) -> Self {
        BisectionConfig {
            x0,
            max_iterations,
            tolerance,
            variant,
            sign_tolerance: 1e-9,
        }
    }

    fn validate(&self) -> Result<(), BisectError> {
        if !(self.x0 > 0.0) {
            return Err(BisectError::NonPositiveX0(self.x0));
        }
        if !(self.tolerance > 0.0) {
            return Err(BisectError::NonPositiveTolerance(self.tolerance));
        }
        if self.max_iterations == 0 {
            return Err(BisectError::ZeroIterations);
        }
        Ok(())
    }
}

/// Where the true optimum ended up relative to the searchable range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeStatus {
    /// Both a nonzero lower and a finite upper bound were found.
    Bracketed,
    /// Every probe was positive: the optimum lies below the guard interval.
    BelowLowerRange,
    /// Every probe was nonpositive: the optimum lies above the guard interval.
    AboveUpperRange,
}

/// One probe of the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// 1 for Step 1, 2 for Step 2.
    pub phase: u8,
    /// 1-based iteration number within the phase.
    pub iteration: usize,
    /// Bounds before the probe; `x_upper` may be infinite.
    pub x_lower: f64,
    pub x_upper: f64,
    /// Probed level; infinite for the q = 0 endpoint check.
    pub probe_x: f64,
    /// Transformed parameter, present when the probe ran on q.
    pub probe_q: Option<f64>,
    /// Sign of the minimal risk: true when p(x) > sign_tolerance.
    pub positive: bool,
    /// Zero-risk level of the probe minimizer (zero-level variant).
    pub zero_level: Option<f64>,
}

/// Full iteration log of one maximization run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BisectionTrace {
    pub step1: Vec<TraceRow>,
    pub step2: Vec<TraceRow>,
    /// Final bracket; endpoints may be 0 or infinite in the failure modes.
    pub x_lower: f64,
    pub x_upper: f64,
    /// Weights of the minimizer from the last nonpositive probe.
    pub epsilon_solution: Option<Vec<f64>>,
    pub status: RangeStatus,
}

impl BisectionTrace {
    /// Midpoint of the final bracket (lower bound when the top is infinite).
    pub fn midpoint(&self) -> f64 {
        if self.x_upper.is_finite() {
            0.5 * (self.x_lower + self.x_upper)
        } else {
            self.x_lower
        }
    }

    pub fn width(&self) -> f64 {
        self.x_upper - self.x_lower
    }

    /// Serialize all rows with the fixed column set
    /// `phase,iter,x_L,x_U,x,q,sign,zero_level_y`.
    pub fn to_csv<W: std::io::Write>(&self, out: W) -> Result<(), BisectError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["phase", "iter", "x_L", "x_U", "x", "q", "sign", "zero_level_y"])?;
        for row in self.step1.iter().chain(&self.step2) {
            w.write_record([
                row.phase.to_string(),
                row.iteration.to_string(),
                fmt_extended(row.x_lower),
                fmt_extended(row.x_upper),
                fmt_extended(row.probe_x),
                row.probe_q.map(|q| q.to_string()).unwrap_or_default(),
                if row.positive { "+" } else { "-" }.to_string(),
                row.zero_level.map(fmt_extended).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn fmt_extended(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        v.to_string()
    }
}

/// Upper bound on Step 2 iterations of the original variant:
/// `ceil(log2(x0/eps) + max_iterations - 2)`.
pub fn predict_step2_bound(cfg: &BisectionConfig) -> usize {
    let raw = (cfg.x0 / cfg.tolerance).log2() + cfg.max_iterations as f64 - 2.0;
    raw.ceil().max(0.0) as usize
}

/// Reachable level range of Step 1 of the original variant:
/// `(x0 2^(1-M), x0 2^(M-1))`.
pub fn guard_interval(cfg: &BisectionConfig) -> (f64, f64) {
    let m = cfg.max_iterations as f64;
    (
        cfg.x0 * (1.0 - m).exp2(),
        cfg.x0 * (m - 1.0).exp2(),
    )
}

/// Outcome of a single risk-minimization probe.
struct Probe {
    positive: bool,
    weights: Vec<f64>,
    zero_level: Option<f64>,
}

struct Prober<'a> {
    spec: &'a RiskFamilySpec,
    model: &'a ScenarioModel,
    shortselling: bool,
    sign_tolerance: f64,
    want_zero_level: bool,
}

impl Prober<'_> {
    fn run(&self, lp: crate::lp::LinearProgram, level: f64) -> Result<Probe, BisectError> {
        let sol = solve_lp(&lp)?;
        match sol.status {
            LpStatus::Unbounded => Err(BisectError::UnboundedProbe { level }),
            LpStatus::Infeasible => Err(BisectError::InfeasibleProbe { level }),
            LpStatus::Optimal => {
                let weights: Vec<f64> = sol.point[..self.model.n_assets()].to_vec();
                let zero_level = if self.want_zero_level {
                    let pnl = PnlVector::new(
                        (0..self.model.n_states())
                            .map(|s| {
                                weights
                                    .iter()
                                    .enumerate()
                                    .map(|(j, h)| h * self.model.ret(j, s))
                                    .sum::<f64>()
                                    - 1.0
                            })
                            .collect(),
                    );
                    Some(level_of_zero_risk(self.spec, self.model, &pnl)?)
                } else {
                    None
                };
                Ok(Probe {
                    positive: sol.value > self.sign_tolerance,
                    weights,
                    zero_level,
                })
            }
        }
    }

    fn at_x(&self, x: f64) -> Result<Probe, BisectError> {
        let lp = build_minrisk_lp(self.spec, self.model, x, self.shortselling)?;
        self.run(lp, x)
    }

    fn at_q(&self, q: f64) -> Result<Probe, BisectError> {
        let lp = build_minrisk_lp_q(self.spec, self.model, q, self.shortselling)?;
        self.run(lp, self.spec.level_unmap(q))
    }
}

/// Hard cap on Step 2 iterations across all variants; the width criterion
/// terminates far earlier on any sane input.
const STEP2_SAFETY_CAP: usize = 20_000;

/// Maximize the acceptability index represented by `spec` over portfolio
/// weights, returning the full iteration trace.
pub fn maximize(
    spec: &RiskFamilySpec,
    model: &ScenarioModel,
    shortselling: bool,
    cfg: &BisectionConfig,
) -> Result<BisectionTrace, BisectError> {
    cfg.validate()?;
    let prober = Prober {
        spec,
        model,
        shortselling,
        sign_tolerance: cfg.sign_tolerance,
        want_zero_level: cfg.variant == Variant::ZeroLevel,
    };
    match cfg.variant {
        Variant::Original | Variant::ZeroLevel => original_flow(&prober, cfg),
        Variant::Modified | Variant::Mixed => transformed_flow(&prober, cfg),
    }
}

fn original_flow(prober: &Prober<'_>, cfg: &BisectionConfig) -> Result<BisectionTrace, BisectError> {
    let mut trace = BisectionTrace {
        step1: Vec::new(),
        step2: Vec::new(),
        x_lower: 0.0,
        x_upper: f64::INFINITY,
        epsilon_solution: None,
        status: RangeStatus::Bracketed,
    };
    let mut n = 0usize;
    let mut x = cfg.x0;

    // Step 1: find an initial bracket by halving/doubling
    while (trace.x_lower == 0.0 || trace.x_upper == f64::INFINITY) && n < cfg.max_iterations {
        let probe = prober.at_x(x)?;
        trace.step1.push(TraceRow {
            phase: 1,
            iteration: n + 1,
            x_lower: trace.x_lower,
            x_upper: trace.x_upper,
            probe_x: x,
            probe_q: None,
            positive: probe.positive,
            zero_level: probe.zero_level,
        });
        if probe.positive {
            trace.x_upper = x;
            x = trace.x_upper / 2.0;
        } else {
            trace.x_lower = x;
            if let Some(y) = probe.zero_level {
                if y.is_finite() && y > trace.x_lower && y < trace.x_upper {
                    trace.x_lower = y;
                }
            }
            trace.epsilon_solution = Some(probe.weights);
            x = 2.0 * trace.x_lower;
        }
        n += 1;
    }

    if trace.x_lower == 0.0 {
        trace.status = RangeStatus::BelowLowerRange;
        return Ok(trace);
    }
    if trace.x_upper == f64::INFINITY {
        trace.status = RangeStatus::AboveUpperRange;
        return Ok(trace);
    }
    trace.status = RangeStatus::Bracketed;

    // Step 2: bisection; the shared counter n is tested once here, as in the
    // written loop condition, and not advanced further
    if n < cfg.max_iterations {
        bisect_on_x(prober, cfg, &mut trace, 1)?;
    }
    Ok(trace)
}

/// Step 2 bisection on the level x, appending rows starting at `first_iter`.
fn bisect_on_x(
    prober: &Prober<'_>,
    cfg: &BisectionConfig,
    trace: &mut BisectionTrace,
    first_iter: usize,
) -> Result<(), BisectError> {
    let mut iter = first_iter;
    while trace.x_upper - trace.x_lower >= cfg.tolerance {
        if iter >= first_iter + STEP2_SAFETY_CAP {
            return Err(BisectError::RunawayBisection(STEP2_SAFETY_CAP));
        }
        let x = 0.5 * (trace.x_lower + trace.x_upper);
        let probe = prober.at_x(x)?;
        trace.step2.push(TraceRow {
            phase: 2,
            iteration: iter,
            x_lower: trace.x_lower,
            x_upper: trace.x_upper,
            probe_x: x,
            probe_q: None,
            positive: probe.positive,
            zero_level: probe.zero_level,
        });
        if probe.positive {
            trace.x_upper = x;
        } else {
            trace.x_lower = x;
            if let Some(y) = probe.zero_level {
                if y.is_finite() && y > trace.x_lower && y < trace.x_upper {
                    trace.x_lower = y;
                }
            }
            trace.epsilon_solution = Some(probe.weights);
        }
        iter += 1;
    }
    Ok(())
}

/// Modified and mixed variants: endpoint checks on q, then bisection on q
/// (switching to x for the mixed variant once the upper bound is finite).
fn transformed_flow(
    prober: &Prober<'_>,
    cfg: &BisectionConfig,
) -> Result<BisectionTrace, BisectError> {
    let q_max = prober.spec.q_max();
    let mut trace = BisectionTrace {
        step1: Vec::new(),
        step2: Vec::new(),
        x_lower: 0.0,
        x_upper: f64::INFINITY,
        epsilon_solution: None,
        status: RangeStatus::Bracketed,
    };

    // Step 1: check the two endpoints q = 0 (x = inf) and q = q_max (x = 0)
    let top = prober.at_q(0.0)?;
    trace.step1.push(TraceRow {
        phase: 1,
        iteration: 1,
        x_lower: 0.0,
        x_upper: f64::INFINITY,
        probe_x: f64::INFINITY,
        probe_q: Some(0.0),
        positive: top.positive,
        zero_level: top.zero_level,
    });
    if !top.positive {
        // acceptable at arbitrarily high levels
        trace.x_lower = f64::INFINITY;
        trace.epsilon_solution = Some(top.weights);
        trace.status = RangeStatus::AboveUpperRange;
        return Ok(trace);
    }
    let bottom = prober.at_q(q_max)?;
    trace.step1.push(TraceRow {
        phase: 1,
        iteration: 2,
        x_lower: 0.0,
        x_upper: f64::INFINITY,
        probe_x: 0.0,
        probe_q: Some(q_max),
        positive: bottom.positive,
        zero_level: bottom.zero_level,
    });
    if bottom.positive {
        // nothing is acceptable at any positive level
        trace.x_upper = 0.0;
        trace.status = RangeStatus::BelowLowerRange;
        return Ok(trace);
    }
    trace.epsilon_solution = Some(bottom.weights);

    let mut q_lo = 0.0f64; // maps to x_upper
    let mut q_hi = q_max; // maps to x_lower
    let mut iter = 1usize;

    // the shared counter sits at 2 after the endpoint checks; Step 2 runs on
    // its own width criterion, guarded by the safety cap
    if 2 >= cfg.max_iterations {
        return Ok(trace);
    }
    while trace.x_upper - trace.x_lower >= cfg.tolerance {
        if iter > STEP2_SAFETY_CAP {
            return Err(BisectError::RunawayBisection(STEP2_SAFETY_CAP));
        }
        let q = 0.5 * (q_lo + q_hi);
        let x = prober.spec.level_unmap(q);
        let probe = prober.at_q(q)?;
        trace.step2.push(TraceRow {
            phase: 2,
            iteration: iter,
            x_lower: trace.x_lower,
            x_upper: trace.x_upper,
            probe_x: x,
            probe_q: Some(q),
            positive: probe.positive,
            zero_level: probe.zero_level,
        });
        iter += 1;
        if probe.positive {
            q_lo = q;
            trace.x_upper = x;
        } else {
            q_hi = q;
            trace.x_lower = x;
            trace.epsilon_solution = Some(probe.weights);
        }
        if cfg.variant == Variant::Mixed && trace.x_upper.is_finite() {
            // switch to bisection on the original parameter
            bisect_on_x(prober, cfg, &mut trace, iter)?;
            return Ok(trace);
        }
    }
    Ok(trace)
}

/// Re-solve every recorded probe and check that the recorded sign matches;
/// also checks the monotonicity of the recorded bounds. Used by tests and by
/// the CLI's self-check mode.
pub fn validate_trace(
    spec: &RiskFamilySpec,
    model: &ScenarioModel,
    shortselling: bool,
    cfg: &BisectionConfig,
    trace: &BisectionTrace,
) -> Result<Vec<String>, BisectError> {
    let mut problems = Vec::new();
    let prober = Prober {
        spec,
        model,
        shortselling,
        sign_tolerance: cfg.sign_tolerance,
        want_zero_level: false,
    };
    for phase in [&trace.step1, &trace.step2] {
        let mut prev_lower = 0.0f64;
        let mut prev_upper = f64::INFINITY;
        for row in phase {
            if row.x_lower < prev_lower - 1e-15 {
                problems.push(format!(
                    "phase {} iter {}: lower bound decreased",
                    row.phase, row.iteration
                ));
            }
            if row.x_upper > prev_upper + 1e-15 {
                problems.push(format!(
                    "phase {} iter {}: upper bound increased",
                    row.phase, row.iteration
                ));
            }
            prev_lower = row.x_lower;
            prev_upper = row.x_upper;
            let probe = match row.probe_q {
                Some(q) => prober.at_q(q)?,
                None => prober.at_x(row.probe_x)?,
            };
            if probe.positive != row.positive {
                problems.push(format!(
                    "phase {} iter {}: recorded sign {} but re-solve says {}",
                    row.phase,
                    row.iteration,
                    if row.positive { "+" } else { "-" },
                    if probe.positive { "+" } else { "-" }
                ));
            }
        }
    }
    Ok(problems)
}
