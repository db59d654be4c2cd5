//! Maximization of coherent acceptability indices over feasible portfolio sets.
//!
//! The library evaluates static indices (AIT, GLR, RAROC) on finite scenario
//! markets, reduces their maximization to sequences of linear risk
//! minimizations driven by a bisection on the risk level, and extends the
//! machinery to scenario trees: recursive dynamic risk measures, a
//! verification harness for the constant-maximal-acceptability property of
//! recursive families, and set-valued backward recursions producing mean-risk
//! and mean-loss efficient frontiers.
//!
//! Module map:
//! - [`scenario`]: finite one-period markets, iid trees, data ingestion.
//! - [`lp`]: self-contained simplex solver and dichotomic bi-objective solver.
//! - [`risk`]: TVaR / VaR / expectile evaluators and risk-minimization LPs.
//! - [`acceptability`]: closed-form index evaluators and zero-risk levels.
//! - [`bisect`]: the level-bisection algorithm and its three variants.
//! - [`market`]: self-financing strategies, wealth and dividend processes.
//! - [`dynrisk`]: one-step and recursively composed dynamic risk measures.
//! - [`recursive`]: constant-acceptability verification for recursive families.
//! - [`frontier`]: mean-risk / mean-loss efficient frontiers on trees.

pub mod acceptability;
pub mod bisect;
pub mod dynrisk;
pub mod frontier;
pub mod lp;
pub mod market;
pub mod recursive;
pub mod risk;
pub mod scenario;
