//! Finite one-period market models and iid multinomial scenario trees.
//!
//! A [`ScenarioModel`] carries the state probabilities and the gross-return
//! matrix of a one-period market with `d` assets and `|Ω|` states. A
//! [`TreeModel`] repeats the same one-step branching at every node of a
//! `T`-period tree. All values are immutable after construction and safe to
//! share across threads.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probability mass must sum to one within this tolerance on load.
pub const PROB_SUM_TOL: f64 = 1e-9;
/// Portfolio weights must sum to one within this tolerance.
pub const WEIGHT_SUM_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse failure at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("probabilities sum to {sum}")]
    ProbabilitySum { sum: f64 },
    #[error("probability of state {state} is {value}, must be strictly positive")]
    NonPositiveProbability { state: usize, value: f64 },
    #[error("return of asset {asset} in state {state} is {value}, must be strictly positive")]
    NonPositiveReturn {
        asset: usize,
        state: usize,
        value: f64,
    },
    #[error("empty model: need at least one state and one asset")]
    Empty,
    #[error("state {state} has {found} returns, expected {expected}")]
    RaggedRow {
        state: usize,
        found: usize,
        expected: usize,
    },
    #[error("weights sum to {sum}, must sum to 1")]
    WeightSum { sum: f64 },
    #[error("weight {index} is {value}, negative weights need shortselling")]
    NegativeWeight { index: usize, value: f64 },
    #[error("weight vector has length {found}, model has {expected} assets")]
    WeightLength { found: usize, expected: usize },
    #[error("pnl vector has length {found}, model has {expected} states")]
    PnlLength { found: usize, expected: usize },
    #[error("scale matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("degrees of freedom must exceed 2, got {0}")]
    BadDof(f64),
    #[error("bad dimension: {0}")]
    BadDimension(String),
    #[error("horizon must be at least 1")]
    BadHorizon,
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// File format for scenario data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioFormat {
    Csv,
    Json,
}

impl ScenarioFormat {
    /// Guess from the file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => ScenarioFormat::Json,
            _ => ScenarioFormat::Csv,
        }
    }
}

/// A finite one-period market: `d` assets, `|Ω|` states, full-support
/// probabilities and strictly positive gross returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioModel {
    n_states: usize,
    n_assets: usize,
    /// State probabilities, strictly positive, summing to one.
    probabilities: Vec<f64>,
    /// Gross returns, `returns[asset][state]`, strictly positive.
    returns: Vec<Vec<f64>>,
}

impl ScenarioModel {
    /// Build and validate a model from probabilities and a `d x |Ω|` return
    /// matrix (rows are assets).
    pub fn new(probabilities: Vec<f64>, returns: Vec<Vec<f64>>) -> Result<Self, ScenarioError> {
        let n_states = probabilities.len();
        let n_assets = returns.len();
        if n_states == 0 || n_assets == 0 {
            return Err(ScenarioError::Empty);
        }
        for (j, row) in returns.iter().enumerate() {
            if row.len() != n_states {
                return Err(ScenarioError::RaggedRow {
                    state: j,
                    found: row.len(),
                    expected: n_states,
                });
            }
        }
        let model = ScenarioModel {
            n_states,
            n_assets,
            probabilities,
            returns,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let sum: f64 = self.probabilities.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(ScenarioError::ProbabilitySum { sum });
        }
        for (s, &p) in self.probabilities.iter().enumerate() {
            if !(p > 0.0) || !p.is_finite() {
                return Err(ScenarioError::NonPositiveProbability { state: s, value: p });
            }
        }
        for (j, row) in self.returns.iter().enumerate() {
            for (s, &r) in row.iter().enumerate() {
                if !(r > 0.0) || !r.is_finite() {
                    return Err(ScenarioError::NonPositiveReturn {
                        asset: j,
                        state: s,
                        value: r,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Gross return of `asset` in `state`.
    pub fn ret(&self, asset: usize, state: usize) -> f64 {
        self.returns[asset][state]
    }

    /// Return row of one asset across states.
    pub fn asset_returns(&self, asset: usize) -> &[f64] {
        &self.returns[asset]
    }

    /// Expectation of a state-indexed payoff under the model probabilities.
    pub fn expect(&self, values: &[f64]) -> f64 {
        self.probabilities
            .iter()
            .zip(values)
            .map(|(p, v)| p * v)
            .sum()
    }

    /// The two-asset, four-state market of the worked examples, with uniform
    /// state probabilities.
    pub fn toy() -> Self {
        ScenarioModel::new(
            vec![0.25; 4],
            vec![
                vec![1.04, 1.045, 0.98, 0.985],
                vec![1.045, 0.975, 1.055, 0.98],
            ],
        )
        .expect("toy model is valid")
    }
}

/// An iid multinomial scenario tree: the same one-step branching at every
/// node, `horizon` periods deep. Nodes at depth `t` number `n_states^t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    horizon: usize,
    step: ScenarioModel,
}

impl TreeModel {
    pub fn new(horizon: usize, step: ScenarioModel) -> Result<Self, ScenarioError> {
        if horizon == 0 {
            return Err(ScenarioError::BadHorizon);
        }
        Ok(TreeModel { horizon, step })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn step(&self) -> &ScenarioModel {
        &self.step
    }

    /// Number of nodes at a given depth.
    pub fn nodes_at(&self, depth: usize) -> usize {
        self.step.n_states().pow(depth as u32)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let file = File::open(path)?;
        let tree: TreeModel = serde_json::from_reader(BufReader::new(file))?;
        if tree.horizon == 0 {
            return Err(ScenarioError::BadHorizon);
        }
        tree.step.validate()?;
        Ok(tree)
    }

    pub fn save(&self, path: &Path) -> Result<(), ScenarioError> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }
}

/// State-indexed profit and loss of a position, per unit initial wealth.
#[derive(Debug, Clone, PartialEq)]
pub struct PnlVector {
    pub values: Vec<f64>,
}

impl PnlVector {
    pub fn new(values: Vec<f64>) -> Self {
        PnlVector { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl fmt::Display for PnlVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "]")
    }
}

/// Load a scenario model from disk.
///
/// CSV layout: header `state,prob,r_1,...,r_d`, one row per state, `.` decimal
/// separator. The on-disk layout is states-by-assets and is transposed into
/// the assets-by-states return matrix. JSON mirrors [`ScenarioModel`] fields.
pub fn load_scenarios(path: &Path, format: ScenarioFormat) -> Result<ScenarioModel, ScenarioError> {
    match format {
        ScenarioFormat::Json => {
            let file = File::open(path)?;
            let model: ScenarioModel = serde_json::from_reader(BufReader::new(file))?;
            ScenarioModel::new(model.probabilities, model.returns)
        }
        ScenarioFormat::Csv => load_csv(path),
    }
}

fn load_csv(path: &Path) -> Result<ScenarioModel, ScenarioError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() < 3 {
        return Err(ScenarioError::Parse {
            row: 0,
            column: headers.iter().collect::<Vec<_>>().join(","),
            message: "need at least columns state,prob,r_1".into(),
        });
    }
    let n_assets = headers.len() - 2;
    let mut probabilities = Vec::new();
    let mut by_state: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        if record.len() != n_assets + 2 {
            return Err(ScenarioError::RaggedRow {
                state: i,
                found: record.len().saturating_sub(2),
                expected: n_assets,
            });
        }
        let parse = |idx: usize, name: &str| -> Result<f64, ScenarioError> {
            record[idx].parse::<f64>().map_err(|e| ScenarioError::Parse {
                row,
                column: name.to_string(),
                message: e.to_string(),
            })
        };
        probabilities.push(parse(1, "prob")?);
        let mut rets = Vec::with_capacity(n_assets);
        for a in 0..n_assets {
            rets.push(parse(a + 2, headers.get(a + 2).unwrap_or("r_?"))?);
        }
        by_state.push(rets);
    }
    if by_state.is_empty() {
        return Err(ScenarioError::Empty);
    }
    // transpose states-by-assets into the internal assets-by-states matrix
    let n_states = by_state.len();
    let mut returns = vec![vec![0.0; n_states]; n_assets];
    for (s, rets) in by_state.iter().enumerate() {
        for (a, &r) in rets.iter().enumerate() {
            returns[a][s] = r;
        }
    }
    ScenarioModel::new(probabilities, returns)
}

/// Write a scenario model to disk in the chosen format.
pub fn save_scenarios(
    model: &ScenarioModel,
    path: &Path,
    format: ScenarioFormat,
) -> Result<(), ScenarioError> {
    match format {
        ScenarioFormat::Json => {
            let file = File::create(path)?;
            let mut w = BufWriter::new(file);
            serde_json::to_writer_pretty(&mut w, model)?;
            w.write_all(b"\n")?;
            Ok(())
        }
        ScenarioFormat::Csv => {
            let mut writer = csv::Writer::from_path(path)?;
            let mut header = vec!["state".to_string(), "prob".to_string()];
            for a in 0..model.n_assets() {
                header.push(format!("r_{}", a + 1));
            }
            writer.write_record(&header)?;
            for s in 0..model.n_states() {
                let mut record = vec![s.to_string(), model.probabilities[s].to_string()];
                for a in 0..model.n_assets() {
                    record.push(model.ret(a, s).to_string());
                }
                writer.write_record(&record)?;
            }
            writer.flush()?;
            Ok(())
        }
    }
}

/// Generate a model with returns drawn from a multivariate Student's t
/// distribution, deterministic in the seed.
///
/// States get uniform probability `1/n_states`. Draws are floored at
/// `1e-3` to keep every gross return strictly positive; the floor is part of
/// the model definition, not an error.
pub fn generate_student_t(
    n_assets: usize,
    n_states: usize,
    dof: f64,
    location: &[f64],
    scale: &[Vec<f64>],
    seed: u64,
) -> Result<ScenarioModel, ScenarioError> {
    const RETURN_FLOOR: f64 = 1e-3;
    if n_assets == 0 || n_states == 0 {
        return Err(ScenarioError::Empty);
    }
    if !(dof > 2.0) {
        return Err(ScenarioError::BadDof(dof));
    }
    if location.len() != n_assets {
        return Err(ScenarioError::BadDimension(format!(
            "location has length {}, expected {}",
            location.len(),
            n_assets
        )));
    }
    if scale.len() != n_assets || scale.iter().any(|r| r.len() != n_assets) {
        return Err(ScenarioError::BadDimension(format!(
            "scale must be {n_assets}x{n_assets}"
        )));
    }
    let chol = cholesky(scale).ok_or(ScenarioError::NotPositiveDefinite)?;

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let chi = ChiSquared::new(dof).expect("dof > 2 checked above");
    let mut returns = vec![vec![0.0; n_states]; n_assets];
    let mut z = vec![0.0; n_assets];
    for s in 0..n_states {
        for zj in z.iter_mut() {
            *zj = StandardNormal.sample(&mut rng);
        }
        let w: f64 = chi.sample(&mut rng);
        let t_scale = (dof / w).sqrt();
        for (j, row) in chol.iter().enumerate() {
            let mut v = 0.0;
            for (k, &l) in row.iter().enumerate().take(j + 1) {
                v += l * z[k];
            }
            returns[j][s] = (location[j] + t_scale * v).max(RETURN_FLOOR);
        }
    }
    ScenarioModel::new(vec![1.0 / n_states as f64; n_states], returns)
}

/// Lower-triangular Cholesky factor, `None` when the matrix is not
/// symmetric positive definite.
fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    for i in 0..n {
        for j in 0..i {
            if (a[i][j] - a[j][i]).abs() > 1e-12 * (1.0 + a[i][j].abs()) {
                return None;
            }
        }
    }
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

/// P&L per unit wealth of a weight vector: `values[ω] = Σ_j h_j R_{jω} − 1`.
pub fn pnl_of_weights(
    model: &ScenarioModel,
    weights: &[f64],
    shortselling: bool,
) -> Result<PnlVector, ScenarioError> {
    if weights.len() != model.n_assets() {
        return Err(ScenarioError::WeightLength {
            found: weights.len(),
            expected: model.n_assets(),
        });
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(ScenarioError::WeightSum { sum });
    }
    if !shortselling {
        for (j, &w) in weights.iter().enumerate() {
            if w < 0.0 {
                return Err(ScenarioError::NegativeWeight { index: j, value: w });
            }
        }
    }
    let mut values = vec![-1.0; model.n_states()];
    for (j, &w) in weights.iter().enumerate() {
        for (s, v) in values.iter_mut().enumerate() {
            *v += w * model.ret(j, s);
        }
    }
    Ok(PnlVector::new(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn toy_model_shape() {
        let m = ScenarioModel::toy();
        assert_eq!(m.n_assets(), 2);
        assert_eq!(m.n_states(), 4);
        assert_close(m.probabilities().iter().sum::<f64>(), 1.0, 1e-12);
    }

    #[test]
    fn degenerate_single_state_model() {
        let m = ScenarioModel::new(vec![1.0], vec![vec![1.0]]).unwrap();
        assert_eq!(m.n_states(), 1);
        assert_eq!(m.n_assets(), 1);
    }

    #[test]
    fn probability_sum_violation_rejected() {
        let err = ScenarioModel::new(vec![0.5, 0.6], vec![vec![1.0, 1.0]]).unwrap_err();
        match err {
            ScenarioError::ProbabilitySum { sum } => assert_close(sum, 1.1, 1e-12),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_positive_return_rejected_with_location() {
        let err =
            ScenarioModel::new(vec![0.5, 0.5], vec![vec![1.0, 1.0], vec![1.0, -0.2]]).unwrap_err();
        match err {
            ScenarioError::NonPositiveReturn { asset, state, .. } => {
                assert_eq!((asset, state), (1, 1));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn pnl_of_glr_optimum_matches_hand_arithmetic() {
        let m = ScenarioModel::toy();
        let pnl = pnl_of_weights(&m, &[11.0 / 15.0, 4.0 / 15.0], false).unwrap();
        let expected = [0.62 / 15.0, 0.395 / 15.0, 0.0, -0.245 / 15.0];
        for (v, e) in pnl.values.iter().zip(expected) {
            assert_close(*v, e, 1e-12);
        }
    }

    #[test]
    fn pnl_all_in_one_asset_is_return_row_minus_one() {
        let m = ScenarioModel::toy();
        let pnl = pnl_of_weights(&m, &[1.0, 0.0], false).unwrap();
        for (s, v) in pnl.values.iter().enumerate() {
            assert_close(*v, m.ret(0, s) - 1.0, 1e-15);
        }
    }

    #[test]
    fn pnl_rejects_bad_weight_sum() {
        let m = ScenarioModel::toy();
        assert!(matches!(
            pnl_of_weights(&m, &[0.5, 0.6], false),
            Err(ScenarioError::WeightSum { .. })
        ));
    }

    #[test]
    fn pnl_rejects_negative_weight_without_shortselling() {
        let m = ScenarioModel::toy();
        assert!(matches!(
            pnl_of_weights(&m, &[1.5, -0.5], false),
            Err(ScenarioError::NegativeWeight { index: 1, .. })
        ));
        assert!(pnl_of_weights(&m, &[1.5, -0.5], true).is_ok());
    }

    #[test]
    fn student_t_generator_is_deterministic_and_positive() {
        let loc = vec![1.002; 10];
        let scale: Vec<Vec<f64>> = (0..10)
            .map(|i| (0..10).map(|j| if i == j { 0.0004 } else { 0.0 }).collect())
            .collect();
        let a = generate_student_t(10, 1000, 5.0, &loc, &scale, 42).unwrap();
        let b = generate_student_t(10, 1000, 5.0, &loc, &scale, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_assets(), 10);
        assert_eq!(a.n_states(), 1000);
        for j in 0..10 {
            assert!(a.asset_returns(j).iter().all(|&r| r > 0.0));
        }
        let c = generate_student_t(10, 1000, 5.0, &loc, &scale, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn student_t_rejects_zero_scale_matrix() {
        let loc = vec![1.0; 3];
        let scale = vec![vec![0.0; 3]; 3];
        assert!(matches!(
            generate_student_t(3, 10, 5.0, &loc, &scale, 1),
            Err(ScenarioError::NotPositiveDefinite)
        ));
    }

    #[test]
    fn csv_round_trip_toy() {
        let dir = std::env::temp_dir().join("cai_scenario_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("toy_roundtrip.csv");
        let m = ScenarioModel::toy();
        save_scenarios(&m, &path, ScenarioFormat::Csv).unwrap();
        let loaded = load_scenarios(&path, ScenarioFormat::Csv).unwrap();
        assert_eq!(m, loaded);
        // load -> save -> load is idempotent
        let path2 = dir.join("toy_roundtrip2.csv");
        save_scenarios(&loaded, &path2, ScenarioFormat::Csv).unwrap();
        let again = load_scenarios(&path2, ScenarioFormat::Csv).unwrap();
        assert_eq!(loaded, again);
    }

    #[test]
    fn csv_reports_parse_location() {
        let dir = std::env::temp_dir().join("cai_scenario_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.csv");
        std::fs::write(&path, "state,prob,r_1\n0,0.5,1.0\n1,abc,1.0\n").unwrap();
        match load_scenarios(&path, ScenarioFormat::Csv) {
            Err(ScenarioError::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "prob");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tree_node_counts() {
        let tree = TreeModel::new(3, ScenarioModel::toy()).unwrap();
        assert_eq!(tree.nodes_at(0), 1);
        assert_eq!(tree.nodes_at(2), 16);
        assert_eq!(tree.nodes_at(3), 64);
        assert!(TreeModel::new(0, ScenarioModel::toy()).is_err());
    }

    proptest! {
        #[test]
        fn pnl_is_linear_in_weights(lambda in 0.0f64..1.0, h1 in 0.0f64..1.0, g1 in 0.0f64..1.0) {
            let m = ScenarioModel::toy();
            let h = [h1, 1.0 - h1];
            let g = [g1, 1.0 - g1];
            let mix = [
                lambda * h[0] + (1.0 - lambda) * g[0],
                lambda * h[1] + (1.0 - lambda) * g[1],
            ];
            let ph = pnl_of_weights(&m, &h, false).unwrap();
            let pg = pnl_of_weights(&m, &g, false).unwrap();
            let pm = pnl_of_weights(&m, &mix, false).unwrap();
            for s in 0..m.n_states() {
                let expected = lambda * ph.values[s] + (1.0 - lambda) * pg.values[s];
                prop_assert!((pm.values[s] - expected).abs() < 1e-12);
            }
        }

        #[test]
        fn json_round_trip(seed in 0u64..500) {
            let loc = vec![1.01, 0.99, 1.0];
            let scale = vec![
                vec![0.01, 0.0, 0.0],
                vec![0.0, 0.02, 0.0],
                vec![0.0, 0.0, 0.015],
            ];
            let m = generate_student_t(3, 8, 4.0, &loc, &scale, seed).unwrap();
            let dir = std::env::temp_dir().join("cai_scenario_tests");
            std::fs::create_dir_all(&dir).unwrap();
            let path = dir.join(format!("rt_{seed}.json"));
            save_scenarios(&m, &path, ScenarioFormat::Json).unwrap();
            let loaded = load_scenarios(&path, ScenarioFormat::Json).unwrap();
            prop_assert_eq!(m, loaded);
            std::fs::remove_file(&path).ok();
        }
    }
}
