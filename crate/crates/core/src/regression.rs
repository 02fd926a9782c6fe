//! Linear multi-regression of failure load on feature sets, scored by RMSE
//! over repeated paired train/test splits and compared with the Wilcoxon
//! signed-rank test.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{standard_feature_sets, FeatureSet, FeatureVector, MEAN_BMD};
use crate::phantom::hex_digest;
use crate::scalar::Real;
use crate::volume_io::write_file;

pub const MIN_RECORDS: usize = 10;
pub const MIN_WILCOXON_PAIRS: usize = 5;
/// Largest number of non-zero differences tested by exact enumeration.
pub const EXACT_WILCOXON_MAX: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecimenRecord {
    pub specimen_id: String,
    pub features: FeatureVector,
    /// kN.
    pub failure_load: f64,
}

impl SpecimenRecord {
    pub fn new(features: FeatureVector, failure_load: f64) -> Result<Self> {
        if !(failure_load > 0.0) || !failure_load.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "failure load must be positive and finite, got {failure_load} for {}",
                features.specimen_id
            )));
        }
        if features.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            specimen_id: features.specimen_id.clone(),
            features,
            failure_load,
        })
    }
}

/// Joins feature rows with targets by specimen id, in feature-row order.
pub fn join_records(
    features: Vec<FeatureVector>,
    targets: &[(String, f64)],
) -> Result<Vec<SpecimenRecord>> {
    let lookup: HashMap<&str, f64> = targets.iter().map(|(id, v)| (id.as_str(), *v)).collect();
    features
        .into_iter()
        .map(|fv| {
            let fl = *lookup.get(fv.specimen_id.as_str()).ok_or_else(|| {
                Error::format("targets", format!("no failure load for {}", fv.specimen_id))
            })?;
            SpecimenRecord::new(fv, fl)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    pub n_iter: usize,
    pub train_fraction: f64,
    pub rng_seed: u64,
    pub ridge: f64,
    pub alpha: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            n_iter: 50,
            train_fraction: 0.8,
            rng_seed: 1,
            ridge: 1e-6,
            alpha: 0.05,
        }
    }
}

impl EvaluationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 {
            return Err(Error::InvalidParameter("n_iter must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "ridge must be >= 0, got {}",
                self.ridge
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Least squares
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T> {
    pub weights: Vec<T>,
    pub intercept: T,
}

fn check_design<T: Real>(x: &[Vec<T>]) -> Result<usize> {
    let d = x.first().map_or(0, Vec::len);
    for row in x {
        if row.len() != d {
            return Err(Error::InvalidParameter(
                "design matrix rows differ in length".into(),
            ));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
    }
    Ok(d)
}

/// Minimizes `‖Xw + b − y‖² + ridge·‖w‖²` with the intercept unpenalized.
///
/// Columns and targets are centered, then the ridge-augmented system
/// `[Xc; √ridge·I] w = [yc; 0]` is solved by Householder QR.
pub fn fit_linear<T: Real>(x: &[Vec<T>], y: &[T], ridge: T) -> Result<LinearModel<T>> {
    let n = x.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    if y.len() != n {
        return Err(Error::InvalidParameter(format!(
            "{n} rows but {} targets",
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) || !ridge.is_finite() {
        return Err(Error::NonFinite);
    }
    if ridge < T::zero() {
        return Err(Error::InvalidParameter("ridge must be >= 0".into()));
    }
    let d = check_design(x)?;
    let nf = T::from_usize_lossy(n);
    let y_mean = y.iter().copied().sum::<T>() / nf;
    if d == 0 {
        return Ok(LinearModel {
            weights: Vec::new(),
            intercept: y_mean,
        });
    }
    let x_mean: Vec<T> = (0..d)
        .map(|j| x.iter().map(|r| r[j]).sum::<T>() / nf)
        .collect();

    let m = n + d;
    let mut a = vec![T::zero(); m * d];
    let mut b = vec![T::zero(); m];
    for (i, row) in x.iter().enumerate() {
        for j in 0..d {
            a[i * d + j] = row[j] - x_mean[j];
        }
        b[i] = y[i] - y_mean;
    }
    let s = ridge.sqrt();
    for j in 0..d {
        a[(n + j) * d + j] = s;
    }
    let w = householder_solve(&mut a, &mut b, m, d)?;
    let intercept = y_mean - w.iter().zip(&x_mean).map(|(&wj, &mj)| wj * mj).sum::<T>();
    Ok(LinearModel {
        weights: w,
        intercept,
    })
}

/// Least-squares solution of the `m × d` row-major system, `m ≥ d`.
fn householder_solve<T: Real>(a: &mut [T], b: &mut [T], m: usize, d: usize) -> Result<Vec<T>> {
    let scale = (0..d)
        .map(|j| {
            (0..m)
                .map(|i| a[i * d + j] * a[i * d + j])
                .sum::<T>()
                .sqrt()
        })
        .fold(T::zero(), T::max);
    let tol = T::epsilon() * T::from_usize_lossy(m) * scale;
    let mut v = vec![T::zero(); m];
    for k in 0..d {
        let norm = (k..m)
            .map(|i| a[i * d + k] * a[i * d + k])
            .sum::<T>()
            .sqrt();
        if norm <= tol {
            return Err(Error::Singular);
        }
        let akk = a[k * d + k];
        let alpha = if akk >= T::zero() { -norm } else { norm };
        for i in k..m {
            v[i] = a[i * d + k];
        }
        v[k] -= alpha;
        let vv: T = (k..m).map(|i| v[i] * v[i]).sum();
        let two = T::lit(2.0);
        for j in k..d {
            let dot: T = (k..m).map(|i| v[i] * a[i * d + j]).sum();
            let f = two * dot / vv;
            for i in k..m {
                a[i * d + j] -= f * v[i];
            }
        }
        let dot: T = (k..m).map(|i| v[i] * b[i]).sum();
        let f = two * dot / vv;
        for i in k..m {
            b[i] -= f * v[i];
        }
    }
    let mut w = vec![T::zero(); d];
    for k in (0..d).rev() {
        let mut acc = b[k];
        for j in k + 1..d {
            acc -= a[k * d + j] * w[j];
        }
        w[k] = acc / a[k * d + k];
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular);
    }
    Ok(w)
}

pub fn predict<T: Real>(model: &LinearModel<T>, x: &[Vec<T>]) -> Result<Vec<T>> {
    x.iter()
        .map(|row| {
            if row.len() != model.weights.len() {
                return Err(Error::InvalidParameter(format!(
                    "model has {} weights, row has {} features",
                    model.weights.len(),
                    row.len()
                )));
            }
            Ok(model.intercept
                + row
                    .iter()
                    .zip(&model.weights)
                    .map(|(&a, &w)| a * w)
                    .sum::<T>())
        })
        .collect()
}

pub fn rmse<T: Real>(pred: &[T], truth: &[T]) -> Result<T> {
    if pred.is_empty() {
        return Err(Error::EmptyInput);
    }
    if pred.len() != truth.len() {
        return Err(Error::InvalidParameter(format!(
            "{} predictions for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    let ss: T = pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    Ok((ss / T::from_usize_lossy(pred.len())).sqrt())
}

// ---------------------------------------------------------------------------
// Repeated splits
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// SHA-256 of the sorted test indices, for checking that two runs used
    /// the same partitions.
    pub fn hash(&self) -> String {
        let text: Vec<String> = self.test.iter().map(usize::to_string).collect();
        hex_digest(text.join(",").as_bytes())
    }
}

/// The split sequence depends only on `n` and the seed, so every feature
/// set evaluated with the same config sees the same partitions.
pub fn paired_splits(n: usize, config: &EvaluationConfig) -> Result<Vec<Split>> {
    config.validate()?;
    if n < MIN_RECORDS {
        return Err(Error::TooFewSamples {
            needed: MIN_RECORDS,
            got: n,
        });
    }
    let n_train = ((config.train_fraction * n as f64).round() as usize).clamp(2, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut order: Vec<usize> = (0..n).collect();
    Ok((0..config.n_iter)
        .map(|_| {
            order.shuffle(&mut rng);
            let mut train = order[..n_train].to_vec();
            let mut test = order[n_train..].to_vec();
            train.sort_unstable();
            test.sort_unstable();
            Split { train, test }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RMSEDistribution {
    pub feature_set: String,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation, 0 for a single value.
    pub std: f64,
}

impl RMSEDistribution {
    pub fn from_values(feature_set: impl Into<String>, values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            feature_set: feature_set.into(),
            values,
            mean,
            std,
        }
    }
}

fn design(records: &[SpecimenRecord], columns: &[String]) -> Result<Vec<Vec<f64>>> {
    let Some(first) = records.first() else {
        return Err(Error::EmptyInput);
    };
    let idx = columns
        .iter()
        .map(|c| {
            first
                .features
                .columns
                .iter()
                .position(|k| k == c)
                .ok_or_else(|| Error::InvalidParameter(format!("unknown feature column `{c}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    records
        .iter()
        .map(|r| {
            if r.features.columns != first.features.columns {
                return Err(Error::format("features", "records have different columns"));
            }
            Ok(idx.iter().map(|&i| r.features.values[i]).collect())
        })
        .collect()
}

fn evaluate_on_splits(x: &[Vec<f64>], y: &[f64], splits: &[Split], ridge: f64) -> Result<Vec<f64>> {
    splits
        .par_iter()
        .map(|split| {
            let xt: Vec<Vec<f64>> = split.train.iter().map(|&i| x[i].clone()).collect();
            let yt: Vec<f64> = split.train.iter().map(|&i| y[i]).collect();
            let model = fit_linear(&xt, &yt, ridge)?;
            let xs: Vec<Vec<f64>> = split.test.iter().map(|&i| x[i].clone()).collect();
            let ys: Vec<f64> = split.test.iter().map(|&i| y[i]).collect();
            rmse(&predict(&model, &xs)?, &ys)
        })
        .collect()
}

/// RMSE over `n_iter` seeded train/test splits for one feature set.
pub fn evaluate_feature_set(
    records: &[SpecimenRecord],
    set: &FeatureSet,
    config: &EvaluationConfig,
) -> Result<RMSEDistribution> {
    let splits = paired_splits(records.len(), config)?;
    let x = design(records, &set.columns)?;
    let y: Vec<f64> = records.iter().map(|r| r.failure_load).collect();
    let values = evaluate_on_splits(&x, &y, &splits, config.ridge)?;
    Ok(RMSEDistribution::from_values(set.name.clone(), values))
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank test
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of the ranks of positive differences `a − b`.
    pub w_plus: f64,
    /// Number of non-zero differences.
    pub n: usize,
    pub p_value: f64,
    pub exact: bool,
}

/// Midranks of `|d|` doubled so that tied ranks stay integral.
pub fn doubled_midranks(d: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&i, &j| d[i].abs().total_cmp(&d[j].abs()));
    let mut ranks = vec![0u64; d.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && d[order[end]].abs() == d[order[start]].abs() {
            end += 1;
        }
        // positions start+1 ..= end share the rank (start + 1 + end) / 2
        let r2 = (start + 1 + end) as u64;
        for &i in &order[start..end] {
            ranks[i] = r2;
        }
        start = end;
    }
    ranks
}

/// Two-sided exact p-value of the doubled statistic `w2` under all `2ⁿ`
/// equally likely sign assignments of the doubled ranks.
pub fn exact_p_value(doubled_ranks: &[u64], w2: u64) -> f64 {
    let total: u64 = doubled_ranks.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in doubled_ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let w2 = (w2 as usize).min(total as usize);
    let le: u64 = counts[..=w2].iter().sum();
    let ge: u64 = counts[w2..].iter().sum();
    let all = (2.0f64).powi(doubled_ranks.len() as i32);
    (2.0 * le.min(ge) as f64 / all).min(1.0)
}

fn normal_p_value(doubled_ranks: &[u64], w_plus: f64) -> f64 {
    let n = doubled_ranks.len() as f64;
    let mut ties: HashMap<u64, f64> = HashMap::new();
    for &r in doubled_ranks {
        *ties.entry(r).or_default() += 1.0;
    }
    let tie_term: f64 = ties.values().map(|t| t * t * t - t).sum::<f64>() / 48.0;
    let mean = n * (n + 1.0) / 4.0;
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term;
    let z = (w_plus - mean) / var.sqrt();
    statrs::function::erf::erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

/// Paired two-sided signed-rank test of `a` against `b`.
///
/// Zero differences are dropped. Exact enumeration is used for up to
/// [`EXACT_WILCOXON_MAX`] remaining pairs, the tie-corrected normal
/// approximation above that.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::InvalidParameter(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let d: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|&v| v != 0.0)
        .collect();
    if d.is_empty() {
        return Err(Error::AllDifferencesZero);
    }
    if d.len() < MIN_WILCOXON_PAIRS {
        return Err(Error::TooFewSamples {
            needed: MIN_WILCOXON_PAIRS,
            got: d.len(),
        });
    }
    let ranks = doubled_midranks(&d);
    let w2: u64 = d
        .iter()
        .zip(&ranks)
        .filter(|(v, _)| **v > 0.0)
        .map(|(_, r)| r)
        .sum();
    let w_plus = w2 as f64 / 2.0;
    let exact = d.len() <= EXACT_WILCOXON_MAX;
    let p_value = if exact {
        exact_p_value(&ranks, w2)
    } else {
        normal_p_value(&ranks, w_plus)
    };
    Ok(WilcoxonResult {
        w_plus,
        n: d.len(),
        p_value,
        exact,
    })
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

/// Outcome of comparing one feature set against the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Comparison {
    Baseline,
    Tested {
        w_plus: f64,
        n: usize,
        p_value: f64,
        exact: bool,
        significant: bool,
    },
    AllDifferencesZero,
    Failed {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub feature_set: String,
    pub n_features: usize,
    pub rmse: RMSEDistribution,
    pub baseline: bool,
    pub best: bool,
    pub comparison: Comparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config: EvaluationConfig,
    pub config_hash: Option<String>,
    pub n_records: usize,
    pub split_hashes: Vec<String>,
    pub rows: Vec<ReportRow>,
}

/// Evaluates `sets` on shared splits. The first set is the baseline every
/// other set is tested against.
pub fn evaluate_sets(
    records: &[SpecimenRecord],
    sets: &[FeatureSet],
    config: &EvaluationConfig,
) -> Result<EvaluationReport> {
    if sets.is_empty() {
        return Err(Error::EmptyInput);
    }
    let splits = paired_splits(records.len(), config)?;
    let y: Vec<f64> = records.iter().map(|r| r.failure_load).collect();
    let dists = sets
        .iter()
        .map(|set| {
            let x = design(records, &set.columns)?;
            let values = evaluate_on_splits(&x, &y, &splits, config.ridge)?;
            Ok(RMSEDistribution::from_values(set.name.clone(), values))
        })
        .collect::<Result<Vec<_>>>()?;

    let best = dists
        .iter()
        .enumerate()
        .fold(0, |b, (i, d)| if d.mean < dists[b].mean { i } else { b });
    let base = &dists[0].values;
    let rows = dists
        .iter()
        .zip(sets)
        .enumerate()
        .map(|(i, (dist, set))| {
            let comparison = if i == 0 {
                Comparison::Baseline
            } else {
                match wilcoxon_signed_rank(&dist.values, base) {
                    Ok(w) => Comparison::Tested {
                        w_plus: w.w_plus,
                        n: w.n,
                        p_value: w.p_value,
                        exact: w.exact,
                        significant: w.p_value < config.alpha,
                    },
                    Err(Error::AllDifferencesZero) => Comparison::AllDifferencesZero,
                    Err(e) => Comparison::Failed {
                        message: e.to_string(),
                    },
                }
            };
            ReportRow {
                feature_set: set.name.clone(),
                n_features: set.columns.len(),
                rmse: dist.clone(),
                baseline: i == 0,
                best: i == best,
                comparison,
            }
        })
        .collect();
    Ok(EvaluationReport {
        config: *config,
        config_hash: None,
        n_records: records.len(),
        split_hashes: splits.iter().map(Split::hash).collect(),
        rows,
    })
}

/// Histogram bin count implied by the feature columns.
pub fn infer_bins(columns: &[String]) -> Result<usize> {
    let bins = columns
        .iter()
        .filter(|c| c.starts_with("volume_fa_"))
        .count();
    if bins == 0 || !columns.iter().any(|c| c == MEAN_BMD) {
        return Err(Error::format(
            "features",
            "expected mean_bmd and volume_fa_<bin> columns",
        ));
    }
    Ok(bins)
}

/// Mean BMD baseline plus the 12 histogram feature sets.
pub fn evaluation_report(
    records: &[SpecimenRecord],
    config: &EvaluationConfig,
) -> Result<EvaluationReport> {
    let first = records.first().ok_or(Error::EmptyInput)?;
    let bins = infer_bins(&first.features.columns)?;
    evaluate_sets(records, &standard_feature_sets(bins), config)
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("report", e.to_string()))
    }

    pub fn best(&self) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.best)
    }

    /// One line per feature set: mean ± std RMSE and the test against the
    /// baseline.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if let Some(h) = &self.config_hash {
            out.push_str(&format!("# config_hash: {h}\n"));
        }
        out.push_str("feature_set,n_features,rmse_mean_kN,rmse_std_kN,w_plus,p_value,significant,baseline,best\n");
        for r in &self.rows {
            let (w, p, sig) = match &r.comparison {
                Comparison::Baseline => (String::new(), String::new(), String::new()),
                Comparison::Tested {
                    w_plus,
                    p_value,
                    significant,
                    ..
                } => (
                    w_plus.to_string(),
                    p_value.to_string(),
                    significant.to_string(),
                ),
                Comparison::AllDifferencesZero => {
                    (String::new(), "all_differences_zero".into(), String::new())
                }
                Comparison::Failed { .. } => (String::new(), "error".into(), String::new()),
            };
            out.push_str(&format!(
                "{},{},{},{},{w},{p},{sig},{},{}\n",
                r.feature_set, r.n_features, r.rmse.mean, r.rmse.std, r.baseline, r.best
            ));
        }
        out
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        write_file(&dir.join("report.json"), self.to_json().as_bytes())?;
        write_file(&dir.join("report.csv"), self.to_csv().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;

    fn col(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn simple_line() {
        let xs = [0.0, 1.0, 2.0, 3.5, -1.0];
        let y: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let m = fit_linear(&col(&xs), &y, 0.0).unwrap();
        assert!((m.weights[0] - 2.0).abs() < 1e-9);
        assert!((m.intercept - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exact_fit_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let w = [0.5, -1.0, 2.0, 0.25];
        let y: Vec<f64> = x
            .iter()
            .map(|r| 3.0 + r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let m = fit_linear(&x, &y, 0.0).unwrap();
        let p = predict(&m, &x).unwrap();
        assert!(p.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn wide_design_with_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..20).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let y: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let m = fit_linear(&x, &y, 1e-6).unwrap();
        assert!(m.weights.iter().all(|w| w.is_finite()));
        assert!(matches!(fit_linear(&x, &y, 0.0), Err(Error::Singular)));
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(
            fit_linear(&col(&[1.0]), &[1.0], 0.0),
            Err(Error::TooFewSamples { .. })
        ));
        assert!(matches!(
            fit_linear(&col(&[1.0, f64::NAN]), &[1.0, 2.0], 0.0),
            Err(Error::NonFinite)
        ));
    }

    #[test]
    fn predict_examples() {
        let m = LinearModel {
            weights: vec![0.0, 0.0],
            intercept: 3.0,
        };
        assert_eq!(
            predict(&m, &[vec![1.0, 2.0], vec![-4.0, 9.0]]).unwrap(),
            vec![3.0, 3.0]
        );
        let m = LinearModel {
            weights: vec![2.0],
            intercept: 1.0,
        };
        assert_eq!(predict(&m, &[vec![5.0]]).unwrap(), vec![11.0]);
        assert!(predict(&m, &[vec![5.0, 1.0]]).is_err());
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(rmse(&[4.0], &[1.0]).unwrap(), 3.0);
        assert!(rmse::<f64>(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    fn random_problem(seed: u64, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let y = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        (x, y)
    }

    fn norm(w: &[f64]) -> f64 {
        w.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    proptest! {
        #[test]
        fn ridge_shrinks_weights(seed in any::<u64>(), d in 1usize..6, r1 in 0.0f64..5.0, dr in 0.0f64..5.0) {
            let (x, y) = random_problem(seed, 12, d);
            let a = fit_linear(&x, &y, r1).unwrap();
            let b = fit_linear(&x, &y, r1 + dr).unwrap();
            prop_assert!(norm(&b.weights) <= norm(&a.weights) * (1.0 + 1e-12) + 1e-14);
        }

        #[test]
        fn column_rescaling_keeps_predictions(seed in any::<u64>(), j in 0usize..3, c in 0.01f64..100.0) {
            let (x, y) = random_problem(seed, 15, 3);
            let p = predict(&fit_linear(&x, &y, 0.0).unwrap(), &x).unwrap();
            let xs: Vec<Vec<f64>> = x.iter().map(|r| {
                let mut r = r.clone();
                r[j] *= c;
                r
            }).collect();
            let q = predict(&fit_linear(&xs, &y, 0.0).unwrap(), &xs).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn rmse_zero_iff_equal(v in proptest::collection::vec(-10.0f64..10.0, 1..20), k in 0usize..20, eps in 1e-6f64..1.0) {
            prop_assert_eq!(rmse(&v, &v).unwrap(), 0.0);
            let mut w = v.clone();
            let k = k % w.len();
            w[k] += eps;
            prop_assert!(rmse(&w, &v).unwrap() > 0.0);
        }
    }

    fn records(n: usize, sigma: f64, seed: u64) -> Vec<SpecimenRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        (0..n)
            .map(|i| {
                let a: f64 = rng.gen_range(0.0..1.0);
                let b: f64 = rng.gen_range(0.0..1.0);
                let fl = 2.0 + 3.0 * a + 1.0 * b + noise.sample(&mut rng);
                SpecimenRecord::new(
                    FeatureVector {
                        specimen_id: format!("r{i}"),
                        columns: vec!["a".into(), "b".into(), "junk".into()],
                        values: vec![a, b, rng.gen()],
                    },
                    fl,
                )
                .unwrap()
            })
            .collect()
    }

    fn set(name: &str, cols: &[&str]) -> FeatureSet {
        FeatureSet {
            name: name.into(),
            columns: cols.iter().map(|c| c.to_string()).collect(),
        }
    }

    #[test]
    fn splits_are_seeded_and_partition() {
        let cfg = EvaluationConfig::default();
        let s1 = paired_splits(40, &cfg).unwrap();
        let s2 = paired_splits(40, &cfg).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.len(), 50);
        for s in &s1 {
            assert_eq!(s.train.len(), 32);
            let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..40).collect::<Vec<_>>());
        }
        let other = paired_splits(40, &EvaluationConfig { rng_seed: 2, ..cfg }).unwrap();
        assert_ne!(s1[0].hash(), other[0].hash());
        assert!(matches!(
            paired_splits(9, &cfg),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn noise_floor_recovered() {
        let recs = records(150, 0.3, 11);
        let dist =
            evaluate_feature_set(&recs, &set("ab", &["a", "b"]), &EvaluationConfig::default())
                .unwrap();
        assert_eq!(dist.values.len(), 50);
        assert!(dist.mean > 0.24 && dist.mean < 0.36, "mean {}", dist.mean);
        let again =
            evaluate_feature_set(&recs, &set("ab", &["a", "b"]), &EvaluationConfig::default())
                .unwrap();
        assert_eq!(dist, again);

        let exact = records(150, 0.0, 11);
        let recs_clean: Vec<_> = exact
            .into_iter()
            .map(|mut r| {
                r.failure_load = 2.0 + 3.0 * r.features.values[0] + r.features.values[1];
                r
            })
            .collect();
        let cfg = EvaluationConfig {
            ridge: 0.0,
            ..EvaluationConfig::default()
        };
        let d = evaluate_feature_set(&recs_clean, &set("ab", &["a", "b"]), &cfg).unwrap();
        assert!(d.values.iter().all(|&v| v < 1e-6));
    }

    #[test]
    fn distribution_statistics() {
        let d = RMSEDistribution::from_values("x", vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(d.mean, 2.5);
        assert!((d.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(RMSEDistribution::from_values("x", vec![2.0]).std, 0.0);
    }

    #[test]
    fn wilcoxon_uniform_shift() {
        let b: Vec<f64> = (0..10).map(|i| i as f64 * 0.37).collect();
        let a: Vec<f64> = b.iter().map(|v| v + 0.5).collect();
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.w_plus, 55.0);
        assert!(r.exact);
        assert!((r.p_value - 2.0 / 1024.0).abs() < 1e-15);
    }

    #[test]
    fn wilcoxon_symmetric_differences() {
        let d = [1.0, -1.0, 2.0, -2.0];
        let ranks = doubled_midranks(&d);
        assert_eq!(ranks, vec![3, 3, 7, 7]);
        assert_eq!(exact_p_value(&ranks, 3 + 7), 1.0);
        let d5 = [1.0, -1.0, 2.0, -2.0, 3.0];
        let r = wilcoxon_signed_rank(&d5, &[0.0; 5]).unwrap();
        assert_eq!(r.w_plus, 1.5 + 3.5 + 5.0);
    }

    #[test]
    fn wilcoxon_errors() {
        assert!(matches!(
            wilcoxon_signed_rank(&[1.0; 6], &[1.0; 6]),
            Err(Error::AllDifferencesZero)
        ));
        assert!(matches!(
            wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0], &[0.0; 4]),
            Err(Error::TooFewSamples { needed: 5, got: 4 })
        ));
        assert!(wilcoxon_signed_rank(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn wilcoxon_large_sample_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b: Vec<f64> = (0..50).map(|_| rng.gen_range(0.8..1.4)).collect();
        let a: Vec<f64> = b
            .iter()
            .map(|v| v - 0.1 + rng.gen_range(-0.05..0.05))
            .collect();
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert!(!r.exact);
        assert!(r.p_value < 0.05);
    }

    #[test]
    fn normal_approximation_is_close_to_exact_at_25() {
        let d: Vec<f64> = (1..=25)
            .map(|i| if i % 3 == 0 { -(i as f64) } else { i as f64 })
            .collect();
        let ranks = doubled_midranks(&d);
        let w2: u64 = d
            .iter()
            .zip(&ranks)
            .filter(|(v, _)| **v > 0.0)
            .map(|(_, r)| r)
            .sum();
        let exact = exact_p_value(&ranks, w2);
        let approx = normal_p_value(&ranks, w2 as f64 / 2.0);
        assert!((exact - approx).abs() < 0.01, "{exact} vs {approx}");
    }

    #[test]
    fn report_shape() {
        let recs = records(60, 0.3, 2);
        let sets = vec![
            set("a", &["a"]),
            set("ab", &["a", "b"]),
            set("junk", &["junk"]),
        ];
        let rep = evaluate_sets(
            &recs,
            &sets,
            &EvaluationConfig {
                n_iter: 20,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(rep.rows.len(), 3);
        assert!(rep.rows[0].baseline && rep.rows[0].comparison == Comparison::Baseline);
        assert_eq!(rep.best().unwrap().feature_set, "ab");
        assert!(matches!(
            rep.rows[1].comparison,
            Comparison::Tested {
                significant: true,
                ..
            }
        ));
        assert_eq!(rep.split_hashes.len(), 20);
        let back = EvaluationReport::from_json(&rep.to_json()).unwrap();
        assert_eq!(back, rep);
        assert_eq!(rep.to_csv().lines().count(), 4);
    }

    #[test]
    fn identical_sets_report_zero_differences() {
        let recs = records(30, 0.3, 2);
        let sets = vec![set("a", &["a"]), set("a2", &["a"]), set("a3", &["a"])];
        let rep = evaluate_sets(&recs, &sets, &EvaluationConfig::default()).unwrap();
        assert!(rep.rows[1..]
            .iter()
            .all(|r| r.comparison == Comparison::AllDifferencesZero));
        assert!(rep.to_csv().contains("all_differences_zero"));
    }

    #[test]
    fn join_requires_targets() {
        let fv = FeatureVector {
            specimen_id: "x".into(),
            columns: vec!["a".into()],
            values: vec![1.0],
        };
        assert!(join_records(vec![fv.clone()], &[]).is_err());
        assert!(join_records(vec![fv.clone()], &[("x".into(), -1.0)]).is_err());
        assert_eq!(
            join_records(vec![fv], &[("x".into(), 2.0)]).unwrap()[0].failure_load,
            2.0
        );
    }
}
