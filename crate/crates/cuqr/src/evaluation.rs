//! Coverage and length metrics, a heteroscedastic synthetic generator with
//! closed-form oracle quantiles, the subgroup-count sweep and the
//! adaptivity audit.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::conformal::{CalibratedPredictor, Method};
use crate::core_types::{Dataset, RunConfig};
use crate::error::{Error, Result};
use crate::models::Regressor;
use crate::partition::SubgroupPartition;
use crate::pipeline::{fit_pipeline, FittedPipeline};

/// y = 5 x1 + (noise_base + noise_slope * x1) * eps, x uniform on [0,1]^d,
/// eps standard normal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub noise_base: f64,
    pub noise_slope: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.d < 1 {
            return Err(Error::InvalidConfig("n and d must be >= 1".into()));
        }
        if self.noise_base <= 0.0 {
            return Err(Error::InvalidConfig("noise_base must be > 0".into()));
        }
        if self.noise_slope < 0.0 {
            return Err(Error::InvalidConfig("noise_slope must be >= 0".into()));
        }
        Ok(())
    }

    fn sigma(&self, x1: f64) -> f64 {
        self.noise_base + self.noise_slope * x1
    }
}

/// Seed-deterministic draw from the synthetic DGP.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut features = Vec::with_capacity(spec.n);
    let mut response = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let row: Vec<f64> = (0..spec.d).map(|_| rng.gen::<f64>()).collect();
        let eps: f64 = rng.sample(StandardNormal);
        let y = 5.0 * row[0] + spec.sigma(row[0]) * eps;
        features.push(row);
        response.push(y);
    }
    let column_names = (1..=spec.d).map(|j| format!("x{j}")).collect();
    Dataset::new(features, response, column_names, "y".to_string())
}

/// Closed-form conditional quantile of the DGP: 5 x1 + sigma(x) * PHI^-1(q).
pub fn oracle_quantile(spec: &SyntheticSpec, x: &[f64], q: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).unwrap();
    5.0 * x[0] + spec.sigma(x[0]) * normal.inverse_cdf(q)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubgroupMetrics {
    pub g: usize,
    pub n_test_g: usize,
    pub coverage_g: f64,
    pub mean_length_g: f64,
    pub mean_abs_error_g: f64,
    /// Ascending rank of mean_abs_error_g among nonempty subgroups, for
    /// adaptivity plots.
    pub error_rank: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: Method,
    pub c_av: f64,
    pub l_av: f64,
    pub per_subgroup: Vec<SubgroupMetrics>,
    pub c_wc: f64,
    pub config: RunConfig,
    pub seed: u64,
}

/// Mean that stays bit-exact for constant inputs, so fixed-length interval
/// methods report exactly zero length variance across subgroups.
fn mean_lengths(v: &[f64]) -> f64 {
    if v.iter().all(|&x| x == v[0]) {
        v[0]
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Per-subgroup and marginal coverage/length statistics on a test slice.
/// Lengths are in standardized response units.
pub fn evaluate(
    cp: &CalibratedPredictor,
    test_ds: &Dataset,
    test_idx: &[usize],
    config: &RunConfig,
) -> Result<EvaluationReport> {
    if test_idx.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let g_count = cp.partition.g();
    let mut hits = vec![0usize; g_count];
    let mut counts = vec![0usize; g_count];
    let mut lengths = vec![Vec::new(); g_count];
    let mut error_sums = vec![0.0f64; g_count];
    for &i in test_idx {
        let x = test_ds.row(i);
        let y = test_ds.response()[i];
        let r = cp.predict(x)?;
        let g = r.subgroup;
        counts[g] += 1;
        if r.interval.contains(y) {
            hits[g] += 1;
        }
        lengths[g].push(r.length());
        error_sums[g] += (cp.mu.predict(x)? - y).abs();
    }

    let mut per_subgroup: Vec<SubgroupMetrics> = (0..g_count)
        .filter(|&g| counts[g] > 0)
        .map(|g| SubgroupMetrics {
            g,
            n_test_g: counts[g],
            coverage_g: hits[g] as f64 / counts[g] as f64,
            mean_length_g: mean_lengths(&lengths[g]),
            mean_abs_error_g: error_sums[g] / counts[g] as f64,
            error_rank: 0,
        })
        .collect();
    let mut order: Vec<usize> = (0..per_subgroup.len()).collect();
    order.sort_by(|&a, &b| {
        per_subgroup[a].mean_abs_error_g.partial_cmp(&per_subgroup[b].mean_abs_error_g).unwrap()
    });
    for (rank, &pos) in order.iter().enumerate() {
        per_subgroup[pos].error_rank = rank;
    }

    let n_test: usize = per_subgroup.iter().map(|m| m.n_test_g).sum();
    let c_av = per_subgroup.iter().map(|m| m.coverage_g * m.n_test_g as f64).sum::<f64>()
        / n_test as f64;
    let l_av = per_subgroup.iter().map(|m| m.mean_length_g * m.n_test_g as f64).sum::<f64>()
        / n_test as f64;
    let c_wc = per_subgroup.iter().map(|m| m.coverage_g).fold(f64::INFINITY, f64::min);
    Ok(EvaluationReport {
        method: cp.method,
        c_av,
        l_av,
        per_subgroup,
        c_wc,
        config: config.clone(),
        seed: config.seed,
    })
}

/// Fit, calibrate and evaluate a whole pipeline once.
pub fn run_once(ds: &Dataset, cfg: &RunConfig, method: Method) -> Result<EvaluationReport> {
    let FittedPipeline { artifact, std_ds } = fit_pipeline(ds, cfg, method)?;
    evaluate(&artifact.predictor, &std_ds, &artifact.split.test_idx, cfg)
}

/// One full fit-calibrate-evaluate cycle per subgroup count, shared seed.
pub fn g_sweep(
    ds: &Dataset,
    cfg: &RunConfig,
    method: Method,
    g_values: &[usize],
) -> Result<Vec<EvaluationReport>> {
    g_values
        .par_iter()
        .map(|&g| {
            let cfg_g = RunConfig { groups: g, ..cfg.clone() };
            run_once(ds, &cfg_g, method)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditRow {
    pub g: usize,
    pub n_test_g: usize,
    pub mean_length_g: f64,
    pub mean_abs_error_g: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditTable {
    pub rows: Vec<AuditRow>,
    /// Spearman rank correlation between subgroup mean length and mean error.
    pub spearman_rho: f64,
    /// True when one of the variables is constant and the correlation is
    /// undefined (reported as 0).
    pub degenerate: bool,
}

fn ranks_with_ties(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &pos in &order[i..=j] {
            ranks[pos] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; None when either variable is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    debug_assert_eq!(a.len(), b.len());
    if a.len() < 2 {
        return None;
    }
    let ra = ranks_with_ties(a);
    let rb = ranks_with_ties(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va <= 0.0 || vb <= 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

/// Per-audit-subgroup mean interval length vs mean absolute model error,
/// under a partition that may differ from the calibrated one.
pub fn adaptivity_audit(
    cp: &CalibratedPredictor,
    test_ds: &Dataset,
    test_idx: &[usize],
    audit_partition: &SubgroupPartition,
) -> Result<AuditTable> {
    if test_idx.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let g_count = audit_partition.g();
    let mut counts = vec![0usize; g_count];
    let mut lengths = vec![Vec::new(); g_count];
    let mut error_sums = vec![0.0f64; g_count];
    for &i in test_idx {
        let x = test_ds.row(i);
        let y = test_ds.response()[i];
        let g = audit_partition.assign(x)?;
        let r = cp.predict(x)?;
        counts[g] += 1;
        lengths[g].push(r.length());
        error_sums[g] += (cp.mu.predict(x)? - y).abs();
    }
    let rows: Vec<AuditRow> = (0..g_count)
        .filter(|&g| counts[g] > 0)
        .map(|g| AuditRow {
            g,
            n_test_g: counts[g],
            mean_length_g: mean_lengths(&lengths[g]),
            mean_abs_error_g: error_sums[g] / counts[g] as f64,
        })
        .collect();
    let lengths: Vec<f64> = rows.iter().map(|r| r.mean_length_g).collect();
    let errors: Vec<f64> = rows.iter().map(|r| r.mean_abs_error_g).collect();
    let (spearman_rho, degenerate) = match spearman(&lengths, &errors) {
        Some(rho) => (rho, false),
        None => (0.0, true),
    };
    Ok(AuditTable { rows, spearman_rho, degenerate })
}
