//! Conformity scoring and band selection: split conformal prediction, the
//! per-subgroup nested-score calibrators (plain and PAC-corrected), and the
//! subgroup-quantile ablation.

use serde::{Deserialize, Serialize};

use crate::core_types::{Dataset, Interval, QuantileGrid};
use crate::error::{Error, Result};
use crate::models::{Model, Regressor};
use crate::numerics::{conformal_quantile, conformal_quantile_at, dkw_lambda, pac_target};
use crate::partition::SubgroupPartition;
use crate::rif_engine::{residuals, NestedBandFamily, RifModel};

/// Second calibration half; conformity scores only ever come from this slice.
#[derive(Clone, Copy)]
pub struct Cal2Slice<'a> {
    pub ds: &'a Dataset,
    pub idx: &'a [usize],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SplitCp,
    Cuqr,
    CuqrPac,
    Cq,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "split_cp" => Ok(Method::SplitCp),
            "cuqr" => Ok(Method::Cuqr),
            "cuqr_pac" => Ok(Method::CuqrPac),
            "cq" => Ok(Method::Cq),
            other => Err(Error::InvalidConfig(format!(
                "unknown method `{other}` (expected split_cp|cuqr|cuqr_pac|cq)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::SplitCp => "split_cp",
            Method::Cuqr => "cuqr",
            Method::CuqrPac => "cuqr_pac",
            Method::Cq => "cq",
        }
    }
}

/// What calibration chose for a subgroup: a grid index into the nested band
/// family (1-indexed) or a fixed half-width in standardized response units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    BandIndex(usize),
    HalfWidth(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubgroupCal {
    pub n_g: usize,
    pub selection: Selection,
    /// True when n_g < n_min forced the pooled-score global selection.
    pub fallback: bool,
    /// Set when the target level clamped past the score range; the widest
    /// band is used and no finite-sample guarantee is claimed.
    pub undercoverage_risk: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibratedPredictor {
    pub method: Method,
    pub mu: Model,
    pub rif: Option<RifModel>,
    pub partition: SubgroupPartition,
    pub global: Selection,
    pub per_group: Vec<SubgroupCal>,
    pub alpha: f64,
    /// DKW slack; 0 for non-PAC methods.
    pub lambda: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuaranteeNote {
    pub alpha: f64,
    pub n_g: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionResult {
    pub interval: Interval,
    /// Issued half-width; `2 * half_width` is the interval length free of the
    /// center's rounding, so fixed-width methods report exactly equal lengths.
    pub half_width: f64,
    pub subgroup: usize,
    pub subgroup_centroid: Vec<f64>,
    pub guarantee_note: GuaranteeNote,
}

impl PredictionResult {
    pub fn length(&self) -> f64 {
        2.0 * self.half_width
    }
}

/// Smallest grid level whose band covers `y`; the band past the last
/// interior level sits at level 1.0, which doubles as the sentinel for
/// points not covered by any band.
pub fn nested_score(bands: &NestedBandFamily, grid: &QuantileGrid, y: f64) -> f64 {
    let dev = (y - bands.center).abs();
    for (k, &hw) in bands.half_widths.iter().enumerate() {
        if dev <= hw {
            return grid.levels().get(k).copied().unwrap_or(1.0);
        }
    }
    1.0
}

fn count_per_group(assignments: &[usize], g: usize) -> Vec<usize> {
    let mut counts = vec![0usize; g];
    for &a in assignments {
        counts[a] += 1;
    }
    counts
}

/// Smallest grid index (1-indexed) whose level reaches `target_level`;
/// when every interior level falls short, the level-1.0 top band (index K)
/// is selected and the flag marks that the claimed level is the optimistic
/// endpoint of the family.
fn band_index_for_level(grid: &QuantileGrid, target_level: f64) -> (usize, bool) {
    for (k, &a) in grid.levels().iter().enumerate() {
        if a >= target_level {
            return (k + 1, false);
        }
    }
    (grid.levels().len() + 1, true)
}

/// Split conformal prediction: one global half-width from the calibration
/// residual quantile; all subgroups share it.
pub fn split_cp_calibrate(
    mu: &Model,
    partition: &SubgroupPartition,
    cal: Cal2Slice<'_>,
    alpha: f64,
) -> Result<CalibratedPredictor> {
    if cal.idx.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let errs = residuals(mu, cal.ds, cal.idx)?;
    let hw = conformal_quantile(&errs, alpha)?;
    let (xs, _) = cal.ds.select(cal.idx);
    let assignments = partition.assign_all(&xs)?;
    let counts = count_per_group(&assignments, partition.g());
    let per_group = counts
        .iter()
        .map(|&n_g| SubgroupCal {
            n_g,
            selection: Selection::HalfWidth(hw),
            fallback: false,
            undercoverage_risk: false,
        })
        .collect();
    Ok(CalibratedPredictor {
        method: Method::SplitCp,
        mu: mu.clone(),
        rif: None,
        partition: partition.clone(),
        global: Selection::HalfWidth(hw),
        per_group,
        alpha,
        lambda: 0.0,
    })
}

fn calibrate_nested(
    method: Method,
    mu: &Model,
    rif: &RifModel,
    partition: &SubgroupPartition,
    cal2: Cal2Slice<'_>,
    alpha: f64,
    lambda: f64,
    n_min: usize,
) -> Result<CalibratedPredictor> {
    if cal2.idx.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let (xs, ys) = cal2.ds.select(cal2.idx);
    let assignments = partition.assign_all(&xs)?;
    let scores: Vec<f64> = xs
        .iter()
        .zip(&ys)
        .map(|(x, &y)| Ok(nested_score(&rif.predict_bands(x)?, &rif.grid, y)))
        .collect::<Result<_>>()?;
    let counts = count_per_group(&assignments, partition.g());

    let select = |group_scores: &[f64]| -> Result<(Selection, bool)> {
        let n_g = group_scores.len();
        let (alpha_star, clamped_target) = match method {
            Method::CuqrPac => {
                let target = pac_target(alpha, n_g, lambda);
                (conformal_quantile_at(group_scores, target)?, target >= 1.0)
            }
            _ => (conformal_quantile(group_scores, alpha)?, false),
        };
        let (k, exhausted) = band_index_for_level(&rif.grid, alpha_star);
        Ok((Selection::BandIndex(k), exhausted || clamped_target || alpha_star >= 1.0))
    };

    let (global, global_risk) = select(&scores)?;
    let mut per_group = Vec::with_capacity(partition.g());
    for g in 0..partition.g() {
        // Plain nested calibration computes one level from the pooled scores
        // (the marginal guarantee); subgroups are reporting units. Only the
        // PAC variant inflates and selects per subgroup.
        if method != Method::CuqrPac {
            per_group.push(SubgroupCal {
                n_g: counts[g],
                selection: global,
                fallback: false,
                undercoverage_risk: global_risk,
            });
            continue;
        }
        let group_scores: Vec<f64> = scores
            .iter()
            .zip(&assignments)
            .filter(|(_, &a)| a == g)
            .map(|(&s, _)| s)
            .collect();
        if group_scores.len() < n_min {
            per_group.push(SubgroupCal {
                n_g: counts[g],
                selection: global,
                fallback: true,
                undercoverage_risk: global_risk,
            });
        } else {
            let (selection, risk) = select(&group_scores)?;
            per_group.push(SubgroupCal {
                n_g: counts[g],
                selection,
                fallback: false,
                undercoverage_risk: risk,
            });
        }
    }
    Ok(CalibratedPredictor {
        method,
        mu: mu.clone(),
        rif: Some(rif.clone()),
        partition: partition.clone(),
        global,
        per_group,
        alpha,
        lambda,
    })
}

/// Per-subgroup selection over the nested band family at the plain
/// (1-alpha) conformal level.
pub fn cuqr_calibrate(
    mu: &Model,
    rif: &RifModel,
    partition: &SubgroupPartition,
    cal2: Cal2Slice<'_>,
    alpha: f64,
    n_min: usize,
) -> Result<CalibratedPredictor> {
    calibrate_nested(Method::Cuqr, mu, rif, partition, cal2, alpha, 0.0, n_min)
}

/// PAC variant: the per-subgroup target level is inflated by the DKW slack
/// lambda / sqrt(n_g) before taking the score quantile.
pub fn cuqr_pac_calibrate(
    mu: &Model,
    rif: &RifModel,
    partition: &SubgroupPartition,
    cal2: Cal2Slice<'_>,
    alpha: f64,
    pac_confidence: f64,
) -> Result<CalibratedPredictor> {
    cuqr_pac_calibrate_with_n_min(mu, rif, partition, cal2, alpha, pac_confidence, 30)
}

pub fn cuqr_pac_calibrate_with_n_min(
    mu: &Model,
    rif: &RifModel,
    partition: &SubgroupPartition,
    cal2: Cal2Slice<'_>,
    alpha: f64,
    pac_confidence: f64,
    n_min: usize,
) -> Result<CalibratedPredictor> {
    let lambda = dkw_lambda(pac_confidence);
    calibrate_nested(Method::CuqrPac, mu, rif, partition, cal2, alpha, lambda, n_min)
}

/// Ablation: fixed per-subgroup half-width from the conformal quantile of the
/// subgroup's absolute residuals; every unit in a subgroup gets the same
/// interval length.
pub fn cq_calibrate(
    mu: &Model,
    partition: &SubgroupPartition,
    cal2: Cal2Slice<'_>,
    alpha: f64,
    n_min: usize,
) -> Result<CalibratedPredictor> {
    if cal2.idx.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let errs = residuals(mu, cal2.ds, cal2.idx)?;
    let (xs, _) = cal2.ds.select(cal2.idx);
    let assignments = partition.assign_all(&xs)?;
    let counts = count_per_group(&assignments, partition.g());
    let global_hw = conformal_quantile(&errs, alpha)?;
    let mut per_group = Vec::with_capacity(partition.g());
    for g in 0..partition.g() {
        let group_errs: Vec<f64> = errs
            .iter()
            .zip(&assignments)
            .filter(|(_, &a)| a == g)
            .map(|(&e, _)| e)
            .collect();
        if group_errs.len() < n_min {
            per_group.push(SubgroupCal {
                n_g: counts[g],
                selection: Selection::HalfWidth(global_hw),
                fallback: true,
                undercoverage_risk: false,
            });
        } else {
            per_group.push(SubgroupCal {
                n_g: counts[g],
                selection: Selection::HalfWidth(conformal_quantile(&group_errs, alpha)?),
                fallback: false,
                undercoverage_risk: false,
            });
        }
    }
    Ok(CalibratedPredictor {
        method: Method::Cq,
        mu: mu.clone(),
        rif: None,
        partition: partition.clone(),
        global: Selection::HalfWidth(global_hw),
        per_group,
        alpha,
        lambda: 0.0,
    })
}

impl CalibratedPredictor {
    /// Half-width of the issued interval at `x` given the subgroup's selection.
    fn half_width_at(&self, selection: Selection, x: &[f64]) -> Result<f64> {
        match selection {
            Selection::HalfWidth(hw) => Ok(hw),
            Selection::BandIndex(k) => {
                let rif = self.rif.as_ref().expect("band selection without a rif model");
                let bands = rif.predict_bands(x)?;
                Ok(bands.half_widths[k - 1])
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<PredictionResult> {
        let g = self.partition.assign(x)?;
        let cal = &self.per_group[g];
        let center = self.mu.predict(x)?;
        let hw = self.half_width_at(cal.selection, x)?;
        Ok(PredictionResult {
            interval: Interval::new(center - hw, center + hw),
            half_width: hw,
            subgroup: g,
            subgroup_centroid: self.partition.centroids[g].clone(),
            guarantee_note: GuaranteeNote { alpha: self.alpha, n_g: cal.n_g, lambda: self.lambda },
        })
    }
}
