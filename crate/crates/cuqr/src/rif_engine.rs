//! Residual-quantile band construction via recentered influence functions:
//! residual quantiles, KDE density with monotonicity repair, the index model
//! g_theta, and the nested band family it induces.

use serde::{Deserialize, Serialize};

use crate::core_types::{Dataset, QuantileGrid, RunConfig};
use crate::error::{Error, Result};
use crate::models::{gbt_fit, GbtParams, Model, Regressor};
use crate::numerics::{empirical_quantile, kde_fit, Kde1d};

/// First calibration half; band construction only ever sees this slice.
pub struct Cal1Slice<'a> {
    pub ds: &'a Dataset,
    pub idx: &'a [usize],
}

/// Absolute residuals |mu(X_i) - Y_i| for the given index set, order preserved.
pub fn residuals(model: &Model, ds: &Dataset, idx: &[usize]) -> Result<Vec<f64>> {
    idx.iter().map(|&i| Ok((model.predict(ds.row(i))? - ds.response()[i]).abs())).collect()
}

/// Influence of a point at `e` on the level-`alpha` quantile `q` when the
/// density there is `f`: (alpha - 1{e <= q}) / f.
pub fn influence_function(e: f64, alpha: f64, q: f64, f: f64) -> Result<f64> {
    if f <= 0.0 {
        return Err(Error::NonpositiveDensity(f));
    }
    let indicator = if e <= q { 1.0 } else { 0.0 };
    Ok((alpha - indicator) / f)
}

/// Left-to-right density repair: a density that rises across consecutive grid
/// levels can reorder the band half-widths, so carry the previous value forward.
pub fn enforce_monotonicity(f_hat: &[f64]) -> Vec<f64> {
    let mut out = f_hat.to_vec();
    for k in 1..out.len() {
        if out[k] > out[k - 1] {
            out[k] = out[k - 1];
        }
    }
    out
}

/// Residual quantiles, repaired densities and the recentered-influence target
/// matrix (rows = residuals, columns = grid levels).
pub fn rif_targets(
    residuals: &[f64],
    grid: &QuantileGrid,
    kde: &Kde1d,
) -> Result<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
    if residuals.len() < grid.k() {
        return Err(Error::TooFewResiduals { needed: grid.k(), got: residuals.len() });
    }
    let q_hat: Vec<f64> =
        grid.levels().iter().map(|&a| empirical_quantile(residuals, a)).collect::<Result<_>>()?;
    let f_raw: Vec<f64> = q_hat.iter().map(|&q| kde.density(q)).collect();
    let f_hat = enforce_monotonicity(&f_raw);
    let mut rif_matrix = Vec::with_capacity(residuals.len());
    for &e in residuals {
        let row: Vec<f64> = grid
            .levels()
            .iter()
            .enumerate()
            .map(|(k, &a)| Ok(q_hat[k] + influence_function(e, a, q_hat[k], f_hat[k])?))
            .collect::<Result<_>>()?;
        rif_matrix.push(row);
    }
    Ok((q_hat, f_hat, rif_matrix))
}

/// Ordinal index targets: smallest 1-indexed k with E_i <= q_hat[k], K when
/// no grid quantile covers the residual.
pub fn fit_index_targets(residuals: &[f64], q_hat: &[f64]) -> Vec<usize> {
    let k_max = q_hat.len() + 1; // = K
    residuals
        .iter()
        .map(|&e| q_hat.iter().position(|&q| e <= q).map(|p| p + 1).unwrap_or(k_max))
        .collect()
}

/// Frozen band-construction state fitted on the first calibration half.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RifModel {
    pub grid: QuantileGrid,
    pub q_hat: Vec<f64>,
    pub f_hat: Vec<f64>,
    pub g_theta: Model,
    pub base: Model,
    /// Half-width of the top band at level 1.0: the maximum absolute
    /// calibration residual. Without it the family would cap at the
    /// (K-1)/K band and every selection past that level would silently
    /// under-cover; the top band keeps the exhaustion path honest.
    pub top_width: f64,
}

/// Per-point nested interval family: center plus non-decreasing half-widths
/// indexed by the grid levels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NestedBandFamily {
    pub center: f64,
    pub half_widths: Vec<f64>,
}

/// Fit the band-construction state on the first calibration half: residuals,
/// KDE, grid quantiles with density repair, and the index model g_theta.
pub fn fit_rif_model(
    mu: &Model,
    cal1: Cal1Slice<'_>,
    grid: &QuantileGrid,
    cfg: &RunConfig,
) -> Result<RifModel> {
    let errs = residuals(mu, cal1.ds, cal1.idx)?;
    if errs.len() < grid.k() {
        return Err(Error::TooFewResiduals { needed: grid.k(), got: errs.len() });
    }
    let kde = kde_fit(&errs, cfg.density_floor)?;
    let (q_hat, f_hat, _) = rif_targets(&errs, grid, &kde)?;
    let k_star = fit_index_targets(&errs, &q_hat);
    let (features, _) = cal1.ds.select(cal1.idx);
    let targets: Vec<f64> = k_star.iter().map(|&k| k as f64).collect();
    let g_params = GbtParams { seed: cfg.seed.wrapping_add(1), ..GbtParams::default() };
    let g_theta = Model::Gbt(gbt_fit(&features, &targets, &g_params)?);
    let top_width = errs.iter().fold(0.0f64, |m, &e| m.max(e));
    Ok(RifModel { grid: grid.clone(), q_hat, f_hat, g_theta, base: mu.clone(), top_width })
}

impl RifModel {
    /// Predicted half-widths |q_hat[k] + (a_k - 1{g(x) <= k}) / f_hat[k]| with
    /// a final cumulative-max clamp, centered at the base model's prediction.
    /// A K-th band at level 1.0 with half-width `top_width` closes the family.
    pub fn predict_bands(&self, x: &[f64]) -> Result<NestedBandFamily> {
        let center = self.base.predict(x)?;
        let g = self.g_theta.predict(x)?;
        let mut half_widths = Vec::with_capacity(self.q_hat.len() + 1);
        let mut running_max = 0.0f64;
        for (k, &a) in self.grid.levels().iter().enumerate() {
            let indicator = if g <= (k + 1) as f64 { 1.0 } else { 0.0 };
            let rif = self.q_hat[k] + (a - indicator) / self.f_hat[k];
            running_max = running_max.max(rif.abs());
            half_widths.push(running_max);
        }
        half_widths.push(running_max.max(self.top_width));
        Ok(NestedBandFamily { center, half_widths })
    }
}
