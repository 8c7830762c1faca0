//! End-to-end orchestration of the full procedure: split, standardize, fit
//! the base model, partition, fit the band construction on the first
//! calibration half and calibrate on the second. Also owns the versioned
//! model JSON artifact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conformal::{
    cq_calibrate, cuqr_calibrate, cuqr_pac_calibrate_with_n_min, split_cp_calibrate, Cal2Slice,
    CalibratedPredictor, Method,
};
use crate::core_types::{
    split_dataset, standardize, BaseModel, DataSplit, Dataset, QuantileGrid, RunConfig,
    ScalerParams,
};
use crate::error::{Error, Result};
use crate::models::{gbt_fit, knn_fit, GbtParams, Model};
use crate::partition::kmeans_fit;
use crate::rif_engine::{fit_rif_model, Cal1Slice};

pub const MODEL_FORMAT_VERSION: u32 = 1;

const KNN_DEFAULT_K: usize = 10;

/// Self-describing persisted model: everything predict/evaluate needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub version: u32,
    pub method: Method,
    pub config: RunConfig,
    pub scaler: ScalerParams,
    pub column_names: Vec<String>,
    pub response_name: String,
    pub predictor: CalibratedPredictor,
    pub split: DataSplit,
    /// Where the training CSV lived at fit time, for later evaluation.
    pub data_path: Option<String>,
}

impl ModelArtifact {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path)?;
        let artifact: ModelArtifact = serde_json::from_str(&json)?;
        if artifact.version != MODEL_FORMAT_VERSION {
            return Err(Error::SchemaMismatch(format!(
                "model format version {} (expected {})",
                artifact.version, MODEL_FORMAT_VERSION
            )));
        }
        Ok(artifact)
    }
}

/// A fitted pipeline plus the standardized dataset it was fitted on.
pub struct FittedPipeline {
    pub artifact: ModelArtifact,
    pub std_ds: Dataset,
}

pub fn fit_base_model(ds: &Dataset, train_idx: &[usize], cfg: &RunConfig) -> Result<Model> {
    let (xs, ys) = ds.select(train_idx);
    match cfg.base_model {
        BaseModel::Gbt => {
            let params = GbtParams { seed: cfg.seed, ..GbtParams::default() };
            Ok(Model::Gbt(gbt_fit(&xs, &ys, &params)?))
        }
        BaseModel::Knn => {
            let k = KNN_DEFAULT_K.min(xs.len());
            Ok(Model::Knn(knn_fit(&xs, &ys, k)?))
        }
    }
}

/// Run the whole fitting procedure on a raw dataset.
pub fn fit_pipeline(ds: &Dataset, cfg: &RunConfig, method: Method) -> Result<FittedPipeline> {
    cfg.validate()?;
    let split = split_dataset(ds, cfg)?;
    let (std_ds, scaler) = standardize(ds, &split.train_idx)?;
    let mu = fit_base_model(&std_ds, &split.train_idx, cfg)?;
    let (train_features, _) = std_ds.select(&split.train_idx);
    let partition = kmeans_fit(&train_features, cfg.groups, cfg.seed)?;

    let predictor = match method {
        Method::SplitCp => {
            let cal = split.cal_idx();
            split_cp_calibrate(&mu, &partition, Cal2Slice { ds: &std_ds, idx: &cal }, cfg.alpha)?
        }
        Method::Cq => cq_calibrate(
            &mu,
            &partition,
            Cal2Slice { ds: &std_ds, idx: &split.cal2_idx },
            cfg.alpha,
            cfg.n_min,
        )?,
        Method::Cuqr | Method::CuqrPac => {
            let grid = QuantileGrid::new(cfg.grid_size)?;
            let rif =
                fit_rif_model(&mu, Cal1Slice { ds: &std_ds, idx: &split.cal1_idx }, &grid, cfg)?;
            let cal2 = Cal2Slice { ds: &std_ds, idx: &split.cal2_idx };
            if method == Method::Cuqr {
                cuqr_calibrate(&mu, &rif, &partition, cal2, cfg.alpha, cfg.n_min)?
            } else {
                cuqr_pac_calibrate_with_n_min(
                    &mu,
                    &rif,
                    &partition,
                    cal2,
                    cfg.alpha,
                    cfg.pac_confidence,
                    cfg.n_min,
                )?
            }
        }
    };

    let artifact = ModelArtifact {
        version: MODEL_FORMAT_VERSION,
        method,
        config: cfg.clone(),
        scaler,
        column_names: ds.column_names().to_vec(),
        response_name: ds.response_name().to_string(),
        predictor,
        split,
        data_path: None,
    };
    Ok(FittedPipeline { artifact, std_ds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{generate, SyntheticSpec};

    fn spec(n: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec { n, d: 2, noise_base: 0.5, noise_slope: 2.0, seed }
    }

    #[test]
    fn pipeline_runs_all_methods() {
        let ds = generate(&spec(400, 3)).unwrap();
        let cfg = RunConfig { groups: 4, seed: 3, ..RunConfig::default() };
        for method in [Method::SplitCp, Method::Cuqr, Method::CuqrPac, Method::Cq] {
            let fitted = fit_pipeline(&ds, &cfg, method).unwrap();
            let x = fitted.std_ds.row(fitted.artifact.split.test_idx[0]);
            let r = fitted.artifact.predictor.predict(x).unwrap();
            assert!(r.interval.lo <= r.interval.hi);
            assert!(r.subgroup < 4);
        }
    }

    #[test]
    fn artifact_round_trip_preserves_predictions() {
        let ds = generate(&spec(300, 9)).unwrap();
        let cfg = RunConfig { groups: 3, seed: 9, ..RunConfig::default() };
        let fitted = fit_pipeline(&ds, &cfg, Method::Cuqr).unwrap();
        let tmp = tempfile::NamedTempFile::new().unwrap();
        fitted.artifact.save(tmp.path()).unwrap();
        let back = ModelArtifact::load(tmp.path()).unwrap();
        for &i in fitted.artifact.split.test_idx.iter().take(20) {
            let x = fitted.std_ds.row(i);
            assert_eq!(
                fitted.artifact.predictor.predict(x).unwrap().interval,
                back.predictor.predict(x).unwrap().interval
            );
        }
    }

    #[test]
    fn pipeline_deterministic() {
        let ds = generate(&spec(300, 4)).unwrap();
        let cfg = RunConfig { groups: 3, seed: 4, ..RunConfig::default() };
        let a = fit_pipeline(&ds, &cfg, Method::CuqrPac).unwrap();
        let b = fit_pipeline(&ds, &cfg, Method::CuqrPac).unwrap();
        assert_eq!(
            serde_json::to_string(&a.artifact).unwrap(),
            serde_json::to_string(&b.artifact).unwrap()
        );
    }

    #[test]
    fn version_mismatch_rejected() {
        let ds = generate(&spec(300, 5)).unwrap();
        let cfg = RunConfig { groups: 2, seed: 5, ..RunConfig::default() };
        let fitted = fit_pipeline(&ds, &cfg, Method::SplitCp).unwrap();
        let mut value = serde_json::to_value(&fitted.artifact).unwrap();
        value["version"] = serde_json::json!(99);
        let tmp = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(tmp.path(), serde_json::to_string(&value).unwrap()).unwrap();
        assert!(matches!(ModelArtifact::load(tmp.path()), Err(Error::SchemaMismatch(_))));
    }
}
