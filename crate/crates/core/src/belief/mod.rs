//! Ensemble belief over porosity maps. Porosity readings become hard data
//! honoured by kriging; saturation data move the members through ES-MDA.

mod esmda;
mod update;

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geostat::{FieldGenerator, GeostatError, HardDatum, PorosityField, VariogramParams};
use crate::grid::GridDims;
use crate::rng::{derive_seed, rng_from_seed};

pub use esmda::{esmda_update, EsmdaConfig, EsmdaReport, RIDGE};
pub use update::{update_belief, AssimilationData, UpdateContext, UpdateReport};

pub const DEFAULT_ENSEMBLE_SIZE: usize = 100;

#[derive(Debug, Error)]
pub enum BeliefError {
    #[error("invalid ensemble: {0}")]
    Ensemble(String),
    #[error("invalid ES-MDA configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("observation does not match action: {0}")]
    Protocol(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Geostat(#[from] GeostatError),
    #[error("forward model: {0}")]
    Forward(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefEnsemble {
    members: Vec<PorosityField>,
    hard_data: Vec<HardDatum>,
    weights: Option<Vec<f64>>,
}

impl BeliefEnsemble {
    pub fn new(members: Vec<PorosityField>) -> Result<Self, BeliefError> {
        Self::with_parts(members, Vec::new(), None)
    }

    pub fn with_parts(
        members: Vec<PorosityField>,
        hard_data: Vec<HardDatum>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self, BeliefError> {
        if members.len() < 2 {
            return Err(BeliefError::Ensemble(format!("need at least 2 members, got {}", members.len())));
        }
        let dims = members[0].dims();
        if members.iter().any(|m| m.dims() != dims) {
            return Err(BeliefError::Ensemble("members do not share dims".into()));
        }
        if let Some(w) = &weights {
            check_weights(w, members.len())?;
        }
        Ok(Self {
            members,
            hard_data,
            weights,
        })
    }

    /// `n` unconditional realizations from the variogram model.
    pub fn prior(params: &VariogramParams, dims: GridDims, n: usize, seed: u64) -> Result<Self, BeliefError> {
        let generator = FieldGenerator::new(*params, dims)?;
        let members = (0..n as u64)
            .into_par_iter()
            .map(|m| generator.generate(derive_seed(seed, m)))
            .collect();
        Self::new(members)
    }

    pub fn members(&self) -> &[PorosityField] {
        &self.members
    }

    pub fn hard_data(&self) -> &[HardDatum] {
        &self.hard_data
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn set_weights(&mut self, weights: Option<Vec<f64>>) -> Result<(), BeliefError> {
        if let Some(w) = &weights {
            check_weights(w, self.members.len())?;
        }
        self.weights = weights;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dims(&self) -> GridDims {
        self.members[0].dims()
    }

    fn normalized_weights(&self) -> Vec<f64> {
        match &self.weights {
            Some(w) => w.clone(),
            None => vec![1.0 / self.len() as f64; self.len()],
        }
    }

    /// Weighted per-cell mean.
    pub fn mean_map(&self) -> Vec<f64> {
        let w = self.normalized_weights();
        let mut out = vec![0.0; self.dims().len()];
        for (m, wm) in self.members.iter().zip(&w) {
            for (o, v) in out.iter_mut().zip(m.values()) {
                *o += wm * v;
            }
        }
        out
    }

    /// Unbiased per-cell variance (reliability weights when weights are set).
    pub fn variance_map(&self) -> Vec<f64> {
        let w = self.normalized_weights();
        let mean = self.mean_map();
        let denom = 1.0 - w.iter().map(|x| x * x).sum::<f64>();
        let mut out = vec![0.0; mean.len()];
        if denom <= 0.0 {
            return out;
        }
        for (m, wm) in self.members.iter().zip(&w) {
            for ((o, v), mu) in out.iter_mut().zip(m.values()).zip(&mean) {
                *o += wm * (v - mu) * (v - mu);
            }
        }
        out.iter_mut().for_each(|o| *o /= denom);
        out
    }

    /// Member indices drawn i.i.d. in proportion to the weights.
    pub fn sample_indices(&self, n: usize, seed: u64) -> Vec<usize> {
        let mut rng = rng_from_seed(seed);
        match &self.weights {
            Some(w) => {
                let dist = WeightedIndex::new(w).expect("weights validated");
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
            None => (0..n).map(|_| rng.random_range(0..self.len())).collect(),
        }
    }

    pub fn sample_states(&self, n: usize, seed: u64) -> Vec<PorosityField> {
        self.sample_indices(n, seed)
            .into_iter()
            .map(|i| self.members[i].clone())
            .collect()
    }

    /// Writes each member as a CCSF file plus `manifest.json`.
    pub fn save_checkpoint(&self, dir: &Path, params: &VariogramParams) -> Result<(), BeliefError> {
        let err = |message: String| BeliefError::Checkpoint {
            path: dir.display().to_string(),
            message,
        };
        std::fs::create_dir_all(dir).map_err(|e| err(e.to_string()))?;
        let mut files = Vec::with_capacity(self.len());
        for (n, m) in self.members.iter().enumerate() {
            let name = format!("member_{n:04}.ccsf");
            m.save(&dir.join(&name)).map_err(|e| err(e.to_string()))?;
            files.push(name);
        }
        let manifest = CheckpointManifest {
            dims: self.dims(),
            members: files,
            hard_data: self.hard_data.clone(),
            weights: self.weights.clone(),
            params: *params,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| err(e.to_string()))?;
        std::fs::write(dir.join("manifest.json"), text).map_err(|e| err(e.to_string()))
    }

    pub fn load_checkpoint(dir: &Path) -> Result<(Self, VariogramParams), BeliefError> {
        let err = |message: String| BeliefError::Checkpoint {
            path: dir.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(dir.join("manifest.json")).map_err(|e| err(e.to_string()))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        let members = manifest
            .members
            .iter()
            .map(|f| PorosityField::load(&dir.join(f)).map_err(|e| err(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        if members.iter().any(|m| m.dims() != manifest.dims) {
            return Err(err("member dims disagree with manifest".into()));
        }
        Ok((Self::with_parts(members, manifest.hard_data, manifest.weights)?, manifest.params))
    }
}

fn check_weights(w: &[f64], n: usize) -> Result<(), BeliefError> {
    if w.len() != n {
        return Err(BeliefError::Ensemble(format!("{} weights for {n} members", w.len())));
    }
    if w.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
        return Err(BeliefError::Ensemble("weights must be finite and nonnegative".into()));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(BeliefError::Ensemble(format!("weights sum to {s}, expected 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub dims: GridDims,
    pub members: Vec<String>,
    pub hard_data: Vec<HardDatum>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    pub params: VariogramParams,
}
