//! Censored maximum-likelihood landscape models.
//!
//! * [`CrParams`]: one Gaussian, location linear in the features, one global stddev.
//! * [`PcrParams`]: as CR but with a per-record stddev `exp(αᵀx)`.
//! * [`McNetParams`]: a one-hidden-layer network emitting a `K`-component mixture.
//!
//! All three are trained on the same objective: log density of the winning
//! price for won auctions and log survival at the bid for lost ones.

mod adam;
mod heads;
mod linear;
mod mcnet;
mod train;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState};
pub use linear::{cr_negloglik, pcr_negloglik, CrParams, PcrParams};
pub use mcnet::{mcnet_forward, mcnet_negloglik, McNetParams, SIGMA_MAX, SIGMA_MIN};
pub use train::{train, train_monitored, EpochRecord, TrainConfig, TrainOutcome};

use crate::dist::GaussianMixture;
use crate::error::{Error, Result};
use crate::featurize::{FeatureVector, Observation};

/// Every landscape estimator the crate knows how to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cr,
    Pcr,
    McNet,
    Km,
    Rs,
    Oracle,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Cr => "cr",
            ModelKind::Pcr => "pcr",
            ModelKind::McNet => "mcnet",
            ModelKind::Km => "km",
            ModelKind::Rs => "rs",
            ModelKind::Oracle => "oracle",
        }
    }

    pub fn is_parametric(self) -> bool {
        matches!(self, ModelKind::Cr | ModelKind::Pcr | ModelKind::McNet)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "cr" => ModelKind::Cr,
            "pcr" | "p-cr" => ModelKind::Pcr,
            "mcnet" => ModelKind::McNet,
            "km" => ModelKind::Km,
            "rs" => ModelKind::Rs,
            "oracle" => ModelKind::Oracle,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown model kind {other:?}"
                )))
            }
        })
    }
}

/// Affine map from the models' internal location units to prices:
/// `price = offset + scale·z`, `σ_price = scale·σ_z`.
///
/// The likelihood is always evaluated on prices; the map only conditions
/// the optimization. The identity map leaves every formula in price units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceScale {
    pub offset: f64,
    pub scale: f64,
}

impl Default for PriceScale {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl PriceScale {
    pub const IDENTITY: PriceScale = PriceScale {
        offset: 0.0,
        scale: 1.0,
    };

    /// Centre and spread of observed winning prices (bids when nothing was won).
    pub fn fit(data: &[Observation]) -> Self {
        let wins: Vec<f64> = data
            .iter()
            .filter_map(|o| o.winning_price)
            .map(f64::from)
            .collect();
        let sample: Vec<f64> = if wins.len() >= 2 {
            wins
        } else {
            data.iter().map(|o| f64::from(o.bid_price)).collect()
        };
        if sample.is_empty() {
            return Self::IDENTITY;
        }
        let n = sample.len() as f64;
        let mean = sample.iter().sum::<f64>() / n;
        let var = sample.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            offset: mean,
            scale: var.sqrt().max(1.0),
        }
    }

    #[inline]
    pub fn price(&self, z: f64) -> f64 {
        self.offset + self.scale * z
    }

    #[inline]
    pub fn log_scale(&self) -> f64 {
        self.scale.ln()
    }
}

/// Common surface of the trainable models.
pub trait CensoredModel: Clone + Send + Sync + Sized {
    fn kind(&self) -> ModelKind;
    fn dimension(&self) -> usize;
    /// Flat trainable parameters.
    fn values(&self) -> &[f64];
    fn values_mut(&mut self) -> &mut [f64];
    /// Regularized censored negative log-likelihood summed over `batch`, and
    /// its gradient in the layout of [`CensoredModel::values`].
    fn negloglik(&self, batch: &[Observation], l2: f64) -> Result<(f64, Vec<f64>)>;
    fn predict(&self, x: &FeatureVector) -> Result<GaussianMixture>;
}

/// Any fitted parametric model.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Cr(CrParams),
    Pcr(PcrParams),
    McNet(McNetParams),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Cr(p) => p.kind(),
            ModelParams::Pcr(p) => p.kind(),
            ModelParams::McNet(p) => p.kind(),
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            ModelParams::Cr(p) => p.dimension(),
            ModelParams::Pcr(p) => p.dimension(),
            ModelParams::McNet(p) => p.dimension(),
        }
    }

    pub fn predict(&self, x: &FeatureVector) -> Result<GaussianMixture> {
        match self {
            ModelParams::Cr(p) => p.predict(x),
            ModelParams::Pcr(p) => p.predict(x),
            ModelParams::McNet(p) => p.predict(x),
        }
    }

    pub fn negloglik(&self, batch: &[Observation], l2: f64) -> Result<(f64, Vec<f64>)> {
        match self {
            ModelParams::Cr(p) => p.negloglik(batch, l2),
            ModelParams::Pcr(p) => p.negloglik(batch, l2),
            ModelParams::McNet(p) => p.negloglik(batch, l2),
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            ModelParams::Cr(p) => p.values(),
            ModelParams::Pcr(p) => p.values(),
            ModelParams::McNet(p) => p.values(),
        }
    }
}

/// Free-function form of [`ModelParams::predict`].
pub fn predict(params: &ModelParams, x: &FeatureVector) -> Result<GaussianMixture> {
    params.predict(x)
}

pub(crate) fn check_dimension(x: &FeatureVector, expected: usize) -> Result<()> {
    if x.dimension != expected || x.active.last().is_some_and(|&j| j as usize >= expected) {
        return Err(Error::DimensionMismatch {
            expected,
            got: x.dimension,
        });
    }
    Ok(())
}

/// Records per shard; fixed so the reduction order never depends on thread count.
const SHARD: usize = 256;

/// Sums `per_record` over `batch` in fixed-size shards, folding shard results in
/// order. `per_record` adds its gradient into the buffer and returns its loss.
pub(crate) fn sharded_sum<F>(
    batch: &[Observation],
    n_params: usize,
    dimension: usize,
    per_record: F,
) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&Observation, &mut [f64]) -> f64 + Sync,
{
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let shards: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_chunks(SHARD)
        .enumerate()
        .map(|(s, chunk)| {
            let mut grad = vec![0.0; n_params];
            let mut loss = 0.0;
            for (i, obs) in chunk.iter().enumerate() {
                let index = s * SHARD + i;
                check_dimension(&obs.x, dimension)?;
                let l = per_record(obs, &mut grad);
                if !l.is_finite() {
                    return Err(Error::NonFinite {
                        index,
                        what: "loss",
                    });
                }
                loss += l;
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    index: s * SHARD,
                    what: "gradient",
                });
            }
            Ok((loss, grad))
        })
        .collect();

    let mut total = 0.0;
    let mut grad = vec![0.0; n_params];
    for shard in shards {
        let (l, g) = shard?;
        total += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((total, grad))
}
