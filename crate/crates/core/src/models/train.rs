use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    adam_step, AdamState, CensoredModel, CrParams, McNetParams, ModelKind, ModelParams, PcrParams,
    PriceScale,
};
use crate::error::{Error, Result};
use crate::evaluation::anlp_of;
use crate::featurize::Observation;

/// Optimization settings shared by every parametric model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub l2: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub early_stop_min_delta: f64,
    pub seed: u64,
    /// Mixture components (MCNet only).
    pub components: usize,
    /// Hidden width (MCNet only).
    pub hidden: usize,
    /// Stddev of the zero-mean normal initializer.
    pub init_scale: f64,
    /// Fit a [`PriceScale`] to the training prices; otherwise train in raw price units.
    pub scale_prices: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 1024,
            l2: 1e-6,
            max_epochs: 50,
            early_stop_patience: 5,
            early_stop_min_delta: 1e-4,
            seed: 0,
            components: 2,
            hidden: 64,
            init_scale: 0.01,
            scale_prices: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.early_stop_patience == 0 {
            return bad("batch_size, max_epochs and early_stop_patience must be positive");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) || !(self.early_stop_min_delta >= 0.0) {
            return bad("l2 and early_stop_min_delta must be nonnegative");
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return bad("init_scale must be nonnegative");
        }
        if self.components == 0 || self.hidden == 0 {
            return bad("components and hidden must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean regularized loss per record over the epoch's batches.
    pub train_loss: f64,
    pub valid_anlp: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    /// `epoch,train_loss,valid_anlp,seconds`; an unmonitored run leaves `valid_anlp` empty.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,valid_anlp,seconds\n");
        for r in &self.history {
            let valid = r.valid_anlp.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{:.3}\n",
                r.epoch, r.train_loss, valid, r.seconds
            ));
        }
        out
    }
}

/// Mini-batch Adam with early stopping on the training loss.
pub fn train(
    kind: ModelKind,
    train_set: &[Observation],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_monitored(kind, train_set, config, None)
}

/// As [`train`], additionally scoring `valid` after every epoch. The validation
/// score is reported only; it never influences stopping.
pub fn train_monitored(
    kind: ModelKind,
    train_set: &[Observation],
    config: &TrainConfig,
    valid: Option<&[Observation]>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let first = train_set.first().ok_or(Error::EmptyDataset)?;
    let d = first.x.dimension;
    let price = if config.scale_prices {
        PriceScale::fit(train_set)
    } else {
        PriceScale::IDENTITY
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = config.init_scale;
    match kind {
        ModelKind::Cr => {
            let m = CrParams::random(d, init, &mut rng).with_price(price);
            fit(m, train_set, config, valid, rng, ModelParams::Cr)
        }
        ModelKind::Pcr => {
            let m = PcrParams::random(d, init, &mut rng).with_price(price);
            fit(m, train_set, config, valid, rng, ModelParams::Pcr)
        }
        ModelKind::McNet => {
            let mut m = McNetParams::random(d, config.hidden, config.components, init, &mut rng)?;
            m.spread_component_means();
            m.price = price;
            fit(m, train_set, config, valid, rng, ModelParams::McNet)
        }
        other => Err(Error::InvalidArgument(format!(
            "{other} is not trained by gradient descent"
        ))),
    }
}

fn fit<M: CensoredModel>(
    mut model: M,
    train_set: &[Observation],
    config: &TrainConfig,
    valid: Option<&[Observation]>,
    mut rng: ChaCha8Rng,
    wrap: fn(M) -> ModelParams,
) -> Result<TrainOutcome> {
    let mut data = train_set.to_vec();
    let n = data.len() as f64;
    let mut adam = AdamState::new(model.values().len());
    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let started = Instant::now();

    for epoch in 1..=config.max_epochs {
        data.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in data.chunks(config.batch_size) {
            let (loss, grad) = model.negloglik(batch, config.l2)?;
            total += loss;
            adam_step(model.values_mut(), &grad, &mut adam, config.learning_rate);
        }
        let train_loss = total / n;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite {
                index: epoch,
                what: "epoch loss",
            });
        }
        let valid_anlp = match valid {
            Some(v) if !v.is_empty() => {
                let snapshot = wrap(model.clone());
                Some(anlp_of(&snapshot, v)?.anlp)
            }
            _ => None,
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            valid_anlp,
            seconds: started.elapsed().as_secs_f64(),
        });
        log::debug!("epoch {epoch}: train loss {train_loss:.6}");

        if train_loss < best - config.early_stop_min_delta {
            best = train_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.early_stop_patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: wrap(model),
        history,
    })
}
