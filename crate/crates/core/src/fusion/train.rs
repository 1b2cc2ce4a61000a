//! Mini-batch training of the fusion head with Adam and a one-step
//! learning-rate decay.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::layout::ConcatLayout;
use super::loss::LossKind;
use super::mlp::Activation;
use super::model::{FusionModel, InputNorm, VideoInput};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_decay_factor: f64,
    /// 0-based epoch from which the decayed rate applies.
    pub lr_decay_epoch: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            batch_size: 6,
            epochs: 30,
            lr_decay_factor: 10.0,
            lr_decay_epoch: 10,
            adam: AdamConfig::default(),
            seed: 0,
            loss: LossKind::Plcc,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return bad("lr_decay_factor must be positive");
        }
        if self.lr_decay_epoch > self.epochs {
            return bad("lr_decay_epoch must not exceed epochs");
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 {
            return bad("adam betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }

    /// Learning rate in force during `epoch` (0-based).
    pub fn effective_lr(&self, epoch: usize) -> f64 {
        if epoch >= self.lr_decay_epoch {
            self.learning_rate / self.lr_decay_factor
        } else {
            self.learning_rate
        }
    }
}

/// Architecture choices for the head.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadConfig {
    pub hidden: usize,
    pub activation: Activation,
    /// Attention heads for token-grid sources; `None` disables pooling.
    pub mhsa_heads: Option<usize>,
    /// Standardise fused inputs with training-set statistics.
    pub standardize: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            activation: Activation::Relu,
            mhsa_heads: None,
            standardize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub batches: usize,
    /// Batches skipped because their labels were constant (correlation
    /// losses only) or because fewer than two videos remained.
    pub skipped: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: FusionModel,
    pub trace: Vec<EpochStats>,
}

pub struct Sample<'a> {
    pub input: &'a VideoInput,
    pub mos: f64,
}

pub fn train(
    samples: &[Sample<'_>],
    layout: &ConcatLayout,
    head: &HeadConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "training needs at least 2 videos, got {}",
            samples.len()
        )));
    }
    if let Some(s) = samples.iter().find(|s| !s.mos.is_finite()) {
        return Err(Error::NonFinite(format!("MOS label {}", s.mos)));
    }
    let mut model = FusionModel::init(layout.clone(), head.hidden, head.activation, head.mhsa_heads, cfg.seed)?;
    if head.standardize {
        model.norm = InputNorm::fit(samples.iter().map(|s| s.input), layout);
    }
    let mut params = model.parameters();
    let mut state = AdamState::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.effective_lr(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        let mut skipped = 0;
        for idx in order.chunks(cfg.batch_size) {
            if idx.len() < 2 {
                skipped += 1;
                continue;
            }
            let batch: Vec<(&VideoInput, f64)> = idx.iter().map(|&k| (samples[k].input, samples[k].mos)).collect();
            if cfg.loss == LossKind::Plcc && batch.iter().all(|(_, y)| *y == batch[0].1) {
                log::warn!("epoch {epoch}: skipping batch with constant labels");
                skipped += 1;
                continue;
            }
            let (loss, grads) = model.backprop(&batch, cfg.loss)?;
            adam_step(&mut params, &grads, &mut state, lr, &cfg.adam)?;
            model.set_parameters(&params)?;
            loss_sum += loss;
            batches += 1;
        }
        let mean_loss = if batches > 0 { loss_sum / batches as f64 } else { f64::NAN };
        log::debug!("epoch {epoch}: lr {lr:e} loss {mean_loss:.6} ({batches} batches, {skipped} skipped)");
        trace.push(EpochStats {
            epoch,
            lr,
            mean_loss,
            batches,
            skipped,
        });
    }
    Ok(TrainOutcome { model, trace })
}
