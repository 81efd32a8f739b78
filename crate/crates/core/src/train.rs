//! Deterministic training loop.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::random::{derive_seed, rng_from_seed};
use crate::autodiff::{AdamW, LrSchedule, Tape, TensorError};
use crate::batch::TextBatch;
use crate::config::{RunConfig, RunConfigError};
use crate::model::{Mode, TextGroupModel};
use crate::objectives::{total_loss, ImageBatch, LossBreakdown};
use crate::world::vocab::PAD;
use crate::world::Example;

/// Mean losses over one epoch, written as one JSON line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub lr: f64,
    pub l_i2t: f64,
    pub l_t2i: f64,
    pub l_contrastive: f64,
    pub l_reconstruction: f64,
    pub l_total: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] RunConfigError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite loss at step {step}; last finite losses: {last:?}")]
    NonFinite { step: u64, last: Option<LossBreakdown> },
    #[error("{0}")]
    Callback(String),
}

/// A model plus its optimizer state, advanced one epoch at a time.
pub struct Trainer {
    pub config: RunConfig,
    pub model: TextGroupModel,
    optimizer: AdamW,
    schedule: LrSchedule,
    epoch: usize,
    last_finite: Option<LossBreakdown>,
}

/// Builds one batch from `examples[idx]`.
pub fn make_batch(examples: &[Example], idx: &[usize]) -> (TextBatch, ImageBatch) {
    let seqs: Vec<Vec<usize>> = idx.iter().map(|&i| examples[i].caption.tokens.clone()).collect();
    let spans = idx.iter().map(|&i| examples[i].caption.gold_spans.clone()).collect();
    let first = &examples[idx[0]].image_groups;
    let data = idx.iter().flat_map(|&i| examples[i].image_groups.to_f64()).collect();
    (
        TextBatch::new(&seqs, PAD, spans),
        ImageBatch::new(data, idx.len(), first.n_groups, first.dim),
    )
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let mut model = TextGroupModel::new(config.encoder.clone(), config.seeds.init)
            .map_err(|e| RunConfigError(e.0))?;
        let mut frozen = vec![];
        if config.ablation.disable_contrastive {
            frozen.extend(model.projector_params());
        }
        if config.ablation.disable_reconstruction {
            frozen.extend(model.decoder_only_params());
        }
        for id in frozen {
            model.params.set_frozen(id, true);
        }
        let optimizer = AdamW::new(config.optimizer.adamw(), &model.params);
        let steps = config.steps_per_epoch() as f64;
        let o = &config.optimizer;
        let schedule = LrSchedule {
            peak: o.lr,
            warmup_steps: (o.warmup_epochs * steps).round() as u64,
            total_steps: (o.total_epochs as f64 * steps) as u64,
            cosine: o.cosine_decay,
        };
        Ok(Self {
            config,
            model,
            optimizer,
            schedule,
            epoch: 0,
            last_finite: None,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn steps_taken(&self) -> u64 {
        self.optimizer.steps_taken()
    }

    /// One pass over `train` in a shuffled order fixed by the data seed
    /// and the epoch index.
    pub fn run_epoch(&mut self, train: &[Example]) -> Result<EpochLog, TrainError> {
        let n = train.len().min(self.config.data.n_train);
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = rng_from_seed(derive_seed(self.config.seeds.data, self.epoch as u64));
        order.shuffle(&mut rng);
        let weights = self.config.loss_weights();
        let mut sums = [0.0; 5];
        let mut batches = 0usize;
        let mut lr = 0.0;
        for idx in order.chunks(self.config.batch_size).filter(|c| c.len() >= 2) {
            let step = self.optimizer.steps_taken();
            let (text, images) = make_batch(train, idx);
            let tape = Tape::new();
            let p = self.model.params.bind(&tape);
            let mode = Mode::Train {
                seed: derive_seed(self.config.seeds.gumbel, step),
            };
            let out = total_loss(&self.model, &p, &text, &images, &weights, mode)?;
            let b = out.breakdown;
            if !b.l_total.is_finite() {
                return Err(TrainError::NonFinite {
                    step,
                    last: self.last_finite,
                });
            }
            self.last_finite = Some(b);
            let mut grads = tape.backward(&out.total)?;
            let grads = p.collect_grads(&mut grads);
            lr = self.schedule.at(step);
            self.optimizer.step(&mut self.model.params, &grads, lr)?;
            for (s, v) in sums
                .iter_mut()
                .zip([b.l_i2t, b.l_t2i, b.l_contrastive, b.l_reconstruction, b.l_total])
            {
                *s += v;
            }
            batches += 1;
        }
        let m = 1.0 / batches.max(1) as f64;
        let log = EpochLog {
            epoch: self.epoch,
            step: self.optimizer.steps_taken(),
            lr,
            l_i2t: sums[0] * m,
            l_t2i: sums[1] * m,
            l_contrastive: sums[2] * m,
            l_reconstruction: sums[3] * m,
            l_total: sums[4] * m,
        };
        self.epoch += 1;
        Ok(log)
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn fit<F>(&mut self, train: &[Example], mut on_epoch: F) -> Result<Vec<EpochLog>, TrainError>
    where
        F: FnMut(&Trainer, &EpochLog) -> Result<(), String>,
    {
        let mut logs = vec![];
        while self.epoch < self.config.optimizer.total_epochs {
            let log = self.run_epoch(train)?;
            on_epoch(self, &log).map_err(TrainError::Callback)?;
            logs.push(log);
        }
        Ok(logs)
    }
}
