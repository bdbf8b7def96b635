//! Staged training: image-only warm-up, then all-media training with
//! classification + center constraints, then all three constraints.
//! The learning rate halves every three epochs across the whole run.

mod log;
mod state;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use self::log::{read_log_csv, write_log_csv, LogRow, LOG_HEADER};

use crate::encoding::{EncodedInput, EncodedItem};
use crate::error::{Error, Result};
use crate::media::Media;
use crate::model::{Input, Model, ParameterSet};
use crate::objective::{total_loss, BatchOutputs, CenterTable, LossBreakdown, ObjectiveConfig, TermMask};
use crate::sampler::{Batch, BatchKind, DatasetIndex, QuadrupletSampler, SampleRef, SamplerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub name: String,
    pub batches: BatchKind,
    pub terms: TermMask,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub stages: Vec<StageConfig>,
    pub learning_rate: f64,
    pub lr_decay: f64,
    /// Epochs between decays.
    pub decay_every: usize,
    pub momentum: f64,
    pub quadruplets_per_batch: usize,
    /// Sampled batches per epoch.
    pub steps_per_epoch: usize,
    pub seed: u64,
    /// Write a state checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub sampler: SamplerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stages: vec![
                StageConfig {
                    name: "warmup".into(),
                    batches: BatchKind::ImagesOnly,
                    terms: TermMask::CLS,
                    epochs: 3,
                },
                StageConfig {
                    name: "cls+cen".into(),
                    batches: BatchKind::Quadruplets,
                    terms: TermMask::CLS_CEN,
                    epochs: 3,
                },
                StageConfig {
                    name: "full".into(),
                    batches: BatchKind::Quadruplets,
                    terms: TermMask::ALL,
                    epochs: 6,
                },
            ],
            learning_rate: 0.001,
            lr_decay: 0.5,
            decay_every: 3,
            momentum: 0.9,
            quadruplets_per_batch: 8,
            steps_per_epoch: 120,
            seed: 1,
            checkpoint_every: 0,
            sampler: SamplerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("at least one training stage is required".into()));
        }
        if let Some(s) = self.stages.iter().find(|s| s.epochs == 0) {
            return Err(Error::Config(format!("stage `{}` has zero epochs", s.name)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.lr_decay > 0.0) || self.decay_every == 0 {
            return Err(Error::Config("lr decay factor and interval must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if self.quadruplets_per_batch == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Config("batch size and steps per epoch must be positive".into()));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.stages.iter().map(|s| s.epochs).sum()
    }

    /// `learning_rate * lr_decay ^ floor(epoch / decay_every)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }

    /// Stage index active during `epoch`.
    pub fn stage_at(&self, epoch: usize) -> Option<usize> {
        let mut end = 0;
        for (i, s) in self.stages.iter().enumerate() {
            end += s.epochs;
            if epoch < end {
                return Some(i);
            }
        }
        None
    }

    /// Same run with every non-warm-up stage restricted to `terms`.
    pub fn with_terms(&self, terms: TermMask) -> TrainConfig {
        let mut cfg = self.clone();
        for s in &mut cfg.stages {
            if s.batches == BatchKind::Quadruplets {
                s.terms = TermMask {
                    cls: s.terms.cls && terms.cls,
                    cen: s.terms.cen && terms.cen,
                    rank: s.terms.rank && terms.rank,
                };
            }
        }
        cfg
    }

    fn resume_hash(&self, objective: &ObjectiveConfig) -> u64 {
        let mut c = self.clone();
        c.checkpoint_every = 0;
        let bytes = serde_json::to_vec(&(c, objective)).expect("config serializes");
        u64::from_le_bytes(Sha256::digest(&bytes)[..8].try_into().unwrap())
    }
}

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model<f32>,
    pub centers: CenterTable,
    pub velocity: ParameterSet<f32>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed steps.
    pub step: usize,
}

impl TrainState {
    pub fn new(model: Model<f32>) -> Self {
        let cfg = model.config();
        let centers = CenterTable::zeros(cfg.classes, cfg.feature_dim);
        let velocity = model.params().zeros_like();
        TrainState {
            model,
            centers,
            velocity,
            epoch: 0,
            step: 0,
        }
    }

    /// SHA-256 over parameters, centers, optimizer state and counters.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for set in [self.model.params(), &self.velocity] {
            for b in set.blocks() {
                h.update(b.name.as_bytes());
                for v in &b.data {
                    h.update(v.to_le_bytes());
                }
            }
        }
        for v in self.centers.as_slice() {
            h.update(v.to_le_bytes());
        }
        h.update((self.epoch as u64).to_le_bytes());
        h.update((self.step as u64).to_le_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One network input materialized from a [`SampleRef`].
enum Unit<'a> {
    Grid(&'a [f32]),
    Text(Vec<Option<usize>>),
}

impl Unit<'_> {
    fn input(&self) -> Input<'_, f32> {
        match self {
            Unit::Grid(g) => Input::Grid(g),
            Unit::Text(t) => Input::Text(t),
        }
    }
}

fn materialize<'a>(items: &'a [EncodedItem], r: &SampleRef) -> Unit<'a> {
    match &items[r.item].input {
        EncodedInput::Grid(g) => Unit::Grid(&g.data),
        EncodedInput::Frames(f) => Unit::Grid(&f[r.frame].data),
        EncodedInput::Text(t) => {
            let mut t = t.clone();
            if !t.is_empty() {
                let k = r.shift % t.len();
                t.rotate_left(k);
            }
            Unit::Text(t)
        }
    }
}

/// Drives a [`TrainState`] through the configured stages.
pub struct Trainer<'a> {
    config: TrainConfig,
    objective: ObjectiveConfig,
    items: &'a [EncodedItem],
    sampler: QuadrupletSampler,
    state: TrainState,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, objective: ObjectiveConfig, model: Model<f32>, items: &'a [EncodedItem]) -> Result<Self> {
        config.validate()?;
        objective.validate()?;
        let classes = model.config().classes;
        let index = DatasetIndex::new(items, classes)?;
        if config.stages.iter().any(|s| s.batches == BatchKind::Quadruplets) {
            index.check_feasible()?;
        }
        let sampler = QuadrupletSampler::new(index, config.sampler, config.seed);
        Ok(Trainer {
            config,
            objective,
            items,
            sampler,
            state: TrainState::new(model),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn is_finished(&self) -> bool {
        self.state.epoch >= self.config.total_epochs()
    }

    /// One SGD-with-momentum update on `batch` followed by the center
    /// update. The state is left untouched if the loss is not finite.
    pub fn step(&mut self, batch: &Batch, lr: f64, terms: TermMask) -> Result<LossBreakdown> {
        if batch.samples.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let items = self.items;
        let model = &self.state.model;
        let units: Vec<Unit<'_>> = batch.samples.iter().map(|r| materialize(items, r)).collect();
        let traces = units
            .par_iter()
            .map(|u| model.forward(u.input()))
            .collect::<Result<Vec<_>>>()?;

        let features: Vec<Vec<f64>> = traces
            .iter()
            .map(|t| t.feature().iter().map(|&v| v as f64).collect())
            .collect();
        let logits: Vec<Vec<f64>> = traces
            .iter()
            .map(|t| t.logits().iter().map(|&v| v as f64).collect())
            .collect();
        let media: Vec<Media> = batch.samples.iter().map(|r| items[r.item].media).collect();
        let labels: Vec<usize> = batch.samples.iter().map(|r| items[r.item].label).collect();
        let outputs = BatchOutputs {
            features: &features,
            logits: &logits,
            media: &media,
            labels: &labels,
            quads: &batch.quads,
        };
        let (loss, grads) = total_loss(&outputs, &self.state.centers, &self.objective, terms)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss at step {} (epoch {}): {loss:?}",
                self.state.step, self.state.epoch
            )));
        }

        let per_unit = traces
            .par_iter()
            .enumerate()
            .map(|(n, tr)| {
                let gf: Vec<f32> = grads.features[n].iter().map(|&v| v as f32).collect();
                let gl: Vec<f32> = grads.logits[n].iter().map(|&v| v as f32).collect();
                let mut g = model.params().zeros_like();
                model.backward(tr, &gf, &gl, &mut g)?;
                Ok(g)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut total = model.params().zeros_like();
        for g in &per_unit {
            total.add_assign(g);
        }
        if !total.all_finite() {
            return Err(Error::Numerical(format!("non-finite gradient at step {}", self.state.step)));
        }

        let (mu, lr) = (self.config.momentum as f32, lr as f32);
        let state = &mut self.state;
        for ((p, v), g) in state
            .model
            .params_mut()
            .blocks_mut()
            .iter_mut()
            .zip(state.velocity.blocks_mut())
            .zip(total.blocks())
        {
            for ((pv, vv), &gv) in p.data.iter_mut().zip(v.data.iter_mut()).zip(&g.data) {
                *vv = mu * *vv + gv;
                *pv -= lr * *vv;
            }
        }
        state.centers.update(&features, &labels, self.objective.center_momentum)?;
        state.step += 1;
        Ok(loss)
    }

    /// Runs one full epoch and returns its log rows.
    pub fn run_epoch(&mut self) -> Result<Vec<LogRow>> {
        let epoch = self.state.epoch;
        let stage_idx = self
            .config
            .stage_at(epoch)
            .ok_or_else(|| Error::Config(format!("epoch {epoch} is past the last stage")))?;
        let stage = self.config.stages[stage_idx].clone();
        let lr = self.config.lr_at(epoch);
        let mut rows = Vec::with_capacity(self.config.steps_per_epoch);
        for _ in 0..self.config.steps_per_epoch {
            let batch = self.sampler.next_batch(stage.batches, self.config.quadruplets_per_batch)?;
            let loss = self.step(&batch, lr, stage.terms)?;
            rows.push(LogRow {
                step: self.state.step,
                epoch,
                stage: stage.name.clone(),
                lr,
                loss,
            });
        }
        self.state.epoch += 1;
        Ok(rows)
    }

    /// Runs until `epoch_limit` epochs are complete (or the schedule ends),
    /// calling `after_epoch` after each one.
    pub fn run_until(
        &mut self,
        epoch_limit: usize,
        mut after_epoch: impl FnMut(&Trainer<'a>, &[LogRow]) -> Result<()>,
    ) -> Result<Vec<LogRow>> {
        let end = epoch_limit.min(self.config.total_epochs());
        let mut log = Vec::new();
        while self.state.epoch < end {
            let rows = self.run_epoch()?;
            after_epoch(self, &rows)?;
            log.extend(rows);
        }
        Ok(log)
    }

    /// Runs every remaining epoch.
    pub fn run(&mut self) -> Result<Vec<LogRow>> {
        self.run_until(usize::MAX, |_, _| Ok(()))
    }
}

/// Fraction of `items` whose logits (frame-averaged for videos) rank the
/// true label first.
pub fn accuracy(model: &Model<f32>, items: &[EncodedItem]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let correct = items
        .par_iter()
        .map(|it| {
            let (_, logits) = crate::retrieval::embed_item(model, it)?;
            let best = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i);
            Ok(usize::from(best == Some(it.label)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(correct.iter().sum::<usize>() as f64 / items.len() as f64)
}
