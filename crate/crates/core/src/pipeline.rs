//! End-to-end helpers shared by the command line and the test suites:
//! encode a dataset, train a model, embed and evaluate.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::config::RunConfig;
use crate::encoding::{ChannelStats, EncodedItem, EncoderConfig, MediaEncoder};
use crate::error::{Error, Result};
use crate::eval::{full_report, EvalReport};
use crate::media::MediaInstance;
use crate::model::checkpoint::{load_model, save_model};
use crate::model::Model;
use crate::retrieval::{embed_items, EmbeddingStore};
use crate::train::{LogRow, TrainState, Trainer};

/// Class count implied by the labels.
pub fn infer_classes(instances: &[MediaInstance]) -> usize {
    instances.iter().map(|i| i.label + 1).max().unwrap_or(0)
}

/// Encoded items plus the ids that failed to encode.
pub struct EncodedDataset {
    pub encoder: MediaEncoder,
    pub items: Vec<EncodedItem>,
    pub failures: Vec<(String, Error)>,
}

/// Encodes with image statistics fitted on `instances`.
pub fn encode_dataset(cfg: &RunConfig, instances: &[MediaInstance]) -> Result<EncodedDataset> {
    let encoder = MediaEncoder::new(cfg.encoder.clone(), MediaEncoder::fit_stats(instances))?;
    encode_with(encoder, instances)
}

/// Encodes with an existing encoder, e.g. the training set's statistics.
pub fn encode_with(encoder: MediaEncoder, instances: &[MediaInstance]) -> Result<EncodedDataset> {
    let mut items = Vec::with_capacity(instances.len());
    let mut failures = Vec::new();
    for (inst, r) in instances.iter().zip(encoder.encode_all(instances)) {
        match r {
            Ok(it) => items.push(it),
            Err(e) => {
                log::warn!("skipping `{}`: {e}", inst.id);
                failures.push((inst.id.clone(), e));
            }
        }
    }
    Ok(EncodedDataset {
        encoder,
        items,
        failures,
    })
}

pub fn new_model(cfg: &RunConfig, classes: usize, encoder: &MediaEncoder) -> Result<Model<f32>> {
    Model::new(cfg.backbone(classes, encoder.vocabulary().len()))
}

/// Runs the full configured schedule.
pub fn train(cfg: &RunConfig, classes: usize, data: &EncodedDataset) -> Result<(TrainState, Vec<LogRow>)> {
    let model = new_model(cfg, classes, &data.encoder)?;
    let mut trainer = Trainer::new(cfg.train.clone(), cfg.objective, model, &data.items)?;
    let log = trainer.run()?;
    Ok((trainer.into_state(), log))
}

pub struct ExperimentOutcome {
    pub state: TrainState,
    pub log: Vec<LogRow>,
    pub store: EmbeddingStore,
    pub report: EvalReport,
    /// Share of training items whose averaged logits pick the right class.
    pub train_accuracy: f64,
}

/// Trains on `train_set` and evaluates on `test_set`, with encoder
/// statistics taken from the training data.
pub fn run_experiment(cfg: &RunConfig, train_set: &[MediaInstance], test_set: &[MediaInstance]) -> Result<ExperimentOutcome> {
    let classes = cfg.data.classes.unwrap_or_else(|| infer_classes(train_set));
    let data = encode_dataset(cfg, train_set)?;
    let (state, log) = train(cfg, classes, &data)?;
    let test = encode_with(data.encoder.clone(), test_set)?;
    let embedded = embed_items(&state.model, &test.items);
    for (id, e) in &embedded.failures {
        log::warn!("no embedding for `{id}`: {e}");
    }
    let report = full_report(&embedded.store)?;
    let train_accuracy = crate::train::accuracy(&state.model, &data.items)?;
    Ok(ExperimentOutcome {
        state,
        log,
        store: embedded.store,
        report,
        train_accuracy,
    })
}

/// Saves a model checkpoint that also records the encoder configuration
/// and image statistics needed to embed new data.
pub fn save_bundle(path: &Path, model: &Model<f32>, encoder: &MediaEncoder) -> Result<()> {
    let extra = serde_json::json!({ "encoder": encoder.config(), "stats": encoder.stats() });
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    save_model(&mut w, model, &extra)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: &Path) -> Result<(Model<f32>, MediaEncoder)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let (model, extra) = load_model(&mut BufReader::new(f))?;
    let cfg: EncoderConfig = serde_json::from_value(extra["encoder"].clone())
        .map_err(|e| Error::Format(format!("checkpoint has no encoder settings: {e}")))?;
    let stats: ChannelStats = serde_json::from_value(extra["stats"].clone())
        .map_err(|e| Error::Format(format!("checkpoint has no image statistics: {e}")))?;
    let encoder = MediaEncoder::new(cfg, stats)?;
    if encoder.vocabulary().len() != model.config().text.vocab_size {
        return Err(Error::Format("checkpoint vocabulary size disagrees with its encoder".into()));
    }
    Ok((model, encoder))
}
