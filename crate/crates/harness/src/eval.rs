//! Evaluation: predict every sample, compare at image resolution, aggregate.

use std::fs;
use std::path::{Path, PathBuf};

use gres_core::encoders::Vocabulary;
use gres_core::metrics::{eval_record, EvalRecord, EvalReport};
use gres_core::model::{GresModel, ModelConfig};
use gres_core::numcore::checkpoint;
use gres_core::raster::Mask;
use gres_core::rela::{predict, PredictConfig};
use gres_core::GresError;
use gres_synth::Split;

use crate::data::{encode_examples, load_split, Encoded, Example};
use crate::error::Result;

pub const MODEL_FILE: &str = "model.txt";
pub const VOCAB_FILE: &str = "vocab.txt";

pub fn records(
    model: &GresModel,
    samples: &[Encoded],
    cfg: &PredictConfig,
) -> Result<Vec<EvalRecord>> {
    samples
        .iter()
        .map(|s| {
            let out = model.infer(&s.image, &s.ids)?;
            let pred = predict(&out, s.image.height, s.image.width, cfg);
            Ok(eval_record(&pred.mask, &s.mask, s.no_target)?)
        })
        .collect()
}

pub fn evaluate_model(
    model: &GresModel,
    samples: &[Encoded],
    cfg: &PredictConfig,
) -> Result<EvalReport> {
    Ok(EvalReport::from_records(&records(model, samples, cfg)?)?)
}

/// Scores externally produced binary masks (one per example, image resolution)
/// with the same protocol as model evaluation; an empty mask is a no-target answer.
pub fn evaluate_masks(examples: &[Example], predictions: &[Mask]) -> Result<EvalReport> {
    if examples.len() != predictions.len() {
        return Err(GresError::Input(format!(
            "{} predictions for {} examples",
            predictions.len(),
            examples.len()
        ))
        .into());
    }
    let records = examples
        .iter()
        .zip(predictions)
        .map(|(ex, pred)| eval_record(pred, &ex.mask, ex.no_target))
        .collect::<gres_core::Result<Vec<_>>>()?;
    Ok(EvalReport::from_records(&records)?)
}

/// A trained model together with the vocabulary it was trained with.
pub struct Loaded {
    pub model: GresModel,
    pub vocab: Vocabulary,
}

fn sibling(checkpoint: &Path, name: &str) -> PathBuf {
    checkpoint.parent().unwrap_or(Path::new(".")).join(name)
}

/// Loads a checkpoint plus the model description and vocabulary stored next to it.
pub fn load_checkpoint(path: &Path) -> Result<Loaded> {
    let model_path = sibling(path, MODEL_FILE);
    let text = fs::read_to_string(&model_path).map_err(|e| GresError::io(&model_path, e))?;
    let cfg = ModelConfig::from_key_values(&text)?;
    let vocab = Vocabulary::load(&sibling(path, VOCAB_FILE))?;
    if vocab.len() != cfg.encoder.vocab_size {
        return Err(GresError::Compatibility(format!(
            "vocabulary has {} ids but the checkpoint expects {}",
            vocab.len(),
            cfg.encoder.vocab_size
        ))
        .into());
    }
    let mut model = GresModel::new(cfg, 0)?;
    checkpoint::load_into(&mut model.params, path)?;
    Ok(Loaded { model, vocab })
}

pub fn evaluate_checkpoint(
    checkpoint: &Path,
    data_dir: &Path,
    split: Split,
    predict_cfg: &PredictConfig,
) -> Result<EvalReport> {
    let loaded = load_checkpoint(checkpoint)?;
    let examples = load_split(data_dir, split)?;
    let encoded = encode_examples(&examples, &loaded.vocab, &loaded.model.cfg)?;
    evaluate_model(&loaded.model, &encoded, predict_cfg)
}
