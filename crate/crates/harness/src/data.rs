//! Loading a generated split from disk and encoding it for the model.

use std::path::Path;

use gres_core::encoders::Vocabulary;
use gres_core::model::ModelConfig;
use gres_core::objective::LossTargets;
use gres_core::raster::{Mask, RgbImage};
use gres_core::GresError;
use gres_synth::pnm::{read_pgm, read_ppm};
use gres_synth::{read_manifest, Split};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub image: RgbImage,
    pub mask: Mask,
    pub no_target: bool,
    pub expression: String,
}

pub fn load_split(data_dir: &Path, split: Split) -> Result<Vec<Example>> {
    let manifest = data_dir.join(split.name()).join("manifest.tsv");
    if !manifest.is_file() {
        return Err(GresError::Input(format!("no dataset split at {}", manifest.display())).into());
    }
    let rows = read_manifest(&manifest)?;
    rows.into_iter()
        .map(|row| {
            let image = read_ppm(&row.image_path)?;
            let mask = read_pgm(&row.mask_path)?;
            if (mask.height, mask.width) != (image.height, image.width) {
                return Err(GresError::Format {
                    path: row.mask_path.clone(),
                    reason: "mask and image sizes differ".into(),
                }
                .into());
            }
            if row.no_target != mask.is_empty() {
                return Err(GresError::Format {
                    path: row.mask_path.clone(),
                    reason: format!(
                        "no-target flag {} disagrees with the mask",
                        u8::from(row.no_target)
                    ),
                }
                .into());
            }
            Ok(Example {
                image,
                mask,
                no_target: row.no_target,
                expression: row.expression,
            })
        })
        .collect()
}

/// An example with token ids and loss targets precomputed.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub image: RgbImage,
    pub ids: Vec<usize>,
    pub targets: LossTargets,
    pub mask: Mask,
    pub no_target: bool,
}

/// Tokenizes expressions (cut to the model's token budget) and builds loss targets.
pub fn encode_examples(
    examples: &[Example],
    vocab: &Vocabulary,
    cfg: &ModelConfig,
) -> Result<Vec<Encoded>> {
    let (gh, gw) = cfg.encoder.grid();
    examples
        .iter()
        .map(|ex| {
            if (ex.image.height, ex.image.width) != (cfg.encoder.image_h, cfg.encoder.image_w) {
                return Err(GresError::Input(format!(
                    "image is {}x{} but the model canvas is {}x{}",
                    ex.image.height, ex.image.width, cfg.encoder.image_h, cfg.encoder.image_w
                ))
                .into());
            }
            let mut ids = vocab.encode(&ex.expression)?;
            ids.truncate(cfg.encoder.max_tokens);
            Ok(Encoded {
                image: ex.image.clone(),
                ids,
                targets: LossTargets::new(&ex.mask, ex.no_target, gh, gw, cfg.rela.p)?,
                mask: ex.mask.clone(),
                no_target: ex.no_target,
            })
        })
        .collect()
}
