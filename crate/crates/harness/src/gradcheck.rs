//! Finite-difference check of every parameter of the full model.

use std::time::{Duration, Instant};

use gres_core::encoders::EncoderConfig;
use gres_core::model::{GresModel, ModelConfig};
use gres_core::numcore::{finite_difference_check, GradCheckReport};
use gres_core::objective::{compute_loss, LossTargets, LossWeights};
use gres_core::raster::{Mask, RgbImage};
use gres_core::rela::RelaConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

pub const TOLERANCE: f64 = 1e-3;
pub const STEP: f64 = 1e-5;

/// P=4, C=16, a 32×32 canvas (8×8 feature grid), 4 tokens.
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            channels: 16,
            patch: 4,
            image_h: 32,
            image_w: 32,
            max_tokens: 4,
            vocab_size: 8,
        },
        rela: RelaConfig::full(4, 16),
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckRun {
    pub report: GradCheckReport,
    pub elapsed: Duration,
}

impl GradCheckRun {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < TOLERANCE
    }
}

/// Random image, four random tokens and a random target mask; all three loss terms on.
pub fn run(seed: u64, cfg: ModelConfig) -> Result<GradCheckRun> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6AD_C4EC);
    let (h, w) = (cfg.encoder.image_h, cfg.encoder.image_w);
    let image = RgbImage::new(h, w, (0..h * w * 3).map(|_| rng.gen()).collect())?;
    let ids: Vec<usize> = (0..cfg.encoder.max_tokens)
        .map(|_| rng.gen_range(2..cfg.encoder.vocab_size))
        .collect();
    let mask = Mask::new(h, w, (0..h * w).map(|_| rng.gen_bool(0.3)).collect())?;
    let (gh, gw) = cfg.encoder.grid();
    let targets = LossTargets::new(&mask, false, gh, gw, cfg.rela.p)?;
    let weights = LossWeights::default();

    let model = GresModel::new(cfg, seed)?;
    let mut params = model.params.clone();
    let report = finite_difference_check(&mut params, STEP, |tape, params| {
        let vars = model.forward_with(tape, params, &image, &ids)?;
        Ok(compute_loss(tape, &vars, &targets, &weights)?.0)
    })?;
    Ok(GradCheckRun {
        report,
        elapsed: start.elapsed(),
    })
}
