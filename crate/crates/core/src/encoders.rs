//! Small stand-ins for the visual backbone, the text encoder and the pixel decoder.
//!
//! They only have to deliver features with the right shapes: `F_i` and `F_m` are
//! `(H·W)×C`, `F_t` is `N_t×C`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::error::{GresError, Result};
use crate::numcore::{Init, ParamId, ParamSet, Tape, Tensor, Var};
use crate::raster::RgbImage;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Lowercases, drops ASCII punctuation and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Token → id map. Ids 0 and 1 are padding and unknown; real tokens start at 2.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    /// Collects every token of `texts`, sorted so the ids do not depend on corpus order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tokens: Vec<String> = texts.into_iter().flat_map(tokenize).collect();
        tokens.sort();
        tokens.dedup();
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i + 2))
            .collect();
        Vocabulary { tokens, ids }
    }

    /// Number of embedding rows, reserved ids included.
    pub fn len(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        id.checked_sub(2)
            .and_then(|i| self.tokens.get(i))
            .map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let ids: Vec<usize> = tokenize(text).iter().map(|t| self.id(t)).collect();
        if ids.is_empty() {
            return Err(GresError::Input(format!(
                "expression {text:?} has no tokens"
            )));
        }
        Ok(ids)
    }

    /// One token per line; line `i` holds id `i + 2`.
    pub fn to_file_string(&self) -> String {
        self.tokens.iter().map(|t| format!("{t}\n")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string()).map_err(|e| GresError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GresError::io(path, e))?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        let mut seen = std::collections::HashSet::new();
        for t in &tokens {
            if t.is_empty() || t.contains(char::is_whitespace) || !seen.insert(t) {
                return Err(GresError::Format {
                    path: path.to_path_buf(),
                    reason: format!("bad vocabulary entry {t:?}"),
                });
            }
        }
        Ok(Self::from_tokens(tokens))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub channels: usize,
    pub patch: usize,
    /// Input canvas; must be divisible by `patch`.
    pub image_h: usize,
    pub image_w: usize,
    pub max_tokens: usize,
    pub vocab_size: usize,
}

impl EncoderConfig {
    pub fn grid(&self) -> (usize, usize) {
        (self.image_h / self.patch, self.image_w / self.patch)
    }
}

/// `F_i`, flattened to `(H·W)×C` rows in row-major grid order.
#[derive(Clone, Copy, Debug)]
pub struct ImageFeature {
    pub var: Var,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

/// `F_t`, one row per token.
#[derive(Clone, Debug)]
pub struct TextFeature {
    pub var: Var,
    pub token_ids: Vec<usize>,
}

/// `F_m` on the same grid as the image feature it was decoded from.
#[derive(Clone, Copy, Debug)]
pub struct MaskFeature {
    pub var: Var,
    pub h: usize,
    pub w: usize,
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn register(
        params: &mut ParamSet,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Linear {
            w: params.register(
                &format!("{prefix}.w"),
                &[fan_in, fan_out],
                Init::Glorot,
                rng,
            )?,
            b: params.register(&format!("{prefix}.b"), &[fan_out], Init::Zeros, rng)?,
        })
    }

    fn apply(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        let w = tape.param(params, self.w);
        let b = tape.param(params, self.b);
        let h = tape.matmul(x, w)?;
        tape.add_row(h, b)
    }
}

/// Normalized pixels grouped per patch: `(H·W) × (patch·patch·3)`.
pub fn patchify(image: &RgbImage, patch: usize) -> Result<Tensor> {
    if patch == 0 || !image.height.is_multiple_of(patch) || !image.width.is_multiple_of(patch) {
        return Err(GresError::Input(format!(
            "image {}x{} is not divisible into {patch}x{patch} patches",
            image.height, image.width
        )));
    }
    let (gh, gw) = (image.height / patch, image.width / patch);
    let cols = patch * patch * 3;
    let mut data = Vec::with_capacity(gh * gw * cols);
    for gy in 0..gh {
        for gx in 0..gw {
            for dy in 0..patch {
                for dx in 0..patch {
                    let px = image.pixel(gy * patch + dy, gx * patch + dx);
                    data.extend(px.iter().map(|&v| f64::from(v) / 255.0));
                }
            }
        }
    }
    Tensor::matrix(gh * gw, cols, data)
}

#[derive(Clone, Debug)]
pub struct ImageEncoder {
    cfg: EncoderConfig,
    patch_proj: Linear,
    pos: ParamId,
    blocks: [(Linear, Linear); 2],
}

impl ImageEncoder {
    pub fn register(
        params: &mut ParamSet,
        cfg: EncoderConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let c = cfg.channels;
        let (gh, gw) = cfg.grid();
        if gh == 0
            || gw == 0
            || !cfg.image_h.is_multiple_of(cfg.patch)
            || !cfg.image_w.is_multiple_of(cfg.patch)
        {
            return Err(GresError::Input(format!(
                "canvas {}x{} does not tile into {} px patches",
                cfg.image_h, cfg.image_w, cfg.patch
            )));
        }
        let patch_proj =
            Linear::register(params, "image.patch", cfg.patch * cfg.patch * 3, c, rng)?;
        let pos = params.register("image.pos", &[gh * gw, c], Init::Glorot, rng)?;
        let mut block = |i: usize| -> Result<(Linear, Linear)> {
            Ok((
                Linear::register(params, &format!("image.block{i}.fc1"), c, c, rng)?,
                Linear::register(params, &format!("image.block{i}.fc2"), c, c, rng)?,
            ))
        };
        let blocks = [block(0)?, block(1)?];
        Ok(ImageEncoder {
            cfg,
            patch_proj,
            pos,
            blocks,
        })
    }

    /// Patch projection plus positional embedding, before the residual blocks.
    pub fn embed_patches(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        image: &RgbImage,
    ) -> Result<Var> {
        if image.height != self.cfg.image_h || image.width != self.cfg.image_w {
            return Err(GresError::Input(format!(
                "image is {}x{}, encoder expects {}x{}",
                image.height, image.width, self.cfg.image_h, self.cfg.image_w
            )));
        }
        let patches = tape.constant(patchify(image, self.cfg.patch)?);
        let x = self.patch_proj.apply(tape, params, patches)?;
        let pos = tape.param(params, self.pos);
        tape.add(x, pos)
    }

    pub fn encode(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        image: &RgbImage,
    ) -> Result<ImageFeature> {
        let mut x = self.embed_patches(tape, params, image)?;
        for (fc1, fc2) in &self.blocks {
            let h = fc1.apply(tape, params, x)?;
            let h = tape.gelu(h);
            let h = fc2.apply(tape, params, h)?;
            x = tape.add(x, h)?;
        }
        let (h, w) = self.cfg.grid();
        Ok(ImageFeature {
            var: x,
            h,
            w,
            c: self.cfg.channels,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TextEncoder {
    cfg: EncoderConfig,
    embed: ParamId,
    pos: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
}

impl TextEncoder {
    pub fn register(
        params: &mut ParamSet,
        cfg: EncoderConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let c = cfg.channels;
        Ok(TextEncoder {
            cfg,
            embed: params.register("text.embed", &[cfg.vocab_size, c], Init::Glorot, rng)?,
            pos: params.register("text.pos", &[cfg.max_tokens, c], Init::Glorot, rng)?,
            wq: params.register("text.attn.wq", &[c, c], Init::Glorot, rng)?,
            wk: params.register("text.attn.wk", &[c, c], Init::Glorot, rng)?,
            wv: params.register("text.attn.wv", &[c, c], Init::Glorot, rng)?,
        })
    }

    pub fn encode_ids(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        ids: &[usize],
    ) -> Result<TextFeature> {
        if ids.is_empty() {
            return Err(GresError::Input("expression has no tokens".into()));
        }
        if ids.len() > self.cfg.max_tokens {
            return Err(GresError::Input(format!(
                "expression has {} tokens, limit is {}",
                ids.len(),
                self.cfg.max_tokens
            )));
        }
        let table = tape.param(params, self.embed);
        let tok = tape.gather_rows(table, ids)?;
        let pos_table = tape.param(params, self.pos);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = tape.gather_rows(pos_table, &positions)?;
        let x = tape.add(tok, pos)?;

        let (wq, wk, wv) = (
            tape.param(params, self.wq),
            tape.param(params, self.wk),
            tape.param(params, self.wv),
        );
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        let logits = tape.matmul_nt(q, k)?;
        let logits = tape.scale(logits, 1.0 / (self.cfg.channels as f64).sqrt());
        let attn = tape.softmax_rows(logits)?;
        let mixed = tape.matmul(attn, v)?;
        let out = tape.add(x, mixed)?;
        Ok(TextFeature {
            var: out,
            token_ids: ids.to_vec(),
        })
    }

    pub fn encode(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        text: &str,
        vocab: &Vocabulary,
    ) -> Result<TextFeature> {
        if vocab.len() != self.cfg.vocab_size {
            return Err(GresError::Compatibility(format!(
                "vocabulary has {} ids, embedding table has {}",
                vocab.len(),
                self.cfg.vocab_size
            )));
        }
        let ids = vocab.encode(text)?;
        self.encode_ids(tape, params, &ids)
    }
}

/// Two residual `linear → GeLU` blocks on top of `F_i`.
#[derive(Clone, Debug)]
pub struct PixelDecoder {
    blocks: [Linear; 2],
}

impl PixelDecoder {
    pub fn register(
        params: &mut ParamSet,
        cfg: EncoderConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let c = cfg.channels;
        Ok(PixelDecoder {
            blocks: [
                Linear::register(params, "decoder.block0", c, c, rng)?,
                Linear::register(params, "decoder.block1", c, c, rng)?,
            ],
        })
    }

    pub fn decode(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        f_i: &ImageFeature,
    ) -> Result<MaskFeature> {
        let mut x = f_i.var;
        for block in &self.blocks {
            let h = block.apply(tape, params, x)?;
            let h = tape.gelu(h);
            x = tape.add(x, h)?;
        }
        Ok(MaskFeature {
            var: x,
            h: f_i.h,
            w: f_i.w,
        })
    }
}
