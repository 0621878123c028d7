//! The full network: image and text encoders, pixel decoder and the relation module.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoders::{EncoderConfig, ImageEncoder, PixelDecoder, TextEncoder};
use crate::error::{GresError, Result};
use crate::numcore::{ParamSet, Tape};
use crate::raster::RgbImage;
use crate::rela::{AggregationMode, Rela, RelaConfig, RelaOutput, RelaVars};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub rela: RelaConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        if e.channels == 0 || e.patch == 0 || e.max_tokens == 0 || e.vocab_size < 2 {
            return Err(GresError::Input("model dimensions must be positive".into()));
        }
        if !e.image_h.is_multiple_of(e.patch) || !e.image_w.is_multiple_of(e.patch) {
            return Err(GresError::Input(format!(
                "canvas {}x{} is not divisible by patch {}",
                e.image_h, e.image_w, e.patch
            )));
        }
        if self.rela.channels != e.channels {
            return Err(GresError::Input(format!(
                "relation module has {} channels, encoders have {}",
                self.rela.channels, e.channels
            )));
        }
        let (h, w) = e.grid();
        if self.rela.p == 0 || self.rela.p > h.min(w) {
            return Err(GresError::Input(format!(
                "region grid {} does not fit the {h}x{w} feature grid",
                self.rela.p
            )));
        }
        if self.rela.p > e.image_h.min(e.image_w) {
            return Err(GresError::Input("region grid exceeds the canvas".into()));
        }
        Ok(())
    }

    /// `key=value` lines, sorted by key.
    pub fn to_key_values(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    fn entries(&self) -> BTreeMap<&'static str, String> {
        let e = &self.encoder;
        let r = &self.rela;
        BTreeMap::from([
            ("aggregation", r.aggregation.to_string()),
            ("channels", e.channels.to_string()),
            ("hard_split_pooling", r.hard_split_pooling.to_string()),
            ("image_h", e.image_h.to_string()),
            ("image_w", e.image_w.to_string()),
            ("language_att", r.language_att.to_string()),
            ("max_tokens", e.max_tokens.to_string()),
            ("patch", e.patch.to_string()),
            ("regions_p", r.p.to_string()),
            ("region_att", r.region_att.to_string()),
            ("vocab_size", e.vocab_size.to_string()),
        ])
    }

    /// Inverse of [`ModelConfig::to_key_values`]; every key must be present exactly once.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| GresError::Input(format!("malformed model config line {line:?}")))?;
            if map
                .insert(k.trim().to_string(), v.trim().to_string())
                .is_some()
            {
                return Err(GresError::Input(format!(
                    "duplicate model config key {k:?}"
                )));
            }
        }
        let mut take = |key: &str| {
            map.remove(key)
                .ok_or_else(|| GresError::Input(format!("model config is missing {key:?}")))
        };
        fn parse<T: std::str::FromStr>(key: &str, v: String) -> Result<T> {
            v.parse().map_err(|_| {
                GresError::Input(format!("bad value {v:?} for model config key {key:?}"))
            })
        }
        let encoder = EncoderConfig {
            channels: parse("channels", take("channels")?)?,
            patch: parse("patch", take("patch")?)?,
            image_h: parse("image_h", take("image_h")?)?,
            image_w: parse("image_w", take("image_w")?)?,
            max_tokens: parse("max_tokens", take("max_tokens")?)?,
            vocab_size: parse("vocab_size", take("vocab_size")?)?,
        };
        let rela = RelaConfig {
            p: parse("regions_p", take("regions_p")?)?,
            channels: encoder.channels,
            aggregation: parse::<AggregationMode>("aggregation", take("aggregation")?)?,
            hard_split_pooling: parse("hard_split_pooling", take("hard_split_pooling")?)?,
            region_att: parse("region_att", take("region_att")?)?,
            language_att: parse("language_att", take("language_att")?)?,
        };
        if let Some(k) = map.keys().next() {
            return Err(GresError::Input(format!("unknown model config key {k:?}")));
        }
        let cfg = ModelConfig { encoder, rela };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug)]
pub struct GresModel {
    pub cfg: ModelConfig,
    pub params: ParamSet,
    pub image: ImageEncoder,
    pub text: TextEncoder,
    pub decoder: PixelDecoder,
    pub rela: Rela,
}

impl GresModel {
    /// Registers every parameter from a single seeded stream, so the same seed
    /// always yields the same initialization.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let image = ImageEncoder::register(&mut params, cfg.encoder, &mut rng)?;
        let text = TextEncoder::register(&mut params, cfg.encoder, &mut rng)?;
        let decoder = PixelDecoder::register(&mut params, cfg.encoder, &mut rng)?;
        let rela = Rela::register(&mut params, cfg.rela, &mut rng)?;
        Ok(GresModel {
            cfg,
            params,
            image,
            text,
            decoder,
            rela,
        })
    }

    pub fn forward(&self, tape: &mut Tape, image: &RgbImage, ids: &[usize]) -> Result<RelaVars> {
        self.forward_with(tape, &self.params, image, ids)
    }

    /// Forward pass reading parameter values from `params` instead of `self.params`;
    /// `params` must have been registered the same way.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        image: &RgbImage,
        ids: &[usize],
    ) -> Result<RelaVars> {
        let f_i = self.image.encode(tape, params, image)?;
        let f_t = self.text.encode_ids(tape, params, ids)?;
        let f_m = self.decoder.decode(tape, params, &f_i)?;
        self.rela.forward(tape, params, &f_i, &f_t, &f_m)
    }

    /// Token ids cut to the model's token budget.
    pub fn clip_ids<'a>(&self, ids: &'a [usize]) -> &'a [usize] {
        &ids[..ids.len().min(self.cfg.encoder.max_tokens)]
    }

    pub fn infer(&self, image: &RgbImage, ids: &[usize]) -> Result<RelaOutput> {
        let mut tape = Tape::new();
        let vars = self.forward(&mut tape, image, ids)?;
        Ok(vars.output(&tape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                channels: 8,
                patch: 4,
                image_h: 16,
                image_w: 16,
                max_tokens: 6,
                vocab_size: 10,
            },
            rela: RelaConfig::full(2, 8),
        }
    }

    #[test]
    fn config_round_trips_through_key_values() {
        let mut cfg = small();
        cfg.rela.aggregation = AggregationMode::Literal;
        cfg.rela.region_att = false;
        let text = cfg.to_key_values();
        assert_eq!(ModelConfig::from_key_values(&text).unwrap(), cfg);
        assert!(ModelConfig::from_key_values(&format!("{text}extra=1\n")).is_err());
        assert!(ModelConfig::from_key_values(&text.replace("patch=4\n", "")).is_err());
        assert!(ModelConfig::from_key_values(&text.replace("patch=4", "patch=x")).is_err());
    }

    #[test]
    fn validation_rejects_inconsistent_dimensions() {
        let mut cfg = small();
        cfg.rela.channels = 4;
        assert!(GresModel::new(cfg, 0).is_err());
        let mut cfg = small();
        cfg.encoder.image_w = 18;
        assert!(cfg.validate().is_err());
        let mut cfg = small();
        cfg.rela.p = 5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn same_seed_same_parameters_and_outputs() {
        let a = GresModel::new(small(), 3).unwrap();
        let b = GresModel::new(small(), 3).unwrap();
        let c = GresModel::new(small(), 4).unwrap();
        for ((pa, pb), pc) in a
            .params
            .sorted()
            .zip(b.params.sorted())
            .zip(c.params.sorted())
        {
            assert_eq!(pa.tensor, pb.tensor);
            if pa.tensor.data().iter().any(|&v| v != 0.0) {
                assert_ne!(pa.tensor, pc.tensor, "{}", pa.name);
            }
        }
        let img = RgbImage::filled(16, 16, [40, 200, 90]);
        let oa = a.infer(&img, &[2, 3, 4]).unwrap();
        let ob = b.infer(&img, &[2, 3, 4]).unwrap();
        assert_eq!(oa, ob);
        assert_eq!(oa.m.numel(), 16);
        assert_eq!(oa.x_r.numel(), 4);
        assert!(oa.e > 0.0 && oa.e < 1.0);
    }

    #[test]
    fn clip_ids_respects_budget() {
        let m = GresModel::new(small(), 0).unwrap();
        assert_eq!(m.clip_ids(&[1, 2, 3, 4, 5, 6, 7, 8]).len(), 6);
        assert_eq!(m.clip_ids(&[1, 2]), &[1, 2]);
    }
}
