//! Region-based relationship modeling.
//!
//! `P²` learnable region queries attend over the image feature (region-image
//! attention), are refined by region self-attention and region-word attention,
//! and finally produce one mask per region, a per-region target probability
//! (the minimap), and a no-target score. The output mask is the
//! probability-weighted combination of the region masks.
//!
//! Stage functions take and return tape variables so each can be tested alone;
//! [`Rela::forward`] wires them together.

use rand_chacha::ChaCha8Rng;

use crate::encoders::{ImageFeature, MaskFeature, TextFeature};
use crate::error::{GresError, Result};
use crate::numcore::{Init, ParamId, ParamSet, Tape, Tensor, Var};
use crate::raster::{cell_bounds, Mask};

/// Added to the weight total in [`AggregationMode::Normalized`].
pub const AGGREGATION_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AggregationMode {
    /// `M = Σ (x_n / (Σ x + ε)) · M_n`, a convex combination.
    #[default]
    Normalized,
    /// `M = min(Σ x_n · M_n, 1)`.
    Literal,
}

impl std::str::FromStr for AggregationMode {
    type Err = GresError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized" => Ok(AggregationMode::Normalized),
            "literal" => Ok(AggregationMode::Literal),
            other => Err(GresError::Input(format!(
                "unknown aggregation mode {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AggregationMode::Normalized => "normalized",
            AggregationMode::Literal => "literal",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RelaConfig {
    /// Region grid side; there are `p²` regions.
    pub p: usize,
    pub channels: usize,
    pub aggregation: AggregationMode,
    /// Replace region-image attention with fixed average pooling over a `p×p` split.
    pub hard_split_pooling: bool,
    /// Region-region self-attention.
    pub region_att: bool,
    /// Region-word cross attention; when off, regions are multiplied pointwise
    /// with the averaged word features instead.
    pub language_att: bool,
}

impl RelaConfig {
    pub fn full(p: usize, channels: usize) -> Self {
        RelaConfig {
            p,
            channels,
            aggregation: AggregationMode::Normalized,
            hard_split_pooling: false,
            region_att: true,
            language_att: true,
        }
    }

    pub fn regions(&self) -> usize {
        self.p * self.p
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RegionQueries {
    pub q_r: ParamId,
    pub p: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct RiaParams {
    pub w_ik: ParamId,
    pub w_iv: ParamId,
    pub filter_w: ParamId,
    pub filter_b: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct RlaParams {
    pub self_wq: ParamId,
    pub self_wk: ParamId,
    pub self_wv: ParamId,
    pub w_lq: ParamId,
    pub w_lk: ParamId,
    pub fuse_w1: ParamId,
    pub fuse_b1: ParamId,
    pub fuse_w2: ParamId,
    pub fuse_b2: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadParams {
    pub minimap_w: ParamId,
    pub minimap_b: ParamId,
    pub no_target_w: ParamId,
    pub no_target_b: ParamId,
}

/// Intermediate and final variables of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct RelaVars {
    pub a_ri: Var,
    pub f_r_prime: Var,
    pub f_f: Var,
    pub f_r1: Option<Var>,
    pub a_l: Var,
    pub f_r2: Var,
    pub f_r: Var,
    pub x_r: Var,
    pub e: Var,
    pub m_r: Var,
    pub m: Var,
    pub h: usize,
    pub w: usize,
}

/// Materialized outputs of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct RelaOutput {
    /// Soft mask over the `h×w` feature grid.
    pub m: Tensor,
    pub x_r: Tensor,
    pub e: f64,
    pub m_r: Tensor,
    pub a_ri: Tensor,
    pub a_l: Tensor,
    pub h: usize,
    pub w: usize,
}

impl RelaVars {
    pub fn output(&self, tape: &Tape) -> RelaOutput {
        RelaOutput {
            m: tape.value(self.m).clone(),
            x_r: tape.value(self.x_r).clone(),
            e: tape.value(self.e).item(),
            m_r: tape.value(self.m_r).clone(),
            a_ri: tape.value(self.a_ri).clone(),
            a_l: tape.value(self.a_l).clone(),
            h: self.h,
            w: self.w,
        }
    }
}

/// `A_ri = softmax(Q_r · σ(F_i W_ik)ᵀ)`, no temperature.
pub fn ria_attention(tape: &mut Tape, q_r: Var, f_i: Var, w_ik: Var) -> Result<Var> {
    let keys = tape.matmul(f_i, w_ik)?;
    let keys = tape.gelu(keys);
    let logits = tape.matmul_nt(q_r, keys)?;
    tape.softmax_rows(logits)
}

/// `F'_r = A_ri · σ(F_i W_iv)`.
pub fn ria_collect(tape: &mut Tape, a_ri: Var, f_i: Var, w_iv: Var) -> Result<Var> {
    let values = tape.matmul(f_i, w_iv)?;
    let values = tape.gelu(values);
    tape.matmul(a_ri, values)
}

/// Affine map from region image features to region filters.
pub fn region_filter(tape: &mut Tape, f_r_prime: Var, w: Var, b: Var) -> Result<Var> {
    let h = tape.matmul(f_r_prime, w)?;
    tape.add_row(h, b)
}

/// Scaled dot-product self-attention across regions.
pub fn rla_self_attention(
    tape: &mut Tape,
    f_r_prime: Var,
    wq: Var,
    wk: Var,
    wv: Var,
) -> Result<Var> {
    let c = tape.value(f_r_prime).cols();
    let q = tape.matmul(f_r_prime, wq)?;
    let k = tape.matmul(f_r_prime, wk)?;
    let v = tape.matmul(f_r_prime, wv)?;
    let logits = tape.matmul_nt(q, k)?;
    let logits = tape.scale(logits, 1.0 / (c as f64).sqrt());
    let attn = tape.softmax_rows(logits)?;
    tape.matmul(attn, v)
}

/// `A_l = softmax(σ(F'_r W_lq) · σ(F_t W_lk)ᵀ)` and `F_r2 = A_l · F_t`.
pub fn rla_cross_attention(
    tape: &mut Tape,
    f_r_prime: Var,
    f_t: Var,
    w_lq: Var,
    w_lk: Var,
) -> Result<(Var, Var)> {
    let q = tape.matmul(f_r_prime, w_lq)?;
    let q = tape.gelu(q);
    let k = tape.matmul(f_t, w_lk)?;
    let k = tape.gelu(k);
    let logits = tape.matmul_nt(q, k)?;
    let a_l = tape.softmax_rows(logits)?;
    let f_r2 = tape.matmul(a_l, f_t)?;
    Ok((a_l, f_r2))
}

/// Pointwise fusion used when region-word attention is ablated:
/// every region feature times the mean word feature, with uniform word weights.
pub fn pointwise_language_fusion(tape: &mut Tape, f_r_prime: Var, f_t: Var) -> Result<(Var, Var)> {
    let regions = tape.value(f_r_prime).rows();
    let words = tape.value(f_t).rows();
    let pooled = tape.mean_rows(f_t)?;
    let f_r2 = tape.mul_row(f_r_prime, pooled)?;
    let a_l = tape.constant(Tensor::full(&[regions, words], 1.0 / words as f64));
    Ok((a_l, f_r2))
}

/// `F_r = MLP(F'_r + F_r1 + F_r2)` with a GeLU between the two layers.
/// A missing `f_r1` (self-attention ablated) drops that term.
pub fn rla_fuse(
    tape: &mut Tape,
    f_r_prime: Var,
    f_r1: Option<Var>,
    f_r2: Var,
    mlp: [Var; 4],
) -> Result<Var> {
    let mut sum = tape.add(f_r_prime, f_r2)?;
    if let Some(f_r1) = f_r1 {
        sum = tape.add(sum, f_r1)?;
    }
    let [w1, b1, w2, b2] = mlp;
    let h = tape.matmul(sum, w1)?;
    let h = tape.add_row(h, b1)?;
    let h = tape.gelu(h);
    let out = tape.matmul(h, w2)?;
    tape.add_row(out, b2)
}

/// `M_r[n, p] = sigmoid(⟨f_f^n, F_m[p]⟩)`.
pub fn region_masks(tape: &mut Tape, f_f: Var, f_m: Var) -> Result<Var> {
    let logits = tape.matmul_nt(f_f, f_m)?;
    Ok(tape.sigmoid(logits))
}

/// Per-region target probability `x_r`, shape `[P²]`.
pub fn minimap_head(tape: &mut Tape, f_r: Var, w: Var, b: Var) -> Result<Var> {
    let n = tape.value(f_r).rows();
    let logits = tape.matmul(f_r, w)?;
    let logits = tape.add_row(logits, b)?;
    let probs = tape.sigmoid(logits);
    tape.reshape(probs, &[n])
}

/// No-target score from the mean region feature, shape `[1]`.
pub fn no_target_head(tape: &mut Tape, f_r: Var, w: Var, b: Var) -> Result<Var> {
    let pooled = tape.mean_rows(f_r)?;
    let logit = tape.matmul(pooled, w)?;
    let logit = tape.add_row(logit, b)?;
    let e = tape.sigmoid(logit);
    tape.reshape(e, &[1])
}

/// Combines region masks `[P²×HW]` with weights `x_r` `[P²]` into `M` `[HW]`.
pub fn aggregate_mask(tape: &mut Tape, x_r: Var, m_r: Var, mode: AggregationMode) -> Result<Var> {
    let n = tape.value(x_r).numel();
    let (regions, pixels) = tape.value(m_r).require_matrix("aggregate_mask")?;
    if n != regions {
        return Err(GresError::dim(
            "aggregate_mask",
            tape.shape(x_r),
            tape.shape(m_r),
        ));
    }
    if tape.value(x_r).data().iter().any(|&v| v < 0.0) {
        return Err(GresError::Contract(
            "aggregation weights must be non-negative".into(),
        ));
    }
    let weights = match mode {
        AggregationMode::Normalized => tape.normalize_sum(x_r, AGGREGATION_EPS),
        AggregationMode::Literal => x_r,
    };
    let weights = tape.reshape(weights, &[1, n])?;
    let m = tape.matmul(weights, m_r)?;
    let m = match mode {
        AggregationMode::Normalized => m,
        AggregationMode::Literal => tape.clamp_max(m, 1.0),
    };
    tape.reshape(m, &[pixels])
}

/// Row-stochastic `P²×(H·W)` matrix averaging each cell of a `p×p` split of the grid.
pub fn hard_split_pooling_matrix(h: usize, w: usize, p: usize) -> Result<Tensor> {
    let ys = cell_bounds(h, p)?;
    let xs = cell_bounds(w, p)?;
    let mut data = vec![0.0; p * p * h * w];
    for (ry, &(y0, y1)) in ys.iter().enumerate() {
        for (rx, &(x0, x1)) in xs.iter().enumerate() {
            let region = ry * p + rx;
            let weight = 1.0 / ((y1 - y0) * (x1 - x0)) as f64;
            for y in y0..y1 {
                for x in x0..x1 {
                    data[region * h * w + y * w + x] = weight;
                }
            }
        }
    }
    Tensor::matrix(p * p, h * w, data)
}

/// The relationship-modeling block with its parameters registered in a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Rela {
    pub cfg: RelaConfig,
    pub queries: RegionQueries,
    pub ria: RiaParams,
    pub rla: RlaParams,
    pub heads: HeadParams,
}

impl Rela {
    pub fn register(params: &mut ParamSet, cfg: RelaConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if cfg.p == 0 {
            return Err(GresError::Input(
                "region grid side must be at least 1".into(),
            ));
        }
        let c = cfg.channels;
        let mut reg =
            |name: &str, shape: &[usize], init: Init| params.register(name, shape, init, rng);
        let queries = RegionQueries {
            q_r: reg("queries.q_r", &[cfg.regions(), c], Init::Glorot)?,
            p: cfg.p,
        };
        let ria = RiaParams {
            w_ik: reg("ria.w_ik", &[c, c], Init::Glorot)?,
            w_iv: reg("ria.w_iv", &[c, c], Init::Glorot)?,
            filter_w: reg("ria.filter.w", &[c, c], Init::Glorot)?,
            filter_b: reg("ria.filter.b", &[c], Init::Zeros)?,
        };
        let rla = RlaParams {
            self_wq: reg("rla.self.wq", &[c, c], Init::Glorot)?,
            self_wk: reg("rla.self.wk", &[c, c], Init::Glorot)?,
            self_wv: reg("rla.self.wv", &[c, c], Init::Glorot)?,
            w_lq: reg("rla.w_lq", &[c, c], Init::Glorot)?,
            w_lk: reg("rla.w_lk", &[c, c], Init::Glorot)?,
            fuse_w1: reg("rla.fuse.fc1.w", &[c, c], Init::Glorot)?,
            fuse_b1: reg("rla.fuse.fc1.b", &[c], Init::Zeros)?,
            fuse_w2: reg("rla.fuse.fc2.w", &[c, c], Init::Glorot)?,
            fuse_b2: reg("rla.fuse.fc2.b", &[c], Init::Zeros)?,
        };
        let heads = HeadParams {
            minimap_w: reg("heads.minimap.w", &[c, 1], Init::Glorot)?,
            minimap_b: reg("heads.minimap.b", &[1], Init::Zeros)?,
            no_target_w: reg("heads.no_target.w", &[c, 1], Init::Glorot)?,
            no_target_b: reg("heads.no_target.b", &[1], Init::Zeros)?,
        };
        Ok(Rela {
            cfg,
            queries,
            ria,
            rla,
            heads,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        f_i: &ImageFeature,
        f_t: &TextFeature,
        f_m: &MaskFeature,
    ) -> Result<RelaVars> {
        let c = self.cfg.channels;
        if f_i.c != c || tape.value(f_t.var).cols() != c || tape.value(f_m.var).cols() != c {
            return Err(GresError::dim(
                "rela.forward",
                &[
                    f_i.c,
                    tape.value(f_t.var).cols(),
                    tape.value(f_m.var).cols(),
                ],
                &[c],
            ));
        }
        if (f_m.h, f_m.w) != (f_i.h, f_i.w) {
            return Err(GresError::dim(
                "rela.forward",
                &[f_i.h, f_i.w],
                &[f_m.h, f_m.w],
            ));
        }
        let mut p = |id: ParamId| tape.param(params, id);
        let w_ik = p(self.ria.w_ik);
        let w_iv = p(self.ria.w_iv);
        let filter_w = p(self.ria.filter_w);
        let filter_b = p(self.ria.filter_b);

        let (a_ri, f_r_prime) = if self.cfg.hard_split_pooling {
            let pool = hard_split_pooling_matrix(f_i.h, f_i.w, self.cfg.p)?;
            let a_ri = tape.constant(pool);
            let f_r_prime = ria_collect(tape, a_ri, f_i.var, w_iv)?;
            (a_ri, f_r_prime)
        } else {
            let q_r = tape.param(params, self.queries.q_r);
            let a_ri = ria_attention(tape, q_r, f_i.var, w_ik)?;
            let f_r_prime = ria_collect(tape, a_ri, f_i.var, w_iv)?;
            (a_ri, f_r_prime)
        };
        let f_f = region_filter(tape, f_r_prime, filter_w, filter_b)?;

        let f_r1 = if self.cfg.region_att {
            let wq = tape.param(params, self.rla.self_wq);
            let wk = tape.param(params, self.rla.self_wk);
            let wv = tape.param(params, self.rla.self_wv);
            Some(rla_self_attention(tape, f_r_prime, wq, wk, wv)?)
        } else {
            None
        };
        let (a_l, f_r2) = if self.cfg.language_att {
            let w_lq = tape.param(params, self.rla.w_lq);
            let w_lk = tape.param(params, self.rla.w_lk);
            rla_cross_attention(tape, f_r_prime, f_t.var, w_lq, w_lk)?
        } else {
            pointwise_language_fusion(tape, f_r_prime, f_t.var)?
        };
        let mlp = [
            tape.param(params, self.rla.fuse_w1),
            tape.param(params, self.rla.fuse_b1),
            tape.param(params, self.rla.fuse_w2),
            tape.param(params, self.rla.fuse_b2),
        ];
        let f_r = rla_fuse(tape, f_r_prime, f_r1, f_r2, mlp)?;

        let mw = tape.param(params, self.heads.minimap_w);
        let mb = tape.param(params, self.heads.minimap_b);
        let x_r = minimap_head(tape, f_r, mw, mb)?;
        let nw = tape.param(params, self.heads.no_target_w);
        let nb = tape.param(params, self.heads.no_target_b);
        let e = no_target_head(tape, f_r, nw, nb)?;
        let m_r = region_masks(tape, f_f, f_m.var)?;
        let m = aggregate_mask(tape, x_r, m_r, self.cfg.aggregation)?;

        Ok(RelaVars {
            a_ri,
            f_r_prime,
            f_f,
            f_r1,
            a_l,
            f_r2,
            f_r,
            x_r,
            e,
            m_r,
            m,
            h: f_i.h,
            w: f_i.w,
        })
    }
}

/// How the no-target decision is made at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NoTargetMode {
    /// Trust the no-target score `e`.
    #[default]
    Classifier,
    /// Ignore `e`; masks with fewer than [`MIN_POSITIVE_PIXELS`] positives become empty.
    FiftyPix,
}

pub const MIN_POSITIVE_PIXELS: usize = 50;

impl std::str::FromStr for NoTargetMode {
    type Err = GresError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classifier" => Ok(NoTargetMode::Classifier),
            "50pix" => Ok(NoTargetMode::FiftyPix),
            other => Err(GresError::Input(format!(
                "unknown no-target mode {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for NoTargetMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoTargetMode::Classifier => "classifier",
            NoTargetMode::FiftyPix => "50pix",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictConfig {
    pub mode: NoTargetMode,
    pub mask_threshold: f64,
    pub no_target_threshold: f64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            mode: NoTargetMode::Classifier,
            mask_threshold: 0.5,
            no_target_threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub mask: Mask,
    pub no_target: bool,
}

/// Binarizes the soft mask, upsamples it to the image size and applies the no-target rule.
pub fn predict(
    out: &RelaOutput,
    image_h: usize,
    image_w: usize,
    cfg: &PredictConfig,
) -> Prediction {
    if cfg.mode == NoTargetMode::Classifier && out.e >= cfg.no_target_threshold {
        return Prediction {
            mask: Mask::empty(image_h, image_w),
            no_target: true,
        };
    }
    let grid: Vec<bool> = out
        .m
        .data()
        .iter()
        .map(|&v| v >= cfg.mask_threshold)
        .collect();
    let grid = Mask {
        height: out.h,
        width: out.w,
        data: grid,
    };
    let mask = grid.resize_nearest(image_h, image_w);
    match cfg.mode {
        NoTargetMode::Classifier => Prediction {
            mask,
            no_target: false,
        },
        NoTargetMode::FiftyPix if mask.count() < MIN_POSITIVE_PIXELS => Prediction {
            mask: Mask::empty(image_h, image_w),
            no_target: true,
        },
        NoTargetMode::FiftyPix => Prediction {
            mask,
            no_target: false,
        },
    }
}

#[cfg(test)]
mod tests;
