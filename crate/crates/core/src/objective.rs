//! Training objective: cross-entropy on the output mask, on the minimap of
//! region probabilities, and on the no-target score.

use crate::error::{GresError, Result};
use crate::numcore::{Tape, Tensor, Var, BCE_EPS};
use crate::raster::{Mask, RgbImage};
use crate::rela::{RelaOutput, RelaVars};

/// One image/expression pair with its ground truth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GresSample {
    pub image: RgbImage,
    pub expression: String,
    pub m_gt: Mask,
    /// True when the expression refers to nothing in the image.
    pub e_gt: bool,
}

impl GresSample {
    pub fn new(image: RgbImage, expression: String, m_gt: Mask, e_gt: bool) -> Result<Self> {
        if (image.height, image.width) != (m_gt.height, m_gt.width) {
            return Err(GresError::Input(format!(
                "image is {}x{} but mask is {}x{}",
                image.height, image.width, m_gt.height, m_gt.width
            )));
        }
        if e_gt != m_gt.is_empty() {
            return Err(GresError::Input(format!(
                "no-target flag {e_gt} disagrees with a mask of {} positive pixels",
                m_gt.count()
            )));
        }
        Ok(GresSample {
            image,
            expression,
            m_gt,
            e_gt,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub mask: f64,
    pub minimap: f64,
    pub no_target: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            mask: 1.0,
            minimap: 1.0,
            no_target: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub l_mask: f64,
    pub l_minimap: f64,
    pub l_nt: f64,
    pub total: f64,
    pub weights: LossWeights,
}

/// Foreground fraction per cell of a `p×p` grid over the mask, row-major.
pub fn minimap_downsample(m_gt: &Mask, p: usize) -> Result<Tensor> {
    if p == 0 || p > m_gt.height.min(m_gt.width) {
        return Err(GresError::Input(format!(
            "minimap side {p} does not fit a {}x{} mask",
            m_gt.height, m_gt.width
        )));
    }
    Tensor::new(vec![p * p], m_gt.cell_fractions(p, p)?)
}

/// Binary mask target on the `h×w` feature grid: cell fraction ≥ 0.5.
pub fn mask_target(m_gt: &Mask, h: usize, w: usize) -> Result<Tensor> {
    let data = m_gt
        .cell_fractions(h, w)?
        .into_iter()
        .map(|f| if f >= 0.5 { 1.0 } else { 0.0 })
        .collect();
    Tensor::new(vec![h * w], data)
}

/// Everything a loss evaluation needs from the ground truth, precomputed once per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTargets {
    pub mask: Tensor,
    pub minimap: Tensor,
    pub no_target: Tensor,
}

impl LossTargets {
    pub fn new(m_gt: &Mask, e_gt: bool, grid_h: usize, grid_w: usize, p: usize) -> Result<Self> {
        Ok(LossTargets {
            mask: mask_target(m_gt, grid_h, grid_w)?,
            minimap: minimap_downsample(m_gt, p)?,
            no_target: Tensor::scalar(if e_gt { 1.0 } else { 0.0 }),
        })
    }
}

/// Builds the weighted loss on the tape. A term with weight 0 is left out of the
/// total entirely but its value is still reported.
pub fn compute_loss(
    tape: &mut Tape,
    vars: &RelaVars,
    targets: &LossTargets,
    weights: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let l_mask = tape.bce(vars.m, &targets.mask, BCE_EPS)?;
    let l_minimap = tape.bce(vars.x_r, &targets.minimap, BCE_EPS)?;
    let l_nt = tape.bce(vars.e, &targets.no_target, BCE_EPS)?;

    let mut total: Option<Var> = None;
    for (term, w) in [
        (l_mask, weights.mask),
        (l_minimap, weights.minimap),
        (l_nt, weights.no_target),
    ] {
        if w == 0.0 {
            continue;
        }
        let scaled = tape.scale(term, w);
        total = Some(match total {
            Some(acc) => tape.add(acc, scaled)?,
            None => scaled,
        });
    }
    let total = match total {
        Some(t) => t,
        None => tape.constant(Tensor::scalar(0.0)),
    };
    let breakdown = LossBreakdown {
        l_mask: tape.value(l_mask).item(),
        l_minimap: tape.value(l_minimap).item(),
        l_nt: tape.value(l_nt).item(),
        total: tape.value(total).item(),
        weights: *weights,
    };
    Ok((total, breakdown))
}

/// Loss of already-materialized outputs, without gradients.
pub fn loss_of_output(
    out: &RelaOutput,
    targets: &LossTargets,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let m = tape.constant(out.m.clone());
    let x_r = tape.constant(out.x_r.clone());
    let e = tape.constant(Tensor::scalar(out.e));
    let placeholder = tape.constant(Tensor::scalar(0.0));
    let vars = RelaVars {
        a_ri: placeholder,
        f_r_prime: placeholder,
        f_f: placeholder,
        f_r1: None,
        a_l: placeholder,
        f_r2: placeholder,
        f_r: placeholder,
        x_r,
        e,
        m_r: placeholder,
        m,
        h: out.h,
        w: out.w,
    };
    Ok(compute_loss(&mut tape, &vars, targets, weights)?.1)
}
