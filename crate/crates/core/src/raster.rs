//! Plain image and mask containers shared by the model, the generator and the evaluator.

use crate::error::{GresError, Result};

/// 8-bit RGB image, row-major, 3 bytes per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(GresError::Input(format!(
                "{height}x{width} rgb image needs {} bytes, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(RgbImage {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        RgbImage {
            height,
            width,
            data: rgb.repeat(height * width),
        }
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Binary segmentation mask.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(GresError::Input(format!(
                "{height}x{width} mask needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Mask {
            height,
            width,
            data,
        })
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn same_size(&self, other: &Mask) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Nearest-neighbour resize: target pixel (y, x) reads source (y·h/H, x·w/W).
    pub fn resize_nearest(&self, height: usize, width: usize) -> Mask {
        let mut out = Mask::empty(height, width);
        for y in 0..height {
            let sy = y * self.height / height;
            for x in 0..width {
                let sx = x * self.width / width;
                out.data[y * width + x] = self.get(sy, sx);
            }
        }
        out
    }

    /// Foreground fraction of each cell of a `rows × cols` grid, row-major.
    pub fn cell_fractions(&self, rows: usize, cols: usize) -> Result<Vec<f64>> {
        let ys = cell_bounds(self.height, rows)?;
        let xs = cell_bounds(self.width, cols)?;
        let mut out = Vec::with_capacity(rows * cols);
        for &(y0, y1) in &ys {
            for &(x0, x1) in &xs {
                let mut fg = 0usize;
                for y in y0..y1 {
                    fg += self.data[y * self.width + x0..y * self.width + x1]
                        .iter()
                        .filter(|&&v| v)
                        .count();
                }
                out.push(fg as f64 / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
        Ok(out)
    }
}

/// Splits `len` into `parts` half-open ranges of size `len / parts`, the last range
/// absorbing the remainder.
pub fn cell_bounds(len: usize, parts: usize) -> Result<Vec<(usize, usize)>> {
    if parts == 0 || parts > len {
        return Err(GresError::Input(format!(
            "cannot split {len} pixels into {parts} cells"
        )));
    }
    let base = len / parts;
    Ok((0..parts)
        .map(|i| {
            let start = i * base;
            let end = if i + 1 == parts { len } else { start + base };
            (start, end)
        })
        .collect())
}
