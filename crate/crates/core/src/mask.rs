use serde::{Deserialize, Serialize};

use crate::boxes::BBox;
use crate::error::{shape_err, Result};

/// Row-major binary pixel mask.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(shape_err!("{width}x{height} mask with {} bits", bits.len()));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..width * height)
            .map(|i| f(i % width, i / width))
            .collect();
        Self {
            width,
            height,
            bits,
        }
    }

    /// Pixels strictly above `threshold`.
    pub fn threshold(width: usize, height: usize, probs: &[f64], threshold: f64) -> Result<Self> {
        Self::from_bits(
            width,
            height,
            probs.iter().map(|&p| p > threshold).collect(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    fn same_size(&self, other: &Self) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(shape_err!(
                "mask sizes {}x{} and {}x{} differ",
                self.width,
                self.height,
                other.width,
                other.height
            ));
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &Self) -> Result<usize> {
        self.same_size(other)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count())
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.same_size(other)?;
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| a || b)
            .collect();
        Ok(Self {
            width: self.width,
            height: self.height,
            bits,
        })
    }

    /// Tight bounding box `[min, max + 1)` of the set pixels.
    pub fn bbox(&self) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        (x0 != usize::MAX).then(|| BBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64))
    }
}
