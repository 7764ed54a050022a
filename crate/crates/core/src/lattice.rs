//! Rectangular pixel lattices: grayscale observations and black/white pictures.
//!
//! Both are stored row-major; pixel `(row, col)` lives at `row * width + col`.

use rand::Rng;

use crate::error::{Error, Result};

/// Pixel colour in a binary picture. Black is 1, white is 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Color {
    Black,
    White,
}

impl Color {
    pub fn bit(self) -> u8 {
        match self {
            Color::Black => 1,
            Color::White => 0,
        }
    }
}

/// Grid of real-valued observations.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value at row {}, col {}",
                i / width,
                i % width
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width.saturating_mul(height)])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// Black-and-white picture with 4-neighbour lattice structure.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, bits: Vec<u8>) -> Result<Self> {
        check_dims(width, height, bits.len())?;
        if let Some(i) = bits.iter().position(|&b| b > 1) {
            return Err(Error::invalid(format!(
                "pixel {i} has value {}, expected 0 or 1",
                bits[i]
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn filled(width: usize, height: usize, color: Color) -> Result<Self> {
        Self::new(width, height, vec![color.bit(); width.saturating_mul(height)])
    }

    /// Builds a picture from rows of `'1'`/`'0'` (or `'#'`/`'.'`) characters.
    pub fn from_rows(rows: &[&str]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut bits = Vec::with_capacity(width * height);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::invalid(format!("row {r} has length {}, expected {width}", row.len())));
            }
            for ch in row.chars() {
                bits.push(match ch {
                    '1' | '#' => 1,
                    '0' | '.' => 0,
                    other => return Err(Error::invalid(format!("unexpected pixel character {other:?}"))),
                });
            }
        }
        Self::new(width, height, bits)
    }

    pub(crate) fn from_bits_unchecked(width: usize, height: usize, bits: Vec<u8>) -> Self {
        debug_assert_eq!(bits.len(), width * height);
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn into_bits(self) -> Vec<u8> {
        self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.bits[row * self.width + col]
    }

    pub fn is_black(&self, row: usize, col: usize) -> bool {
        self.get(row, col) == 1
    }

    pub fn set(&mut self, row: usize, col: usize, color: Color) {
        self.bits[row * self.width + col] = color.bit();
    }

    pub fn count(&self, color: Color) -> usize {
        let black = self.bits.iter().filter(|&&b| b == 1).count();
        match color {
            Color::Black => black,
            Color::White => self.bits.len() - black,
        }
    }

    /// I.i.d. site percolation: each pixel is black with probability `p`.
    ///
    /// Every pixel consumes one uniform draw `u` and is black iff `u < p`,
    /// so pictures built from equally seeded generators are coupled across
    /// `p` and grow monotonically with it.
    pub fn random_sites<R: Rng + ?Sized>(width: usize, height: usize, p: f64, rng: &mut R) -> Result<Self> {
        let len = width.saturating_mul(height);
        let bits = (0..len).map(|_| u8::from(rng.random::<f64>() < p)).collect();
        Self::new(width, height, bits)
    }

    /// The picture viewed as observations in {0, 1}.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            values: self.bits.iter().map(|&b| f64::from(b)).collect(),
        }
    }

    /// Rotation by 90 degrees clockwise.
    pub fn rotate90(&self) -> Self {
        let (w, h) = (self.height, self.width);
        let mut bits = vec![0u8; self.bits.len()];
        for r in 0..self.height {
            for c in 0..self.width {
                // (r, c) -> (c, height - 1 - r)
                bits[c * w + (self.height - 1 - r)] = self.get(r, c);
            }
        }
        Self::from_bits_unchecked(w, h, bits)
    }

    /// Mirror image across the vertical axis.
    pub fn flip_horizontal(&self) -> Self {
        let mut bits = Vec::with_capacity(self.bits.len());
        for row in self.bits.chunks(self.width) {
            bits.extend(row.iter().rev());
        }
        Self::from_bits_unchecked(self.width, self.height, bits)
    }
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!("image dimensions must be positive, got {width}x{height}")));
    }
    match width.checked_mul(height) {
        Some(n) if n == len => Ok(()),
        _ => Err(Error::invalid(format!(
            "expected {width}x{height} = {} pixels, got {len}",
            width.saturating_mul(height)
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_checks() {
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(GrayImage::new(0, 2, vec![]).is_err());
        assert!(GrayImage::new(1, 1, vec![f64::NAN]).is_err());
        assert!(BinaryImage::new(2, 1, vec![0, 2]).is_err());
        assert!(BinaryImage::from_rows(&["10", "1"]).is_err());
    }

    #[test]
    fn rotate_and_flip() {
        let img = BinaryImage::from_rows(&["110", "001"]).unwrap();
        let rot = img.rotate90();
        assert_eq!(rot, BinaryImage::from_rows(&["01", "01", "10"]).unwrap());
        assert_eq!(rot.rotate90().rotate90().rotate90(), img);
        assert_eq!(img.flip_horizontal(), BinaryImage::from_rows(&["011", "100"]).unwrap());
        assert_eq!(img.count(Color::Black), 3);
        assert_eq!(img.count(Color::White), 3);
    }
}
