//! Row-major 2D grids: RGB images, scalar maps, normal maps and binary masks.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

/// An `H x W` RGB image with channel values in `[0, 1]`.
pub type ImageView = Grid<[f64; 3]>;
pub type ScalarMap = Grid<f64>;
pub type NormalMap = Grid<[f64; 3]>;
/// Values are 0 or 1.
pub type BinaryMap = Grid<u8>;

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape("grid data", width * height, data.len()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(col, row));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, col: usize, row: usize) -> &T {
        &self.data[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn ensure_same_shape<U>(&self, other: &Grid<U>, what: &'static str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(
                what,
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", other.height, other.width),
            ))
        }
    }
}

impl ImageView {
    /// Flat channel view, `H * W * 3` values.
    pub fn channels(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().flat_map(|p| p.iter().copied())
    }

    /// Snaps every channel to the nearest 8-bit level.
    pub fn quantized(&self) -> ImageView {
        Grid {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|p| p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0))
                .collect(),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let bad = self
            .channels()
            .filter(|v| !(0.0..=1.0).contains(v))
            .count();
        if bad > 0 {
            vec![format!("{bad} channel values outside [0, 1]")]
        } else {
            Vec::new()
        }
    }
}

impl BinaryMap {
    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b != 0).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(ScalarMap::from_vec(2, 2, vec![0.0; 3]).is_err());
        let g = ScalarMap::from_vec(3, 2, (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(*g.get(2, 1), 5.0);
    }

    #[test]
    fn quantize_is_idempotent() {
        let img = ImageView::from_fn(3, 3, |c, r| [c as f64 * 0.31, r as f64 * 0.17, 0.5]);
        let q = img.quantized();
        assert_eq!(q.quantized(), q);
    }

    #[test]
    fn out_of_range_values_are_reported() {
        let mut img = ImageView::filled(2, 2, [0.5; 3]);
        assert!(img.violations().is_empty());
        img.set(1, 1, [1.5, 0.0, -0.1]);
        assert_eq!(img.violations().len(), 1);
    }
}
