use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Row-major 2D grid of pixel values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::input(format!(
                "grid data has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Grid { width, height, data })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> T {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: T) {
        self.data[v * self.width + u] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Iterates `(u, v, value)` in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        let w = self.width;
        self.data.iter().enumerate().map(move |(i, &val)| (i % w, i / w, val))
    }
}

/// Depth channel of one capture, millimeters, `0` = missing.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub timestamp: f64,
    pub pixels: Grid<u16>,
}

impl DepthFrame {
    /// Zeroes every pixel farther than `cull_m` meters.
    pub fn culled(&self, cull_m: f64) -> DepthFrame {
        let mut pixels = self.pixels.clone();
        for d in pixels.as_mut_slice() {
            if f64::from(*d) / 1000.0 > cull_m {
                *d = 0;
            }
        }
        DepthFrame {
            timestamp: self.timestamp,
            pixels,
        }
    }
}

/// Per-frame instance segmentation: `0` = background, `1..N` = instance numbers
/// that are only meaningful within this frame.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMaskFrame {
    pub timestamp: f64,
    pub pixels: Grid<u8>,
}

impl InstanceMaskFrame {
    /// Sorted distinct non-zero ids.
    pub fn ids(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &id in self.pixels.as_slice() {
            seen[id as usize] = true;
        }
        (1..=255u8).filter(|&id| seen[id as usize]).collect()
    }
}

/// Output mask whose non-zero label ids resolve to EPCs through `labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMaskFrame {
    pub timestamp: f64,
    pub pixels: Grid<u8>,
    pub labels: BTreeMap<u8, String>,
}

impl LabeledMaskFrame {
    pub fn background(timestamp: f64, width: usize, height: usize) -> Self {
        LabeledMaskFrame {
            timestamp,
            pixels: Grid::filled(width, height, 0),
            labels: BTreeMap::new(),
        }
    }

    /// EPC painted at a pixel, if any.
    pub fn epc_at(&self, u: usize, v: usize) -> Option<&str> {
        match self.pixels.get(u, v) {
            0 => None,
            id => self.labels.get(&id).map(String::as_str),
        }
    }

    /// Checks that every painted id has an entry in the label table.
    pub fn validate(&self) -> Result<()> {
        for &id in self.pixels.as_slice() {
            if id != 0 && !self.labels.contains_key(&id) {
                return Err(Error::input(format!("label id {id} has no epc entry")));
            }
        }
        Ok(())
    }
}
