use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Image dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub const fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

impl Default for Grid {
    fn default() -> Self {
        Self::new(32, 32)
    }
}

/// A single-channel row-major image.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame<T> {
    pub grid: Grid,
    pub data: Vec<T>,
}

impl<T: Copy> Frame<T> {
    pub fn filled(grid: Grid, value: T) -> Self {
        Self {
            grid,
            data: vec![value; grid.pixels()],
        }
    }

    pub fn from_vec(grid: Grid, data: Vec<T>) -> Result<Self> {
        if data.len() != grid.pixels() {
            return Err(Error::Shape(format!(
                "{} values for a {}x{} frame",
                data.len(),
                grid.height,
                grid.width
            )));
        }
        Ok(Self { grid, data })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.grid.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.grid.width + col] = value;
    }

    pub fn map<U>(&self, f: impl FnMut(T) -> U) -> Frame<U> {
        Frame {
            grid: self.grid,
            data: self.data.iter().copied().map(f).collect(),
        }
    }
}
