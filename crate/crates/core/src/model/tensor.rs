//! Integer feature maps.
//!
//! Data is stored channel-major (CHW): plane `c` holds `h*w` values in
//! row-major order. Fully connected vectors are shape `1 x 1 x n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub fn new(h: usize, w: usize, c: usize) -> Self {
        Shape { h, w, c }
    }

    /// Flat vector shape for FC data.
    pub fn flat(n: usize) -> Self {
        Shape { h: 1, w: 1, c: n }
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

/// Feature map holding integer activation levels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<i32>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<i32>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "tensor data length {} does not match shape {}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn filled(shape: Shape, value: i32) -> Self {
        Tensor {
            data: vec![value; shape.len()],
            shape,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn as_slice(&self) -> &[i32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> i32 {
        self.data[c * self.shape.h * self.shape.w + y * self.shape.w + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: i32) {
        self.data[c * self.shape.h * self.shape.w + y * self.shape.w + x] = v;
    }

    /// The `h*w` plane of one channel.
    pub fn channel_plane(&self, c: usize) -> &[i32] {
        let plane = self.shape.h * self.shape.w;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channel_plane_mut(&mut self, c: usize) -> &mut [i32] {
        let plane = self.shape.h * self.shape.w;
        &mut self.data[c * plane..(c + 1) * plane]
    }
}
