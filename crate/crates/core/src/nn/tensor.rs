use std::fmt;

use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Dense `(batch, feature_maps, spatial, time)` array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor4 { shape, data: vec![T::zero(); shape.iter().product()] }
    }

    /// Panics if `data.len()` differs from the shape's element count.
    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Self {
        assert_eq!(data.len(), shape.iter().product::<usize>(), "tensor data does not match shape {shape:?}");
        Tensor4 { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Elements per batch entry.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn sample(&self, b: usize) -> &[T] {
        let n = self.sample_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.sample_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn reshape(self, shape: [usize; 4]) -> Self {
        Tensor4::from_vec(shape, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks equally shaped `(spatial, time)` planes as single-map samples.
    pub fn from_planes<'a>(planes: impl IntoIterator<Item = &'a ndarray::Array2<T>>) -> Self {
        let mut data = Vec::new();
        let mut dims = None;
        let mut batch = 0;
        for p in planes {
            let d = p.dim();
            assert!(dims.map_or(true, |x| x == d), "planes differ in shape");
            dims = Some(d);
            data.extend(p.iter().copied());
            batch += 1;
        }
        let (s, t) = dims.unwrap_or((0, 0));
        Tensor4::from_vec([batch, 1, s, t], data)
    }
}

/// Activation shape as reported by a shape trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Maps([usize; 4]),
    Flat([usize; 2]),
}

impl Shape {
    /// Storage shape; flat activations keep features in the map axis.
    pub fn storage(&self) -> [usize; 4] {
        match *self {
            Shape::Maps(s) => s,
            Shape::Flat([b, n]) => [b, n, 1, 1],
        }
    }

    pub fn batch(&self) -> usize {
        self.storage()[0]
    }

    pub fn numel_per_sample(&self) -> usize {
        let s = self.storage();
        s[1] * s[2] * s[3]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Maps([a, b, c, d]) => write!(f, "({a}, {b}, {c}, {d})"),
            Shape::Flat([a, b]) => write!(f, "({a}, {b})"),
        }
    }
}
