use serde::{Deserialize, Serialize};

use super::SemError;

/// Coordinate direction of a tensor-product element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub const fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Nodal values of one element, lexicographic with x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementField {
    pub index: [usize; 3],
    shape: [usize; 3],
    values: Vec<f64>,
}

impl ElementField {
    pub fn new(index: [usize; 3], shape: [usize; 3], values: Vec<f64>) -> Result<Self, SemError> {
        let expected = shape.iter().product::<usize>();
        if values.len() != expected {
            return Err(SemError::Dimension {
                expected,
                found: values.len(),
            });
        }
        Ok(Self { index, shape, values })
    }

    pub fn zeros(index: [usize; 3], shape: [usize; 3]) -> Self {
        Self {
            index,
            shape,
            values: vec![0.0; shape.iter().product()],
        }
    }

    /// Samples `f` at the tensor-product nodes given per axis.
    pub fn from_fn(index: [usize; 3], nodes: [&[f64]; 3], f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let shape = [nodes[0].len(), nodes[1].len(), nodes[2].len()];
        let mut values = Vec::with_capacity(shape.iter().product());
        for &z in nodes[2] {
            for &y in nodes[1] {
                for &x in nodes[0] {
                    values.push(f(x, y, z));
                }
            }
        }
        Self { index, shape, values }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, a: usize, b: usize, c: usize) -> f64 {
        self.values[a + self.shape[0] * (b + self.shape[1] * c)]
    }

    pub fn dot(&self, other: &ElementField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}
