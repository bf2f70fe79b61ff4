//! Tensor shapes and integer tensor values.
//!
//! All datapaths are 16-bit signed with wraparound, so every value is an
//! `i16` and arithmetic goes through the `wrapping_*` family.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Shape of a value flowing along a DFG edge: `int`, `int[n]` or `int[r][c]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn rank(&self) -> usize {
        match self {
            Shape::Scalar => 0,
            Shape::Vector(_) => 1,
            Shape::Matrix(..) => 2,
        }
    }

    pub fn elements(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Scalar => vec![],
            Shape::Vector(n) => vec![n],
            Shape::Matrix(r, c) => vec![r, c],
        }
    }

    /// Builds a shape from a dimension list, rejecting zero-sized dims.
    pub fn from_dims(dims: &[usize]) -> Result<Shape, ShapeError> {
        if dims.contains(&0) {
            return Err(ShapeError::ZeroDim(dims.to_vec()));
        }
        match *dims {
            [] => Ok(Shape::Scalar),
            [n] => Ok(Shape::Vector(n)),
            [r, c] => Ok(Shape::Matrix(r, c)),
            _ => Err(ShapeError::Rank(dims.len())),
        }
    }

    /// Row/column view: scalars are 1x1, vectors are columns.
    pub fn rows_cols(&self) -> (usize, usize) {
        match *self {
            Shape::Scalar => (1, 1),
            Shape::Vector(n) => (n, 1),
            Shape::Matrix(r, c) => (r, c),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Scalar => write!(f, "int"),
            Shape::Vector(n) => write!(f, "int[{n}]"),
            Shape::Matrix(r, c) => write!(f, "int[{r}][{c}]"),
        }
    }
}

impl Serialize for Shape {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.dims().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Shape {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let dims = Vec::<usize>::deserialize(d)?;
        Shape::from_dims(&dims).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("tensor rank {0} is not supported (at most 2)")]
    Rank(usize),
    #[error("dimensions must be positive, got {0:?}")]
    ZeroDim(Vec<usize>),
    #[error("{shape} needs {expected} elements, got {found}")]
    Length {
        shape: Shape,
        expected: usize,
        found: usize,
    },
    #[error("malformed tensor text: {0}")]
    Parse(String),
}

/// A concrete tensor: shape plus row-major 16-bit data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorValue {
    pub shape: Shape,
    pub data: Vec<i16>,
}

impl TensorValue {
    pub fn new(shape: Shape, data: Vec<i16>) -> Result<Self, ShapeError> {
        if data.len() != shape.elements() {
            return Err(ShapeError::Length {
                shape,
                expected: shape.elements(),
                found: data.len(),
            });
        }
        Ok(TensorValue { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        TensorValue {
            shape,
            data: vec![0; shape.elements()],
        }
    }

    pub fn scalar(v: i16) -> Self {
        TensorValue {
            shape: Shape::Scalar,
            data: vec![v],
        }
    }

    /// Element at (row, col) under the [`Shape::rows_cols`] view.
    pub fn at(&self, r: usize, c: usize) -> i16 {
        let (_, cols) = self.shape.rows_cols();
        self.data[r * cols + c]
    }

    pub fn nonzeros(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Parses comma-separated rows, one matrix row per line.
    pub fn from_csv(shape: Shape, text: &str) -> Result<Self, ShapeError> {
        let mut data = Vec::with_capacity(shape.elements());
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            for field in line.split(',') {
                let v = field
                    .trim()
                    .parse::<i16>()
                    .map_err(|e| ShapeError::Parse(format!("{field:?}: {e}")))?;
                data.push(v);
            }
        }
        TensorValue::new(shape, data)
    }

    pub fn to_csv(&self) -> String {
        let (rows, cols) = self.shape.rows_cols();
        let mut out = String::new();
        for r in 0..rows {
            let row: Vec<String> = (0..cols).map(|c| self.at(r, c).to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}
