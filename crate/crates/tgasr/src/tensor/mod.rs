//! Dense tensor values, the reverse-mode gradient tape, and the
//! finite-difference verification oracle.
//!
//! Everything is double precision, row-major, and CPU-only. Broadcasting is
//! limited to bias-vector addition so every adjoint rule stays auditable.

mod gradcheck;
mod tape;

pub use gradcheck::{grad_check, BuiltGraph, GradCheckReport};
pub use tape::{NodeId, Tape};

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Result, TgError};
use crate::rng::SeedRng;

/// Dense multi-dimensional numeric array, row-major.
///
/// Values are validated finite at construction; the gradient tape rejects
/// non-finite leaves, so NaN/Inf cannot enter a graph silently.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TgError::Dim(format!(
                "extents must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TgError::Dim(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(TgError::NonFinite(format!(
                "tensor of shape {shape:?} contains {bad}"
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// Gaussian init, entries `std * N(0,1)`.
    pub fn randn(shape: Vec<usize>, std: f64, rng: &mut SeedRng) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| std * rng.normal()).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows of a 2-D tensor (a 1-D tensor counts as a single row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    /// Extent of the last axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn at2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    /// Maximum absolute element-wise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Named parameter collection. Ordered by name so serialization, gradient
/// reduction, and optimizer traversal are deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    map: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.map.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.map
            .get(name)
            .ok_or_else(|| TgError::Invalid(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.map
            .get_mut(name)
            .ok_or_else(|| TgError::Invalid(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    /// True when the named parameters are bit-identical in both sets.
    pub fn bits_equal(&self, other: &ParamSet, names: &[String]) -> bool {
        names
            .iter()
            .all(|n| match (self.map.get(n), other.map.get(n)) {
                (Some(a), Some(b)) => {
                    a.shape == b.shape
                        && a.data
                            .iter()
                            .zip(&b.data)
                            .all(|(x, y)| x.to_bits() == y.to_bits())
                }
                _ => false,
            })
    }
}

/// One forward pass over a parameter set: binds each named parameter to a
/// tape leaf exactly once (so shared parameters produce shared nodes and
/// gradients accumulate correctly), and tracks which leaves are trainable.
pub struct FwdCtx<'a> {
    pub tape: Tape,
    params: &'a ParamSet,
    trainable: Option<&'a BTreeSet<String>>,
    bound: BTreeMap<String, NodeId>,
}

impl<'a> FwdCtx<'a> {
    /// `trainable = None` means every parameter is differentiable (stage 1);
    /// otherwise only the listed names receive gradients.
    pub fn new(params: &'a ParamSet, trainable: Option<&'a BTreeSet<String>>) -> Self {
        Self {
            tape: Tape::new(),
            params,
            trainable,
            bound: BTreeMap::new(),
        }
    }

    /// Bind (or re-use) the leaf for a named parameter. Non-finite values
    /// are rejected here, at the graph boundary.
    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.bound.get(name) {
            return Ok(id);
        }
        let t = self.params.get(name)?.clone();
        if let Some(bad) = t.data().iter().find(|v| !v.is_finite()) {
            return Err(TgError::NonFinite(format!(
                "parameter {name} contains {bad}"
            )));
        }
        let requires = self.trainable.is_none_or(|set| set.contains(name));
        let id = if requires {
            self.tape.leaf(t)
        } else {
            self.tape.constant(t)
        };
        self.bound.insert(name.to_string(), id);
        Ok(id)
    }

    /// Non-differentiable input data (features, embeddings, masks).
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.tape.constant(t)
    }

    pub fn params(&self) -> &ParamSet {
        self.params
    }

    /// Gradient of the loss w.r.t. a bound parameter, after backward.
    pub fn grad_of(&self, name: &str) -> Option<&[f64]> {
        self.bound.get(name).and_then(|&id| self.tape.grad(id))
    }

    pub fn bound(&self) -> &BTreeMap<String, NodeId> {
        &self.bound
    }

    /// Convert into the shape `grad_check` consumes.
    pub fn into_built(self, loss: NodeId) -> BuiltGraph {
        BuiltGraph {
            tape: self.tape,
            loss,
            bound: self.bound,
        }
    }
}
