use crate::error::{PruneError, Result};

/// Which axis of the host matrix a mask indexes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    Column,
    Row,
}

/// Sorted set of pruned indices along one axis of a host matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PruneMask {
    indices: Vec<usize>,
    axis: Axis,
    host_dim: usize,
}

impl PruneMask {
    /// Sorts `indices`; duplicates and indices `>= host_dim` are rejected.
    pub fn new(mut indices: Vec<usize>, axis: Axis, host_dim: usize) -> Result<Self> {
        indices.sort_unstable();
        if let Some(w) = indices.windows(2).find(|w| w[0] == w[1]) {
            return Err(PruneError::pre(
                "PruneMask::new",
                format!("duplicate index {}", w[0]),
            ));
        }
        if let Some(&last) = indices.last() {
            if last >= host_dim {
                return Err(PruneError::dim(
                    "PruneMask::new",
                    format!("index {last} out of range for dimension {host_dim}"),
                ));
            }
        }
        Ok(Self {
            indices,
            axis,
            host_dim,
        })
    }

    pub fn columns(indices: Vec<usize>, host_dim: usize) -> Result<Self> {
        Self::new(indices, Axis::Column, host_dim)
    }

    pub fn rows(indices: Vec<usize>, host_dim: usize) -> Result<Self> {
        Self::new(indices, Axis::Row, host_dim)
    }

    pub fn empty(axis: Axis, host_dim: usize) -> Self {
        Self {
            indices: Vec::new(),
            axis,
            host_dim,
        }
    }

    pub fn full(axis: Axis, host_dim: usize) -> Self {
        Self {
            indices: (0..host_dim).collect(),
            axis,
            host_dim,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn host_dim(&self) -> usize {
        self.host_dim
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Fraction of the host dimension that is pruned.
    pub fn sparsity(&self) -> f64 {
        if self.host_dim == 0 {
            0.0
        } else {
            self.indices.len() as f64 / self.host_dim as f64
        }
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.indices.binary_search(&idx).is_ok()
    }

    /// Surviving indices, ascending.
    pub fn kept(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.host_dim - self.indices.len());
        let mut it = self.indices.iter().peekable();
        for i in 0..self.host_dim {
            if it.peek() == Some(&&i) {
                it.next();
            } else {
                out.push(i);
            }
        }
        out
    }

    /// Same indices relabelled onto another axis.
    pub fn with_axis(&self, axis: Axis) -> Self {
        Self {
            axis,
            ..self.clone()
        }
    }
}
