//! Geometry of the oriented lattice truncated to the box `{0,..,L}^d`.
//!
//! Vertices are addressed by a row-major index with axis 0 varying slowest.
//! The edge `x -> x + e_i` exists whenever both ends lie in the box; edges
//! leaving the box are dropped, so the boundary is absorbing.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Vertex index into a [`BoxSpec`].
pub type Vertex = usize;

/// Largest box that can be materialized as dense per-vertex arrays.
pub const MAX_DENSE_VERTICES: usize = 1 << 26;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BoxShape", into = "BoxShape")]
pub struct BoxSpec {
    d: usize,
    side: usize,
    strides: Vec<usize>,
    n_vertices: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct BoxShape {
    d: usize,
    side: usize,
}

impl TryFrom<BoxShape> for BoxSpec {
    type Error = Error;
    fn try_from(s: BoxShape) -> Result<Self> {
        BoxSpec::new(s.d, s.side)
    }
}

impl From<BoxSpec> for BoxShape {
    fn from(b: BoxSpec) -> Self {
        BoxShape { d: b.d, side: b.side }
    }
}

impl BoxSpec {
    /// The box `{0,..,side}^d`. Fails when the vertex count overflows the
    /// index type; dense materialization has the tighter
    /// [`MAX_DENSE_VERTICES`] limit, checked by [`BoxSpec::ensure_dense`].
    pub fn new(d: usize, side: usize) -> Result<Self> {
        if d == 0 {
            return invalid("dimension d must be at least 1");
        }
        if side == 0 {
            return invalid("box side L must be at least 1");
        }
        let width = side
            .checked_add(1)
            .ok_or_else(|| Error::Resource("box side overflows".into()))?;
        let mut strides = vec![1usize; d];
        let mut n: usize = 1;
        for axis in (0..d).rev() {
            strides[axis] = n;
            n = n.checked_mul(width).ok_or_else(|| {
                Error::Resource(format!("box (L+1)^d = {width}^{d} is not addressable"))
            })?;
        }
        Ok(BoxSpec { d, side, strides, n_vertices: n })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn ensure_dense(&self) -> Result<()> {
        if self.n_vertices > MAX_DENSE_VERTICES {
            return Err(Error::Resource(format!(
                "box with {} vertices exceeds the dense limit of {}",
                self.n_vertices, MAX_DENSE_VERTICES
            )));
        }
        Ok(())
    }

    /// The origin `O`.
    pub fn origin(&self) -> Vertex {
        0
    }

    /// The far corner `(L,..,L)`; every vertex of the box has an oriented
    /// path to it.
    pub fn apex(&self) -> Vertex {
        self.n_vertices - 1
    }

    #[inline]
    pub fn coord(&self, v: Vertex, axis: usize) -> usize {
        (v / self.strides[axis]) % (self.side + 1)
    }

    pub fn coords(&self, v: Vertex) -> Vec<usize> {
        (0..self.d).map(|i| self.coord(v, i)).collect()
    }

    pub fn index(&self, coords: &[usize]) -> Result<Vertex> {
        if coords.len() != self.d {
            return invalid(format!("expected {} coordinates, got {}", self.d, coords.len()));
        }
        let mut v = 0;
        for (axis, &c) in coords.iter().enumerate() {
            if c > self.side {
                return invalid(format!("coordinate {c} outside box side {}", self.side));
            }
            v += c * self.strides[axis];
        }
        Ok(v)
    }

    pub fn contains(&self, v: Vertex) -> bool {
        v < self.n_vertices
    }

    /// `x + e_axis` if it is in the box.
    #[inline]
    pub fn out_neighbor(&self, v: Vertex, axis: usize) -> Option<Vertex> {
        if self.coord(v, axis) < self.side {
            Some(v + self.strides[axis])
        } else {
            None
        }
    }

    /// `x - e_axis` if it is in the box.
    #[inline]
    pub fn in_neighbor(&self, v: Vertex, axis: usize) -> Option<Vertex> {
        if self.coord(v, axis) > 0 {
            Some(v - self.strides[axis])
        } else {
            None
        }
    }

    /// `{x + e_i}` inside the box, ordered by axis.
    pub fn out_neighbors(&self, v: Vertex) -> Vec<Vertex> {
        (0..self.d).filter_map(|i| self.out_neighbor(v, i)).collect()
    }

    /// `{x - e_i}` inside the box, ordered by axis.
    pub fn in_neighbors(&self, v: Vertex) -> Vec<Vertex> {
        (0..self.d).filter_map(|i| self.in_neighbor(v, i)).collect()
    }

    /// Coordinate-level form of [`BoxSpec::out_neighbors`].
    pub fn out_neighbor_coords(&self, x: &[usize]) -> Result<Vec<Vec<usize>>> {
        let v = self.index(x)?;
        Ok(self.out_neighbors(v).into_iter().map(|w| self.coords(w)).collect())
    }

    pub fn in_neighbor_coords(&self, x: &[usize]) -> Result<Vec<Vec<usize>>> {
        let v = self.index(x)?;
        Ok(self.in_neighbors(v).into_iter().map(|w| self.coords(w)).collect())
    }

    /// Sum of coordinates; oriented paths from `O` reach level `n` after `n` steps.
    pub fn level(&self, v: Vertex) -> usize {
        (0..self.d).map(|i| self.coord(v, i)).sum()
    }
}
