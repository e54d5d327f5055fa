//! Discrete periodic lattice {0, 1/D, ..., (D-1)/D}^n and its nearest-neighbour
//! Laplacian.
//!
//! Nodes are stored in lexicographic order over integer coordinates
//! (j_1, ..., j_n) with j_1 the most significant digit. Every node has exactly
//! 2n formal neighbours l ± h e_k. For D = 2 the two neighbours along an axis
//! coincide and for D = 1 they are the node itself; the multiset is kept as is
//! so every sum over neighbours is taken literally.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest node count accepted. Far beyond anything the simulator can
/// integrate in reasonable time; guards against D^n overflow.
const MAX_NODES: usize = 1 << 24;

/// Geometry of the discrete torus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeSpec {
    dim: usize,
    side: usize,
    nodes: usize,
    /// Flattened neighbour table, `2 * dim` entries per node: +e_1, -e_1, +e_2, ...
    neighbors: Vec<usize>,
}

impl LatticeSpec {
    pub fn new(dim: usize, side: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Lattice("spatial dimension n must be at least 1".into()));
        }
        if side == 0 {
            return Err(Error::Lattice("nodes per side D must be at least 1".into()));
        }
        let nodes = (0..dim)
            .try_fold(1usize, |acc, _| acc.checked_mul(side))
            .filter(|&n| n <= MAX_NODES)
            .ok_or_else(|| Error::Lattice(format!("D^n = {side}^{dim} is too large")))?;

        let mut neighbors = Vec::with_capacity(nodes * 2 * dim);
        let mut coords = vec![0usize; dim];
        for node in 0..nodes {
            decode(node, side, &mut coords);
            for axis in 0..dim {
                let j = coords[axis];
                for step in [(j + 1) % side, (j + side - 1) % side] {
                    coords[axis] = step;
                    neighbors.push(encode(&coords, side));
                }
                coords[axis] = j;
            }
        }

        Ok(Self {
            dim,
            side,
            nodes,
            neighbors,
        })
    }

    /// Spatial dimension n.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Nodes per side D.
    pub fn side(&self) -> usize {
        self.side
    }

    /// Grid spacing h = 1/D.
    pub fn h(&self) -> f64 {
        1.0 / self.side as f64
    }

    /// 1/h² = D², exact for any D we can store.
    pub fn inv_h2(&self) -> f64 {
        (self.side * self.side) as f64
    }

    /// Total node count N = D^n.
    pub fn len(&self) -> usize {
        self.nodes
    }

    pub fn is_empty(&self) -> bool {
        self.nodes == 0
    }

    /// Integer coordinates (j_1, ..., j_n) of a node.
    pub fn coords(&self, node: usize) -> Vec<usize> {
        let mut c = vec![0; self.dim];
        decode(node, self.side, &mut c);
        c
    }

    /// Position of a node on the torus, each coordinate in [0, 1).
    pub fn position(&self, node: usize) -> Vec<f64> {
        self.coords(node)
            .into_iter()
            .map(|j| j as f64 * self.h())
            .collect()
    }

    /// Node index of integer coordinates; coordinates are reduced mod D.
    pub fn index(&self, coords: &[usize]) -> usize {
        let reduced: Vec<usize> = coords.iter().map(|&j| j % self.side).collect();
        encode(&reduced, self.side)
    }

    /// The 2n neighbours of `node`, multiplicity retained.
    ///
    /// Panics if `node >= len()`.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        let k = 2 * self.dim;
        &self.neighbors[node * k..(node + 1) * k]
    }

    pub fn check(&self, field: &[f64]) -> Result<()> {
        if field.len() == self.nodes {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected: self.nodes,
                actual: field.len(),
            })
        }
    }

    /// Σ_{l'∼l} (f(l') − f(l)) / h² at one node.
    pub fn laplacian_at(&self, field: &[f64], node: usize) -> Result<f64> {
        self.check(field)?;
        if node >= self.nodes {
            return Err(Error::Lattice(format!(
                "node {node} out of range for {} nodes",
                self.nodes
            )));
        }
        Ok(self.lap_unchecked(field, node))
    }

    /// Laplacian at every node.
    pub fn laplacian(&self, field: &[f64]) -> Result<NodeField> {
        self.check(field)?;
        let mut out = vec![0.0; self.nodes];
        self.laplacian_into(field, &mut out);
        Ok(NodeField(out))
    }

    /// max_l |Δf(l)| together with the node where it is attained.
    pub fn max_abs_laplacian(&self, field: &[f64]) -> Result<(usize, f64)> {
        self.check(field)?;
        let mut worst = (0, 0.0);
        for node in 0..self.nodes {
            let a = self.lap_unchecked(field, node).abs();
            if a > worst.1 {
                worst = (node, a);
            }
        }
        Ok(worst)
    }

    /// Lengths must already match.
    pub(crate) fn laplacian_into(&self, field: &[f64], out: &mut [f64]) {
        debug_assert_eq!(field.len(), self.nodes);
        debug_assert_eq!(out.len(), self.nodes);
        for (node, o) in out.iter_mut().enumerate() {
            *o = self.lap_unchecked(field, node);
        }
    }

    #[inline]
    fn lap_unchecked(&self, field: &[f64], node: usize) -> f64 {
        let center = field[node];
        let sum: f64 = self
            .neighbors(node)
            .iter()
            .map(|&nb| field[nb] - center)
            .sum();
        sum * self.inv_h2()
    }
}

fn decode(mut node: usize, side: usize, coords: &mut [usize]) {
    for c in coords.iter_mut().rev() {
        *c = node % side;
        node /= side;
    }
}

fn encode(coords: &[usize], side: usize) -> usize {
    coords.iter().fold(0, |acc, &j| acc * side + j)
}

/// Shortest decimal that parses back to the same `f64`, switching to
/// exponent form for very small or very large magnitudes.
pub fn format_number(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-5..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

/// One scalar per lattice node in canonical order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeField(pub Vec<f64>);

impl NodeField {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn constant(len: usize, value: f64) -> Self {
        Self(vec![value; len])
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn mean(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    /// Whitespace separated decimal list, shortest round-trip representation.
    pub fn to_text(&self) -> String {
        let parts: Vec<String> = self.0.iter().map(|&x| format_number(x)).collect();
        parts.join(" ")
    }

    /// Parses a list separated by whitespace and/or commas.
    pub fn parse(text: &str) -> Result<Self> {
        text.split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::Invalid(format!("not a number: {s:?}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(NodeField)
    }
}

impl Deref for NodeField {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for NodeField {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for NodeField {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}
