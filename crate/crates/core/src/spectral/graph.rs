//! Class decomposition of the color digraph.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Pattern of entries that can be nonzero in a replacement matrix.
///
/// Entry `(k, q)` is true iff drawing color `k` can change the count of color
/// `q`. Only off-diagonal entries matter for the class structure.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<bool>>", into = "Vec<Vec<bool>>")]
pub struct StructureMatrix {
    dim: usize,
    nonzero: Vec<bool>,
}

impl StructureMatrix {
    pub fn new(rows: Vec<Vec<bool>>) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 || dim > super::MAX_DIM {
            return Err(Error::Invalid(format!(
                "dimension {dim} outside 1..={}",
                super::MAX_DIM
            )));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::Invalid(format!("structure row {i} has the wrong length")));
        }
        Ok(Self { dim, nonzero: rows.into_iter().flatten().collect() })
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self { dim: m.dim(), nonzero: m.as_slice().iter().map(|&x| x != 0.0).collect() }
    }

    pub fn full(dim: usize) -> Self {
        Self { dim, nonzero: vec![true; dim * dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, k: usize, q: usize) -> bool {
        self.nonzero[k * self.dim + q]
    }

    pub fn set(&mut self, k: usize, q: usize, value: bool) {
        self.nonzero[k * self.dim + q] = value;
    }

    /// Entrywise OR of two patterns of equal dimension.
    pub fn union(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let nonzero = self.nonzero.iter().zip(&other.nonzero).map(|(a, b)| *a || *b).collect();
        Self { dim: self.dim, nonzero }
    }

    fn successors(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.dim).filter(move |&q| q != k && self.get(k, q))
    }
}

impl TryFrom<Vec<Vec<bool>>> for StructureMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<bool>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<StructureMatrix> for Vec<Vec<bool>> {
    fn from(s: StructureMatrix) -> Self {
        s.nonzero.chunks(s.dim).map(<[bool]>::to_vec).collect()
    }
}

/// Maximal strongly connected classes of the off-diagonal digraph, listed in
/// a topological order of the condensation. Ties between classes that are
/// free to come first are broken by their smallest member, so the output is
/// deterministic. Members within a class are sorted.
pub fn strongly_connected_classes(s: &StructureMatrix) -> Vec<Vec<usize>> {
    let comp = tarjan(s);
    let n_comp = comp.iter().copied().max().map_or(0, |c| c + 1);

    let mut members = vec![Vec::new(); n_comp];
    for (k, &c) in comp.iter().enumerate() {
        members[c].push(k);
    }

    let mut indegree = vec![0usize; n_comp];
    let mut edges = vec![Vec::new(); n_comp];
    for k in 0..s.dim() {
        for q in s.successors(k) {
            let (a, b) = (comp[k], comp[q]);
            if a != b && !edges[a].contains(&b) {
                edges[a].push(b);
                indegree[b] += 1;
            }
        }
    }

    let mut ready: BinaryHeap<Reverse<(usize, usize)>> = (0..n_comp)
        .filter(|&c| indegree[c] == 0)
        .map(|c| Reverse((members[c][0], c)))
        .collect();
    let mut order = Vec::with_capacity(n_comp);
    while let Some(Reverse((_, c))) = ready.pop() {
        order.push(std::mem::take(&mut members[c]));
        for &b in &edges[c] {
            indegree[b] -= 1;
            if indegree[b] == 0 {
                ready.push(Reverse((members[b][0], b)));
            }
        }
    }
    order
}

pub fn is_irreducible(s: &StructureMatrix) -> bool {
    strongly_connected_classes(s).len() == 1
}

/// Iterative Tarjan; returns the component id of every vertex.
fn tarjan(s: &StructureMatrix) -> Vec<usize> {
    const UNVISITED: usize = usize::MAX;
    let n = s.dim();
    let mut index = vec![UNVISITED; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut comp = vec![UNVISITED; n];
    let mut stack = Vec::new();
    let mut next_index = 0;
    let mut next_comp = 0;

    for root in 0..n {
        if index[root] != UNVISITED {
            continue;
        }
        // (vertex, next successor to examine)
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = next_index;
        low[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&(v, start)) = call.last() {
            let mut next = start;
            let mut child = None;
            while next < n {
                let w = next;
                next += 1;
                if w == v || !s.get(v, w) {
                    continue;
                }
                if index[w] == UNVISITED {
                    child = Some(w);
                    break;
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            }
            if let Some(top) = call.last_mut() {
                top.1 = next;
            }
            if let Some(w) = child {
                index[w] = next_index;
                low[w] = next_index;
                next_index += 1;
                stack.push(w);
                on_stack[w] = true;
                call.push((w, 0));
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                while let Some(w) = stack.pop() {
                    on_stack[w] = false;
                    comp[w] = next_comp;
                    if w == v {
                        break;
                    }
                }
                next_comp += 1;
            }
        }
    }
    comp
}
