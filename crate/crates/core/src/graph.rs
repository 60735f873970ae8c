//! Element neighbourhood graph.
//!
//! One vertex per element; two vertices are adjacent iff the elements share at
//! least one node. Adjacency is stored in compressed rows over dense element
//! indices (the mesh's id order) and exposed through element ids.

use std::collections::{BTreeSet, HashMap};
use std::io::{self, Write};

use thiserror::Error;

use crate::mesh::{ElementId, Mesh, NodeId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("element {0} is not a vertex of the graph")]
    UnknownElement(ElementId),
}

#[derive(Clone, Debug)]
pub struct NeighbourhoodGraph {
    ids: Vec<ElementId>,
    index: HashMap<ElementId, usize>,
    offsets: Vec<usize>,
    adjacency: Vec<u32>,
}

impl NeighbourhoodGraph {
    /// Builds the graph through a node → incident-elements index.
    pub fn build(mesh: &Mesh) -> Self {
        let node_slot: HashMap<NodeId, usize> = mesh
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id, i))
            .collect();
        let mut incident: Vec<Vec<u32>> = vec![Vec::new(); mesh.nodes().len()];
        for (ei, element) in mesh.elements().iter().enumerate() {
            for node in &element.nodes {
                incident[node_slot[node]].push(ei as u32);
            }
        }

        let mut offsets = Vec::with_capacity(mesh.len() + 1);
        let mut adjacency = Vec::new();
        let mut scratch = Vec::new();
        offsets.push(0);
        for (ei, element) in mesh.elements().iter().enumerate() {
            scratch.clear();
            for node in &element.nodes {
                scratch.extend(incident[node_slot[node]].iter().filter(|&&w| w as usize != ei));
            }
            scratch.sort_unstable();
            scratch.dedup();
            adjacency.extend_from_slice(&scratch);
            offsets.push(adjacency.len());
        }

        let ids: Vec<ElementId> = mesh.elements().iter().map(|e| e.id).collect();
        let index = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        Self {
            ids,
            index,
            offsets,
            adjacency,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Vertex ids in ascending order.
    pub fn ids(&self) -> &[ElementId] {
        &self.ids
    }

    pub fn contains(&self, id: ElementId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn index_of(&self, id: ElementId) -> Result<usize, GraphError> {
        self.index
            .get(&id)
            .copied()
            .ok_or(GraphError::UnknownElement(id))
    }

    pub fn id_at(&self, index: usize) -> ElementId {
        self.ids[index]
    }

    /// Dense indices adjacent to the vertex at `index`, ascending.
    pub fn neighbour_indices(&self, index: usize) -> &[u32] {
        &self.adjacency[self.offsets[index]..self.offsets[index + 1]]
    }

    /// Neighbour ids, ascending.
    pub fn neighbours(&self, id: ElementId) -> Result<Vec<ElementId>, GraphError> {
        let i = self.index_of(id)?;
        Ok(self
            .neighbour_indices(i)
            .iter()
            .map(|&w| self.ids[w as usize])
            .collect())
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.adjacency.len() / 2
    }

    /// Stored adjacency entries (twice the edge count).
    pub fn adjacency_entries(&self) -> usize {
        self.adjacency.len()
    }

    /// `nh^k(id)`: vertices within `k` steps, including `id`.
    pub fn k_ring(&self, id: ElementId, k: usize) -> Result<BTreeSet<ElementId>, GraphError> {
        let layers = self.frontiers(id, k)?;
        Ok(layers.into_iter().flatten().collect())
    }

    /// `front^k(id)`: vertices at distance exactly `k`; `{id}` for `k = 0`.
    pub fn frontier(&self, id: ElementId, k: usize) -> Result<BTreeSet<ElementId>, GraphError> {
        let mut layers = self.frontiers(id, k)?;
        Ok(layers.pop().unwrap_or_default().into_iter().collect())
    }

    /// Frontiers `0..=k_max` of `id`, each sorted by id.
    pub fn frontiers(&self, id: ElementId, k_max: usize) -> Result<Vec<Vec<ElementId>>, GraphError> {
        let start = self.index_of(id)?;
        let mut scratch = BfsScratch::new(self.len());
        let mut layers = Vec::new();
        self.frontier_indices(start, k_max, &mut scratch, &mut layers);
        Ok(layers
            .into_iter()
            .map(|layer| {
                let mut ids: Vec<ElementId> = layer.into_iter().map(|w| self.ids[w as usize]).collect();
                ids.sort_unstable();
                ids
            })
            .collect())
    }

    /// Breadth-first layers around `start`; `out[k]` receives front^k as dense
    /// indices (unordered). `out` is resized to `k_max + 1`.
    pub fn frontier_indices(
        &self,
        start: usize,
        k_max: usize,
        scratch: &mut BfsScratch,
        out: &mut Vec<Vec<u32>>,
    ) {
        out.resize_with(k_max + 1, Vec::new);
        for layer in out.iter_mut() {
            layer.clear();
        }
        let epoch = scratch.next_epoch();
        scratch.stamp[start] = epoch;
        out[0].push(start as u32);
        for k in 1..=k_max {
            let (done, rest) = out.split_at_mut(k);
            let prev = &done[k - 1];
            let next = &mut rest[0];
            for &u in prev {
                for &w in self.neighbour_indices(u as usize) {
                    if scratch.stamp[w as usize] != epoch {
                        scratch.stamp[w as usize] = epoch;
                        next.push(w);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
        }
    }

    /// One line per vertex: `element_id: neighbour ids`.
    pub fn write_adjacency(&self, mut w: impl Write) -> io::Result<()> {
        for (i, id) in self.ids.iter().enumerate() {
            write!(w, "{id}:")?;
            for &n in self.neighbour_indices(i) {
                write!(w, " {}", self.ids[n as usize])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Reusable visit marks for repeated breadth-first searches.
#[derive(Clone, Debug)]
pub struct BfsScratch {
    stamp: Vec<u32>,
    epoch: u32,
}

impl BfsScratch {
    pub fn new(vertices: usize) -> Self {
        Self {
            stamp: vec![0; vertices],
            epoch: 0,
        }
    }

    fn next_epoch(&mut self) -> u32 {
        if self.epoch == u32::MAX {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 0;
        }
        self.epoch += 1;
        self.epoch
    }
}
