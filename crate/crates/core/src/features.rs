//! Neighbourhood-aggregated feature tensors.
//!
//! For an element and each distance `k` in `0..=K`, every property is
//! aggregated over the k-ring frontier with every aggregator. The resulting
//! `(K+1) × m × n` tensor is flattened k-major, then by property, then by
//! aggregator. Empty frontiers (small meshes run out of rings) aggregate to 0.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{BfsScratch, GraphError, NeighbourhoodGraph};
use crate::mesh::{ElementId, Label, LabelSet, Mesh};
use crate::metrics::{compute_property_table, GeometryError, Property, PropertyTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Min,
    Max,
    Mean,
}

impl Aggregator {
    pub const ALL: [Aggregator; 3] = [Aggregator::Min, Aggregator::Max, Aggregator::Mean];

    pub fn name(self) -> &'static str {
        match self {
            Aggregator::Min => "min",
            Aggregator::Max => "max",
            Aggregator::Mean => "mean",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == name)
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Value used for every aggregator over an empty frontier.
pub const EMPTY_FILL: f64 = 0.0;

/// Min, max or mean of a multiset; [`EMPTY_FILL`] when empty.
pub fn aggregate(values: &[f64], agg: Aggregator) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    aggregate_sorted(&sorted, agg)
}

// Summing in sorted order keeps the mean independent of frontier order; the
// clamp keeps min <= mean <= max under rounding.
fn aggregate_sorted(sorted: &[f64], agg: Aggregator) -> f64 {
    let (Some(&lo), Some(&hi)) = (sorted.first(), sorted.last()) else {
        return EMPTY_FILL;
    };
    match agg {
        Aggregator::Min => lo,
        Aggregator::Max => hi,
        Aggregator::Mean => (sorted.iter().sum::<f64>() / sorted.len() as f64).clamp(lo, hi),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Largest frontier distance `K`.
    pub k_max: usize,
    pub properties: Vec<Property>,
    pub aggregators: Vec<Aggregator>,
    /// Emit the `k = 0` slice once per property instead of once per
    /// aggregator (all aggregators agree on a singleton).
    #[serde(default)]
    pub skip_k0_duplicates: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            k_max: 4,
            properties: Property::ALL.to_vec(),
            aggregators: Aggregator::ALL.to_vec(),
            skip_k0_duplicates: false,
        }
    }
}

impl FeatureConfig {
    /// Length of the flattened feature vector.
    pub fn dimension(&self) -> usize {
        let (m, n) = (self.properties.len(), self.aggregators.len());
        if self.skip_k0_duplicates {
            m + self.k_max * m * n
        } else {
            (self.k_max + 1) * m * n
        }
    }

    /// Names such as `k1.warpage.max`, in vector order.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dimension());
        for k in 0..=self.k_max {
            for p in &self.properties {
                if k == 0 && self.skip_k0_duplicates {
                    names.push(format!("k0.{p}"));
                    continue;
                }
                for a in &self.aggregators {
                    names.push(format!("k{k}.{p}.{a}"));
                }
            }
        }
        names
    }
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("mesh {mesh}: {source}")]
    Geometry {
        mesh: String,
        #[source]
        source: GeometryError,
    },
    #[error("mesh {mesh}: element {element} has no label")]
    Unlabelled { mesh: String, element: ElementId },
    #[error("mesh id {0} appears more than once")]
    DuplicateMesh(String),
    #[error("feature vector has length {found}, expected {expected}")]
    Shape { expected: usize, found: usize },
}

/// Per-element `(K+1) × m × n` aggregate statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    k_max: usize,
    properties: Vec<Property>,
    aggregators: Vec<Aggregator>,
    values: Vec<f64>,
}

impl FeatureTensor {
    /// Shape `(K + 1, m, n)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.k_max + 1, self.properties.len(), self.aggregators.len())
    }

    pub fn properties(&self) -> &[Property] {
        &self.properties
    }

    pub fn aggregators(&self) -> &[Aggregator] {
        &self.aggregators
    }

    pub fn get(&self, k: usize, property: usize, aggregator: usize) -> f64 {
        let (_, m, n) = self.shape();
        self.values[(k * m + property) * n + aggregator]
    }

    /// Full k-major / property / aggregator vector of length `(K+1)·m·n`.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.clone()
    }

    /// Vector layout selected by `config` (drops the `k = 0` duplicates when
    /// `skip_k0_duplicates` is set).
    pub fn flatten_for(&self, config: &FeatureConfig) -> Vec<f64> {
        if !config.skip_k0_duplicates {
            return self.flatten();
        }
        let (_, m, n) = self.shape();
        let mut out: Vec<f64> = (0..m).map(|i| self.get(0, i, 0)).collect();
        out.extend_from_slice(&self.values[m * n..]);
        out
    }

    /// Inverse of [`FeatureTensor::flatten`].
    pub fn reshape(
        values: Vec<f64>,
        k_max: usize,
        properties: Vec<Property>,
        aggregators: Vec<Aggregator>,
    ) -> Result<Self, FeatureError> {
        let expected = (k_max + 1) * properties.len() * aggregators.len();
        if values.len() != expected {
            return Err(FeatureError::Shape {
                expected,
                found: values.len(),
            });
        }
        Ok(Self {
            k_max,
            properties,
            aggregators,
            values,
        })
    }
}

fn fill_tensor(
    table: &PropertyTable,
    layers: &[Vec<u32>],
    config: &FeatureConfig,
    buf: &mut Vec<f64>,
    out: &mut [f64],
) {
    let n = config.aggregators.len();
    let mut slot = 0;
    for layer in layers {
        for property in &config.properties {
            buf.clear();
            buf.extend(layer.iter().map(|&w| table.rows()[w as usize][property.column()]));
            buf.sort_by(f64::total_cmp);
            for (j, agg) in config.aggregators.iter().enumerate() {
                out[slot + j] = aggregate_sorted(buf, *agg);
            }
            slot += n;
        }
    }
}

/// Feature tensor of one element; `table` and `graph` must come from the same mesh.
pub fn feature_tensor(
    element: ElementId,
    table: &PropertyTable,
    graph: &NeighbourhoodGraph,
    config: &FeatureConfig,
) -> Result<FeatureTensor, FeatureError> {
    let start = graph.index_of(element)?;
    let mut layers = Vec::new();
    graph.frontier_indices(start, config.k_max, &mut BfsScratch::new(graph.len()), &mut layers);
    let mut values = vec![0.0; (config.k_max + 1) * config.properties.len() * config.aggregators.len()];
    fill_tensor(table, &layers, config, &mut Vec::new(), &mut values);
    Ok(FeatureTensor {
        k_max: config.k_max,
        properties: config.properties.clone(),
        aggregators: config.aggregators.clone(),
        values,
    })
}

/// Feature vectors of every element of one mesh, row-major in element id order.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshFeatures {
    pub ids: Vec<ElementId>,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl MeshFeatures {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Feature vectors for all vertices of `graph`, computed in parallel.
pub fn feature_vectors(
    table: &PropertyTable,
    graph: &NeighbourhoodGraph,
    config: &FeatureConfig,
) -> MeshFeatures {
    let full = (config.k_max + 1) * config.properties.len() * config.aggregators.len();
    let dim = config.dimension();
    let skip = full - dim;
    let mut values = vec![0.0; graph.len() * dim];
    values
        .par_chunks_mut(dim.max(1))
        .enumerate()
        .for_each_init(
            || (BfsScratch::new(graph.len()), Vec::new(), Vec::new(), vec![0.0; full]),
            |(scratch, layers, buf, tensor), (i, out)| {
                graph.frontier_indices(i, config.k_max, scratch, layers);
                fill_tensor(table, layers, config, buf, tensor);
                if skip == 0 {
                    out.copy_from_slice(tensor);
                } else {
                    let (m, n) = (config.properties.len(), config.aggregators.len());
                    for p in 0..m {
                        out[p] = tensor[p * n];
                    }
                    out[m..].copy_from_slice(&tensor[m * n..]);
                }
            },
        );
    MeshFeatures {
        ids: graph.ids().to_vec(),
        dim,
        values,
    }
}

/// Graph, property table and feature vectors for a single mesh.
pub fn featurize_mesh(mesh: &Mesh, config: &FeatureConfig) -> Result<MeshFeatures, GeometryError> {
    let graph = NeighbourhoodGraph::build(mesh);
    let table = compute_property_table(mesh, &graph)?;
    Ok(feature_vectors(&table, &graph, config))
}

/// A mesh with ground-truth labels, identified by `id`.
#[derive(Clone, Debug)]
pub struct LabelledMesh {
    pub id: String,
    pub mesh: Mesh,
    pub labels: LabelSet,
}

/// Labelled feature rows, each tagged with its mesh for grouped splitting.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dim: usize,
    values: Vec<f64>,
    labels: Vec<Label>,
    elements: Vec<ElementId>,
    groups: Vec<u32>,
    mesh_ids: Vec<String>,
    mesh_lookup: HashMap<String, u32>,
}

impl Dataset {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            values: Vec::new(),
            labels: Vec::new(),
            elements: Vec::new(),
            groups: Vec::new(),
            mesh_ids: Vec::new(),
            mesh_lookup: HashMap::new(),
        }
    }

    pub fn push(
        &mut self,
        mesh_id: &str,
        element: ElementId,
        features: &[f64],
        label: Label,
    ) -> Result<(), FeatureError> {
        if features.len() != self.dim {
            return Err(FeatureError::Shape {
                expected: self.dim,
                found: features.len(),
            });
        }
        let group = match self.mesh_lookup.get(mesh_id) {
            Some(&g) => g,
            None => {
                let g = self.mesh_ids.len() as u32;
                self.mesh_ids.push(mesh_id.to_owned());
                self.mesh_lookup.insert(mesh_id.to_owned(), g);
                g
            }
        };
        self.values.extend_from_slice(features);
        self.labels.push(label);
        self.elements.push(element);
        self.groups.push(group);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Row-major feature matrix.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn label(&self, i: usize) -> Label {
        self.labels[i]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn element(&self, i: usize) -> ElementId {
        self.elements[i]
    }

    pub fn mesh_id(&self, i: usize) -> &str {
        &self.mesh_ids[self.groups[i] as usize]
    }

    /// Group index of row `i` into [`Dataset::mesh_ids`].
    pub fn group(&self, i: usize) -> usize {
        self.groups[i] as usize
    }

    /// Distinct mesh ids in first-seen order.
    pub fn mesh_ids(&self) -> &[String] {
        &self.mesh_ids
    }

    pub fn rework_share(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.labels.iter().filter(|l| l.is_rework()).count() as f64 / self.len() as f64
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut out = Dataset::new(self.dim);
        out.values.reserve(indices.len() * self.dim);
        for &i in indices {
            out.push(self.mesh_id(i), self.elements[i], self.row(i), self.labels[i])
                .expect("same dimension");
        }
        out
    }

    /// `mesh_id,element_id,f_0,...,f_{D-1},label`.
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        write!(w, "mesh_id,element_id")?;
        for j in 0..self.dim {
            write!(w, ",f_{j}")?;
        }
        writeln!(w, ",label")?;
        for i in 0..self.len() {
            write!(w, "{},{}", self.mesh_id(i), self.elements[i])?;
            for v in self.row(i) {
                write!(w, ",{v}")?;
            }
            writeln!(w, ",{}", self.labels[i])?;
        }
        Ok(())
    }
}

/// Featurizes every element of every mesh. Rows are ordered by mesh id, then
/// element id.
pub fn build_dataset(meshes: &[LabelledMesh], config: &FeatureConfig) -> Result<Dataset, FeatureError> {
    let mut order: Vec<&LabelledMesh> = meshes.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = order.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(FeatureError::DuplicateMesh(w[0].id.clone()));
    }
    for m in &order {
        if let Some(element) = m.labels.first_unlabelled(&m.mesh) {
            return Err(FeatureError::Unlabelled {
                mesh: m.id.clone(),
                element,
            });
        }
    }

    let per_mesh = order
        .par_iter()
        .map(|m| {
            featurize_mesh(&m.mesh, config).map_err(|source| FeatureError::Geometry {
                mesh: m.id.clone(),
                source,
            })
        })
        .collect::<Vec<_>>();

    let mut data = Dataset::new(config.dimension());
    for (m, features) in order.iter().zip(per_mesh) {
        let features = features?;
        for (i, id) in features.ids.iter().enumerate() {
            let label = m.labels.get(*id).expect("checked above");
            data.push(&m.id, *id, features.row(i), label)?;
        }
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{quad_grid, single};
    use approx::assert_relative_eq;

    #[test]
    fn aggregates() {
        assert_eq!(aggregate(&[1.0, 2.0, 3.0], Aggregator::Mean), 2.0);
        for agg in Aggregator::ALL {
            assert_eq!(aggregate(&[4.5], agg), 4.5);
            assert_eq!(aggregate(&[], agg), 0.0);
        }
        assert_eq!(aggregate(&[3.0, -1.0, 2.0], Aggregator::Min), -1.0);
        assert_eq!(aggregate(&[3.0, -1.0, 2.0], Aggregator::Max), 3.0);
    }

    #[test]
    fn dimensions() {
        assert_eq!(FeatureConfig::default().dimension(), 105);
        let k0 = FeatureConfig {
            k_max: 0,
            ..FeatureConfig::default()
        };
        assert_eq!(k0.dimension(), 21);
        let dedup = FeatureConfig {
            skip_k0_duplicates: true,
            ..FeatureConfig::default()
        };
        assert_eq!(dedup.dimension(), 91);
        assert_eq!(dedup.column_names().len(), 91);
        assert_eq!(FeatureConfig::default().column_names()[3], "k0.aspect_ratio.min");
    }

    fn tensor_of(mesh: &Mesh, id: u64, config: &FeatureConfig) -> FeatureTensor {
        let graph = NeighbourhoodGraph::build(mesh);
        let table = compute_property_table(mesh, &graph).unwrap();
        feature_tensor(ElementId(id), &table, &graph, config).unwrap()
    }

    #[test]
    fn lone_element_has_empty_outer_slices() {
        let mesh = single(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [2.0, 1.0, 0.0], [0.0, 1.0, 0.0]]);
        let config = FeatureConfig {
            k_max: 1,
            ..FeatureConfig::default()
        };
        let t = tensor_of(&mesh, 1, &config);
        assert_eq!(t.shape(), (2, 7, 3));
        let own = [0.0, 2.0, 0.0, 2.0, 0.0, 0.0, 1.0];
        for (i, v) in own.iter().enumerate() {
            for j in 0..3 {
                assert_relative_eq!(t.get(0, i, j), *v, epsilon = 1e-12);
                assert_eq!(t.get(1, i, j), 0.0);
            }
        }
    }

    #[test]
    fn centre_of_grid_area_slice() {
        let mesh = quad_grid(3, 3);
        let config = FeatureConfig {
            k_max: 1,
            ..FeatureConfig::default()
        };
        let t = tensor_of(&mesh, 5, &config);
        let area = Property::Area.column();
        for j in 0..3 {
            assert_eq!(t.get(1, area, j), 1.0);
        }
        // border share over the 8 surrounding elements
        let border = Property::IsBorder.column();
        assert_eq!(t.get(1, border, 0), 1.0);
        assert_eq!(t.get(0, border, 2), 0.0);
    }

    #[test]
    fn flatten_reshape_roundtrip() {
        let mesh = quad_grid(3, 4);
        let config = FeatureConfig::default();
        let t = tensor_of(&mesh, 6, &config);
        let v = t.flatten();
        assert_eq!(v.len(), 105);
        let back = FeatureTensor::reshape(v, 4, Property::ALL.to_vec(), Aggregator::ALL.to_vec()).unwrap();
        assert_eq!(back, t);
        assert!(FeatureTensor::reshape(vec![0.0; 3], 4, Property::ALL.to_vec(), Aggregator::ALL.to_vec()).is_err());
    }

    #[test]
    fn bulk_vectors_match_single_tensor() {
        let mesh = quad_grid(4, 5);
        for config in [
            FeatureConfig::default(),
            FeatureConfig {
                skip_k0_duplicates: true,
                ..FeatureConfig::default()
            },
        ] {
            let all = featurize_mesh(&mesh, &config).unwrap();
            for (i, id) in all.ids.iter().enumerate() {
                let t = tensor_of(&mesh, id.0, &config);
                assert_eq!(all.row(i), t.flatten_for(&config).as_slice());
            }
        }
    }

    fn labelled(id: &str, mesh: Mesh) -> LabelledMesh {
        let labels = LabelSet::all_passed(&mesh);
        LabelledMesh {
            id: id.into(),
            mesh,
            labels,
        }
    }

    #[test]
    fn dataset_rows_and_errors() {
        let meshes = vec![labelled("b", quad_grid(3, 3)), labelled("a", quad_grid(2, 2))];
        let data = build_dataset(&meshes, &FeatureConfig::default()).unwrap();
        assert_eq!(data.len(), 13);
        assert_eq!(data.mesh_id(0), "a");
        assert_eq!(data.mesh_ids(), &["a".to_string(), "b".to_string()]);
        assert!((0..data.len()).all(|i| data.row(i).len() == 105));

        let mut partial = labelled("c", quad_grid(2, 2));
        partial.labels.remove(ElementId(3));
        assert!(matches!(
            build_dataset(&[partial], &FeatureConfig::default()),
            Err(FeatureError::Unlabelled { element: ElementId(3), .. })
        ));

        let dup = vec![labelled("a", quad_grid(2, 2)), labelled("a", quad_grid(2, 2))];
        assert!(matches!(
            build_dataset(&dup, &FeatureConfig::default()),
            Err(FeatureError::DuplicateMesh(_))
        ));
    }

    #[test]
    fn warped_centre_stands_out() {
        let grid = quad_grid(3, 3);
        // lift node 11 (shared only by element 5 and its upper-right neighbours)
        // then compare the centre against the far corner
        let mesh = grid.map_positions(|p| if p == [2.0, 2.0, 0.0] { [2.0, 2.0, 0.4] } else { p });
        let data = build_dataset(&[labelled("w", mesh)], &FeatureConfig::default()).unwrap();
        let warp = Property::Warpage.column() * 3;
        let centre = data.row(4)[warp];
        let corner = data.row(0)[warp];
        assert!(centre > corner, "{centre} vs {corner}");
        assert_eq!(corner, 0.0);
    }

    #[test]
    fn csv_header() {
        let data = build_dataset(&[labelled("m", quad_grid(1, 1))], &FeatureConfig { k_max: 0, ..FeatureConfig::default() }).unwrap();
        let mut out = Vec::new();
        data.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("mesh_id,element_id,f_0,f_1,"));
        assert!(header.ends_with("f_20,label"));
        assert!(text.lines().nth(1).unwrap().ends_with(",passed"));
    }
}
