//! Element-level quality classification for quad-dominant shell meshes.
//!
//! The pipeline runs in four stages:
//!
//! - [`mesh`]: nodes, triangle/quadrilateral elements, the canonical
//!   `meshgrade/v1` document and OBJ import ([`obj`]).
//! - [`metrics`]: seven low-level properties per element (skewness, aspect
//!   ratio, warpage, area, curvature, triangle flag, border flag).
//! - [`graph`] and [`features`]: the node-sharing element neighbourhood graph,
//!   k-ring frontiers, and the per-element feature tensor built by aggregating
//!   properties (min, max, mean) over each frontier.
//! - [`models`] and [`eval`]: extremely randomised trees and a feedforward
//!   network trained on labelled elements, evaluated with mesh-grouped
//!   crossvalidation and pooled predictions.
//!
//! [`synth`] generates labelled synthetic meshes with injected defects and
//! [`viz`] writes legacy VTK files for inspecting predictions.

pub mod eval;
pub mod features;
pub mod geometry;
pub mod graph;
pub mod mesh;
pub mod metrics;
pub mod models;
pub mod obj;
pub mod synth;
#[cfg(test)]
mod testutil;
pub mod viz;

pub use eval::{ConfusionMatrix, FoldAssignment, Metrics, PrCurve, PredictionRecord};
pub use features::{Aggregator, Dataset, FeatureConfig, FeatureTensor, LabelledMesh};
pub use graph::NeighbourhoodGraph;
pub use mesh::{Element, ElementId, Label, LabelSet, Mesh, MeshError, Node, NodeId};
pub use metrics::{GeometryError, Property, PropertyTable};
pub use models::{ExtraTreesModel, FnnModel, Model, ModelKind, TrainConfig};
