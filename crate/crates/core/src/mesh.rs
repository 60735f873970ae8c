//! Mesh data model and the canonical `meshgrade/v1` document.
//!
//! Ids are explicit and never positional, so label sets stay valid when a
//! document reorders its records. A [`Mesh`] always satisfies the structural
//! invariants checked by [`validate`]; degenerate geometry is allowed here and
//! reported later by the metrics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Version tag carried by every canonical mesh document.
pub const FORMAT_TAG: &str = "meshgrade/v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ElementId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub position: [f64; 3],
}

impl Node {
    pub fn new(id: u64, position: [f64; 3]) -> Self {
        Self { id: NodeId(id), position }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementKind {
    Triangle,
    Quadrilateral,
}

/// A triangle or quadrilateral; node order is the cyclic winding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Element {
    pub id: ElementId,
    pub nodes: Vec<NodeId>,
}

impl Element {
    pub fn new(id: u64, nodes: &[u64]) -> Self {
        Self {
            id: ElementId(id),
            nodes: nodes.iter().copied().map(NodeId).collect(),
        }
    }

    /// `None` when the arity is neither 3 nor 4.
    pub fn kind(&self) -> Option<ElementKind> {
        match self.nodes.len() {
            3 => Some(ElementKind::Triangle),
            4 => Some(ElementKind::Quadrilateral),
            _ => None,
        }
    }

    pub fn is_triangle(&self) -> bool {
        self.nodes.len() == 3
    }

    /// Edges as unordered node pairs `(min, max)`, in winding order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        let n = self.nodes.len();
        (0..n).map(move |i| {
            let a = self.nodes[i];
            let b = self.nodes[(i + 1) % n];
            if a <= b {
                (a, b)
            } else {
                (b, a)
            }
        })
    }

    /// Same element with the winding reversed.
    pub fn reversed(&self) -> Self {
        let mut nodes = self.nodes.clone();
        nodes.reverse();
        Self { id: self.id, nodes }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Rework,
    Passed,
}

impl Label {
    pub fn is_rework(self) -> bool {
        self == Label::Rework
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Rework => "rework",
            Label::Passed => "passed",
        }
    }

    pub fn from_flag(rework: bool) -> Self {
        if rework {
            Label::Rework
        } else {
            Label::Passed
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-element review labels.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelSet(BTreeMap<ElementId, Label>);

impl LabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every element of `mesh` labelled `passed`.
    pub fn all_passed(mesh: &Mesh) -> Self {
        Self(mesh.elements().iter().map(|e| (e.id, Label::Passed)).collect())
    }

    pub fn insert(&mut self, id: ElementId, label: Label) -> Option<Label> {
        self.0.insert(id, label)
    }

    pub fn get(&self, id: ElementId) -> Option<Label> {
        self.0.get(&id).copied()
    }

    pub fn remove(&mut self, id: ElementId) -> Option<Label> {
        self.0.remove(&id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ElementId, Label)> + '_ {
        self.0.iter().map(|(k, v)| (*k, *v))
    }

    pub fn rework_count(&self) -> usize {
        self.0.values().filter(|l| l.is_rework()).count()
    }

    /// Every labelled id must exist in `mesh`.
    pub fn check_against(&self, mesh: &Mesh) -> Result<(), MeshError> {
        match self.0.keys().find(|id| mesh.element(**id).is_none()) {
            Some(id) => Err(MeshError::UnknownLabelledElement(*id)),
            None => Ok(()),
        }
    }

    /// First element of `mesh` without a label, if any.
    pub fn first_unlabelled(&self, mesh: &Mesh) -> Option<ElementId> {
        mesh.elements()
            .iter()
            .map(|e| e.id)
            .find(|id| !self.0.contains_key(id))
    }
}

impl FromIterator<(ElementId, Label)> for LabelSet {
    fn from_iter<T: IntoIterator<Item = (ElementId, Label)>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// One violated structural invariant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Finding {
    EmptyMesh,
    NonPositiveNodeId(NodeId),
    DuplicateNodeId(NodeId),
    NonFinitePosition(NodeId),
    NonPositiveElementId(ElementId),
    DuplicateElementId(ElementId),
    BadArity { element: ElementId, arity: usize },
    DuplicateNodeInElement { element: ElementId, node: NodeId },
    DanglingNode { element: ElementId, node: NodeId },
    DuplicateElement { element: ElementId, duplicate_of: ElementId },
}

impl Finding {
    /// Short name of the violated invariant.
    pub fn invariant(&self) -> &'static str {
        match self {
            Finding::EmptyMesh => "mesh has no elements",
            Finding::NonPositiveNodeId(_) => "node id not positive",
            Finding::DuplicateNodeId(_) => "duplicate node id",
            Finding::NonFinitePosition(_) => "non-finite node position",
            Finding::NonPositiveElementId(_) => "element id not positive",
            Finding::DuplicateElementId(_) => "duplicate element id",
            Finding::BadArity { .. } => "element arity not 3 or 4",
            Finding::DuplicateNodeInElement { .. } => "duplicate node in element",
            Finding::DanglingNode { .. } => "dangling node reference",
            Finding::DuplicateElement { .. } => "duplicate element",
        }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = self.invariant();
        match self {
            Finding::EmptyMesh => f.write_str(what),
            Finding::NonPositiveNodeId(n)
            | Finding::DuplicateNodeId(n)
            | Finding::NonFinitePosition(n) => write!(f, "{what}: node {n}"),
            Finding::NonPositiveElementId(e) | Finding::DuplicateElementId(e) => {
                write!(f, "{what}: element {e}")
            }
            Finding::BadArity { element, arity } => {
                write!(f, "{what}: element {element} has {arity} nodes")
            }
            Finding::DuplicateNodeInElement { element, node }
            | Finding::DanglingNode { element, node } => {
                write!(f, "{what}: element {element}, node {node}")
            }
            Finding::DuplicateElement {
                element,
                duplicate_of,
            } => write!(f, "{what}: element {element} repeats element {duplicate_of}"),
        }
    }
}

/// Findings from [`validate`]; empty iff the structure is a valid mesh.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for finding in &self.findings {
            writeln!(f, "{finding}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("malformed mesh document: {0}")]
    Malformed(String),
    #[error("unsupported document version {found:?}, expected {FORMAT_TAG:?}")]
    UnsupportedVersion { found: String },
    #[error("invalid mesh: {0}")]
    Invalid(Finding),
    #[error("label refers to unknown element {0}")]
    UnknownLabelledElement(ElementId),
    #[error("obj line {line}: {message}")]
    Obj { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Checks every structural invariant of a node/element collection.
pub fn validate(nodes: &[Node], elements: &[Element]) -> ValidationReport {
    let mut findings = Vec::new();
    if elements.is_empty() {
        findings.push(Finding::EmptyMesh);
    }

    let mut node_ids = HashSet::with_capacity(nodes.len());
    for node in nodes {
        if node.id.0 == 0 {
            findings.push(Finding::NonPositiveNodeId(node.id));
        }
        if !node_ids.insert(node.id) {
            findings.push(Finding::DuplicateNodeId(node.id));
        }
        if node.position.iter().any(|c| !c.is_finite()) {
            findings.push(Finding::NonFinitePosition(node.id));
        }
    }

    let mut element_ids = HashSet::with_capacity(elements.len());
    let mut node_sets: HashMap<Vec<NodeId>, ElementId> = HashMap::with_capacity(elements.len());
    for element in elements {
        if element.id.0 == 0 {
            findings.push(Finding::NonPositiveElementId(element.id));
        }
        if !element_ids.insert(element.id) {
            findings.push(Finding::DuplicateElementId(element.id));
        }
        if element.kind().is_none() {
            findings.push(Finding::BadArity {
                element: element.id,
                arity: element.nodes.len(),
            });
        }
        let mut seen = HashSet::with_capacity(element.nodes.len());
        for &node in &element.nodes {
            if !seen.insert(node) {
                findings.push(Finding::DuplicateNodeInElement {
                    element: element.id,
                    node,
                });
            }
            if !node_ids.contains(&node) {
                findings.push(Finding::DanglingNode {
                    element: element.id,
                    node,
                });
            }
        }
        let mut key = element.nodes.clone();
        key.sort_unstable();
        key.dedup();
        if let Some(&first) = node_sets.get(&key) {
            findings.push(Finding::DuplicateElement {
                element: element.id,
                duplicate_of: first,
            });
        } else {
            node_sets.insert(key, element.id);
        }
    }

    ValidationReport { findings }
}

/// A validated mesh. Nodes and elements are kept sorted by id.
#[derive(Clone, Debug)]
pub struct Mesh {
    nodes: Vec<Node>,
    elements: Vec<Element>,
    node_index: HashMap<NodeId, usize>,
    element_index: HashMap<ElementId, usize>,
}

impl PartialEq for Mesh {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.elements == other.elements
    }
}

impl Mesh {
    /// Builds a mesh, rejecting the first structural finding.
    pub fn new(mut nodes: Vec<Node>, mut elements: Vec<Element>) -> Result<Self, MeshError> {
        let report = validate(&nodes, &elements);
        if let Some(finding) = report.findings.into_iter().next() {
            return Err(MeshError::Invalid(finding));
        }
        nodes.sort_by_key(|n| n.id);
        elements.sort_by_key(|e| e.id);
        let node_index = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let element_index = elements.iter().enumerate().map(|(i, e)| (e.id, i)).collect();
        Ok(Self {
            nodes,
            elements,
            node_index,
            element_index,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.node_index.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn element(&self, id: ElementId) -> Option<&Element> {
        self.element_index.get(&id).map(|&i| &self.elements[i])
    }

    /// Dense position of an element in [`Mesh::elements`].
    pub fn element_index(&self, id: ElementId) -> Option<usize> {
        self.element_index.get(&id).copied()
    }

    /// Position of a node referenced by one of this mesh's elements.
    ///
    /// Panics if `id` is not part of the mesh.
    pub fn position(&self, id: NodeId) -> [f64; 3] {
        self.nodes[self.node_index[&id]].position
    }

    pub fn max_node_id(&self) -> NodeId {
        self.nodes.last().map_or(NodeId(0), |n| n.id)
    }

    pub fn max_element_id(&self) -> ElementId {
        self.elements.last().map_or(ElementId(0), |e| e.id)
    }

    /// Applies `f` to every node position.
    pub fn map_positions(&self, mut f: impl FnMut([f64; 3]) -> [f64; 3]) -> Self {
        let mut out = self.clone();
        for node in &mut out.nodes {
            node.position = f(node.position);
        }
        out
    }

    pub fn into_parts(self) -> (Vec<Node>, Vec<Element>) {
        (self.nodes, self.elements)
    }
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: u64,
    xyz: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct ElementRecord {
    id: u64,
    nodes: Vec<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    format: String,
    nodes: Vec<NodeRecord>,
    elements: Vec<ElementRecord>,
    #[serde(default)]
    labels: Option<BTreeMap<u64, Label>>,
}

/// Parses a canonical document. Labels are returned iff the document has a
/// `labels` section.
pub fn parse_mesh(text: &str) -> Result<(Mesh, Option<LabelSet>), MeshError> {
    let doc: Document =
        serde_json::from_str(text).map_err(|e| MeshError::Malformed(e.to_string()))?;
    if doc.format != FORMAT_TAG {
        return Err(MeshError::UnsupportedVersion { found: doc.format });
    }
    let nodes = doc
        .nodes
        .into_iter()
        .map(|n| Node::new(n.id, n.xyz))
        .collect();
    let elements = doc
        .elements
        .into_iter()
        .map(|e| Element::new(e.id, &e.nodes))
        .collect();
    let mesh = Mesh::new(nodes, elements)?;
    let labels = doc
        .labels
        .map(|m| m.into_iter().map(|(k, v)| (ElementId(k), v)).collect::<LabelSet>());
    if let Some(labels) = &labels {
        labels.check_against(&mesh)?;
    }
    Ok((mesh, labels))
}

/// Every structural finding of a canonical document, rather than the first.
pub fn validate_document(text: &str) -> Result<ValidationReport, MeshError> {
    let doc: Document =
        serde_json::from_str(text).map_err(|e| MeshError::Malformed(e.to_string()))?;
    if doc.format != FORMAT_TAG {
        return Err(MeshError::UnsupportedVersion { found: doc.format });
    }
    let nodes: Vec<Node> = doc.nodes.iter().map(|n| Node::new(n.id, n.xyz)).collect();
    let elements: Vec<Element> = doc
        .elements
        .iter()
        .map(|e| Element::new(e.id, &e.nodes))
        .collect();
    Ok(validate(&nodes, &elements))
}

/// Serializes a mesh (and optional labels) one record per line, sorted by id.
pub fn serialize_mesh(mesh: &Mesh, labels: Option<&LabelSet>) -> String {
    let mut out = String::with_capacity(64 * (mesh.nodes.len() + mesh.elements.len()));
    let _ = writeln!(out, "{{\n  \"format\": \"{FORMAT_TAG}\",\n  \"nodes\": [");
    write_records(
        &mut out,
        mesh.nodes.iter().map(|n| NodeRecord {
            id: n.id.0,
            xyz: n.position,
        }),
    );
    out.push_str("  ],\n  \"elements\": [\n");
    write_records(
        &mut out,
        mesh.elements.iter().map(|e| ElementRecord {
            id: e.id.0,
            nodes: e.nodes.iter().map(|n| n.0).collect(),
        }),
    );
    out.push_str("  ]");
    if let Some(labels) = labels {
        out.push_str(",\n  \"labels\": {");
        let mut first = true;
        for (id, label) in labels.iter() {
            out.push_str(if first { "\n" } else { ",\n" });
            first = false;
            let _ = write!(out, "    \"{id}\": \"{label}\"");
        }
        out.push_str(if first { "}" } else { "\n  }" });
    }
    out.push_str("\n}\n");
    out
}

fn write_records<T: Serialize>(out: &mut String, records: impl Iterator<Item = T>) {
    let mut first = true;
    for record in records {
        if !first {
            out.push_str(",\n");
        }
        first = false;
        out.push_str("    ");
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
    }
    if !first {
        out.push('\n');
    }
}

pub fn read_mesh_file(path: impl AsRef<Path>) -> Result<(Mesh, Option<LabelSet>), MeshError> {
    parse_mesh(&std::fs::read_to_string(path)?)
}

pub fn write_mesh_file(
    path: impl AsRef<Path>,
    mesh: &Mesh,
    labels: Option<&LabelSet>,
) -> Result<(), MeshError> {
    std::fs::write(path, serialize_mesh(mesh, labels))?;
    Ok(())
}
