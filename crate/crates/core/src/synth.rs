//! Labelled synthetic meshes: structured quad grids mapped onto simple
//! surfaces, with injected geometric defects and dilated rework labels.
//!
//! Grid node `(r, c)` has id `r * (cols + 1) + c + 1` and element `(r, c)` has
//! id `r * cols + c + 1`. Triangulated defects keep the quad's id for the
//! first triangle and give the second one the next free id.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::LabelledMesh;
use crate::geometry::Vec3;
use crate::graph::NeighbourhoodGraph;
use crate::mesh::{Element, ElementId, Label, LabelSet, Mesh, MeshError, Node, NodeId};
use crate::metrics::{self, GeometryError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("no free element for {kind:?} defect after {attempts} draws")]
    Conflict { kind: DefectKind, attempts: usize },
    #[error("{kind:?} defect on element {element} could not reach severity {severity}")]
    Unreachable {
        kind: DefectKind,
        element: ElementId,
        severity: f64,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Surface {
    Flat,
    /// Bent about an axis parallel to the rows; `u` becomes arc length.
    CylinderBend { radius: f64 },
    /// Folded by `angle` degrees along the middle column line.
    Ridge { angle: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefectKind {
    Sliver,
    Skewed,
    Warped,
    Shrunk,
    Triangulated,
}

impl DefectKind {
    pub const ALL: [DefectKind; 5] = [
        DefectKind::Sliver,
        DefectKind::Skewed,
        DefectKind::Warped,
        DefectKind::Shrunk,
        DefectKind::Triangulated,
    ];
}

/// Severity is the required metric move: sliver, aspect ratio above
/// `1 + severity`; skewed and warped, degrees added to skewness or warpage;
/// shrunk, area divided by at least `1 + severity`. Triangulation ignores it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    pub kind: DefectKind,
    pub count: usize,
    pub severity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub rows: usize,
    pub cols: usize,
    pub spacing: f64,
    pub surface: Surface,
    /// In-plane node jitter as a fraction of the spacing; border nodes stay put.
    #[serde(default)]
    pub jitter: f64,
    #[serde(default)]
    pub defects: Vec<DefectSpec>,
    #[serde(default = "default_dilation")]
    pub dilation: usize,
    pub seed: u64,
}

fn default_dilation() -> usize {
    1
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            rows: 10,
            cols: 10,
            spacing: 1.0,
            surface: Surface::Flat,
            jitter: 0.0,
            defects: Vec::new(),
            dilation: 1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Spec(m.to_owned()));
        if self.rows < 2 || self.cols < 2 {
            return bad("rows and cols must be at least 2");
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return bad("spacing must be positive");
        }
        if !(0.0..0.25).contains(&self.jitter) {
            return bad("jitter must lie in [0, 0.25)");
        }
        match self.surface {
            Surface::CylinderBend { radius } if !(radius > 0.0 && radius.is_finite()) => {
                return bad("cylinder radius must be positive")
            }
            Surface::Ridge { angle } if !(0.0..180.0).contains(&angle) => {
                return bad("ridge angle must lie in [0, 180)")
            }
            _ => {}
        }
        let total: usize = self.defects.iter().map(|d| d.count).sum();
        if total > self.rows * self.cols {
            return bad("more defects than elements");
        }
        if self.defects.iter().any(|d| !(d.severity > 0.0 && d.severity.is_finite())) {
            return bad("severity must be positive");
        }
        Ok(())
    }

    fn surface_point(&self, u: f64, v: f64) -> [f64; 3] {
        match self.surface {
            Surface::Flat => [u, v, 0.0],
            Surface::CylinderBend { radius } => {
                let t = u / radius;
                [radius * t.sin(), v, radius * (1.0 - t.cos())]
            }
            Surface::Ridge { angle } => {
                let fold = self.spacing * (self.cols / 2) as f64;
                if u <= fold {
                    [u, v, 0.0]
                } else {
                    let a = angle.to_radians();
                    [fold + (u - fold) * a.cos(), v, (u - fold) * a.sin()]
                }
            }
        }
    }
}

pub fn node_id(spec: &SynthSpec, r: usize, c: usize) -> NodeId {
    NodeId((r * (spec.cols + 1) + c + 1) as u64)
}

pub fn element_id(spec: &SynthSpec, r: usize, c: usize) -> ElementId {
    ElementId((r * spec.cols + c + 1) as u64)
}

/// The undisturbed grid, every element labelled passed.
pub fn generate_grid(spec: &SynthSpec) -> Result<(Mesh, LabelSet), SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let s = spec.spacing;
    let mut nodes = Vec::with_capacity((spec.rows + 1) * (spec.cols + 1));
    for r in 0..=spec.rows {
        for c in 0..=spec.cols {
            let (mut u, mut v) = (c as f64 * s, r as f64 * s);
            let interior = r > 0 && r < spec.rows && c > 0 && c < spec.cols;
            if spec.jitter > 0.0 && interior {
                let j = spec.jitter * s;
                u += rng.random_range(-j..=j);
                v += rng.random_range(-j..=j);
            }
            nodes.push(Node::new(node_id(spec, r, c).0, spec.surface_point(u, v)));
        }
    }
    let mut elements = Vec::with_capacity(spec.rows * spec.cols);
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let corners = [
                node_id(spec, r, c),
                node_id(spec, r, c + 1),
                node_id(spec, r + 1, c + 1),
                node_id(spec, r + 1, c),
            ];
            elements.push(Element {
                id: element_id(spec, r, c),
                nodes: corners.to_vec(),
            });
        }
    }
    let mesh = Mesh::new(nodes, elements)?;
    let labels = LabelSet::all_passed(&mesh);
    Ok((mesh, labels))
}

/// Single-element mesh over the given corners, for measuring one element.
fn lone(points: &[Vec3]) -> Mesh {
    let nodes = points
        .iter()
        .enumerate()
        .map(|(i, p)| Node::new(i as u64 + 1, [p.x, p.y, p.z]))
        .collect();
    let ids: Vec<u64> = (1..=points.len() as u64).collect();
    Mesh::new(nodes, vec![Element::new(1, &ids)]).expect("four distinct nodes")
}

fn measure(points: &[Vec3], f: fn(&Element, &Mesh) -> Result<f64, GeometryError>) -> Result<f64, GeometryError> {
    let mesh = lone(points);
    f(&mesh.elements()[0], &mesh)
}

fn area(points: &[Vec3]) -> f64 {
    let mesh = lone(points);
    metrics::element_area(&mesh.elements()[0], &mesh)
}

/// Centroid, unit normal and in-plane axes of a quad.
struct Frame {
    centre: Vec3,
    normal: Vec3,
    eu: Vec3,
    ev: Vec3,
}

impl Frame {
    fn of(points: &[Vec3]) -> Result<Self, GeometryError> {
        let mesh = lone(points);
        let normal = metrics::element_normal(&mesh.elements()[0], &mesh)?;
        let centre = points.iter().sum::<Vec3>() / points.len() as f64;
        let edge = points[1] - points[0];
        let eu = (edge - normal * edge.dot(&normal)).normalize();
        let ev = normal.cross(&eu);
        Ok(Self { centre, normal, eu, ev })
    }

    fn height(&self, points: &[Vec3]) -> f64 {
        let ys = points.iter().map(|p| (p - self.centre).dot(&self.ev));
        let (lo, hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
        hi - lo
    }
}

/// New corner positions for a quad defect, or `None` when the severity
/// cannot be reached.
fn perturb(kind: DefectKind, severity: f64, p: &[Vec3; 4]) -> Result<Option<[Vec3; 4]>, GeometryError> {
    let f = Frame::of(p)?;
    let local = |q: &Vec3| ((q - f.centre).dot(&f.eu), (q - f.centre).dot(&f.ev), (q - f.centre).dot(&f.normal));
    match kind {
        DefectKind::Sliver => {
            let mut scale = 1.0 / (1.0 + severity);
            for _ in 0..40 {
                let q = p.map(|q| {
                    let (x, y, z) = local(&q);
                    f.centre + f.eu * x + f.ev * (y * scale) + f.normal * z
                });
                if measure(&q, metrics::aspect_ratio)? > 1.0 + severity {
                    return Ok(Some(q));
                }
                scale *= 0.9;
            }
            Ok(None)
        }
        DefectKind::Skewed => {
            let before = measure(p, metrics::skewness)?;
            let h = f.height(p);
            let mut angle = severity;
            while angle < 80.0 {
                let shift = f.eu * (h * angle.to_radians().tan());
                let q = [p[0], p[1], p[2] + shift, p[3] + shift];
                if measure(&q, metrics::skewness)? >= before + severity {
                    return Ok(Some(q));
                }
                angle += 0.5;
            }
            Ok(None)
        }
        DefectKind::Warped => {
            let before = measure(p, metrics::warpage)?;
            let size = area(p).sqrt();
            let mut lift = 0.05 * size;
            for _ in 0..80 {
                let q = [p[0], p[1], p[2] + f.normal * lift, p[3]];
                if measure(&q, metrics::warpage)? >= before + severity {
                    return Ok(Some(q));
                }
                lift *= 1.25;
            }
            Ok(None)
        }
        DefectKind::Shrunk => {
            let before = area(p);
            let mut scale = (1.0 / (1.0 + severity)).sqrt();
            for _ in 0..40 {
                let q = p.map(|q| f.centre + (q - f.centre) * scale);
                if area(&q) <= before / (1.0 + severity) {
                    return Ok(Some(q));
                }
                scale *= 0.98;
            }
            Ok(None)
        }
        DefectKind::Triangulated => Ok(Some(*p)),
    }
}

/// Applies the spec's defects to quads of `mesh`. Targets are drawn with the
/// spec's seed and never share a node with an earlier defect. Returns the
/// new mesh and the defect element ids (both triangles of a triangulation).
pub fn inject_defects(mesh: &Mesh, spec: &SynthSpec) -> Result<(Mesh, Vec<ElementId>), SynthError> {
    spec.validate()?;
    if spec.defects.iter().all(|d| d.count == 0) {
        return Ok((mesh.clone(), Vec::new()));
    }
    // offset keeps target draws independent of the jitter stream
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_defe_c7);
    let (mut nodes, mut elements) = mesh.clone().into_parts();
    let node_index: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
    let mut next_id = mesh.max_element_id().0 + 1;
    let mut used_nodes: HashSet<NodeId> = HashSet::new();
    let mut defects = Vec::new();
    let attempts = 1000;

    for d in &spec.defects {
        for _ in 0..d.count {
            let mut placed = false;
            for _ in 0..attempts {
                let e = rng.random_range(0..elements.len());
                let element = &elements[e];
                if element.is_triangle() || element.nodes.iter().any(|n| used_nodes.contains(n)) {
                    continue;
                }
                let corners: [Vec3; 4] = std::array::from_fn(|k| {
                    Vec3::from(nodes[node_index[&element.nodes[k]]].position)
                });
                let Some(moved) = perturb(d.kind, d.severity, &corners)? else {
                    return Err(SynthError::Unreachable {
                        kind: d.kind,
                        element: element.id,
                        severity: d.severity,
                    });
                };
                for (k, n) in element.nodes.iter().enumerate() {
                    let q = moved[k];
                    nodes[node_index[n]].position = [q.x, q.y, q.z];
                }
                used_nodes.extend(element.nodes.iter().copied());
                defects.push(element.id);
                if d.kind == DefectKind::Triangulated {
                    let v = element.nodes.clone();
                    elements[e].nodes = vec![v[0], v[1], v[2]];
                    elements.push(Element {
                        id: ElementId(next_id),
                        nodes: vec![v[0], v[2], v[3]],
                    });
                    defects.push(ElementId(next_id));
                    next_id += 1;
                }
                placed = true;
                break;
            }
            if !placed {
                return Err(SynthError::Conflict { kind: d.kind, attempts });
            }
        }
    }
    defects.sort_unstable();
    Ok((Mesh::new(nodes, elements)?, defects))
}

/// Rework on the `radius`-ring of every defect, passed elsewhere.
pub fn dilate_labels(mesh: &Mesh, defects: &[ElementId], radius: usize) -> LabelSet {
    let graph = NeighbourhoodGraph::build(mesh);
    let mut rework = BTreeSet::new();
    for &d in defects {
        if let Ok(ring) = graph.k_ring(d, radius) {
            rework.extend(ring);
        }
    }
    mesh.elements()
        .iter()
        .map(|e| (e.id, Label::from_flag(rework.contains(&e.id))))
        .collect()
}

#[derive(Clone, Debug)]
pub struct Synthetic {
    pub mesh: Mesh,
    pub labels: LabelSet,
    pub defects: Vec<ElementId>,
}

/// Grid, defects and dilated labels in one step; fails if any element of the
/// result is geometrically degenerate.
pub fn synthesize(spec: &SynthSpec) -> Result<Synthetic, SynthError> {
    let (grid, _) = generate_grid(spec)?;
    let (mesh, defects) = inject_defects(&grid, spec)?;
    let graph = NeighbourhoodGraph::build(&mesh);
    metrics::compute_property_table(&mesh, &graph)?;
    let labels = dilate_labels(&mesh, &defects, spec.dilation);
    Ok(Synthetic { mesh, labels, defects })
}

pub const BENCH_MESHES: usize = 60;
pub const BENCH_REWORK_TARGET: f64 = 0.03;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub id: String,
    pub spec: SynthSpec,
}

/// Specs of the default benchmark: 60 meshes of 25 to 900 elements on mixed
/// surfaces. Defect counts are spread with a running remainder so that the
/// dilated rework share comes out near 3%.
pub fn synth_bench_specs(seed: u64) -> Vec<BenchEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // interior defects dilate to a 3x3 patch
    let per_defect = 9.0;
    let mut carry = 0.5;
    (0..BENCH_MESHES)
        .map(|i| {
            let rows = rng.random_range(5..=30);
            let cols = rng.random_range(5..=30);
            let surface = match i % 3 {
                0 => Surface::Flat,
                1 => Surface::CylinderBend {
                    radius: rng.random_range(4.0..20.0),
                },
                _ => Surface::Ridge {
                    angle: rng.random_range(10.0..45.0),
                },
            };
            carry += BENCH_REWORK_TARGET * (rows * cols) as f64 / per_defect;
            let count = carry.floor() as usize;
            carry -= count as f64;
            let mut tally: HashMap<DefectKind, usize> = HashMap::new();
            for _ in 0..count {
                *tally.entry(DefectKind::ALL[rng.random_range(0..5)]).or_default() += 1;
            }
            let defects = DefectKind::ALL
                .iter()
                .filter_map(|&kind| {
                    let count = *tally.get(&kind)?;
                    let severity = match kind {
                        DefectKind::Sliver => rng.random_range(2.0..4.0),
                        DefectKind::Skewed => rng.random_range(20.0..35.0),
                        DefectKind::Warped => rng.random_range(10.0..30.0),
                        DefectKind::Shrunk => rng.random_range(1.0..3.0),
                        DefectKind::Triangulated => 1.0,
                    };
                    Some(DefectSpec { kind, count, severity })
                })
                .collect();
            BenchEntry {
                id: format!("synth_{i:03}"),
                spec: SynthSpec {
                    rows,
                    cols,
                    spacing: 1.0,
                    surface,
                    jitter: 0.05,
                    defects,
                    dilation: 1,
                    seed: seed.wrapping_add(i as u64),
                },
            }
        })
        .collect()
}

pub fn synth_bench(seed: u64) -> Result<Vec<LabelledMesh>, SynthError> {
    synth_bench_specs(seed)
        .into_par_iter()
        .map(|entry| {
            let s = synthesize(&entry.spec)?;
            Ok(LabelledMesh {
                id: entry.id,
                mesh: s.mesh,
                labels: s.labels,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub elements: usize,
    pub rework: usize,
    pub spec: SynthSpec,
}

/// Benchmark index written next to the mesh files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub seed: u64,
    pub meshes: Vec<ManifestEntry>,
}

pub const MANIFEST_FORMAT_TAG: &str = "meshgrade-bench/v1";
