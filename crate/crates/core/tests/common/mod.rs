#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use meshgrade::mesh::{Element, ElementId, Mesh, Node};
use meshgrade::synth::{self, DefectKind, DefectSpec, Surface, SynthSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random mesh of at most `max_elements` elements: a jittered grid with a
/// few triangulations, random holes (so possibly several components) and
/// shuffled element ids.
pub fn random_mesh(seed: u64, max_elements: usize) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = rng.random_range(2..=12);
    let cols = rng.random_range(2..=(max_elements / 2 / rows).clamp(2, 16));
    let triangles = rng.random_range(0..=(rows * cols / 8));
    let spec = SynthSpec {
        rows,
        cols,
        surface: Surface::CylinderBend {
            radius: rng.random_range(3.0..10.0),
        },
        jitter: 0.1,
        defects: vec![DefectSpec {
            kind: DefectKind::Triangulated,
            count: triangles,
            severity: 1.0,
        }],
        seed,
        ..SynthSpec::default()
    };
    let mesh = synth::synthesize(&spec).expect("synthetic mesh").mesh;
    let (nodes, elements) = mesh.into_parts();
    let mut kept: Vec<Element> = elements
        .into_iter()
        .filter(|_| rng.random_bool(0.85))
        .collect();
    if kept.is_empty() {
        let (_, all) = synth::synthesize(&spec).unwrap().mesh.into_parts();
        kept.push(all[0].clone());
    }
    kept.truncate(max_elements);
    // fresh, non-contiguous ids in random order
    let mut ids: Vec<u64> = (1..=kept.len() as u64 * 3).collect();
    for i in (1..ids.len()).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    for (e, id) in kept.iter_mut().zip(ids) {
        e.id = ElementId(id);
    }
    let used: BTreeSet<_> = kept.iter().flat_map(|e| e.nodes.iter().copied()).collect();
    let nodes: Vec<Node> = nodes.into_iter().filter(|n| used.contains(&n.id)).collect();
    Mesh::new(nodes, kept).expect("valid mesh")
}

/// Element adjacency by pairwise comparison: two elements are neighbours
/// iff they share at least one node.
pub fn literal_adjacency(mesh: &Mesh) -> BTreeMap<ElementId, BTreeSet<ElementId>> {
    let elements = mesh.elements();
    let mut adj: BTreeMap<ElementId, BTreeSet<ElementId>> =
        elements.iter().map(|e| (e.id, BTreeSet::new())).collect();
    for (i, a) in elements.iter().enumerate() {
        for b in &elements[i + 1..] {
            if a.nodes.iter().any(|n| b.nodes.contains(n)) {
                adj.get_mut(&a.id).unwrap().insert(b.id);
                adj.get_mut(&b.id).unwrap().insert(a.id);
            }
        }
    }
    adj
}

/// `nh^0 = {v}`, `nh^k = nh^(k-1) ∪ N(nh^(k-1))` for `k = 0..=k_max`.
pub fn literal_rings(
    adj: &BTreeMap<ElementId, BTreeSet<ElementId>>,
    id: ElementId,
    k_max: usize,
) -> Vec<BTreeSet<ElementId>> {
    let mut rings = vec![BTreeSet::from([id])];
    for k in 1..=k_max {
        let inner = &rings[k - 1];
        let mut next = inner.clone();
        for v in inner {
            next.extend(adj[v].iter().copied());
        }
        rings.push(next);
    }
    rings
}

/// `fr^0 = nh^0`, `fr^k = nh^k \ nh^(k-1)`.
pub fn literal_frontiers(rings: &[BTreeSet<ElementId>]) -> Vec<BTreeSet<ElementId>> {
    (0..rings.len())
        .map(|k| {
            if k == 0 {
                rings[0].clone()
            } else {
                rings[k].difference(&rings[k - 1]).copied().collect()
            }
        })
        .collect()
}

/// Random proper rotation (via a random unit quaternion) and translation.
pub fn random_rigid_motion(rng: &mut impl Rng) -> impl Fn([f64; 3]) -> [f64; 3] {
    let q: [f64; 4] = loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            break q.map(|v| v / n);
        }
    };
    let [w, x, y, z] = q;
    let r = [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ];
    let t: [f64; 3] = std::array::from_fn(|_| rng.random_range(-100.0..100.0));
    move |p| std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + t[i])
}
