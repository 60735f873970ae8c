use crate::mesh::{Element, Mesh, Node};

/// `rows × cols` unit quads in the xy-plane; element id `r * cols + c + 1`,
/// node id `r * (cols + 1) + c + 1`.
pub fn quad_grid(rows: u64, cols: u64) -> Mesh {
    let mut nodes = Vec::new();
    for r in 0..=rows {
        for c in 0..=cols {
            nodes.push(Node::new(r * (cols + 1) + c + 1, [c as f64, r as f64, 0.0]));
        }
    }
    let mut elements = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let n0 = r * (cols + 1) + c + 1;
            let n3 = n0 + cols + 1;
            elements.push(Element::new(r * cols + c + 1, &[n0, n0 + 1, n3 + 1, n3]));
        }
    }
    Mesh::new(nodes, elements).unwrap()
}

pub fn single(points: &[[f64; 3]]) -> Mesh {
    let nodes = points
        .iter()
        .enumerate()
        .map(|(i, p)| Node::new(i as u64 + 1, *p))
        .collect();
    let ids: Vec<u64> = (1..=points.len() as u64).collect();
    Mesh::new(nodes, vec![Element::new(1, &ids)]).unwrap()
}
