//! Wavefront OBJ import.
//!
//! Only `v` and `f` records are read; every other record is ignored. Node ids
//! are the 1-based vertex indices and element ids the 1-based face indices.
//! Faces with more than four vertices are rejected rather than triangulated,
//! since a fan split would change both the metrics and any labels.

use crate::mesh::{Element, ElementId, Mesh, MeshError, Node, NodeId};

pub fn import_obj(text: &str) -> Result<Mesh, MeshError> {
    let mut nodes = Vec::new();
    let mut elements = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let err = |message: String| MeshError::Obj { line, message };
        let content = raw.split('#').next().unwrap_or("");
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut xyz = [0.0; 3];
                for c in &mut xyz {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| err("vertex needs three coordinates".into()))?;
                    *c = tok
                        .parse()
                        .map_err(|_| err(format!("bad coordinate {tok:?}")))?;
                }
                nodes.push(Node::new(nodes.len() as u64 + 1, xyz));
            }
            Some("f") => {
                let mut ids = Vec::with_capacity(4);
                for tok in tokens {
                    let index = tok.split('/').next().unwrap_or("");
                    let index: i64 = index
                        .parse()
                        .map_err(|_| err(format!("bad vertex index {tok:?}")))?;
                    if index <= 0 {
                        return Err(err(format!(
                            "vertex index {index} not supported (indices are 1-based and positive)"
                        )));
                    }
                    ids.push(NodeId(index as u64));
                }
                if !(3..=4).contains(&ids.len()) {
                    return Err(err(format!(
                        "face arity {} not supported (only triangles and quadrilaterals)",
                        ids.len()
                    )));
                }
                elements.push((line, ids));
            }
            _ => {}
        }
    }

    let vertex_count = nodes.len() as u64;
    let elements = elements
        .into_iter()
        .enumerate()
        .map(|(i, (line, ids))| {
            if let Some(bad) = ids.iter().find(|n| n.0 > vertex_count) {
                return Err(MeshError::Obj {
                    line,
                    message: format!("vertex index {bad} out of range (have {vertex_count})"),
                });
            }
            Ok(Element {
                id: ElementId(i as u64 + 1),
                nodes: ids,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    Mesh::new(nodes, elements)
}
