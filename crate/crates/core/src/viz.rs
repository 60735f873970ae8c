//! Legacy ASCII VTK export of a mesh with per-element prediction fields.
//!
//! Cell scalars:
//!
//! | field          | values                                   |
//! |----------------|------------------------------------------|
//! | `probability`  | predicted rework probability             |
//! | `predicted`    | 1 rework, 0 passed                       |
//! | `ground_truth` | 1 rework, 0 passed, -1 unlabelled        |
//! | `agreement`    | 0 TN, 1 TP, 2 FP, 3 FN, -1 unlabelled    |

use std::collections::HashMap;
use std::io::{self, Write};

use crate::mesh::{ElementId, LabelSet, Mesh, NodeId};
use crate::models::apply_threshold;

pub const VTK_TRIANGLE: u8 = 5;
pub const VTK_QUAD: u8 = 9;

/// Agreement code of a prediction against its ground truth.
pub fn agreement(predicted_rework: bool, truth_rework: bool) -> i32 {
    match (predicted_rework, truth_rework) {
        (false, false) => 0,
        (true, true) => 1,
        (true, false) => 2,
        (false, true) => 3,
    }
}

/// `probabilities` is indexed like `mesh.elements()`.
pub fn write_vtk(
    mesh: &Mesh,
    probabilities: &[f64],
    threshold: f64,
    labels: Option<&LabelSet>,
    mut w: impl Write,
) -> io::Result<()> {
    assert_eq!(probabilities.len(), mesh.len(), "one probability per element");
    let index: HashMap<NodeId, usize> = mesh.nodes().iter().enumerate().map(|(i, n)| (n.id, i)).collect();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "meshgrade predictions")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.nodes().len())?;
    for n in mesh.nodes() {
        let [x, y, z] = n.position;
        writeln!(w, "{x} {y} {z}")?;
    }
    let size: usize = mesh.elements().iter().map(|e| e.nodes.len() + 1).sum();
    writeln!(w, "CELLS {} {}", mesh.len(), size)?;
    for e in mesh.elements() {
        write!(w, "{}", e.nodes.len())?;
        for n in &e.nodes {
            write!(w, " {}", index[n])?;
        }
        writeln!(w)?;
    }
    writeln!(w, "CELL_TYPES {}", mesh.len())?;
    for e in mesh.elements() {
        writeln!(w, "{}", if e.is_triangle() { VTK_TRIANGLE } else { VTK_QUAD })?;
    }

    let truth = |id: ElementId| labels.and_then(|l| l.get(id)).map(|l| l.is_rework());
    writeln!(w, "CELL_DATA {}", mesh.len())?;
    writeln!(w, "SCALARS probability double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for p in probabilities {
        writeln!(w, "{p}")?;
    }
    let predicted: Vec<bool> = probabilities
        .iter()
        .map(|&p| apply_threshold(p, threshold).is_rework())
        .collect();
    writeln!(w, "SCALARS predicted int 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for &p in &predicted {
        writeln!(w, "{}", i32::from(p))?;
    }
    writeln!(w, "SCALARS ground_truth int 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for e in mesh.elements() {
        writeln!(w, "{}", truth(e.id).map_or(-1, i32::from))?;
    }
    writeln!(w, "SCALARS agreement int 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for (e, &p) in mesh.elements().iter().zip(&predicted) {
        writeln!(w, "{}", truth(e.id).map_or(-1, |t| agreement(p, t)))?;
    }
    Ok(())
}
