//! Per-element quality properties.
//!
//! Seven properties are computed for every element, in this fixed column
//! order: skewness, aspect ratio, warpage, area, curvature, triangle flag and
//! border flag. Angles are reported in degrees and folded so that reversing an
//! element's winding never changes a value. Skewness and warpage are defined
//! for quadrilaterals only; triangles report 0 for both.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{
    angle_between, convex_hull, least_squares_normal, min_area_rectangle, triangle_cross, Point2,
    Polygon, Vec3,
};
use crate::graph::NeighbourhoodGraph;
use crate::mesh::{Element, ElementId, Mesh, NodeId};

/// Relative tolerance on `|normal|` against the squared longest edge.
pub const DEGENERACY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GeometryError {
    #[error("degenerate geometry in element {element}: {what}")]
    Degenerate { element: ElementId, what: &'static str },
}

fn degenerate(element: &Element, what: &'static str) -> GeometryError {
    GeometryError::Degenerate {
        element: element.id,
        what,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Skewness,
    AspectRatio,
    Warpage,
    Area,
    Curvature,
    IsTriangle,
    IsBorder,
}

impl Property {
    pub const ALL: [Property; 7] = [
        Property::Skewness,
        Property::AspectRatio,
        Property::Warpage,
        Property::Area,
        Property::Curvature,
        Property::IsTriangle,
        Property::IsBorder,
    ];

    pub const COUNT: usize = 7;

    pub fn column(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Property::Skewness => "skewness",
            Property::AspectRatio => "aspect_ratio",
            Property::Warpage => "warpage",
            Property::Area => "area",
            Property::Curvature => "curvature",
            Property::IsTriangle => "is_triangle",
            Property::IsBorder => "is_border",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn checked_newell(element: &Element, poly: &Polygon) -> Result<Vec3, GeometryError> {
    let n = poly.newell_vector();
    if n.norm() < DEGENERACY_TOLERANCE * poly.max_edge_length_squared() || n.norm() == 0.0 {
        return Err(degenerate(element, "nodes are collinear"));
    }
    Ok(n)
}

/// Unit normal following the winding (Newell construction for quads).
pub fn element_normal(element: &Element, mesh: &Mesh) -> Result<Vec3, GeometryError> {
    let poly = Polygon::of(mesh, element);
    checked_newell(element, &poly).map(|n| n.normalize())
}

/// Triangle area, or for quads the two triangles split along nodes 1–3.
pub fn element_area(element: &Element, mesh: &Mesh) -> f64 {
    polygon_area(&Polygon::of(mesh, element))
}

fn polygon_area(poly: &Polygon) -> f64 {
    let p = poly.points();
    let mut area = 0.5 * triangle_cross(&p[0], &p[1], &p[2]).norm();
    if p.len() == 4 {
        area += 0.5 * triangle_cross(&p[0], &p[2], &p[3]).norm();
    }
    area
}

/// Long over short side of the minimum-area rectangle enclosing the element,
/// after projection onto its least-squares plane.
pub fn aspect_ratio(element: &Element, mesh: &Mesh) -> Result<f64, GeometryError> {
    polygon_aspect_ratio(element, &Polygon::of(mesh, element))
}

fn polygon_aspect_ratio(element: &Element, poly: &Polygon) -> Result<f64, GeometryError> {
    checked_newell(element, poly)?;
    let pts = poly.points();
    let normal = least_squares_normal(pts).ok_or_else(|| degenerate(element, "no best-fit plane"))?;
    let edge = pts[1] - pts[0];
    let u = (edge - normal * normal.dot(&edge)).normalize();
    let v = normal.cross(&u);
    let projected: Vec<Point2> = pts
        .iter()
        .map(|p| {
            let d = p - pts[0];
            [d.dot(&u), d.dot(&v)]
        })
        .collect();
    let (long, short) = min_area_rectangle(&convex_hull(&projected))
        .ok_or_else(|| degenerate(element, "projection has no area"))?;
    if short <= DEGENERACY_TOLERANCE * long {
        return Err(degenerate(element, "enclosing rectangle has no width"));
    }
    Ok(long / short)
}

/// `|90° − angle between the medians|` of a quad; 0 for triangles.
pub fn skewness(element: &Element, mesh: &Mesh) -> Result<f64, GeometryError> {
    polygon_skewness(element, &Polygon::of(mesh, element))
}

fn polygon_skewness(element: &Element, poly: &Polygon) -> Result<f64, GeometryError> {
    if poly.len() != 4 {
        return Ok(0.0);
    }
    let p = poly.points();
    let mid = |i: usize| (p[i] + p[(i + 1) % 4]) * 0.5;
    let first = mid(1) - mid(3);
    let second = mid(2) - mid(0);
    let floor = DEGENERACY_TOLERANCE * poly.max_edge_length_squared();
    if first.norm_squared() <= floor || second.norm_squared() <= floor {
        return Err(degenerate(element, "zero-length median"));
    }
    Ok((90.0 - angle_between(&first, &second).to_degrees()).abs())
}

/// Largest angle between the triangle normals over both diagonal splits of a
/// quad; 0 for triangles.
pub fn warpage(element: &Element, mesh: &Mesh) -> Result<f64, GeometryError> {
    polygon_warpage(element, &Polygon::of(mesh, element))
}

fn polygon_warpage(element: &Element, poly: &Polygon) -> Result<f64, GeometryError> {
    if poly.len() != 4 {
        return Ok(0.0);
    }
    let p = poly.points();
    let floor = DEGENERACY_TOLERANCE * poly.max_edge_length_squared();
    let mut worst: f64 = 0.0;
    for d in 0..2 {
        let (a, b, c, e) = (p[d], p[d + 1], p[d + 2], p[(d + 3) % 4]);
        let n1 = triangle_cross(&a, &b, &c);
        let n2 = triangle_cross(&a, &c, &e);
        if n1.norm() <= floor || n2.norm() <= floor {
            return Err(degenerate(element, "degenerate diagonal split"));
        }
        worst = worst.max(angle_between(&n1, &n2).to_degrees());
    }
    Ok(worst)
}

/// Angle between two normals regardless of their orientation, in `[0, 90]`.
fn folded_angle_degrees(a: &Vec3, b: &Vec3) -> f64 {
    let theta = angle_between(a, b).to_degrees();
    theta.min(180.0 - theta)
}

/// Largest folded normal angle to any 1-ring neighbour; 0 without neighbours.
pub fn curvature_angle(
    element: &Element,
    mesh: &Mesh,
    graph: &NeighbourhoodGraph,
) -> Result<f64, GeometryError> {
    let own = element_normal(element, mesh)?;
    let index = graph
        .index_of(element.id)
        .expect("graph built from the same mesh");
    let mut worst: f64 = 0.0;
    for &w in graph.neighbour_indices(index) {
        let other = &mesh.elements()[w as usize];
        worst = worst.max(folded_angle_degrees(&own, &element_normal(other, mesh)?));
    }
    Ok(worst)
}

/// Per element (mesh order): does any edge belong to no other element?
pub fn border_flags(mesh: &Mesh) -> Vec<bool> {
    let mut edge_count: HashMap<(NodeId, NodeId), u32> = HashMap::with_capacity(mesh.len() * 2);
    for element in mesh.elements() {
        for edge in element.edges() {
            *edge_count.entry(edge).or_default() += 1;
        }
    }
    mesh.elements()
        .iter()
        .map(|e| e.edges().any(|edge| edge_count[&edge] == 1))
        .collect()
}

/// One row of seven properties per element, sorted by element id.
#[derive(Clone, Debug, PartialEq)]
pub struct PropertyTable {
    ids: Vec<ElementId>,
    rows: Vec<[f64; Property::COUNT]>,
}

impl PropertyTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn ids(&self) -> &[ElementId] {
        &self.ids
    }

    /// Rows in the same dense order as the mesh elements and graph vertices.
    pub fn rows(&self) -> &[[f64; Property::COUNT]] {
        &self.rows
    }

    pub fn row(&self, id: ElementId) -> Option<&[f64; Property::COUNT]> {
        self.ids.binary_search(&id).ok().map(|i| &self.rows[i])
    }

    pub fn value(&self, id: ElementId, property: Property) -> Option<f64> {
        self.row(id).map(|r| r[property.column()])
    }

    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        write!(w, "element_id")?;
        for p in Property::ALL {
            write!(w, ",{p}")?;
        }
        writeln!(w)?;
        for (id, row) in self.ids.iter().zip(&self.rows) {
            write!(w, "{id}")?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Computes all seven properties for every element of `mesh`.
///
/// Elements are evaluated in parallel; the first degenerate element in id
/// order is reported.
pub fn compute_property_table(
    mesh: &Mesh,
    graph: &NeighbourhoodGraph,
) -> Result<PropertyTable, GeometryError> {
    assert_eq!(graph.len(), mesh.len(), "graph built from a different mesh");
    let elements = mesh.elements();
    let borders = border_flags(mesh);

    let normals: Vec<Vec3> = elements
        .par_iter()
        .map(|e| element_normal(e, mesh))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_, _>>()?;

    let rows = elements
        .par_iter()
        .enumerate()
        .map(|(i, element)| {
            let poly = Polygon::of(mesh, element);
            let curvature = graph
                .neighbour_indices(i)
                .iter()
                .map(|&w| folded_angle_degrees(&normals[i], &normals[w as usize]))
                .fold(0.0, f64::max);
            Ok([
                polygon_skewness(element, &poly)?,
                polygon_aspect_ratio(element, &poly)?,
                polygon_warpage(element, &poly)?,
                polygon_area(&poly),
                curvature,
                if element.is_triangle() { 1.0 } else { 0.0 },
                if borders[i] { 1.0 } else { 0.0 },
            ])
        })
        .collect::<Vec<Result<_, GeometryError>>>()
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    Ok(PropertyTable {
        ids: elements.iter().map(|e| e.id).collect(),
        rows,
    })
}
