//! Small geometric primitives shared by the metrics and the generator.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::mesh::{Element, Mesh};

pub type Vec3 = Vector3<f64>;

/// Node positions of one element, in winding order.
#[derive(Clone, Copy, Debug)]
pub struct Polygon {
    pts: [Vec3; 4],
    len: usize,
}

impl Polygon {
    pub fn of(mesh: &Mesh, element: &Element) -> Self {
        Self::from_points(element.nodes.iter().map(|&n| mesh.position(n)))
    }

    pub fn from_points(points: impl IntoIterator<Item = [f64; 3]>) -> Self {
        let mut pts = [Vec3::zeros(); 4];
        let mut len = 0;
        for p in points.into_iter().take(4) {
            pts[len] = Vec3::from(p);
            len += 1;
        }
        Self { pts, len }
    }

    pub fn points(&self) -> &[Vec3] {
        &self.pts[..self.len]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn centroid(&self) -> Vec3 {
        self.points().iter().sum::<Vec3>() / self.len as f64
    }

    pub fn max_edge_length_squared(&self) -> f64 {
        let p = self.points();
        (0..p.len())
            .map(|i| (p[(i + 1) % p.len()] - p[i]).norm_squared())
            .fold(0.0, f64::max)
    }

    /// Sum of edge cross products taken about the centroid (Newell).
    /// Its length is twice the area for planar polygons.
    pub fn newell_vector(&self) -> Vec3 {
        let c = self.centroid();
        let p = self.points();
        (0..p.len())
            .map(|i| (p[i] - c).cross(&(p[(i + 1) % p.len()] - c)))
            .sum()
    }
}

/// Unsigned angle between two vectors in radians, in `[0, π]`.
///
/// Uses `atan2` so that nearly parallel vectors keep full precision.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

pub fn triangle_cross(a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    (b - a).cross(&(c - a))
}

/// Unit normal of the least-squares plane through `points`, or `None` when the
/// plane is not determined.
pub fn least_squares_normal(points: &[Vec3]) -> Option<Vec3> {
    if points.len() < 3 {
        return None;
    }
    let c = points.iter().sum::<Vec3>() / points.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let n = eig.eigenvectors.column(imin).into_owned();
    let norm = n.norm();
    (norm > 0.0).then(|| n / norm)
}

pub type Point2 = [f64; 2];

fn cross2(o: Point2, a: Point2, b: Point2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex hull in counter-clockwise order (Andrew's monotone chain);
/// collinear points are dropped.
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point2> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point2>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross2(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Side lengths `(long, short)` of a minimum-area rectangle enclosing a convex
/// polygon. Candidates are aligned with each hull edge; among candidates whose
/// area is within a relative `1e-9` of the minimum the most elongated wins, so
/// ties resolve the same way under any rigid motion.
pub fn min_area_rectangle(hull: &[Point2]) -> Option<(f64, f64)> {
    if hull.len() < 3 {
        return None;
    }
    let candidates: Vec<(f64, f64, f64)> = (0..hull.len())
        .filter_map(|i| {
            let a = hull[i];
            let b = hull[(i + 1) % hull.len()];
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len = dx.hypot(dy);
            if len == 0.0 {
                return None;
            }
            let (ux, uy) = (dx / len, dy / len);
            let (mut lo_u, mut hi_u, mut lo_v, mut hi_v) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
            for p in hull {
                let (px, py) = (p[0] - a[0], p[1] - a[1]);
                let u = px * ux + py * uy;
                let v = -px * uy + py * ux;
                lo_u = lo_u.min(u);
                hi_u = hi_u.max(u);
                lo_v = lo_v.min(v);
                hi_v = hi_v.max(v);
            }
            let (w, h) = (hi_u - lo_u, hi_v - lo_v);
            Some((w * h, w.max(h), w.min(h)))
        })
        .collect();
    let min_area = candidates.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    candidates
        .into_iter()
        .filter(|c| c.0 <= min_area * (1.0 + 1e-9))
        .max_by(|a, b| (a.1 / a.2).total_cmp(&(b.1 / b.2)))
        .map(|(_, long, short)| (long, short))
}
