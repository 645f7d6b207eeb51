//! Canonical icosahedron body used for face numbering and leg attachment.
//!
//! The solid has one vertex on the +z axis, an upper vertex ring at azimuths
//! 90° + 72°k and a lower ring at 126° + 72°k. With that orientation the
//! plane x = 0 is a mirror plane, and +y points forward. Faces are numbered
//! counterclockwise (seen from above, starting at azimuth 0°) within each of
//! the three bands: top cap 0–4, middle band 5–14, bottom cap 15–19.

use nalgebra::Vector3;

/// Number of faces on the body.
pub const FACE_COUNT: usize = 20;
/// Number of vertices on the body.
pub const VERTEX_COUNT: usize = 12;

/// Band a face belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    Top,
    Middle,
    Bottom,
}

/// One numbered face.
#[derive(Debug, Clone)]
pub struct Face {
    pub id: u8,
    pub band: Band,
    /// Vertex indices, counterclockwise seen from outside.
    pub vertices: [usize; 3],
    /// Centroid for the unit-circumradius solid.
    pub centroid: Vector3<f64>,
    /// Outward unit normal.
    pub normal: Vector3<f64>,
}

/// Vertex and face table of the unit-circumradius icosahedron.
#[derive(Debug, Clone)]
pub struct Icosahedron {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<Face>,
}

/// Ratio of circumradius to edge length, sin(2π/5).
pub fn circumradius_per_edge() -> f64 {
    (2.0 * std::f64::consts::PI / 5.0).sin()
}

fn azimuth_deg(p: &Vector3<f64>) -> f64 {
    let a = p.y.atan2(p.x).to_degrees();
    let a = if a < 0.0 { a + 360.0 } else { a };
    // centroids on a band sit at multiples of 18°; snap float noise around 360
    if a > 359.999_999 {
        0.0
    } else {
        a
    }
}

impl Icosahedron {
    /// Builds the canonical table. Deterministic.
    pub fn canonical() -> Self {
        let h = 1.0 / 5f64.sqrt();
        let rho = 2.0 / 5f64.sqrt();
        let mut vertices = Vec::with_capacity(VERTEX_COUNT);
        vertices.push(Vector3::new(0.0, 0.0, 1.0));
        let ring = |offset: f64, z: f64| {
            (0..5).map(move |k| {
                let a = (offset + 72.0 * k as f64).to_radians();
                Vector3::new(rho * a.cos(), rho * a.sin(), z)
            })
        };
        vertices.extend(ring(90.0, h));
        vertices.extend(ring(126.0, -h));
        vertices.push(Vector3::new(0.0, 0.0, -1.0));
        let top = 0;
        let up = |k: usize| 1 + k % 5;
        let low = |k: usize| 6 + k % 5;
        let bottom = 11;

        let mut raw: Vec<(Band, [usize; 3])> = Vec::with_capacity(FACE_COUNT);
        for k in 0..5 {
            raw.push((Band::Top, [top, up(k), up(k + 1)]));
            raw.push((Band::Middle, [up(k), low(k), up(k + 1)]));
            raw.push((Band::Middle, [low(k), low(k + 1), up(k + 1)]));
            raw.push((Band::Bottom, [bottom, low(k + 1), low(k)]));
        }

        let mut faces: Vec<Face> = raw
            .into_iter()
            .map(|(band, mut vs)| {
                let c = (vertices[vs[0]] + vertices[vs[1]] + vertices[vs[2]]) / 3.0;
                let n = (vertices[vs[1]] - vertices[vs[0]])
                    .cross(&(vertices[vs[2]] - vertices[vs[0]]))
                    .normalize();
                if n.dot(&c) < 0.0 {
                    vs.swap(1, 2);
                }
                let normal = c.normalize();
                Face {
                    id: 0,
                    band,
                    vertices: vs,
                    centroid: c,
                    normal,
                }
            })
            .collect();

        let band_rank = |b: Band| match b {
            Band::Top => 0,
            Band::Middle => 1,
            Band::Bottom => 2,
        };
        faces.sort_by(|a, b| {
            band_rank(a.band)
                .cmp(&band_rank(b.band))
                .then(azimuth_deg(&a.centroid).total_cmp(&azimuth_deg(&b.centroid)))
        });
        for (i, f) in faces.iter_mut().enumerate() {
            f.id = i as u8;
        }
        Icosahedron { vertices, faces }
    }

    pub fn face(&self, id: u8) -> &Face {
        &self.faces[id as usize]
    }

    /// Maps each face to the face whose centroid is nearest to its reflection
    /// across the plane x = 0.
    pub fn reflected_face_map(&self) -> [u8; FACE_COUNT] {
        let mut map = [0u8; FACE_COUNT];
        for f in &self.faces {
            let r = Vector3::new(-f.centroid.x, f.centroid.y, f.centroid.z);
            let nearest = self
                .faces
                .iter()
                .min_by(|a, b| (a.centroid - r).norm().total_cmp(&(b.centroid - r).norm()))
                .expect("non-empty face table");
            map[f.id as usize] = nearest.id;
        }
        map
    }

    /// Faces in the middle and bottom bands whose centroid lies on the +x side.
    pub fn right_side_attachable(&self) -> Vec<u8> {
        self.faces
            .iter()
            .filter(|f| f.band != Band::Top && f.centroid.x > 1e-9)
            .map(|f| f.id)
            .collect()
    }

    /// Plain-text vertex/face table, the format shipped in `data/`.
    pub fn to_table_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# icosahedron face table v1\n");
        out.push_str("# unit circumradius; +z up, +y forward, mirror plane x = 0\n");
        for (i, v) in self.vertices.iter().enumerate() {
            out.push_str(&format!("v {i} {:.9} {:.9} {:.9}\n", v.x, v.y, v.z));
        }
        for f in &self.faces {
            let band = match f.band {
                Band::Top => "top",
                Band::Middle => "middle",
                Band::Bottom => "bottom",
            };
            out.push_str(&format!(
                "f {} {} {} {} {} {:.9} {:.9} {:.9}\n",
                f.id,
                band,
                f.vertices[0],
                f.vertices[1],
                f.vertices[2],
                f.centroid.x,
                f.centroid.y,
                f.centroid.z
            ));
        }
        out
    }

    /// Wavefront OBJ of the solid scaled to the given edge length.
    pub fn to_obj(&self, edge_length: f64) -> String {
        let s = edge_length * circumradius_per_edge();
        let mut out = String::from("# icosahedron body\n");
        for v in &self.vertices {
            out.push_str(&format!("v {:.9} {:.9} {:.9}\n", v.x * s, v.y * s, v.z * s));
        }
        for f in &self.faces {
            out.push_str(&format!(
                "f {} {} {}\n",
                f.vertices[0] + 1,
                f.vertices[1] + 1,
                f.vertices[2] + 1
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_is_regular() {
        let ico = Icosahedron::canonical();
        assert_eq!(ico.faces.len(), FACE_COUNT);
        for f in &ico.faces {
            let [a, b, c] = f.vertices;
            let e1 = (ico.vertices[a] - ico.vertices[b]).norm();
            let e2 = (ico.vertices[b] - ico.vertices[c]).norm();
            let e3 = (ico.vertices[c] - ico.vertices[a]).norm();
            let edge = 1.0 / circumradius_per_edge();
            for e in [e1, e2, e3] {
                assert!((e - edge).abs() < 1e-9, "edge {e} vs {edge}");
            }
            let n = (ico.vertices[b] - ico.vertices[a]).cross(&(ico.vertices[c] - ico.vertices[a]));
            assert!(n.dot(&f.centroid) > 0.0, "face {} not outward ccw", f.id);
        }
    }

    #[test]
    fn bands_hold_five_ten_five() {
        let ico = Icosahedron::canonical();
        let count = |b| ico.faces.iter().filter(|f| f.band == b).count();
        assert_eq!(count(Band::Top), 5);
        assert_eq!(count(Band::Middle), 10);
        assert_eq!(count(Band::Bottom), 5);
        assert!(ico.faces[..5].iter().all(|f| f.band == Band::Top));
        assert!(ico.faces[15..].iter().all(|f| f.band == Band::Bottom));
    }

    #[test]
    fn reflection_map_is_an_involution_on_geometry() {
        let ico = Icosahedron::canonical();
        let map = ico.reflected_face_map();
        for f in &ico.faces {
            let m = ico.face(map[f.id as usize]);
            assert!((m.centroid.x + f.centroid.x).abs() < 1e-9);
            assert!((m.centroid.y - f.centroid.y).abs() < 1e-9);
            assert!((m.centroid.z - f.centroid.z).abs() < 1e-9);
            assert_eq!(map[m.id as usize], f.id);
        }
    }

    #[test]
    fn attachable_right_side_faces() {
        let ico = Icosahedron::canonical();
        assert_eq!(ico.right_side_attachable(), vec![5, 6, 13, 14, 15, 19]);
    }

    #[test]
    fn shipped_table_matches_generated() {
        let shipped = include_str!("../../data/icosahedron_faces_v1.txt");
        assert_eq!(shipped, Icosahedron::canonical().to_table_text());
    }
}
