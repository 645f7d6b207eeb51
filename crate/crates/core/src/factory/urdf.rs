//! URDF writing for the robot family and a small reader for the subset we emit.

use std::fmt::Write as _;

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3};

use super::{FactoryError, RobotGeometry};
use crate::codec::{ConfigSpace, FullConfigCode, Icosahedron};

/// Mesh file the body collision shape refers to, unit circumradius.
pub const BODY_MESH: &str = "icosahedron.obj";
/// Name of the root link.
pub const BASE_LINK: &str = "body";

/// Reflection across the sagittal plane.
fn mirror_matrix() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0))
}

/// Attachment frame of a right-side face: z along the outward normal, x along
/// the downhill direction of the face.
fn face_frame(ico: &Icosahedron, face: u8) -> Rotation3<f64> {
    let n = ico.face(face).normal;
    let down = -Vector3::z();
    let x = (down - n * down.dot(&n)).normalize();
    let y = n.cross(&x);
    Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, n]))
}

/// Mounting origin of the first joint of each leg, relative to the body.
pub fn leg_mount(
    ico: &Icosahedron,
    space: &ConfigSpace,
    code: &FullConfigCode,
    leg: usize,
    radius: f64,
) -> (Vector3<f64>, Rotation3<f64>) {
    let face = code.faces[leg];
    if leg < 2 {
        (ico.face(face).centroid * radius, face_frame(ico, face))
    } else {
        let m = mirror_matrix();
        let source = space.mirror().face(face);
        let r = face_frame(ico, source);
        let mirrored = Rotation3::from_matrix_unchecked(m * r.matrix() * m);
        (ico.face(face).centroid * radius, mirrored)
    }
}

fn bracket(step: f64, index: u8, bend: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), step * index as f64)
        * Rotation3::from_axis_angle(&Vector3::x_axis(), bend)
}

fn fmt_f(v: f64) -> String {
    // fixed precision keeps output byte-stable; -0 is normalised
    let s = format!("{v:.9}");
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        "0.000000000".to_string()
    } else {
        s
    }
}

fn fmt_v(v: &Vector3<f64>) -> String {
    format!("{} {} {}", fmt_f(v.x), fmt_f(v.y), fmt_f(v.z))
}

fn rpy(r: &Rotation3<f64>) -> Vector3<f64> {
    let (roll, pitch, yaw) = r.euler_angles();
    Vector3::new(roll, pitch, yaw)
}

pub fn joint_name(leg: usize, i: usize) -> String {
    format!("leg{leg}_joint{i}")
}

pub fn link_name(leg: usize, i: usize) -> String {
    format!("leg{leg}_link{i}")
}

/// Solid icosahedron inertia about its centre: m·a²·φ²/10.
fn icosahedron_inertia(mass: f64, edge: f64) -> f64 {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    mass * edge * edge * phi * phi / 10.0
}

/// URDF document for a full code. Byte-identical for identical inputs.
pub fn build_urdf(
    code: &FullConfigCode,
    geometry: &RobotGeometry,
    space: &ConfigSpace,
) -> Result<String, FactoryError> {
    geometry.validate()?;
    space.contract_half(code)?;
    let ico = Icosahedron::canonical();
    let radius = geometry.body_circumradius();
    let half = space.contract_half(code)?;
    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0"?>"#);
    let _ = writeln!(out, r#"<robot name="icosa_{}">"#, half.file_stem());

    let ib = icosahedron_inertia(geometry.body_mass, geometry.body_edge_length);
    let _ = writeln!(out, r#"  <link name="{BASE_LINK}">"#);
    let _ = writeln!(
        out,
        r#"    <inertial><origin xyz="0 0 0" rpy="0 0 0"/><mass value="{}"/><inertia ixx="{ib:.9}" ixy="0" ixz="0" iyy="{ib:.9}" iyz="0" izz="{ib:.9}"/></inertial>"#,
        fmt_f(geometry.body_mass)
    );
    let _ = writeln!(
        out,
        r#"    <collision><origin xyz="0 0 0" rpy="0 0 0"/><geometry><mesh filename="{BODY_MESH}" scale="{r} {r} {r}"/></geometry></collision>"#,
        r = fmt_f(radius)
    );
    let _ = writeln!(out, "  </link>");

    let w = geometry.link_width;
    for leg in 0..4 {
        for i in 0..3 {
            let len = geometry.link_lengths[i];
            let m = geometry.link_masses[i];
            let ixx = m * (w * w + len * len) / 12.0;
            let izz = m * (2.0 * w * w) / 12.0;
            let _ = writeln!(out, r#"  <link name="{}">"#, link_name(leg, i));
            let _ = writeln!(
                out,
                r#"    <inertial><origin xyz="0 0 {}" rpy="0 0 0"/><mass value="{}"/><inertia ixx="{ixx:.9}" ixy="0" ixz="0" iyy="{ixx:.9}" iyz="0" izz="{izz:.9}"/></inertial>"#,
                fmt_f(len / 2.0),
                fmt_f(m)
            );
            let _ = writeln!(
                out,
                r#"    <collision><origin xyz="0 0 {}" rpy="0 0 0"/><geometry><box size="{} {} {}"/></geometry></collision>"#,
                fmt_f(len / 2.0),
                fmt_f(w),
                fmt_f(w),
                fmt_f(len)
            );
            let _ = writeln!(out, "  </link>");
        }
    }

    let step = geometry.attachment_rotation_step;
    let lim = geometry.joint_limit;
    for leg in 0..4 {
        for i in 0..3 {
            let index = code.joints[leg * 3 + i];
            let (parent, xyz, rot) = if i == 0 {
                let (p, frame) = leg_mount(&ico, space, code, leg, radius);
                (BASE_LINK.to_string(), p, frame * bracket(step, index, geometry.link_bends[0]))
            } else {
                (
                    link_name(leg, i - 1),
                    Vector3::new(0.0, 0.0, geometry.link_lengths[i - 1]),
                    bracket(step, index, geometry.link_bends[i]),
                )
            };
            let _ = writeln!(out, r#"  <joint name="{}" type="revolute">"#, joint_name(leg, i));
            let _ = writeln!(out, r#"    <parent link="{parent}"/>"#);
            let _ = writeln!(out, r#"    <child link="{}"/>"#, link_name(leg, i));
            let _ = writeln!(
                out,
                r#"    <origin xyz="{}" rpy="{}"/>"#,
                fmt_v(&xyz),
                fmt_v(&rpy(&rot))
            );
            let _ = writeln!(out, r#"    <axis xyz="1 0 0"/>"#);
            let _ = writeln!(
                out,
                r#"    <limit lower="{}" upper="{}" effort="1.5" velocity="6.0"/>"#,
                fmt_f(-lim),
                fmt_f(lim)
            );
            let _ = writeln!(out, "  </joint>");
        }
    }
    let _ = writeln!(out, "</robot>");
    Ok(out)
}

/// Collision primitive.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Box { size: Vector3<f64> },
    Sphere { radius: f64 },
    Mesh { filename: String, scale: Vector3<f64> },
}

#[derive(Debug, Clone)]
pub struct Collision {
    pub origin: Isometry3<f64>,
    pub shape: Shape,
}

#[derive(Debug, Clone)]
pub struct UrdfLink {
    pub name: String,
    pub mass: f64,
    /// Centre of mass in the link frame.
    pub com: Vector3<f64>,
    /// Inertia about the centre of mass, link axes.
    pub inertia: Matrix3<f64>,
    pub collision: Vec<Collision>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    Revolute,
    Fixed,
}

#[derive(Debug, Clone)]
pub struct UrdfJoint {
    pub name: String,
    pub kind: JointKind,
    pub parent: String,
    pub child: String,
    pub origin: Isometry3<f64>,
    pub axis: Vector3<f64>,
    pub lower: f64,
    pub upper: f64,
}

/// Parsed robot description.
#[derive(Debug, Clone)]
pub struct UrdfModel {
    pub name: String,
    pub links: Vec<UrdfLink>,
    pub joints: Vec<UrdfJoint>,
}

impl UrdfModel {
    pub fn revolute_count(&self) -> usize {
        self.joints.iter().filter(|j| j.kind == JointKind::Revolute).count()
    }

    pub fn joint(&self, name: &str) -> Option<&UrdfJoint> {
        self.joints.iter().find(|j| j.name == name)
    }
}

fn load_err(msg: impl Into<String>) -> FactoryError {
    FactoryError::Urdf(msg.into())
}

fn parse_floats<const N: usize>(s: Option<&str>, default: [f64; N]) -> Result<[f64; N], FactoryError> {
    let Some(s) = s else { return Ok(default) };
    let vals: Vec<f64> = s
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| load_err(format!("bad number {t:?}"))))
        .collect::<Result<_, _>>()?;
    vals.try_into()
        .map_err(|v: Vec<f64>| load_err(format!("expected {N} numbers, got {}", v.len())))
}

fn parse_origin(node: Option<roxmltree::Node>) -> Result<Isometry3<f64>, FactoryError> {
    let Some(node) = node else { return Ok(Isometry3::identity()) };
    let [x, y, z] = parse_floats(node.attribute("xyz"), [0.0; 3])?;
    let [r, p, yaw] = parse_floats(node.attribute("rpy"), [0.0; 3])?;
    Ok(Isometry3::from_parts(
        Translation3::new(x, y, z),
        UnitQuaternion::from_euler_angles(r, p, yaw),
    ))
}

fn child<'a>(node: roxmltree::Node<'a, 'a>, tag: &str) -> Option<roxmltree::Node<'a, 'a>> {
    node.children().find(|c| c.has_tag_name(tag))
}

fn attr_f64(node: roxmltree::Node, name: &str, default: f64) -> Result<f64, FactoryError> {
    match node.attribute(name) {
        Some(v) => v.parse().map_err(|_| load_err(format!("bad {name} {v:?}"))),
        None => Ok(default),
    }
}

/// Reads the URDF subset this crate emits: links with inertials and
/// box/sphere/mesh collisions, revolute and fixed joints.
pub fn parse_urdf(text: &str) -> Result<UrdfModel, FactoryError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| load_err(e.to_string()))?;
    let robot = doc.root_element();
    if !robot.has_tag_name("robot") {
        return Err(load_err("root element is not <robot>"));
    }
    let mut links = Vec::new();
    let mut joints = Vec::new();
    for node in robot.children().filter(|n| n.is_element()) {
        match node.tag_name().name() {
            "link" => {
                let name = node.attribute("name").ok_or_else(|| load_err("link without name"))?;
                let (mut mass, mut com, mut inertia) = (0.0, Vector3::zeros(), Matrix3::zeros());
                if let Some(inertial) = child(node, "inertial") {
                    let origin = parse_origin(child(inertial, "origin"))?;
                    com = origin.translation.vector;
                    if let Some(m) = child(inertial, "mass") {
                        mass = attr_f64(m, "value", 0.0)?;
                    }
                    if let Some(i) = child(inertial, "inertia") {
                        let g = |n| attr_f64(i, n, 0.0);
                        let (xx, xy, xz, yy, yz, zz) =
                            (g("ixx")?, g("ixy")?, g("ixz")?, g("iyy")?, g("iyz")?, g("izz")?);
                        let local = Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz);
                        let r = origin.rotation.to_rotation_matrix();
                        inertia = r.matrix() * local * r.matrix().transpose();
                    }
                }
                let mut collision = Vec::new();
                for c in node.children().filter(|c| c.has_tag_name("collision")) {
                    let origin = parse_origin(child(c, "origin"))?;
                    let geom = child(c, "geometry").ok_or_else(|| load_err("collision without geometry"))?;
                    let shape_node = geom
                        .children()
                        .find(|n| n.is_element())
                        .ok_or_else(|| load_err("empty geometry"))?;
                    let shape = match shape_node.tag_name().name() {
                        "box" => {
                            let [x, y, z] = parse_floats(shape_node.attribute("size"), [0.0; 3])?;
                            Shape::Box { size: Vector3::new(x, y, z) }
                        }
                        "sphere" => Shape::Sphere { radius: attr_f64(shape_node, "radius", 0.0)? },
                        "mesh" => {
                            let [x, y, z] = parse_floats(shape_node.attribute("scale"), [1.0; 3])?;
                            Shape::Mesh {
                                filename: shape_node.attribute("filename").unwrap_or_default().to_string(),
                                scale: Vector3::new(x, y, z),
                            }
                        }
                        other => return Err(load_err(format!("unsupported geometry <{other}>"))),
                    };
                    collision.push(Collision { origin, shape });
                }
                links.push(UrdfLink { name: name.to_string(), mass, com, inertia, collision });
            }
            "joint" => {
                let name = node.attribute("name").ok_or_else(|| load_err("joint without name"))?;
                let kind = match node.attribute("type") {
                    Some("revolute") | Some("continuous") => JointKind::Revolute,
                    Some("fixed") => JointKind::Fixed,
                    other => return Err(load_err(format!("unsupported joint type {other:?}"))),
                };
                let link_attr = |tag: &str| {
                    child(node, tag)
                        .and_then(|n| n.attribute("link"))
                        .map(str::to_string)
                        .ok_or_else(|| load_err(format!("joint {name} lacks <{tag}>")))
                };
                let [ax, ay, az] = parse_floats(child(node, "axis").and_then(|n| n.attribute("xyz")), [1.0, 0.0, 0.0])?;
                let (lower, upper) = match child(node, "limit") {
                    Some(l) => (attr_f64(l, "lower", 0.0)?, attr_f64(l, "upper", 0.0)?),
                    None => (f64::NEG_INFINITY, f64::INFINITY),
                };
                let axis = Vector3::new(ax, ay, az);
                if axis.norm() < 1e-12 {
                    return Err(load_err(format!("joint {name} has a zero axis")));
                }
                joints.push(UrdfJoint {
                    name: name.to_string(),
                    kind,
                    parent: link_attr("parent")?,
                    child: link_attr("child")?,
                    origin: parse_origin(child(node, "origin"))?,
                    axis: axis.normalize(),
                    lower,
                    upper,
                });
            }
            _ => {}
        }
    }
    for j in &joints {
        for l in [&j.parent, &j.child] {
            if !links.iter().any(|k| &k.name == l) {
                return Err(load_err(format!("joint {} references unknown link {l}", j.name)));
            }
        }
    }
    Ok(UrdfModel {
        name: robot.attribute("name").unwrap_or_default().to_string(),
        links,
        joints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::HalfConfigCode;

    fn code(space: &ConfigSpace, faces: [u8; 2], joints: [u8; 6]) -> FullConfigCode {
        space.expand_full(&HalfConfigCode { faces, joints }).unwrap()
    }

    #[test]
    fn deterministic_output() {
        let space = ConfigSpace::default();
        let g = RobotGeometry::default();
        let c = code(&space, [13, 5], [3, 7, 11, 0, 4, 9]);
        assert_eq!(build_urdf(&c, &g, &space).unwrap(), build_urdf(&c, &g, &space).unwrap());
    }

    #[test]
    fn structure_counts() {
        let space = ConfigSpace::default();
        let text = build_urdf(&code(&space, [5, 6], [0; 6]), &RobotGeometry::default(), &space).unwrap();
        let model = parse_urdf(&text).unwrap();
        assert_eq!(model.links.len(), 13);
        assert_eq!(model.revolute_count(), 12);
        assert!(model.joints.iter().all(|j| (j.lower + std::f64::consts::FRAC_PI_2).abs() < 1e-8));
    }

    #[test]
    fn index_six_rotates_brackets_by_half_turn() {
        let space = ConfigSpace::default();
        let g = RobotGeometry::default();
        let a = parse_urdf(&build_urdf(&code(&space, [5, 6], [0; 6]), &g, &space).unwrap()).unwrap();
        let b = parse_urdf(&build_urdf(&code(&space, [5, 6], [6; 6]), &g, &space).unwrap()).unwrap();
        for (ja, jb) in a.joints.iter().zip(&b.joints) {
            let rel = ja.origin.rotation.inverse() * jb.origin.rotation;
            assert!((rel.angle() - std::f64::consts::PI).abs() < 1e-6, "{} {}", ja.name, rel.angle());
            assert!((ja.origin.translation.vector - jb.origin.translation.vector).norm() < 1e-9);
        }
    }

    #[test]
    fn mirrored_legs_have_reflected_frames() {
        let space = ConfigSpace::default();
        let g = RobotGeometry::default();
        let c = code(&space, [14, 19], [1, 5, 10, 2, 7, 4]);
        let model = parse_urdf(&build_urdf(&c, &g, &space).unwrap()).unwrap();
        let m = mirror_matrix();
        // right leg r pairs with left leg r + 2
        for leg in 0..2 {
            let mut wr = Isometry3::identity();
            let mut wl = Isometry3::identity();
            for i in 0..3 {
                let jr = model.joint(&joint_name(leg, i)).unwrap();
                let jl = model.joint(&joint_name(leg + 2, i)).unwrap();
                // same joint angle on both sides must give mirror-image poses
                let q = 0.3 * (i as f64 + 1.0);
                wr = wr * jr.origin * UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(jr.axis), q);
                wl = wl * jl.origin * UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(jl.axis), q);
                let pr = wr.translation.vector;
                let pl = wl.translation.vector;
                assert!((m * pr - pl).norm() < 1e-7, "leg {leg} joint {i}");
                let rr = wr.rotation.to_rotation_matrix();
                let rl = wl.rotation.to_rotation_matrix();
                assert!((m * rr.matrix() * m - rl.matrix()).norm() < 1e-7);
                let tip_r = wr * nalgebra::Point3::new(0.0, 0.0, g.link_lengths[i]);
                let tip_l = wl * nalgebra::Point3::new(0.0, 0.0, g.link_lengths[i]);
                assert!((m * tip_r.coords - tip_l.coords).norm() < 1e-7);
            }
        }
    }

    #[test]
    fn invalid_code_rejected() {
        let space = ConfigSpace::default();
        let mut c = code(&space, [5, 6], [0; 6]);
        c.joints[8] = 1;
        assert!(build_urdf(&c, &RobotGeometry::default(), &space).is_err());
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(parse_urdf("<robot><joint name='j' type='prismatic'/></robot>").is_err());
        assert!(parse_urdf("not xml").is_err());
        assert!(parse_urdf("<other/>").is_err());
    }
}
