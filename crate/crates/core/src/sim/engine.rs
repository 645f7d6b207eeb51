//! Bundled rigid-body backend.
//!
//! The whole robot is integrated as one composite rigid body whose shape is
//! driven by position-controlled joints. Joints follow their targets through
//! a rate-limited servo with a series-elastic deflection under load, and the
//! ground is a penalty contact plane with stick-slip Coulomb friction acting
//! on every collision-box corner and body vertex.

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::adapter::{BasePose, PhysicsAdapter, SimError, StateFrame, JOINT_COUNT};
use crate::codec::Icosahedron;
use crate::factory::urdf::{parse_urdf, JointKind, Shape, UrdfModel, BODY_MESH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub gravity: f64,
    /// Length of one `step()`, seconds.
    pub control_dt: f64,
    /// Integrator substeps per `step()`.
    pub substeps: usize,
    /// Ground normal stiffness per contact point, N/m.
    pub contact_stiffness: f64,
    /// Ground normal damping per contact point, N·s/m.
    pub contact_damping: f64,
    pub friction: f64,
    /// Stiffness of the stick spring anchoring a contact point, N/m.
    pub tangential_stiffness: f64,
    /// Damping of the stick spring, N·s/m.
    pub tangential_damping: f64,
    /// Servo proportional gain, 1/s.
    pub servo_gain: f64,
    /// Servo speed limit, rad/s.
    pub servo_max_velocity: f64,
    /// Series-elastic joint stiffness, N·m/rad.
    pub joint_stiffness: f64,
    /// Time constant of the elastic deflection, seconds.
    pub compliance_time_constant: f64,
    /// Gap between the ground and the lowest point when spawning, meters.
    pub spawn_clearance: f64,
    /// Penetration below which touching links do not count as colliding, meters.
    pub self_collision_margin: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            gravity: 9.81,
            control_dt: 1.0 / 240.0,
            substeps: 8,
            contact_stiffness: 2500.0,
            contact_damping: 15.0,
            friction: 0.8,
            tangential_stiffness: 2000.0,
            tangential_damping: 10.0,
            servo_gain: 30.0,
            servo_max_velocity: 6.0,
            joint_stiffness: 20.0,
            compliance_time_constant: 0.05,
            spawn_clearance: 0.002,
            self_collision_margin: 1e-4,
        }
    }
}

/// Convex collision shape in its link frame.
#[derive(Debug, Clone)]
struct Convex {
    vertices: Vec<Vector3<f64>>,
    normals: Vec<Vector3<f64>>,
    edges: Vec<Vector3<f64>>,
}

impl Convex {
    fn cuboid(center_rot: &Rotation3<f64>, center: &Vector3<f64>, size: &Vector3<f64>) -> Self {
        let h = size / 2.0;
        let mut vertices = Vec::with_capacity(8);
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    vertices.push(center + center_rot * Vector3::new(sx * h.x, sy * h.y, sz * h.z));
                }
            }
        }
        let axes: Vec<Vector3<f64>> = (0..3).map(|i| center_rot * Vector3::ith(i, 1.0)).collect();
        Convex { vertices, normals: axes.clone(), edges: axes }
    }

    fn icosahedron(center_rot: &Rotation3<f64>, center: &Vector3<f64>, scale: &Vector3<f64>) -> Self {
        let ico = Icosahedron::canonical();
        let vertices = ico
            .vertices
            .iter()
            .map(|v| center + center_rot * v.component_mul(scale))
            .collect::<Vec<_>>();
        let normals = ico
            .faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.vertices;
                (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a])).normalize()
            })
            .collect();
        let mut edges = Vec::new();
        for f in &ico.faces {
            for k in 0..3 {
                let (a, b) = (f.vertices[k], f.vertices[(k + 1) % 3]);
                if a < b {
                    edges.push((vertices[b] - vertices[a]).normalize());
                }
            }
        }
        Convex { vertices, normals, edges }
    }
}

fn project(vs: &[Vector3<f64>], rot: &Matrix3<f64>, pos: &Vector3<f64>, axis: &Vector3<f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in vs {
        let d = (rot * v + pos).dot(axis);
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (lo, hi)
}

/// Separating-axis test; true when penetration exceeds `margin` on every axis.
fn convex_overlap(
    a: &Convex,
    (ra, pa): (&Matrix3<f64>, &Vector3<f64>),
    b: &Convex,
    (rb, pb): (&Matrix3<f64>, &Vector3<f64>),
    margin: f64,
) -> bool {
    let mut axes: Vec<Vector3<f64>> = Vec::new();
    axes.extend(a.normals.iter().map(|n| ra * n));
    axes.extend(b.normals.iter().map(|n| rb * n));
    for ea in &a.edges {
        for eb in &b.edges {
            let c = (ra * ea).cross(&(rb * eb));
            let n = c.norm();
            if n > 1e-9 {
                axes.push(c / n);
            }
        }
    }
    axes.iter().all(|axis| {
        let (alo, ahi) = project(&a.vertices, ra, pa, axis);
        let (blo, bhi) = project(&b.vertices, rb, pb, axis);
        ahi.min(bhi) - alo.max(blo) > margin
    })
}

#[derive(Debug, Clone)]
struct LinkModel {
    mass: f64,
    com: Vector3<f64>,
    inertia: Matrix3<f64>,
    contact_points: Vec<Vector3<f64>>,
    shapes: Vec<Convex>,
    /// Actuated joints between the root and this link.
    ancestors: Vec<usize>,
}

#[derive(Debug, Clone)]
struct JointModel {
    parent: usize,
    child: usize,
    origin_rot: Matrix3<f64>,
    origin_pos: Vector3<f64>,
    axis: Unit<Vector3<f64>>,
    actuated: Option<usize>,
}

#[derive(Debug, Clone)]
struct Model {
    links: Vec<LinkModel>,
    /// Topologically ordered.
    joints: Vec<JointModel>,
    limits: [(f64, f64); JOINT_COUNT],
    total_mass: f64,
    /// Pairs of links not joined directly.
    collision_pairs: Vec<(usize, usize)>,
}

impl Model {
    fn from_urdf(urdf: &UrdfModel) -> Result<Self, SimError> {
        let index = |name: &str| urdf.links.iter().position(|l| l.name == name);
        let roots: Vec<usize> = (0..urdf.links.len())
            .filter(|&i| !urdf.joints.iter().any(|j| j.child == urdf.links[i].name))
            .collect();
        if roots.len() != 1 {
            return Err(SimError::Load(format!("expected one root link, found {}", roots.len())));
        }
        if urdf.revolute_count() != JOINT_COUNT {
            return Err(SimError::Load(format!(
                "expected {JOINT_COUNT} revolute joints, found {}",
                urdf.revolute_count()
            )));
        }
        let mut actuated_of = Vec::new();
        let mut next = 0;
        for j in &urdf.joints {
            if j.kind == JointKind::Revolute {
                actuated_of.push(Some(next));
                next += 1;
            } else {
                actuated_of.push(None);
            }
        }

        let mut order = Vec::new();
        let mut frontier = vec![roots[0]];
        let mut reached = vec![false; urdf.links.len()];
        reached[roots[0]] = true;
        while let Some(link) = frontier.pop() {
            for (ji, j) in urdf.joints.iter().enumerate() {
                if index(&j.parent) == Some(link) {
                    let c = index(&j.child).ok_or_else(|| SimError::Load("dangling joint".into()))?;
                    if reached[c] {
                        return Err(SimError::Load("kinematic loop".into()));
                    }
                    reached[c] = true;
                    order.push(ji);
                    frontier.push(c);
                }
            }
        }
        if reached.iter().any(|r| !r) {
            return Err(SimError::Load("disconnected link".into()));
        }

        let mut joints = Vec::new();
        let mut limits = [(0.0, 0.0); JOINT_COUNT];
        for &ji in &order {
            let j = &urdf.joints[ji];
            if let Some(a) = actuated_of[ji] {
                limits[a] = (j.lower, j.upper);
            }
            joints.push(JointModel {
                parent: index(&j.parent).expect("checked"),
                child: index(&j.child).expect("checked"),
                origin_rot: *j.origin.rotation.to_rotation_matrix().matrix(),
                origin_pos: j.origin.translation.vector,
                axis: Unit::new_normalize(j.axis),
                actuated: if j.kind == JointKind::Revolute { actuated_of[ji] } else { None },
            });
        }

        let mut links = Vec::new();
        for l in &urdf.links {
            let mut contact_points = Vec::new();
            let mut shapes = Vec::new();
            for c in &l.collision {
                let rot = c.origin.rotation.to_rotation_matrix();
                let pos = c.origin.translation.vector;
                let convex = match &c.shape {
                    Shape::Box { size } => Convex::cuboid(&rot, &pos, size),
                    Shape::Mesh { filename, scale } if filename.ends_with(BODY_MESH) => {
                        Convex::icosahedron(&rot, &pos, scale)
                    }
                    Shape::Sphere { radius } => {
                        let size = Vector3::repeat(2.0 * radius);
                        Convex::cuboid(&rot, &pos, &size)
                    }
                    Shape::Mesh { filename, .. } => {
                        return Err(SimError::Load(format!("unsupported mesh {filename}")))
                    }
                };
                contact_points.extend(convex.vertices.iter().copied());
                shapes.push(convex);
            }
            links.push(LinkModel {
                mass: l.mass,
                com: l.com,
                inertia: l.inertia,
                contact_points,
                shapes,
                ancestors: Vec::new(),
            });
        }
        // ancestors follow topological order
        for j in &joints {
            let mut anc = links[j.parent].ancestors.clone();
            if let Some(a) = j.actuated {
                anc.push(a);
            }
            links[j.child].ancestors = anc;
        }
        let total_mass: f64 = links.iter().map(|l| l.mass).sum();
        if total_mass <= 0.0 {
            return Err(SimError::Load("robot has no mass".into()));
        }
        let mut collision_pairs = Vec::new();
        for a in 0..links.len() {
            for b in a + 1..links.len() {
                let joined = joints
                    .iter()
                    .any(|j| (j.parent == a && j.child == b) || (j.parent == b && j.child == a));
                if !joined && !links[a].shapes.is_empty() && !links[b].shapes.is_empty() {
                    collision_pairs.push((a, b));
                }
            }
        }
        Ok(Model { links, joints, limits, total_mass, collision_pairs })
    }
}

/// Link poses in the body frame plus joint anchors and axes.
#[derive(Debug, Clone, Default)]
struct Kinematics {
    rot: Vec<Matrix3<f64>>,
    pos: Vec<Vector3<f64>>,
    joint_pos: [Vector3<f64>; JOINT_COUNT],
    joint_axis: [Vector3<f64>; JOINT_COUNT],
    com: Vector3<f64>,
    inertia: Matrix3<f64>,
}

impl Kinematics {
    fn compute(&mut self, model: &Model, q: &[f64; JOINT_COUNT]) {
        let n = model.links.len();
        self.rot.resize(n, Matrix3::identity());
        self.pos.resize(n, Vector3::zeros());
        for j in &model.joints {
            let pr = self.rot[j.parent];
            let pp = self.pos[j.parent];
            let base_rot = pr * j.origin_rot;
            let anchor = pp + pr * j.origin_pos;
            let angle = j.actuated.map_or(0.0, |a| q[a]);
            let r = base_rot * Rotation3::from_axis_angle(&j.axis, angle).matrix();
            self.rot[j.child] = r;
            self.pos[j.child] = anchor;
            if let Some(a) = j.actuated {
                self.joint_pos[a] = anchor;
                self.joint_axis[a] = base_rot * j.axis.into_inner();
            }
        }
        let mut com = Vector3::zeros();
        for (i, l) in model.links.iter().enumerate() {
            com += l.mass * (self.rot[i] * l.com + self.pos[i]);
        }
        com /= model.total_mass;
        let mut inertia = Matrix3::zeros();
        for (i, l) in model.links.iter().enumerate() {
            let d = self.rot[i] * l.com + self.pos[i] - com;
            inertia += self.rot[i] * l.inertia * self.rot[i].transpose()
                + l.mass * (Matrix3::identity() * d.norm_squared() - d * d.transpose());
        }
        self.com = com;
        self.inertia = inertia;
    }
}

#[derive(Debug, Clone)]
struct State {
    com_pos: Vector3<f64>,
    com_vel: Vector3<f64>,
    orientation: UnitQuaternion<f64>,
    omega: Vector3<f64>,
    servo: [f64; JOINT_COUNT],
    deflection: [f64; JOINT_COUNT],
    targets: [f64; JOINT_COUNT],
    /// Contact points relative to the composite centre of mass, body frame.
    prev_offsets: Vec<Vector3<f64>>,
    /// Ground anchor of each touching contact point.
    anchors: Vec<Option<Vector2<f64>>>,
}

/// The bundled physics backend.
#[derive(Debug, Clone)]
pub struct RigidBodySim {
    config: EngineConfig,
    model: Option<Model>,
    state: Option<State>,
    kin: Kinematics,
    offsets: Vec<Vector3<f64>>,
}

impl RigidBodySim {
    pub fn new(config: EngineConfig) -> Self {
        RigidBodySim { config, model: None, state: None, kin: Kinematics::default(), offsets: Vec::new() }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    fn measured(model: &Model, st: &State) -> [f64; JOINT_COUNT] {
        let mut q = [0.0; JOINT_COUNT];
        for i in 0..JOINT_COUNT {
            let (lo, hi) = model.limits[i];
            q[i] = (st.servo[i] + st.deflection[i]).clamp(lo, hi);
        }
        q
    }

    fn collect_offsets(model: &Model, kin: &Kinematics, out: &mut Vec<Vector3<f64>>) {
        out.clear();
        for (i, l) in model.links.iter().enumerate() {
            for p in &l.contact_points {
                out.push(kin.rot[i] * p + kin.pos[i] - kin.com);
            }
        }
    }

    fn substep(&mut self, dt: f64) -> Result<(), SimError> {
        let cfg = &self.config;
        let model = self.model.as_ref().ok_or(SimError::NotLoaded)?;
        let st = self.state.as_mut().ok_or(SimError::NotLoaded)?;

        for i in 0..JOINT_COUNT {
            let (lo, hi) = model.limits[i];
            let vel = (cfg.servo_gain * (st.targets[i] - st.servo[i]))
                .clamp(-cfg.servo_max_velocity, cfg.servo_max_velocity);
            st.servo[i] = (st.servo[i] + vel * dt).clamp(lo, hi);
        }
        let q = Self::measured(model, st);
        self.kin.compute(model, &q);
        Self::collect_offsets(model, &self.kin, &mut self.offsets);

        let rot = st.orientation.to_rotation_matrix();
        let rm = rot.matrix();
        let mut force = Vector3::zeros();
        let mut torque = Vector3::zeros();
        let mut joint_torque = [0.0; JOINT_COUNT];
        let mut k = 0;
        for l in &model.links {
            for _ in &l.contact_points {
                let r_body = self.offsets[k];
                let prev = st.prev_offsets[k];
                k += 1;
                let r = rm * r_body;
                let z = st.com_pos.z + r.z;
                if z >= 0.0 {
                    st.anchors[k - 1] = None;
                    continue;
                }
                let vel = st.com_vel + st.omega.cross(&r) + rm * ((r_body - prev) / dt);
                let normal = (cfg.contact_stiffness * -z - cfg.contact_damping * vel.z).max(0.0);
                let p = Vector2::new(st.com_pos.x + r.x, st.com_pos.y + r.y);
                let anchor = st.anchors[k - 1].get_or_insert(p);
                let vt = Vector2::new(vel.x, vel.y);
                let mut ft = -cfg.tangential_stiffness * (p - *anchor) - cfg.tangential_damping * vt;
                let cap = cfg.friction * normal;
                let mag = ft.norm();
                if mag > cap {
                    // slipping: drag the anchor so the spring force sits on the cone
                    ft *= cap / mag;
                    *anchor = p + (ft + cfg.tangential_damping * vt) / cfg.tangential_stiffness;
                }
                let f = Vector3::new(ft.x, ft.y, normal);
                force += f;
                torque += r.cross(&f);
                if !l.ancestors.is_empty() {
                    let f_body = rm.transpose() * f;
                    let p_body = r_body + self.kin.com;
                    for &a in &l.ancestors {
                        let lever = p_body - self.kin.joint_pos[a];
                        joint_torque[a] += self.kin.joint_axis[a].dot(&lever.cross(&f_body));
                    }
                }
            }
        }

        let mass = model.total_mass;
        st.com_vel += (force / mass - Vector3::new(0.0, 0.0, cfg.gravity)) * dt;
        st.com_pos += st.com_vel * dt;
        let iw = rm * self.kin.inertia * rm.transpose();
        let inv = iw
            .try_inverse()
            .ok_or_else(|| SimError::Diverged("singular inertia".into()))?;
        let domega = inv * (torque - st.omega.cross(&(iw * st.omega)));
        st.omega += domega * dt;
        st.orientation = UnitQuaternion::from_scaled_axis(st.omega * dt) * st.orientation;
        st.orientation.renormalize();

        let alpha = (dt / cfg.compliance_time_constant).min(1.0);
        for i in 0..JOINT_COUNT {
            let target = joint_torque[i] / cfg.joint_stiffness;
            st.deflection[i] += (target - st.deflection[i]) * alpha;
        }
        std::mem::swap(&mut st.prev_offsets, &mut self.offsets);

        if !(st.com_pos.iter().all(|v| v.is_finite() && v.abs() < 1e3) && st.omega.iter().all(|v| v.is_finite())) {
            return Err(SimError::Diverged(format!("state left bounds at {:?}", st.com_pos)));
        }
        Ok(())
    }
}

impl Default for RigidBodySim {
    fn default() -> Self {
        RigidBodySim::new(EngineConfig::default())
    }
}

fn rotation_from_euler(e: &[f64; 3]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(e[0], e[1], e[2])
}

impl PhysicsAdapter for RigidBodySim {
    fn load(&mut self, urdf: &str) -> Result<(), SimError> {
        let parsed = parse_urdf(urdf).map_err(|e| SimError::Load(e.to_string()))?;
        self.model = Some(Model::from_urdf(&parsed)?);
        self.state = None;
        Ok(())
    }

    fn reset(&mut self, pose: &BasePose, joints: &[f64; JOINT_COUNT]) -> Result<(), SimError> {
        let model = self.model.as_ref().ok_or(SimError::NotLoaded)?;
        let mut servo = [0.0; JOINT_COUNT];
        for i in 0..JOINT_COUNT {
            let (lo, hi) = model.limits[i];
            servo[i] = joints[i].clamp(lo, hi);
        }
        self.kin.compute(model, &servo);
        let orientation = rotation_from_euler(&pose.euler);
        let base = Vector3::from(pose.position);
        let com_pos = base + orientation * self.kin.com;
        let mut offsets = Vec::new();
        Self::collect_offsets(model, &self.kin, &mut offsets);
        self.state = Some(State {
            com_pos,
            com_vel: Vector3::zeros(),
            orientation,
            omega: Vector3::zeros(),
            servo,
            deflection: [0.0; JOINT_COUNT],
            targets: servo,
            anchors: vec![None; offsets.len()],
            prev_offsets: offsets,
        });
        Ok(())
    }

    fn set_targets(&mut self, targets: &[f64; JOINT_COUNT]) {
        if let (Some(model), Some(st)) = (self.model.as_ref(), self.state.as_mut()) {
            for i in 0..JOINT_COUNT {
                let (lo, hi) = model.limits[i];
                st.targets[i] = targets[i].clamp(lo, hi);
            }
        }
    }

    fn step(&mut self) -> Result<(), SimError> {
        let dt = self.config.control_dt / self.config.substeps.max(1) as f64;
        for _ in 0..self.config.substeps.max(1) {
            self.substep(dt)?;
        }
        Ok(())
    }

    fn read_state(&self) -> StateFrame {
        let (Some(model), Some(st)) = (self.model.as_ref(), self.state.as_ref()) else {
            return StateFrame::default();
        };
        let q = Self::measured(model, st);
        let mut kin = Kinematics::default();
        kin.compute(model, &q);
        let base = st.com_pos - st.orientation * kin.com;
        let (roll, pitch, yaw) = st.orientation.euler_angles();
        StateFrame {
            base_position: [base.x, base.y, base.z],
            base_euler: [roll, pitch, yaw],
            joint_angles: q,
        }
    }

    fn self_collision(&self) -> bool {
        let (Some(model), Some(st)) = (self.model.as_ref(), self.state.as_ref()) else {
            return false;
        };
        let q = Self::measured(model, st);
        let mut kin = Kinematics::default();
        kin.compute(model, &q);
        let margin = self.config.self_collision_margin;
        model.collision_pairs.iter().any(|&(a, b)| {
            model.links[a].shapes.iter().any(|sa| {
                model.links[b].shapes.iter().any(|sb| {
                    convex_overlap(sa, (&kin.rot[a], &kin.pos[a]), sb, (&kin.rot[b], &kin.pos[b]), margin)
                })
            })
        })
    }

    fn resting_height(&self, euler: &[f64; 3], joints: &[f64; JOINT_COUNT]) -> Result<f64, SimError> {
        let model = self.model.as_ref().ok_or(SimError::NotLoaded)?;
        let mut kin = Kinematics::default();
        kin.compute(model, joints);
        let rot = rotation_from_euler(euler);
        let mut lowest = f64::INFINITY;
        for (i, l) in model.links.iter().enumerate() {
            for p in &l.contact_points {
                lowest = lowest.min((rot * (kin.rot[i] * p + kin.pos[i])).z);
            }
        }
        Ok(-lowest + self.config.spawn_clearance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{ConfigSpace, HalfConfigCode};
    use crate::factory::{build_urdf, RobotGeometry};

    fn robot(faces: [u8; 2], joints: [u8; 6]) -> RigidBodySim {
        let space = ConfigSpace::default();
        let full = space.expand_full(&HalfConfigCode { faces, joints }).unwrap();
        let urdf = build_urdf(&full, &RobotGeometry::default(), &space).unwrap();
        let mut sim = RigidBodySim::default();
        sim.load(&urdf).unwrap();
        sim
    }

    fn spawn(sim: &mut RigidBodySim, joints: [f64; 12]) {
        let h = sim.resting_height(&[0.0; 3], &joints).unwrap();
        sim.reset(&BasePose { position: [0.0, 0.0, h], euler: [0.0; 3] }, &joints).unwrap();
    }

    #[test]
    fn loads_twelve_joints() {
        let sim = robot([5, 6], [0; 6]);
        assert_eq!(sim.model.as_ref().unwrap().joints.len(), 12);
        let mut bad = RigidBodySim::default();
        assert!(bad.load("<robot name='x'><link name='a'/></robot>").is_err());
    }

    #[test]
    fn resting_robot_settles() {
        let mut sim = robot([13, 6], [0, 3, 9, 0, 3, 9]);
        spawn(&mut sim, [0.0; 12]);
        for _ in 0..480 {
            sim.step().unwrap();
        }
        let a = sim.read_state();
        for _ in 0..240 {
            sim.step().unwrap();
        }
        let b = sim.read_state();
        assert!(!sim.toppled());
        for i in 0..3 {
            assert!((a.base_position[i] - b.base_position[i]).abs() < 2e-3, "{a:?} {b:?}");
        }
        assert!(b.base_position[2] > 0.0);
    }

    #[test]
    fn symmetric_robot_stays_symmetric_at_rest() {
        let mut sim = robot([14, 19], [2, 5, 1, 11, 7, 3]);
        spawn(&mut sim, [0.0; 12]);
        for _ in 0..240 {
            sim.step().unwrap();
        }
        let s = sim.read_state();
        assert!(s.base_position[0].abs() < 1e-6, "{s:?}");
        assert!(s.base_euler[1].abs() < 1e-6 && s.base_euler[2].abs() < 1e-6, "{s:?}");
    }

    #[test]
    fn servo_tracks_targets() {
        let mut sim = robot([5, 6], [0; 6]);
        spawn(&mut sim, [0.0; 12]);
        sim.set_targets(&[0.4; 12]);
        for _ in 0..240 {
            sim.step().unwrap();
        }
        let s = sim.read_state();
        for q in s.joint_angles {
            assert!((q - 0.4).abs() < 0.25, "{q}");
        }
    }

    #[test]
    fn stepping_is_deterministic() {
        let run = || {
            let mut sim = robot([15, 13], [4, 8, 1, 6, 2, 10]);
            spawn(&mut sim, [0.1; 12]);
            let mut out = Vec::new();
            for t in 0..200 {
                let a = 0.5 * ((t as f64) * 0.2).sin();
                sim.set_targets(&[a; 12]);
                sim.step().unwrap();
                out.push(sim.read_state());
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn box_overlap_detects_and_separates() {
        let b = Convex::cuboid(&Rotation3::identity(), &Vector3::zeros(), &Vector3::new(1.0, 1.0, 1.0));
        let i = Matrix3::identity();
        let o = Vector3::zeros();
        assert!(convex_overlap(&b, (&i, &o), &b, (&i, &Vector3::new(0.9, 0.0, 0.0)), 1e-4));
        assert!(!convex_overlap(&b, (&i, &o), &b, (&i, &Vector3::new(1.1, 0.0, 0.0)), 1e-4));
        let r = *Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_4).matrix();
        // rotated cube corner reaches 0.5 + 0.707 along x
        assert!(convex_overlap(&b, (&i, &o), &b, (&r, &Vector3::new(1.15, 0.0, 0.0)), 1e-4));
        assert!(!convex_overlap(&b, (&i, &o), &b, (&r, &Vector3::new(1.25, 0.0, 0.0)), 1e-4));
    }
}
