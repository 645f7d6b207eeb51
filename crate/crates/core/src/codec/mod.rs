//! Configuration naming scheme for the symmetric reconfigurable robot.
//!
//! A robot is named by a half-code of 8 integers: the two right-side faces
//! that carry legs and the 6 link-joint rotation indices of those legs. The
//! left side follows from the mirror table.

pub mod icosahedron;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use icosahedron::{Band, Icosahedron, FACE_COUNT};

/// Number of discrete rotations of a link joint (30° apart).
pub const JOINT_STATES: u8 = 12;
/// Candidate faces on one side of the body.
pub const SIDE_FACES: usize = 6;
/// Ordered pairs of distinct same-side faces.
pub const LEG_PATTERNS: usize = SIDE_FACES * (SIDE_FACES - 1);
/// Joints named by a half-code.
pub const HALF_JOINTS: usize = 6;
/// Largest circular distance between two joint indices.
pub const MAX_JOINT_DISTANCE: u8 = JOINT_STATES / 2;

/// Face-to-face reflection across the sagittal plane of the canonical body.
const DEFAULT_FACE_MIRROR: [u8; FACE_COUNT] = [
    1, 0, 4, 3, 2, 9, 8, 7, 6, 5, 14, 13, 12, 11, 10, 17, 16, 15, 19, 18,
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("face {0} is not in the candidate face set")]
    FaceNotCandidate(u8),
    #[error("duplicate face {0}")]
    DuplicateFace(u8),
    #[error("face index {0} out of range [0, 20)")]
    FaceOutOfRange(u8),
    #[error("joint index {0} out of range [0, 12)")]
    JointOutOfRange(u8),
    #[error("leg pattern index {0} out of range [0, 30)")]
    PatternOutOfRange(usize),
    #[error("full code breaks mirror symmetry")]
    NotSymmetric,
    #[error("invalid candidate face set: {0}")]
    BadCandidateSet(String),
    #[error("cannot parse code: {0}")]
    Parse(String),
}

/// One side of a robot: two leg faces and the 6 joint rotations of those legs.
///
/// `joints[0..3]` belong to the leg on `faces[0]` (inner, middle, outer) and
/// `joints[3..6]` to the leg on `faces[1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HalfConfigCode {
    pub faces: [u8; 2],
    pub joints: [u8; HALF_JOINTS],
}

/// Whole-robot code. Legs are ordered right-hind, right-front, then the
/// mirror of each (left-hind, left-front).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FullConfigCode {
    pub faces: [u8; 4],
    pub joints: [u8; 12],
}

/// Index of an ordered pair of distinct same-side faces, in `[0, 30)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LegPatternIndex(u8);

impl LegPatternIndex {
    pub fn new(index: usize) -> Result<Self, CodecError> {
        if index < LEG_PATTERNS {
            Ok(Self(index as u8))
        } else {
            Err(CodecError::PatternOutOfRange(index))
        }
    }

    pub fn get(self) -> usize {
        self.0 as usize
    }
}

/// Mirror maps for faces and joint rotations. Both are involutions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MirrorTable {
    pub face_map: [u8; FACE_COUNT],
    pub joint_map: [u8; JOINT_STATES as usize],
}

impl Default for MirrorTable {
    fn default() -> Self {
        let mut joint_map = [0u8; JOINT_STATES as usize];
        for (j, m) in joint_map.iter_mut().enumerate() {
            *m = ((JOINT_STATES as usize - j) % JOINT_STATES as usize) as u8;
        }
        MirrorTable {
            face_map: DEFAULT_FACE_MIRROR,
            joint_map,
        }
    }
}

impl MirrorTable {
    pub fn is_involution(&self) -> bool {
        self.face_map
            .iter()
            .enumerate()
            .all(|(i, &m)| (m as usize) < FACE_COUNT && self.face_map[m as usize] as usize == i)
            && self
                .joint_map
                .iter()
                .enumerate()
                .all(|(i, &m)| m < JOINT_STATES && self.joint_map[m as usize] as usize == i)
    }

    pub fn face(&self, f: u8) -> u8 {
        self.face_map[f as usize]
    }

    pub fn joint(&self, j: u8) -> u8 {
        self.joint_map[j as usize]
    }
}

/// The family of symmetric robots: which faces may carry legs and how sides mirror.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigSpace {
    /// Right-side candidate faces, sorted ascending.
    candidates: [u8; SIDE_FACES],
    mirror: MirrorTable,
}

impl Default for ConfigSpace {
    fn default() -> Self {
        ConfigSpace {
            candidates: [5, 6, 13, 14, 15, 19],
            mirror: MirrorTable::default(),
        }
    }
}

impl ConfigSpace {
    /// Builds a space from an explicit right-side face set.
    pub fn new(candidates: [u8; SIDE_FACES], mirror: MirrorTable) -> Result<Self, CodecError> {
        if !mirror.is_involution() {
            return Err(CodecError::BadCandidateSet("mirror table is not an involution".into()));
        }
        let mut sorted = candidates;
        sorted.sort_unstable();
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                return Err(CodecError::DuplicateFace(w[0]));
            }
        }
        for &f in &sorted {
            if f as usize >= FACE_COUNT {
                return Err(CodecError::FaceOutOfRange(f));
            }
            let m = mirror.face(f);
            if m == f || sorted.contains(&m) {
                return Err(CodecError::BadCandidateSet(format!(
                    "face {f} mirrors onto {m}, which is not on the opposite side"
                )));
            }
        }
        Ok(ConfigSpace {
            candidates: sorted,
            mirror,
        })
    }

    pub fn candidates(&self) -> &[u8; SIDE_FACES] {
        &self.candidates
    }

    pub fn mirror(&self) -> &MirrorTable {
        &self.mirror
    }

    fn rank(&self, face: u8) -> Option<usize> {
        self.candidates.iter().position(|&c| c == face)
    }

    fn check_faces(&self, faces: [u8; 2]) -> Result<(usize, usize), CodecError> {
        let ra = self.rank(faces[0]).ok_or(CodecError::FaceNotCandidate(faces[0]))?;
        let rb = self.rank(faces[1]).ok_or(CodecError::FaceNotCandidate(faces[1]))?;
        if ra == rb {
            return Err(CodecError::DuplicateFace(faces[0]));
        }
        Ok((ra, rb))
    }

    fn check_half(&self, code: &HalfConfigCode) -> Result<(), CodecError> {
        self.check_faces(code.faces)?;
        match code.joints.iter().find(|&&j| j >= JOINT_STATES) {
            Some(&j) => Err(CodecError::JointOutOfRange(j)),
            None => Ok(()),
        }
    }

    /// True iff faces are distinct candidates and every joint is in `[0, 12)`.
    pub fn validate_half(&self, code: &HalfConfigCode) -> bool {
        self.check_half(code).is_ok()
    }

    /// Mirror image of a half-code: faces and joints mapped pointwise.
    ///
    /// Accepts a right-side code or the mirror image of one, so applying it
    /// twice returns the input.
    pub fn mirror_half(&self, code: &HalfConfigCode) -> Result<HalfConfigCode, CodecError> {
        if let Some(&f) = code.faces.iter().find(|&&f| f as usize >= FACE_COUNT) {
            return Err(CodecError::FaceOutOfRange(f));
        }
        if let Some(&j) = code.joints.iter().find(|&&j| j >= JOINT_STATES) {
            return Err(CodecError::JointOutOfRange(j));
        }
        let mirrored = self.mirror_unchecked(code);
        if self.check_half(code).is_ok() {
            return Ok(mirrored);
        }
        match self.check_half(&mirrored) {
            Ok(()) => Ok(mirrored),
            Err(_) => self.check_half(code).map(|_| mirrored),
        }
    }

    fn mirror_unchecked(&self, code: &HalfConfigCode) -> HalfConfigCode {
        HalfConfigCode {
            faces: code.faces.map(|f| self.mirror.face(f)),
            joints: code.joints.map(|j| self.mirror.joint(j)),
        }
    }

    /// `[faces; m(faces)]`, `[joints; m(joints)]`.
    pub fn expand_full(&self, code: &HalfConfigCode) -> Result<FullConfigCode, CodecError> {
        self.check_half(code)?;
        let m = self.mirror_unchecked(code);
        let mut joints = [0u8; 12];
        joints[..6].copy_from_slice(&code.joints);
        joints[6..].copy_from_slice(&m.joints);
        Ok(FullConfigCode {
            faces: [code.faces[0], code.faces[1], m.faces[0], m.faces[1]],
            joints,
        })
    }

    /// Inverse of [`expand_full`](Self::expand_full); rejects asymmetric codes.
    pub fn contract_half(&self, full: &FullConfigCode) -> Result<HalfConfigCode, CodecError> {
        let mut joints = [0u8; HALF_JOINTS];
        joints.copy_from_slice(&full.joints[..6]);
        let half = HalfConfigCode {
            faces: [full.faces[0], full.faces[1]],
            joints,
        };
        if self.expand_full(&half)? != *full {
            return Err(CodecError::NotSymmetric);
        }
        Ok(half)
    }

    /// `5·rank(a) + (rank(b) if rank(b) < rank(a) else rank(b) − 1)`.
    pub fn leg_pattern_index(&self, faces: [u8; 2]) -> Result<LegPatternIndex, CodecError> {
        let (ra, rb) = self.check_faces(faces)?;
        let second = if rb < ra { rb } else { rb - 1 };
        LegPatternIndex::new((SIDE_FACES - 1) * ra + second)
    }

    pub fn leg_pattern_from_index(&self, index: LegPatternIndex) -> [u8; 2] {
        let ra = index.get() / (SIDE_FACES - 1);
        let second = index.get() % (SIDE_FACES - 1);
        let rb = if second < ra { second } else { second + 1 };
        [self.candidates[ra], self.candidates[rb]]
    }

    /// Uniform over the 30 leg patterns and the 12⁶ joint assignments.
    pub fn random_half_code<R: Rng + ?Sized>(&self, rng: &mut R) -> HalfConfigCode {
        let pattern = LegPatternIndex(rng.random_range(0..LEG_PATTERNS) as u8);
        let mut joints = [0u8; HALF_JOINTS];
        for j in &mut joints {
            *j = rng.random_range(0..JOINT_STATES);
        }
        HalfConfigCode {
            faces: self.leg_pattern_from_index(pattern),
            joints,
        }
    }
}

/// `min(|a − b|, 12 − |a − b|)`.
pub fn circular_joint_distance(a: u8, b: u8) -> Result<u8, CodecError> {
    for x in [a, b] {
        if x >= JOINT_STATES {
            return Err(CodecError::JointOutOfRange(x));
        }
    }
    let d = a.abs_diff(b);
    Ok(d.min(JOINT_STATES - d))
}

/// Size of the symmetric family with `joint_count` free joints per half.
pub fn reduced_family_size(joint_count: u32) -> u64 {
    LEG_PATTERNS as u64 * (JOINT_STATES as u64).pow(joint_count)
}

/// Configuration-space sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConfigSpaceCount {
    /// Symmetric robots on the 12 attachable faces: 30·12⁶.
    pub reduced: u64,
    /// Any 4 of 20 faces with free joints: C(20,4)·12¹².
    pub full: u64,
}

pub fn count_config_space() -> ConfigSpaceCount {
    let c20_4 = (17..=20u64).product::<u64>() / 24;
    ConfigSpaceCount {
        reduced: reduced_family_size(HALF_JOINTS as u32),
        full: c20_4 * (JOINT_STATES as u64).pow(12),
    }
}

impl HalfConfigCode {
    /// On-disk layout `[face_a, j1, j2, j3, face_b, j4, j5, j6]`.
    pub fn to_array(&self) -> [u8; 8] {
        let [a, b] = self.faces;
        let j = self.joints;
        [a, j[0], j[1], j[2], b, j[3], j[4], j[5]]
    }

    pub fn from_array(v: [u8; 8]) -> Self {
        HalfConfigCode {
            faces: [v[0], v[4]],
            joints: [v[1], v[2], v[3], v[5], v[6], v[7]],
        }
    }

    /// Filesystem-friendly key, e.g. `5_0_0_0_6_0_0_0`.
    pub fn file_stem(&self) -> String {
        self.to_array().map(|v| v.to_string()).join("_")
    }
}

impl fmt::Display for HalfConfigCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_array().map(|v| v.to_string()).join(","))
    }
}

impl FromStr for HalfConfigCode {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split(',').map(str::trim).collect();
        if parts.len() != 8 {
            return Err(CodecError::Parse(format!("expected 8 integers, got {}", parts.len())));
        }
        let mut v = [0u8; 8];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p.parse().map_err(|_| CodecError::Parse(format!("bad integer {p:?}")))?;
        }
        Ok(HalfConfigCode::from_array(v))
    }
}

/// Parses one code per line; blank lines and `#` comments are skipped.
pub fn parse_code_lines(text: &str) -> Result<Vec<HalfConfigCode>, CodecError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::parse)
        .collect()
}

pub fn format_code_lines(codes: &[HalfConfigCode]) -> String {
    codes.iter().map(|c| format!("{c}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn half(faces: [u8; 2], joints: [u8; 6]) -> HalfConfigCode {
        HalfConfigCode { faces, joints }
    }

    #[test]
    fn validate_examples() {
        let space = ConfigSpace::default();
        assert!(space.validate_half(&half([5, 6], [0; 6])));
        assert!(!space.validate_half(&half([5, 5], [0; 6])));
        assert!(!space.validate_half(&half([5, 6], [0, 0, 12, 0, 0, 0])));
        assert!(!space.validate_half(&half([5, 7], [0; 6])));
        assert!(!space.validate_half(&half([0, 6], [0; 6])));
    }

    #[test]
    fn default_face_mirror_matches_geometric_reflection() {
        let ico = Icosahedron::canonical();
        assert_eq!(ico.reflected_face_map(), DEFAULT_FACE_MIRROR);
        assert_eq!(ConfigSpace::default().candidates().to_vec(), ico.right_side_attachable());
    }

    #[test]
    fn mirror_examples() {
        let space = ConfigSpace::default();
        let t = space.mirror();
        assert!(t.is_involution());
        let x = half([5, 6], [0; 6]);
        let m = space.mirror_half(&x).unwrap();
        assert_eq!(m.joints, [t.joint(0); 6]);
        assert_eq!(m.faces, [t.face(5), t.face(6)]);
        assert_eq!(space.mirror_half(&m).unwrap(), x);
        assert_eq!(space.mirror_half(&half([5, 8], [0; 6])), Err(CodecError::FaceNotCandidate(8)));
        assert!(space.mirror_half(&half([5, 6], [0, 0, 0, 0, 0, 13])).is_err());
    }

    #[test]
    fn mirror_is_involution_exhaustive_over_faces() {
        let t = MirrorTable::default();
        for f in 0..FACE_COUNT as u8 {
            assert_eq!(t.face(t.face(f)), f);
        }
        for j in 0..JOINT_STATES {
            assert_eq!(t.joint(t.joint(j)), j);
        }
    }

    #[test]
    fn expand_concatenates() {
        let space = ConfigSpace::default();
        let full = space.expand_full(&half([13, 19], [1, 2, 3, 4, 5, 6])).unwrap();
        assert_eq!(full.joints, [1, 2, 3, 4, 5, 6, 11, 10, 9, 8, 7, 6]);
        assert_eq!(full.faces, [13, 19, space.mirror().face(13), space.mirror().face(19)]);
    }

    #[test]
    fn contract_rejects_broken_symmetry() {
        let space = ConfigSpace::default();
        let mut full = space.expand_full(&half([5, 6], [1, 2, 3, 4, 5, 6])).unwrap();
        full.joints[7] = 3;
        assert_eq!(space.contract_half(&full), Err(CodecError::NotSymmetric));
        let mut full = space.expand_full(&half([5, 6], [1, 2, 3, 4, 5, 6])).unwrap();
        full.faces[3] = 5;
        assert!(space.contract_half(&full).is_err());
    }

    #[test]
    fn expand_contract_round_trip_seeded() {
        let space = ConfigSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let x = space.random_half_code(&mut rng);
            let full = space.expand_full(&x).unwrap();
            assert_eq!(space.contract_half(&full).unwrap(), x);
            let mut faces = full.faces.to_vec();
            faces.sort_unstable();
            faces.dedup();
            assert_eq!(faces.len(), 4);
        }
    }

    proptest::proptest! {
        #[test]
        fn mirror_half_is_involution(pattern in 0usize..30, joints in proptest::array::uniform6(0u8..12)) {
            let space = ConfigSpace::default();
            let faces = space.leg_pattern_from_index(LegPatternIndex::new(pattern).unwrap());
            let x = HalfConfigCode { faces, joints };
            let twice = space.mirror_half(&space.mirror_half(&x).unwrap()).unwrap();
            proptest::prop_assert_eq!(twice, x);
        }
    }

    #[test]
    fn circular_distance_examples() {
        assert_eq!(circular_joint_distance(0, 11), Ok(1));
        assert_eq!(circular_joint_distance(0, 6), Ok(6));
        assert_eq!(circular_joint_distance(5, 5), Ok(0));
        assert_eq!(circular_joint_distance(12, 0), Err(CodecError::JointOutOfRange(12)));
    }

    #[test]
    fn circular_distance_metric_exhaustive() {
        let d = |a, b| circular_joint_distance(a, b).unwrap();
        for a in 0..12 {
            for b in 0..12 {
                assert_eq!(d(a, b), d(b, a));
                assert!(d(a, b) <= MAX_JOINT_DISTANCE);
                assert_eq!(d(a, b) == 0, a == b);
                for c in 0..12 {
                    assert!(d(a, c) <= d(a, b) + d(b, c));
                }
            }
        }
    }

    #[test]
    fn leg_pattern_bijection() {
        let space = ConfigSpace::default();
        assert_eq!(space.leg_pattern_index([5, 6]).unwrap().get(), 0);
        let mut seen = std::collections::BTreeSet::new();
        for &a in space.candidates() {
            for &b in space.candidates() {
                if a == b {
                    assert!(space.leg_pattern_index([a, b]).is_err());
                    continue;
                }
                let idx = space.leg_pattern_index([a, b]).unwrap();
                assert!(idx.get() < LEG_PATTERNS);
                assert_eq!(space.leg_pattern_from_index(idx), [a, b]);
                seen.insert(idx);
            }
        }
        assert_eq!(seen.len(), 30);
        assert_eq!(space.leg_pattern_index([5, 0]), Err(CodecError::FaceNotCandidate(0)));
    }

    #[test]
    fn config_space_sizes() {
        let c = count_config_space();
        assert_eq!(c.reduced, 89_579_520);
        assert_eq!(c.full, 4845 * 12u64.pow(12));
        assert!((c.full as f64 / 4.32e16 - 1.0).abs() < 0.005);
        assert!((c.reduced as f64 / 8.96e7 - 1.0).abs() < 0.005);
        assert_eq!(reduced_family_size(0), 30);
    }

    #[test]
    fn random_codes_are_deterministic_and_cover_joints() {
        let space = ConfigSpace::default();
        let a = space.random_half_code(&mut ChaCha8Rng::seed_from_u64(3));
        let b = space.random_half_code(&mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 12];
        for _ in 0..10_000 {
            let x = space.random_half_code(&mut rng);
            assert!(space.validate_half(&x));
            for &j in &x.joints {
                counts[j as usize] += 1;
            }
        }
        assert!(counts.iter().all(|&c| c > 0));
        // 60k draws over 12 bins; chi-square with 11 dof, p = 0.001 cutoff 31.26
        let expected = 60_000.0 / 12.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 31.26, "chi2 = {chi2}");
    }

    #[test]
    fn text_round_trip() {
        let x = half([14, 15], [0, 11, 3, 4, 9, 2]);
        assert_eq!(x.to_string(), "14,0,11,3,15,4,9,2");
        assert_eq!(x.to_string().parse::<HalfConfigCode>().unwrap(), x);
        let text = format_code_lines(&[x, half([5, 6], [0; 6])]);
        assert_eq!(parse_code_lines(&text).unwrap().len(), 2);
        assert!("1,2,3".parse::<HalfConfigCode>().is_err());
    }

    #[test]
    fn custom_candidate_set_rejects_self_mirrored_face() {
        // face 7 sits on the mirror plane
        let t = MirrorTable::default();
        assert_eq!(t.face(7), 7);
        assert!(ConfigSpace::new([5, 6, 7, 13, 14, 15], t.clone()).is_err());
        assert!(ConfigSpace::new([5, 6, 9, 13, 14, 15], t).is_err());
    }
}
