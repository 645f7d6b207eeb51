use metaself_core::codec::{circular_joint_distance, format_code_lines, parse_code_lines, JOINT_STATES, LEG_PATTERNS};
use metaself_core::{ConfigSpace, HalfConfigCode, LegPatternIndex};
use proptest::prelude::*;

fn half_code() -> impl Strategy<Value = HalfConfigCode> {
    let faces = ConfigSpace::default().candidates().to_vec();
    (0..LEG_PATTERNS, prop::array::uniform6(0..JOINT_STATES)).prop_map(move |(p, joints)| {
        let space = ConfigSpace::default();
        let pair = space.leg_pattern_from_index(LegPatternIndex::new(p).unwrap());
        assert!(faces.contains(&pair[0]) && faces.contains(&pair[1]));
        HalfConfigCode { faces: pair, joints }
    })
}

proptest! {
    #[test]
    fn full_code_is_symmetric_and_contracts_back(h in half_code()) {
        let space = ConfigSpace::default();
        let full = space.expand_full(&h).unwrap();
        let mut faces = full.faces.to_vec();
        faces.sort();
        faces.dedup();
        prop_assert_eq!(faces.len(), 4);
        for k in 0..2 {
            prop_assert_eq!(full.faces[2 + k], space.mirror().face(full.faces[k]));
        }
        for j in 0..6 {
            prop_assert_eq!(full.joints[6 + j], space.mirror().joint(full.joints[j]));
        }
        prop_assert_eq!(space.contract_half(&full).unwrap(), h);
    }

    #[test]
    fn mirror_half_is_an_involution(h in half_code()) {
        let space = ConfigSpace::default();
        let m = space.mirror_half(&h).unwrap();
        prop_assert_eq!(space.mirror_half(&m).unwrap(), h);
    }

    #[test]
    fn text_round_trip(codes in prop::collection::vec(half_code(), 0..20)) {
        let text = format_code_lines(&codes);
        prop_assert_eq!(parse_code_lines(&text).unwrap(), codes);
    }

    #[test]
    fn leg_pattern_index_round_trips(h in half_code()) {
        let space = ConfigSpace::default();
        let i = space.leg_pattern_index(h.faces).unwrap();
        prop_assert_eq!(space.leg_pattern_from_index(i), h.faces);
    }

    #[test]
    fn distance_is_a_bounded_metric(a in 0..12u8, b in 0..12u8, c in 0..12u8) {
        let d = |x, y| circular_joint_distance(x, y).unwrap();
        prop_assert!(d(a, b) <= 6);
        prop_assert_eq!(d(a, b), d(b, a));
        prop_assert!(d(a, c) <= d(a, b) + d(b, c));
    }
}

#[test]
fn out_of_range_inputs_are_rejected() {
    let space = ConfigSpace::default();
    assert!(circular_joint_distance(12, 0).is_err());
    assert!(LegPatternIndex::new(LEG_PATTERNS).is_err());
    assert!(!space.validate_half(&HalfConfigCode { faces: [5, 5], joints: [0; 6] }));
    assert!("1,2,3".parse::<HalfConfigCode>().is_err());
    assert_eq!(ConfigSpace::default().leg_pattern_index([5, 6]).unwrap().get(), 0);
}
