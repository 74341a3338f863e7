mod common;

use proptest::prelude::*;

fn tile() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..2, 1..=10)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn log_space_matches_integer_counts(code in any::<u8>(), tile in tile(), d in prop::collection::btree_set(-3i64..=3, 1..4), t in 1usize..=30) {
        let d: Vec<i64> = d.into_iter().collect();
        prop_assert_eq!(common::check_log_counts(code, &tile, &d, t), Ok(()));
    }

    #[test]
    fn more_initial_defects_never_hurt(code in any::<u8>(), tile in tile(), a in prop::collection::vec(-4i64..=4, 1..3), b in prop::collection::vec(-6i64..=6, 1..4), t in 1usize..=40) {
        prop_assert_eq!(common::check_monotone(code, &tile, &a, &b, t), Ok(()));
    }

    #[test]
    fn spectral_radius_of_edge_and_vertex_matrices(code in any::<u8>(), tile in prop::collection::vec(0u8..2, 1..=8)) {
        prop_assert_eq!(common::check_spr(code, &tile), Ok(()));
    }

    #[test]
    fn additive_profile_is_concave(offsets in prop::collection::btree_set(-3i64..=3, 1..=5)) {
        let o: Vec<i64> = offsets.into_iter().collect();
        prop_assert_eq!(common::check_additive_concave(&o), Ok(()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn profile_dominated_by_neighborhood_walks(code in any::<u8>(), seed in 0u64..1000) {
        prop_assert_eq!(common::check_domination(code, seed, 300, 0.02, 10), Ok(()));
    }

    #[test]
    fn finite_profile_range_matches_shape(code in any::<u8>(), seed in 0u64..1000) {
        prop_assert_eq!(common::check_l_w(code, seed, 300, 0.02), Ok(()));
    }

    #[test]
    fn thread_count_does_not_change_results(code in any::<u8>(), seed in 0u64..1000) {
        prop_assert_eq!(common::check_threads(&format!("eca:{code}"), "uniform:0.5", "interval:5", 200, seed), Ok(()));
    }

    #[test]
    fn legendre_profile_concave_and_lambda_convex(code in any::<u8>(), tile in prop::collection::vec(0u8..2, 1..=8)) {
        prop_assert_eq!(common::check_legendre_shape(code, &tile), Ok(()));
    }
}

#[test]
fn thread_determinism_in_two_dimensions() {
    assert_eq!(common::check_threads("tot2d:moore:1", "uniform:0.3", "square:3", 30, 5), Ok(()));
    assert_eq!(common::check_threads("tot2d:vn:13", "tile:0011/0110", "point", 30, 0), Ok(()));
}
