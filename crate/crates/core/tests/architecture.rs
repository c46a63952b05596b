mod common;

use common::arch_checks as checks;

#[test]
fn vlm_is_unit_norm_and_attention_is_a_distribution() {
    checks::vlm_is_unit_norm_and_attention_is_a_distribution();
}

#[test]
fn vlm_matches_brute_force_attention() {
    checks::vlm_matches_brute_force_attention();
}

#[test]
fn dominant_score_selects_one_position() {
    checks::dominant_score_selects_one_position();
}

#[test]
fn closed_gates_are_an_exact_identity() {
    checks::closed_gates_are_an_exact_identity();
}

#[test]
fn half_open_gates_average_the_other_levels() {
    checks::half_open_gates_average_the_other_levels();
}

#[test]
fn two_rounds_equal_the_hand_unrolled_schedule() {
    checks::two_rounds_equal_the_hand_unrolled_schedule();
}

#[test]
fn lvm_update_ignores_same_round_outputs_of_other_levels() {
    checks::lvm_update_ignores_same_round_outputs_of_other_levels();
}
