mod common;

use common::metric_checks as checks;

#[test]
fn random_pairs_match_direct_summation() {
    checks::random_pairs_match_direct_summation();
}

#[test]
fn identity_anchors() {
    checks::identity_anchors();
}

#[test]
fn equal_precision_and_recall_give_that_value() {
    checks::equal_precision_and_recall_give_that_value();
}

#[test]
fn complement_has_correlation_minus_one() {
    checks::complement_has_correlation_minus_one();
}

#[test]
fn half_probability_bce_is_hw_ln2() {
    checks::half_probability_bce_is_hw_ln2();
}

#[test]
fn bce_matches_naive_form_away_from_the_clamp() {
    checks::bce_matches_naive_form_away_from_the_clamp();
}
