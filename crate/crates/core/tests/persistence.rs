mod common;

use common::persistence_checks as checks;

#[test]
fn same_seed_same_trace_and_parameters() {
    checks::same_seed_same_trace_and_parameters();
}

#[test]
fn two_step_run_writes_two_log_lines_and_checkpoints() {
    checks::two_step_run_writes_two_log_lines_and_checkpoints();
}

#[test]
fn resuming_at_an_epoch_boundary_reproduces_the_uninterrupted_run() {
    checks::resuming_at_an_epoch_boundary_reproduces_the_uninterrupted_run();
}

#[test]
fn checkpoint_roundtrip_gives_bit_identical_predictions() {
    checks::checkpoint_roundtrip_gives_bit_identical_predictions();
}

#[test]
fn manifest_roundtrip() {
    checks::manifest_roundtrip();
}

#[test]
fn report_roundtrips_through_json_and_csv() {
    checks::report_roundtrips_through_json_and_csv();
}

#[test]
fn evaluating_ground_truth_scores_perfectly() {
    checks::evaluating_ground_truth_scores_perfectly();
}

#[test]
fn divergence_reports_the_step() {
    checks::divergence_reports_the_step();
}
