mod common;

use common::checks;

#[test]
fn plackett_luce_first_pick_on_three_to_one_scores() {
    checks::plackett_luce_three_to_one().unwrap();
}

#[test]
fn inversion_wrapper_fires_a_third_of_the_time() {
    checks::inversion_frequency().unwrap();
}

#[test]
fn deterministic_oracle_is_idempotent() {
    checks::deterministic_oracle_is_idempotent().unwrap();
}
