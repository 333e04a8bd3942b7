//! Acceptance suite: runs every shipped verification criterion at its stated
//! tolerance and prints one pass/fail line per criterion. The same checks
//! back the CLI `selftest` command.

use mechkit::battery::{self, CriterionResult};

fn check(result: CriterionResult) {
    println!("{}", result.line());
    assert!(result.pass, "{}", result.line());
}

#[test]
fn criterion_01_chain_inequality() {
    check(battery::criterion_chain_inequality());
}

#[test]
fn criterion_02_price_identity() {
    check(battery::criterion_price_identity());
}

#[test]
fn criterion_03_feasible_construction() {
    check(battery::criterion_feasible_construction());
}

#[test]
fn criterion_04_polytope_sandwich() {
    check(battery::criterion_polytope_sandwich());
}

#[test]
fn criterion_05_xos_ratio_and_chain() {
    check(battery::criterion_xos_ratio_and_chain());
}

#[test]
fn criterion_06_oracle_equivalence() {
    check(battery::criterion_oracle_equivalence());
}

#[test]
fn criterion_07_counterexample_structure() {
    check(battery::criterion_counterexample_structure());
}

#[test]
fn criterion_08_lipschitz_suites() {
    check(battery::criterion_lipschitz_suites());
}

#[test]
fn criterion_09_mechanism_rationality() {
    check(battery::criterion_mechanism_rationality());
}

#[test]
fn criterion_10_sample_concentration() {
    check(battery::criterion_sample_concentration());
}
