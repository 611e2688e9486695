//! Acceptance suite: one test per criterion, each printing its measured
//! values, expected values and tolerances. The criteria run serialized to
//! bound peak memory; every tolerance is pinned in `hmm_cli::acceptance`.

use hmm_cli::acceptance::run_criterion;
use std::sync::Mutex;

static GATE: Mutex<()> = Mutex::new(());

fn run(id: usize) {
    let _gate = GATE.lock().unwrap_or_else(|e| e.into_inner());
    let outcome = run_criterion(id).expect("criterion must run to completion");
    println!("{}", outcome.summary());
    for line in &outcome.lines {
        println!("    {line}");
    }
    assert!(
        outcome.passed,
        "{}\n{}",
        outcome.summary(),
        outcome.lines.join("\n")
    );
}

#[test]
fn criterion_01_homogenized_laminate_tensor() {
    run(1);
}

#[test]
fn criterion_02_laminate_tensor_convergence_order() {
    run(2);
}

#[test]
fn criterion_03_matrix_inclusion_tensor() {
    run(3);
}

#[test]
fn criterion_04_transfer_tensor_mode_identity() {
    run(4);
}

#[test]
fn criterion_05_route_equivalence() {
    run(5);
}

#[test]
fn criterion_06_beam_macro_convergence_orders() {
    run(6);
}

#[test]
fn criterion_07_micro_superconvergence() {
    run(7);
}

#[test]
fn criterion_08_optimal_refinement() {
    run(8);
}

#[test]
fn criterion_09_spr_superconvergence() {
    run(9);
}

#[test]
fn criterion_10_property_suite() {
    run(10);
}
