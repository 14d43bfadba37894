use tsmamba_core::checks::{self, GraphCheck};
use tsmamba_core::gradcheck::TOLERANCE;
use tsmamba_core::scan::ScanAlgo;

const SEEDS: u64 = 20;

#[test]
fn every_op_over_twenty_seeds() {
    let mut failures = Vec::new();
    for case in checks::op_cases() {
        for seed in 0..SEEDS {
            let report = (case.run)(seed).unwrap();
            if !report.passes(TOLERANCE) {
                failures.push(format!("{} seed {seed}: {:.3e}", case.name, report.max_rel_err));
            }
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}

fn assert_graph(check: GraphCheck, what: &str) {
    assert!(check.param_count <= 2000, "{what}: {} params", check.param_count);
    assert!(
        check.report.passes(TOLERANCE),
        "{what}: {:?}",
        check.report.per_input
    );
}

#[test]
fn tsmamba_block_graph() {
    for seed in 0..3 {
        assert_graph(checks::block_check(seed, ScanAlgo::Sequential).unwrap(), "block/seq");
        assert_graph(checks::block_check(seed, ScanAlgo::Parallel).unwrap(), "block/par");
    }
}

#[test]
fn autoencoder_loss_graph() {
    for seed in 0..2 {
        assert_graph(checks::ae_loss_check(seed).unwrap(), "ae");
    }
}

#[test]
fn classifier_loss_graph() {
    for seed in 0..3 {
        assert_graph(checks::classifier_loss_check(seed).unwrap(), "classifier");
    }
}

#[test]
fn scan_gradcheck_reports_twelve_inputs() {
    let report = tsmamba_core::scan::scan_gradcheck(3).unwrap();
    assert_eq!(report.per_input.len(), 12);
    assert!(report.passes(TOLERANCE), "{:?}", report.per_input);
}
