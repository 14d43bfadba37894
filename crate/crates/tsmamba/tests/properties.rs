//! Property suites as ordinary tests. `PROPTEST_CASES=<n>` raises the case
//! count for longer fuzzing runs.

mod props;

#[test]
fn property_suites() {
    let mut failed = Vec::new();
    for p in props::all() {
        let cases = props::cases_for(&p);
        match (p.run)(cases) {
            Ok(()) => println!("ok   {} ({cases} cases)", p.name),
            Err(e) => {
                println!("FAIL {}: {e}", p.name);
                failed.push(p.name);
            }
        }
    }
    assert!(failed.is_empty(), "failing properties: {failed:?}");
}
