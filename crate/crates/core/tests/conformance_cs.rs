use graffiti_core::conformance::{run_suite, CsDeployment};

#[test]
fn commodity_passes_every_public_clause() {
    let report = run_suite("cs", &|| Box::new(CsDeployment::default()));
    println!("{report}");
    assert!(report.all_passed(), "{report}");
    assert!(report.passed() >= 40);
}
