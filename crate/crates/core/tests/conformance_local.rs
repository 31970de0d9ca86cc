use graffiti_core::conformance::{run_suite, LocalDeployment};

#[test]
fn local_passes_every_clause() {
    let report = run_suite("local", &|| Box::new(LocalDeployment::default()));
    println!("{report}");
    assert!(report.all_passed(), "{report}");
    assert_eq!(report.skipped(), 0);
}
