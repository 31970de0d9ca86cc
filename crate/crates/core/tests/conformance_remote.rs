use graffiti_core::conformance::{run_suite, RemoteDeployment};

#[test]
fn in_process_federation_passes_every_clause() {
    let report = run_suite("remote", &|| Box::new(RemoteDeployment::in_process(2, 60_000)));
    println!("{report}");
    assert!(report.all_passed(), "{report}");
    assert_eq!(report.skipped(), 0);
}

#[test]
fn loopback_http_federation_passes_every_clause() {
    let report = run_suite("remote-http", &|| Box::new(RemoteDeployment::http(2, 60_000).expect("bind loopback")));
    println!("{report}");
    assert!(report.all_passed(), "{report}");
    assert_eq!(report.skipped(), 0);
}
