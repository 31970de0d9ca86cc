use std::sync::Arc;

use graffiti_core::api::{DiscoverDelta, Graffiti, LoginRequest};
use graffiti_core::conformance::{run_suite, snapshot_delta_trial, Deployment, MetaDeployment};
use graffiti_core::local::LocalGraffiti;
use graffiti_core::router::{MetaConfig, MetaGraffiti};
use graffiti_core::{ChannelName, DiscoverCursor, GraffitiError, ObjectBase, ObjectUrl, SchemaDoc, Scheme};
use serde_json::json;

fn chans(names: &[&str]) -> Vec<ChannelName> {
    names.iter().map(|n| ChannelName::new(*n).unwrap()).collect()
}

#[test]
fn router_passes_every_clause_with_either_default() {
    for scheme in [Scheme::Local, Scheme::Remote] {
        let report = run_suite(&format!("meta/{scheme}"), &|| Box::new(MetaDeployment::new(scheme, 60_000)));
        println!("{report}");
        assert!(report.all_passed(), "{report}");
        assert_eq!(report.skipped(), 0);
    }
}

#[test]
fn snapshot_plus_delta_across_two_implementations() {
    for seed in 0..20 {
        let d = MetaDeployment::split(Scheme::Local, 3_600_000, &["bob"]);
        snapshot_delta_trial(&d, seed, 6, 8).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    }
}

#[test]
fn routes_by_scheme_and_merges_discovery() {
    let d = MetaDeployment::split(Scheme::Local, 60_000, &["bob"]);
    let alice = d.login("alice").unwrap();
    let bob = d.login("bob").unwrap();
    let a = d.meta().put(ObjectBase::new(json!({"n": 1}), &["c"]), &alice).unwrap();
    let b = d.meta().put(ObjectBase::new(json!({"n": 2}), &["c"]), &bob).unwrap();
    assert_eq!(a.url.scheme(), Scheme::Local);
    assert_eq!(b.url.scheme(), Scheme::Remote);
    assert_eq!(d.remote().servers()[0].store().len(), 1);
    assert_eq!(d.local().local().store().len(), 1);

    let out = d.meta().discover(&chans(&["c"]), &SchemaDoc::any(), None).unwrap().collect_all().unwrap();
    let mut urls: Vec<_> = out.items.iter().map(|o| o.url.clone()).collect();
    urls.sort();
    let mut expected = vec![a.url.clone(), b.url.clone()];
    expected.sort();
    assert_eq!(urls, expected);

    // Cursor survives text and resumes on both sides.
    let text = out.cursor.unwrap().to_string();
    let cursor: DiscoverCursor = text.parse().unwrap();
    d.meta().delete(&b.url, &bob).unwrap();
    let c = d.meta().put(ObjectBase::new(json!({"n": 3}), &["c"]), &alice).unwrap();
    let next = d.meta().continue_discover(&cursor, None).unwrap().collect_all().unwrap();
    assert_eq!(next.items.len(), 2);
    assert!(next.items.iter().any(|x| matches!(x, DiscoverDelta::Tombstone(t) if t.url == b.url)));
    assert!(next.items.iter().any(|x| matches!(x, DiscoverDelta::Object(o) if o.url == c.url)));

    // Cross-scheme mutation answers like a stranger.
    assert!(matches!(d.meta().delete(&a.url, &bob), Err(GraffitiError::NotAuthorized)));
}

#[test]
fn unbound_scheme_and_conflicts() {
    let mut meta = MetaGraffiti::new(Scheme::Local);
    meta.register(Scheme::Local, Arc::new(LocalGraffiti::in_memory())).unwrap();
    assert!(matches!(
        meta.register(Scheme::Local, Arc::new(LocalGraffiti::in_memory())),
        Err(GraffitiError::SchemeConflict(_))
    ));
    let s = meta.login(&LoginRequest::handle("alice")).unwrap();
    let url: ObjectUrl = "graffiti:cs:https%3A%2F%2Fh%2Fobjects%2Ejson/1".parse().unwrap();
    assert!(matches!(meta.delete(&url, &s), Err(GraffitiError::UnknownScheme(_))));
    assert!(matches!(meta.get(&url, &SchemaDoc::any(), None), Err(GraffitiError::UnknownScheme(_))));
}

#[test]
fn only_local_is_the_identity() {
    let local = Arc::new(LocalGraffiti::in_memory());
    let mut meta = MetaGraffiti::new(Scheme::Local);
    meta.register(Scheme::Local, local.clone()).unwrap();
    let s = meta.login(&LoginRequest::handle("alice")).unwrap();
    for n in 0..5 {
        meta.put(ObjectBase::new(json!({"n": n}), &["c"]), &s).unwrap();
    }
    let via_meta = meta.discover(&chans(&["c"]), &SchemaDoc::any(), None).unwrap().collect_all().unwrap().items;
    let direct = local.discover(&chans(&["c"]), &SchemaDoc::any(), None).unwrap().collect_all().unwrap().items;
    assert_eq!(via_meta, direct);
}

#[test]
fn expired_sub_cursor_expires_the_composite() {
    let d = MetaDeployment::split(Scheme::Local, 1_000, &["bob"]);
    let out = d.meta().discover(&chans(&["c"]), &SchemaDoc::any(), None).unwrap().collect_all().unwrap();
    d.clock().unwrap().advance(1_001);
    assert!(matches!(d.meta().continue_discover(&out.cursor.unwrap(), None), Err(GraffitiError::CursorExpired)));
}

#[test]
fn default_remote_down_is_home_unavailable_without_side_effects() {
    let d = MetaDeployment::new(Scheme::Remote, 60_000);
    let s = d.login("alice").unwrap();
    d.remote().network().unwrap().set_down("s0.test", true);
    let e = d.meta().put(ObjectBase::new(json!({}), &["c"]), &s).unwrap_err();
    assert!(matches!(e, GraffitiError::HomeUnavailable(_)), "{e}");
    assert!(d.local().local().store().is_empty());
}

#[test]
fn config_file_builds_bindings() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    let config = json!({
        "default_scheme": "cs",
        "local": {"path": dir.path().join("local")},
        "remote": {"registry": ["https://a.example", "b.example"]},
        "cs": {"tracker": "tracker.example", "storage": {"kind": "fs", "root": dir.path().join("blobs")}}
    });
    std::fs::write(&path, config.to_string()).unwrap();
    let meta = MetaConfig::load(&path).unwrap().build().unwrap();
    assert_eq!(meta.schemes(), [Scheme::Local, Scheme::Remote, Scheme::Cs]);
    assert_eq!(meta.default_scheme(), Scheme::Cs);

    let bad: MetaConfig = serde_json::from_value(json!({"default_scheme": "remote"})).unwrap();
    assert!(bad.build().is_err());
    let empty = MetaConfig::default().build().unwrap();
    assert_eq!(empty.schemes(), [Scheme::Local]);
}
