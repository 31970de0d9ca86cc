use std::collections::BTreeMap;
use std::sync::Arc;

use graffiti_core::api::{Graffiti, LoginRequest};
use graffiti_core::clock::ManualClock;
use graffiti_core::local::{LocalGraffiti, LocalOptions};
use graffiti_core::{ChannelName, GraffitiError, ObjectBase, ObjectUrl, Patch, SchemaDoc};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::json;

fn ch(name: &str) -> ChannelName {
    ChannelName::new(name).unwrap()
}

#[test]
fn reopen_keeps_objects_and_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let (url, revision, session) = {
        let g = LocalGraffiti::open_dir(dir.path()).unwrap();
        let s = g.login(&LoginRequest::handle("alice")).unwrap();
        let o = g.put(ObjectBase::new(json!({"n": 1}), &["c"]), &s).unwrap();
        let o = g.patch(&o.url, &Patch::from_json(json!([{"op": "replace", "path": "/value/n", "value": 2}])).unwrap(), &s).unwrap();
        (o.url, o.revision, s)
    };
    let g = LocalGraffiti::open_dir(dir.path()).unwrap();
    let o = g.get(&url, &SchemaDoc::any(), None).unwrap();
    assert_eq!((o.revision, &o.value["n"]), (revision, &json!(2)));
    assert_eq!(session.actor.as_str(), "graffiti:local:actor/alice");
    g.delete(&url, &session).unwrap();
    drop(g);
    let g = LocalGraffiti::open_dir(dir.path()).unwrap();
    assert!(matches!(g.get(&url, &SchemaDoc::any(), None), Err(GraffitiError::NotFound)));
    assert!(g.store().audit().is_empty());
}

#[test]
fn journal_starts_with_a_version_byte() {
    let dir = tempfile::tempdir().unwrap();
    let g = LocalGraffiti::open_dir(dir.path()).unwrap();
    let s = g.login(&LoginRequest::handle("a")).unwrap();
    g.put(ObjectBase::new(json!({}), &["c"]), &s).unwrap();
    let bytes = std::fs::read(dir.path().join("objects.log")).unwrap();
    assert_eq!(bytes[0], 1);
    let len = u32::from_le_bytes(bytes[1..5].try_into().unwrap()) as usize;
    let record: serde_json::Value = serde_json::from_slice(&bytes[5..5 + len]).unwrap();
    assert!(record.is_object());
}

#[test]
fn in_memory_is_ephemeral_and_paths_are_isolated() {
    let g = LocalGraffiti::in_memory();
    let s = g.login(&LoginRequest::handle("a")).unwrap();
    let o = g.put(ObjectBase::new(json!({}), &["c"]), &s).unwrap();
    let fresh = LocalGraffiti::in_memory();
    assert!(matches!(fresh.get(&o.url, &SchemaDoc::any(), None), Err(GraffitiError::NotFound)));

    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let one = LocalGraffiti::open_dir(d1.path()).unwrap();
    let two = LocalGraffiti::open_dir(d2.path()).unwrap();
    let s = one.login(&LoginRequest::handle("a")).unwrap();
    let o = one.put(ObjectBase::new(json!({}), &["c"]), &s).unwrap();
    assert!(matches!(two.get(&o.url, &SchemaDoc::any(), None), Err(GraffitiError::NotFound)));
    assert!(two.discover(&[ch("c")], &SchemaDoc::any(), None).unwrap().collect_all().unwrap().items.is_empty());
    // A session from one store means nothing to the other.
    assert!(two.put(ObjectBase::new(json!({}), &["c"]), &s).is_err());
}

#[test]
fn indexes_survive_random_operations() {
    let dir = tempfile::tempdir().unwrap();
    let g = LocalGraffiti::open_dir(dir.path()).unwrap();
    assert!(g.store().audit().is_empty());
    let sessions: Vec<_> = ["a", "b", "c"].iter().map(|h| g.login(&LoginRequest::handle(h)).unwrap()).collect();
    // Independent model: url -> (owner, channels, n).
    let mut model: BTreeMap<ObjectUrl, (usize, Vec<ChannelName>, u64)> = BTreeMap::new();
    let mut rng = StdRng::seed_from_u64(7);
    let pick_channels = |rng: &mut StdRng| {
        let mut cs: Vec<ChannelName> = (0..5).filter(|_| rng.gen_bool(0.4)).map(|i| ch(&format!("c{i}"))).collect();
        cs.dedup();
        cs
    };
    for step in 0..1000u64 {
        let who = rng.gen_range(0..3);
        let own: Vec<ObjectUrl> = model.iter().filter(|(_, v)| v.0 == who).map(|(u, _)| u.clone()).collect();
        match (rng.gen_range(0..4), own.is_empty()) {
            (0, _) | (_, true) => {
                let channels = pick_channels(&mut rng);
                let base = ObjectBase { channels: channels.clone(), ..ObjectBase::new(json!({"n": step}), &[]) };
                let o = g.put(base, &sessions[who]).unwrap();
                model.insert(o.url, (who, channels, step));
            }
            (1, false) => {
                let url = own[rng.gen_range(0..own.len())].clone();
                let channels = pick_channels(&mut rng);
                let base = ObjectBase { channels: channels.clone(), ..ObjectBase::new(json!({"n": step}), &[]) }.replacing(url.clone());
                g.put(base, &sessions[who]).unwrap();
                model.insert(url, (who, channels, step));
            }
            (2, false) => {
                let url = own[rng.gen_range(0..own.len())].clone();
                let patch = Patch::from_json(json!([{"op": "replace", "path": "/value/n", "value": step}])).unwrap();
                g.patch(&url, &patch, &sessions[who]).unwrap();
                model.get_mut(&url).unwrap().2 = step;
            }
            _ => {
                let url = own[rng.gen_range(0..own.len())].clone();
                g.delete(&url, &sessions[who]).unwrap();
                model.remove(&url);
            }
        }
        assert!(g.store().audit().is_empty(), "step {step}: {:?}", g.store().audit());
    }
    let dump: BTreeMap<ObjectUrl, (String, Vec<ChannelName>, u64)> = g
        .store()
        .dump()
        .into_iter()
        .map(|o| (o.url, (o.actor.to_string(), o.channels, o.value["n"].as_u64().unwrap())))
        .collect();
    let expected: BTreeMap<ObjectUrl, (String, Vec<ChannelName>, u64)> = model
        .into_iter()
        .map(|(u, (who, cs, n))| (u, (sessions[who].actor.to_string(), cs, n)))
        .collect();
    assert_eq!(dump, expected);

    drop(g);
    let reopened = LocalGraffiti::open_dir(dir.path()).unwrap();
    assert!(reopened.store().audit().is_empty());
    assert_eq!(reopened.store().len(), expected.len());
}

#[test]
fn audit_names_a_corrupted_channel() {
    let g = LocalGraffiti::in_memory();
    let s = g.login(&LoginRequest::handle("a")).unwrap();
    g.put(ObjectBase::new(json!({}), &["victim"]), &s).unwrap();
    g.store().corrupt_channel_index(&ch("victim"));
    let problems = g.store().audit();
    assert!(!problems.is_empty());
    assert!(problems.iter().any(|p| p.contains("victim")), "{problems:?}");
}

#[test]
fn discover_examines_only_indexed_candidates() {
    let g = LocalGraffiti::in_memory();
    let s = g.login(&LoginRequest::handle("a")).unwrap();
    for n in 0..2000 {
        let channel = if n % 100 == 0 { "rare" } else { "common" };
        g.put(ObjectBase::new(json!({"n": n}), &[channel]), &s).unwrap();
    }
    let before = g.store().examined();
    let found = g.discover(&[ch("rare"), ch("absent")], &SchemaDoc::any(), None).unwrap().collect_all().unwrap();
    assert_eq!(found.items.len(), 20);
    assert!(g.store().examined() - before <= 20 + 2, "examined {}", g.store().examined() - before);
}

#[test]
fn old_tombstones_are_purged() {
    let clock = ManualClock::new(1_000);
    let g = LocalGraffiti::open(LocalOptions { path: None, retention_ms: 500, clock: Arc::new(clock.clone()) }).unwrap();
    let s = g.login(&LoginRequest::handle("a")).unwrap();
    let o = g.put(ObjectBase::new(json!({}), &["c"]), &s).unwrap();
    g.delete(&o.url, &s).unwrap();
    clock.advance(501);
    // Any later write moves the log head past the deletion.
    g.put(ObjectBase::new(json!({}), &["c"]), &s).unwrap();
    assert!(g.store().expired_tombstones() > 0);
    g.store().prune().unwrap();
    assert_eq!(g.store().expired_tombstones(), 0);
}
