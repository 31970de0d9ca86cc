use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use graffiti_core::api::{DiscoverDelta, Graffiti, LoginRequest, Session};
use graffiti_core::clock::ManualClock;
use graffiti_core::commodity::{
    channel_file_path, validate_channel_file, ChannelFile, CsClient, CsOptions, FileEntry, FsProvider, Tracker,
    TrackerClient,
};
use graffiti_core::conformance::{CsDeployment, Deployment};
use graffiti_core::transport::{InProcessNetwork, Request, Transport};
use graffiti_core::{ChannelName, GraffitiError, ObjectBase, Patch, SchemaDoc};
use proptest::prelude::*;
use serde_json::json;

fn ch(name: &str) -> ChannelName {
    ChannelName::new(name).unwrap()
}

fn chans(names: &[&str]) -> Vec<ChannelName> {
    names.iter().map(|n| ch(n)).collect()
}

fn tracker_net(tracker: Tracker) -> (Arc<InProcessNetwork>, TrackerClient) {
    let net = InProcessNetwork::new();
    net.mount("tracker.test", Arc::new(tracker));
    let transport: Arc<dyn Transport> = net.clone();
    (net.clone(), TrackerClient::new(transport, "tracker.test"))
}

#[test]
fn tracker_records_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tracker.jsonl");
    let clock = ManualClock::default();
    {
        let t = Tracker::open(path.clone(), Arc::new(clock.clone())).unwrap();
        t.announce(ch("c"), "https://h.test/a/channels/1.json", 0).unwrap();
    }
    let t = Tracker::open(path, Arc::new(clock)).unwrap();
    assert_eq!(t.lookup(&chans(&["c"])).unwrap()[&ch("c")], ["https://h.test/a/channels/1.json"]);
}

#[test]
fn tracker_wire_protocol() {
    let clock = ManualClock::default();
    let (net, client) = tracker_net(Tracker::in_memory(Arc::new(clock)));
    client.announce(&ch("c1"), "https://h.test/a/1.json", 0).unwrap();
    client.announce(&ch("c1"), "https://h.test/b/1.json", 0).unwrap();
    let found = client.lookup(&chans(&["c1", "c2"])).unwrap();
    assert_eq!(found[&ch("c1")], ["https://h.test/a/1.json", "https://h.test/b/1.json"]);
    assert!(found[&ch("c2")].is_empty());

    let raw = net
        .send("tracker.test", Request::new("POST", "/announce").json(&json!({"channel": "c", "url": "h.test/x", "ttl": 0})))
        .unwrap();
    assert_eq!(raw.status, 400);
    let raw = net
        .send("tracker.test", Request::new("POST", "/announce").json(&json!({"channel": "c", "url": "https://h.test/x", "ttl": 0})))
        .unwrap();
    assert_eq!(raw.status, 204);
    assert!(matches!(client.lookup(&[]), Err(GraffitiError::InvalidRequest(_))));
    let many: Vec<ChannelName> = (0..65).map(|i| ch(&format!("c{i}"))).collect();
    assert!(matches!(client.lookup(&many), Err(GraffitiError::TooManyChannels(65))));

    net.set_down("tracker.test", true);
    assert!(matches!(client.lookup(&chans(&["c1"])), Err(GraffitiError::TrackerUnavailable(_))));
}

#[test]
fn tracker_ttl_and_refresh() {
    let clock = ManualClock::default();
    let tracker = Tracker::in_memory(Arc::new(clock.clone()));
    tracker.announce(ch("c"), "https://h.test/short.json", 60).unwrap();
    tracker.announce(ch("c"), "https://h.test/forever.json", 0).unwrap();
    clock.advance(30_000);
    tracker.announce(ch("c"), "https://h.test/short.json", 60).unwrap();
    assert_eq!(tracker.records().len(), 2);
    clock.advance(60_000);
    assert_eq!(tracker.lookup(&chans(&["c"])).unwrap()[&ch("c")].len(), 2);
    clock.advance(1_000);
    assert_eq!(tracker.lookup(&chans(&["c"])).unwrap()[&ch("c")], ["https://h.test/forever.json"]);
    clock.advance(365 * 24 * 3_600_000);
    assert_eq!(tracker.lookup(&chans(&["c"])).unwrap()[&ch("c")], ["https://h.test/forever.json"]);
}

fn file_at(d: &CsDeployment, session: &Session, channel: &str) -> ChannelFile {
    let handle = session.actor.as_str().trim_end_matches('/').rsplit('/').next().unwrap().to_string();
    let bytes = d.host().blob(&format!("{handle}/{}", channel_file_path(&ch(channel)))).expect("file exists");
    validate_channel_file(&bytes, &ch(channel)).unwrap()
}

#[test]
fn second_client_sees_public_posts() {
    let d = CsDeployment::default();
    let alice = d.login("alice").unwrap();
    let post = d.client().put(ObjectBase::new(json!({"t": 1}), &["c"]), &alice).unwrap();
    assert!(post.url.to_string().starts_with("graffiti:cs:https%3A%2F%2Fblobs%2Etest%2Falice%2Fobjects%2Ejson/"));

    let transport: Arc<dyn Transport> = d.network().clone();
    let provider = Arc::new(graffiti_core::commodity::HttpProvider::new(transport.clone(), CsDeployment::BLOBS));
    let other = CsClient::new(transport, provider, CsOptions::new(CsDeployment::TRACKER));
    let found = other.discover(&chans(&["c"]), &SchemaDoc::any(), None).unwrap().collect_all().unwrap();
    assert_eq!(found.items.len(), 1);
    assert_eq!(found.items[0].url, post.url);
    assert_eq!(other.get(&post.url, &SchemaDoc::any(), None).unwrap().value, post.value);
}

#[test]
fn allowed_lists_are_refused() {
    let d = CsDeployment::default();
    let alice = d.login("alice").unwrap();
    let bob = d.login("bob").unwrap();
    let e = d.client().put(ObjectBase::new(json!({}), &["c"]).with_allowed(vec![bob.actor.clone()]), &alice).unwrap_err();
    assert!(matches!(e, GraffitiError::UnsupportedAllowed));
    let post = d.client().put(ObjectBase::new(json!({}), &["c"]), &alice).unwrap();
    let sneak = Patch::from_json(json!([{"op": "add", "path": "/allowed", "value": []}])).unwrap();
    assert!(matches!(d.client().patch(&post.url, &sneak, &alice), Err(GraffitiError::UnsupportedAllowed)));
    assert!(d.host().paths().iter().all(|p| !p.contains("bob") || p.ends_with("/login.json")));
}

#[test]
fn crosspost_and_delete_rewrite_both_files() {
    let d = CsDeployment::default();
    let alice = d.login("alice").unwrap();
    let post = d.client().put(ObjectBase::new(json!({"t": 1}), &["c1", "c2"]), &alice).unwrap();
    for c in ["c1", "c2"] {
        let f = file_at(&d, &alice, c);
        assert_eq!(f.live().map(|o| &o.url).collect::<Vec<_>>(), [&post.url]);
    }
    let announced = d.tracker().records();
    assert_eq!(announced.iter().map(|r| r.channel.as_str()).collect::<BTreeSet<_>>(), BTreeSet::from(["c1", "c2"]));

    d.clock().unwrap().advance(5);
    d.client().delete(&post.url, &alice).unwrap();
    for c in ["c1", "c2"] {
        let f = file_at(&d, &alice, c);
        assert_eq!(f.live().count(), 0);
        let t: Vec<_> = f.tombstones().collect();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].url, post.url);
    }
}

#[test]
fn discover_costs_one_lookup_and_one_fetch_per_file() {
    let d = CsDeployment::default();
    let users: Vec<Session> = ["a", "b", "c"].iter().map(|h| d.login(h).unwrap()).collect();
    for (i, s) in users.iter().enumerate() {
        for n in 0..3 {
            let channels: &[&str] = if i == 0 { &["x", "y"] } else { &["x"] };
            d.client().put(ObjectBase::new(json!({"n": n}), channels), s).unwrap();
        }
    }
    d.network().clear_log();
    let out = d.client().discover(&chans(&["x", "y", "z"]), &SchemaDoc::any(), None).unwrap().collect_all().unwrap();
    assert_eq!(out.items.len(), 9);
    let log = d.network().requests();
    assert_eq!(log.iter().filter(|r| r.authority == CsDeployment::TRACKER).count(), 1);
    // a has files for x and y, b and c only for x.
    assert_eq!(log.iter().filter(|r| r.authority == CsDeployment::BLOBS).count(), 4);
}

#[test]
fn injected_files_become_warnings() {
    let d = CsDeployment::default();
    let alice = d.login("alice").unwrap();
    let mallory = d.login("mallory").unwrap();
    let post = d.client().put(ObjectBase::new(json!({"t": "real"}), &["c"]), &alice).unwrap();
    d.client().put(ObjectBase::new(json!({}), &["c"]), &mallory).unwrap();

    // Mallory rewrites her own file to claim alice's identity.
    let mut forged = file_at(&d, &alice, "c");
    if let FileEntry::Object(o) = &mut forged.objects[0] {
        o.value.insert("t".into(), json!("forged"));
    }
    d.host().tamper(&format!("mallory/{}", channel_file_path(&ch("c"))), forged.to_bytes());

    let out = d.client().discover(&chans(&["c"]), &SchemaDoc::any(), None).unwrap().collect_all().unwrap();
    assert_eq!(out.items.len(), 1);
    assert_eq!(out.items[0].url, post.url);
    assert_eq!(out.items[0].value["t"], "real");
    assert_eq!(out.warnings.len(), 1);
    assert!(out.warnings[0].source.as_deref().unwrap().contains("mallory"));
}

#[test]
fn unreachable_blob_host_is_a_warning() {
    let d = CsDeployment::default();
    let alice = d.login("alice").unwrap();
    d.client().put(ObjectBase::new(json!({}), &["c"]), &alice).unwrap();
    d.network().set_down(CsDeployment::BLOBS, true);
    let out = d.client().discover(&chans(&["c"]), &SchemaDoc::any(), None).unwrap().collect_all().unwrap();
    assert!(out.items.is_empty());
    assert_eq!(out.warnings.len(), 1);
    d.network().set_down(CsDeployment::TRACKER, true);
    assert!(matches!(d.client().discover(&chans(&["c"]), &SchemaDoc::any(), None), Err(GraffitiError::TrackerUnavailable(_))));
}

#[test]
fn filesystem_storage_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let net = InProcessNetwork::new();
    net.mount("tracker.test", Arc::new(Tracker::with_system_clock()));
    let transport: Arc<dyn Transport> = net.clone();
    let client = CsClient::new(transport, Arc::new(FsProvider::new(dir.path())), CsOptions::new("tracker.test"));
    let alice = client.login(&LoginRequest::handle("alice")).unwrap();
    assert!(alice.actor.as_str().starts_with("file://"));
    let post = client.put(ObjectBase::new(json!({"t": 1}), &["c"]), &alice).unwrap();
    let found = client.discover(&chans(&["c"]), &SchemaDoc::any(), None).unwrap().collect_all().unwrap();
    assert_eq!(found.items[0].url, post.url);
    assert!(dir.path().join("alice").join(channel_file_path(&ch("c"))).exists());
    client.delete(&post.url, &alice).unwrap();
    let next = client.continue_discover(&found.cursor.unwrap(), None).unwrap().collect_all().unwrap();
    assert!(matches!(&next.items[..], [DiscoverDelta::Tombstone(t)] if t.url == post.url));
}

#[derive(Debug, Clone)]
enum Op {
    Put(usize, Vec<usize>),
    Replace(usize, Vec<usize>),
    Delete(usize),
}

fn op() -> impl Strategy<Value = Op> {
    let channels = prop::collection::btree_set(0..4usize, 0..3).prop_map(|s| s.into_iter().collect::<Vec<_>>());
    prop_oneof![
        (0..2usize, channels.clone()).prop_map(|(a, c)| Op::Put(a, c)),
        (0..8usize, channels).prop_map(|(i, c)| Op::Replace(i, c)),
        (0..8usize).prop_map(Op::Delete),
    ]
}

const NAMES: [&str; 4] = ["w", "x", "y", "z"];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Each (actor, channel) file holds exactly that actor's live objects
    /// in that channel, checked against a model kept by the test.
    #[test]
    fn files_track_live_objects(ops in prop::collection::vec(op(), 1..25)) {
        let d = CsDeployment::default();
        let users = [d.login("alice").unwrap(), d.login("bob").unwrap()];
        let mut model: BTreeMap<String, (usize, BTreeSet<&str>)> = BTreeMap::new();
        let mut order: Vec<String> = Vec::new();
        for op in ops {
            match op {
                Op::Put(a, cs) => {
                    let names: Vec<&str> = cs.iter().map(|&i| NAMES[i]).collect();
                    let o = d.client().put(ObjectBase::new(json!({}), &names), &users[a]).unwrap();
                    model.insert(o.url.to_string(), (a, names.into_iter().collect()));
                    order.push(o.url.to_string());
                }
                Op::Replace(i, cs) => {
                    let Some(url) = order.get(i).filter(|u| model.contains_key(*u)) else { continue };
                    let owner = model[url].0;
                    let names: Vec<&str> = cs.iter().map(|&i| NAMES[i]).collect();
                    let base = ObjectBase::new(json!({"r": 1}), &names).replacing(url.parse().unwrap());
                    d.client().put(base, &users[owner]).unwrap();
                    model.insert(url.clone(), (owner, names.into_iter().collect()));
                }
                Op::Delete(i) => {
                    let Some(url) = order.get(i).filter(|u| model.contains_key(*u)).cloned() else { continue };
                    d.client().delete(&url.parse().unwrap(), &users[model[&url].0]).unwrap();
                    model.remove(&url);
                }
            }
        }
        for (a, user) in users.iter().enumerate() {
            for name in NAMES {
                let expected: BTreeSet<&String> = model.iter().filter(|(_, (o, cs))| *o == a && cs.contains(name)).map(|(u, _)| u).collect();
                let handle = if a == 0 { "alice" } else { "bob" };
                let actual: BTreeSet<String> = match d.host().blob(&format!("{handle}/{}", channel_file_path(&ch(name)))) {
                    Some(bytes) => validate_channel_file(&bytes, &ch(name)).unwrap().live().map(|o| o.url.to_string()).collect(),
                    None => BTreeSet::new(),
                };
                prop_assert_eq!(actual.iter().collect::<BTreeSet<_>>(), expected, "file {} of {}", name, user.actor);
            }
        }
    }
}

#[test]
fn sessions_outlive_the_client_but_need_the_secret() {
    let d = CsDeployment::default();
    let alice = d.login("alice").unwrap();
    let post = d.client().put(ObjectBase::new(json!({"n": 1}), &["c", "secret-club"]), &alice).unwrap();

    let wrong = d.client().login(&LoginRequest::handle("alice").with_secret("guess"));
    assert!(matches!(wrong, Err(GraffitiError::AuthFailed)), "{wrong:?}");

    // A second client, as in a later process, accepts the first one's token.
    let transport: Arc<dyn Transport> = d.network().clone();
    let provider = Arc::new(graffiti_core::commodity::HttpProvider::new(transport.clone(), CsDeployment::BLOBS));
    let later = CsClient::new(transport, provider, CsOptions::new(CsDeployment::TRACKER));
    let seen = later.get(&post.url, &SchemaDoc::any(), Some(&alice)).unwrap();
    assert_eq!(seen.channels, chans(&["c", "secret-club"]));
    later.delete(&post.url, &alice).unwrap();

    // A hand-made token with a guessed secret is not an owner view.
    let b64 = |s: &str| {
        use base64::Engine;
        base64::engine::general_purpose::URL_SAFE_NO_PAD.encode(s)
    };
    let forged = Session {
        credential: graffiti_core::Credential::new(format!("cs1.{}.{}.00", b64("alice"), b64("guess"))),
        ..alice.clone()
    };
    let post = d.client().put(ObjectBase::new(json!({"n": 2}), &["c"]), &alice).unwrap();
    assert!(matches!(later.get(&post.url, &SchemaDoc::any(), Some(&forged)), Err(GraffitiError::AuthFailed)));
}
