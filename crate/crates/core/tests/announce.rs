use graffiti_core::announce::{announce_discover, publish_announcements, AnnounceConfig};
use graffiti_core::api::{Graffiti, Session};
use graffiti_core::conformance::RemoteDeployment;
use graffiti_core::{ChannelName, ObjectBase, SchemaDoc};
use serde_json::json;
use sha2::{Digest, Sha256};

// s0..s2 are well-known, s3 and s4 are small servers.
fn topology() -> RemoteDeployment {
    RemoteDeployment::in_process(5, 60_000)
}

fn origin(i: usize) -> String {
    format!("s{i}.test")
}

fn chans(names: &[&str]) -> Vec<ChannelName> {
    names.iter().map(|n| ChannelName::new(*n).unwrap()).collect()
}

fn sessions(d: &RemoteDeployment, handle: &str, servers: &[usize]) -> Vec<Session> {
    servers.iter().map(|&i| d.login_on(i, handle).unwrap()).collect()
}

fn config(servers: &[usize]) -> AnnounceConfig {
    AnnounceConfig::new(servers.iter().map(|&i| origin(i))).unwrap()
}

fn sha256_hex(s: &str) -> String {
    Sha256::digest(s.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Poster on s3 posts in `channels` and announces on `well_known`.
fn poster(d: &RemoteDeployment, well_known: &[usize], channels: &[&str], cfg: &AnnounceConfig) -> graffiti_core::GraffitiObject {
    let home = d.login_on(3, "poster").unwrap();
    let post = d.client().put(ObjectBase::new(json!({"text": "hi"}), channels), &home).unwrap();
    let report = publish_announcements(d.client(), &sessions(d, "poster", well_known), &origin(3), &chans(channels), cfg).unwrap();
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    assert_eq!(report.urls.len(), well_known.len());
    post
}

#[test]
fn plain_announcement_lives_in_the_channel() {
    let d = topology();
    let cfg = config(&[0, 1]);
    poster(&d, &[0, 1], &["topic/cats"], &cfg);
    for w in [0, 1] {
        let found = d
            .client()
            .discover_on(&[origin(w)], &chans(&["topic/cats"]), &SchemaDoc::any(), None)
            .unwrap()
            .collect_all()
            .unwrap();
        assert_eq!(found.items.len(), 1);
        assert_eq!(found.items[0].value["activity"], "AnnounceServer");
        assert_eq!(found.items[0].value["target"], "s3.test");
        assert_eq!(found.items[0].channels, chans(&["topic/cats"]));
    }
}

#[test]
fn hashed_announcement_channel_and_no_plaintext_on_the_wire() {
    let d = topology();
    let cfg = config(&[0, 1]).hashed(true);
    let net = d.network().unwrap().clone();
    net.clear_log();
    let post = poster(&d, &[0, 1], &["topic/cats"], &cfg);
    let hashed = sha256_hex("topic/cats");
    let found = d
        .client()
        .discover_on(&[origin(0)], &chans(&[&hashed]), &SchemaDoc::any(), None)
        .unwrap()
        .collect_all()
        .unwrap();
    assert_eq!(found.items.len(), 1);

    let out = announce_discover(d.client(), &chans(&["topic/cats"]), &SchemaDoc::any(), &cfg, None).unwrap();
    let items = out.objects.collect_all().unwrap().items;
    assert_eq!(items.iter().map(|o| &o.url).collect::<Vec<_>>(), [&post.url]);
    for r in net.requests() {
        if r.authority == "s0.test" || r.authority == "s1.test" {
            assert!(!r.body_text().contains("topic/cats"), "plaintext channel sent to {}: {}", r.authority, r.body_text());
        }
    }
}

#[test]
fn republishing_widens_one_announcement() {
    let d = topology();
    let cfg = config(&[0]);
    let s = sessions(&d, "poster", &[0]);
    let first = publish_announcements(d.client(), &s, &origin(3), &chans(&["a"]), &cfg).unwrap();
    let second = publish_announcements(d.client(), &s, &origin(3), &chans(&["a", "b"]), &cfg).unwrap();
    let third = publish_announcements(d.client(), &s, &origin(3), &chans(&["c"]), &cfg).unwrap();
    assert_eq!(first.urls, second.urls);
    assert_eq!(first.urls, third.urls);
    let mine = d
        .client()
        .discover_on(&[origin(0)], &chans(&["a", "b", "c"]), &SchemaDoc::any(), Some(&s[0]))
        .unwrap()
        .collect_all()
        .unwrap()
        .items;
    assert_eq!(mine.len(), 1);
    for c in chans(&["a", "b", "c"]) {
        assert!(mine[0].channels.contains(&c));
    }
}

#[test]
fn overlap_is_enough() {
    let d = topology();
    let post = poster(&d, &[0, 1], &["c"], &config(&[0, 1]));
    let out = announce_discover(d.client(), &chans(&["c"]), &SchemaDoc::any(), &config(&[1, 2]), None).unwrap();
    assert_eq!(out.report.queried, ["s3.test"]);
    let items = out.objects.collect_all().unwrap().items;
    assert_eq!(items.len(), 1);
    assert_eq!(items[0].url, post.url);
}

#[test]
fn disjoint_well_known_sets_miss() {
    let d = topology();
    poster(&d, &[0], &["c"], &config(&[0]));
    let out = announce_discover(d.client(), &chans(&["c"]), &SchemaDoc::any(), &config(&[1, 2]), None).unwrap();
    assert!(out.report.queried.is_empty());
    assert!(out.objects.collect_all().unwrap().items.is_empty());
}

#[test]
fn no_announcements_means_only_phase_one_requests() {
    let d = topology();
    poster(&d, &[0, 1], &["other"], &config(&[0, 1]));
    let net = d.network().unwrap();
    net.clear_log();
    let out = announce_discover(d.client(), &chans(&["c"]), &SchemaDoc::any(), &config(&[0, 1, 2]), None).unwrap();
    out.objects.collect_all().unwrap();
    assert_eq!(net.requests().len(), 3);
    assert!(net.requests().iter().all(|r| r.authority != "s3.test"));
}

#[test]
fn unreachable_well_known_is_reported_not_fatal() {
    let d = topology();
    let post = poster(&d, &[0, 1], &["c"], &config(&[0, 1]));
    let net = d.network().unwrap();
    net.set_down("s0.test", true);
    let out = announce_discover(d.client(), &chans(&["c"]), &SchemaDoc::any(), &config(&[0, 1]), None).unwrap();
    assert_eq!(out.report.unreachable, ["s0.test"]);
    let got = out.objects.collect_all().unwrap();
    assert_eq!(got.items[0].url, post.url);
    assert_eq!(got.warnings.len(), 1);

    net.set_down("s1.test", true);
    assert!(announce_discover(d.client(), &chans(&["c"]), &SchemaDoc::any(), &config(&[0, 1]), None).is_err());
}

#[test]
fn schema_hints_prefilter_targets() {
    let d = topology();
    let likes = SchemaDoc::new(json!({"properties": {"value": {"required": ["like"]}}}));
    let notes = SchemaDoc::new(json!({"properties": {"value": {"required": ["note"]}}}));
    let mut cfg = config(&[0]);
    cfg.schemas = Some(vec![likes.clone()]);
    poster(&d, &[0], &["c"], &cfg);

    let plain = config(&[0]);
    let hit = announce_discover(d.client(), &chans(&["c"]), &likes, &plain, None).unwrap();
    assert_eq!(hit.report.queried, ["s3.test"]);
    let miss = announce_discover(d.client(), &chans(&["c"]), &notes, &plain, None).unwrap();
    assert!(miss.report.queried.is_empty());
    assert!(miss.report.skipped.contains_key("s3.test"));
    let any = announce_discover(d.client(), &chans(&["c"]), &SchemaDoc::any(), &plain, None).unwrap();
    assert_eq!(any.report.queried, ["s3.test"]);
}

#[test]
fn allowed_announcements_reach_only_listed_readers() {
    let d = topology();
    let reader_home = d.login_on(0, "reader").unwrap();
    let mut cfg = config(&[0]);
    cfg.allowed = Some(vec![reader_home.actor.clone()]);
    let home = d.login_on(3, "poster").unwrap();
    d.client()
        .put(ObjectBase::new(json!({}), &["club"]).with_allowed(vec![]), &home)
        .unwrap();
    publish_announcements(d.client(), &sessions(&d, "poster", &[0]), &origin(3), &chans(&["club"]), &cfg).unwrap();
    let reader = announce_discover(d.client(), &chans(&["club"]), &SchemaDoc::any(), &config(&[0]), Some(&reader_home)).unwrap();
    assert_eq!(reader.report.queried, ["s3.test"]);
    let stranger = announce_discover(d.client(), &chans(&["club"]), &SchemaDoc::any(), &config(&[0]), None).unwrap();
    assert!(stranger.report.queried.is_empty());
}
