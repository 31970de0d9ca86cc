use std::collections::{BTreeMap, BTreeSet};

use graffiti_core::conformance::{CsDeployment, Deployment, LocalDeployment, RemoteDeployment};
use graffiti_core::sim::{
    classify_reply, moderate, resolve_group_name, resolve_membership, run_announce_completeness_check,
    run_crosspost_scenario, run_membership_scenario, run_reply_matrix_scenario, AnnounceParams, ReplyDesign,
};
use graffiti_core::{ActorUri, ChannelName, GraffitiObject, ObjectUrl, Scheme};
use proptest::prelude::*;
use serde_json::{json, Value};

fn actor(name: &str) -> ActorUri {
    ActorUri::new(format!("https://people.test/{name}")).unwrap()
}

fn object(n: u64, who: &ActorUri, value: Value, channels: &[&str]) -> GraffitiObject {
    let Value::Object(value) = value else { panic!() };
    GraffitiObject {
        value,
        url: ObjectUrl::new(Scheme::Local, format!("{n:04}")).unwrap(),
        actor: who.clone(),
        channels: channels.iter().map(|c| ChannelName::new(*c).unwrap()).collect(),
        allowed: None,
        revision: 0,
    }
}

fn deployments() -> Vec<(&'static str, Box<dyn Deployment>)> {
    vec![
        ("local", Box::new(LocalDeployment::default())),
        ("remote", Box::new(RemoteDeployment::in_process(2, 60_000))),
        ("cs", Box::new(CsDeployment::default())),
    ]
}

#[test]
fn classification_table() {
    let post = ObjectUrl::new(Scheme::Local, "post").unwrap();
    let replier = actor("r");
    let post_c = post.to_string();
    let me = replier.to_string();
    let cases = [
        (vec![post_c.as_str(), me.as_str()], ReplyDesign::XReply),
        (vec![post_c.as_str()], ReplyDesign::InstagramReply),
        (vec![me.as_str()], ReplyDesign::QuoteTweet),
        (vec!["other"], ReplyDesign::NotApplicable),
        (vec![], ReplyDesign::NotApplicable),
    ];
    for (channels, expected) in cases {
        let reply = object(1, &replier, json!({"inReplyTo": post_c}), &channels);
        assert_eq!(classify_reply(&reply, &post, &replier), expected, "{channels:?}");
    }
    assert_eq!(ReplyDesign::XReply.label(), "X Reply");
    assert_eq!(ReplyDesign::NotApplicable.label(), "N/A");
}

#[test]
fn reply_matrix_identical_on_every_implementation() {
    let mut outcomes = Vec::new();
    for (name, d) in deployments() {
        let report = run_reply_matrix_scenario(&*d).unwrap();
        assert!(report.passed(), "{name}: {report}");
        assert_eq!(report.assertions.len(), 12);
        outcomes.push(report.outcome());
    }
    assert!(outcomes.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn crosspost_on_every_implementation() {
    for (name, d) in deployments() {
        let report = run_crosspost_scenario(&*d).unwrap();
        assert!(report.passed(), "{name}: {report}");
        assert_eq!(report.assertions.len(), 6);
    }
}

#[test]
fn membership_on_every_implementation() {
    for (name, d) in deployments() {
        let report = run_membership_scenario(&*d).unwrap();
        assert!(report.passed(), "{name}: {report}");
        let expected = if d.supports_allowed() { 7 } else { 5 };
        assert_eq!(report.assertions.len(), expected, "{name}");
    }
}

#[test]
fn membership_examples() {
    let (me, alice, eve) = (actor("me"), actor("alice"), actor("eve"));
    let act = |n, who: &ActorUri, kind: &str, member: &ActorUri| {
        object(n, who, json!({"activity": kind, "object": member.as_str(), "published": n}), &["g"])
    };
    let log = vec![
        act(1, &me, "Add", &alice),
        act(2, &me, "Add", &eve),
        act(3, &me, "Remove", &eve),
        act(4, &alice, "Add", &eve),
    ];
    let view = resolve_membership(&log, &me);
    assert_eq!(view.members, [me.clone(), alice.clone()].into());
    assert_eq!(resolve_membership(&log, &alice).members, [alice.clone(), eve.clone()].into());
    // The viewer stays a member even after removing themself.
    assert!(resolve_membership(&[act(1, &me, "Remove", &me)], &me).members.contains(&me));

    let names = vec![
        object(10, &me, json!({"name": "old", "describes": "g", "published": 1}), &["g"]),
        object(11, &me, json!({"name": "new", "describes": "g", "published": 2}), &["g"]),
        object(12, &alice, json!({"name": "hers", "describes": "g", "published": 3}), &["g"]),
        object(13, &eve, json!({"name": "other group", "describes": "h", "published": 4}), &["g"]),
    ];
    let named = resolve_group_name(&names, "g", &me);
    assert_eq!(named.name.as_deref(), Some("new"));
    assert_eq!(named.suggestions, BTreeMap::from([(alice, "hers".to_string())]));
}

fn membership_log() -> impl Strategy<Value = Vec<(usize, bool, usize, u64)>> {
    // (author, is_add, member, published)
    prop::collection::vec((0..3usize, any::<bool>(), 0..6usize, 0..1_000u64), 1..50)
}

proptest! {
    #[test]
    fn membership_matches_last_writer_oracle(log in membership_log(), seed in any::<u64>()) {
        let actors: Vec<ActorUri> = (0..6).map(|i| actor(&format!("a{i}"))).collect();
        let mut objects: Vec<GraffitiObject> = log.iter().enumerate().map(|(n, (who, add, member, at))| {
            let kind = if *add { "Add" } else { "Remove" };
            object(n as u64, &actors[*who], json!({"activity": kind, "object": actors[*member].as_str(), "published": at}), &["g"])
        }).collect();
        for viewer in &actors[..3] {
            // Oracle: for each member, the viewer's own activity that sorts last wins.
            let mut last: BTreeMap<&ActorUri, (u64, String, bool)> = BTreeMap::new();
            for o in objects.iter().filter(|o| &o.actor == viewer) {
                let member = actors.iter().find(|a| a.as_str() == o.value["object"]).unwrap();
                let key = (o.value["published"].as_u64().unwrap(), o.url.to_string(), o.value["activity"] == "Add");
                if last.get(member).is_none_or(|k| (k.0, &k.1) < (key.0, &key.1)) {
                    last.insert(member, key);
                }
            }
            let mut expected: BTreeSet<ActorUri> = last.into_iter().filter(|(_, k)| k.2).map(|(m, _)| m.clone()).collect();
            expected.insert(viewer.clone());
            prop_assert_eq!(&resolve_membership(&objects, viewer).members, &expected);
        }
        let before: Vec<_> = actors.iter().map(|a| resolve_membership(&objects, a)).collect();
        let mut rng = <rand::rngs::StdRng as rand::SeedableRng>::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(&mut objects[..], &mut rng);
        let after: Vec<_> = actors.iter().map(|a| resolve_membership(&objects, a)).collect();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn moderation_matches_brute_force(
        removes in prop::collection::vec((0..4usize, 0..8usize), 0..20),
        moderator_mask in 0u8..16,
        seed in any::<u64>(),
    ) {
        let actors: Vec<ActorUri> = (0..4).map(|i| actor(&format!("m{i}"))).collect();
        let moderators: BTreeSet<ActorUri> = (0..4).filter(|i| moderator_mask & (1 << i) != 0).map(|i| actors[i].clone()).collect();
        let mut objects: Vec<GraffitiObject> = (0..8).map(|n| object(n, &actors[n as usize % 4], json!({"content": n}), &["t"])).collect();
        for (k, (who, target)) in removes.iter().enumerate() {
            let url = objects[*target].url.to_string();
            objects.push(object(100 + k as u64, &actors[*who], json!({"activity": "Remove", "target": url}), &["t"]));
        }
        let mut rng = <rand::rngs::StdRng as rand::SeedableRng>::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(&mut objects[..], &mut rng);

        let shown: BTreeSet<u64> = moderate(&objects, &moderators).iter().map(|o| o.value["content"].as_u64().unwrap()).collect();
        let expected: BTreeSet<u64> = (0..8u64)
            .filter(|n| !removes.iter().any(|(who, target)| *target as u64 == *n && moderators.contains(&actors[*who])))
            .collect();
        prop_assert_eq!(shown, expected);
    }
}

#[test]
fn announce_small_topology_misses_nothing() {
    let params = AnnounceParams { small_servers: 5, well_known: 3, actors: 10, objects: 30, overlap_probability: 1.0 };
    let report = run_announce_completeness_check(1, params).unwrap();
    assert!(report.passed(), "{report}");
}

#[test]
fn announce_without_overlap_finds_nothing() {
    let params = AnnounceParams { small_servers: 5, well_known: 3, actors: 10, objects: 30, overlap_probability: 0.0 };
    let report = run_announce_completeness_check(2, params).unwrap();
    assert!(report.passed(), "{report}");
    assert!(report.assertions.iter().any(|a| a.description.starts_with("no overlap")));
}

#[test]
fn announce_random_seeds() {
    for seed in 10..15 {
        let mut rng = <rand::rngs::StdRng as rand::SeedableRng>::seed_from_u64(seed);
        let params = AnnounceParams::sample(&mut rng);
        let report = run_announce_completeness_check(seed, params).unwrap();
        assert!(report.passed(), "{params:?}\n{report}");
    }
}
