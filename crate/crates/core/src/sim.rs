//! Executable social scenarios built only from the public API plus
//! client-side folds over reified activities, and a randomized check of the
//! announce protocol.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::Serialize;
use serde_json::{json, Value};

use crate::announce::{announce_discover, publish_announcements, AnnounceConfig};
use crate::api::{Graffiti, Session};
use crate::conformance::{Deployment, RemoteDeployment};
use crate::error::Result;
use crate::model::{ActorUri, ChannelName, GraffitiObject, ObjectBase, ObjectUrl};
use crate::schema::SchemaDoc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ReplyDesign {
    XReply,
    InstagramReply,
    QuoteTweet,
    NotApplicable,
}

impl ReplyDesign {
    pub fn label(self) -> &'static str {
        match self {
            ReplyDesign::XReply => "X Reply",
            ReplyDesign::InstagramReply => "Instagram Reply",
            ReplyDesign::QuoteTweet => "Quote Tweet",
            ReplyDesign::NotApplicable => "N/A",
        }
    }
}

impl fmt::Display for ReplyDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Which reply design a reply follows, judged by whether it was posted to
/// the post's channel and to the replier's own channel.
pub fn classify_reply(reply: &GraffitiObject, post_url: &ObjectUrl, replier: &ActorUri) -> ReplyDesign {
    let in_post = reply.channels.contains(&ChannelName::from(post_url));
    let in_replier = reply.channels.contains(&ChannelName::from(replier));
    match (in_post, in_replier) {
        (true, true) => ReplyDesign::XReply,
        (true, false) => ReplyDesign::InstagramReply,
        (false, true) => ReplyDesign::QuoteTweet,
        (false, false) => ReplyDesign::NotApplicable,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub description: String,
    pub expected: Value,
    pub actual: Value,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub assertions: Vec<Assertion>,
}

impl ScenarioReport {
    pub fn new(name: impl Into<String>) -> Self {
        ScenarioReport { name: name.into(), assertions: Vec::new() }
    }

    pub fn check(&mut self, description: impl Into<String>, expected: impl Serialize, actual: impl Serialize) -> bool {
        let expected = serde_json::to_value(expected).expect("serializable");
        let actual = serde_json::to_value(actual).expect("serializable");
        let pass = expected == actual;
        self.assertions.push(Assertion { description: description.into(), expected, actual, pass });
        pass
    }

    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Assertion> {
        self.assertions.iter().filter(|a| !a.pass)
    }

    /// Descriptions with their pass flags, for comparing runs across
    /// implementations.
    pub fn outcome(&self) -> Vec<(String, bool)> {
        self.assertions.iter().map(|a| (a.description.clone(), a.pass)).collect()
    }
}

impl fmt::Display for ScenarioReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ok = self.assertions.iter().filter(|a| a.pass).count();
        writeln!(f, "{}: {ok}/{} assertions pass", self.name, self.assertions.len())?;
        for a in self.failures() {
            writeln!(f, "  FAIL {}: expected {}, got {}", a.description, a.expected, a.actual)?;
        }
        Ok(())
    }
}

fn chan(name: impl Into<String>) -> ChannelName {
    ChannelName::new(name).expect("nonempty channel")
}

fn base(value: Value, channels: Vec<ChannelName>) -> ObjectBase {
    let Value::Object(value) = value else { unreachable!("object literal") };
    ObjectBase { value, channels, allowed: None, url: None }
}

fn discover_all(g: &dyn Graffiti, channels: &[ChannelName], schema: &SchemaDoc, session: Option<&Session>) -> Result<Vec<GraffitiObject>> {
    Ok(g.discover(channels, schema, session)?.collect_all()?.items)
}

fn reply_schema(post: &ObjectUrl) -> SchemaDoc {
    SchemaDoc::new(json!({
        "properties": {"value": {
            "required": ["inReplyTo"],
            "properties": {"inReplyTo": {"const": post.to_string()}}
        }}
    }))
}

/// Posts a post and one reply of each design, then checks that each reply
/// classifies as intended and shows up in exactly the views its design
/// implies.
pub fn run_reply_matrix_scenario(d: &dyn Deployment) -> Result<ScenarioReport> {
    let g = d.graffiti();
    let poster = d.login("poster")?;
    let replier = d.login("replier")?;
    let post = g.put(base(json!({"content": "a post"}), vec![chan("timeline")]), &poster)?;
    let thread = ChannelName::from(&post.url);
    let profile = ChannelName::from(&replier.actor);

    let placements = [
        (ReplyDesign::XReply, vec![thread.clone(), profile.clone()]),
        (ReplyDesign::InstagramReply, vec![thread.clone()]),
        (ReplyDesign::QuoteTweet, vec![profile.clone()]),
        (ReplyDesign::NotApplicable, vec![chan("elsewhere")]),
    ];
    let mut replies = BTreeMap::new();
    for (design, channels) in placements {
        let value = json!({"content": design.label(), "inReplyTo": post.url.to_string()});
        let reply = g.put(base(value, channels), &replier)?;
        replies.insert(design, reply.url);
    }

    let schema = reply_schema(&post.url);
    let in_thread: BTreeSet<ObjectUrl> = discover_all(&*g, &[thread], &schema, None)?.into_iter().map(|o| o.url).collect();
    let in_profile: BTreeSet<ObjectUrl> = discover_all(&*g, &[profile], &schema, None)?.into_iter().map(|o| o.url).collect();

    let mut report = ScenarioReport::new("reply-matrix");
    for (design, url) in &replies {
        let stored = g.get(url, &SchemaDoc::any(), Some(&replier))?;
        report.check(
            format!("{design} classifies as {design}"),
            design.label(),
            classify_reply(&stored, &post.url, &replier.actor).label(),
        );
        let (thread_expected, profile_expected) = match design {
            ReplyDesign::XReply => (true, true),
            ReplyDesign::InstagramReply => (true, false),
            ReplyDesign::QuoteTweet => (false, true),
            ReplyDesign::NotApplicable => (false, false),
        };
        report.check(format!("{design} visible in post thread"), thread_expected, in_thread.contains(url));
        report.check(format!("{design} visible in replier profile"), profile_expected, in_profile.contains(url));
    }
    Ok(report)
}

pub const REMOVE_ACTIVITY: &str = "Remove";
pub const ADD_ACTIVITY: &str = "Add";

fn activity_of(o: &GraffitiObject) -> Option<&str> {
    o.value.get("activity").and_then(Value::as_str)
}

/// Content left after applying `Remove` activities authored by one of
/// `moderators`. Activities themselves are not content.
pub fn moderate(objects: &[GraffitiObject], moderators: &BTreeSet<ActorUri>) -> Vec<GraffitiObject> {
    let removed: BTreeSet<&str> = objects
        .iter()
        .filter(|o| activity_of(o) == Some(REMOVE_ACTIVITY) && moderators.contains(&o.actor))
        .filter_map(|o| o.value.get("target").and_then(Value::as_str))
        .collect();
    objects
        .iter()
        .filter(|o| activity_of(o).is_none() && !removed.contains(o.url.to_string().as_str()))
        .cloned()
        .collect()
}

/// Content with every `Remove` activity ignored.
pub fn unmoderated(objects: &[GraffitiObject]) -> Vec<GraffitiObject> {
    moderate(objects, &BTreeSet::new())
}

fn urls(objects: &[GraffitiObject]) -> BTreeSet<String> {
    objects.iter().map(|o| o.url.to_string()).collect()
}

/// A flyer, a reply crossposted to the flyer and the replier's own channel,
/// and organizer moderation that hides the reply from the venue's view only.
pub fn run_crosspost_scenario(d: &dyn Deployment) -> Result<ScenarioReport> {
    let g = d.graffiti();
    let organizer = d.login("organizer")?;
    let replier = d.login("replier")?;
    let troll = d.login("troll")?;
    let organizers: BTreeSet<ActorUri> = [organizer.actor.clone()].into();

    let venue = chan("The Glue Factory");
    let start_time = "2024-03-01T20:00:00Z";
    let flyer = g.put(
        base(json!({"content": "Live music", "startTime": start_time}), vec![venue.clone()]),
        &organizer,
    )?;
    let thread = ChannelName::from(&flyer.url);
    let followers = ChannelName::from(&replier.actor);
    let reply = g.put(
        base(
            json!({"content": "See you there", "inReplyTo": flyer.url.to_string()}),
            vec![thread.clone(), followers.clone()],
        ),
        &replier,
    )?;
    let reply_url: BTreeSet<String> = [reply.url.to_string()].into();
    let remove = |target: &ObjectUrl| base(json!({"activity": REMOVE_ACTIVITY, "target": target.to_string()}), vec![thread.clone()]);
    let thread_view = || discover_all(&*g, std::slice::from_ref(&thread), &SchemaDoc::any(), None);

    let mut report = ScenarioReport::new("crosspost");
    let before = thread_view()?;
    report.check("reply shown by venue view before moderation", true, urls(&moderate(&before, &organizers)).is_superset(&reply_url));

    g.put(remove(&reply.url), &troll)?;
    let trolled = thread_view()?;
    report.check("Remove by a non-organizer is ignored by venue view", true, urls(&moderate(&trolled, &organizers)).is_superset(&reply_url));

    g.put(remove(&reply.url), &organizer)?;
    let after = thread_view()?;
    report.check("organizer Remove hides reply in venue view", false, urls(&moderate(&after, &organizers)).is_superset(&reply_url));
    report.check("reply still visible in microblog view", true, urls(&unmoderated(&after)).is_superset(&reply_url));

    let feed = discover_all(&*g, &[followers], &SchemaDoc::any(), None)?;
    report.check("reply in replier's followers' feed", true, urls(&unmoderated(&feed)).is_superset(&reply_url));

    let calendar = SchemaDoc::new(json!({
        "properties": {"value": {"required": ["startTime"], "properties": {"startTime": {"type": "string"}}}}
    }));
    let events = discover_all(&*g, &[venue], &calendar, None)?;
    let times: Vec<&Value> = events.iter().filter(|o| o.url == flyer.url).filter_map(|o| o.value.get("startTime")).collect();
    report.check("flyer startTime readable for calendar", json!([start_time]), times);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MembershipView {
    pub viewer: ActorUri,
    pub members: BTreeSet<ActorUri>,
}

/// Fold order for a single actor's activities: the `published` timestamp the
/// client wrote, then revision, then url.
fn fold_key(o: &GraffitiObject) -> (u64, u64, String) {
    let published = o.value.get("published").and_then(Value::as_u64).unwrap_or(0);
    (published, o.revision, o.url.to_string())
}

/// Group membership as seen by `viewer`: only the viewer's own `Add` and
/// `Remove` activities count. The viewer is always a member.
pub fn resolve_membership(activities: &[GraffitiObject], viewer: &ActorUri) -> MembershipView {
    let mut own: Vec<&GraffitiObject> = activities.iter().filter(|o| &o.actor == viewer).collect();
    own.sort_by_key(|o| fold_key(o));
    let mut members = BTreeSet::new();
    for o in own {
        let Some(member) = o.value.get("object").and_then(Value::as_str).and_then(|s| ActorUri::new(s).ok()) else {
            continue;
        };
        match activity_of(o) {
            Some(ADD_ACTIVITY) => {
                members.insert(member);
            }
            Some(REMOVE_ACTIVITY) => {
                members.remove(&member);
            }
            _ => {}
        }
    }
    members.insert(viewer.clone());
    MembershipView { viewer: viewer.clone(), members }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupName {
    /// The viewer's own latest name for the group.
    pub name: Option<String>,
    /// Latest names given by other actors, offered as suggestions.
    pub suggestions: BTreeMap<ActorUri, String>,
}

/// Names objects are `{name, describes: <group>}`.
pub fn resolve_group_name(objects: &[GraffitiObject], group: &str, viewer: &ActorUri) -> GroupName {
    let mut latest: BTreeMap<&ActorUri, &GraffitiObject> = BTreeMap::new();
    for o in objects {
        if o.value.get("describes").and_then(Value::as_str) != Some(group) || !o.value.get("name").is_some_and(Value::is_string) {
            continue;
        }
        match latest.get(&o.actor) {
            Some(prev) if fold_key(prev) >= fold_key(o) => {}
            _ => {
                latest.insert(&o.actor, o);
            }
        }
    }
    let name_of = |o: &GraffitiObject| o.value["name"].as_str().unwrap_or_default().to_string();
    GroupName {
        name: latest.get(viewer).map(|o| name_of(o)),
        suggestions: latest.iter().filter(|(a, _)| **a != viewer).map(|(a, o)| ((*a).clone(), name_of(o))).collect(),
    }
}

/// Group chat where each member administers their own view of the group.
pub fn run_membership_scenario(d: &dyn Deployment) -> Result<ScenarioReport> {
    let g = d.graffiti();
    let viewer = d.login("viewer")?;
    let alice = d.login("alice")?;
    let eve = d.login("eve")?;
    let group = chan("group:parallax-demo");
    let mut clock = 0u64;
    let mut act = |s: &Session, activity: &str, member: &ActorUri| {
        clock += 1;
        let value = json!({"activity": activity, "object": member.as_str(), "target": group.as_str(), "published": clock});
        g.put(base(value, vec![group.clone()]), s)
    };
    act(&viewer, ADD_ACTIVITY, &alice.actor)?;
    act(&viewer, ADD_ACTIVITY, &eve.actor)?;
    act(&viewer, REMOVE_ACTIVITY, &eve.actor)?;
    act(&alice, ADD_ACTIVITY, &eve.actor)?;
    let name = |s: &Session, n: &str, at: u64| {
        g.put(base(json!({"name": n, "describes": group.as_str(), "published": at}), vec![group.clone()]), s)
    };
    name(&viewer, "Band practice", 10)?;
    name(&alice, "Jam session", 11)?;

    let activities = discover_all(&*g, std::slice::from_ref(&group), &SchemaDoc::any(), None)?;
    let mut report = ScenarioReport::new("membership");
    let mine = resolve_membership(&activities, &viewer.actor);
    report.check("viewer's own fold", [&viewer.actor, &alice.actor].into_iter().collect::<BTreeSet<_>>(), &mine.members);
    report.check("Alice's Add(Eve) does not change viewer's view", false, mine.members.contains(&eve.actor));
    let alices = resolve_membership(&activities, &alice.actor);
    report.check("Alice's view holds her own additions", true, alices.members.contains(&eve.actor));
    let named = resolve_group_name(&activities, group.as_str(), &viewer.actor);
    report.check("viewer's group name", Some("Band practice"), named.name.as_deref());
    report.check("Alice's name offered as suggestion", Some("Jam session"), named.suggestions.get(&alice.actor).map(String::as_str));

    if d.supports_allowed() {
        let members: Vec<ActorUri> = mine.members.iter().cloned().collect();
        let message = g.put(base(json!({"content": "members only"}), vec![group.clone()]).with_allowed(members), &viewer)?;
        report.check("member reads restricted message", true, g.get(&message.url, &SchemaDoc::any(), Some(&alice)).is_ok());
        report.check("removed actor cannot read it", false, g.get(&message.url, &SchemaDoc::any(), Some(&eve)).is_ok());
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnnounceParams {
    pub small_servers: usize,
    pub well_known: usize,
    pub actors: usize,
    pub objects: usize,
    /// Chance that a given poster shares a well-known server with the reader.
    pub overlap_probability: f64,
}

impl AnnounceParams {
    /// Random parameters in the ranges used for aggregate runs.
    pub fn sample(rng: &mut impl Rng) -> Self {
        let actors = rng.gen_range(10..=50);
        AnnounceParams {
            small_servers: rng.gen_range(5..=20),
            well_known: rng.gen_range(2..=5),
            actors,
            objects: actors * 2,
            overlap_probability: 0.7,
        }
    }
}

fn random_subset(rng: &mut StdRng, pool: &[usize]) -> Vec<usize> {
    let n = rng.gen_range(1..=pool.len());
    let mut picked: Vec<usize> = pool.choose_multiple(rng, n).copied().collect();
    picked.sort_unstable();
    picked
}

/// Random federation: posters on small servers announce on their own
/// well-known sets, one reader looks every channel up through theirs. The
/// oracle is the set of objects whose server was announced for that channel
/// on some reader well-known server, which must include every object of an
/// overlapping poster.
pub fn run_announce_completeness_check(seed: u64, params: AnnounceParams) -> Result<ScenarioReport> {
    let mut rng = StdRng::seed_from_u64(seed);
    let w = params.well_known.max(2);
    let d = RemoteDeployment::in_process(w + params.small_servers.max(1), 3_600_000);
    let net = d.network().expect("in-process network").clone();
    net.set_capture(false);
    let origin = |i: usize| d.servers()[i].origin().to_string();
    let well_known: Vec<usize> = (0..w).collect();
    let small: Vec<usize> = (w..d.servers().len()).collect();
    let channels: Vec<ChannelName> = (0..5).map(|i| chan(format!("topic/{i}"))).collect();

    let reader_set = {
        let n = rng.gen_range(1..w);
        let mut r: Vec<usize> = well_known.choose_multiple(&mut rng, n).copied().collect();
        r.sort_unstable();
        r
    };
    let outside: Vec<usize> = well_known.iter().copied().filter(|i| !reader_set.contains(i)).collect();

    struct Poster {
        home: usize,
        well_known: Vec<usize>,
        overlaps: bool,
        session: Session,
        used: BTreeSet<ChannelName>,
    }
    let mut posters = Vec::new();
    for a in 0..params.actors.max(1) {
        let home = *small.choose(&mut rng).expect("small servers");
        let overlaps = rng.gen_bool(params.overlap_probability.clamp(0.0, 1.0));
        let set = if overlaps {
            let mut s = random_subset(&mut rng, &outside);
            s.retain(|_| rng.gen_bool(0.5));
            s.push(*reader_set.choose(&mut rng).expect("nonempty reader set"));
            s.sort_unstable();
            s.dedup();
            s
        } else {
            random_subset(&mut rng, &outside)
        };
        let session = d.login_on(home, &format!("actor{a}"))?;
        posters.push(Poster { home, well_known: set, overlaps, session, used: BTreeSet::new() });
    }

    let content = SchemaDoc::new(json!({"properties": {"value": {"required": ["text"]}}}));
    let mut placed: Vec<(ObjectUrl, usize, ChannelName)> = Vec::new();
    for n in 0..params.objects {
        let p = rng.gen_range(0..posters.len());
        let c = channels.choose(&mut rng).expect("channels").clone();
        let object = d.client().put(base(json!({"text": format!("object {n}")}), vec![c.clone()]), &posters[p].session)?;
        posters[p].used.insert(c.clone());
        placed.push((object.url, p, c));
    }

    // Where each (server, channel) pair is announced.
    let mut announced: BTreeMap<(usize, ChannelName), BTreeSet<usize>> = BTreeMap::new();
    for (a, p) in posters.iter().enumerate() {
        if p.used.is_empty() {
            continue;
        }
        let sessions = p.well_known.iter().map(|&i| d.login_on(i, &format!("actor{a}"))).collect::<Result<Vec<_>>>()?;
        let cfg = AnnounceConfig::new(p.well_known.iter().map(|&i| origin(i)))?;
        let used: Vec<ChannelName> = p.used.iter().cloned().collect();
        let published = publish_announcements(d.client(), &sessions, &origin(p.home), &used, &cfg)?;
        if !published.failures.is_empty() {
            return Err(published.failures.into_iter().next().expect("nonempty").1);
        }
        for c in &used {
            announced.entry((p.home, c.clone())).or_default().extend(p.well_known.iter().copied());
        }
    }

    let all_servers: Vec<String> = (0..d.servers().len()).map(origin).collect();
    let reader_cfg = AnnounceConfig::new(reader_set.iter().map(|&i| origin(i)))?;
    let mut report = ScenarioReport::new(format!("announce-completeness seed={seed}"));
    let (mut missed, mut extra, mut overlap_missed, mut expected_misses, mut stray_requests) = (0, 0, 0, 0, 0);
    let mut bookkeeping_mismatch = 0;
    for c in &channels {
        let truth: BTreeSet<ObjectUrl> = placed.iter().filter(|(_, _, pc)| pc == c).map(|(u, _, _)| u.clone()).collect();
        let everywhere: BTreeSet<ObjectUrl> = d
            .client()
            .discover_on(&all_servers, std::slice::from_ref(c), &content, None)?
            .collect_all()?
            .items
            .into_iter()
            .map(|o| o.url)
            .collect();
        if everywhere != truth {
            bookkeeping_mismatch += 1;
        }
        let reachable: BTreeSet<usize> = small
            .iter()
            .copied()
            .filter(|s| announced.get(&(*s, c.clone())).is_some_and(|on| on.iter().any(|i| reader_set.contains(i))))
            .collect();
        let expected: BTreeSet<ObjectUrl> = placed
            .iter()
            .filter(|(_, p, pc)| pc == c && reachable.contains(&posters[*p].home))
            .map(|(u, _, _)| u.clone())
            .collect();
        expected_misses += truth.len() - expected.len();

        net.clear_log();
        net.set_capture(true);
        let found = announce_discover(d.client(), std::slice::from_ref(c), &content, &reader_cfg, None)?;
        let found: BTreeSet<ObjectUrl> = found.objects.collect_all()?.items.into_iter().map(|o| o.url).collect();
        net.set_capture(false);
        let allowed_authorities: BTreeSet<String> = reader_set.iter().chain(&reachable).map(|&i| origin(i)).collect();
        stray_requests += net.requests().iter().filter(|r| !allowed_authorities.contains(&r.authority)).count();

        missed += expected.difference(&found).count();
        extra += found.difference(&expected).count();
        overlap_missed += placed
            .iter()
            .filter(|(u, p, pc)| pc == c && posters[*p].overlaps && !found.contains(u))
            .count();
    }
    report.check("all-servers oracle matches placed objects", 0, bookkeeping_mismatch);
    report.check("objects of overlapping posters missed", 0, overlap_missed);
    report.check("announced objects missed", 0, missed);
    report.check("objects found without an announcement", 0, extra);
    report.check("requests to unannounced servers", 0, stray_requests);
    if params.overlap_probability <= 0.0 {
        report.check("no overlap leaves every object unreachable", placed.len(), expected_misses);
    }
    Ok(report)
}
