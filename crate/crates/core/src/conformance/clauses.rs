use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

use super::{Clause, Deployment, Needs};
use crate::api::{DiscoverCursor, DiscoverDelta, Graffiti, Session, MAX_QUERY_CHANNELS};
use crate::error::{GraffitiError, Result};
use crate::model::{ChannelName, GraffitiObject, ObjectBase, ObjectUrl, Patch};
use crate::schema::SchemaDoc;

type Check = std::result::Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn call<T>(r: Result<T>, what: &str) -> std::result::Result<T, String> {
    r.map_err(|e| format!("{what}: unexpected error {e}"))
}

fn expect_code<T: std::fmt::Debug>(r: Result<T>, code: &str, what: &str) -> Check {
    match r {
        Err(e) if e.code() == code => Ok(()),
        Err(e) => Err(format!("{what}: expected {code}, got {} ({e})", e.code())),
        Ok(v) => Err(format!("{what}: expected {code}, got success {v:?}")),
    }
}

fn chans(names: &[&str]) -> Vec<ChannelName> {
    names.iter().map(|n| ChannelName::new(*n).expect("valid channel")).collect()
}

fn names(o: &GraffitiObject) -> Vec<&str> {
    o.channels.iter().map(|c| c.as_str()).collect()
}

fn any() -> SchemaDoc {
    SchemaDoc::any()
}

fn patch(ops: Value) -> Patch {
    Patch::from_json(ops).expect("valid fixture patch")
}

fn login(d: &dyn Deployment, handle: &str) -> std::result::Result<Session, String> {
    call(d.login(handle), &format!("login {handle}"))
}

fn post(d: &dyn Deployment, s: &Session, value: Value, channels: &[&str]) -> std::result::Result<GraffitiObject, String> {
    call(d.graffiti().put(ObjectBase::new(value, channels), s), "put")
}

fn discover(
    g: &dyn Graffiti,
    channels: &[&str],
    schema: &SchemaDoc,
    s: Option<&Session>,
) -> std::result::Result<(Vec<GraffitiObject>, DiscoverCursor), String> {
    let out = call(call(g.discover(&chans(channels), schema, s), "discover")?.collect_all(), "discover stream")?;
    let cursor = out.cursor.ok_or("discover stream ended without a cursor")?;
    Ok((out.items, cursor))
}

fn resume(
    g: &dyn Graffiti,
    cursor: &DiscoverCursor,
    s: Option<&Session>,
) -> std::result::Result<(Vec<DiscoverDelta>, DiscoverCursor), String> {
    let out = call(call(g.continue_discover(cursor, s), "continue")?.collect_all(), "continue stream")?;
    let cursor = out.cursor.ok_or("continuation ended without a cursor")?;
    Ok((out.items, cursor))
}

fn urls(objects: &[GraffitiObject]) -> Vec<&ObjectUrl> {
    objects.iter().map(|o| &o.url).collect()
}

fn tombstones(deltas: &[DiscoverDelta]) -> Vec<&ObjectUrl> {
    deltas
        .iter()
        .filter_map(|d| match d {
            DiscoverDelta::Tombstone(t) => Some(&t.url),
            _ => None,
        })
        .collect()
}

fn delta_objects(deltas: &[DiscoverDelta]) -> Vec<&GraffitiObject> {
    deltas
        .iter()
        .filter_map(|d| match d {
            DiscoverDelta::Object(o) => Some(o),
            _ => None,
        })
        .collect()
}

macro_rules! clause {
    ($id:literal, $desc:literal, $needs:expr, $f:expr) => {
        Clause { id: $id, description: $desc, needs: $needs, run: $f }
    };
}

pub fn clauses() -> Vec<Clause> {
    use Needs::*;
    vec![
        clause!("login.independent_sessions", "two logins coexist and act as different actors", Nothing, login_independent),
        clause!("logout.revokes", "logout then put fails with SessionRevoked", Nothing, logout_revokes),
        clause!("logout.idempotent", "second logout is a no-op", Nothing, logout_idempotent),
        clause!("logout.other_session_survives", "logging out one session leaves a second one valid", Nothing, logout_other_survives),
        clause!("logout.revoked_reads_fail", "revoked session fails get and discover", Nothing, logout_revoked_reads),
        clause!("put.create_envelope", "create assigns url, actor and revision 0", Nothing, put_create_envelope),
        clause!("put.like_activity", "like activity with a url channel is stored as given", Nothing, put_like),
        clause!("put.replace_bumps_revision", "replacement gets a strictly larger revision", Nothing, put_replace_bumps),
        clause!("put.replace_wholesale", "replacement overwrites value and channels entirely", Nothing, put_replace_wholesale),
        clause!("put.replace_non_owner", "replace by a non-owner is NotAuthorized", Nothing, put_replace_non_owner),
        clause!("put.replace_missing", "replace of a deleted url is NotFound", Nothing, put_replace_missing),
        clause!("put.duplicate_channels", "duplicate channels are ShapeInvalid", Nothing, put_duplicate_channels),
        clause!("put.revision_monotone", "revision increases across 100 random mutations", Nothing, put_revision_monotone),
        clause!("get.anonymous_masked", "anonymous get of a public object masks channels to []", Nothing, get_anonymous_masked),
        clause!("get.owner_unmasked", "owner get returns every channel", Nothing, get_owner_unmasked),
        clause!("get.deleted_like_missing", "deleted and never-existing urls give identical NotFound", Nothing, get_deleted_like_missing),
        clause!("get.schema_rejects", "schema mismatch on get is NotFound", Nothing, get_schema_rejects),
        clause!("get.schema_accepts", "matching schema on get returns the object", Nothing, get_schema_accepts),
        clause!("get.unsupported_keyword", "unsupported schema keyword is a schema error", Nothing, get_unsupported_keyword),
        clause!("get.forbidden_like_missing", "object hidden by allowed list is NotFound like a missing one", Allowed, get_forbidden_like_missing),
        clause!("get.allowed_masked", "allowed viewer sees allowed list of just themselves", Allowed, get_allowed_masked),
        clause!("get.allowed_anonymous", "restricted object is NotFound without a session", Allowed, get_allowed_anonymous),
        clause!("patch.crosspost", "patch adds a second channel", Nothing, patch_crosspost),
        clause!("patch.bumps_revision", "patch strictly increases revision", Nothing, patch_bumps_revision),
        clause!("patch.non_owner", "patch by a non-owner is NotAuthorized and changes nothing", Nothing, patch_non_owner),
        clause!("patch.atomic", "a failing op leaves object and revision unchanged", Nothing, patch_atomic),
        clause!("patch.out_of_bounds", "patching url, actor or revision is rejected", Nothing, patch_out_of_bounds),
        clause!("patch.missing", "patch of a deleted url is NotFound", Nothing, patch_missing),
        clause!("delete.then_get", "delete then get is NotFound", Nothing, delete_then_get),
        clause!("delete.non_owner", "delete by a non-owner is NotAuthorized and the object stays", Nothing, delete_non_owner),
        clause!("delete.twice", "second delete is NotFound", Nothing, delete_twice),
        clause!("delete.hidden_non_owner", "delete of an object the caller cannot see is NotFound", Allowed, delete_hidden),
        clause!("discover.dm_query", "direct-message query yields only the matching DM", Nothing, discover_dm_query),
        clause!("discover.unknown_channel", "never-used channel gives an empty stream and a cursor", Nothing, discover_unknown_channel),
        clause!("discover.masks_by_query", "non-owner sees only the queried channels", Nothing, discover_masks_by_query),
        clause!("discover.owner_unmasked", "owner sees all channels in discover", Nothing, discover_owner_unmasked),
        clause!("discover.once_per_object", "object in several queried channels is yielded once", Nothing, discover_once),
        clause!("discover.schema_filters", "discover drops objects not matching the schema", Nothing, discover_schema_filters),
        clause!("discover.actor_filter", "actor const in schema restricts by creator", Nothing, discover_actor_filter),
        clause!("discover.channel_cap", "64 channels accepted, 65 rejected", Nothing, discover_channel_cap),
        clause!("discover.needs_channel", "discover with no channels is rejected", Nothing, discover_needs_channel),
        clause!("discover.no_hidden_channel_probe", "schema cannot match on channels hidden from the viewer", Nothing, discover_no_probe),
        clause!("discover.orphans_invisible", "objects without channels are never discovered", Nothing, discover_orphans_invisible),
        clause!("discover.allowed_visibility", "restricted objects reach only owner and allowed actors", Allowed, discover_allowed_visibility),
        clause!("continue.no_changes", "no changes gives an empty delta and a fresh cursor", Nothing, continue_no_changes),
        clause!("continue.new_object", "a new matching object arrives as a delta", Nothing, continue_new_object),
        clause!("continue.modified_object", "an edit arrives with its new revision", Nothing, continue_modified),
        clause!("continue.delete_tombstone_once", "delete yields exactly one tombstone", Nothing, continue_delete_once),
        clause!("continue.channel_removed", "removing the matched channel yields a tombstone", Nothing, continue_channel_removed),
        clause!("continue.schema_unmatched", "edit that stops matching the schema yields a tombstone", Nothing, continue_schema_unmatched),
        clause!("continue.transient_silent", "object created and deleted between polls is not reported", Nothing, continue_transient),
        clause!("continue.tombstone_content_free", "tombstones carry only url and time", Nothing, continue_tombstone_fields),
        clause!("continue.allowed_revoked", "dropping a reader from allowed yields a tombstone for them", Allowed, continue_allowed_revoked),
        clause!("continue.recursive", "chained continuations each report only newer changes", Nothing, continue_recursive),
        clause!("cursor.text_roundtrip", "cursor survives serialization to text", Nothing, cursor_roundtrip),
        clause!("cursor.expiry", "cursor expires exactly after the retention window", Clock, cursor_expiry),
        clause!("snapshot.plus_delta", "discover then deltas equals a fresh discover", Nothing, snapshot_plus_delta),
        clause!("orphans.own_channelless", "recoverOrphans yields own channel-less objects", Nothing, orphans_own),
        clause!("orphans.skip_channelled", "objects with a channel are not orphans", Nothing, orphans_skip_channelled),
        clause!("orphans.skip_other_actor", "other actors' orphans are not returned", Nothing, orphans_other_actor),
        clause!("orphans.schema", "recoverOrphans applies the schema", Nothing, orphans_schema),
        clause!("stats.counts", "channelStats counts own objects with latest time", Nothing, stats_counts),
        clause!("stats.empty", "actor without objects has no stats", Nothing, stats_empty),
        clause!("stats.per_actor", "other actors' posts do not count", Nothing, stats_per_actor),
        clause!("stats.after_delete", "deleted objects stop counting", Nothing, stats_after_delete),
    ]
}

fn login_independent(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let b = login(d, "bob")?;
    ensure!(a.actor != b.actor, "alice and bob share actor {}", a.actor);
    let oa = post(d, &a, json!({"content": "from alice"}), &["c"])?;
    let ob = post(d, &b, json!({"content": "from bob"}), &["c"])?;
    ensure!(oa.actor == a.actor && ob.actor == b.actor, "objects attributed to the wrong actor");
    Ok(())
}

fn logout_revokes(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    call(d.graffiti().logout(&a), "logout")?;
    expect_code(d.graffiti().put(ObjectBase::new(json!({}), &["c"]), &a), "session_revoked", "put after logout")
}

fn logout_idempotent(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    call(d.graffiti().logout(&a), "first logout")?;
    call(d.graffiti().logout(&a), "second logout")
}

fn logout_other_survives(d: &dyn Deployment) -> Check {
    let s1 = login(d, "alice")?;
    let s2 = login(d, "alice")?;
    ensure!(s1.actor == s2.actor, "same handle produced different actors");
    call(d.graffiti().logout(&s1), "logout")?;
    post(d, &s2, json!({"content": "still here"}), &["c"])?;
    Ok(())
}

fn logout_revoked_reads(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = post(d, &a, json!({"content": "x"}), &["c"])?;
    let g = d.graffiti();
    g.logout(&a).map_err(|e| e.to_string())?;
    expect_code(g.get(&o.url, &any(), Some(&a)), "session_revoked", "get")?;
    let r = g.discover(&chans(&["c"]), &any(), Some(&a)).and_then(|s| s.collect_all().map(|c| c.items));
    expect_code(r, "session_revoked", "discover")
}

fn put_create_envelope(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = post(d, &a, json!({"content": "hello", "n": 1}), &["x", "y"])?;
    ensure!(o.revision == 0, "revision {}", o.revision);
    ensure!(o.actor == a.actor, "actor {}", o.actor);
    ensure!(o.url.scheme() == d.scheme(), "url {} has the wrong scheme", o.url);
    ensure!(Value::Object(o.value.clone()) == json!({"content": "hello", "n": 1}), "value changed");
    ensure!(names(&o) == ["x", "y"], "channels {:?}", names(&o));
    let again = call(d.graffiti().get(&o.url, &any(), Some(&a)), "get")?;
    ensure!(again == o, "stored object differs from returned one");
    Ok(())
}

fn put_like(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let target = "graffiti:remote:pod.graffiti.garden/123";
    let o = post(d, &a, json!({"activity": "Like", "target": target}), &[target])?;
    ensure!(o.revision == 0 && names(&o) == [target], "unexpected like {o:?}");
    Ok(())
}

fn put_replace_bumps(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = post(d, &a, json!({"content": "v1"}), &["c"])?;
    let r = call(
        d.graffiti().put(ObjectBase::new(json!({"content": "v2"}), &["c"]).replacing(o.url.clone()), &a),
        "replace",
    )?;
    ensure!(r.revision > o.revision, "revision {} not above {}", r.revision, o.revision);
    ensure!(r.url == o.url && r.actor == o.actor, "url or actor changed");
    Ok(())
}

fn put_replace_wholesale(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = post(d, &a, json!({"content": "v1", "extra": true}), &["c", "d"])?;
    call(
        d.graffiti().put(ObjectBase::new(json!({"content": "v2"}), &["e"]).replacing(o.url.clone()), &a),
        "replace",
    )?;
    let got = call(d.graffiti().get(&o.url, &any(), Some(&a)), "get")?;
    ensure!(Value::Object(got.value.clone()) == json!({"content": "v2"}), "value {:?}", got.value);
    ensure!(names(&got) == ["e"], "channels {:?}", names(&got));
    Ok(())
}

fn put_replace_non_owner(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let b = login(d, "bob")?;
    let o = post(d, &a, json!({"content": "mine"}), &["c"])?;
    let r = d.graffiti().put(ObjectBase::new(json!({"content": "yours"}), &["c"]).replacing(o.url.clone()), &b);
    expect_code(r, "not_authorized", "replace by bob")?;
    let got = call(d.graffiti().get(&o.url, &any(), None), "get")?;
    ensure!(got.revision == o.revision && got.value == o.value, "object changed");
    Ok(())
}

fn put_replace_missing(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = post(d, &a, json!({"content": "x"}), &["c"])?;
    call(d.graffiti().delete(&o.url, &a), "delete")?;
    let r = d.graffiti().put(ObjectBase::new(json!({"content": "y"}), &["c"]).replacing(o.url.clone()), &a);
    expect_code(r, "not_found", "replace after delete")
}

fn put_duplicate_channels(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let r = d.graffiti().put(ObjectBase::new(json!({}), &["a", "a"]), &a);
    expect_code(r, "shape_invalid", "duplicate channels")
}

fn put_revision_monotone(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let g = d.graffiti();
    let mut rng = StdRng::seed_from_u64(7);
    let mut o = post(d, &a, json!({"n": 0}), &["c"])?;
    for i in 1..=100 {
        let next = if rng.gen_bool(0.5) {
            call(g.put(ObjectBase::new(json!({"n": i}), &["c"]).replacing(o.url.clone()), &a), "replace")?
        } else {
            call(g.patch(&o.url, &patch(json!([{"op": "add", "path": "/value/n", "value": i}])), &a), "patch")?
        };
        ensure!(next.revision > o.revision, "mutation {i}: revision {} after {}", next.revision, o.revision);
        o = next;
    }
    Ok(())
}

fn get_anonymous_masked(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = post(d, &a, json!({"content": "hi"}), &["a", "b"])?;
    let got = call(d.graffiti().get(&o.url, &any(), None), "anonymous get")?;
    ensure!(got.channels.is_empty(), "channels leaked: {:?}", names(&got));
    ensure!(got.value == o.value && got.actor == o.actor && got.revision == o.revision, "envelope altered");
    let b = login(d, "bob")?;
    let got = call(d.graffiti().get(&o.url, &any(), Some(&b)), "bob get")?;
    ensure!(got.channels.is_empty(), "channels leaked to bob: {:?}", names(&got));
    Ok(())
}

fn get_owner_unmasked(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = post(d, &a, json!({"content": "hi"}), &["a", "b"])?;
    let got = call(d.graffiti().get(&o.url, &any(), Some(&a)), "get")?;
    ensure!(names(&got) == ["a", "b"], "channels {:?}", names(&got));
    Ok(())
}

fn get_deleted_like_missing(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let g = d.graffiti();
    let deleted = post(d, &a, json!({"content": "bye"}), &["c"])?;
    let never = post(d, &a, json!({"content": "tmp"}), &["c"])?;
    call(g.delete(&deleted.url, &a), "delete")?;
    call(g.delete(&never.url, &a), "delete")?;
    let e1 = g.get(&deleted.url, &any(), Some(&a)).err();
    let e2 = g.get(&never.url, &any(), None).err();
    ensure!(e1 == Some(GraffitiError::NotFound), "deleted: {e1:?}");
    ensure!(e1 == e2, "errors differ: {e1:?} vs {e2:?}");
    Ok(())
}

fn get_schema_rejects(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = post(d, &a, json!({"title": "no content"}), &["c"])?;
    let schema = SchemaDoc::new(json!({"value": {"required": ["content"]}}));
    expect_code(d.graffiti().get(&o.url, &schema, Some(&a)), "not_found", "schema mismatch")
}

fn get_schema_accepts(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = post(d, &a, json!({"content": "hello"}), &["c"])?;
    let schema = SchemaDoc::new(json!({
        "value": {"required": ["content"], "properties": {"content": {"type": "string"}}}
    }));
    call(d.graffiti().get(&o.url, &schema, None), "get with schema")?;
    Ok(())
}

fn get_unsupported_keyword(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = post(d, &a, json!({"content": "hello"}), &["c"])?;
    let schema = SchemaDoc::new(json!({"value": {"if": {"required": ["x"]}}}));
    expect_code(d.graffiti().get(&o.url, &schema, None), "schema_invalid", "if keyword")
}

fn get_forbidden_like_missing(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let b = login(d, "bob")?;
    let c = login(d, "carol")?;
    let g = d.graffiti();
    let secret = call(
        g.put(ObjectBase::new(json!({"content": "psst"}), &["c"]).with_allowed(vec![c.actor.clone()]), &a),
        "put",
    )?;
    let gone = post(d, &a, json!({"content": "gone"}), &["c"])?;
    call(g.delete(&gone.url, &a), "delete")?;
    let forbidden = g.get(&secret.url, &any(), Some(&b)).err();
    let missing = g.get(&gone.url, &any(), Some(&b)).err();
    ensure!(forbidden == Some(GraffitiError::NotFound), "forbidden: {forbidden:?}");
    ensure!(forbidden == missing, "forbidden {forbidden:?} vs missing {missing:?}");
    Ok(())
}

fn get_allowed_masked(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let b = login(d, "bob")?;
    let c = login(d, "carol")?;
    let o = call(
        d.graffiti().put(
            ObjectBase::new(json!({"content": "hi"}), &["c"]).with_allowed(vec![b.actor.clone(), c.actor.clone()]),
            &a,
        ),
        "put",
    )?;
    let got = call(d.graffiti().get(&o.url, &any(), Some(&b)), "bob get")?;
    ensure!(got.allowed == Some(vec![b.actor.clone()]), "allowed {:?}", got.allowed);
    let own = call(d.graffiti().get(&o.url, &any(), Some(&a)), "owner get")?;
    ensure!(own.allowed == o.allowed, "owner sees {:?}", own.allowed);
    Ok(())
}

fn get_allowed_anonymous(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = call(
        d.graffiti().put(ObjectBase::new(json!({"content": "hi"}), &["c"]).with_allowed(vec![]), &a),
        "put",
    )?;
    expect_code(d.graffiti().get(&o.url, &any(), None), "not_found", "anonymous get")
}

fn patch_crosspost(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = post(d, &a, json!({"content": "omg"}), &["The Glue Factory"])?;
    let p = call(
        d.graffiti().patch(&o.url, &patch(json!([{"op": "add", "path": "/channels/-", "value": "Glitter"}])), &a),
        "patch",
    )?;
    ensure!(names(&p) == ["The Glue Factory", "Glitter"], "channels {:?}", names(&p));
    let (found, _) = discover(d.graffiti().as_ref(), &["Glitter"], &any(), None)?;
    ensure!(urls(&found) == [&o.url], "crossposted reply not discoverable in Glitter");
    Ok(())
}

fn patch_bumps_revision(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = post(d, &a, json!({"content": "hello"}), &["c"])?;
    let p = call(
        d.graffiti().patch(&o.url, &patch(json!([{"op": "replace", "path": "/value/content", "value": "hi"}])), &a),
        "patch",
    )?;
    ensure!(p.revision > o.revision, "revision {}", p.revision);
    ensure!(Value::Object(p.value) == json!({"content": "hi"}), "value not patched");
    Ok(())
}

fn patch_non_owner(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let b = login(d, "bob")?;
    let o = post(d, &a, json!({"content": "mine"}), &["c"])?;
    let r = d.graffiti().patch(&o.url, &patch(json!([{"op": "remove", "path": "/value/content"}])), &b);
    expect_code(r, "not_authorized", "patch by bob")?;
    let got = call(d.graffiti().get(&o.url, &any(), Some(&a)), "get")?;
    ensure!(got == o, "object changed");
    Ok(())
}

fn patch_atomic(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = post(d, &a, json!({"content": "keep", "n": 1}), &["c"])?;
    let r = d.graffiti().patch(
        &o.url,
        &patch(json!([
            {"op": "replace", "path": "/value/content", "value": "lost"},
            {"op": "remove", "path": "/value/missing"}
        ])),
        &a,
    );
    expect_code(r, "patch_failed", "failing patch")?;
    let got = call(d.graffiti().get(&o.url, &any(), Some(&a)), "get")?;
    ensure!(got == o, "object changed: {got:?}");
    Ok(())
}

fn patch_out_of_bounds(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = post(d, &a, json!({"content": "x"}), &["c"])?;
    for path in ["/url", "/actor", "/revision"] {
        let r = d.graffiti().patch(&o.url, &patch(json!([{"op": "replace", "path": path, "value": "z"}])), &a);
        expect_code(r, "patch_failed", path)?;
    }
    Ok(())
}

fn patch_missing(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = post(d, &a, json!({"content": "x"}), &["c"])?;
    call(d.graffiti().delete(&o.url, &a), "delete")?;
    let r = d.graffiti().patch(&o.url, &patch(json!([{"op": "add", "path": "/value/y", "value": 1}])), &a);
    expect_code(r, "not_found", "patch after delete")
}

fn delete_then_get(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = post(d, &a, json!({"content": "x"}), &["c"])?;
    call(d.graffiti().delete(&o.url, &a), "delete")?;
    expect_code(d.graffiti().get(&o.url, &any(), Some(&a)), "not_found", "get after delete")?;
    let (found, _) = discover(d.graffiti().as_ref(), &["c"], &any(), Some(&a))?;
    ensure!(found.is_empty(), "deleted object still discovered");
    Ok(())
}

fn delete_non_owner(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let b = login(d, "bob")?;
    let o = post(d, &a, json!({"content": "x"}), &["c"])?;
    expect_code(d.graffiti().delete(&o.url, &b), "not_authorized", "delete by bob")?;
    call(d.graffiti().get(&o.url, &any(), None), "get after refused delete")?;
    Ok(())
}

fn delete_twice(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = post(d, &a, json!({"content": "x"}), &["c"])?;
    call(d.graffiti().delete(&o.url, &a), "delete")?;
    expect_code(d.graffiti().delete(&o.url, &a), "not_found", "second delete")
}

fn delete_hidden(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let b = login(d, "bob")?;
    let o = call(
        d.graffiti().put(ObjectBase::new(json!({"content": "x"}), &["c"]).with_allowed(vec![]), &a),
        "put",
    )?;
    expect_code(d.graffiti().delete(&o.url, &b), "not_found", "delete of hidden object")?;
    call(d.graffiti().get(&o.url, &any(), Some(&a)), "owner get")?;
    Ok(())
}

fn discover_dm_query(d: &dyn Deployment) -> Check {
    let alice = login(d, "alice")?;
    let me = login(d, "me")?;
    let eve = login(d, "eve")?;
    let inbox = me.actor.as_str();
    let dm = post(d, &alice, json!({"content": "hi you", "published": 1728165600000u64, "to": inbox}), &[inbox])?;
    post(d, &alice, json!({"content": "hello world", "published": 1728165600001u64}), &[inbox, "public"])?;
    post(d, &eve, json!({"content": "fake", "published": 1728165600002u64, "to": inbox}), &[inbox])?;
    let schema = SchemaDoc::new(json!({
        "value": {
            "required": ["content", "published", "to"],
            "properties": {
                "content": {"type": "string"},
                "published": {"type": "number"},
                "to": {"const": inbox}
            }
        },
        "actor": {"const": alice.actor.as_str()}
    }));
    let (found, _) = discover(d.graffiti().as_ref(), &[inbox], &schema, Some(&me))?;
    ensure!(urls(&found) == [&dm.url], "expected only the DM, got {:?}", urls(&found));
    Ok(())
}

fn discover_unknown_channel(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    post(d, &a, json!({"content": "x"}), &["used"])?;
    let (found, cursor) = discover(d.graffiti().as_ref(), &["never-used-channel"], &any(), None)?;
    ensure!(found.is_empty(), "unexpected objects");
    ensure!(!cursor.token().is_empty(), "empty cursor");
    Ok(())
}

fn discover_masks_by_query(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let b = login(d, "bob")?;
    let o = post(d, &a, json!({"content": "x"}), &["a", "b"])?;
    let g = d.graffiti();
    for (q, want) in [(vec!["a"], vec!["a"]), (vec!["b", "c"], vec!["b"]), (vec!["a", "b", "c"], vec!["a", "b"])] {
        let (found, _) = discover(g.as_ref(), &q, &any(), Some(&b))?;
        ensure!(found.len() == 1 && found[0].url == o.url, "query {q:?}: {:?}", urls(&found));
        ensure!(names(&found[0]) == want, "query {q:?}: channels {:?}", names(&found[0]));
    }
    Ok(())
}

fn discover_owner_unmasked(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    post(d, &a, json!({"content": "x"}), &["a", "b"])?;
    let (found, _) = discover(d.graffiti().as_ref(), &["a"], &any(), Some(&a))?;
    ensure!(found.len() == 1 && names(&found[0]) == ["a", "b"], "owner view {:?}", found);
    Ok(())
}

fn discover_once(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    post(d, &a, json!({"content": "x"}), &["a", "b"])?;
    let (found, _) = discover(d.graffiti().as_ref(), &["a", "b", "a"], &any(), None)?;
    ensure!(found.len() == 1, "yielded {} times", found.len());
    Ok(())
}

fn discover_schema_filters(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let keep = post(d, &a, json!({"content": "x", "published": 100}), &["c"])?;
    post(d, &a, json!({"content": "y", "published": 99}), &["c"])?;
    post(d, &a, json!({"published": 200}), &["c"])?;
    let schema = SchemaDoc::new(json!({
        "value": {"required": ["content"], "properties": {"published": {"type": "number", "minimum": 100}}}
    }));
    let (found, _) = discover(d.graffiti().as_ref(), &["c"], &schema, None)?;
    ensure!(urls(&found) == [&keep.url], "got {:?}", urls(&found));
    Ok(())
}

fn discover_actor_filter(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let b = login(d, "bob")?;
    let mine = post(d, &a, json!({"content": "a"}), &["c"])?;
    post(d, &b, json!({"content": "b"}), &["c"])?;
    let schema = SchemaDoc::new(json!({"actor": {"const": a.actor.as_str()}}));
    let (found, _) = discover(d.graffiti().as_ref(), &["c"], &schema, None)?;
    ensure!(urls(&found) == [&mine.url], "got {:?}", urls(&found));
    Ok(())
}

fn discover_channel_cap(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = post(d, &a, json!({"content": "x"}), &["ch63"])?;
    let many: Vec<String> = (0..=MAX_QUERY_CHANNELS).map(|i| format!("ch{i}")).collect();
    let refs: Vec<&str> = many.iter().map(|s| s.as_str()).collect();
    let (found, _) = discover(d.graffiti().as_ref(), &refs[..MAX_QUERY_CHANNELS], &any(), None)?;
    ensure!(urls(&found) == [&o.url], "64-channel query missed the object");
    let r = d.graffiti().discover(&chans(&refs), &any(), None).map(|_| ());
    expect_code(r, "too_many_channels", "65 channels")
}

fn discover_needs_channel(d: &dyn Deployment) -> Check {
    let r = d.graffiti().discover(&[], &any(), None).map(|_| ());
    expect_code(r, "bad_request", "empty channel list")
}

fn discover_no_probe(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let b = login(d, "bob")?;
    post(d, &a, json!({"content": "x"}), &["open", "secret-side-channel"])?;
    let probe = SchemaDoc::new(json!({"channels": {"not": {"items": {"not": {"const": "secret-side-channel"}}}}}));
    let (found, _) = discover(d.graffiti().as_ref(), &["open"], &probe, Some(&b))?;
    ensure!(found.is_empty(), "schema matched a hidden channel");
    let (own, _) = discover(d.graffiti().as_ref(), &["open"], &probe, Some(&a))?;
    ensure!(own.len() == 1, "owner probe should match");
    Ok(())
}

fn discover_orphans_invisible(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = post(d, &a, json!({"content": "x"}), &[])?;
    let (found, _) = discover(d.graffiti().as_ref(), &[a.actor.as_str(), "c"], &any(), Some(&a))?;
    ensure!(!urls(&found).contains(&&o.url), "orphan was discovered");
    Ok(())
}

fn discover_allowed_visibility(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let b = login(d, "bob")?;
    let c = login(d, "carol")?;
    let g = d.graffiti();
    let o = call(
        g.put(ObjectBase::new(json!({"content": "for bob"}), &["c"]).with_allowed(vec![b.actor.clone()]), &a),
        "put",
    )?;
    let (seen_b, _) = discover(g.as_ref(), &["c"], &any(), Some(&b))?;
    ensure!(seen_b.len() == 1 && seen_b[0].allowed == Some(vec![b.actor.clone()]), "bob view {seen_b:?}");
    let (seen_c, _) = discover(g.as_ref(), &["c"], &any(), Some(&c))?;
    ensure!(seen_c.is_empty(), "carol saw a restricted object");
    let (seen_anon, _) = discover(g.as_ref(), &["c"], &any(), None)?;
    ensure!(seen_anon.is_empty(), "anonymous saw a restricted object");
    let (seen_a, _) = discover(g.as_ref(), &["c"], &any(), Some(&a))?;
    ensure!(seen_a.len() == 1 && seen_a[0] == o, "owner view differs");
    Ok(())
}

fn continue_no_changes(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    post(d, &a, json!({"content": "x"}), &["c"])?;
    let (_, cursor) = discover(d.graffiti().as_ref(), &["c"], &any(), None)?;
    let (deltas, next) = resume(d.graffiti().as_ref(), &cursor, None)?;
    ensure!(deltas.is_empty(), "unexpected deltas {deltas:?}");
    ensure!(!next.token().is_empty(), "no fresh cursor");
    Ok(())
}

fn continue_new_object(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let (_, cursor) = discover(d.graffiti().as_ref(), &["c"], &any(), None)?;
    let o = post(d, &a, json!({"content": "new"}), &["c"])?;
    post(d, &a, json!({"content": "elsewhere"}), &["other"])?;
    let (deltas, _) = resume(d.graffiti().as_ref(), &cursor, None)?;
    let objs = delta_objects(&deltas);
    ensure!(objs.len() == 1 && objs[0].url == o.url && deltas.len() == 1, "deltas {deltas:?}");
    ensure!(objs[0].channels == chans(&["c"]), "delta not masked to the query");
    Ok(())
}

fn continue_modified(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = post(d, &a, json!({"content": "v1"}), &["c"])?;
    let (_, cursor) = discover(d.graffiti().as_ref(), &["c"], &any(), None)?;
    let p = call(
        d.graffiti().patch(&o.url, &patch(json!([{"op": "replace", "path": "/value/content", "value": "v2"}])), &a),
        "patch",
    )?;
    let (deltas, _) = resume(d.graffiti().as_ref(), &cursor, None)?;
    let objs = delta_objects(&deltas);
    ensure!(deltas.len() == 1 && objs.len() == 1, "deltas {deltas:?}");
    ensure!(objs[0].revision == p.revision && objs[0].value == p.value, "stale delta {:?}", objs[0]);
    Ok(())
}

fn continue_delete_once(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = post(d, &a, json!({"content": "x"}), &["c"])?;
    let g = d.graffiti();
    let (_, cursor) = discover(g.as_ref(), &["c"], &any(), None)?;
    call(g.delete(&o.url, &a), "delete")?;
    let (deltas, next) = resume(g.as_ref(), &cursor, None)?;
    ensure!(tombstones(&deltas) == [&o.url] && deltas.len() == 1, "deltas {deltas:?}");
    let (again, _) = resume(g.as_ref(), &next, None)?;
    ensure!(again.is_empty(), "tombstone repeated: {again:?}");
    Ok(())
}

fn continue_channel_removed(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = post(d, &a, json!({"content": "x"}), &["c", "d"])?;
    let g = d.graffiti();
    let (_, cursor) = discover(g.as_ref(), &["c"], &any(), None)?;
    call(g.patch(&o.url, &patch(json!([{"op": "remove", "path": "/channels/0"}])), &a), "patch")?;
    let (deltas, _) = resume(g.as_ref(), &cursor, None)?;
    ensure!(tombstones(&deltas) == [&o.url] && deltas.len() == 1, "deltas {deltas:?}");
    Ok(())
}

fn continue_schema_unmatched(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = post(d, &a, json!({"content": "x"}), &["c"])?;
    let g = d.graffiti();
    let schema = SchemaDoc::new(json!({"value": {"required": ["content"]}}));
    let (_, cursor) = discover(g.as_ref(), &["c"], &schema, None)?;
    call(g.patch(&o.url, &patch(json!([{"op": "remove", "path": "/value/content"}])), &a), "patch")?;
    let (deltas, _) = resume(g.as_ref(), &cursor, None)?;
    ensure!(tombstones(&deltas) == [&o.url] && deltas.len() == 1, "deltas {deltas:?}");
    Ok(())
}

fn continue_transient(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let g = d.graffiti();
    let (_, cursor) = discover(g.as_ref(), &["c"], &any(), None)?;
    let o = post(d, &a, json!({"content": "blink"}), &["c"])?;
    call(g.delete(&o.url, &a), "delete")?;
    let (deltas, _) = resume(g.as_ref(), &cursor, None)?;
    ensure!(deltas.is_empty(), "deltas {deltas:?}");
    Ok(())
}

fn continue_tombstone_fields(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = post(d, &a, json!({"content": "secret words"}), &["c"])?;
    let g = d.graffiti();
    let (_, cursor) = discover(g.as_ref(), &["c"], &any(), None)?;
    call(g.delete(&o.url, &a), "delete")?;
    let (deltas, _) = resume(g.as_ref(), &cursor, None)?;
    let json = serde_json::to_value(&deltas).map_err(|e| e.to_string())?;
    let Some(t) = json.get(0).and_then(|t| t.as_object()) else {
        return Err(format!("no tombstone in {json}"));
    };
    let mut keys: Vec<&str> = t.keys().map(|k| k.as_str()).collect();
    keys.sort();
    ensure!(keys == ["deletedAt", "type", "url"], "tombstone fields {keys:?}");
    Ok(())
}

fn continue_allowed_revoked(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let b = login(d, "bob")?;
    let g = d.graffiti();
    let o = call(
        g.put(ObjectBase::new(json!({"content": "x"}), &["c"]).with_allowed(vec![b.actor.clone()]), &a),
        "put",
    )?;
    let (seen, cursor) = discover(g.as_ref(), &["c"], &any(), Some(&b))?;
    ensure!(seen.len() == 1, "bob should see it first");
    call(g.patch(&o.url, &patch(json!([{"op": "replace", "path": "/allowed", "value": []}])), &a), "patch")?;
    let (deltas, _) = resume(g.as_ref(), &cursor, Some(&b))?;
    ensure!(tombstones(&deltas) == [&o.url] && deltas.len() == 1, "deltas {deltas:?}");
    Ok(())
}

fn continue_recursive(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let g = d.graffiti();
    let (_, mut cursor) = discover(g.as_ref(), &["c"], &any(), None)?;
    for round in 0..3 {
        let o = post(d, &a, json!({"round": round}), &["c"])?;
        let (deltas, next) = resume(g.as_ref(), &cursor, None)?;
        ensure!(deltas.len() == 1 && deltas[0].url() == &o.url, "round {round}: {deltas:?}");
        cursor = next;
    }
    Ok(())
}

fn cursor_roundtrip(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let g = d.graffiti();
    let (_, cursor) = discover(g.as_ref(), &["c"], &any(), None)?;
    let text = cursor.to_string();
    let parsed: DiscoverCursor = text.parse().map_err(|e| format!("parse: {e}"))?;
    let o = post(d, &a, json!({"content": "after"}), &["c"])?;
    let (deltas, _) = resume(g.as_ref(), &parsed, None)?;
    ensure!(deltas.len() == 1 && deltas[0].url() == &o.url, "deltas {deltas:?}");
    Ok(())
}

fn cursor_expiry(d: &dyn Deployment) -> Check {
    let clock = d.clock().ok_or("no clock")?;
    let g = d.graffiti();
    let (_, cursor) = discover(g.as_ref(), &["c"], &any(), None)?;
    clock.advance(d.retention_ms());
    resume(g.as_ref(), &cursor, None).map_err(|e| format!("at exactly the retention age: {e}"))?;
    clock.advance(1);
    let r = g.continue_discover(&cursor, None).and_then(|s| s.collect_all().map(|c| c.items));
    expect_code(r, "cursor_expired", "one ms past retention")
}

fn snapshot_plus_delta(d: &dyn Deployment) -> Check {
    snapshot_delta_trial(d, 1, 3, 12)
}

/// Runs `rounds` rounds of `ops_per_round` random mutations, continuing
/// the discover after each, and checks that the accumulated view equals a
/// fresh discover as a set of (url, revision).
pub fn snapshot_delta_trial(d: &dyn Deployment, seed: u64, rounds: usize, ops_per_round: usize) -> Check {
    let mut rng = StdRng::seed_from_u64(seed);
    let g = d.graffiti();
    let actors = [login(d, "alice")?, login(d, "bob")?];
    let viewer = if rng.gen_bool(0.5) { Some(actors[1].clone()) } else { None };
    let query = ["a", "b"];
    let schema = SchemaDoc::new(json!({"value": {"properties": {"kind": {"const": "post"}}, "required": ["kind"]}}));
    let mut owned: Vec<(usize, ObjectUrl)> = Vec::new();

    let (initial, mut cursor) = discover(g.as_ref(), &query, &schema, viewer.as_ref())?;
    let mut view: BTreeMap<ObjectUrl, u64> = initial.iter().map(|o| (o.url.clone(), o.revision)).collect();

    for round in 0..rounds {
        for _ in 0..ops_per_round {
            random_op(d, &mut rng, &actors, &mut owned)?;
        }
        let (deltas, next) = resume(g.as_ref(), &cursor, viewer.as_ref())?;
        for delta in deltas {
            match delta {
                DiscoverDelta::Object(o) => {
                    view.insert(o.url, o.revision);
                }
                DiscoverDelta::Tombstone(t) => {
                    view.remove(&t.url);
                }
            }
        }
        cursor = next;
        let (fresh, _) = discover(g.as_ref(), &query, &schema, viewer.as_ref())?;
        let expected: BTreeMap<ObjectUrl, u64> = fresh.iter().map(|o| (o.url.clone(), o.revision)).collect();
        ensure!(
            expected.len() == fresh.len(),
            "seed {seed} round {round}: duplicate urls in discover"
        );
        ensure!(
            view == expected,
            "seed {seed} round {round}: snapshot+delta {view:?} != discover {expected:?}"
        );
    }
    Ok(())
}

fn random_op(
    d: &dyn Deployment,
    rng: &mut StdRng,
    actors: &[Session; 2],
    owned: &mut Vec<(usize, ObjectUrl)>,
) -> Check {
    let g = d.graffiti();
    let pool = ["a", "b", "c"];
    let random_channels = |rng: &mut StdRng| -> Vec<&str> { pool.iter().copied().filter(|_| rng.gen_bool(0.5)).collect() };
    let random_value = |rng: &mut StdRng| json!({"kind": if rng.gen_bool(0.7) { "post" } else { "note" }, "n": rng.gen_range(0..1000)});
    let random_allowed = |rng: &mut StdRng| -> Option<Vec<_>> {
        if !d.supports_allowed() || rng.gen_bool(0.6) {
            return None;
        }
        Some(actors.iter().filter(|_| rng.gen_bool(0.5)).map(|s| s.actor.clone()).collect())
    };
    let choice = if owned.is_empty() { 0 } else { rng.gen_range(0..4) };
    match choice {
        0 => {
            let who = rng.gen_range(0..2);
            let mut base = ObjectBase::new(random_value(rng), &random_channels(rng));
            base.allowed = random_allowed(rng);
            let o = call(g.put(base, &actors[who]), "random create")?;
            owned.push((who, o.url));
        }
        1 => {
            let (who, url) = owned[rng.gen_range(0..owned.len())].clone();
            let mut base = ObjectBase::new(random_value(rng), &random_channels(rng)).replacing(url);
            base.allowed = random_allowed(rng);
            call(g.put(base, &actors[who]), "random replace")?;
        }
        2 => {
            let (who, url) = owned[rng.gen_range(0..owned.len())].clone();
            let current = call(g.get(&url, &any(), Some(&actors[who])), "random get")?;
            let channel = pool[rng.gen_range(0..pool.len())];
            let ops = if let Some(i) = current.channels.iter().position(|c| c.as_str() == channel) {
                json!([{"op": "remove", "path": format!("/channels/{i}")}])
            } else if rng.gen_bool(0.5) {
                json!([{"op": "add", "path": "/channels/-", "value": channel}])
            } else {
                json!([{"op": "replace", "path": "/value/kind", "value": if rng.gen_bool(0.5) { "post" } else { "note" }}])
            };
            call(g.patch(&url, &patch(ops), &actors[who]), "random patch")?;
        }
        _ => {
            let idx = rng.gen_range(0..owned.len());
            let (who, url) = owned.swap_remove(idx);
            call(g.delete(&url, &actors[who]), "random delete")?;
        }
    }
    Ok(())
}

fn orphans_own(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = post(d, &a, json!({"content": "lost"}), &[])?;
    let found = call(call(d.graffiti().recover_orphans(&any(), &a), "recover")?.collect_all(), "stream")?.items;
    ensure!(urls(&found) == [&o.url], "orphans {:?}", urls(&found));
    ensure!(found[0] == o, "orphan was altered");
    Ok(())
}

fn orphans_skip_channelled(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    post(d, &a, json!({"content": "found"}), &["c"])?;
    let found = call(call(d.graffiti().recover_orphans(&any(), &a), "recover")?.collect_all(), "stream")?.items;
    ensure!(found.is_empty(), "channelled object returned as orphan");
    Ok(())
}

fn orphans_other_actor(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let b = login(d, "bob")?;
    post(d, &b, json!({"content": "bob's"}), &[])?;
    let found = call(call(d.graffiti().recover_orphans(&any(), &a), "recover")?.collect_all(), "stream")?.items;
    ensure!(found.is_empty(), "another actor's orphan returned");
    Ok(())
}

fn orphans_schema(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let keep = post(d, &a, json!({"content": "x"}), &[])?;
    post(d, &a, json!({"other": 1}), &[])?;
    let schema = SchemaDoc::new(json!({"value": {"required": ["content"]}}));
    let found = call(call(d.graffiti().recover_orphans(&schema, &a), "recover")?.collect_all(), "stream")?.items;
    ensure!(urls(&found) == [&keep.url], "orphans {:?}", urls(&found));
    Ok(())
}

fn stats_for(d: &dyn Deployment, s: &Session) -> std::result::Result<Vec<crate::api::ChannelStat>, String> {
    Ok(call(call(d.graffiti().channel_stats(s), "channelStats")?.collect_all(), "stream")?.items)
}

fn stats_counts(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let clock = d.clock();
    let t0 = clock.as_ref().map(|c| crate::clock::Clock::now_ms(c));
    post(d, &a, json!({"n": 1}), &["X"])?;
    if let Some(c) = &clock {
        c.advance(5_000);
    }
    post(d, &a, json!({"n": 2}), &["X", "Y"])?;
    let stats = stats_for(d, &a)?;
    let x = stats.iter().find(|s| s.channel.as_str() == "X").ok_or("no stat for X")?;
    let y = stats.iter().find(|s| s.channel.as_str() == "Y").ok_or("no stat for Y")?;
    ensure!(stats.len() == 2 && x.count == 2 && y.count == 1, "stats {stats:?}");
    if let Some(t0) = t0 {
        ensure!(x.last_modified == t0 + 5_000, "lastModified {} expected {}", x.last_modified, t0 + 5_000);
    }
    ensure!(x.last_modified == y.last_modified, "X and Y should share the latest time");
    Ok(())
}

fn stats_empty(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let stats = stats_for(d, &a)?;
    ensure!(stats.is_empty(), "stats {stats:?}");
    Ok(())
}

fn stats_per_actor(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let b = login(d, "bob")?;
    post(d, &a, json!({"n": 1}), &["X"])?;
    post(d, &b, json!({"n": 2}), &["X"])?;
    post(d, &b, json!({"n": 3}), &["X"])?;
    let stats = stats_for(d, &a)?;
    ensure!(stats.len() == 1 && stats[0].count == 1, "stats {stats:?}");
    Ok(())
}

fn stats_after_delete(d: &dyn Deployment) -> Check {
    let a = login(d, "alice")?;
    let o = post(d, &a, json!({"n": 1}), &["X"])?;
    post(d, &a, json!({"n": 2}), &["X"])?;
    call(d.graffiti().delete(&o.url, &a), "delete")?;
    let stats = stats_for(d, &a)?;
    ensure!(stats.len() == 1 && stats[0].count == 1, "stats {stats:?}");
    Ok(())
}
