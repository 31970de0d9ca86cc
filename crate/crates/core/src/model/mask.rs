use super::{ActorUri, ChannelName, GraffitiObject};

/// Whether `viewer` may see `object` at all: public objects are visible to
/// everyone, restricted ones only to the owner and the allowed actors.
pub fn is_visible_to(object: &GraffitiObject, viewer: Option<&ActorUri>) -> bool {
    match (&object.allowed, viewer) {
        (None, _) => true,
        (Some(_), None) => false,
        (Some(allowed), Some(v)) => *v == object.actor || allowed.contains(v),
    }
}

/// Hides channels and allowed entries the viewer does not implicitly know.
///
/// Owners see everything. Anyone else sees only the queried channels the
/// object is in, and for restricted objects an allowed list of just
/// themselves.
pub fn mask_object(
    object: &GraffitiObject,
    viewer: Option<&ActorUri>,
    queried: &[ChannelName],
) -> GraffitiObject {
    if viewer == Some(&object.actor) {
        return object.clone();
    }
    let channels = object
        .channels
        .iter()
        .filter(|c| queried.contains(c))
        .cloned()
        .collect();
    let allowed = object
        .allowed
        .as_ref()
        .map(|_| viewer.into_iter().cloned().collect());
    GraffitiObject {
        value: object.value.clone(),
        url: object.url.clone(),
        actor: object.actor.clone(),
        channels,
        allowed,
        revision: object.revision,
    }
}
