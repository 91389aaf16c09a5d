//! Post-restart reconciliation of a recovered state against node liveness.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::names::GraphName;
use crate::registry::{MasterState, NodeRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct Reconciled {
    pub state: MasterState,
    pub dropped_nodes: Vec<GraphName>,
    /// Topics whose publisher set differs before and after, including
    /// topics that disappeared.
    pub changed_topics: Vec<GraphName>,
}

/// Drops every node for which `is_alive` answers false, along with all of
/// its registrations. Parameters are kept verbatim.
pub fn reconcile(state: &MasterState, mut is_alive: impl FnMut(&NodeRecord) -> bool) -> Reconciled {
    let dead: Vec<GraphName> = state
        .nodes()
        .filter(|node| !is_alive(node))
        .map(|node| node.name.clone())
        .collect();
    let mut next = state.clone();
    for name in &dead {
        next.remove_node(name);
    }

    let publishers_of = |s: &MasterState| -> BTreeMap<GraphName, BTreeSet<GraphName>> {
        s.topics().map(|t| (t.name.clone(), t.publishers.clone())).collect()
    };
    let before = publishers_of(state);
    let after = publishers_of(&next);
    let changed_topics = before
        .iter()
        .filter(|(topic, pubs)| after.get(*topic).map_or(!pubs.is_empty(), |now| now != *pubs))
        .map(|(topic, _)| topic.clone())
        .collect();

    Reconciled {
        state: next,
        dropped_nodes: dead,
        changed_topics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::names::EndpointUri;
    use alloc::vec;

    fn n(s: &str) -> GraphName {
        GraphName::new(s).unwrap()
    }

    fn u(port: u16) -> EndpointUri {
        EndpointUri::http("localhost", port).unwrap()
    }

    fn talker_listener() -> MasterState {
        let mut s = MasterState::new();
        s.register_publisher(&n("/talker"), &u(1), &n("/chatter"), "std_msgs/String").unwrap();
        s.register_subscriber(&n("/listener"), &u(2), &n("/chatter"), "std_msgs/String").unwrap();
        s
    }

    #[test]
    fn all_alive_is_identity() {
        let s = talker_listener();
        let out = reconcile(&s, |_| true);
        assert_eq!(out.state, s);
        assert!(out.dropped_nodes.is_empty());
        assert!(out.changed_topics.is_empty());
    }

    #[test]
    fn dead_listener_is_dropped() {
        let s = talker_listener();
        let out = reconcile(&s, |node| node.name != n("/listener"));
        assert_eq!(out.dropped_nodes, vec![n("/listener")]);
        assert!(out.changed_topics.is_empty());
        let sys = out.state.system_state();
        assert_eq!(sys.publishers, vec![(n("/chatter"), vec![n("/talker")])]);
        assert!(sys.subscribers.is_empty());
        out.state.check_invariants().unwrap();
    }

    #[test]
    fn dead_publisher_changes_topic() {
        let s = talker_listener();
        let out = reconcile(&s, |node| node.name != n("/talker"));
        assert_eq!(out.changed_topics, vec![n("/chatter")]);
        assert!(out.state.publisher_apis(&n("/chatter")).is_empty());
    }

    #[test]
    fn params_survive() {
        let mut s = talker_listener();
        s.set_param(&crate::ParamKey::new("/rate").unwrap(), 10.into()).unwrap();
        let out = reconcile(&s, |_| false);
        assert_eq!(out.state.param_names(), vec!["/rate"]);
        assert_eq!(out.state.nodes().count(), 0);
    }
}
