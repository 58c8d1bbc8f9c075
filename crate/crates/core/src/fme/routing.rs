//! Link-state view of the backhaul and hop-count routing (RMU).

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec::Vec;

use crate::radio::{max_range_m, LinkClassParams};
use crate::topology::Position;

/// Backhaul node identifier. The physical EPC is always node 0; HeNBs are
/// numbered from 1.
pub type BhNode = u32;
pub const EPC_NODE: BhNode = 0;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LinkStateGraph {
    nodes: BTreeSet<BhNode>,
    /// Undirected links keyed `(min, max)`; value is the up/down state.
    links: BTreeMap<(BhNode, BhNode), bool>,
}

fn key(a: BhNode, b: BhNode) -> (BhNode, BhNode) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl LinkStateGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Links every pair whose unfaded backhaul budget closes, optionally
    /// limited to `range_cap_m`.
    pub fn from_positions(nodes: &[(BhNode, Position)], link: &LinkClassParams, range_cap_m: Option<f64>) -> Self {
        let mut range = max_range_m(link);
        if let Some(cap) = range_cap_m {
            range = range.min(cap);
        }
        let mut g = LinkStateGraph::new();
        for &(id, _) in nodes {
            g.add_node(id);
        }
        for (i, &(a, pa)) in nodes.iter().enumerate() {
            for &(b, pb) in &nodes[i + 1..] {
                if pa.distance(&pb) <= range {
                    g.add_link(a, b);
                }
            }
        }
        g
    }

    pub fn add_node(&mut self, n: BhNode) {
        self.nodes.insert(n);
    }

    pub fn add_link(&mut self, a: BhNode, b: BhNode) {
        if a == b {
            return;
        }
        self.nodes.insert(a);
        self.nodes.insert(b);
        self.links.insert(key(a, b), true);
    }

    /// Returns `false` if no such link exists.
    pub fn set_link_up(&mut self, a: BhNode, b: BhNode, up: bool) -> bool {
        match self.links.get_mut(&key(a, b)) {
            Some(state) => {
                *state = up;
                true
            }
            None => false,
        }
    }

    pub fn has_link(&self, a: BhNode, b: BhNode) -> bool {
        self.links.contains_key(&key(a, b))
    }

    pub fn is_up(&self, a: BhNode, b: BhNode) -> bool {
        self.links.get(&key(a, b)).copied().unwrap_or(false)
    }

    pub fn nodes(&self) -> impl Iterator<Item = BhNode> + '_ {
        self.nodes.iter().copied()
    }

    pub fn links(&self) -> impl Iterator<Item = ((BhNode, BhNode), bool)> + '_ {
        self.links.iter().map(|(&k, &v)| (k, v))
    }

    /// Neighbours over links that are currently up, ascending.
    pub fn up_neighbors(&self, n: BhNode) -> Vec<BhNode> {
        let mut out: Vec<BhNode> = self
            .links
            .iter()
            .filter(|(_, &up)| up)
            .filter_map(|(&(a, b), _)| {
                if a == n {
                    Some(b)
                } else if b == n {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Route {
    pub next_hop: BhNode,
    /// Hop count to the destination.
    pub cost: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RouteTable {
    pub owner: BhNode,
    pub routes: BTreeMap<BhNode, Route>,
    pub epoch: u64,
}

impl RouteTable {
    pub fn empty(owner: BhNode) -> Self {
        RouteTable { owner, routes: BTreeMap::new(), epoch: 0 }
    }

    pub fn get(&self, dest: BhNode) -> Option<Route> {
        self.routes.get(&dest).copied()
    }

    pub fn reaches(&self, dest: BhNode) -> bool {
        self.routes.contains_key(&dest)
    }
}

/// Breadth-first hop-count shortest paths from `table.owner` over links that
/// are up. Among equal-cost paths the lowest first-hop id wins. Unreachable
/// destinations are omitted. The epoch is incremented.
pub fn rmu_recompute(graph: &LinkStateGraph, previous: &RouteTable) -> RouteTable {
    let owner = previous.owner;
    let mut dist: BTreeMap<BhNode, u32> = BTreeMap::new();
    let mut order = Vec::new();
    let mut frontier = VecDeque::new();
    dist.insert(owner, 0);
    frontier.push_back(owner);
    while let Some(u) = frontier.pop_front() {
        let du = dist[&u];
        for v in graph.up_neighbors(u) {
            if !dist.contains_key(&v) {
                dist.insert(v, du + 1);
                order.push(v);
                frontier.push_back(v);
            }
        }
    }
    // `order` is non-decreasing in distance, so every predecessor's first
    // hop is final before its successors look at it.
    let mut first_hop: BTreeMap<BhNode, BhNode> = BTreeMap::new();
    for &v in &order {
        let d = dist[&v];
        let hop = if d == 1 {
            v
        } else {
            graph
                .up_neighbors(v)
                .into_iter()
                .filter(|p| dist.get(p) == Some(&(d - 1)))
                .map(|p| first_hop[&p])
                .min()
                .expect("a node at distance d has a predecessor at d - 1")
        };
        first_hop.insert(v, hop);
    }
    let routes = first_hop
        .into_iter()
        .map(|(dest, next_hop)| (dest, Route { next_hop, cost: dist[&dest] }))
        .collect();
    RouteTable { owner, routes, epoch: previous.epoch + 1 }
}

/// Hop-by-hop path from `from` to `to` following each node's own table.
pub fn forwarding_path(tables: &BTreeMap<BhNode, RouteTable>, from: BhNode, to: BhNode) -> Option<Vec<BhNode>> {
    let mut path = alloc::vec![from];
    let mut at = from;
    while at != to {
        let next = tables.get(&at)?.get(to)?.next_hop;
        if path.contains(&next) {
            return None;
        }
        path.push(next);
        at = next;
    }
    Some(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> LinkStateGraph {
        let mut g = LinkStateGraph::new();
        g.add_link(3, 2);
        g.add_link(2, 1);
        g.add_link(1, EPC_NODE);
        g
    }

    #[test]
    fn chain_routes() {
        let t = rmu_recompute(&chain(), &RouteTable::empty(3));
        assert_eq!(t.get(EPC_NODE), Some(Route { next_hop: 2, cost: 3 }));
        assert_eq!(t.get(1), Some(Route { next_hop: 2, cost: 2 }));
        assert_eq!(t.epoch, 1);
    }

    #[test]
    fn cut_link_unreachable() {
        let mut g = chain();
        assert!(g.set_link_up(1, EPC_NODE, false));
        for owner in 1..=3 {
            let t = rmu_recompute(&g, &RouteTable::empty(owner));
            assert!(!t.reaches(EPC_NODE));
        }
        assert!(!g.set_link_up(3, EPC_NODE, false));
    }

    #[test]
    fn equal_cost_lowest_next_hop() {
        // square 0-1-4, 0-2-4, 0-3-4: three equal paths 0 -> 4
        let mut g = LinkStateGraph::new();
        for mid in [3, 1, 2] {
            g.add_link(0, mid);
            g.add_link(mid, 4);
        }
        let t1 = rmu_recompute(&g, &RouteTable::empty(0));
        let t2 = rmu_recompute(&g, &RouteTable::empty(0));
        assert_eq!(t1.get(4), Some(Route { next_hop: 1, cost: 2 }));
        assert_eq!(t1, t2);
    }

    #[test]
    fn tie_break_propagates_downstream() {
        // 0 reaches 5 via 2 first (inserted first) but via 1 is equal cost
        let mut g = LinkStateGraph::new();
        g.add_link(0, 2);
        g.add_link(0, 1);
        g.add_link(2, 5);
        g.add_link(1, 6);
        g.add_link(6, 7);
        g.add_link(5, 7);
        let t = rmu_recompute(&g, &RouteTable::empty(0));
        assert_eq!(t.get(7), Some(Route { next_hop: 1, cost: 3 }));
    }

    #[test]
    fn isolated_node_has_no_routes() {
        let mut g = LinkStateGraph::new();
        g.add_node(7);
        let t = rmu_recompute(&g, &RouteTable::empty(7));
        assert!(t.routes.is_empty());
    }

    #[test]
    fn forwarding_follows_tables() {
        let g = chain();
        let tables: BTreeMap<_, _> = (0..=3).map(|n| (n, rmu_recompute(&g, &RouteTable::empty(n)))).collect();
        assert_eq!(forwarding_path(&tables, 3, EPC_NODE), Some(alloc::vec![3, 2, 1, 0]));
        assert_eq!(forwarding_path(&tables, 0, 3), Some(alloc::vec![0, 1, 2, 3]));
    }
}
