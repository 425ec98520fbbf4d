//! Max flow and circulation feasibility over exact rationals.
//!
//! Capacities are rationals or an explicit infinity marker; flows are exact,
//! with no tolerances anywhere. Augmentation uses shortest augmenting paths
//! (Edmonds–Karp), which terminates in O(V·E) augmentations regardless of
//! capacity values, so exact arithmetic is safe.

use std::collections::VecDeque;
use std::fmt;

use crate::rat::Rat;

/// Edge capacity: a nonnegative rational or unbounded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Capacity {
    Finite(Rat),
    Infinite,
}

impl Capacity {
    pub fn finite(v: Rat) -> Self {
        assert!(!v.is_negative(), "negative capacity");
        Capacity::Finite(v)
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Capacity::Infinite)
    }

    pub fn as_finite(&self) -> Option<&Rat> {
        match self {
            Capacity::Finite(v) => Some(v),
            Capacity::Infinite => None,
        }
    }
}

impl fmt::Display for Capacity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Capacity::Finite(v) => write!(f, "{v}"),
            Capacity::Infinite => write!(f, "inf"),
        }
    }
}

/// Directed flow network with optional per-node supplies.
/// Positive supply = the node must send that much; negative = receive.
#[derive(Clone, Debug)]
pub struct FlowNetwork {
    node_count: usize,
    edges: Vec<(usize, usize, Capacity)>,
    supplies: Vec<Rat>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FlowError {
    /// Circulation supplies must sum to zero.
    SupplyImbalance(Rat),
}

impl fmt::Display for FlowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlowError::SupplyImbalance(total) => {
                write!(f, "node supplies sum to {total}, expected 0")
            }
        }
    }
}

impl std::error::Error for FlowError {}

impl FlowNetwork {
    pub fn new(node_count: usize) -> Self {
        FlowNetwork {
            node_count,
            edges: Vec::new(),
            supplies: vec![Rat::zero(); node_count],
        }
    }

    /// Returns the edge's id; flows are reported per edge id.
    pub fn add_edge(&mut self, from: usize, to: usize, cap: Capacity) -> usize {
        assert!(from < self.node_count && to < self.node_count, "node out of range");
        assert!(from != to, "self loops not supported");
        self.edges.push((from, to, cap));
        self.edges.len() - 1
    }

    pub fn set_supply(&mut self, node: usize, supply: Rat) {
        self.supplies[node] = supply;
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge(&self, id: usize) -> (usize, usize, &Capacity) {
        let (f, t, ref c) = self.edges[id];
        (f, t, c)
    }

    pub fn supply(&self, node: usize) -> &Rat {
        &self.supplies[node]
    }
}

pub struct MaxFlowResult {
    pub value: Capacity,
    /// Flow per edge id. Zeros when the value is unbounded.
    pub flows: Vec<Rat>,
}

pub enum CirculationOutcome {
    Feasible {
        /// Flow per edge id of the original network.
        flows: Vec<Rat>,
    },
    Infeasible {
        /// Node set B with supply(B) + capacity(into B) < 0: no feasible
        /// routing can drain B's deficit.
        violating_set: Vec<usize>,
    },
}

struct Residual {
    // arcs[i] = (to, cap, flow, reverse arc index); residual = cap - flow.
    arcs: Vec<(usize, Capacity, Rat, usize)>,
    adj: Vec<Vec<usize>>,
}

impl Residual {
    fn new(nodes: usize) -> Self {
        Residual {
            arcs: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    fn add(&mut self, from: usize, to: usize, cap: Capacity) -> usize {
        let a = self.arcs.len();
        self.arcs.push((to, cap, Rat::zero(), a + 1));
        self.adj[from].push(a);
        self.arcs
            .push((from, Capacity::Finite(Rat::zero()), Rat::zero(), a));
        self.adj[to].push(a + 1);
        a
    }

    fn residual(&self, arc: usize) -> Option<Rat> {
        // None encodes unbounded residual.
        let (_, ref cap, ref flow, _) = self.arcs[arc];
        match cap {
            Capacity::Infinite => None,
            Capacity::Finite(c) => Some(c - flow),
        }
    }

    fn has_residual(&self, arc: usize) -> bool {
        match self.residual(arc) {
            None => true,
            Some(r) => r.is_positive(),
        }
    }

    fn augment(&mut self, arc: usize, amount: &Rat) {
        let rev = self.arcs[arc].3;
        self.arcs[arc].2 += amount;
        self.arcs[rev].2 -= amount;
    }

    /// Shortest augmenting path from s to t through positive residuals.
    fn bfs_path(&self, s: usize, t: usize) -> Option<Vec<usize>> {
        let mut pred: Vec<Option<usize>> = vec![None; self.adj.len()];
        let mut seen = vec![false; self.adj.len()];
        seen[s] = true;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &a in &self.adj[u] {
                let v = self.arcs[a].0;
                if !seen[v] && self.has_residual(a) {
                    seen[v] = true;
                    pred[v] = Some(a);
                    if v == t {
                        let mut path = Vec::new();
                        let mut cur = t;
                        while cur != s {
                            let arc = pred[cur].unwrap();
                            path.push(arc);
                            cur = self.arcs[self.arcs[arc].3].0;
                        }
                        path.reverse();
                        return Some(path);
                    }
                    queue.push_back(v);
                }
            }
        }
        None
    }

    /// Nodes reachable from `s` in the residual graph.
    fn reachable(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        seen[s] = true;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &a in &self.adj[u] {
                let v = self.arcs[a].0;
                if !seen[v] && self.has_residual(a) {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }
}

/// Maximum s→t flow. Supplies are ignored and must be zero. When an
/// augmenting path consists entirely of unbounded arcs the value is
/// unbounded and the reported per-edge flows are all zero.
pub fn max_flow(net: &FlowNetwork, s: usize, t: usize) -> MaxFlowResult {
    assert!(s != t, "source equals sink");
    debug_assert!(
        net.supplies.iter().all(Rat::is_zero),
        "max_flow ignores supplies; use feasible_circulation"
    );
    let mut res = Residual::new(net.node_count);
    let mut arc_of_edge = Vec::with_capacity(net.edges.len());
    for &(f, tt, ref c) in &net.edges {
        arc_of_edge.push(res.add(f, tt, c.clone()));
    }
    let mut value = Rat::zero();
    while let Some(path) = res.bfs_path(s, t) {
        let mut bottleneck: Option<Rat> = None;
        for &a in &path {
            if let Some(r) = res.residual(a) {
                bottleneck = Some(match bottleneck {
                    None => r,
                    Some(b) => b.min(r),
                });
            }
        }
        let Some(b) = bottleneck else {
            return MaxFlowResult {
                value: Capacity::Infinite,
                flows: vec![Rat::zero(); net.edges.len()],
            };
        };
        debug_assert!(b.is_positive());
        for &a in &path {
            res.augment(a, &b);
        }
        value += b;
    }
    let flows = arc_of_edge.iter().map(|&a| res.arcs[a].2.clone()).collect();
    MaxFlowResult {
        value: Capacity::Finite(value),
        flows,
    }
}

/// Feasibility of a circulation with supplies: reduce to max flow from a
/// super-source (feeding positive supplies) to a super-sink (draining
/// deficits); feasible iff everything routes. On failure the violating set
/// is the original nodes unreachable from the super-source in the final
/// residual graph; those nodes' total deficit exceeds the capacity into
/// them.
pub fn feasible_circulation(net: &FlowNetwork) -> Result<CirculationOutcome, FlowError> {
    let total: Rat = net.supplies.iter().sum();
    if !total.is_zero() {
        return Err(FlowError::SupplyImbalance(total));
    }
    let n = net.node_count;
    let (s, t) = (n, n + 1);
    let mut res = Residual::new(n + 2);
    let mut arc_of_edge = Vec::with_capacity(net.edges.len());
    for &(f, tt, ref c) in &net.edges {
        arc_of_edge.push(res.add(f, tt, c.clone()));
    }
    let mut need = Rat::zero();
    for v in 0..n {
        let b = &net.supplies[v];
        if b.is_positive() {
            res.add(s, v, Capacity::Finite(b.clone()));
            need += b;
        } else if b.is_negative() {
            res.add(v, t, Capacity::Finite(-b));
        }
    }
    let mut routed = Rat::zero();
    while let Some(path) = res.bfs_path(s, t) {
        let mut bottleneck: Option<Rat> = None;
        for &a in &path {
            if let Some(r) = res.residual(a) {
                bottleneck = Some(match bottleneck {
                    None => r,
                    Some(b) => b.min(r),
                });
            }
        }
        // Source arcs are finite, so every s→t path has a finite bottleneck.
        let b = bottleneck.expect("path from super-source has finite bottleneck");
        for &a in &path {
            res.augment(a, &b);
        }
        routed += b;
    }
    if routed == need {
        let flows = arc_of_edge.iter().map(|&a| res.arcs[a].2.clone()).collect();
        Ok(CirculationOutcome::Feasible { flows })
    } else {
        let seen = res.reachable(s);
        let violating_set = (0..n).filter(|&v| !seen[v]).collect();
        Ok(CirculationOutcome::Infeasible { violating_set })
    }
}

/// Exhaustive min-cut value: minimum over all s-side subsets of the total
/// capacity crossing to the t side. Exponential; the independent oracle for
/// `max_flow` on small networks.
pub fn enumerate_min_cut(net: &FlowNetwork, s: usize, t: usize) -> Capacity {
    let n = net.node_count;
    assert!(n <= 20, "cut enumeration is exponential");
    let mut best: Option<Rat> = None;
    for mask in 0u32..(1 << n) {
        if mask & (1 << s) == 0 || mask & (1 << t) != 0 {
            continue;
        }
        let mut cut = Rat::zero();
        let mut infinite = false;
        for &(f, tt, ref c) in &net.edges {
            if mask & (1 << f) != 0 && mask & (1 << tt) == 0 {
                match c {
                    Capacity::Infinite => {
                        infinite = true;
                        break;
                    }
                    Capacity::Finite(v) => cut += v,
                }
            }
        }
        if !infinite {
            best = Some(match best {
                None => cut,
                Some(b) => b.min(cut),
            });
        }
    }
    match best {
        Some(v) => Capacity::Finite(v),
        None => Capacity::Infinite,
    }
}

/// Exact flow conservation / capacity check for a claimed flow vector.
pub fn check_flow(net: &FlowNetwork, flows: &[Rat], s: usize, t: usize) -> bool {
    if flows.len() != net.edges.len() {
        return false;
    }
    for (id, &(_, _, ref c)) in net.edges.iter().enumerate() {
        if flows[id].is_negative() {
            return false;
        }
        if let Capacity::Finite(cap) = c {
            if flows[id] > *cap {
                return false;
            }
        }
    }
    for v in 0..net.node_count {
        if v == s || v == t {
            continue;
        }
        let mut balance = Rat::zero();
        for (id, &(f, tt, _)) in net.edges.iter().enumerate() {
            if f == v {
                balance += &flows[id];
            }
            if tt == v {
                balance -= &flows[id];
            }
        }
        if !balance.is_zero() {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use proptest::strategy::Strategy as _;

    fn fin(v: i64) -> Capacity {
        Capacity::Finite(Rat::from_int(v))
    }

    #[test]
    fn single_edge() {
        let mut net = FlowNetwork::new(2);
        net.add_edge(0, 1, fin(5));
        let r = max_flow(&net, 0, 1);
        assert_eq!(r.value, fin(5));
        assert_eq!(r.flows, vec![Rat::from_int(5)]);
    }

    #[test]
    fn diamond() {
        let mut net = FlowNetwork::new(4);
        net.add_edge(0, 1, fin(3));
        net.add_edge(0, 2, fin(2));
        net.add_edge(1, 3, fin(2));
        net.add_edge(2, 3, fin(3));
        let r = max_flow(&net, 0, 3);
        assert_eq!(r.value, fin(4));
        assert!(check_flow(&net, &r.flows, 0, 3));
        assert_eq!(enumerate_min_cut(&net, 0, 3), fin(4));
    }

    #[test]
    fn disconnected() {
        let net = FlowNetwork::new(2);
        let r = max_flow(&net, 0, 1);
        assert_eq!(r.value, fin(0));
    }

    #[test]
    fn unbounded_path() {
        let mut net = FlowNetwork::new(3);
        net.add_edge(0, 1, Capacity::Infinite);
        net.add_edge(1, 2, Capacity::Infinite);
        assert_eq!(max_flow(&net, 0, 2).value, Capacity::Infinite);
        assert_eq!(enumerate_min_cut(&net, 0, 2), Capacity::Infinite);
    }

    #[test]
    fn circulation_feasible_pair() {
        let mut net = FlowNetwork::new(2);
        net.add_edge(0, 1, fin(1));
        net.set_supply(0, Rat::one());
        net.set_supply(1, Rat::from_int(-1));
        match feasible_circulation(&net).unwrap() {
            CirculationOutcome::Feasible { flows } => {
                assert_eq!(flows, vec![Rat::one()]);
            }
            CirculationOutcome::Infeasible { .. } => panic!("expected feasible"),
        }
    }

    #[test]
    fn circulation_infeasible_pair_yields_demand_node() {
        let mut net = FlowNetwork::new(2);
        net.add_edge(0, 1, Capacity::Finite(Rat::ratio(1, 2)));
        net.set_supply(0, Rat::one());
        net.set_supply(1, Rat::from_int(-1));
        match feasible_circulation(&net).unwrap() {
            CirculationOutcome::Infeasible { violating_set } => {
                assert_eq!(violating_set, vec![1]);
            }
            CirculationOutcome::Feasible { .. } => panic!("expected infeasible"),
        }
    }

    #[test]
    fn circulation_rejects_imbalance() {
        let mut net = FlowNetwork::new(1);
        net.set_supply(0, Rat::one());
        assert!(matches!(
            feasible_circulation(&net),
            Err(FlowError::SupplyImbalance(_))
        ));
    }

    #[test]
    fn fractional_capacities_stay_exact() {
        let mut net = FlowNetwork::new(3);
        net.add_edge(0, 1, Capacity::Finite(Rat::ratio(1, 3)));
        net.add_edge(0, 1, Capacity::Finite(Rat::ratio(1, 7)));
        net.add_edge(1, 2, Capacity::Finite(Rat::ratio(1, 2)));
        let r = max_flow(&net, 0, 2);
        assert_eq!(r.value, Capacity::Finite(Rat::ratio(10, 21)));
        assert!(check_flow(&net, &r.flows, 0, 2));
    }

    fn arb_net() -> impl proptest::strategy::Strategy<Value = (FlowNetwork, usize, usize)> {
        (3usize..7).prop_flat_map(|n| {
            let edges = proptest::collection::vec(
                (0usize..n, 0usize..n, 0i64..6, 1i64..6),
                1..12,
            );
            edges.prop_map(move |es| {
                let mut net = FlowNetwork::new(n);
                for (f, t, p, q) in es {
                    if f != t {
                        net.add_edge(f, t, Capacity::Finite(Rat::ratio(p, q)));
                    }
                }
                (net, 0, n - 1)
            })
        })
    }

    proptest! {
        // Max flow equals the exhaustively enumerated min cut, and the flow
        // vector satisfies conservation and capacities exactly.
        #[test]
        fn max_flow_equals_enumerated_min_cut((net, s, t) in arb_net()) {
            let r = max_flow(&net, s, t);
            prop_assert_eq!(r.value.clone(), enumerate_min_cut(&net, s, t));
            prop_assert!(check_flow(&net, &r.flows, s, t));
            if let Capacity::Finite(v) = &r.value {
                let out: Rat = net
                    .edges
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.0 == s)
                    .map(|(id, _)| r.flows[id].clone())
                    .sum();
                let back: Rat = net
                    .edges
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.1 == s)
                    .map(|(id, _)| r.flows[id].clone())
                    .sum();
                prop_assert_eq!(out - back, v.clone());
            }
        }

        // An infeasible circulation's violating set certifies the failure:
        // supply(B) plus the capacity entering B is negative.
        #[test]
        fn violating_set_certifies_infeasibility(
            (mut net, _, _) in arb_net(),
            raw_supplies in proptest::collection::vec(-5i64..6, 7),
        ) {
            let n = net.node_count();
            let mut total = Rat::zero();
            for v in 0..n - 1 {
                let s = Rat::from_int(raw_supplies[v % raw_supplies.len()]);
                total += &s;
                net.set_supply(v, s);
            }
            net.set_supply(n - 1, -total);
            match feasible_circulation(&net).unwrap() {
                CirculationOutcome::Feasible { flows } => {
                    // Net outflow of every node equals its supply.
                    for v in 0..n {
                        let mut bal = Rat::zero();
                        for id in 0..net.edge_count() {
                            let (f, t, _) = net.edge(id);
                            if f == v { bal += &flows[id]; }
                            if t == v { bal -= &flows[id]; }
                        }
                        prop_assert_eq!(&bal, net.supply(v));
                    }
                }
                CirculationOutcome::Infeasible { violating_set } => {
                    prop_assert!(!violating_set.is_empty());
                    let inb: Vec<bool> = (0..n)
                        .map(|v| violating_set.contains(&v))
                        .collect();
                    let mut slack = Rat::zero();
                    for &v in &violating_set {
                        slack += net.supply(v);
                    }
                    for id in 0..net.edge_count() {
                        let (f, t, c) = net.edge(id);
                        if !inb[f] && inb[t] {
                            slack += c.as_finite().expect("finite caps in this test");
                        }
                    }
                    prop_assert!(slack.is_negative());
                }
            }
        }
    }
}
