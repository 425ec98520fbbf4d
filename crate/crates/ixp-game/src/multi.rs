//! Multi-homing variant: each agent may use a *set* of facilities, and a
//! legal deviation drops at most one facility while joining any number of
//! others. Costs, potentials, per-facility price supports, stability
//! checks, and the two-phase stabilization dynamics for this setting.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use crate::flow::{feasible_circulation, CirculationOutcome};
use crate::model::{check_alpha, Instance, ModelError, PotentialKind};
use crate::payments::facility_circulation;
use crate::rat::Rat;

/// Set enumeration is exponential in the facility count; operations that
/// enumerate candidate sets refuse instances beyond this cap.
pub const MAX_MULTI_FACILITIES: usize = 12;

fn ensure_enumerable(inst: &Instance) -> Result<(), ModelError> {
    if inst.m() > MAX_MULTI_FACILITIES {
        return Err(ModelError::TooLarge(format!(
            "multi-homing enumeration needs 2^m candidate sets; m = {} exceeds the cap of {}",
            inst.m(),
            MAX_MULTI_FACILITIES
        )));
    }
    Ok(())
}

/// A set of facility indices, stored as a bitmask. Ordering is
/// lexicographic on the ascending index sequence (∅ < {f1} < {f1,f2} <
/// {f2}), *not* numeric on the mask — deterministic tie-breaks rely on it.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct FacilitySet(u16);

impl FacilitySet {
    pub fn empty() -> Self {
        FacilitySet(0)
    }

    pub fn singleton(k: usize) -> Self {
        FacilitySet::empty().with(k)
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        let mut s = FacilitySet::empty();
        for k in indices {
            s = s.with(k);
        }
        s
    }

    fn from_mask(mask: u16) -> Self {
        FacilitySet(mask)
    }

    pub fn with(self, k: usize) -> Self {
        assert!(k < 16, "facility index out of representable range");
        FacilitySet(self.0 | (1 << k))
    }

    pub fn without(self, k: usize) -> Self {
        assert!(k < 16, "facility index out of representable range");
        FacilitySet(self.0 & !(1 << k))
    }

    pub fn contains(self, k: usize) -> bool {
        k < 16 && self.0 & (1 << k) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: Self) -> Self {
        FacilitySet(self.0 | other.0)
    }

    pub fn minus(self, other: Self) -> Self {
        FacilitySet(self.0 & !other.0)
    }

    pub fn intersection(self, other: Self) -> Self {
        FacilitySet(self.0 & other.0)
    }

    pub fn intersects(self, other: Self) -> bool {
        self.0 & other.0 != 0
    }

    pub fn is_subset_of(self, other: Self) -> bool {
        self.0 & !other.0 == 0
    }

    /// Facility indices in ascending order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..16).filter(move |&k| self.0 & (1 << k) != 0)
    }

    pub fn to_json_value(self) -> serde_json::Value {
        serde_json::Value::Array(
            self.iter()
                .map(|k| serde_json::Value::from((k + 1) as u64))
                .collect(),
        )
    }

    pub fn from_json_value(v: &serde_json::Value, m: usize) -> Result<Self, ModelError> {
        let arr = v
            .as_array()
            .ok_or_else(|| ModelError::Invalid("facility set must be a JSON array".into()))?;
        let mut s = FacilitySet::empty();
        for item in arr {
            let k = item
                .as_u64()
                .filter(|&k| k >= 1 && k as usize <= m)
                .ok_or_else(|| {
                    ModelError::Invalid(format!(
                        "facility index must be an integer in 1..={m}, got {item}"
                    ))
                })? as usize
                - 1;
            if s.contains(k) {
                return Err(ModelError::Invalid(format!(
                    "duplicate facility index {}",
                    k + 1
                )));
            }
            s = s.with(k);
        }
        Ok(s)
    }
}

impl Ord for FacilitySet {
    fn cmp(&self, other: &Self) -> Ordering {
        self.iter().cmp(other.iter())
    }
}

impl PartialOrd for FacilitySet {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for FacilitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return write!(f, "∅");
        }
        write!(f, "{{")?;
        for (pos, k) in self.iter().enumerate() {
            if pos > 0 {
                write!(f, ",")?;
            }
            write!(f, "f{}", k + 1)?;
        }
        write!(f, "}}")
    }
}

impl fmt::Debug for FacilitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// One facility set per agent.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct MultiAssignment {
    sets: Vec<FacilitySet>,
}

impl MultiAssignment {
    pub fn new(sets: Vec<FacilitySet>) -> Self {
        MultiAssignment { sets }
    }

    pub fn all_out(n: usize) -> Self {
        MultiAssignment {
            sets: vec![FacilitySet::empty(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn get(&self, agent: usize) -> FacilitySet {
        self.sets[agent]
    }

    pub fn set(&mut self, agent: usize, s: FacilitySet) {
        self.sets[agent] = s;
    }

    pub fn iter(&self) -> impl Iterator<Item = FacilitySet> + '_ {
        self.sets.iter().copied()
    }

    /// Union of all agents' sets: exactly the open facilities.
    pub fn open_set(&self) -> FacilitySet {
        self.sets
            .iter()
            .fold(FacilitySet::empty(), |acc, &s| acc.union(s))
    }

    pub fn is_open(&self, k: usize) -> bool {
        self.sets.iter().any(|s| s.contains(k))
    }

    pub fn users_of(&self, k: usize) -> Vec<usize> {
        (0..self.sets.len())
            .filter(|&i| self.sets[i].contains(k))
            .collect()
    }

    pub fn check(&self, inst: &Instance) -> Result<(), ModelError> {
        if self.sets.len() != inst.n() {
            return Err(ModelError::Invalid(format!(
                "assignment has {} agents, instance has {}",
                self.sets.len(),
                inst.n()
            )));
        }
        for (i, s) in self.sets.iter().enumerate() {
            if let Some(k) = s.iter().find(|&k| k >= inst.m()) {
                return Err(ModelError::Invalid(format!(
                    "agent {} uses facility {} but the instance has only {}",
                    i + 1,
                    k + 1,
                    inst.m()
                )));
            }
        }
        Ok(())
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::Value::Array(self.sets.iter().map(|s| s.to_json_value()).collect())
    }

    pub fn from_json_value(v: &serde_json::Value, m: usize) -> Result<Self, ModelError> {
        let arr = v.as_array().ok_or_else(|| {
            ModelError::Invalid("multi assignment must be a JSON array of arrays".into())
        })?;
        let sets = arr
            .iter()
            .map(|item| FacilitySet::from_json_value(item, m))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MultiAssignment { sets })
    }
}

impl fmt::Debug for MultiAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, s) in self.sets.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{s}")?;
        }
        write!(f, ")")
    }
}

/// Connection costs over the agent's own set, plus the full disconnection
/// cost to every agent sharing no facility with it. Two agents with empty
/// sets share nothing and are disconnected.
pub fn tc_multi(inst: &Instance, ma: &MultiAssignment, agent: usize) -> Rat {
    cost_with_alpha_multi(inst, ma, agent, &Rat::one())
}

/// Like `tc_multi` but with the disconnection term weighted by `alpha`.
pub fn cost_with_alpha_multi(
    inst: &Instance,
    ma: &MultiAssignment,
    agent: usize,
    alpha: &Rat,
) -> Rat {
    let own = ma.get(agent);
    let mut total: Rat = own.iter().map(|k| inst.cc(agent, k).clone()).sum();
    let mut disc = Rat::zero();
    for j in 0..inst.n() {
        if j != agent && !own.intersects(ma.get(j)) {
            disc += inst.dc(agent, j);
        }
    }
    total += &(alpha * &disc);
    total
}

fn cost_after_set(
    inst: &Instance,
    ma: &MultiAssignment,
    agent: usize,
    target: FacilitySet,
    alpha: &Rat,
) -> Rat {
    let mut total: Rat = target.iter().map(|k| inst.cc(agent, k).clone()).sum();
    let mut disc = Rat::zero();
    for j in 0..inst.n() {
        if j != agent && !target.intersects(ma.get(j)) {
            disc += inst.dc(agent, j);
        }
    }
    total += &(alpha * &disc);
    total
}

/// Opening costs of used facilities, plus all connection costs, plus the
/// disconnection cost counted from both sides of each separated pair.
pub fn social_cost_multi(inst: &Instance, ma: &MultiAssignment) -> Rat {
    let mut total: Rat = ma.open_set().iter().map(|k| inst.fcost(k).clone()).sum();
    for i in 0..inst.n() {
        for k in ma.get(i).iter() {
            total += inst.cc(i, k);
        }
        for j in i + 1..inst.n() {
            if !ma.get(i).intersects(ma.get(j)) {
                total += &(inst.dc(i, j) + inst.dc(i, j));
            }
        }
    }
    total
}

/// Potential for the multi-homing game; same three shapes as the
/// single-facility one, with each separated pair's cost counted once.
pub fn potential_multi(
    inst: &Instance,
    ma: &MultiAssignment,
    kind: PotentialKind,
) -> Result<Rat, ModelError> {
    let alpha = match &kind {
        PotentialKind::Tilde | PotentialKind::Full => Rat::one(),
        PotentialKind::Alpha(a) => {
            check_alpha(a)?;
            a.clone()
        }
    };
    let mut total = Rat::zero();
    for i in 0..inst.n() {
        for k in ma.get(i).iter() {
            total += inst.cc(i, k);
        }
        for j in i + 1..inst.n() {
            if !ma.get(i).intersects(ma.get(j)) {
                total += &(&alpha * inst.dc(i, j));
            }
        }
    }
    if !matches!(kind, PotentialKind::Tilde) {
        for k in ma.open_set().iter() {
            total += inst.fcost(k);
        }
    }
    Ok(total)
}

/// All target sets reachable in one move: every subset of the facilities
/// that drops at most one facility from the agent's current set. Sorted in
/// set order.
pub fn valid_deviations(
    inst: &Instance,
    ma: &MultiAssignment,
    agent: usize,
) -> Result<Vec<FacilitySet>, ModelError> {
    ensure_enumerable(inst)?;
    let own = ma.get(agent);
    let mut out = Vec::new();
    for mask in 0u16..(1 << inst.m()) {
        let cand = FacilitySet::from_mask(mask);
        if own.minus(cand).len() <= 1 {
            out.push(cand);
        }
    }
    out.sort();
    Ok(out)
}

/// Iterate the subsets of `within`, including the empty set.
fn for_each_subset(within: FacilitySet, mut f: impl FnMut(FacilitySet)) {
    let full = within.0;
    let mut sub = full;
    loop {
        f(FacilitySet::from_mask(sub));
        if sub == 0 {
            break;
        }
        sub = (sub - 1) & full;
    }
}

fn nbr_multi_alpha(
    inst: &Instance,
    ma: &MultiAssignment,
    agent: usize,
    facility: usize,
    alpha: &Rat,
) -> Result<FacilitySet, ModelError> {
    ensure_enumerable(inst)?;
    let own = ma.get(agent);
    if !own.contains(facility) {
        return Err(ModelError::Invalid(format!(
            "agent {} does not use facility {}",
            agent + 1,
            facility + 1
        )));
    }
    // A deviation that drops `facility` keeps everything else the agent
    // uses and may join any open facilities it is not already at; joining
    // a closed facility only adds connection cost, so restricting joins to
    // open facilities preserves the minimum.
    let base = own.without(facility);
    let joinable = ma.open_set().minus(own);
    let mut best: Option<(Rat, FacilitySet)> = None;
    for_each_subset(joinable, |join| {
        let cand = base.union(join);
        let cost = cost_after_set(inst, ma, agent, cand, alpha);
        let better = match &best {
            None => true,
            Some((bc, bs)) => {
                cost < *bc || (cost == *bc && (cand.len(), cand) < (bs.len(), *bs))
            }
        };
        if better {
            best = Some((cost, cand));
        }
    });
    Ok(best.expect("the kept set itself is always a candidate").1)
}

/// Best deviation that gives up `facility`: keeps the rest of the agent's
/// set, joins any subset of the other open facilities, and among minima
/// prefers the fewest facilities, then the set-order smallest.
pub fn next_best_response_multi(
    inst: &Instance,
    ma: &MultiAssignment,
    agent: usize,
    facility: usize,
) -> Result<FacilitySet, ModelError> {
    nbr_multi_alpha(inst, ma, agent, facility, &Rat::one())
}

fn q_value_multi_alpha(
    inst: &Instance,
    ma: &MultiAssignment,
    agent: usize,
    facility: usize,
    alpha: &Rat,
) -> Result<Rat, ModelError> {
    let target = nbr_multi_alpha(inst, ma, agent, facility, alpha)?;
    Ok(cost_after_set(inst, ma, agent, target, alpha)
        - cost_with_alpha_multi(inst, ma, agent, alpha))
}

/// How much the agent's cost rises if it must give up `facility` and
/// respond as well as possible: the value of this facility membership to
/// the agent, and the most it can be charged there without destabilizing.
pub fn q_value_multi(
    inst: &Instance,
    ma: &MultiAssignment,
    agent: usize,
    facility: usize,
) -> Result<Rat, ModelError> {
    q_value_multi_alpha(inst, ma, agent, facility, &Rat::one())
}

/// Per-agent, per-facility nonnegative prices. Positive entries must sit
/// on facilities the agent actually uses.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiPricing {
    prices: Vec<BTreeMap<usize, Rat>>,
}

impl MultiPricing {
    pub fn zero(n: usize) -> Self {
        MultiPricing {
            prices: vec![BTreeMap::new(); n],
        }
    }

    pub fn set(&mut self, agent: usize, facility: usize, price: Rat) {
        if price.is_zero() {
            self.prices[agent].remove(&facility);
        } else {
            self.prices[agent].insert(facility, price);
        }
    }

    pub fn get(&self, agent: usize, facility: usize) -> Rat {
        self.prices[agent]
            .get(&facility)
            .cloned()
            .unwrap_or_else(Rat::zero)
    }

    pub fn entries(&self, agent: usize) -> impl Iterator<Item = (usize, &Rat)> {
        self.prices[agent].iter().map(|(&k, v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }
}

/// Per-agent, per-facility nonnegative subsidies paid by the coordinator.
/// Entries on facilities an agent does not use are ignored by the checks.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct MultiSubsidy {
    delta: Vec<BTreeMap<usize, Rat>>,
}

impl MultiSubsidy {
    pub fn zero(n: usize) -> Self {
        MultiSubsidy {
            delta: vec![BTreeMap::new(); n],
        }
    }

    pub fn set(&mut self, agent: usize, facility: usize, amount: Rat) -> Result<(), ModelError> {
        if amount.is_negative() {
            return Err(ModelError::Invalid(format!(
                "subsidy for agent {} at facility {} is negative",
                agent + 1,
                facility + 1
            )));
        }
        if amount.is_zero() {
            self.delta[agent].remove(&facility);
        } else {
            self.delta[agent].insert(facility, amount);
        }
        Ok(())
    }

    pub fn get(&self, agent: usize, facility: usize) -> Rat {
        self.delta[agent]
            .get(&facility)
            .cloned()
            .unwrap_or_else(Rat::zero)
    }

    pub fn total(&self) -> Rat {
        self.delta.iter().flat_map(|m| m.values()).sum()
    }
}

/// A multi assignment together with per-facility prices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiState {
    pub assignment: MultiAssignment,
    pub prices: MultiPricing,
}

impl MultiState {
    pub fn new(assignment: MultiAssignment, prices: MultiPricing) -> Result<Self, ModelError> {
        if prices.len() != assignment.len() {
            return Err(ModelError::Invalid(format!(
                "prices cover {} agents, assignment has {}",
                prices.len(),
                assignment.len()
            )));
        }
        for i in 0..assignment.len() {
            for (k, p) in prices.entries(i) {
                if p.is_negative() {
                    return Err(ModelError::Invalid(format!(
                        "price for agent {} at facility {} is negative",
                        i + 1,
                        k + 1
                    )));
                }
                if !assignment.get(i).contains(k) {
                    return Err(ModelError::Invalid(format!(
                        "agent {} is priced at facility {} it does not use",
                        i + 1,
                        k + 1
                    )));
                }
            }
        }
        Ok(MultiState { assignment, prices })
    }

    pub fn without_prices(assignment: MultiAssignment) -> Self {
        let prices = MultiPricing::zero(assignment.len());
        MultiState { assignment, prices }
    }
}

/// Every open facility's price total must cover its cost exactly.
pub fn budget_balanced_multi(inst: &Instance, state: &MultiState) -> bool {
    for k in state.assignment.open_set().iter() {
        let collected: Rat = state
            .assignment
            .users_of(k)
            .into_iter()
            .map(|i| state.prices.get(i, k))
            .sum();
        if collected != *inst.fcost(k) {
            return false;
        }
    }
    true
}

/// Outcome of the multi stability check. `criterion_stable` holds the
/// sufficient per-agent conditions (join-only moves don't lower the
/// agent's cost; every per-facility net price stays within the facility's
/// Q-value); `literal_stable` holds the result of enumerating every valid
/// deviation directly. The criterion is sound: whenever it accepts an
/// agent, the literal scan agrees.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiStabilityCertificate {
    pub budget_balanced: bool,
    pub criterion_stable: Vec<bool>,
    pub literal_stable: Vec<bool>,
}

impl MultiStabilityCertificate {
    pub fn stable(&self) -> bool {
        self.budget_balanced && self.criterion_stable.iter().all(|&b| b)
    }

    pub fn first_unstable_agent(&self) -> Option<usize> {
        self.criterion_stable.iter().position(|&b| !b)
    }
}

/// What the agent pays on top of distance costs in the current state: the
/// net price over its used facilities; after a deviation it keeps paying
/// only for facilities it kept.
fn net_price_on(
    state: &MultiState,
    subsidy: Option<&MultiSubsidy>,
    agent: usize,
    over: FacilitySet,
) -> Rat {
    let mut total = Rat::zero();
    for k in over.iter() {
        total += &state.prices.get(agent, k);
        if let Some(d) = subsidy {
            total -= &d.get(agent, k);
        }
    }
    total
}

/// Stability check for a priced multi state, with optional coordinator
/// subsidies. Verifies the sufficient conditions per agent and, in
/// parallel, literal deviation-proofness by full enumeration.
pub fn is_stable_multi(
    inst: &Instance,
    state: &MultiState,
    subsidy: Option<&MultiSubsidy>,
) -> Result<MultiStabilityCertificate, ModelError> {
    ensure_enumerable(inst)?;
    state.assignment.check(inst)?;
    let n = inst.n();
    let ma = &state.assignment;
    let all = FacilitySet::from_indices(0..inst.m());
    let mut criterion_stable = Vec::with_capacity(n);
    let mut literal_stable = Vec::with_capacity(n);
    for i in 0..n {
        let own = ma.get(i);
        let tc_here = tc_multi(inst, ma, i);

        let mut criterion = true;
        for_each_subset(all.minus(own), |join| {
            if !join.is_empty() && cost_after_set(inst, ma, i, own.union(join), &Rat::one()) < tc_here
            {
                criterion = false;
            }
        });
        if criterion {
            for k in own.iter() {
                let net = state.prices.get(i, k)
                    - subsidy.map_or_else(Rat::zero, |d| d.get(i, k));
                if net > q_value_multi(inst, ma, i, k)? {
                    criterion = false;
                    break;
                }
            }
        }
        criterion_stable.push(criterion);

        let here = tc_here + net_price_on(state, subsidy, i, own);
        let mut literal = true;
        for cand in valid_deviations(inst, ma, i)? {
            if cand == own {
                continue;
            }
            let there = cost_after_set(inst, ma, i, cand, &Rat::one())
                + net_price_on(state, subsidy, i, own.intersection(cand));
            if there < here {
                literal = false;
                break;
            }
        }
        literal_stable.push(literal);

        assert!(
            !criterion_stable[i] || literal_stable[i],
            "sufficient stability conditions must imply deviation-proofness"
        );
    }
    Ok(MultiStabilityCertificate {
        budget_balanced: budget_balanced_multi(inst, state),
        criterion_stable,
        literal_stable,
    })
}

/// One step of the stabilization dynamics.
#[derive(Clone, Debug)]
pub enum MultiTraceStep {
    Improve {
        agent: usize,
        from: FacilitySet,
        to: FacilitySet,
        potential: Rat,
    },
    Close {
        facility: usize,
        moves: Vec<(usize, FacilitySet, FacilitySet)>,
        potential: Rat,
    },
}

impl MultiTraceStep {
    pub fn potential(&self) -> &Rat {
        match self {
            MultiTraceStep::Improve { potential, .. } => potential,
            MultiTraceStep::Close { potential, .. } => potential,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MultiTrace {
    pub alpha: Rat,
    pub start: MultiAssignment,
    pub start_potential: Rat,
    pub steps: Vec<MultiTraceStep>,
}

/// Two-phase stabilization for the multi-homing game. Phase A lets the
/// lowest-index agent with a strictly improving valid deviation (targets
/// restricted to open facilities) apply its best one; at quiescence,
/// Phase B closes the lowest-index facility whose cost exceeds the total
/// Q-value of its users, moving those users to their precomputed best
/// responses simultaneously. The weighted potential strictly decreases at
/// every step. Prices at the end charge each user its Q-value scaled to
/// exact budget balance. `alpha` weights the disconnection terms
/// (default 1 gives plain best-response dynamics); `start` defaults to
/// everyone staying out.
pub fn stabilize_multi(
    inst: &Instance,
    start: Option<&MultiAssignment>,
    alpha: &Rat,
) -> Result<(MultiState, MultiTrace), ModelError> {
    ensure_enumerable(inst)?;
    check_alpha(alpha)?;
    let mut ma = match start {
        Some(s) => {
            s.check(inst)?;
            s.clone()
        }
        None => MultiAssignment::all_out(inst.n()),
    };
    let n = inst.n();
    let kind = PotentialKind::Alpha(alpha.clone());
    let mut phi = potential_multi(inst, &ma, kind.clone())?;
    let mut trace = MultiTrace {
        alpha: alpha.clone(),
        start: ma.clone(),
        start_potential: phi.clone(),
        steps: Vec::new(),
    };

    'outer: loop {
        // Phase A: first agent with a strictly improving deviation whose
        // target avoids closed facilities.
        let open = ma.open_set();
        for i in 0..n {
            let own = ma.get(i);
            let here = cost_with_alpha_multi(inst, &ma, i, alpha);
            let mut best: Option<(Rat, FacilitySet)> = None;
            for cand in valid_deviations(inst, &ma, i)? {
                if cand == own || !cand.is_subset_of(open) {
                    continue;
                }
                let cost = cost_after_set(inst, &ma, i, cand, alpha);
                let better = match &best {
                    None => cost < here,
                    Some((bc, bs)) => {
                        cost < *bc || (cost == *bc && (cand.len(), cand) < (bs.len(), *bs))
                    }
                };
                if better {
                    best = Some((cost, cand));
                }
            }
            if let Some((_, to)) = best {
                ma.set(i, to);
                let next_phi = potential_multi(inst, &ma, kind.clone())?;
                assert!(next_phi < phi, "improvement step must lower the potential");
                phi = next_phi;
                trace.steps.push(MultiTraceStep::Improve {
                    agent: i,
                    from: own,
                    to,
                    potential: phi.clone(),
                });
                continue 'outer;
            }
        }

        // Phase B: close the first facility whose users' total Q-value
        // does not cover its cost.
        for k in ma.open_set().iter() {
            let users = ma.users_of(k);
            let total_q: Rat = users
                .iter()
                .map(|&i| q_value_multi_alpha(inst, &ma, i, k, alpha))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .sum();
            if *inst.fcost(k) > total_q {
                let mut moves = Vec::with_capacity(users.len());
                for &i in &users {
                    let to = nbr_multi_alpha(inst, &ma, i, k, alpha)?;
                    moves.push((i, ma.get(i), to));
                }
                for &(i, _, to) in &moves {
                    ma.set(i, to);
                }
                let next_phi = potential_multi(inst, &ma, kind.clone())?;
                assert!(next_phi < phi, "closing step must lower the potential");
                phi = next_phi;
                trace.steps.push(MultiTraceStep::Close {
                    facility: k,
                    moves,
                    potential: phi.clone(),
                });
                continue 'outer;
            }
        }

        break;
    }

    // Quiescent: price each open facility by its users' Q-values, scaled
    // to recover the opening cost exactly.
    let mut prices = MultiPricing::zero(n);
    for k in ma.open_set().iter() {
        let users = ma.users_of(k);
        let qs: Vec<Rat> = users
            .iter()
            .map(|&i| q_value_multi_alpha(inst, &ma, i, k, alpha))
            .collect::<Result<_, _>>()?;
        debug_assert!(qs.iter().all(|q| !q.is_negative()));
        let total: Rat = qs.iter().sum();
        if total.is_zero() {
            debug_assert!(inst.fcost(k).is_zero());
            continue;
        }
        let factor = inst.fcost(k) / &total;
        for (&i, q) in users.iter().zip(&qs) {
            prices.set(i, k, q * &factor);
        }
    }
    let state = MultiState::new(ma, prices)?;
    Ok((state, trace))
}

/// Witness that a multi assignment is not optimal, extracted from an
/// infeasible per-facility circulation: the agents in `subset` all give
/// up `facility` and respond as well as possible, landing in a strictly
/// cheaper assignment.
#[derive(Clone, Debug)]
pub struct MultiRefutation {
    pub facility: usize,
    pub subset: Vec<usize>,
    pub assignment: MultiAssignment,
    pub cost: Rat,
}

#[derive(Clone, Debug)]
pub struct MultiPeeringResult {
    pub feasible: bool,
    /// Prices extracted from the user→facility flows, scaled per facility
    /// to exact budget balance.
    pub gamma: MultiPricing,
    /// One antisymmetric payment matrix per open facility, indexed by
    /// agent: p[i][j] > 0 means i pays j within that facility's scheme.
    pub p: BTreeMap<usize, Vec<Vec<Rat>>>,
    /// One per infeasible facility; empty iff `feasible`.
    pub refutations: Vec<MultiRefutation>,
}

impl MultiPeeringResult {
    /// Net payment received by `agent` within `facility`'s scheme.
    pub fn delta(&self, agent: usize, facility: usize) -> Rat {
        match self.p.get(&facility) {
            Some(mat) => mat.iter().map(|row| &row[agent]).sum(),
            None => Rat::zero(),
        }
    }
}

/// Peer payments for the multi-homing game: one circulation per open
/// facility, with each user supplying the Q-value of that membership and
/// peer edges capped by disconnection costs. Every circulation is
/// feasible at a social-cost optimum, and the extracted prices leave each
/// user's net charge γ_i(f_k) − Δ_i(f_k) within its Q-value. An
/// infeasible facility instead yields a strictly cheaper assignment
/// refuting optimality.
pub fn peering_payments_multi(
    inst: &Instance,
    s_star: &MultiAssignment,
) -> Result<MultiPeeringResult, ModelError> {
    ensure_enumerable(inst)?;
    s_star.check(inst)?;
    let n = inst.n();
    let mut gamma = MultiPricing::zero(n);
    let mut p = BTreeMap::new();
    let mut refutations = Vec::new();
    for facility in s_star.open_set().iter() {
        let users = s_star.users_of(facility);
        let supplies: Vec<Rat> = users
            .iter()
            .map(|&i| q_value_multi(inst, s_star, i, facility))
            .collect::<Result<_, _>>()?;
        let cn = facility_circulation(inst, facility, &users, &supplies);
        match feasible_circulation(&cn.net).expect("supplies balance by construction") {
            CirculationOutcome::Feasible { flows } => {
                let mut mat = vec![vec![Rat::zero(); n]; n];
                let mut raw = vec![Rat::zero(); users.len()];
                for e in 0..cn.net.edge_count() {
                    let (from, to, _) = cn.net.edge(e);
                    if flows[e].is_zero() {
                        continue;
                    }
                    if to == cn.facility_node {
                        raw[from] = flows[e].clone();
                    } else if to != cn.z_node {
                        let (i, j) = (cn.users[from], cn.users[to]);
                        mat[i][j] += &flows[e];
                        mat[j][i] -= &flows[e];
                    }
                }
                let total: Rat = raw.iter().sum();
                let cost = inst.fcost(facility);
                if !cost.is_zero() {
                    let factor = cost / &total;
                    for (&i, v) in cn.users.iter().zip(&raw) {
                        gamma.set(i, facility, v * &factor);
                    }
                }
                p.insert(facility, mat);
            }
            CirculationOutcome::Infeasible { violating_set } => {
                let subset: Vec<usize> = violating_set
                    .iter()
                    .filter(|&&node| node < cn.users.len())
                    .map(|&node| cn.users[node])
                    .collect();
                let mut assignment = s_star.clone();
                for &i in &subset {
                    assignment.set(i, next_best_response_multi(inst, s_star, i, facility)?);
                }
                let cost = social_cost_multi(inst, &assignment);
                debug_assert!(
                    cost < social_cost_multi(inst, s_star),
                    "an infeasible cut must refute optimality"
                );
                refutations.push(MultiRefutation {
                    facility,
                    subset,
                    assignment,
                    cost,
                });
            }
        }
    }
    let result = MultiPeeringResult {
        feasible: refutations.is_empty(),
        gamma,
        p,
        refutations,
    };
    #[cfg(debug_assertions)]
    for (&facility, _) in &result.p {
        for i in s_star.users_of(facility) {
            let net = result.gamma.get(i, facility) - result.delta(i, facility);
            debug_assert!(
                net <= q_value_multi(inst, s_star, i, facility)?,
                "extracted prices must stay within each membership's tolerance"
            );
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use proptest::strategy::Strategy as _;

    fn fs(indices: &[usize]) -> FacilitySet {
        FacilitySet::from_indices(indices.iter().copied())
    }

    fn massign(sets: &[&[usize]]) -> MultiAssignment {
        MultiAssignment::new(sets.iter().map(|s| fs(s)).collect())
    }

    #[test]
    fn set_order_is_sequence_lex() {
        let empty = fs(&[]);
        let f1 = fs(&[0]);
        let f12 = fs(&[0, 1]);
        let f2 = fs(&[1]);
        assert!(empty < f1 && f1 < f12 && f12 < f2);
        assert_eq!(format!("{f12}"), "{f1,f2}");
        assert_eq!(format!("{empty}"), "∅");
    }

    #[test]
    fn set_json_round_trip() {
        let s = fs(&[0, 2]);
        let v = s.to_json_value();
        assert_eq!(v, serde_json::json!([1, 3]));
        assert_eq!(FacilitySet::from_json_value(&v, 3).unwrap(), s);
        assert!(FacilitySet::from_json_value(&serde_json::json!([0]), 3).is_err());
        assert!(FacilitySet::from_json_value(&serde_json::json!([4]), 3).is_err());
        assert!(FacilitySet::from_json_value(&serde_json::json!([1, 1]), 3).is_err());
    }

    #[test]
    fn tc_multi_shares_one_facility() {
        let inst = fixtures::m1();
        let ma = massign(&[&[0, 1], &[1]]);
        assert_eq!(tc_multi(&inst, &ma, 0), Rat::one());
        let apart = massign(&[&[0], &[1]]);
        assert_eq!(tc_multi(&inst, &apart, 0), Rat::from_int(3));
    }

    #[test]
    fn tc_multi_lone_empty_agent() {
        let inst = Instance::new(
            vec![vec![Rat::one()]],
            vec![vec![Rat::zero()]],
            vec![Rat::one()],
        )
        .unwrap();
        let ma = MultiAssignment::all_out(1);
        assert_eq!(tc_multi(&inst, &ma, 0), Rat::zero());
    }

    #[test]
    fn valid_deviations_drop_at_most_one() {
        let inst = fixtures::m1();
        let ma = massign(&[&[0], &[1]]);
        let devs = valid_deviations(&inst, &ma, 0).unwrap();
        assert_eq!(devs, vec![fs(&[]), fs(&[0]), fs(&[0, 1]), fs(&[1])]);

        let both = massign(&[&[0, 1], &[1]]);
        let devs = valid_deviations(&inst, &both, 0).unwrap();
        assert_eq!(devs, vec![fs(&[0]), fs(&[0, 1]), fs(&[1])]);

        let out = MultiAssignment::all_out(2);
        let devs = valid_deviations(&inst, &out, 0).unwrap();
        assert_eq!(devs.len(), 4);
    }

    #[test]
    fn valid_deviations_caps_facility_count() {
        let inst = Instance::new(
            vec![vec![Rat::zero(); 13]],
            vec![vec![Rat::zero()]],
            vec![Rat::zero(); 13],
        )
        .unwrap();
        let ma = MultiAssignment::all_out(1);
        assert!(matches!(
            valid_deviations(&inst, &ma, 0),
            Err(ModelError::TooLarge(_))
        ));
    }

    #[test]
    fn q_value_multi_examples() {
        let inst = fixtures::m1();
        let ma = massign(&[&[0, 1], &[1]]);
        assert_eq!(q_value_multi(&inst, &ma, 0, 1).unwrap(), Rat::from_int(2));
        assert_eq!(q_value_multi(&inst, &ma, 0, 0).unwrap(), Rat::zero());
        assert!(q_value_multi(&inst, &ma, 1, 0).is_err());
    }

    #[test]
    fn q_value_multi_single_agent_is_negated_connection_cost() {
        let inst = Instance::new(
            vec![vec![Rat::ratio(7, 2)]],
            vec![vec![Rat::zero()]],
            vec![Rat::zero()],
        )
        .unwrap();
        let ma = massign(&[&[0]]);
        assert_eq!(
            q_value_multi(&inst, &ma, 0, 0).unwrap(),
            -Rat::ratio(7, 2)
        );
    }

    #[test]
    fn stability_all_zero_instance() {
        let inst = Instance::new(
            vec![vec![Rat::zero(); 2]; 2],
            vec![vec![Rat::zero(); 2]; 2],
            vec![Rat::zero(); 2],
        )
        .unwrap();
        let state = MultiState::without_prices(massign(&[&[0], &[1]]));
        let cert = is_stable_multi(&inst, &state, None).unwrap();
        assert!(cert.stable());
        assert!(cert.literal_stable.iter().all(|&b| b));
    }

    #[test]
    fn stability_rejects_price_above_q() {
        let inst = fixtures::m1();
        let ma = massign(&[&[0, 1], &[1]]);
        let mut prices = MultiPricing::zero(2);
        prices.set(0, 0, Rat::ratio(1, 2));
        let state = MultiState::new(ma, prices).unwrap();
        let cert = is_stable_multi(&inst, &state, None).unwrap();
        assert!(!cert.criterion_stable[0]);
        assert!(!cert.literal_stable[0]);
        assert_eq!(cert.first_unstable_agent(), Some(0));
        assert!(!cert.stable());
    }

    #[test]
    fn price_support_must_match_assignment() {
        let ma = massign(&[&[0], &[1]]);
        let mut prices = MultiPricing::zero(2);
        prices.set(0, 1, Rat::one());
        assert!(MultiState::new(ma, prices).is_err());
    }

    #[test]
    fn stabilize_multi_from_shared_optimum() {
        let inst = fixtures::m1();
        // Brute-force optimum of the two-facility instance: agent 1 at
        // both facilities, agent 2 at the second; cost 1.
        let opt = massign(&[&[0, 1], &[1]]);
        assert_eq!(social_cost_multi(&inst, &opt), Rat::one());
        let (state, trace) = stabilize_multi(&inst, Some(&opt), &Rat::one()).unwrap();
        let cert = is_stable_multi(&inst, &state, None).unwrap();
        assert!(cert.stable());
        assert!(cert.literal_stable.iter().all(|&b| b));
        assert!(social_cost_multi(&inst, &state.assignment) <= Rat::from_int(2));
        for w in trace.steps.windows(2) {
            assert!(w[1].potential() < w[0].potential());
        }
    }

    #[test]
    fn stabilize_multi_two_agents_one_free_facility() {
        let inst = fixtures::t2();
        let start = massign(&[&[0], &[0]]);
        let (state, trace) = stabilize_multi(&inst, Some(&start), &Rat::one()).unwrap();
        assert_eq!(state.assignment, start);
        assert!(trace.steps.is_empty());
        assert_eq!(state.prices.get(0, 0), Rat::zero());
        assert_eq!(social_cost_multi(&inst, &state.assignment), Rat::zero());
        assert!(is_stable_multi(&inst, &state, None).unwrap().stable());
    }

    #[test]
    fn stabilize_multi_default_start_is_all_out() {
        let inst = fixtures::m1();
        let (state, _) = stabilize_multi(&inst, None, &Rat::one()).unwrap();
        // Nobody can join a closed facility during the dynamics, so the
        // all-out start is already quiescent — and genuinely stable.
        assert_eq!(state.assignment, MultiAssignment::all_out(2));
        assert!(is_stable_multi(&inst, &state, None).unwrap().stable());
    }

    fn arb_multi_case() -> impl proptest::strategy::Strategy<
        Value = (Instance, Vec<u16>, usize, u16),
    > {
        (2usize..4, 1usize..4).prop_flat_map(|(n, m)| {
            let cc = proptest::collection::vec(0i64..5, n * m);
            let dc = proptest::collection::vec(0i64..5, n * (n - 1) / 2);
            let fc = proptest::collection::vec(0i64..5, m);
            let sets = proptest::collection::vec(0u16..(1 << m), n);
            let agent = 0usize..n;
            let target = 0u16..(1 << m);
            (cc, dc, fc, sets, agent, target).prop_map(
                move |(cc, dc, fc, sets, agent, target)| {
                    let cc = (0..n)
                        .map(|i| (0..m).map(|k| Rat::from_int(cc[i * m + k])).collect())
                        .collect();
                    let mut dcm = vec![vec![Rat::zero(); n]; n];
                    let mut idx = 0;
                    for i in 0..n {
                        for j in i + 1..n {
                            dcm[i][j] = Rat::from_int(dc[idx]);
                            dcm[j][i] = dcm[i][j].clone();
                            idx += 1;
                        }
                    }
                    let fc = fc.into_iter().map(Rat::from_int).collect();
                    (Instance::new(cc, dcm, fc).unwrap(), sets, agent, target)
                },
            )
        })
    }

    #[test]
    fn multi_peering_at_optimum_needs_no_money() {
        let inst = fixtures::m1();
        let (opt, cost) = crate::oracle::brute_force_optimum_multi(&inst).unwrap();
        assert_eq!(opt, massign(&[&[0, 1], &[1]]));
        assert_eq!(cost, Rat::one());
        let out = peering_payments_multi(&inst, &opt).unwrap();
        assert!(out.feasible);
        assert!(out.p.values().flatten().flatten().all(Rat::is_zero));
        for i in 0..inst.n() {
            assert_eq!(out.gamma.entries(i).count(), 0);
            for k in 0..inst.m() {
                assert_eq!(out.delta(i, k), Rat::zero());
            }
        }
    }

    #[test]
    fn multi_peering_mirrors_the_single_facility_scheme() {
        // The single-facility gap fixture embeds verbatim: the tolerant
        // agent routes 1/2 to its reluctant peer.
        let inst = fixtures::t1();
        let target = massign(&[&[0], &[0]]);
        assert_eq!(q_value_multi(&inst, &target, 0, 0).unwrap(), Rat::one());
        assert_eq!(
            q_value_multi(&inst, &target, 1, 0).unwrap(),
            Rat::ratio(-1, 2)
        );
        let out = peering_payments_multi(&inst, &target).unwrap();
        assert!(out.feasible);
        assert_eq!(out.p[&0][0][1], Rat::ratio(1, 2));
        assert_eq!(out.p[&0][1][0], Rat::ratio(-1, 2));
        assert_eq!(out.delta(1, 0), Rat::ratio(1, 2));
        assert_eq!(out.gamma.entries(0).count(), 0);
    }

    #[test]
    fn multi_peering_single_user_facilities() {
        // Free single-user facilities are trivially feasible (the lone
        // user tolerates exactly zero); costly ones are infeasible and
        // each refutation drops the facility that cannot pay for itself.
        let cc = vec![
            vec![Rat::zero(), Rat::from_int(5)],
            vec![Rat::from_int(5), Rat::zero()],
        ];
        let dc = vec![vec![Rat::zero(); 2]; 2];
        let free = Instance::new(cc.clone(), dc.clone(), vec![Rat::zero(); 2]).unwrap();
        let apart = massign(&[&[0], &[1]]);
        let out = peering_payments_multi(&free, &apart).unwrap();
        assert!(out.feasible);
        assert!(out.p.values().flatten().flatten().all(Rat::is_zero));

        let costly = Instance::new(cc, dc, vec![Rat::one(), Rat::one()]).unwrap();
        let out = peering_payments_multi(&costly, &apart).unwrap();
        assert!(!out.feasible);
        assert_eq!(out.refutations.len(), 2);
        let r = &out.refutations[0];
        assert_eq!(r.facility, 0);
        assert_eq!(r.subset, vec![0]);
        assert_eq!(r.assignment, massign(&[&[], &[1]]));
        assert_eq!(r.cost, Rat::one());
        assert!(r.cost < social_cost_multi(&costly, &apart));
    }

    proptest! {
        // Any unilateral set change moves the pairwise potential by
        // exactly the deviator's cost change.
        #[test]
        fn multi_potential_is_exact((inst, sets, agent, target) in arb_multi_case()) {
            let ma = MultiAssignment::new(
                sets.into_iter().map(|mask| {
                    FacilitySet::from_indices((0..inst.m()).filter(|k| mask & (1 << k) != 0))
                }).collect(),
            );
            let target = FacilitySet::from_indices(
                (0..inst.m()).filter(|k| target & (1 << k) != 0),
            );
            let before_tc = tc_multi(&inst, &ma, agent);
            let before_phi = potential_multi(&inst, &ma, PotentialKind::Tilde).unwrap();
            let mut moved = ma.clone();
            moved.set(agent, target);
            let after_tc = tc_multi(&inst, &moved, agent);
            let after_phi = potential_multi(&inst, &moved, PotentialKind::Tilde).unwrap();
            prop_assert_eq!(after_tc - before_tc, after_phi - before_phi);
        }

        // Stabilization terminates in a stable, budget-balanced state and
        // its trace potentials strictly decrease.
        #[test]
        fn stabilize_multi_lands_stable((inst, sets, _, _) in arb_multi_case()) {
            let ma = MultiAssignment::new(
                sets.into_iter().map(|mask| {
                    FacilitySet::from_indices((0..inst.m()).filter(|k| mask & (1 << k) != 0))
                }).collect(),
            );
            let (state, trace) = stabilize_multi(&inst, Some(&ma), &Rat::one()).unwrap();
            let cert = is_stable_multi(&inst, &state, None).unwrap();
            prop_assert!(cert.stable());
            prop_assert!(cert.literal_stable.iter().all(|&b| b));
            let mut last = trace.start_potential.clone();
            for step in &trace.steps {
                prop_assert!(step.potential() < &last);
                last = step.potential().clone();
            }
        }

        // Peering circulations at the multi optimum are always feasible,
        // pay within disconnection costs, balance every budget exactly,
        // and keep each user's net charge within its Q-value. At random
        // targets feasibility still implies those bounds, and every
        // infeasibility yields a strictly cheaper assignment.
        #[test]
        fn multi_peering_feasible_at_optimum((inst, sets, _, _) in arb_multi_case()) {
            let (opt, _) = crate::oracle::brute_force_optimum_multi(&inst).unwrap();
            let out = peering_payments_multi(&inst, &opt).unwrap();
            prop_assert!(out.feasible);

            let ma = MultiAssignment::new(
                sets.into_iter().map(|mask| {
                    FacilitySet::from_indices((0..inst.m()).filter(|k| mask & (1 << k) != 0))
                }).collect(),
            );
            for (target, out) in [(&opt, &out), (&ma, &peering_payments_multi(&inst, &ma).unwrap())] {
                for (&k, mat) in &out.p {
                    let users = target.users_of(k);
                    for i in 0..inst.n() {
                        for j in 0..inst.n() {
                            prop_assert!(&mat[i][j] + &mat[j][i] == Rat::zero());
                            if mat[i][j].is_positive() {
                                prop_assert!(&mat[i][j] <= inst.dc(i, j));
                                prop_assert!(users.contains(&i) && users.contains(&j));
                            }
                        }
                    }
                    let collected: Rat = users.iter().map(|&i| out.gamma.get(i, k)).sum();
                    prop_assert_eq!(&collected, inst.fcost(k));
                    for &i in &users {
                        let net = out.gamma.get(i, k) - out.delta(i, k);
                        prop_assert!(net <= q_value_multi(&inst, target, i, k).unwrap());
                    }
                }
                let base = social_cost_multi(&inst, target);
                for r in &out.refutations {
                    prop_assert!(!target.users_of(r.facility).is_empty());
                    prop_assert!(r.cost < base);
                    prop_assert_eq!(social_cost_multi(&inst, &r.assignment), r.cost.clone());
                }
            }
        }
    }
}
