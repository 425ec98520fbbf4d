//! Stabilizing a target assignment with money: coordinator payments (the
//! direct Q-value scheme and its payment/PoS tradeoff), peer payments
//! extracted from per-facility circulations, and disconnection-weight
//! doubling that internalizes those peer payments into the instance.

use crate::flow::{self, Capacity, CirculationOutcome, FlowNetwork};
use crate::model::{
    next_best_response, potential, q_value, social_cost, tc_after_move, Assignment, Instance,
    ModelError, NextBest, PaymentVector, PotentialKind, PricingStrategy, QValue, Strategy,
};
use crate::oracle::{self, RatioOutcome};
use crate::rat::Rat;
use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PaymentError {
    /// Even charging every tolerant agent its full Q-value leaves the
    /// facility short. Cannot happen at a social-cost optimum, so it
    /// refutes optimality of the target assignment.
    BudgetShortfall { facility: usize, shortfall: Rat },
    /// A per-facility circulation admits no feasible routing, so no peer
    /// payment scheme stabilizes the target (again refuting optimality).
    InfeasibleCirculation { facility: usize },
    Model(ModelError),
}

impl fmt::Display for PaymentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PaymentError::BudgetShortfall { facility, shortfall } => write!(
                f,
                "facility {} cannot be paid for: prices fall short by {}",
                facility + 1,
                shortfall
            ),
            PaymentError::InfeasibleCirculation { facility } => write!(
                f,
                "no feasible peer-payment circulation for facility {}",
                facility + 1
            ),
            PaymentError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for PaymentError {}

impl From<ModelError> for PaymentError {
    fn from(e: ModelError) -> Self {
        PaymentError::Model(e)
    }
}

fn finite_q(inst: &Instance, a: &Assignment, agent: usize) -> Option<Rat> {
    match q_value(inst, a, agent) {
        QValue::Finite(v) => Some(v),
        QValue::NoAlternative => None,
    }
}

/// The direct coordinator scheme: agents who would rather leave
/// (Q_i < 0) are paid Δ_i = −Q_i and charged nothing; tolerant agents
/// (Q_i ≥ 0) are charged their Q-value, scaled down per facility to exact
/// budget balance. Every agent then satisfies γ_i − Δ_i ≤ Q_i, so the
/// state is stable. Fails with a budget shortfall when the tolerant
/// agents' Q-values cannot cover a facility — impossible at a true
/// optimum.
pub fn direct_payment_scheme(
    inst: &Instance,
    s_star: &Assignment,
) -> Result<(PricingStrategy, PaymentVector), PaymentError> {
    inst.check_assignment(s_star)?;
    let n = inst.n();
    let mut deltas = vec![Rat::zero(); n];
    for (i, d) in deltas.iter_mut().enumerate() {
        if let Some(q) = finite_q(inst, s_star, i) {
            if q.is_negative() {
                *d = -q;
            }
        }
    }
    let mut gamma = PricingStrategy::none(n);
    for k in 0..inst.m() {
        let users = s_star.users_of(k);
        if users.is_empty() {
            continue;
        }
        let tolerance: Vec<Rat> = users
            .iter()
            .map(|&i| {
                let q = finite_q(inst, s_star, i).expect("placed agents can stay out");
                if q.is_negative() {
                    Rat::zero()
                } else {
                    q
                }
            })
            .collect();
        let total: Rat = tolerance.iter().sum();
        let cost = inst.fcost(k);
        if total < *cost {
            return Err(PaymentError::BudgetShortfall {
                facility: k,
                shortfall: cost - &total,
            });
        }
        if cost.is_zero() {
            continue;
        }
        let factor = cost / &total;
        for (&i, q) in users.iter().zip(&tolerance) {
            gamma.set(i, k, q * &factor);
        }
    }
    let payments = PaymentVector::coordinator(deltas).expect("deltas are nonnegative");
    Ok((gamma, payments))
}

/// The cheapest total coordinator outlay that stabilizes `s_star`:
/// every agent needs at least Δ_i = max(0, −Q_i) (prices are nonnegative
/// and γ_i − Δ_i ≤ Q_i must hold), and after those payments each open
/// facility can still collect at most Σ max(0, Q_i) from its users, so any
/// remaining gap to the opening cost must be paid out as extra Δ. Both
/// bounds are tight: spreading exactly these amounts stabilizes. This is a
/// diagnostic companion to [`direct_payment_scheme`], whose total equals
/// it whenever the direct scheme succeeds.
pub fn minimal_stabilizing_payment(
    inst: &Instance,
    s_star: &Assignment,
) -> Result<Rat, ModelError> {
    inst.check_assignment(s_star)?;
    let mut total = Rat::zero();
    for i in 0..inst.n() {
        if let Some(q) = finite_q(inst, s_star, i) {
            if q.is_negative() {
                total -= &q;
            }
        }
    }
    for k in 0..inst.m() {
        let users = s_star.users_of(k);
        if users.is_empty() {
            continue;
        }
        let collectable: Rat = users
            .iter()
            .map(|&i| {
                let q = finite_q(inst, s_star, i).expect("placed agents can stay out");
                if q.is_negative() {
                    Rat::zero()
                } else {
                    q
                }
            })
            .sum();
        if collectable < *inst.fcost(k) {
            total += inst.fcost(k) - &collectable;
        }
    }
    Ok(total)
}

/// Payment/stability tradeoff at the optimum: the direct scheme's total
/// payment, as a fraction of the optimal social cost, never exceeds
/// 1 − (2/5)·PoS.
#[derive(Clone, Debug)]
pub struct TradeoffOutcome {
    pub optimum: Assignment,
    pub opt_cost: Rat,
    /// Total coordinator payment of the direct scheme at the optimum.
    pub delta: Rat,
    pub pos: Rat,
    /// delta / opt_cost; zero when the optimum costs nothing.
    pub ratio: Rat,
    /// 1 − (2/5)·pos.
    pub bound: Rat,
    pub ok: bool,
}

pub fn tradeoff_check(inst: &Instance) -> Result<TradeoffOutcome, PaymentError> {
    let (optimum, opt_cost) = oracle::brute_force_optimum(inst)?;
    let (_, payments) = direct_payment_scheme(inst, &optimum)?;
    let delta = payments.total();
    let pos = match oracle::price_of_stability(inst)? {
        RatioOutcome::Finite(v) => v,
        // A zero-cost optimum is itself stable (zero prices balance zero
        // facility costs), so the stable-state set never forces this.
        RatioOutcome::Unbounded => unreachable!("optimum is stable when it costs nothing"),
    };
    let bound = Rat::one() - Rat::ratio(2, 5) * &pos;
    let ratio = if opt_cost.is_zero() {
        debug_assert!(delta.is_zero());
        Rat::zero()
    } else {
        &delta / &opt_cost
    };
    let ok = ratio <= bound;
    Ok(TradeoffOutcome {
        optimum,
        opt_cost,
        delta,
        pos,
        ratio,
        bound,
        ok,
    })
}

/// Per-agent cheapest unilateral deviation and the derived decomposition
/// used by the tradeoff argument: b_i minimizes tc over staying, leaving,
/// or any facility open in the base assignment; agents moving to
/// higher-numbered facilities (plus everyone not switching between two
/// facilities) form `a1`, the rest `a2`, so that no two agents within a
/// part trade facilities with each other.
#[derive(Clone, Debug)]
pub struct WitnessStates {
    pub b: Vec<Strategy>,
    pub a1: Vec<usize>,
    pub a2: Vec<usize>,
    /// Everyone moves to b.
    pub s0: Assignment,
    /// Only `a1` moves.
    pub s1: Assignment,
    /// Only `a2` moves.
    pub s2: Assignment,
    /// Σ_i tc_i(b_i, s*_{−i}).
    pub deviation_total: Rat,
    /// Which of s0, s1, s2 satisfy deviation_total ≥ (4/5)·Φ̃.
    pub witness: [bool; 3],
}

impl WitnessStates {
    /// At a social-cost optimum at least one candidate always witnesses.
    pub fn witness_holds(&self) -> bool {
        self.witness.iter().any(|&w| w)
    }
}

pub fn witness_states(inst: &Instance, s_star: &Assignment) -> Result<WitnessStates, ModelError> {
    inst.check_assignment(s_star)?;
    let n = inst.n();
    let mut b: Vec<Strategy> = Vec::with_capacity(n);
    for i in 0..n {
        let own = s_star.get(i);
        let mut candidates: Vec<Strategy> = vec![own];
        if own.is_some() {
            candidates.push(None);
        }
        candidates.extend(
            (0..inst.m())
                .filter(|&k| Some(k) != own && s_star.is_open(k))
                .map(Some),
        );
        let mut best: Option<(Strategy, Rat)> = None;
        for cand in candidates {
            let cost = tc_after_move(inst, s_star, i, cand);
            match &best {
                Some((_, bc)) if cost >= *bc => {}
                _ => best = Some((cand, cost)),
            }
        }
        b.push(best.expect("candidate list is never empty").0);
    }

    let mut a1 = Vec::new();
    let mut a2 = Vec::new();
    for i in 0..n {
        match (s_star.get(i), b[i]) {
            (Some(from), Some(to)) if to < from => a2.push(i),
            _ => a1.push(i),
        }
    }
    debug_assert!(no_facility_swap(s_star, &b, &a1) && no_facility_swap(s_star, &b, &a2));

    let s0 = Assignment::new(b.clone());
    let mut s1 = s_star.clone();
    for &i in &a1 {
        s1.set(i, b[i]);
    }
    let mut s2 = s_star.clone();
    for &i in &a2 {
        s2.set(i, b[i]);
    }
    let deviation_total: Rat = (0..n).map(|i| tc_after_move(inst, s_star, i, b[i])).sum();
    let mut witness = [false; 3];
    for (w, s) in witness.iter_mut().zip([&s0, &s1, &s2]) {
        let phi = potential(inst, s, PotentialKind::Tilde)?;
        *w = Rat::from_int(5) * &deviation_total >= Rat::from_int(4) * &phi;
    }
    Ok(WitnessStates {
        b,
        a1,
        a2,
        s0,
        s1,
        s2,
        deviation_total,
        witness,
    })
}

/// No two agents in `part` swap facilities: i at x moving to y while j at
/// y moves to x (x ≠ y both facilities). Deviations through ∅ never
/// double-count a disconnection, so only facility swaps matter.
fn no_facility_swap(s_star: &Assignment, b: &[Strategy], part: &[usize]) -> bool {
    for (pos, &i) in part.iter().enumerate() {
        for &j in &part[pos + 1..] {
            if let (Some(xi), Some(bi), Some(xj), Some(bj)) =
                (s_star.get(i), b[i], s_star.get(j), b[j])
            {
                if xi != xj && bi == xj && bj == xi {
                    return false;
                }
            }
        }
    }
    true
}

/// The circulation whose feasibility decides whether peer payments can
/// stabilize one facility: its users supply their Q-values, the facility
/// demands its opening cost, peer edges are capped by disconnection
/// costs, and a drain absorbs any surplus.
#[derive(Clone, Debug)]
pub struct CirculationNetwork {
    pub facility: usize,
    /// Agents using the facility, ascending; node i of `net` is users[i].
    pub users: Vec<usize>,
    pub net: FlowNetwork,
    pub facility_node: usize,
    pub z_node: usize,
}

/// Shared construction: `supplies[p]` belongs to `users[p]`; peer edges
/// i→j and j→i get capacity dc(i,j), every user connects to the facility
/// node and the facility to the drain with unbounded capacity.
pub(crate) fn facility_circulation(
    inst: &Instance,
    facility: usize,
    users: &[usize],
    supplies: &[Rat],
) -> CirculationNetwork {
    let u = users.len();
    let facility_node = u;
    let z_node = u + 1;
    let mut net = FlowNetwork::new(u + 2);
    let mut supply_sum = Rat::zero();
    for (p, (&i, q)) in users.iter().zip(supplies).enumerate() {
        net.set_supply(p, q.clone());
        supply_sum += q;
        for (r, &j) in users.iter().enumerate() {
            if r != p && !inst.dc(i, j).is_zero() {
                net.add_edge(p, r, Capacity::Finite(inst.dc(i, j).clone()));
            }
        }
        net.add_edge(p, facility_node, Capacity::Infinite);
    }
    net.add_edge(facility_node, z_node, Capacity::Infinite);
    net.set_supply(facility_node, -inst.fcost(facility));
    net.set_supply(z_node, inst.fcost(facility) - &supply_sum);
    CirculationNetwork {
        facility,
        users: users.to_vec(),
        net,
        facility_node,
        z_node,
    }
}

/// Build the peer-payment circulation for one facility open in `s_star`.
pub fn build_circulation(
    inst: &Instance,
    s_star: &Assignment,
    facility: usize,
) -> Result<CirculationNetwork, ModelError> {
    inst.check_assignment(s_star)?;
    let users = s_star.users_of(facility);
    if users.is_empty() {
        return Err(ModelError::Invalid(format!(
            "facility {} is not open in the target assignment",
            facility + 1
        )));
    }
    let supplies: Vec<Rat> = users
        .iter()
        .map(|&i| finite_q(inst, s_star, i).expect("placed agents can stay out"))
        .collect();
    Ok(facility_circulation(inst, facility, &users, &supplies))
}

/// Witness that `s_star` is not optimal, extracted from an infeasible
/// circulation: moving `subset` to their next best responses lands in
/// `assignment`, whose social cost is strictly below that of `s_star`.
#[derive(Clone, Debug)]
pub struct Refutation {
    pub facility: usize,
    pub subset: Vec<usize>,
    pub assignment: Assignment,
    pub cost: Rat,
}

#[derive(Clone, Debug)]
pub struct PeeringResult {
    pub feasible: bool,
    /// Prices extracted from the user→facility flows, scaled to exact
    /// budget balance.
    pub gamma: PricingStrategy,
    /// Antisymmetric peer payments: p[i][j] > 0 means i pays j. Nonzero
    /// only between agents sharing a facility.
    pub p: Vec<Vec<Rat>>,
    /// Net received payment per agent, Δ_i = Σ_j p[j][i].
    pub payments: PaymentVector,
    /// One per infeasible facility; empty iff `feasible`.
    pub refutations: Vec<Refutation>,
}

/// Stabilize `s_star` by letting agents pay each other (at most dc(i,j)
/// between i and j) on top of facility prices: solve one circulation per
/// open facility and read prices and peer payments off the flows. Always
/// feasible at a social-cost optimum; each infeasibility yields a
/// strictly cheaper assignment refuting optimality.
pub fn peering_payments(inst: &Instance, s_star: &Assignment) -> Result<PeeringResult, ModelError> {
    inst.check_assignment(s_star)?;
    let n = inst.n();
    let mut gamma = PricingStrategy::none(n);
    let mut p = vec![vec![Rat::zero(); n]; n];
    let mut refutations = Vec::new();
    for facility in 0..inst.m() {
        if !s_star.is_open(facility) {
            continue;
        }
        let cn = build_circulation(inst, s_star, facility)?;
        match flow::feasible_circulation(&cn.net).expect("supplies balance by construction") {
            CirculationOutcome::Feasible { flows } => {
                let mut raw = vec![Rat::zero(); cn.users.len()];
                for e in 0..cn.net.edge_count() {
                    let (from, to, _) = cn.net.edge(e);
                    if flows[e].is_zero() {
                        continue;
                    }
                    if to == cn.facility_node {
                        raw[from] = flows[e].clone();
                    } else if to != cn.z_node {
                        let (i, j) = (cn.users[from], cn.users[to]);
                        p[i][j] += &flows[e];
                        p[j][i] -= &flows[e];
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
            }
            CirculationOutcome::Infeasible { violating_set } => {
                let subset: Vec<usize> = violating_set
                    .iter()
                    .filter(|&&node| node < cn.users.len())
                    .map(|&node| cn.users[node])
                    .collect();
                let mut assignment = s_star.clone();
                for &i in &subset {
                    let to = match next_best_response(inst, s_star, i) {
                        NextBest::Strategy(t) => t,
                        NextBest::NoAlternative => {
                            unreachable!("placed agents can always stay out")
                        }
                    };
                    assignment.set(i, to);
                }
                let cost = social_cost(inst, &assignment);
                debug_assert!(
                    cost < social_cost(inst, s_star),
                    "an infeasible cut must refute optimality"
                );
                refutations.push(Refutation {
                    facility,
                    subset,
                    assignment,
                    cost,
                });
            }
        }
    }
    let deltas: Vec<Rat> = (0..n).map(|i| (0..n).map(|j| &p[j][i]).sum()).collect();
    Ok(PeeringResult {
        feasible: refutations.is_empty(),
        gamma,
        p,
        payments: PaymentVector::net(deltas),
        refutations,
    })
}

/// Fold the peer payments of a feasible peering scheme into the instance:
/// each pair's disconnection cost grows by the net payment between them
/// (still at most doubling it). In the new instance the target assignment
/// is stable with the circulation prices alone — no payments change hands.
pub fn doubled_weights(
    inst: &Instance,
    s_star: &Assignment,
) -> Result<(Instance, PricingStrategy), PaymentError> {
    let peering = peering_payments(inst, s_star)?;
    if !peering.feasible {
        return Err(PaymentError::InfeasibleCirculation {
            facility: peering.refutations[0].facility,
        });
    }
    let n = inst.n();
    let mut dc = vec![vec![Rat::zero(); n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let shift = if peering.p[i][j].is_negative() {
                    -&peering.p[i][j]
                } else {
                    peering.p[i][j].clone()
                };
                dc[i][j] = inst.dc(i, j) + &shift;
            }
        }
    }
    let doubled = inst.with_dc(dc)?;
    Ok((doubled, peering.gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{t1, t2};
    use crate::lp::{self, LpOutcome, Sense};
    use crate::model::{is_stable, tc, State};
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use proptest::strategy::Strategy as _;

    fn at(slots: &[i64]) -> Assignment {
        Assignment::new(
            slots
                .iter()
                .map(|&v| if v < 0 { None } else { Some(v as usize) })
                .collect(),
        )
    }

    #[test]
    fn direct_scheme_pays_the_reluctant_agent() {
        let inst = t1();
        let (gamma, payments) = direct_payment_scheme(&inst, &at(&[0, 0])).unwrap();
        assert_eq!(payments.deltas(), &[Rat::zero(), Rat::ratio(1, 2)]);
        assert_eq!(payments.total(), Rat::ratio(1, 2));
        assert_eq!(gamma.entries().count(), 0);
        let state = State::new(at(&[0, 0]), gamma).unwrap();
        assert!(is_stable(&inst, &state, Some(&payments)).stable());
    }

    #[test]
    fn direct_scheme_is_empty_when_all_agents_tolerate() {
        let inst = t2();
        let (gamma, payments) = direct_payment_scheme(&inst, &at(&[0, 0])).unwrap();
        assert_eq!(payments.total(), Rat::zero());
        assert_eq!(gamma.entries().count(), 0);
        let state = State::new(at(&[0, 0]), gamma).unwrap();
        assert!(is_stable(&inst, &state, Some(&payments)).stable());
    }

    #[test]
    fn direct_scheme_on_closed_optimum_is_empty() {
        let inst = Instance::new(
            vec![vec![Rat::zero()]],
            vec![vec![Rat::zero()]],
            vec![Rat::from_int(2)],
        )
        .unwrap();
        let (gamma, payments) = direct_payment_scheme(&inst, &at(&[-1])).unwrap();
        assert_eq!(payments.total(), Rat::zero());
        assert_eq!(gamma.entries().count(), 0);
    }

    #[test]
    fn direct_scheme_reports_shortfall_off_optimum() {
        // A lone agent at a facility costing 2 tolerates no price (its
        // alternative ∅ is free), so the budget cannot balance.
        let inst = Instance::new(
            vec![vec![Rat::zero()]],
            vec![vec![Rat::zero()]],
            vec![Rat::from_int(2)],
        )
        .unwrap();
        match direct_payment_scheme(&inst, &at(&[0])) {
            Err(PaymentError::BudgetShortfall { facility, shortfall }) => {
                assert_eq!(facility, 0);
                assert_eq!(shortfall, Rat::from_int(2));
            }
            other => panic!("expected a budget shortfall, got {other:?}"),
        }
    }

    #[test]
    fn tradeoff_bound_on_gap_instance() {
        let out = tradeoff_check(&t1()).unwrap();
        assert_eq!(out.opt_cost, Rat::ratio(3, 2));
        assert_eq!(out.delta, Rat::ratio(1, 2));
        assert_eq!(out.ratio, Rat::ratio(1, 3));
        assert_eq!(out.pos, Rat::ratio(4, 3));
        assert_eq!(out.bound, Rat::ratio(7, 15));
        assert!(out.ok);
    }

    #[test]
    fn tradeoff_trivial_on_free_instance() {
        let out = tradeoff_check(&t2()).unwrap();
        assert_eq!(out.delta, Rat::zero());
        assert_eq!(out.ratio, Rat::zero());
        assert_eq!(out.pos, Rat::one());
        assert_eq!(out.bound, Rat::ratio(3, 5));
        assert!(out.ok);
    }

    #[test]
    fn witness_states_on_gap_instance() {
        let inst = t1();
        let w = witness_states(&inst, &at(&[0, 0])).unwrap();
        assert_eq!(w.b, vec![Some(0), None]);
        assert_eq!(w.a1, vec![0, 1]);
        assert!(w.a2.is_empty());
        assert_eq!(w.s0, at(&[0, -1]));
        assert_eq!(w.s1, at(&[0, -1]));
        assert_eq!(w.s2, at(&[0, 0]));
        assert_eq!(w.deviation_total, Rat::one());
        assert!(w.witness[0]);
        assert!(w.witness_holds());
    }

    #[test]
    fn witness_states_trivial_when_target_is_best_response() {
        let inst = t2();
        let w = witness_states(&inst, &at(&[0, 0])).unwrap();
        assert_eq!(w.b, vec![Some(0), Some(0)]);
        assert_eq!(w.s0, at(&[0, 0]));
        assert_eq!(w.s1, at(&[0, 0]));
        assert_eq!(w.s2, at(&[0, 0]));
        assert!(w.witness_holds());
    }

    #[test]
    fn circulation_of_gap_instance() {
        let inst = t1();
        let cn = build_circulation(&inst, &at(&[0, 0]), 0).unwrap();
        assert_eq!(cn.users, vec![0, 1]);
        assert_eq!(cn.net.supply(0), &Rat::one());
        assert_eq!(cn.net.supply(1), &Rat::ratio(-1, 2));
        assert_eq!(cn.net.supply(cn.facility_node), &Rat::zero());
        assert_eq!(cn.net.supply(cn.z_node), &Rat::ratio(-1, 2));
        let caps: Vec<_> = (0..cn.net.edge_count()).map(|e| cn.net.edge(e)).collect();
        assert!(caps
            .iter()
            .filter(|(f, t, _)| *f < 2 && *t < 2)
            .all(|(_, _, c)| c.as_finite() == Some(&Rat::one())));
    }

    #[test]
    fn circulation_of_single_user_facility_has_no_peer_edges() {
        let inst = t1();
        let cn = build_circulation(&inst, &at(&[0, -1]), 0).unwrap();
        assert_eq!(cn.users, vec![0]);
        // One edge to the facility, one drain edge, nothing between peers.
        assert_eq!(cn.net.edge_count(), 2);
    }

    #[test]
    fn peering_stabilizes_gap_instance() {
        let inst = t1();
        let target = at(&[0, 0]);
        let out = peering_payments(&inst, &target).unwrap();
        assert!(out.feasible);
        assert_eq!(out.p[0][1], Rat::ratio(1, 2));
        assert_eq!(out.p[1][0], Rat::ratio(-1, 2));
        assert_eq!(out.gamma.entries().count(), 0);
        assert_eq!(
            out.payments.deltas(),
            &[Rat::ratio(-1, 2), Rat::ratio(1, 2)]
        );
        let state = State::new(target, out.gamma).unwrap();
        assert!(is_stable(&inst, &state, Some(&out.payments)).stable());
    }

    #[test]
    fn peering_on_free_instance_moves_no_money() {
        let inst = t2();
        let out = peering_payments(&inst, &at(&[0, 0])).unwrap();
        assert!(out.feasible);
        assert!(out.p.iter().flatten().all(Rat::is_zero));
        assert_eq!(out.payments.total(), Rat::zero());
    }

    #[test]
    fn peering_refutes_a_non_optimal_target() {
        let inst = t1();
        let target = at(&[-1, 0]);
        let out = peering_payments(&inst, &target).unwrap();
        assert!(!out.feasible);
        let r = &out.refutations[0];
        assert_eq!(r.facility, 0);
        assert_eq!(r.subset, vec![1]);
        assert_eq!(r.assignment, at(&[-1, -1]));
        assert_eq!(r.cost, Rat::from_int(2));
        assert!(r.cost < social_cost(&inst, &target));
    }

    #[test]
    fn doubling_internalizes_the_peer_payment() {
        let inst = t1();
        let target = at(&[0, 0]);
        let (doubled, gamma) = doubled_weights(&inst, &target).unwrap();
        assert_eq!(doubled.dc(0, 1), &Rat::ratio(3, 2));
        assert_eq!(doubled.dc(1, 0), &Rat::ratio(3, 2));
        let state = State::new(target, gamma).unwrap();
        assert!(is_stable(&doubled, &state, None).stable());
    }

    #[test]
    fn doubling_is_identity_without_flows() {
        let inst = t2();
        let (doubled, _) = doubled_weights(&inst, &at(&[0, 0])).unwrap();
        assert_eq!(doubled.dc(0, 1), inst.dc(0, 1));
    }

    #[test]
    fn minimal_payment_matches_direct_scheme_at_optimum() {
        assert_eq!(
            minimal_stabilizing_payment(&t1(), &at(&[0, 0])).unwrap(),
            Rat::ratio(1, 2)
        );
        assert_eq!(
            minimal_stabilizing_payment(&t2(), &at(&[0, 0])).unwrap(),
            Rat::zero()
        );
        // Off-optimum the facility shortfall enters: the lone agent
        // tolerates nothing, so the full opening cost must be paid.
        let inst = Instance::new(
            vec![vec![Rat::zero()]],
            vec![vec![Rat::zero()]],
            vec![Rat::from_int(2)],
        )
        .unwrap();
        assert_eq!(
            minimal_stabilizing_payment(&inst, &at(&[0])).unwrap(),
            Rat::from_int(2)
        );
    }

    /// Independent route for the minimal payment: a small LP over Δ and γ.
    fn minimal_payment_by_lp(inst: &Instance, s_star: &Assignment) -> Option<f64> {
        let n = inst.n();
        let q: Vec<Option<Rat>> = (0..n).map(|i| finite_q(inst, s_star, i)).collect();
        let users: Vec<usize> = (0..n).filter(|&i| s_star.get(i).is_some()).collect();
        let nvars = n + users.len();
        let mut big = Rat::one();
        for k in 0..inst.m() {
            big += inst.fcost(k);
        }
        for v in q.iter().flatten() {
            big += if v.is_negative() { -v } else { v.clone() };
        }
        let big = big.to_f64();
        let mut prog = lp::LinearProgram::new(
            (0..nvars).map(|v| if v < n { 1.0 } else { 0.0 }).collect(),
            vec![(0.0, big); nvars],
        );
        // γ_i − Δ_i ≤ Q_i for placed agents; −Δ_i ≤ Q_i for the rest.
        for i in 0..n {
            let Some(qi) = &q[i] else { continue };
            let mut row = vec![0.0; nvars];
            row[i] = -1.0;
            if let Some(pos) = users.iter().position(|&u| u == i) {
                row[n + pos] = 1.0;
            }
            prog.push(row, Sense::Le, qi.to_f64());
        }
        for k in 0..inst.m() {
            let members = s_star.users_of(k);
            if members.is_empty() {
                continue;
            }
            let mut row = vec![0.0; nvars];
            for &i in &members {
                row[n + users.iter().position(|&u| u == i).unwrap()] = 1.0;
            }
            prog.push(row, Sense::Eq, inst.fcost(k).to_f64());
        }
        match lp::solve_lp(&prog).unwrap() {
            LpOutcome::Optimal { objective, .. } => Some(objective),
            LpOutcome::Infeasible => None,
        }
    }

    fn arb_case() -> impl proptest::strategy::Strategy<Value = (Instance, Vec<i64>)> {
        (2usize..5, 1usize..4).prop_flat_map(|(n, m)| {
            let cc = proptest::collection::vec(0i64..6, n * m);
            let dc = proptest::collection::vec(0i64..6, n * (n - 1) / 2);
            let fc = proptest::collection::vec(0i64..6, m);
            let target = proptest::collection::vec(-1i64..(m as i64), n);
            (cc, dc, fc, target).prop_map(move |(cc, dc, fc, target)| {
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
                (Instance::new(cc, dcm, fc).unwrap(), target)
            })
        })
    }

    proptest! {
        // The direct scheme stabilizes the optimum, pays only agents with
        // negative Q, and realizes the minimal total payment.
        #[test]
        fn direct_scheme_stabilizes_every_optimum((inst, _) in arb_case()) {
            let (opt, _) = oracle::brute_force_optimum(&inst).unwrap();
            let (gamma, payments) = direct_payment_scheme(&inst, &opt).unwrap();
            for i in 0..inst.n() {
                if payments.delta(i).is_positive() {
                    match q_value(&inst, &opt, i) {
                        QValue::Finite(q) => prop_assert!(q.is_negative()),
                        QValue::NoAlternative => prop_assert!(false),
                    }
                }
            }
            let state = State::new(opt.clone(), gamma).unwrap();
            prop_assert!(is_stable(&inst, &state, Some(&payments)).stable());
            prop_assert_eq!(
                payments.total(),
                minimal_stabilizing_payment(&inst, &opt).unwrap()
            );
        }

        // Identity the tradeoff bound rests on: each agent's payment
        // equals its cost drop to the cheapest deviation b_i — for any
        // target assignment, not just optima.
        #[test]
        fn payment_equals_deviation_gain((inst, target) in arb_case()) {
            let target = at(&target);
            let w = witness_states(&inst, &target).unwrap();
            if let Ok((_, payments)) = direct_payment_scheme(&inst, &target) {
                for i in 0..inst.n() {
                    let drop = tc(&inst, &target, i)
                        - tc_after_move(&inst, &target, i, w.b[i]);
                    prop_assert_eq!(payments.delta(i), &drop);
                }
            }
        }

        // The closed-form minimal payment agrees with an LP solved over
        // the stability polytope.
        #[test]
        fn minimal_payment_matches_lp((inst, target) in arb_case()) {
            let target = at(&target);
            let closed = minimal_stabilizing_payment(&inst, &target).unwrap();
            let by_lp = minimal_payment_by_lp(&inst, &target);
            prop_assert!(by_lp.is_some());
            prop_assert!((closed.to_f64() - by_lp.unwrap()).abs() <= 1e-6);
        }

        // Witness property at the optimum (what makes the tradeoff bound
        // work), plus the partition constraint for arbitrary targets.
        #[test]
        fn witness_property_at_optimum((inst, target) in arb_case()) {
            let (opt, _) = oracle::brute_force_optimum(&inst).unwrap();
            let w = witness_states(&inst, &opt).unwrap();
            prop_assert!(w.witness_holds());
            let w2 = witness_states(&inst, &at(&target)).unwrap();
            prop_assert!(no_facility_swap(&at(&target), &w2.b, &w2.a1));
            prop_assert!(no_facility_swap(&at(&target), &w2.b, &w2.a2));
            prop_assert_eq!(w2.a1.len() + w2.a2.len(), inst.n());
        }

        // Peering at the optimum: feasible, bounded by dc, budget-exact,
        // and stable. At arbitrary targets a feasible circulation still
        // prices every facility user within tolerance (out agents may
        // remain unstable — only optimality rules that out), and an
        // infeasible one yields a strictly cheaper refutation.
        #[test]
        fn peering_feasible_iff_no_refutation((inst, target) in arb_case()) {
            let (opt, _) = oracle::brute_force_optimum(&inst).unwrap();
            let out = peering_payments(&inst, &opt).unwrap();
            prop_assert!(out.feasible);
            for i in 0..inst.n() {
                for j in 0..inst.n() {
                    if i != j {
                        prop_assert!(&out.p[i][j] + &out.p[j][i] == Rat::zero());
                        let mag = if out.p[i][j].is_negative() {
                            -&out.p[i][j]
                        } else {
                            out.p[i][j].clone()
                        };
                        prop_assert!(&mag <= inst.dc(i, j));
                    }
                }
            }
            let state = State::new(opt, out.gamma).unwrap();
            prop_assert!(is_stable(&inst, &state, Some(&out.payments)).stable());

            let target = at(&target);
            let out = peering_payments(&inst, &target).unwrap();
            if out.feasible {
                for i in 0..inst.n() {
                    let Some(k) = target.get(i) else { continue };
                    let net = out.gamma.get(i, k) - out.payments.delta(i);
                    match q_value(&inst, &target, i) {
                        QValue::Finite(q) => prop_assert!(net <= q),
                        QValue::NoAlternative => {}
                    }
                }
                for k in 0..inst.m() {
                    if !target.is_open(k) {
                        continue;
                    }
                    let collected: Rat = target
                        .users_of(k)
                        .iter()
                        .map(|&i| out.gamma.get(i, k))
                        .sum();
                    prop_assert_eq!(&collected, inst.fcost(k));
                }
            } else {
                let base = social_cost(&inst, &target);
                for r in &out.refutations {
                    prop_assert!(r.cost < base);
                    prop_assert_eq!(social_cost(&inst, &r.assignment), r.cost.clone());
                }
            }
        }

        // Doubled weights: bounded by 2·dc and stable with prices alone.
        #[test]
        fn doubling_stays_within_twice_dc((inst, _) in arb_case()) {
            let (opt, _) = oracle::brute_force_optimum(&inst).unwrap();
            let (doubled, gamma) = doubled_weights(&inst, &opt).unwrap();
            for i in 0..inst.n() {
                for j in 0..inst.n() {
                    prop_assert!(
                        doubled.dc(i, j) <= &(Rat::from_int(2) * inst.dc(i, j))
                    );
                    prop_assert!(doubled.dc(i, j) >= inst.dc(i, j));
                }
            }
            let state = State::new(opt, gamma).unwrap();
            prop_assert!(is_stable(&doubled, &state, None).stable());
        }
    }
}
