//! Best-response computation and the two-phase stabilization dynamics for
//! the single-facility setting.
//!
//! The engine is parameterized by a weight `alpha` in [1, 2] on the
//! disconnection terms. At `alpha = 1` it performs plain improving moves
//! and produces a stable, budget-balanced priced state; larger `alpha`
//! trades exactness of stability for a better cost guarantee (`2/alpha`
//! times the optimum when started there), with the final state
//! `alpha`-approximately stable.

use crate::model::{
    check_alpha, cost_with_alpha, cost_with_alpha_after_move, nbr_candidates, potential, rc,
    tc_after_move, Assignment, Instance, ModelError, NextBest, PaymentVector, PotentialKind,
    PricingStrategy, QValue, State, Strategy,
};
use crate::rat::Rat;

/// The alpha-weighted analogue of the next best response: cheapest
/// alternative under the weighted distance cost, ties toward staying out,
/// then the lowest facility index.
pub(crate) fn next_best_response_alpha(
    inst: &Instance,
    a: &Assignment,
    agent: usize,
    alpha: &Rat,
) -> NextBest {
    let mut best: Option<(Strategy, Rat)> = None;
    for cand in nbr_candidates(inst, a, agent) {
        let cost = cost_with_alpha_after_move(inst, a, agent, cand, alpha);
        match &best {
            Some((_, b)) if cost >= *b => {}
            _ => best = Some((cand, cost)),
        }
    }
    match best {
        Some((s, _)) => NextBest::Strategy(s),
        None => NextBest::NoAlternative,
    }
}

/// The alpha-weighted Q-value: weighted cost of the next best response
/// minus the current weighted cost.
pub(crate) fn q_value_alpha(
    inst: &Instance,
    a: &Assignment,
    agent: usize,
    alpha: &Rat,
) -> QValue {
    match next_best_response_alpha(inst, a, agent, alpha) {
        NextBest::Strategy(target) => QValue::Finite(
            cost_with_alpha_after_move(inst, a, agent, target, alpha)
                - cost_with_alpha(inst, a, agent, alpha),
        ),
        NextBest::NoAlternative => QValue::NoAlternative,
    }
}

/// The agent's best strategy against the rest of the state, price and
/// payment included: staying put costs its realized cost `rc`, any other
/// strategy costs bare distance (deviators pay no price at the target and
/// forfeit coordinator payments). Ties prefer staying, then staying out,
/// then the lowest facility index. Closed facilities are legal targets.
pub fn best_response(
    inst: &Instance,
    state: &State,
    payments: Option<&PaymentVector>,
    agent: usize,
) -> Strategy {
    let current = state.assignment.get(agent);
    let here = rc(inst, state, payments, agent);
    let mut alts: Vec<Strategy> = Vec::with_capacity(inst.m() + 1);
    if current.is_some() {
        alts.push(None);
    }
    alts.extend((0..inst.m()).map(Some).filter(|&s| s != current));
    let mut best: Option<(Strategy, Rat)> = None;
    for cand in alts {
        let cost = tc_after_move(inst, &state.assignment, agent, cand);
        match &best {
            Some((_, b)) if cost >= *b => {}
            _ => best = Some((cand, cost)),
        }
    }
    match best {
        Some((cand, cost)) if cost < here => cand,
        _ => current,
    }
}

/// One step of the stabilization dynamics, with the potential value after
/// the step.
#[derive(Clone, Debug)]
pub enum TraceStep {
    Improve {
        agent: usize,
        from: Strategy,
        to: Strategy,
        potential: Rat,
    },
    Close {
        facility: usize,
        moves: Vec<(usize, Strategy, Strategy)>,
        potential: Rat,
    },
}

impl TraceStep {
    pub fn potential(&self) -> &Rat {
        match self {
            TraceStep::Improve { potential, .. } => potential,
            TraceStep::Close { potential, .. } => potential,
        }
    }
}

/// Full record of a stabilization run: the weight, the starting
/// assignment, and every step taken. Potentials strictly decrease along
/// `steps`; the run is deterministic, so replaying the start through the
/// same dynamics reproduces it exactly.
#[derive(Clone, Debug)]
pub struct Trace {
    pub alpha: Rat,
    pub start: Assignment,
    pub start_potential: Rat,
    pub steps: Vec<TraceStep>,
}

/// Stabilize with plain (unweighted) improving moves: the result is a
/// stable, budget-balanced priced state. Starting from an optimal
/// assignment its social cost is at most twice the optimum. `start`
/// defaults to everyone staying out.
pub fn stabilize(
    inst: &Instance,
    start: Option<&Assignment>,
) -> Result<(State, Trace), ModelError> {
    stabilize_alpha(inst, &Rat::one(), start)
}

/// Stabilization with the disconnection terms weighted by
/// `alpha ∈ [1, 2]`. Phase A: the lowest-index agent with a strictly
/// improving move (toward staying out or an open facility) applies its
/// best one. Phase B, at quiescence: the lowest-index open facility whose
/// cost exceeds its users' total weighted Q-value closes, all its users
/// moving simultaneously to their (precomputed) next best responses. The
/// weighted potential strictly decreases every step. At the end each open
/// facility charges its users their weighted Q-values, scaled to recover
/// the facility cost exactly; the result is alpha-approximately stable,
/// and plainly stable when alpha = 1.
pub fn stabilize_alpha(
    inst: &Instance,
    alpha: &Rat,
    start: Option<&Assignment>,
) -> Result<(State, Trace), ModelError> {
    check_alpha(alpha)?;
    let mut a = match start {
        Some(s) => {
            inst.check_assignment(s)?;
            s.clone()
        }
        None => Assignment::all_out(inst.n()),
    };
    let n = inst.n();
    let kind = PotentialKind::Alpha(alpha.clone());
    let mut phi = potential(inst, &a, kind.clone())?;
    let mut trace = Trace {
        alpha: alpha.clone(),
        start: a.clone(),
        start_potential: phi.clone(),
        steps: Vec::new(),
    };

    'outer: loop {
        // Phase A: improving moves never target a closed facility.
        for i in 0..n {
            let current = a.get(i);
            let here = cost_with_alpha(inst, &a, i, alpha);
            let mut targets: Vec<Strategy> = Vec::new();
            if current.is_some() {
                targets.push(None);
            }
            targets.extend(
                (0..inst.m())
                    .filter(|&k| Some(k) != current && a.is_open(k))
                    .map(Some),
            );
            let mut best: Option<(Strategy, Rat)> = None;
            for cand in targets {
                let cost = cost_with_alpha_after_move(inst, &a, i, cand, alpha);
                if cost < here {
                    match &best {
                        Some((_, b)) if cost >= *b => {}
                        _ => best = Some((cand, cost)),
                    }
                }
            }
            if let Some((to, _)) = best {
                a.set(i, to);
                let next_phi = potential(inst, &a, kind.clone())?;
                assert!(next_phi < phi, "improvement step must lower the potential");
                phi = next_phi;
                trace.steps.push(TraceStep::Improve {
                    agent: i,
                    from: current,
                    to,
                    potential: phi.clone(),
                });
                continue 'outer;
            }
        }

        // Phase B: close a facility its users cannot justify.
        for k in 0..inst.m() {
            let users = a.users_of(k);
            if users.is_empty() {
                continue;
            }
            let total_q: Rat = users
                .iter()
                .map(|&i| {
                    q_value_alpha(inst, &a, i, alpha)
                        .finite()
                        .clone()
                })
                .sum();
            if *inst.fcost(k) > total_q {
                let moves: Vec<(usize, Strategy, Strategy)> = users
                    .iter()
                    .map(|&i| {
                        let to = match next_best_response_alpha(inst, &a, i, alpha) {
                            NextBest::Strategy(s) => s,
                            NextBest::NoAlternative => {
                                unreachable!("placed agents can always stay out")
                            }
                        };
                        (i, a.get(i), to)
                    })
                    .collect();
                for &(i, _, to) in &moves {
                    a.set(i, to);
                }
                let next_phi = potential(inst, &a, kind.clone())?;
                assert!(next_phi < phi, "closing step must lower the potential");
                phi = next_phi;
                trace.steps.push(TraceStep::Close {
                    facility: k,
                    moves,
                    potential: phi.clone(),
                });
                continue 'outer;
            }
        }

        break;
    }

    // Quiescent: price each open facility by its users' weighted
    // Q-values, scaled to recover the opening cost exactly.
    let mut prices = PricingStrategy::none(n);
    for k in 0..inst.m() {
        let users = a.users_of(k);
        if users.is_empty() {
            continue;
        }
        let qs: Vec<Rat> = users
            .iter()
            .map(|&i| q_value_alpha(inst, &a, i, alpha).finite().clone())
            .collect();
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
    let state = State::new(a, prices)?;
    Ok((state, trace))
}
