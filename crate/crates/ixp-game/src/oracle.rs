//! Exhaustive ground truth for small instances: exact optima (single and
//! multi mode), enumeration of states that admit budget-balanced stable
//! prices, and exact best/worst-stable-to-optimum ratios.
//!
//! Enumeration runs on an i128 fast path after clearing denominators; when
//! the cleared values would risk overflow it falls back to full rational
//! arithmetic. Results are memoized per instance content hash.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, ToPrimitive};

use crate::model::{
    q_value, Assignment, Instance, ModelError, PaymentVector, PricingStrategy, QValue, State,
    Strategy,
};
use crate::multi::{FacilitySet, MultiAssignment};
use crate::rat::Rat;

/// Assignments enumerated at most, in either mode.
pub const ENUMERATION_CAP: u64 = 10_000_000;

/// A best/worst-to-optimum cost ratio; unbounded when the optimum costs
/// nothing but the extremal stable state does not.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RatioOutcome {
    Finite(Rat),
    Unbounded,
}

impl RatioOutcome {
    pub fn as_finite(&self) -> Option<&Rat> {
        match self {
            RatioOutcome::Finite(r) => Some(r),
            RatioOutcome::Unbounded => None,
        }
    }

    pub fn is_unbounded(&self) -> bool {
        matches!(self, RatioOutcome::Unbounded)
    }
}

impl std::fmt::Display for RatioOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RatioOutcome::Finite(r) => write!(f, "{r}"),
            RatioOutcome::Unbounded => write!(f, "unbounded"),
        }
    }
}

/// An assignment that admits budget-balanced stable prices, with one
/// witness price vector (each user pays its Q-value, scaled down to meet
/// the facility cost exactly).
#[derive(Clone, Debug)]
pub struct StabilizableState {
    pub assignment: Assignment,
    pub cost: Rat,
    pub gamma: PricingStrategy,
}

/// Everything the exhaustive pass learns about one instance.
#[derive(Clone, Debug)]
pub struct OracleReport {
    pub optimum: Assignment,
    pub optimum_cost: Rat,
    pub best_stable: Assignment,
    pub best_stable_cost: Rat,
    pub worst_stable: Assignment,
    pub worst_stable_cost: Rat,
    pub pos: RatioOutcome,
    pub poa: RatioOutcome,
}

fn ensure_single_cap(inst: &Instance) -> Result<u64, ModelError> {
    let mut total: u64 = 1;
    for _ in 0..inst.n() {
        total = total
            .checked_mul(inst.m() as u64 + 1)
            .filter(|&t| t <= ENUMERATION_CAP)
            .ok_or_else(|| {
                ModelError::TooLarge(format!(
                    "(m+1)^n = {}^{} assignments exceed the cap of {}",
                    inst.m() + 1,
                    inst.n(),
                    ENUMERATION_CAP
                ))
            })?;
    }
    Ok(total)
}

fn ensure_multi_cap(inst: &Instance) -> Result<u64, ModelError> {
    let bits = inst.n() as u32 * inst.m() as u32;
    if bits >= 24 {
        return Err(ModelError::TooLarge(format!(
            "2^(n·m) = 2^{bits} multi assignments exceed the cap of {ENUMERATION_CAP}"
        )));
    }
    Ok(1u64 << bits)
}

// ---------------------------------------------------------------------
// Exact-integer kernel: clear denominators once, then enumerate with i128
// arithmetic. `None` when the cleared values could overflow.
// ---------------------------------------------------------------------

struct IntCosts {
    n: usize,
    m: usize,
    cc: Vec<i128>,    // n*m, row-major
    dc: Vec<i128>,    // n*n
    fcost: Vec<i128>, // m
    scale: BigInt,
}

/// Cleared values stay below 2^96 and instance dimensions below 2^10, so
/// any sum the kernel forms stays far inside i128 range.
const INT_VALUE_BOUND_BITS: u64 = 96;

impl IntCosts {
    fn build(inst: &Instance) -> Option<IntCosts> {
        if inst.n() >= 1024 || inst.m() >= 1024 {
            return None;
        }
        let mut lcm = BigInt::one();
        let mut denoms = Vec::new();
        for i in 0..inst.n() {
            for k in 0..inst.m() {
                denoms.push(inst.cc(i, k).denom());
            }
            for j in 0..inst.n() {
                denoms.push(inst.dc(i, j).denom());
            }
        }
        for k in 0..inst.m() {
            denoms.push(inst.fcost(k).denom());
        }
        for d in denoms {
            lcm = lcm.lcm(d);
            if lcm.bits() > INT_VALUE_BOUND_BITS {
                return None;
            }
        }
        let clear = |v: &Rat| -> Option<i128> {
            let scaled = v.numer() * (&lcm / v.denom());
            if scaled.bits() > INT_VALUE_BOUND_BITS {
                return None;
            }
            scaled.to_i128()
        };
        let mut cc = Vec::with_capacity(inst.n() * inst.m());
        let mut dc = Vec::with_capacity(inst.n() * inst.n());
        for i in 0..inst.n() {
            for k in 0..inst.m() {
                cc.push(clear(inst.cc(i, k))?);
            }
        }
        for i in 0..inst.n() {
            for j in 0..inst.n() {
                dc.push(clear(inst.dc(i, j))?);
            }
        }
        let fcost = (0..inst.m())
            .map(|k| clear(inst.fcost(k)))
            .collect::<Option<Vec<_>>>()?;
        Some(IntCosts {
            n: inst.n(),
            m: inst.m(),
            cc,
            dc,
            fcost,
            scale: lcm,
        })
    }

    fn cc(&self, i: usize, k: usize) -> i128 {
        self.cc[i * self.m + k]
    }

    fn dc(&self, i: usize, j: usize) -> i128 {
        self.dc[i * self.n + j]
    }

    fn unscale(&self, v: i128) -> Rat {
        Rat::from_big(BigInt::from(v), self.scale.clone()).expect("scale is nonzero")
    }
}

/// Single-mode odometer state: an assignment digit per agent
/// (0 = stay out, d = facility d-1), plus incrementally maintained
/// aggregates. Enumeration order is exactly lexicographic, so the first
/// strict improvement is also the lexicographically smallest tie.
struct SinglePass<'a> {
    costs: &'a IntCosts,
    digits: Vec<usize>,
    /// conn[i][f] = total dc between agent i and the agents at facility f.
    conn: Vec<i128>,
    /// users[f] = how many agents are at facility f.
    users: Vec<usize>,
    /// d_total[i] = total dc between agent i and everyone else.
    d_total: Vec<i128>,
}

impl<'a> SinglePass<'a> {
    fn new(costs: &'a IntCosts) -> Self {
        let n = costs.n;
        let m = costs.m;
        let mut d_total = vec![0i128; n];
        for i in 0..n {
            for j in 0..n {
                d_total[i] += costs.dc(i, j);
            }
        }
        SinglePass {
            costs,
            digits: vec![0; n],
            conn: vec![0; n * m],
            users: vec![0; m],
            d_total,
        }
    }

    fn place(&mut self, agent: usize, digit: usize) {
        if let Some(f) = digit.checked_sub(1) {
            self.users[f] += 1;
            for i in 0..self.costs.n {
                self.conn[i * self.costs.m + f] += self.costs.dc(i, agent);
            }
        }
        self.digits[agent] = digit;
    }

    fn remove(&mut self, agent: usize) {
        if let Some(f) = self.digits[agent].checked_sub(1) {
            self.users[f] -= 1;
            for i in 0..self.costs.n {
                self.conn[i * self.costs.m + f] -= self.costs.dc(i, agent);
            }
        }
    }

    /// Advance to the next assignment in lexicographic order.
    fn advance(&mut self) -> bool {
        let m = self.costs.m;
        for agent in (0..self.costs.n).rev() {
            let d = self.digits[agent];
            self.remove(agent);
            if d < m {
                self.place(agent, d + 1);
                return true;
            }
            self.place(agent, 0);
        }
        false
    }

    /// Distance cost of agent i at `digit` given everyone else's digits.
    /// `conn` includes the agent's own zero-diagonal entry, so no
    /// correction is needed when the agent is itself placed there.
    fn tc_at(&self, i: usize, digit: usize) -> i128 {
        match digit.checked_sub(1) {
            None => self.d_total[i],
            Some(f) => {
                self.costs.cc(i, f) + self.d_total[i] - self.conn[i * self.costs.m + f]
            }
        }
    }

    fn social_cost(&self) -> i128 {
        let mut total = 0i128;
        for (f, &u) in self.users.iter().enumerate() {
            if u > 0 {
                total += self.costs.fcost[f];
            }
        }
        for i in 0..self.costs.n {
            total += self.tc_at(i, self.digits[i]);
        }
        total
    }

    /// Q-value of agent i: best alternative's distance cost minus the
    /// current one. Alternatives for a placed agent are staying out and
    /// every other open facility; for an agent staying out, the open
    /// facilities, or all of them when none is open. `None` means no
    /// alternative exists at all (no facilities).
    fn q_value(&self, i: usize) -> Option<i128> {
        let here = self.tc_at(i, self.digits[i]);
        let mut best: Option<i128> = None;
        let consider = |v: i128, best: &mut Option<i128>| {
            if best.map_or(true, |b| v < b) {
                *best = Some(v);
            }
        };
        if self.digits[i] > 0 {
            consider(self.tc_at(i, 0), &mut best);
            for f in 0..self.costs.m {
                if f + 1 != self.digits[i] && self.users[f] > 0 {
                    consider(self.tc_at(i, f + 1), &mut best);
                }
            }
        } else {
            let any_open = self.users.iter().any(|&u| u > 0);
            for f in 0..self.costs.m {
                if !any_open || self.users[f] > 0 {
                    consider(self.tc_at(i, f + 1), &mut best);
                }
            }
        }
        best.map(|b| b - here)
    }

    /// Does this assignment admit budget-balanced stable prices? True
    /// exactly when every agent's Q-value is nonnegative and every open
    /// facility's users carry Q-value totalling at least its cost.
    fn stabilizable(&self, q: &mut Vec<Option<i128>>) -> bool {
        let n = self.costs.n;
        q.clear();
        for i in 0..n {
            let qi = self.q_value(i);
            if matches!(qi, Some(v) if v < 0) {
                return false;
            }
            q.push(qi);
        }
        for f in 0..self.costs.m {
            if self.users[f] == 0 {
                continue;
            }
            let mut total = 0i128;
            for i in 0..n {
                if self.digits[i] == f + 1 {
                    total += q[i].expect("placed agents always have the stay-out option");
                }
            }
            if total < self.costs.fcost[f] {
                return false;
            }
        }
        true
    }

    fn assignment(&self) -> Assignment {
        Assignment::new(
            self.digits
                .iter()
                .map(|&d| d.checked_sub(1))
                .collect::<Vec<Strategy>>(),
        )
    }
}

struct OracleCore {
    optimum: Assignment,
    optimum_cost: Rat,
    best_stable: Assignment,
    best_stable_cost: Rat,
    worst_stable: Assignment,
    worst_stable_cost: Rat,
}

fn single_core_int(costs: &IntCosts) -> OracleCore {
    let mut pass = SinglePass::new(costs);
    let mut opt: Option<(i128, Vec<usize>)> = None;
    let mut best: Option<(i128, Vec<usize>)> = None;
    let mut worst: Option<(i128, Vec<usize>)> = None;
    let mut qbuf = Vec::with_capacity(costs.n);
    loop {
        let cost = pass.social_cost();
        if opt.as_ref().map_or(true, |(c, _)| cost < *c) {
            opt = Some((cost, pass.digits.clone()));
        }
        if pass.stabilizable(&mut qbuf) {
            if best.as_ref().map_or(true, |(c, _)| cost < *c) {
                best = Some((cost, pass.digits.clone()));
            }
            if worst.as_ref().map_or(true, |(c, _)| cost > *c) {
                worst = Some((cost, pass.digits.clone()));
            }
        }
        if !pass.advance() {
            break;
        }
    }
    let to_assignment = |digits: &[usize]| {
        Assignment::new(digits.iter().map(|&d| d.checked_sub(1)).collect())
    };
    let (oc, od) = opt.expect("at least one assignment exists");
    let (bc, bd) = best.expect("the all-out assignment is always stabilizable");
    let (wc, wd) = worst.expect("the all-out assignment is always stabilizable");
    OracleCore {
        optimum: to_assignment(&od),
        optimum_cost: costs.unscale(oc),
        best_stable: to_assignment(&bd),
        best_stable_cost: costs.unscale(bc),
        worst_stable: to_assignment(&wd),
        worst_stable_cost: costs.unscale(wc),
    }
}

// Rational fallback (huge numerators/denominators): same enumeration,
// exact Rat arithmetic throughout.
fn single_core_rat(inst: &Instance) -> OracleCore {
    let n = inst.n();
    let m = inst.m();
    let mut d_total = vec![Rat::zero(); n];
    for i in 0..n {
        for j in 0..n {
            d_total[i] += inst.dc(i, j);
        }
    }
    let mut digits = vec![0usize; n];
    let tc_at = |digits: &[usize], i: usize, digit: usize| -> Rat {
        match digit.checked_sub(1) {
            None => d_total[i].clone(),
            Some(f) => {
                let mut conn = Rat::zero();
                for (j, &dj) in digits.iter().enumerate() {
                    if dj == f + 1 {
                        conn += inst.dc(i, j);
                    }
                }
                inst.cc(i, f) + &d_total[i] - conn
            }
        }
    };
    let mut opt: Option<(Rat, Vec<usize>)> = None;
    let mut best: Option<(Rat, Vec<usize>)> = None;
    let mut worst: Option<(Rat, Vec<usize>)> = None;
    loop {
        let users: Vec<usize> = (0..m)
            .map(|f| digits.iter().filter(|&&d| d == f + 1).count())
            .collect();
        let mut cost = Rat::zero();
        for (f, &u) in users.iter().enumerate() {
            if u > 0 {
                cost += inst.fcost(f);
            }
        }
        for i in 0..n {
            cost += &tc_at(&digits, i, digits[i]);
        }

        let mut qs: Vec<Option<Rat>> = Vec::with_capacity(n);
        for i in 0..n {
            let here = tc_at(&digits, i, digits[i]);
            let mut alt: Option<Rat> = None;
            let consider = |v: Rat, alt: &mut Option<Rat>| match alt {
                Some(b) if *b <= v => {}
                _ => *alt = Some(v),
            };
            if digits[i] > 0 {
                consider(tc_at(&digits, i, 0), &mut alt);
                for f in 0..m {
                    if f + 1 != digits[i] && users[f] > 0 {
                        consider(tc_at(&digits, i, f + 1), &mut alt);
                    }
                }
            } else {
                let any_open = users.iter().any(|&u| u > 0);
                for f in 0..m {
                    if !any_open || users[f] > 0 {
                        consider(tc_at(&digits, i, f + 1), &mut alt);
                    }
                }
            }
            qs.push(alt.map(|a| a - here));
        }
        let mut stab = qs
            .iter()
            .all(|q| q.as_ref().map_or(true, |v| !v.is_negative()));
        if stab {
            for f in 0..m {
                if users[f] == 0 {
                    continue;
                }
                let total: Rat = (0..n)
                    .filter(|&i| digits[i] == f + 1)
                    .map(|i| qs[i].clone().expect("placed agents have alternatives"))
                    .sum();
                if total < *inst.fcost(f) {
                    stab = false;
                    break;
                }
            }
        }

        if opt.as_ref().map_or(true, |(c, _)| cost < *c) {
            opt = Some((cost.clone(), digits.clone()));
        }
        if stab {
            if best.as_ref().map_or(true, |(c, _)| cost < *c) {
                best = Some((cost.clone(), digits.clone()));
            }
            if worst.as_ref().map_or(true, |(c, _)| cost > *c) {
                worst = Some((cost, digits.clone()));
            }
        }

        let mut advanced = false;
        for agent in (0..n).rev() {
            if digits[agent] < m {
                digits[agent] += 1;
                advanced = true;
                break;
            }
            digits[agent] = 0;
        }
        if !advanced {
            break;
        }
    }
    let to_assignment = |digits: &[usize]| {
        Assignment::new(digits.iter().map(|&d| d.checked_sub(1)).collect())
    };
    let (oc, od) = opt.expect("at least one assignment exists");
    let (bc, bd) = best.expect("the all-out assignment is always stabilizable");
    let (wc, wd) = worst.expect("the all-out assignment is always stabilizable");
    OracleCore {
        optimum: to_assignment(&od),
        optimum_cost: oc,
        best_stable: to_assignment(&bd),
        best_stable_cost: bc,
        worst_stable: to_assignment(&wd),
        worst_stable_cost: wc,
    }
}

fn oracle_cache() -> &'static Mutex<HashMap<String, Arc<OracleCore>>> {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<OracleCore>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn single_core(inst: &Instance) -> Result<Arc<OracleCore>, ModelError> {
    ensure_single_cap(inst)?;
    let key = inst.content_hash();
    if let Some(core) = oracle_cache().lock().unwrap().get(&key) {
        return Ok(Arc::clone(core));
    }
    let core = Arc::new(match IntCosts::build(inst) {
        Some(costs) => single_core_int(&costs),
        None => single_core_rat(inst),
    });
    oracle_cache()
        .lock()
        .unwrap()
        .insert(key, Arc::clone(&core));
    Ok(core)
}

/// Exact minimizer of the social cost; ties resolve to the
/// lexicographically smallest assignment (stay-out before facility 1).
pub fn brute_force_optimum(inst: &Instance) -> Result<(Assignment, Rat), ModelError> {
    let core = single_core(inst)?;
    Ok((core.optimum.clone(), core.optimum_cost.clone()))
}

/// Exact multi-mode minimizer; ties resolve to the assignment whose
/// facility-set sequence is smallest in set order.
pub fn brute_force_optimum_multi(
    inst: &Instance,
) -> Result<(MultiAssignment, Rat), ModelError> {
    let total = ensure_multi_cap(inst)?;
    let n = inst.n();
    let m = inst.m();

    if let Some(costs) = IntCosts::build(inst) {
        let mut masks = vec![0u16; n];
        // Incrementally maintained: per-agent connection cost, number of
        // disconnected pairs weight, per-facility user counts.
        let mut users = vec![0usize; m];
        let mut best: Option<(i128, Vec<u16>)> = None;
        let set_seq_less = |a: &[u16], b: &[u16]| -> bool {
            for (x, y) in a.iter().zip(b) {
                let (sx, sy) = (
                    FacilitySet::from_indices((0..m).filter(|k| x & (1 << k) != 0)),
                    FacilitySet::from_indices((0..m).filter(|k| y & (1 << k) != 0)),
                );
                match sx.cmp(&sy) {
                    std::cmp::Ordering::Less => return true,
                    std::cmp::Ordering::Greater => return false,
                    std::cmp::Ordering::Equal => {}
                }
            }
            false
        };
        for counter in 0..total {
            let mut c = counter;
            for mask in masks.iter_mut() {
                *mask = (c & ((1 << m) - 1)) as u16;
                c >>= m;
            }
            users.fill(0);
            let mut cost = 0i128;
            for i in 0..n {
                for k in 0..m {
                    if masks[i] & (1 << k) != 0 {
                        users[k] += 1;
                        cost += costs.cc(i, k);
                    }
                }
            }
            for k in 0..m {
                if users[k] > 0 {
                    cost += costs.fcost[k];
                }
            }
            for i in 0..n {
                for j in i + 1..n {
                    if masks[i] & masks[j] == 0 {
                        cost += 2 * costs.dc(i, j);
                    }
                }
            }
            let better = match &best {
                None => true,
                Some((bc, bm)) => cost < *bc || (cost == *bc && set_seq_less(&masks, bm)),
            };
            if better {
                best = Some((cost, masks.clone()));
            }
        }
        let (bc, bm) = best.expect("at least one assignment exists");
        let assignment = MultiAssignment::new(
            bm.iter()
                .map(|&mask| FacilitySet::from_indices((0..m).filter(|k| mask & (1 << k) != 0)))
                .collect(),
        );
        return Ok((assignment, costs.unscale(bc)));
    }

    // Rational fallback.
    let mut best: Option<(Rat, MultiAssignment)> = None;
    for counter in 0..total {
        let mut c = counter;
        let sets: Vec<FacilitySet> = (0..n)
            .map(|_| {
                let mask = c & ((1 << m) - 1);
                c >>= m;
                FacilitySet::from_indices((0..m).filter(|k| mask & (1 << k) != 0))
            })
            .collect();
        let ma = MultiAssignment::new(sets);
        let cost = crate::multi::social_cost_multi(inst, &ma);
        let better = match &best {
            None => true,
            Some((bc, bm)) => {
                cost < *bc
                    || (cost == *bc && ma.iter().cmp(bm.iter()) == std::cmp::Ordering::Less)
            }
        };
        if better {
            best = Some((cost, ma));
        }
    }
    let (cost, ma) = best.expect("at least one assignment exists");
    Ok((ma, cost))
}

/// Witness prices for a stabilizable assignment: each user pays its
/// Q-value scaled per facility so the totals meet the opening costs
/// exactly.
fn witness_gamma(inst: &Instance, assignment: &Assignment) -> PricingStrategy {
    let mut gamma = PricingStrategy::none(inst.n());
    for f in assignment.open_facilities(inst.m()) {
        let users = assignment.users_of(f);
        let qs: Vec<Rat> = users
            .iter()
            .map(|&i| q_value(inst, assignment, i).finite().clone())
            .collect();
        let total: Rat = qs.iter().sum();
        if total.is_zero() {
            continue;
        }
        let factor = inst.fcost(f) / &total;
        for (&i, q) in users.iter().zip(&qs) {
            gamma.set(i, f, q * &factor);
        }
    }
    gamma
}

/// All assignments that admit budget-balanced stable prices, in
/// lexicographic order, each with a witness price vector.
pub fn enumerate_stabilizable(inst: &Instance) -> Result<Vec<StabilizableState>, ModelError> {
    ensure_single_cap(inst)?;
    let mut out = Vec::new();
    match IntCosts::build(inst) {
        Some(costs) => {
            let mut pass = SinglePass::new(&costs);
            let mut qbuf = Vec::new();
            loop {
                if pass.stabilizable(&mut qbuf) {
                    let assignment = pass.assignment();
                    let cost = costs.unscale(pass.social_cost());
                    let gamma = witness_gamma(inst, &assignment);
                    out.push(StabilizableState {
                        assignment,
                        cost,
                        gamma,
                    });
                }
                if !pass.advance() {
                    break;
                }
            }
        }
        None => {
            // Rational fallback reuses the core for best/worst but must
            // enumerate every stabilizable assignment; replay the same
            // criterion via the public q_value.
            let n = inst.n();
            let m = inst.m();
            let mut digits = vec![0usize; n];
            loop {
                let assignment =
                    Assignment::new(digits.iter().map(|&d| d.checked_sub(1)).collect());
                let mut ok = true;
                let mut qs = Vec::with_capacity(n);
                for i in 0..n {
                    match q_value(inst, &assignment, i) {
                        QValue::Finite(v) => {
                            if v.is_negative() {
                                ok = false;
                                break;
                            }
                            qs.push(Some(v));
                        }
                        QValue::NoAlternative => qs.push(None),
                    }
                }
                if ok {
                    for f in assignment.open_facilities(m) {
                        let total: Rat = assignment
                            .users_of(f)
                            .into_iter()
                            .map(|i| qs[i].clone().expect("placed agents have alternatives"))
                            .sum();
                        if total < *inst.fcost(f) {
                            ok = false;
                            break;
                        }
                    }
                }
                if ok {
                    let cost = crate::model::social_cost(inst, &assignment);
                    let gamma = witness_gamma(inst, &assignment);
                    out.push(StabilizableState {
                        assignment,
                        cost,
                        gamma,
                    });
                }
                let mut advanced = false;
                for agent in (0..n).rev() {
                    if digits[agent] < m {
                        digits[agent] += 1;
                        advanced = true;
                        break;
                    }
                    digits[agent] = 0;
                }
                if !advanced {
                    break;
                }
            }
        }
    }
    Ok(out)
}

fn ratio(extremal: &Rat, optimum: &Rat) -> RatioOutcome {
    if extremal == optimum {
        return RatioOutcome::Finite(Rat::one());
    }
    if optimum.is_zero() {
        return RatioOutcome::Unbounded;
    }
    RatioOutcome::Finite(extremal / optimum)
}

/// Best stable cost over the optimum cost; 1 exactly when the optimum
/// itself is stabilizable.
pub fn price_of_stability(inst: &Instance) -> Result<RatioOutcome, ModelError> {
    let core = single_core(inst)?;
    Ok(ratio(&core.best_stable_cost, &core.optimum_cost))
}

/// Worst stable cost over the optimum cost.
pub fn price_of_anarchy(inst: &Instance) -> Result<RatioOutcome, ModelError> {
    let core = single_core(inst)?;
    Ok(ratio(&core.worst_stable_cost, &core.optimum_cost))
}

pub fn oracle_report(inst: &Instance) -> Result<OracleReport, ModelError> {
    let core = single_core(inst)?;
    Ok(OracleReport {
        optimum: core.optimum.clone(),
        optimum_cost: core.optimum_cost.clone(),
        best_stable: core.best_stable.clone(),
        best_stable_cost: core.best_stable_cost.clone(),
        worst_stable: core.worst_stable.clone(),
        worst_stable_cost: core.worst_stable_cost.clone(),
        pos: ratio(&core.best_stable_cost, &core.optimum_cost),
        poa: ratio(&core.worst_stable_cost, &core.optimum_cost),
    })
}

/// Deviation-proofness checked the long way: every agent against every
/// alternative strategy (staying out and every facility, open or closed),
/// comparing realized costs directly. Deliberately written without the
/// Q-value shortcut so it can arbitrate it.
pub fn literal_stability_scan(
    inst: &Instance,
    state: &State,
    payments: Option<&PaymentVector>,
) -> Vec<bool> {
    let n = inst.n();
    let m = inst.m();
    let raw_tc = |strategies: &[Strategy], i: usize| -> Rat {
        let mut total = Rat::zero();
        if let Some(f) = strategies[i] {
            total += inst.cc(i, f);
        }
        for j in 0..n {
            if j == i {
                continue;
            }
            let connected = match (strategies[i], strategies[j]) {
                (Some(a), Some(b)) => a == b,
                _ => false,
            };
            if !connected {
                total += inst.dc(i, j);
            }
        }
        total
    };
    let strategies: Vec<Strategy> = state.assignment.iter().collect();
    (0..n)
        .map(|i| {
            let mut here = raw_tc(&strategies, i);
            if let Some(f) = strategies[i] {
                here += &state.prices.get(i, f);
            }
            if let Some(p) = payments {
                here -= p.delta(i);
            }
            let mut alts: Vec<Strategy> = vec![None];
            alts.extend((0..m).map(Some));
            alts.into_iter()
                .filter(|alt| *alt != strategies[i])
                .all(|alt| {
                    let mut moved = strategies.clone();
                    moved[i] = alt;
                    // Deviators pay no price at the target and forfeit
                    // any coordinator payment.
                    raw_tc(&moved, i) >= here
                })
        })
        .collect()
}
