//! Core game model: instances, assignments, prices, costs, potentials, and
//! stability checks for the single-facility setting.
//!
//! Conventions used throughout the crate:
//! - Agents and facilities are indexed from 0 internally. JSON interfaces
//!   use 1-based indices (`null` encodes staying out).
//! - A strategy is `Option<usize>`: `Some(k)` joins facility k, `None`
//!   stays out.
//! - Two agents are *connected* only when they are at the same facility.
//!   Two agents that both stay out are disconnected from each other.
//! - A facility is *open* exactly when some agent uses it.

use std::collections::BTreeMap;
use std::fmt;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::rat::Rat;

/// A single-facility strategy: join facility `k` or stay out.
pub type Strategy = Option<usize>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelError {
    /// Malformed JSON text.
    Json(String),
    /// Well-formed JSON (or in-memory data) violating the schema.
    Invalid(String),
    /// Alpha parameter outside [1, 2].
    AlphaOutOfRange(Rat),
    /// Exhaustive enumeration would exceed the supported size cap.
    TooLarge(String),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Json(e) => write!(f, "malformed JSON: {e}"),
            ModelError::Invalid(e) => write!(f, "invalid data: {e}"),
            ModelError::AlphaOutOfRange(a) => {
                write!(f, "alpha must lie in [1, 2], got {a}")
            }
            ModelError::TooLarge(e) => write!(f, "size cap exceeded: {e}"),
        }
    }
}

impl std::error::Error for ModelError {}

fn invalid(msg: impl Into<String>) -> ModelError {
    ModelError::Invalid(msg.into())
}

/// A game instance: `n` agents, `m` facilities, connection cost matrix
/// `cc[i][k]`, symmetric disconnection cost matrix `dc[i][j]` with zero
/// diagonal, and facility opening costs `fcost[k]`. All costs nonnegative.
#[derive(Clone, PartialEq, Eq)]
pub struct Instance {
    n: usize,
    m: usize,
    cc: Vec<Vec<Rat>>,
    dc: Vec<Vec<Rat>>,
    fcost: Vec<Rat>,
}

impl fmt::Debug for Instance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Instance(n={}, m={})", self.n, self.m)
    }
}

impl Instance {
    pub fn new(cc: Vec<Vec<Rat>>, dc: Vec<Vec<Rat>>, fcost: Vec<Rat>) -> Result<Self, ModelError> {
        let n = cc.len();
        let m = fcost.len();
        if n == 0 {
            return Err(invalid("instance needs at least one agent"));
        }
        for (i, row) in cc.iter().enumerate() {
            if row.len() != m {
                return Err(invalid(format!(
                    "cc row {} has {} entries, expected {m}",
                    i + 1,
                    row.len()
                )));
            }
            if let Some(k) = row.iter().position(Rat::is_negative) {
                return Err(invalid(format!("cc({}, f{}) is negative", i + 1, k + 1)));
            }
        }
        if dc.len() != n {
            return Err(invalid(format!("dc has {} rows, expected {n}", dc.len())));
        }
        for (i, row) in dc.iter().enumerate() {
            if row.len() != n {
                return Err(invalid(format!(
                    "dc row {} has {} entries, expected {n}",
                    i + 1,
                    row.len()
                )));
            }
        }
        for i in 0..n {
            if !dc[i][i].is_zero() {
                return Err(invalid(format!("dc({0}, {0}) must be zero", i + 1)));
            }
            for j in 0..n {
                if dc[i][j].is_negative() {
                    return Err(invalid(format!("dc({}, {}) is negative", i + 1, j + 1)));
                }
                if dc[i][j] != dc[j][i] {
                    return Err(invalid(format!(
                        "dc({}, {}) differs from dc({}, {})",
                        i + 1,
                        j + 1,
                        j + 1,
                        i + 1
                    )));
                }
            }
        }
        if let Some(k) = fcost.iter().position(Rat::is_negative) {
            return Err(invalid(format!("fcost(f{}) is negative", k + 1)));
        }
        Ok(Instance { n, m, cc, dc, fcost })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn cc(&self, agent: usize, facility: usize) -> &Rat {
        &self.cc[agent][facility]
    }

    pub fn dc(&self, i: usize, j: usize) -> &Rat {
        &self.dc[i][j]
    }

    pub fn fcost(&self, facility: usize) -> &Rat {
        &self.fcost[facility]
    }

    /// Replace the disconnection matrix, revalidating.
    pub fn with_dc(&self, dc: Vec<Vec<Rat>>) -> Result<Self, ModelError> {
        Instance::new(self.cc.clone(), dc, self.fcost.clone())
    }

    pub fn parse_json(text: &str) -> Result<Self, ModelError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            n: usize,
            m: usize,
            cc: Vec<Vec<Rat>>,
            dc: Vec<Vec<Rat>>,
            fcost: Vec<Rat>,
        }
        let raw: Raw = serde_json::from_str(text).map_err(|e| ModelError::Json(e.to_string()))?;
        let inst = Instance::new(raw.cc, raw.dc, raw.fcost)?;
        if inst.n != raw.n {
            return Err(invalid(format!("n = {} but cc has {} rows", raw.n, inst.n)));
        }
        if inst.m != raw.m {
            return Err(invalid(format!(
                "m = {} but fcost has {} entries",
                raw.m, inst.m
            )));
        }
        Ok(inst)
    }

    /// Pretty JSON. Integer costs are written as JSON numbers; other values
    /// as exact strings (finite decimal when one exists, `p/q` otherwise).
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("serializing instance")
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        use serde_json::{json, Value};
        let dec = |r: &Rat| -> Value {
            if r.is_integer() {
                if let Ok(v) = i64::try_from(r.numer().clone()) {
                    if v.abs() < (1 << 53) {
                        return json!(v);
                    }
                }
            }
            match r.decimal_string() {
                Some(d) => json!(d),
                None => json!(r.to_string()),
            }
        };
        let matrix =
            |rows: &[Vec<Rat>]| Value::Array(rows.iter().map(|r| Value::Array(r.iter().map(dec).collect())).collect());
        let mut map = serde_json::Map::new();
        map.insert("n".into(), json!(self.n));
        map.insert("m".into(), json!(self.m));
        map.insert("cc".into(), matrix(&self.cc));
        map.insert("dc".into(), matrix(&self.dc));
        map.insert("fcost".into(), Value::Array(self.fcost.iter().map(dec).collect()));
        Value::Object(map)
    }

    /// Content hash: SHA-256 over a canonical compact encoding with every
    /// value in reduced `p/q` form. Reports cite this hash so artifacts can
    /// be matched to the instance they were computed from.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("n={};m={};", self.n, self.m));
        let mut feed = |tag: &str, rows: &[Vec<Rat>]| {
            h.update(tag);
            for row in rows {
                for v in row {
                    h.update(v.to_string());
                    h.update(",");
                }
                h.update(";");
            }
        };
        feed("cc:", &self.cc);
        feed("dc:", &self.dc);
        h.update("fcost:");
        for v in &self.fcost {
            h.update(v.to_string());
            h.update(",");
        }
        let digest = h.finalize();
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }

    /// True when every cost is an integer (the common case for generated
    /// instances; lets oracles use fast machine arithmetic).
    pub fn all_integer(&self) -> bool {
        self.cc.iter().flatten().all(Rat::is_integer)
            && self.dc.iter().flatten().all(Rat::is_integer)
            && self.fcost.iter().all(Rat::is_integer)
    }

    pub fn check_assignment(&self, a: &Assignment) -> Result<(), ModelError> {
        if a.len() != self.n {
            return Err(invalid(format!(
                "assignment has {} agents, instance has {}",
                a.len(),
                self.n
            )));
        }
        for (i, s) in a.iter().enumerate() {
            if let Some(k) = s {
                if k >= self.m {
                    return Err(invalid(format!(
                        "agent {} assigned to facility {} but instance has m = {}",
                        i + 1,
                        k + 1,
                        self.m
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A full strategy profile for the single-facility setting.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Assignment(Vec<Strategy>);

impl fmt::Debug for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            match s {
                Some(k) => write!(f, "f{}", k + 1)?,
                None => write!(f, "∅")?,
            }
        }
        write!(f, "}}")
    }
}

impl Assignment {
    pub fn new(strategies: Vec<Strategy>) -> Self {
        Assignment(strategies)
    }

    /// Everyone stays out.
    pub fn all_out(n: usize) -> Self {
        Assignment(vec![None; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, agent: usize) -> Strategy {
        self.0[agent]
    }

    pub fn set(&mut self, agent: usize, s: Strategy) {
        self.0[agent] = s;
    }

    pub fn iter(&self) -> impl Iterator<Item = Strategy> + '_ {
        self.0.iter().copied()
    }

    pub fn is_open(&self, facility: usize) -> bool {
        self.0.iter().any(|s| *s == Some(facility))
    }

    pub fn users_of(&self, facility: usize) -> Vec<usize> {
        (0..self.0.len())
            .filter(|&i| self.0[i] == Some(facility))
            .collect()
    }

    pub fn open_facilities(&self, m: usize) -> Vec<usize> {
        (0..m).filter(|&k| self.is_open(k)).collect()
    }

    /// JSON form: array of 1-based facility indices, `null` for staying out.
    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::Value::Array(
            self.0
                .iter()
                .map(|s| match s {
                    Some(k) => serde_json::json!(k + 1),
                    None => serde_json::Value::Null,
                })
                .collect(),
        )
    }

    pub fn from_json_value(
        v: &serde_json::Value,
        n: usize,
        m: usize,
    ) -> Result<Self, ModelError> {
        let arr = v
            .as_array()
            .ok_or_else(|| invalid("assignment must be an array"))?;
        if arr.len() != n {
            return Err(invalid(format!(
                "assignment has {} entries, expected {n}",
                arr.len()
            )));
        }
        let mut out = Vec::with_capacity(n);
        for (i, e) in arr.iter().enumerate() {
            match e {
                serde_json::Value::Null => out.push(None),
                serde_json::Value::Number(num) => {
                    let k = num
                        .as_u64()
                        .ok_or_else(|| invalid(format!("agent {}: bad facility index", i + 1)))?;
                    if k < 1 || k as usize > m {
                        return Err(invalid(format!(
                            "agent {} assigned to facility {k}, valid range 1..={m}",
                            i + 1
                        )));
                    }
                    out.push(Some(k as usize - 1));
                }
                _ => {
                    return Err(invalid(format!(
                        "agent {}: strategy must be null or a facility index",
                        i + 1
                    )))
                }
            }
        }
        Ok(Assignment(out))
    }
}

/// Prices γ_i(f_k) charged toward facility opening costs. Sparse: absent
/// entries are zero. A price can be positive only at the facility the agent
/// actually uses; `State::new` enforces that support condition.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct PricingStrategy {
    prices: Vec<BTreeMap<usize, Rat>>,
}

impl fmt::Debug for PricingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PricingStrategy").field("prices", &"…").finish()
    }
}

impl PricingStrategy {
    pub fn none(n: usize) -> Self {
        PricingStrategy {
            prices: vec![BTreeMap::new(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn get(&self, agent: usize, facility: usize) -> Rat {
        self.prices[agent]
            .get(&facility)
            .cloned()
            .unwrap_or_else(Rat::zero)
    }

    pub fn set(&mut self, agent: usize, facility: usize, price: Rat) {
        if price.is_zero() {
            self.prices[agent].remove(&facility);
        } else {
            self.prices[agent].insert(facility, price);
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, &Rat)> + '_ {
        self.prices
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |(k, v)| (i, *k, v)))
    }
}

/// Assignment plus prices. Construction validates that prices are
/// nonnegative and supported only on used facilities.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct State {
    pub assignment: Assignment,
    pub prices: PricingStrategy,
}

impl State {
    pub fn new(assignment: Assignment, prices: PricingStrategy) -> Result<Self, ModelError> {
        if prices.len() != assignment.len() {
            return Err(invalid(format!(
                "prices cover {} agents, assignment has {}",
                prices.len(),
                assignment.len()
            )));
        }
        for (i, k, v) in prices.entries() {
            if v.is_negative() {
                return Err(invalid(format!(
                    "price of agent {} at facility {} is negative",
                    i + 1,
                    k + 1
                )));
            }
            if v.is_positive() && assignment.get(i) != Some(k) {
                return Err(invalid(format!(
                    "agent {} is charged at facility {} it does not use",
                    i + 1,
                    k + 1
                )));
            }
        }
        Ok(State { assignment, prices })
    }

    pub fn without_prices(assignment: Assignment) -> Self {
        let n = assignment.len();
        State {
            assignment,
            prices: PricingStrategy::none(n),
        }
    }

    /// Price the agent pays where it currently is (zero when staying out).
    pub fn own_price(&self, agent: usize) -> Rat {
        match self.assignment.get(agent) {
            Some(k) => self.prices.get(agent, k),
            None => Rat::zero(),
        }
    }
}

/// External payments Δ_i received by each agent, on top of prices.
/// Coordinator-mode payments are nonnegative; peering-mode payments are net
/// transfers and may be negative for net payers.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PaymentVector {
    delta: Vec<Rat>,
}

impl PaymentVector {
    pub fn zero(n: usize) -> Self {
        PaymentVector {
            delta: vec![Rat::zero(); n],
        }
    }

    /// Coordinator mode: every agent receives Δ_i ≥ 0.
    pub fn coordinator(delta: Vec<Rat>) -> Result<Self, ModelError> {
        if let Some(i) = delta.iter().position(Rat::is_negative) {
            return Err(invalid(format!(
                "coordinator payment to agent {} is negative",
                i + 1
            )));
        }
        Ok(PaymentVector { delta })
    }

    /// Net transfers (peering mode): Δ_i = Σ_j p_ji may have either sign.
    pub fn net(delta: Vec<Rat>) -> Self {
        PaymentVector { delta }
    }

    pub fn delta(&self, agent: usize) -> &Rat {
        &self.delta[agent]
    }

    pub fn deltas(&self) -> &[Rat] {
        &self.delta
    }

    pub fn total(&self) -> Rat {
        self.delta.iter().sum()
    }
}

/// Per-agent cost: connection cost of the chosen facility plus the
/// disconnection cost toward every agent not sharing it.
pub fn tc(inst: &Instance, a: &Assignment, agent: usize) -> Rat {
    cost_with_alpha(inst, a, agent, &Rat::one())
}

/// tc with the disconnection part weighted by α. Used by the α-approximate
/// dynamics; α = 1 is exactly `tc`.
pub fn cost_with_alpha(inst: &Instance, a: &Assignment, agent: usize, alpha: &Rat) -> Rat {
    let mut out = match a.get(agent) {
        Some(k) => inst.cc(agent, k).clone(),
        None => Rat::zero(),
    };
    let mut disc = Rat::zero();
    for j in 0..inst.n() {
        if j != agent && !connected(a.get(agent), a.get(j)) {
            disc += inst.dc(agent, j);
        }
    }
    if *alpha == Rat::one() {
        out += disc;
    } else {
        out += alpha * &disc;
    }
    out
}

/// Connected iff both are at the same facility. Two agents staying out do
/// NOT count as connected.
fn connected(a: Strategy, b: Strategy) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => x == y,
        _ => false,
    }
}

/// tc of `agent` after unilaterally switching to `target`, others fixed.
pub fn tc_after_move(inst: &Instance, a: &Assignment, agent: usize, target: Strategy) -> Rat {
    let mut out = match target {
        Some(k) => inst.cc(agent, k).clone(),
        None => Rat::zero(),
    };
    for j in 0..inst.n() {
        if j != agent && !connected(target, a.get(j)) {
            out += inst.dc(agent, j);
        }
    }
    out
}

pub(crate) fn cost_with_alpha_after_move(
    inst: &Instance,
    a: &Assignment,
    agent: usize,
    target: Strategy,
    alpha: &Rat,
) -> Rat {
    let out = match target {
        Some(k) => inst.cc(agent, k).clone(),
        None => Rat::zero(),
    };
    let mut disc = Rat::zero();
    for j in 0..inst.n() {
        if j != agent && !connected(target, a.get(j)) {
            disc += inst.dc(agent, j);
        }
    }
    out + alpha * &disc
}

/// Real cost: tc plus the price paid at the current facility, minus any
/// external payment received.
pub fn rc(
    inst: &Instance,
    state: &State,
    payments: Option<&PaymentVector>,
    agent: usize,
) -> Rat {
    let mut out = tc(inst, &state.assignment, agent) + state.own_price(agent);
    if let Some(p) = payments {
        out -= p.delta(agent);
    }
    out
}

/// Social cost: opening costs of open facilities, plus all connection
/// costs, plus 2·dc(i,j) for every disconnected pair (both sides pay).
pub fn social_cost(inst: &Instance, a: &Assignment) -> Rat {
    let mut out = Rat::zero();
    for k in 0..inst.m() {
        if a.is_open(k) {
            out += inst.fcost(k);
        }
    }
    for i in 0..inst.n() {
        if let Some(k) = a.get(i) {
            out += inst.cc(i, k);
        }
        for j in i + 1..inst.n() {
            if !connected(a.get(i), a.get(j)) {
                out += &(inst.dc(i, j) + inst.dc(i, j));
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PotentialKind {
    /// Φ̃: connection costs plus each disconnected pair's dc counted once.
    Tilde,
    /// Φ: Φ̃ plus opening costs of open facilities.
    Full,
    /// Φ_α: disconnection part weighted by α ∈ [1, 2], plus opening costs.
    Alpha(Rat),
}

pub fn potential(inst: &Instance, a: &Assignment, kind: PotentialKind) -> Result<Rat, ModelError> {
    let alpha = match &kind {
        PotentialKind::Tilde | PotentialKind::Full => Rat::one(),
        PotentialKind::Alpha(alpha) => {
            check_alpha(alpha)?;
            alpha.clone()
        }
    };
    let mut cc_sum = Rat::zero();
    let mut dc_sum = Rat::zero();
    for i in 0..inst.n() {
        if let Some(k) = a.get(i) {
            cc_sum += inst.cc(i, k);
        }
        for j in i + 1..inst.n() {
            if !connected(a.get(i), a.get(j)) {
                dc_sum += inst.dc(i, j);
            }
        }
    }
    let mut out = cc_sum + alpha * dc_sum;
    if !matches!(kind, PotentialKind::Tilde) {
        for k in 0..inst.m() {
            if a.is_open(k) {
                out += inst.fcost(k);
            }
        }
    }
    Ok(out)
}

pub fn check_alpha(alpha: &Rat) -> Result<(), ModelError> {
    if *alpha < Rat::one() || *alpha > Rat::from_int(2) {
        return Err(ModelError::AlphaOutOfRange(alpha.clone()));
    }
    Ok(())
}

/// Result of looking for an agent's best alternative strategy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NextBest {
    Strategy(Strategy),
    /// No alternative exists (an agent staying out of a zero-facility
    /// instance). Treated as an unbeatable alternative: Q = +∞.
    NoAlternative,
}

/// Q_i(s): tc of the next best response minus current tc. The largest price
/// the agent tolerates while staying put.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum QValue {
    Finite(Rat),
    NoAlternative,
}

impl QValue {
    /// Does `price ≤ Q` hold? The no-alternative marker dominates any price.
    pub fn admits(&self, price: &Rat) -> bool {
        match self {
            QValue::Finite(q) => price <= q,
            QValue::NoAlternative => true,
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.admits(&Rat::zero())
    }

    /// Finite value, or panic. Callers that already know the agent uses a
    /// facility (where ∅ is always an alternative) may unwrap safely.
    pub fn finite(&self) -> &Rat {
        match self {
            QValue::Finite(q) => q,
            QValue::NoAlternative => panic!("Q is unbounded here"),
        }
    }
}

/// Alternatives considered by nBR_i: every strategy other than the current
/// one, except that closed facilities are never *chosen* when avoidable.
/// For an agent at a facility, ∅ is available and beats any closed facility,
/// so candidates are ∅ plus the other open facilities. For an agent staying
/// out, candidates are the open facilities; when none is open every
/// (closed) facility remains a legal deviation target, so all facilities
/// are candidates.
pub(crate) fn nbr_candidates(inst: &Instance, a: &Assignment, agent: usize) -> Vec<Strategy> {
    let mut out = Vec::new();
    match a.get(agent) {
        Some(cur) => {
            out.push(None);
            for k in 0..inst.m() {
                if k != cur && a.is_open(k) {
                    out.push(Some(k));
                }
            }
        }
        None => {
            for k in 0..inst.m() {
                if a.is_open(k) {
                    out.push(Some(k));
                }
            }
            if out.is_empty() {
                out = (0..inst.m()).map(Some).collect();
            }
        }
    }
    out
}

/// nBR_i(s): the tc-minimizing alternative with ties broken toward ∅, then
/// the lowest facility index.
pub fn next_best_response(inst: &Instance, a: &Assignment, agent: usize) -> NextBest {
    let cands = nbr_candidates(inst, a, agent);
    let mut best: Option<(Strategy, Rat)> = None;
    // Candidate order is already the tie-break order (∅ first, then
    // ascending facility index), so a strict `<` keeps the preferred one.
    for cand in cands {
        let cost = tc_after_move(inst, a, agent, cand);
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

pub fn q_value(inst: &Instance, a: &Assignment, agent: usize) -> QValue {
    match next_best_response(inst, a, agent) {
        NextBest::Strategy(target) => QValue::Finite(
            tc_after_move(inst, a, agent, target) - tc(inst, a, agent),
        ),
        NextBest::NoAlternative => QValue::NoAlternative,
    }
}

/// Outcome of a stability check.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StabilityCertificate {
    pub budget_balanced: bool,
    /// Per-agent verdicts, indexed by agent.
    pub agent_stable: Vec<bool>,
}

impl StabilityCertificate {
    pub fn stable(&self) -> bool {
        self.budget_balanced && self.agent_stable.iter().all(|&b| b)
    }

    pub fn first_unstable_agent(&self) -> Option<usize> {
        self.agent_stable.iter().position(|&b| !b)
    }
}

/// Budget balance: each open facility's prices sum exactly to its cost.
pub fn budget_balanced(inst: &Instance, state: &State) -> bool {
    for k in 0..inst.m() {
        let users = state.assignment.users_of(k);
        if users.is_empty() {
            continue;
        }
        let sum: Rat = users.iter().map(|&i| state.prices.get(i, k)).sum();
        if sum != *inst.fcost(k) {
            return false;
        }
    }
    true
}

/// Stability: budget balance plus, per agent, γ_i(s_i) − Δ_i ≤ Q_i(s).
/// This criterion is exact: the agent's cheapest deviation is its nBR, and
/// a deviating agent anticipates paying no price at the target.
pub fn is_stable(
    inst: &Instance,
    state: &State,
    payments: Option<&PaymentVector>,
) -> StabilityCertificate {
    let agent_stable = (0..inst.n())
        .map(|i| {
            let mut charge = state.own_price(i);
            if let Some(p) = payments {
                charge -= p.delta(i);
            }
            q_value(inst, &state.assignment, i).admits(&charge)
        })
        .collect();
    StabilityCertificate {
        budget_balanced: budget_balanced(inst, state),
        agent_stable,
    }
}

/// α-approximate stability: budget balance plus, per agent and per
/// alternative strategy s', rc_i ≤ α·tc_i(s', s_{−i}). Checked literally
/// against every alternative, including closed facilities.
pub fn is_alpha_stable(
    inst: &Instance,
    state: &State,
    alpha: &Rat,
    payments: Option<&PaymentVector>,
) -> Result<StabilityCertificate, ModelError> {
    check_alpha(alpha)?;
    let a = &state.assignment;
    let agent_stable = (0..inst.n())
        .map(|i| {
            let real = rc(inst, state, payments, i);
            let mut alternatives: Vec<Strategy> = (0..inst.m()).map(Some).collect();
            alternatives.push(None);
            alternatives
                .into_iter()
                .filter(|t| *t != a.get(i))
                .all(|t| real <= alpha * tc_after_move(inst, a, i, t))
        })
        .collect();
    Ok(StabilityCertificate {
        budget_balanced: budget_balanced(inst, state),
        agent_stable,
    })
}
