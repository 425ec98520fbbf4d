//! Machine-readable JSON reports for every front-end operation, and the
//! reverse direction: re-checking an emitted report against its instance.
//!
//! Conventions shared by all report kinds:
//! - every report carries the `instance_hash` of the instance it was
//!   computed from, so artifacts can be matched to their input;
//! - rationals are exact `p/q` strings (integers without the `/q`), with
//!   occasional `*_approx` float fields for human readers;
//! - agents, facilities, and labels are 1-based; `null` means staying out;
//! - LP reports keep the fractional values as plain JSON numbers and the
//!   rounded vectors as 0/1 integers.
//!
//! [`verify_report`] re-derives everything a report claims. Checks with a
//! precise culprit come first (an underpriced agent is reported as
//! "agent 2 unstable"); after those, the report must equal a full replay
//! of the deterministic computation that produced it.

use serde_json::{json, Map, Value};

use crate::approx::{
    self, LabelingInstance, LpSolution, RandomizedRounding, RoundedSolution,
};
use crate::dynamics::{self, Trace, TraceStep};
use crate::model::{
    is_alpha_stable, is_stable, social_cost, q_value, Assignment, Instance, ModelError,
    PaymentVector, PricingStrategy, State, Strategy,
};
use crate::multi::{
    budget_balanced_multi, is_stable_multi, q_value_multi, social_cost_multi, stabilize_multi,
    MultiAssignment, MultiPeeringResult, MultiPricing, MultiState, MultiTrace, MultiTraceStep,
};
use crate::oracle::{self, OracleReport, RatioOutcome};
use crate::payments::{self, PaymentError, PeeringResult, TradeoffOutcome};
use crate::rat::Rat;

/// Why a report failed verification. `Malformed` covers files that do not
/// decode into the expected shape; `Violation` covers well-formed reports
/// whose claims do not hold against the instance; `Model` passes through
/// instance-level failures such as enumeration caps.
#[derive(Debug, Clone, PartialEq)]
pub enum VerifyError {
    Malformed(String),
    Violation(String),
    Model(ModelError),
}

impl std::fmt::Display for VerifyError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VerifyError::Malformed(m) => write!(f, "malformed report: {m}"),
            VerifyError::Violation(m) => write!(f, "{m}"),
            VerifyError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for VerifyError {}

fn malformed(msg: impl Into<String>) -> VerifyError {
    VerifyError::Malformed(msg.into())
}

fn violation(msg: impl Into<String>) -> VerifyError {
    VerifyError::Violation(msg.into())
}

/// Model errors raised while re-deriving report *contents* mean the report
/// carried data the model rejects, so they read as malformed input; size
/// caps stay visible as such.
fn model_err(e: ModelError) -> VerifyError {
    match e {
        ModelError::TooLarge(_) => VerifyError::Model(e),
        other => malformed(other.to_string()),
    }
}

fn payment_err(e: PaymentError) -> VerifyError {
    match e {
        PaymentError::Model(m) => model_err(m),
        other => violation(other.to_string()),
    }
}

fn approx_err(e: approx::ApproxError) -> VerifyError {
    match e {
        approx::ApproxError::Model(m) => model_err(m),
        other => violation(other.to_string()),
    }
}

// ---------------------------------------------------------------------------
// Emission helpers
// ---------------------------------------------------------------------------

fn rat_json(r: &Rat) -> Value {
    json!(r.to_string())
}

fn strategy_json(s: Strategy) -> Value {
    match s {
        Some(k) => json!(k + 1),
        None => Value::Null,
    }
}

/// Best/worst-to-optimum ratios: an exact string, or the unbounded marker.
fn ratio_outcome_json(r: &RatioOutcome) -> Value {
    match r {
        RatioOutcome::Finite(x) => rat_json(x),
        RatioOutcome::Unbounded => json!({ "unbounded": true }),
    }
}

fn ratio_outcome_approx(r: &RatioOutcome) -> Value {
    match r {
        RatioOutcome::Finite(x) => json!(x.to_f64()),
        RatioOutcome::Unbounded => Value::Null,
    }
}

fn ratio_of(cost: &Rat, opt: &Rat) -> RatioOutcome {
    if cost == opt {
        RatioOutcome::Finite(Rat::one())
    } else if opt.is_zero() {
        RatioOutcome::Unbounded
    } else {
        RatioOutcome::Finite(cost / opt)
    }
}

/// Prices as an object keyed by 1-based agent; only nonzero entries
/// appear. Single-facility prices live at exactly one facility per agent.
fn gamma_json(prices: &PricingStrategy) -> Value {
    let mut map = Map::new();
    for (i, k, v) in prices.entries() {
        if v.is_zero() {
            continue;
        }
        map.insert(
            (i + 1).to_string(),
            json!({ "facility": k + 1, "price": v.to_string() }),
        );
    }
    Value::Object(map)
}

/// Multi prices: each agent maps to a list of per-facility entries.
fn multi_gamma_json(prices: &MultiPricing) -> Value {
    let mut map = Map::new();
    for i in 0..prices.len() {
        let entries: Vec<Value> = prices
            .entries(i)
            .filter(|(_, v)| !v.is_zero())
            .map(|(k, v)| json!({ "facility": k + 1, "price": v.to_string() }))
            .collect();
        if !entries.is_empty() {
            map.insert((i + 1).to_string(), Value::Array(entries));
        }
    }
    Value::Object(map)
}

fn delta_json(deltas: &[Rat]) -> Value {
    Value::Array(deltas.iter().map(rat_json).collect())
}

/// Peer payments as payer→payee entries with positive amounts; the
/// antisymmetric other half of the matrix is implied.
fn peer_entries_json(p: &[Vec<Rat>], facility: Option<usize>) -> Vec<Value> {
    let mut out = Vec::new();
    for (i, row) in p.iter().enumerate() {
        for (j, amount) in row.iter().enumerate() {
            if amount.is_positive() {
                let mut e = Map::new();
                if let Some(k) = facility {
                    e.insert("facility".into(), json!(k + 1));
                }
                e.insert("i".into(), json!(i + 1));
                e.insert("j".into(), json!(j + 1));
                e.insert("amount".into(), rat_json(amount));
                out.push(Value::Object(e));
            }
        }
    }
    out
}

fn trace_step_json(step: &TraceStep) -> Value {
    match step {
        TraceStep::Improve {
            agent,
            from,
            to,
            potential,
        } => json!({
            "type": "improve",
            "agent": agent + 1,
            "from": strategy_json(*from),
            "to": strategy_json(*to),
            "potential": potential.to_string(),
        }),
        TraceStep::Close {
            facility,
            moves,
            potential,
        } => json!({
            "type": "close",
            "facility": facility + 1,
            "moves": moves
                .iter()
                .map(|(i, from, to)| json!({
                    "agent": i + 1,
                    "from": strategy_json(*from),
                    "to": strategy_json(*to),
                }))
                .collect::<Vec<_>>(),
            "potential": potential.to_string(),
        }),
    }
}

fn multi_trace_step_json(step: &MultiTraceStep) -> Value {
    match step {
        MultiTraceStep::Improve {
            agent,
            from,
            to,
            potential,
        } => json!({
            "type": "improve",
            "agent": agent + 1,
            "from": from.to_json_value(),
            "to": to.to_json_value(),
            "potential": potential.to_string(),
        }),
        MultiTraceStep::Close {
            facility,
            moves,
            potential,
        } => json!({
            "type": "close",
            "facility": facility + 1,
            "moves": moves
                .iter()
                .map(|(i, from, to)| json!({
                    "agent": i + 1,
                    "from": from.to_json_value(),
                    "to": to.to_json_value(),
                }))
                .collect::<Vec<_>>(),
            "potential": potential.to_string(),
        }),
    }
}

/// One step object per line, each carrying the potential after the step —
/// a grep-friendly view of the same steps the state report embeds.
pub fn trace_json_lines(trace: &Trace) -> String {
    let mut out = String::new();
    for step in &trace.steps {
        out.push_str(&trace_step_json(step).to_string());
        out.push('\n');
    }
    out
}

/// Multi-homing variant of [`trace_json_lines`].
pub fn multi_trace_json_lines(trace: &MultiTrace) -> String {
    let mut out = String::new();
    for step in &trace.steps {
        out.push_str(&multi_trace_step_json(step).to_string());
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Report emitters
// ---------------------------------------------------------------------------

/// Stabilization outcome: final priced state, full trace, and (when the
/// caller solved the instance exactly) the cost ratio against the optimum.
pub fn state_report(
    inst: &Instance,
    state: &State,
    trace: &Trace,
    optimum_cost: Option<&Rat>,
) -> Value {
    let cost = social_cost(inst, &state.assignment);
    let mut map = Map::new();
    map.insert("kind".into(), json!("state"));
    map.insert("mode".into(), json!("single"));
    map.insert("instance_hash".into(), json!(inst.content_hash()));
    map.insert("alpha".into(), json!(trace.alpha.to_string()));
    map.insert("start".into(), trace.start.to_json_value());
    map.insert(
        "start_potential".into(),
        json!(trace.start_potential.to_string()),
    );
    map.insert(
        "trace".into(),
        Value::Array(trace.steps.iter().map(trace_step_json).collect()),
    );
    map.insert("assignment".into(), state.assignment.to_json_value());
    map.insert("gamma".into(), gamma_json(&state.prices));
    map.insert("cost".into(), rat_json(&cost));
    map.insert("cost_approx".into(), json!(cost.to_f64()));
    map.insert("stable".into(), json!(true));
    if let Some(opt) = optimum_cost {
        map.insert("optimum_cost".into(), rat_json(opt));
        map.insert(
            "ratio_vs_optimum".into(),
            ratio_outcome_json(&ratio_of(&cost, opt)),
        );
    }
    Value::Object(map)
}

/// Multi-homing variant of [`state_report`]; assignments are arrays of
/// 1-based facility-index arrays.
pub fn multi_state_report(
    inst: &Instance,
    state: &MultiState,
    trace: &MultiTrace,
    optimum_cost: Option<&Rat>,
) -> Value {
    let cost = social_cost_multi(inst, &state.assignment);
    let mut map = Map::new();
    map.insert("kind".into(), json!("state"));
    map.insert("mode".into(), json!("multi"));
    map.insert("instance_hash".into(), json!(inst.content_hash()));
    map.insert("alpha".into(), json!(trace.alpha.to_string()));
    map.insert("start".into(), trace.start.to_json_value());
    map.insert(
        "start_potential".into(),
        json!(trace.start_potential.to_string()),
    );
    map.insert(
        "trace".into(),
        Value::Array(trace.steps.iter().map(multi_trace_step_json).collect()),
    );
    map.insert("assignment".into(), state.assignment.to_json_value());
    map.insert("gamma".into(), multi_gamma_json(&state.prices));
    map.insert("cost".into(), rat_json(&cost));
    map.insert("cost_approx".into(), json!(cost.to_f64()));
    map.insert("stable".into(), json!(true));
    if let Some(opt) = optimum_cost {
        map.insert("optimum_cost".into(), rat_json(opt));
        map.insert(
            "ratio_vs_optimum".into(),
            ratio_outcome_json(&ratio_of(&cost, opt)),
        );
    }
    Value::Object(map)
}

/// Coordinator payments from the direct scheme: nonnegative per-agent
/// subsidies plus the facility prices they support.
pub fn direct_payments_report(
    inst: &Instance,
    target: &Assignment,
    gamma: &PricingStrategy,
    payments: &PaymentVector,
) -> Value {
    json!({
        "kind": "payments-direct",
        "instance_hash": inst.content_hash(),
        "target": target.to_json_value(),
        "delta": delta_json(payments.deltas()),
        "total": payments.total().to_string(),
        "gamma": gamma_json(gamma),
        "p": [],
        "feasible": true,
    })
}

/// Peer-payment circulations: either the extracted prices and transfers,
/// or — per infeasible facility — a strictly cheaper refuting assignment.
pub fn peering_report(inst: &Instance, target: &Assignment, result: &PeeringResult) -> Value {
    json!({
        "kind": "payments-peering",
        "mode": "single",
        "instance_hash": inst.content_hash(),
        "target": target.to_json_value(),
        "feasible": result.feasible,
        "delta": delta_json(result.payments.deltas()),
        "gamma": gamma_json(&result.gamma),
        "p": peer_entries_json(&result.p, None),
        "refutations": result
            .refutations
            .iter()
            .map(|r| json!({
                "facility": r.facility + 1,
                "subset": r.subset.iter().map(|&i| i + 1).collect::<Vec<_>>(),
                "assignment": r.assignment.to_json_value(),
                "cost": r.cost.to_string(),
            }))
            .collect::<Vec<_>>(),
    })
}

/// Multi-homing peering: one circulation per open facility, each with its
/// own transfer matrix; `delta` totals the transfers per agent.
pub fn multi_peering_report(
    inst: &Instance,
    target: &MultiAssignment,
    result: &MultiPeeringResult,
) -> Value {
    let deltas: Vec<Rat> = (0..inst.n())
        .map(|i| result.p.keys().map(|&k| result.delta(i, k)).sum())
        .collect();
    let mut entries = Vec::new();
    for (&k, mat) in &result.p {
        entries.extend(peer_entries_json(mat, Some(k)));
    }
    json!({
        "kind": "payments-peering",
        "mode": "multi",
        "instance_hash": inst.content_hash(),
        "target": target.to_json_value(),
        "feasible": result.feasible,
        "delta": delta_json(&deltas),
        "gamma": multi_gamma_json(&result.gamma),
        "p": entries,
        "refutations": result
            .refutations
            .iter()
            .map(|r| json!({
                "facility": r.facility + 1,
                "subset": r.subset.iter().map(|&i| i + 1).collect::<Vec<_>>(),
                "assignment": r.assignment.to_json_value(),
                "cost": r.cost.to_string(),
            }))
            .collect::<Vec<_>>(),
    })
}

/// Doubled-weights instance: the peer payments folded into the
/// disconnection costs, leaving prices that stabilize the target with no
/// transfers at all.
pub fn doubling_report(
    inst: &Instance,
    target: &Assignment,
    doubled: &Instance,
    gamma: &PricingStrategy,
) -> Value {
    json!({
        "kind": "payments-double",
        "instance_hash": inst.content_hash(),
        "target": target.to_json_value(),
        "instance": doubled.to_json_value(),
        "gamma": gamma_json(gamma),
        "delta": delta_json(&vec![Rat::zero(); inst.n()]),
        "p": [],
        "feasible": true,
    })
}

/// Exhaustive single-facility optimum.
pub fn brute_report(inst: &Instance, assignment: &Assignment, cost: &Rat) -> Value {
    json!({
        "kind": "solution-brute",
        "mode": "single",
        "instance_hash": inst.content_hash(),
        "assignment": assignment.to_json_value(),
        "cost": cost.to_string(),
        "cost_approx": cost.to_f64(),
    })
}

/// Exhaustive multi-homing optimum.
pub fn multi_brute_report(inst: &Instance, assignment: &MultiAssignment, cost: &Rat) -> Value {
    json!({
        "kind": "solution-brute",
        "mode": "multi",
        "instance_hash": inst.content_hash(),
        "assignment": assignment.to_json_value(),
        "cost": cost.to_string(),
        "cost_approx": cost.to_f64(),
    })
}

fn f64_vec_json(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| json!(x)).collect())
}

fn f64_matrix_json(rows: &[Vec<f64>]) -> Value {
    Value::Array(rows.iter().map(|r| f64_vec_json(r)).collect())
}

fn bit_vec_json(v: &[bool]) -> Value {
    Value::Array(v.iter().map(|&b| json!(u8::from(b))).collect())
}

fn bit_matrix_json(rows: &[Vec<bool>]) -> Value {
    Value::Array(rows.iter().map(|r| bit_vec_json(r)).collect())
}

/// Fractional relaxation values. Pair-indexed vectors (`x_ij`, `x_ijk`)
/// run over unordered pairs in row-major `i < j` order.
fn lp_json(lp: &LpSolution) -> Value {
    json!({
        "objective": lp.objective,
        "x_ik": f64_matrix_json(&lp.x_ik),
        "x_ij": f64_vec_json(&lp.x_ij),
        "x_ijk": f64_matrix_json(&lp.x_ijk),
        "x_k": f64_vec_json(&lp.x_k),
    })
}

fn rounded_json(r: &RoundedSolution) -> Value {
    json!({
        "objective": r.objective.to_string(),
        "objective_approx": r.objective.to_f64(),
        "x_ik": bit_matrix_json(&r.x_ik),
        "x_ij": bit_vec_json(&r.x_ij),
        "x_ijk": bit_matrix_json(&r.x_ijk),
        "x_k": bit_vec_json(&r.x_k),
        "assignment": r.assignment.to_json_value(),
    })
}

/// Threshold rounding of the relaxation, with the (m+1) guarantee factor
/// and a lossy single-facility projection of the multi assignment.
pub fn lp_det_report(
    inst: &Instance,
    lp: &LpSolution,
    rounded: &RoundedSolution,
    projection: &Assignment,
) -> Value {
    json!({
        "kind": "solution-lp-det",
        "instance_hash": inst.content_hash(),
        "bound_factor": inst.m() + 1,
        "lp": lp_json(lp),
        "rounded": rounded_json(rounded),
        "single_projection": projection.to_json_value(),
    })
}

/// Correlated randomized rounding, reproducible from the recorded seed.
pub fn lp_rand_report(
    inst: &Instance,
    lp: &LpSolution,
    rounding: &RandomizedRounding,
    projection: &Assignment,
) -> Value {
    json!({
        "kind": "solution-lp-rand",
        "instance_hash": inst.content_hash(),
        "seed": rounding.seed,
        "runs": rounding.runs,
        "lp": lp_json(lp),
        "rounded": rounded_json(&rounding.solution),
        "single_projection": projection.to_json_value(),
    })
}

/// The uniform-labeling reduction together with its exhaustive optimum and
/// the assignment that optimum maps back to.
pub fn labeling_report(
    inst: &Instance,
    li: &LabelingInstance,
    labels: &[usize],
    cost: &Rat,
    assignment: &Assignment,
) -> Value {
    json!({
        "kind": "labeling",
        "instance_hash": inst.content_hash(),
        "nodes": li.nodes,
        "labels": li.labels,
        "label_cost": li
            .label_cost
            .iter()
            .map(|row| row.iter().map(rat_json).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
        "edges": li
            .edges
            .iter()
            .map(|(i, j, w)| json!({ "i": i + 1, "j": j + 1, "weight": w.to_string() }))
            .collect::<Vec<_>>(),
        "big": li.big.to_string(),
        "optimum_labels": labels.iter().map(|&l| l + 1).collect::<Vec<_>>(),
        "optimum_cost": cost.to_string(),
        "assignment": assignment.to_json_value(),
    })
}

/// Exhaustive quality summary: optimum, extreme stabilizable states, PoS,
/// PoA, and the payment/quality tradeoff numbers.
pub fn analysis_report(inst: &Instance, oracle: &OracleReport, tradeoff: &TradeoffOutcome) -> Value {
    json!({
        "kind": "analysis",
        "instance_hash": inst.content_hash(),
        "optimum": oracle.optimum.to_json_value(),
        "optimum_cost": oracle.optimum_cost.to_string(),
        "optimum_cost_approx": oracle.optimum_cost.to_f64(),
        "best_stable": oracle.best_stable.to_json_value(),
        "best_stable_cost": oracle.best_stable_cost.to_string(),
        "worst_stable": oracle.worst_stable.to_json_value(),
        "worst_stable_cost": oracle.worst_stable_cost.to_string(),
        "pos": ratio_outcome_json(&oracle.pos),
        "pos_approx": ratio_outcome_approx(&oracle.pos),
        "poa": ratio_outcome_json(&oracle.poa),
        "poa_approx": ratio_outcome_approx(&oracle.poa),
        "delta": tradeoff.delta.to_string(),
        "ratio": tradeoff.ratio.to_string(),
        "bound": tradeoff.bound.to_string(),
        "tradeoff_ok": tradeoff.ok,
    })
}

// ---------------------------------------------------------------------------
// Parsing helpers
// ---------------------------------------------------------------------------

type Obj = Map<String, Value>;

fn obj(v: &Value) -> Result<&Obj, VerifyError> {
    v.as_object()
        .ok_or_else(|| malformed("expected a JSON object"))
}

fn field<'a>(o: &'a Obj, key: &str) -> Result<&'a Value, VerifyError> {
    o.get(key)
        .ok_or_else(|| malformed(format!("missing field \"{key}\"")))
}

fn str_field<'a>(o: &'a Obj, key: &str) -> Result<&'a str, VerifyError> {
    field(o, key)?
        .as_str()
        .ok_or_else(|| malformed(format!("field \"{key}\" must be a string")))
}

fn bool_field(o: &Obj, key: &str) -> Result<bool, VerifyError> {
    field(o, key)?
        .as_bool()
        .ok_or_else(|| malformed(format!("field \"{key}\" must be a boolean")))
}

fn u64_field(o: &Obj, key: &str) -> Result<u64, VerifyError> {
    field(o, key)?
        .as_u64()
        .ok_or_else(|| malformed(format!("field \"{key}\" must be a nonnegative integer")))
}

fn array_field<'a>(o: &'a Obj, key: &str) -> Result<&'a Vec<Value>, VerifyError> {
    field(o, key)?
        .as_array()
        .ok_or_else(|| malformed(format!("field \"{key}\" must be an array")))
}

fn rat_value(v: &Value) -> Result<Rat, VerifyError> {
    serde_json::from_value(v.clone()).map_err(|e| malformed(e.to_string()))
}

fn rat_field(o: &Obj, key: &str) -> Result<Rat, VerifyError> {
    rat_value(field(o, key)?).map_err(|e| malformed(format!("field \"{key}\": {e}")))
}

fn rat_vec(v: &Value, expected_len: usize) -> Result<Vec<Rat>, VerifyError> {
    let arr = v
        .as_array()
        .ok_or_else(|| malformed("expected an array of rationals"))?;
    if arr.len() != expected_len {
        return Err(malformed(format!(
            "expected {expected_len} rationals, found {}",
            arr.len()
        )));
    }
    arr.iter().map(rat_value).collect()
}

/// A 1-based index from a report, returned 0-based.
fn based_index(v: &Value, limit: usize, what: &str) -> Result<usize, VerifyError> {
    let k = v
        .as_u64()
        .ok_or_else(|| malformed(format!("{what} index must be a number")))?;
    if k < 1 || k as usize > limit {
        return Err(malformed(format!(
            "{what} {k} out of range 1..={limit}"
        )));
    }
    Ok(k as usize - 1)
}

fn parse_assignment(v: &Value, inst: &Instance) -> Result<Assignment, VerifyError> {
    Assignment::from_json_value(v, inst.n(), inst.m()).map_err(|e| malformed(e.to_string()))
}

fn parse_multi_assignment(v: &Value, inst: &Instance) -> Result<MultiAssignment, VerifyError> {
    let ma = MultiAssignment::from_json_value(v, inst.m()).map_err(|e| malformed(e.to_string()))?;
    if ma.len() != inst.n() {
        return Err(malformed(format!(
            "assignment covers {} agents, instance has {}",
            ma.len(),
            inst.n()
        )));
    }
    Ok(ma)
}

fn parse_gamma(v: &Value, inst: &Instance) -> Result<PricingStrategy, VerifyError> {
    let o = obj(v)?;
    let mut g = PricingStrategy::none(inst.n());
    for (key, entry) in o {
        let agent = key
            .parse::<usize>()
            .ok()
            .filter(|a| (1..=inst.n()).contains(a))
            .ok_or_else(|| malformed(format!("bad agent key \"{key}\" in gamma")))?
            - 1;
        let eo = obj(entry)?;
        let facility = based_index(field(eo, "facility")?, inst.m(), "facility")?;
        g.set(agent, facility, rat_field(eo, "price")?);
    }
    Ok(g)
}

fn parse_multi_gamma(v: &Value, inst: &Instance) -> Result<MultiPricing, VerifyError> {
    let o = obj(v)?;
    let mut g = MultiPricing::zero(inst.n());
    for (key, entries) in o {
        let agent = key
            .parse::<usize>()
            .ok()
            .filter(|a| (1..=inst.n()).contains(a))
            .ok_or_else(|| malformed(format!("bad agent key \"{key}\" in gamma")))?
            - 1;
        let arr = entries
            .as_array()
            .ok_or_else(|| malformed("multi gamma entries must be arrays"))?;
        for entry in arr {
            let eo = obj(entry)?;
            let facility = based_index(field(eo, "facility")?, inst.m(), "facility")?;
            g.set(agent, facility, rat_field(eo, "price")?);
        }
    }
    Ok(g)
}

/// Peer entries back into a full antisymmetric matrix. Entries record the
/// payer/payee direction, so amounts must be positive and each unordered
/// pair may appear once (per facility in multi mode).
fn add_peer_entry(
    p: &mut [Vec<Rat>],
    i: usize,
    j: usize,
    amount: Rat,
) -> Result<(), VerifyError> {
    if i == j {
        return Err(malformed("a peer payment needs two distinct agents"));
    }
    if !amount.is_positive() {
        return Err(malformed(
            "peer payments are recorded payer to payee with positive amounts",
        ));
    }
    if !p[i][j].is_zero() || !p[j][i].is_zero() {
        return Err(malformed("duplicate peer payment entry"));
    }
    p[j][i] = -amount.clone();
    p[i][j] = amount;
    Ok(())
}

fn parse_peer_matrix(v: &Value, inst: &Instance) -> Result<Vec<Vec<Rat>>, VerifyError> {
    let arr = v
        .as_array()
        .ok_or_else(|| malformed("field \"p\" must be an array"))?;
    let n = inst.n();
    let mut p = vec![vec![Rat::zero(); n]; n];
    for entry in arr {
        let eo = obj(entry)?;
        let i = based_index(field(eo, "i")?, n, "agent")?;
        let j = based_index(field(eo, "j")?, n, "agent")?;
        add_peer_entry(&mut p, i, j, rat_field(eo, "amount")?)?;
    }
    Ok(p)
}

fn parse_multi_peer_matrices(
    v: &Value,
    inst: &Instance,
) -> Result<std::collections::BTreeMap<usize, Vec<Vec<Rat>>>, VerifyError> {
    let arr = v
        .as_array()
        .ok_or_else(|| malformed("field \"p\" must be an array"))?;
    let n = inst.n();
    let mut out: std::collections::BTreeMap<usize, Vec<Vec<Rat>>> = std::collections::BTreeMap::new();
    for entry in arr {
        let eo = obj(entry)?;
        let k = based_index(field(eo, "facility")?, inst.m(), "facility")?;
        let i = based_index(field(eo, "i")?, n, "agent")?;
        let j = based_index(field(eo, "j")?, n, "agent")?;
        let p = out.entry(k).or_insert_with(|| vec![vec![Rat::zero(); n]; n]);
        add_peer_entry(p, i, j, rat_field(eo, "amount")?)?;
    }
    Ok(out)
}

fn parse_ratio_outcome(v: &Value) -> Result<RatioOutcome, VerifyError> {
    if let Some(o) = v.as_object() {
        if o.get("unbounded").and_then(Value::as_bool) == Some(true) {
            return Ok(RatioOutcome::Unbounded);
        }
        return Err(malformed("a ratio is a string or {\"unbounded\": true}"));
    }
    Ok(RatioOutcome::Finite(rat_value(v)?))
}

fn f64_value(v: &Value) -> Result<f64, VerifyError> {
    v.as_f64()
        .ok_or_else(|| malformed("expected a number"))
}

fn f64_vec(v: &Value, expected_len: usize) -> Result<Vec<f64>, VerifyError> {
    let arr = v
        .as_array()
        .ok_or_else(|| malformed("expected an array of numbers"))?;
    if arr.len() != expected_len {
        return Err(malformed(format!(
            "expected {expected_len} numbers, found {}",
            arr.len()
        )));
    }
    arr.iter().map(f64_value).collect()
}

fn f64_matrix(v: &Value, rows: usize, cols: usize) -> Result<Vec<Vec<f64>>, VerifyError> {
    let arr = v
        .as_array()
        .ok_or_else(|| malformed("expected a matrix of numbers"))?;
    if arr.len() != rows {
        return Err(malformed(format!(
            "expected {rows} rows, found {}",
            arr.len()
        )));
    }
    arr.iter().map(|r| f64_vec(r, cols)).collect()
}

fn bit_value(v: &Value) -> Result<bool, VerifyError> {
    match v.as_u64() {
        Some(0) => Ok(false),
        Some(1) => Ok(true),
        _ => Err(malformed("rounded variables must be 0 or 1")),
    }
}

fn bit_vec(v: &Value, expected_len: usize) -> Result<Vec<bool>, VerifyError> {
    let arr = v
        .as_array()
        .ok_or_else(|| malformed("expected an array of 0/1 values"))?;
    if arr.len() != expected_len {
        return Err(malformed(format!(
            "expected {expected_len} values, found {}",
            arr.len()
        )));
    }
    arr.iter().map(bit_value).collect()
}

fn bit_matrix(v: &Value, rows: usize, cols: usize) -> Result<Vec<Vec<bool>>, VerifyError> {
    let arr = v
        .as_array()
        .ok_or_else(|| malformed("expected a matrix of 0/1 values"))?;
    if arr.len() != rows {
        return Err(malformed(format!(
            "expected {rows} rows, found {}",
            arr.len()
        )));
    }
    arr.iter().map(|r| bit_vec(r, cols)).collect()
}

// ---------------------------------------------------------------------------
// Verification
// ---------------------------------------------------------------------------

/// Re-check a report against the instance it cites. Violations carry the
/// most specific reason available ("agent 2 unstable", "refutation is not
/// cheaper than the target", …); beyond the targeted checks the report
/// must byte-for-byte equal a replay of the computation it records.
pub fn verify_report(inst: &Instance, report: &Value) -> Result<(), VerifyError> {
    let o = obj(report)?;
    let hash = str_field(o, "instance_hash")?;
    if hash != inst.content_hash() {
        return Err(violation(
            "instance hash mismatch: the report cites a different instance",
        ));
    }
    match str_field(o, "kind")? {
        "state" => verify_state(inst, report, o),
        "payments-direct" => verify_direct(inst, report, o),
        "payments-peering" => verify_peering(inst, report, o),
        "payments-double" => verify_double(inst, report, o),
        "solution-brute" => verify_brute(inst, report, o),
        "solution-lp-det" => verify_lp(inst, report, o, false),
        "solution-lp-rand" => verify_lp(inst, report, o, true),
        "labeling" => verify_labeling(inst, report, o),
        "analysis" => verify_analysis(inst, report, o),
        other => Err(malformed(format!("unknown report kind \"{other}\""))),
    }
}

fn check_trace_decreases(o: &Obj) -> Result<(), VerifyError> {
    let mut prev = rat_field(o, "start_potential")?;
    for step in array_field(o, "trace")? {
        let so = obj(step)?;
        let phi = rat_field(so, "potential")?;
        if phi >= prev {
            return Err(violation("trace potential fails to decrease strictly"));
        }
        prev = phi;
    }
    Ok(())
}

fn verify_state(inst: &Instance, report: &Value, o: &Obj) -> Result<(), VerifyError> {
    let alpha = rat_field(o, "alpha")?;
    let cost = rat_field(o, "cost")?;
    check_trace_decreases(o)?;
    match str_field(o, "mode")? {
        "single" => {
            let assignment = parse_assignment(field(o, "assignment")?, inst)?;
            let gamma = parse_gamma(field(o, "gamma")?, inst)?;
            let start = parse_assignment(field(o, "start")?, inst)?;
            if social_cost(inst, &assignment) != cost {
                return Err(violation("reported social cost does not match its assignment"));
            }
            let state = State::new(assignment, gamma).map_err(|e| violation(e.to_string()))?;
            let cert = if alpha == Rat::one() {
                is_stable(inst, &state, None)
            } else {
                is_alpha_stable(inst, &state, &alpha, None).map_err(model_err)?
            };
            if let Some(i) = cert.first_unstable_agent() {
                return Err(violation(format!("agent {} unstable", i + 1)));
            }
            if !cert.budget_balanced {
                return Err(violation("facility budgets are not balanced"));
            }
            let optimum = verify_optimum_field(inst, o, false)?;
            let (rs, rt) =
                dynamics::stabilize_alpha(inst, &alpha, Some(&start)).map_err(model_err)?;
            if *report != state_report(inst, &rs, &rt, optimum.as_ref()) {
                return Err(violation(
                    "report does not match a replay of the stabilization dynamics",
                ));
            }
        }
        "multi" => {
            let assignment = parse_multi_assignment(field(o, "assignment")?, inst)?;
            let gamma = parse_multi_gamma(field(o, "gamma")?, inst)?;
            let start = parse_multi_assignment(field(o, "start")?, inst)?;
            if social_cost_multi(inst, &assignment) != cost {
                return Err(violation("reported social cost does not match its assignment"));
            }
            let state =
                MultiState::new(assignment, gamma).map_err(|e| violation(e.to_string()))?;
            if alpha == Rat::one() {
                let cert = is_stable_multi(inst, &state, None).map_err(model_err)?;
                if let Some(i) = cert.first_unstable_agent() {
                    return Err(violation(format!("agent {} unstable", i + 1)));
                }
                if !cert.budget_balanced {
                    return Err(violation("facility budgets are not balanced"));
                }
            } else if !budget_balanced_multi(inst, &state) {
                return Err(violation("facility budgets are not balanced"));
            }
            let optimum = verify_optimum_field(inst, o, true)?;
            let (rs, rt) =
                stabilize_multi(inst, Some(&start), &alpha).map_err(model_err)?;
            if *report != multi_state_report(inst, &rs, &rt, optimum.as_ref()) {
                return Err(violation(
                    "report does not match a replay of the stabilization dynamics",
                ));
            }
        }
        other => return Err(malformed(format!("unknown mode \"{other}\""))),
    }
    Ok(())
}

/// When the report cites the optimum cost, recompute it exactly.
fn verify_optimum_field(
    inst: &Instance,
    o: &Obj,
    multi: bool,
) -> Result<Option<Rat>, VerifyError> {
    if !o.contains_key("optimum_cost") {
        return Ok(None);
    }
    let reported = rat_field(o, "optimum_cost")?;
    let recomputed = if multi {
        oracle::brute_force_optimum_multi(inst)
            .map_err(VerifyError::Model)?
            .1
    } else {
        oracle::brute_force_optimum(inst).map_err(VerifyError::Model)?.1
    };
    if reported != recomputed {
        return Err(violation("reported optimum cost differs from the oracle"));
    }
    Ok(Some(recomputed))
}

fn verify_direct(inst: &Instance, report: &Value, o: &Obj) -> Result<(), VerifyError> {
    let target = parse_assignment(field(o, "target")?, inst)?;
    let gamma = parse_gamma(field(o, "gamma")?, inst)?;
    let delta = rat_vec(field(o, "delta")?, inst.n())?;
    let payments = PaymentVector::coordinator(delta).map_err(|e| violation(e.to_string()))?;
    let state = State::new(target.clone(), gamma).map_err(|e| violation(e.to_string()))?;
    let cert = is_stable(inst, &state, Some(&payments));
    if let Some(i) = cert.first_unstable_agent() {
        return Err(violation(format!("agent {} unstable", i + 1)));
    }
    if !cert.budget_balanced {
        return Err(violation("facility budgets are not balanced"));
    }
    let (g2, p2) = payments::direct_payment_scheme(inst, &target).map_err(payment_err)?;
    if *report != direct_payments_report(inst, &target, &g2, &p2) {
        return Err(violation(
            "payments differ from the direct scheme for this target",
        ));
    }
    Ok(())
}

fn check_peer_bounds(inst: &Instance, p: &[Vec<Rat>]) -> Result<(), VerifyError> {
    for i in 0..inst.n() {
        for j in i + 1..inst.n() {
            if p[i][j].abs() > *inst.dc(i, j) {
                return Err(violation(format!(
                    "peer payment between agents {} and {} exceeds their disconnection cost",
                    i + 1,
                    j + 1
                )));
            }
        }
    }
    Ok(())
}

fn verify_peering(inst: &Instance, report: &Value, o: &Obj) -> Result<(), VerifyError> {
    let feasible = bool_field(o, "feasible")?;
    let delta = rat_vec(field(o, "delta")?, inst.n())?;
    match str_field(o, "mode")? {
        "single" => {
            let target = parse_assignment(field(o, "target")?, inst)?;
            let gamma = parse_gamma(field(o, "gamma")?, inst)?;
            let p = parse_peer_matrix(field(o, "p")?, inst)?;
            check_peer_bounds(inst, &p)?;
            for (i, d) in delta.iter().enumerate() {
                let received: Rat = (0..inst.n()).map(|j| p[j][i].clone()).sum();
                if received != *d {
                    return Err(violation(
                        "delta entries do not match the peer payment matrix",
                    ));
                }
            }
            if feasible {
                for k in 0..inst.m() {
                    let users = target.users_of(k);
                    if users.is_empty() {
                        continue;
                    }
                    let total: Rat = users.iter().map(|&i| gamma.get(i, k)).sum();
                    if total != *inst.fcost(k) {
                        return Err(violation(format!(
                            "facility {} prices do not balance its cost",
                            k + 1
                        )));
                    }
                }
                for i in 0..inst.n() {
                    if let Some(k) = target.get(i) {
                        let charge = gamma.get(i, k) - &delta[i];
                        if !q_value(inst, &target, i).admits(&charge) {
                            return Err(violation(format!("agent {} unstable", i + 1)));
                        }
                    }
                }
            } else {
                verify_refutations(inst, o, &social_cost(inst, &target), |v| {
                    let a = parse_assignment(v, inst)?;
                    Ok(social_cost(inst, &a))
                })?;
            }
            let recomputed = payments::peering_payments(inst, &target).map_err(model_err)?;
            if *report != peering_report(inst, &target, &recomputed) {
                return Err(violation("peer payments differ from a recomputation"));
            }
        }
        "multi" => {
            let target = parse_multi_assignment(field(o, "target")?, inst)?;
            let gamma = parse_multi_gamma(field(o, "gamma")?, inst)?;
            let matrices = parse_multi_peer_matrices(field(o, "p")?, inst)?;
            for p in matrices.values() {
                check_peer_bounds(inst, p)?;
            }
            for (i, d) in delta.iter().enumerate() {
                let received: Rat = matrices
                    .values()
                    .map(|p| -> Rat { (0..inst.n()).map(|j| p[j][i].clone()).sum() })
                    .sum();
                if received != *d {
                    return Err(violation(
                        "delta entries do not match the peer payment matrix",
                    ));
                }
            }
            if feasible {
                for k in 0..inst.m() {
                    let users = target.users_of(k);
                    if users.is_empty() {
                        continue;
                    }
                    let total: Rat = users.iter().map(|&i| gamma.get(i, k)).sum();
                    if total != *inst.fcost(k) {
                        return Err(violation(format!(
                            "facility {} prices do not balance its cost",
                            k + 1
                        )));
                    }
                    for &i in &users {
                        let received: Rat = match matrices.get(&k) {
                            Some(p) => (0..inst.n()).map(|j| p[j][i].clone()).sum(),
                            None => Rat::zero(),
                        };
                        let charge = gamma.get(i, k) - received;
                        let q = q_value_multi(inst, &target, i, k).map_err(model_err)?;
                        if charge > q {
                            return Err(violation(format!("agent {} unstable", i + 1)));
                        }
                    }
                }
            } else {
                verify_refutations(inst, o, &social_cost_multi(inst, &target), |v| {
                    let a = parse_multi_assignment(v, inst)?;
                    Ok(social_cost_multi(inst, &a))
                })?;
            }
            let recomputed =
                crate::multi::peering_payments_multi(inst, &target).map_err(model_err)?;
            if *report != multi_peering_report(inst, &target, &recomputed) {
                return Err(violation("peer payments differ from a recomputation"));
            }
        }
        other => return Err(malformed(format!("unknown mode \"{other}\""))),
    }
    Ok(())
}

/// Check each refutation of an infeasible peering report: its recorded
/// cost must be exact and strictly below the target's.
fn verify_refutations(
    inst: &Instance,
    o: &Obj,
    target_cost: &Rat,
    cost_of: impl Fn(&Value) -> Result<Rat, VerifyError>,
) -> Result<(), VerifyError> {
    let refutations = array_field(o, "refutations")?;
    if refutations.is_empty() {
        return Err(violation(
            "an infeasible report must carry at least one refutation",
        ));
    }
    for r in refutations {
        let ro = obj(r)?;
        based_index(field(ro, "facility")?, inst.m(), "facility")?;
        let cost = rat_field(ro, "cost")?;
        if cost_of(field(ro, "assignment")?)? != cost {
            return Err(violation("refutation cost mismatch"));
        }
        if cost >= *target_cost {
            return Err(violation("refutation is not cheaper than the target"));
        }
    }
    Ok(())
}

fn verify_double(inst: &Instance, report: &Value, o: &Obj) -> Result<(), VerifyError> {
    let target = parse_assignment(field(o, "target")?, inst)?;
    let embedded = field(o, "instance")?;
    let doubled = Instance::parse_json(&embedded.to_string())
        .map_err(|e| malformed(format!("embedded instance: {e}")))?;
    if doubled.n() != inst.n() || doubled.m() != inst.m() {
        return Err(violation(
            "the doubled instance must match the base dimensions",
        ));
    }
    for i in 0..inst.n() {
        for k in 0..inst.m() {
            if doubled.cc(i, k) != inst.cc(i, k) {
                return Err(violation(
                    "the doubled instance must differ only in disconnection costs",
                ));
            }
        }
    }
    for k in 0..inst.m() {
        if doubled.fcost(k) != inst.fcost(k) {
            return Err(violation(
                "the doubled instance must differ only in disconnection costs",
            ));
        }
    }
    for i in 0..inst.n() {
        for j in i + 1..inst.n() {
            let base = inst.dc(i, j);
            let new = doubled.dc(i, j);
            if new < base || *new > Rat::from_int(2) * base.clone() {
                return Err(violation(format!(
                    "doubled disconnection cost for agents {} and {} is out of range",
                    i + 1,
                    j + 1
                )));
            }
        }
    }
    let gamma = parse_gamma(field(o, "gamma")?, &doubled)?;
    let state = State::new(target.clone(), gamma).map_err(|e| violation(e.to_string()))?;
    let cert = is_stable(&doubled, &state, None);
    if let Some(i) = cert.first_unstable_agent() {
        return Err(violation(format!("agent {} unstable", i + 1)));
    }
    if !cert.budget_balanced {
        return Err(violation("facility budgets are not balanced"));
    }
    let (d2, g2) = payments::doubled_weights(inst, &target).map_err(payment_err)?;
    if *report != doubling_report(inst, &target, &d2, &g2) {
        return Err(violation("doubled instance differs from a recomputation"));
    }
    Ok(())
}

fn verify_brute(inst: &Instance, report: &Value, o: &Obj) -> Result<(), VerifyError> {
    let cost = rat_field(o, "cost")?;
    match str_field(o, "mode")? {
        "single" => {
            let assignment = parse_assignment(field(o, "assignment")?, inst)?;
            if social_cost(inst, &assignment) != cost {
                return Err(violation("reported cost does not match its assignment"));
            }
            let (oa, oc) = oracle::brute_force_optimum(inst).map_err(VerifyError::Model)?;
            if *report != brute_report(inst, &oa, &oc) {
                return Err(violation("solution differs from the exhaustive optimum"));
            }
        }
        "multi" => {
            let assignment = parse_multi_assignment(field(o, "assignment")?, inst)?;
            if social_cost_multi(inst, &assignment) != cost {
                return Err(violation("reported cost does not match its assignment"));
            }
            let (oa, oc) =
                oracle::brute_force_optimum_multi(inst).map_err(VerifyError::Model)?;
            if *report != multi_brute_report(inst, &oa, &oc) {
                return Err(violation("solution differs from the exhaustive optimum"));
            }
        }
        other => return Err(malformed(format!("unknown mode \"{other}\""))),
    }
    Ok(())
}

fn verify_lp(
    inst: &Instance,
    report: &Value,
    o: &Obj,
    randomized: bool,
) -> Result<(), VerifyError> {
    let n = inst.n();
    let m = inst.m();
    let pairs = n * (n - 1) / 2;

    let lp_o = obj(field(o, "lp")?)?;
    let lp_objective = f64_value(field(lp_o, "objective")?)?;
    f64_matrix(field(lp_o, "x_ik")?, n, m)?;
    f64_vec(field(lp_o, "x_ij")?, pairs)?;
    f64_matrix(field(lp_o, "x_ijk")?, pairs, m)?;
    f64_vec(field(lp_o, "x_k")?, m)?;

    let r_o = obj(field(o, "rounded")?)?;
    let x_ik = bit_matrix(field(r_o, "x_ik")?, n, m)?;
    let x_ij = bit_vec(field(r_o, "x_ij")?, pairs)?;
    let x_ijk = bit_matrix(field(r_o, "x_ijk")?, pairs, m)?;
    let x_k = bit_vec(field(r_o, "x_k")?, m)?;
    let objective = rat_field(r_o, "objective")?;
    let assignment = parse_multi_assignment(field(r_o, "assignment")?, inst)?;

    // The four integer-program constraint families, on the 0/1 vectors as
    // reported.
    for (p, (i, j)) in approx::agent_pairs(n).enumerate() {
        let mut covered = x_ij[p];
        for k in 0..m {
            if x_ijk[p][k] && !(x_ik[i][k] && x_ik[j][k]) {
                return Err(violation(
                    "rounded solution violates the integer program constraints",
                ));
            }
            covered |= x_ijk[p][k];
        }
        if !covered {
            return Err(violation(
                "rounded solution violates the integer program constraints",
            ));
        }
    }
    for i in 0..n {
        for k in 0..m {
            if x_ik[i][k] && !x_k[k] {
                return Err(violation(
                    "rounded solution violates the integer program constraints",
                ));
            }
            if assignment.get(i).contains(k) != x_ik[i][k] {
                return Err(violation(
                    "rounded assignment does not match its membership variables",
                ));
            }
        }
    }

    // Exact objective recomputation from the 0/1 vectors.
    let mut recomputed = Rat::zero();
    for i in 0..n {
        for k in 0..m {
            if x_ik[i][k] {
                recomputed += inst.cc(i, k);
            }
        }
    }
    for (p, (i, j)) in approx::agent_pairs(n).enumerate() {
        if x_ij[p] {
            recomputed += Rat::from_int(2) * inst.dc(i, j).clone();
        }
    }
    for k in 0..m {
        if x_k[k] {
            recomputed += inst.fcost(k);
        }
    }
    if recomputed != objective {
        return Err(violation("rounded objective does not match its variables"));
    }

    if randomized {
        let runs = u64_field(o, "runs")? as usize;
        if runs != approx::randomized_run_count(n) {
            return Err(violation("run count mismatch"));
        }
    } else {
        let factor = (m + 1) as f64;
        let bound = factor * lp_objective;
        if objective.to_f64() > bound + 1e-6 * bound.abs().max(1.0) {
            return Err(violation(
                "rounded objective exceeds the stated approximation bound",
            ));
        }
    }

    // Full deterministic replay.
    let lp2 = approx::solve_relaxation(inst).map_err(approx_err)?;
    if randomized {
        let seed = u64_field(o, "seed")?;
        let rr = approx::round_randomized(&lp2, inst, seed);
        let projection = approx::project_single(inst, &rr.solution);
        if *report != lp_rand_report(inst, &lp2, &rr, &projection) {
            return Err(violation("solution differs from a seeded replay"));
        }
    } else {
        let rounded = approx::round_deterministic(&lp2, inst);
        let projection = approx::project_single(inst, &rounded);
        if *report != lp_det_report(inst, &lp2, &rounded, &projection) {
            return Err(violation("solution differs from a deterministic replay"));
        }
    }
    Ok(())
}

fn verify_labeling(inst: &Instance, report: &Value, o: &Obj) -> Result<(), VerifyError> {
    let li = approx::to_uniform_labeling(inst).map_err(approx_err)?;
    let labels_v = array_field(o, "optimum_labels")?;
    if labels_v.len() != li.nodes {
        return Err(malformed(format!(
            "expected {} labels, found {}",
            li.nodes,
            labels_v.len()
        )));
    }
    let labels = labels_v
        .iter()
        .map(|v| based_index(v, li.labels, "label"))
        .collect::<Result<Vec<_>, _>>()?;
    let cost = rat_field(o, "optimum_cost")?;
    if approx::labeling_cost(&li, &labels) != cost {
        return Err(violation(
            "reported labeling cost does not match its labels",
        ));
    }
    let assignment = parse_assignment(field(o, "assignment")?, inst)?;
    if approx::labeling_to_assignment(inst, &labels) != assignment {
        return Err(violation("assignment does not match the labeling"));
    }
    if social_cost(inst, &assignment) != cost {
        return Err(violation(
            "labeling cost does not equal the game cost of its assignment",
        ));
    }
    let (l2, c2) = approx::optimal_labeling(&li).map_err(VerifyError::Model)?;
    let a2 = approx::labeling_to_assignment(inst, &l2);
    if *report != labeling_report(inst, &li, &l2, &c2, &a2) {
        return Err(violation("labeling differs from the exhaustive optimum"));
    }
    Ok(())
}

fn verify_analysis(inst: &Instance, report: &Value, o: &Obj) -> Result<(), VerifyError> {
    let or = oracle::oracle_report(inst).map_err(VerifyError::Model)?;
    let to = payments::tradeoff_check(inst).map_err(payment_err)?;
    if parse_ratio_outcome(field(o, "pos")?)? != or.pos {
        return Err(violation("reported PoS differs from the oracle"));
    }
    if parse_ratio_outcome(field(o, "poa")?)? != or.poa {
        return Err(violation("reported PoA differs from the oracle"));
    }
    if rat_field(o, "delta")? != to.delta {
        return Err(violation(
            "reported payment total differs from the tradeoff analysis",
        ));
    }
    if bool_field(o, "tradeoff_ok")? != to.ok {
        return Err(violation("tradeoff flag differs from the recomputation"));
    }
    if *report != analysis_report(inst, &or, &to) {
        return Err(violation("analysis differs from a recomputation"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{m1, t1, t2};
    use crate::model::{potential, PotentialKind};
    use crate::multi::FacilitySet;
    use proptest::prelude::{prop_assert, proptest};

    fn at(xs: &[i64]) -> Assignment {
        Assignment::new(
            xs.iter()
                .map(|&x| if x < 0 { None } else { Some(x as usize) })
                .collect(),
        )
    }

    fn massign(sets: &[&[usize]]) -> MultiAssignment {
        MultiAssignment::new(
            sets.iter()
                .map(|s| FacilitySet::from_indices(s.iter().copied()))
                .collect(),
        )
    }

    /// Swap one field of a report for a tampered value.
    fn tamper(report: &Value, path: &[&str], value: Value) -> Value {
        let mut out = report.clone();
        let mut cur = &mut out;
        for key in &path[..path.len() - 1] {
            cur = cur.get_mut(*key).unwrap();
        }
        cur[path[path.len() - 1]] = value;
        out
    }

    #[test]
    fn state_report_round_trips() {
        let inst = t1();
        let (opt, oc) = oracle::brute_force_optimum(&inst).unwrap();
        let (state, trace) = dynamics::stabilize(&inst, Some(&opt)).unwrap();
        let rep = state_report(&inst, &state, &trace, Some(&oc));
        assert_eq!(rep["kind"], "state");
        assert_eq!(rep["cost"], "2");
        assert_eq!(rep["ratio_vs_optimum"], "4/3");
        verify_report(&inst, &rep).unwrap();
    }

    #[test]
    fn state_report_names_the_unstable_agent() {
        // A hand-built "stable" claim with agent 2 overcharged: the
        // verifier pins the violation on that agent.
        let inst = t1();
        let target = at(&[0, 0]);
        let mut gamma = PricingStrategy::none(2);
        gamma.set(1, 0, Rat::one());
        let state = State::new(target.clone(), gamma).unwrap();
        let phi = potential(&inst, &target, PotentialKind::Alpha(Rat::one())).unwrap();
        let trace = Trace {
            alpha: Rat::one(),
            start: target,
            start_potential: phi,
            steps: Vec::new(),
        };
        let rep = state_report(&inst, &state, &trace, None);
        assert_eq!(
            verify_report(&inst, &rep),
            Err(violation("agent 2 unstable"))
        );
    }

    #[test]
    fn verify_rejects_a_different_instance() {
        let inst = t1();
        let (opt, _) = oracle::brute_force_optimum(&inst).unwrap();
        let (state, trace) = dynamics::stabilize(&inst, Some(&opt)).unwrap();
        let rep = state_report(&inst, &state, &trace, None);
        assert_eq!(
            verify_report(&t2(), &rep),
            Err(violation(
                "instance hash mismatch: the report cites a different instance"
            ))
        );
    }

    #[test]
    fn trace_lines_parse_one_step_per_line() {
        let inst = t1();
        let (opt, _) = oracle::brute_force_optimum(&inst).unwrap();
        let (_, trace) = dynamics::stabilize(&inst, Some(&opt)).unwrap();
        let lines = trace_json_lines(&trace);
        let parsed: Vec<Value> = lines
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(parsed.len(), trace.steps.len());
        assert_eq!(parsed[0]["type"], "improve");
        assert_eq!(parsed[0]["agent"], 2);
    }

    #[test]
    fn direct_report_matches_the_scheme() {
        let inst = t1();
        let (opt, _) = oracle::brute_force_optimum(&inst).unwrap();
        let (gamma, payments) = payments::direct_payment_scheme(&inst, &opt).unwrap();
        let rep = direct_payments_report(&inst, &opt, &gamma, &payments);
        assert_eq!(rep["delta"], json!(["0", "1/2"]));
        verify_report(&inst, &rep).unwrap();

        // Tampered price: γ_2 = 1 exceeds what agent 2 tolerates.
        let bad = tamper(
            &rep,
            &["gamma"],
            json!({ "2": { "facility": 1, "price": "1" } }),
        );
        assert_eq!(
            verify_report(&inst, &bad),
            Err(violation("agent 2 unstable"))
        );

        // Overpaying keeps everyone happy but is not what the scheme pays.
        let bad = tamper(&rep, &["delta"], json!(["0", "2"]));
        assert_eq!(
            verify_report(&inst, &bad),
            Err(violation(
                "payments differ from the direct scheme for this target"
            ))
        );
    }

    #[test]
    fn peering_report_round_trips() {
        let inst = t1();
        let (opt, _) = oracle::brute_force_optimum(&inst).unwrap();
        let result = payments::peering_payments(&inst, &opt).unwrap();
        let rep = peering_report(&inst, &opt, &result);
        assert_eq!(rep["p"], json!([{ "i": 1, "j": 2, "amount": "1/2" }]));
        assert_eq!(rep["delta"], json!(["-1/2", "1/2"]));
        verify_report(&inst, &rep).unwrap();

        let bad = tamper(&rep, &["p"], json!([{ "i": 1, "j": 2, "amount": "2" }]));
        assert_eq!(
            verify_report(&inst, &bad),
            Err(violation(
                "peer payment between agents 1 and 2 exceeds their disconnection cost"
            ))
        );
    }

    #[test]
    fn peering_report_carries_refutations() {
        let inst = t1();
        let target = at(&[-1, 0]);
        let result = payments::peering_payments(&inst, &target).unwrap();
        assert!(!result.feasible);
        let rep = peering_report(&inst, &target, &result);
        verify_report(&inst, &rep).unwrap();

        let mut wrong = rep["refutations"][0].clone();
        wrong["cost"] = json!("3");
        let bad = tamper(&rep, &["refutations"], json!([wrong]));
        assert_eq!(
            verify_report(&inst, &bad),
            Err(violation("refutation cost mismatch"))
        );
    }

    #[test]
    fn doubling_report_round_trips() {
        let inst = t1();
        let (opt, _) = oracle::brute_force_optimum(&inst).unwrap();
        let (doubled, gamma) = payments::doubled_weights(&inst, &opt).unwrap();
        let rep = doubling_report(&inst, &opt, &doubled, &gamma);
        verify_report(&inst, &rep).unwrap();

        let mut inflated = rep["instance"].clone();
        inflated["dc"] = json!([[0, 3], [3, 0]]);
        let bad = tamper(&rep, &["instance"], inflated);
        assert_eq!(
            verify_report(&inst, &bad),
            Err(violation(
                "doubled disconnection cost for agents 1 and 2 is out of range"
            ))
        );
    }

    #[test]
    fn brute_reports_round_trip() {
        let inst = t1();
        let (opt, cost) = oracle::brute_force_optimum(&inst).unwrap();
        let rep = brute_report(&inst, &opt, &cost);
        verify_report(&inst, &rep).unwrap();

        let bad = tamper(&rep, &["cost"], json!("2"));
        assert_eq!(
            verify_report(&inst, &bad),
            Err(violation("reported cost does not match its assignment"))
        );
        // A consistent but suboptimal assignment: both agents stay out.
        let bad = tamper(
            &tamper(&rep, &["assignment"], json!([null, null])),
            &["cost"],
            json!("2"),
        );
        let bad = tamper(&bad, &["cost_approx"], json!(2.0));
        assert_eq!(
            verify_report(&inst, &bad),
            Err(violation("solution differs from the exhaustive optimum"))
        );

        let minst = m1();
        let (mopt, mcost) = oracle::brute_force_optimum_multi(&minst).unwrap();
        let mrep = multi_brute_report(&minst, &mopt, &mcost);
        assert_eq!(mrep["cost"], "1");
        verify_report(&minst, &mrep).unwrap();
    }

    #[test]
    fn lp_det_report_round_trips() {
        let inst = t1();
        let lp = approx::solve_relaxation(&inst).unwrap();
        let rounded = approx::round_deterministic(&lp, &inst);
        let projection = approx::project_single(&inst, &rounded);
        let rep = lp_det_report(&inst, &lp, &rounded, &projection);
        verify_report(&inst, &rep).unwrap();

        let bad = tamper(&rep, &["rounded", "x_ik"], json!([[1], [0]]));
        assert_eq!(
            verify_report(&inst, &bad),
            Err(violation(
                "rounded solution violates the integer program constraints"
            ))
        );
    }

    #[test]
    fn lp_rand_report_is_reproducible() {
        let inst = t1();
        let lp = approx::solve_relaxation(&inst).unwrap();
        let rr = approx::round_randomized(&lp, &inst, 1);
        let projection = approx::project_single(&inst, &rr.solution);
        let rep = lp_rand_report(&inst, &lp, &rr, &projection);
        let again = lp_rand_report(&inst, &lp, &rr, &projection);
        assert_eq!(rep.to_string(), again.to_string());
        verify_report(&inst, &rep).unwrap();

        let bad = tamper(&rep, &["runs"], json!(rr.runs + 1));
        assert_eq!(
            verify_report(&inst, &bad),
            Err(violation("run count mismatch"))
        );
    }

    #[test]
    fn labeling_report_round_trips() {
        let inst = t1();
        let li = approx::to_uniform_labeling(&inst).unwrap();
        let (labels, cost) = approx::optimal_labeling(&li).unwrap();
        let assignment = approx::labeling_to_assignment(&inst, &labels);
        let rep = labeling_report(&inst, &li, &labels, &cost, &assignment);
        assert_eq!(rep["optimum_cost"], "3/2");
        verify_report(&inst, &rep).unwrap();

        let bad = tamper(&rep, &["optimum_labels"], json!([1, 2]));
        assert_eq!(
            verify_report(&inst, &bad),
            Err(violation("reported labeling cost does not match its labels"))
        );
    }

    #[test]
    fn analysis_report_freezes_the_oracle_values() {
        let inst = t1();
        let or = oracle::oracle_report(&inst).unwrap();
        let to = payments::tradeoff_check(&inst).unwrap();
        let rep = analysis_report(&inst, &or, &to);
        assert_eq!(rep["pos"], "4/3");
        assert_eq!(rep["poa"], "4/3");
        assert_eq!(rep["delta"], "1/2");
        assert_eq!(rep["tradeoff_ok"], json!(true));
        verify_report(&inst, &rep).unwrap();

        let bad = tamper(&rep, &["pos"], json!("2"));
        assert_eq!(
            verify_report(&inst, &bad),
            Err(violation("reported PoS differs from the oracle"))
        );
    }

    #[test]
    fn analysis_report_marks_unbounded_anarchy() {
        let inst = t2();
        let or = oracle::oracle_report(&inst).unwrap();
        let to = payments::tradeoff_check(&inst).unwrap();
        let rep = analysis_report(&inst, &or, &to);
        assert_eq!(rep["pos"], "1");
        assert_eq!(rep["poa"], json!({ "unbounded": true }));
        assert_eq!(rep["poa_approx"], Value::Null);
        verify_report(&inst, &rep).unwrap();
    }

    #[test]
    fn multi_state_report_round_trips() {
        let inst = m1();
        let (mopt, mc) = oracle::brute_force_optimum_multi(&inst).unwrap();
        let (state, trace) = stabilize_multi(&inst, Some(&mopt), &Rat::one()).unwrap();
        let rep = multi_state_report(&inst, &state, &trace, Some(&mc));
        assert_eq!(rep["mode"], "multi");
        verify_report(&inst, &rep).unwrap();
    }

    #[test]
    fn multi_peering_report_round_trips() {
        let inst = m1();
        let (mopt, _) = oracle::brute_force_optimum_multi(&inst).unwrap();
        let result = crate::multi::peering_payments_multi(&inst, &mopt).unwrap();
        let rep = multi_peering_report(&inst, &mopt, &result);
        assert_eq!(rep["feasible"], json!(true));
        assert_eq!(rep["p"], json!([]));
        verify_report(&inst, &rep).unwrap();

        // The single-facility gap instance embedded as a multi game keeps
        // its peer transfer, now tagged with the facility it belongs to.
        let inst = t1();
        let target = massign(&[&[0], &[0]]);
        let result = crate::multi::peering_payments_multi(&inst, &target).unwrap();
        let rep = multi_peering_report(&inst, &target, &result);
        assert_eq!(
            rep["p"],
            json!([{ "facility": 1, "i": 1, "j": 2, "amount": "1/2" }])
        );
        assert_eq!(rep["delta"], json!(["-1/2", "1/2"]));
        verify_report(&inst, &rep).unwrap();

        let bad = tamper(
            &rep,
            &["p"],
            json!([{ "facility": 1, "i": 1, "j": 2, "amount": "3/2" }]),
        );
        assert_eq!(
            verify_report(&inst, &bad),
            Err(violation(
                "peer payment between agents 1 and 2 exceeds their disconnection cost"
            ))
        );
    }

    #[test]
    fn malformed_reports_are_rejected() {
        let inst = t1();
        let cases = [
            json!([]),
            json!({}),
            json!({ "kind": "state" }),
            json!({ "kind": "nonsense", "instance_hash": inst.content_hash() }),
            json!({ "kind": "analysis", "instance_hash": inst.content_hash() }),
        ];
        for case in &cases {
            assert!(matches!(
                verify_report(&inst, case),
                Err(VerifyError::Malformed(_))
            ));
        }
    }

    fn arb_instance() -> impl proptest::strategy::Strategy<Value = Instance> {
        (2usize..5, 1usize..4).prop_flat_map(|(n, m)| {
            let cc = proptest::collection::vec(0i64..6, n * m);
            let dc = proptest::collection::vec(0i64..6, n * (n - 1) / 2);
            let fc = proptest::collection::vec(0i64..6, m);
            (cc, dc, fc).prop_map(move |(cc, dc, fc)| {
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
                Instance::new(cc, dcm, fc).unwrap()
            })
        })
    }

    use proptest::prelude::Strategy;

    proptest! {
        // Round-trip invariant: whatever the emitters produce, the
        // verifier accepts.
        #[test]
        fn emitted_reports_always_verify(inst in arb_instance()) {
            let (opt, oc) = oracle::brute_force_optimum(&inst).unwrap();

            let (state, trace) = dynamics::stabilize(&inst, Some(&opt)).unwrap();
            prop_assert!(
                verify_report(&inst, &state_report(&inst, &state, &trace, Some(&oc))).is_ok()
            );

            let (gamma, payments) = payments::direct_payment_scheme(&inst, &opt).unwrap();
            prop_assert!(verify_report(
                &inst,
                &direct_payments_report(&inst, &opt, &gamma, &payments)
            )
            .is_ok());

            let peering = payments::peering_payments(&inst, &opt).unwrap();
            prop_assert!(verify_report(&inst, &peering_report(&inst, &opt, &peering)).is_ok());

            prop_assert!(verify_report(&inst, &brute_report(&inst, &opt, &oc)).is_ok());

            let lp = approx::solve_relaxation(&inst).unwrap();
            let rounded = approx::round_deterministic(&lp, &inst);
            let projection = approx::project_single(&inst, &rounded);
            prop_assert!(verify_report(
                &inst,
                &lp_det_report(&inst, &lp, &rounded, &projection)
            )
            .is_ok());
        }
    }
}
