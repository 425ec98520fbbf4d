//! Approximating the optimal assignment in polynomial time: a fractional
//! relaxation of the multi-homing optimum, deterministic threshold
//! rounding with an (m+1) guarantee, correlated randomized rounding with
//! a logarithmic guarantee, and (for free facilities) a reduction to the
//! uniform labeling problem.

use crate::lp::{self, LinearProgram, LpError, LpOutcome, Sense};
use crate::model::{Instance, ModelError};
use crate::multi::{social_cost_multi, FacilitySet, MultiAssignment};
use crate::rat::Rat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ApproxError {
    /// The labeling reduction only models instances whose facilities are
    /// free to open.
    FacilityCost { facility: usize },
    Lp(LpError),
    Model(ModelError),
}

impl fmt::Display for ApproxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ApproxError::FacilityCost { facility } => write!(
                f,
                "facility {} has a nonzero opening cost; the labeling reduction needs all facilities free",
                facility + 1
            ),
            ApproxError::Lp(e) => write!(f, "{e}"),
            ApproxError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ApproxError {}

impl From<LpError> for ApproxError {
    fn from(e: LpError) -> Self {
        ApproxError::Lp(e)
    }
}

impl From<ModelError> for ApproxError {
    fn from(e: ModelError) -> Self {
        ApproxError::Model(e)
    }
}

/// Unordered agent pairs (i, j) with i < j, in row-major order. This is
/// the pair ordering used by every pair-indexed vector in this module.
pub fn agent_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

/// Position of the unordered pair (i, j) within [`agent_pairs`].
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

fn pair_count(n: usize) -> usize {
    n * (n - 1) / 2
}

// Column layout of the relaxation: memberships x_ik (agent-major), then
// pair disconnections x_ij, then shared-facility indicators x_ijk
// (pair-major), then facility openings x_k.
fn col_ik(_n: usize, m: usize, i: usize, k: usize) -> usize {
    i * m + k
}

fn col_ij(n: usize, m: usize, p: usize) -> usize {
    n * m + p
}

fn col_ijk(n: usize, m: usize, p: usize, k: usize) -> usize {
    n * m + pair_count(n) + p * m + k
}

fn col_k(n: usize, m: usize, k: usize) -> usize {
    n * m + pair_count(n) + pair_count(n) * m + k
}

/// Fractional relaxation of the multi-homing optimum. Variables are
/// memberships x_ik, pair disconnections x_ij, shared-facility indicators
/// x_ijk, and facility openings x_k, all in [0, 1]; the objective charges
/// connection costs, both sides of each disconnected pair, and opening
/// costs. A pair counts as connected only through facilities both agents
/// use (x_ijk ≤ x_ik, x_ijk ≤ x_jk, 1 − x_ij ≤ Σ_k x_ijk), and a
/// facility must be open for anyone to use it (x_k ≥ x_ik).
pub fn build_relaxation(inst: &Instance) -> LinearProgram {
    let (n, m) = (inst.n(), inst.m());
    let cols = n * m + pair_count(n) * (m + 1) + m;
    let mut minimize = vec![0.0; cols];
    for i in 0..n {
        for k in 0..m {
            minimize[col_ik(n, m, i, k)] = inst.cc(i, k).to_f64();
        }
    }
    for (p, (i, j)) in agent_pairs(n).enumerate() {
        minimize[col_ij(n, m, p)] = 2.0 * inst.dc(i, j).to_f64();
    }
    for k in 0..m {
        minimize[col_k(n, m, k)] = inst.fcost(k).to_f64();
    }
    let mut prog = LinearProgram::new(minimize, vec![(0.0, 1.0); cols]);
    for (p, (i, j)) in agent_pairs(n).enumerate() {
        for k in 0..m {
            let mut row = vec![0.0; cols];
            row[col_ijk(n, m, p, k)] = 1.0;
            row[col_ik(n, m, i, k)] = -1.0;
            prog.push(row, Sense::Le, 0.0);
            let mut row = vec![0.0; cols];
            row[col_ijk(n, m, p, k)] = 1.0;
            row[col_ik(n, m, j, k)] = -1.0;
            prog.push(row, Sense::Le, 0.0);
        }
        let mut row = vec![0.0; cols];
        row[col_ij(n, m, p)] = -1.0;
        for k in 0..m {
            row[col_ijk(n, m, p, k)] = -1.0;
        }
        prog.push(row, Sense::Le, -1.0);
    }
    for i in 0..n {
        for k in 0..m {
            let mut row = vec![0.0; cols];
            row[col_ik(n, m, i, k)] = 1.0;
            row[col_k(n, m, k)] = -1.0;
            prog.push(row, Sense::Le, 0.0);
        }
    }
    prog
}

/// A feasible point of the relaxation, unpacked into its variable
/// families. `x_ij` and `x_ijk` follow the [`agent_pairs`] order.
#[derive(Clone, Debug)]
pub struct LpSolution {
    pub n: usize,
    pub m: usize,
    pub x_ik: Vec<Vec<f64>>,
    pub x_ij: Vec<f64>,
    pub x_ijk: Vec<Vec<f64>>,
    pub x_k: Vec<f64>,
    pub objective: f64,
}

impl LpSolution {
    pub fn pair_value(&self, i: usize, j: usize) -> f64 {
        self.x_ij[pair_index(self.n, i, j)]
    }
}

/// Solve the relaxation and unpack the optimum.
pub fn solve_relaxation(inst: &Instance) -> Result<LpSolution, ApproxError> {
    let (n, m) = (inst.n(), inst.m());
    let prog = build_relaxation(inst);
    let (values, objective) = match lp::solve_lp(&prog)? {
        LpOutcome::Optimal { values, objective } => (values, objective),
        // Fully disconnected (every x_ij = 1, everything else 0) is
        // always feasible.
        LpOutcome::Infeasible => unreachable!("the relaxation always has a feasible point"),
    };
    Ok(LpSolution {
        n,
        m,
        x_ik: (0..n)
            .map(|i| (0..m).map(|k| values[col_ik(n, m, i, k)]).collect())
            .collect(),
        x_ij: (0..pair_count(n))
            .map(|p| values[col_ij(n, m, p)])
            .collect(),
        x_ijk: (0..pair_count(n))
            .map(|p| (0..m).map(|k| values[col_ijk(n, m, p, k)]).collect())
            .collect(),
        x_k: (0..m).map(|k| values[col_k(n, m, k)]).collect(),
        objective,
    })
}

/// The canonical integral point encoding a multi assignment: memberships
/// and openings are indicators, a pair's shared-facility variables are
/// the products of its memberships, and a pair is disconnected exactly
/// when the sets are disjoint. Its objective equals the multi social
/// cost in binary64.
pub fn integral_solution(inst: &Instance, ma: &MultiAssignment) -> LpSolution {
    let (n, m) = (inst.n(), inst.m());
    let x_ik: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..m)
                .map(|k| if ma.get(i).contains(k) { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let x_ijk: Vec<Vec<f64>> = agent_pairs(n)
        .map(|(i, j)| (0..m).map(|k| x_ik[i][k].min(x_ik[j][k])).collect())
        .collect();
    let x_ij: Vec<f64> = x_ijk
        .iter()
        .map(|row| (1.0 - row.iter().sum::<f64>()).max(0.0))
        .collect();
    let x_k: Vec<f64> = (0..m)
        .map(|k| if ma.is_open(k) { 1.0 } else { 0.0 })
        .collect();
    let objective = social_cost_multi(inst, ma).to_f64();
    LpSolution {
        n,
        m,
        x_ik,
        x_ij,
        x_ijk,
        x_k,
        objective,
    }
}

/// An integral solution to the assignment program, together with the
/// facility sets it induces. The objective is the exact value of the
/// integral variables under the instance costs; for threshold rounding
/// it coincides with the social cost of `assignment`, while the
/// multi-run randomized rounding may charge a pair it reconnected only
/// across runs, making the objective an upper bound.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundedSolution {
    pub x_ik: Vec<Vec<bool>>,
    pub x_ij: Vec<bool>,
    pub x_ijk: Vec<Vec<bool>>,
    pub x_k: Vec<bool>,
    pub objective: Rat,
    pub assignment: MultiAssignment,
}

fn finish_rounding(
    inst: &Instance,
    x_ik: Vec<Vec<bool>>,
    x_ij: Vec<bool>,
) -> RoundedSolution {
    let (n, m) = (inst.n(), inst.m());
    let x_ijk: Vec<Vec<bool>> = agent_pairs(n)
        .map(|(i, j)| (0..m).map(|k| x_ik[i][k] && x_ik[j][k]).collect())
        .collect();
    let x_k: Vec<bool> = (0..m).map(|k| (0..n).any(|i| x_ik[i][k])).collect();
    let mut objective = Rat::zero();
    for i in 0..n {
        for k in 0..m {
            if x_ik[i][k] {
                objective += inst.cc(i, k);
            }
        }
    }
    for (p, (i, j)) in agent_pairs(n).enumerate() {
        if x_ij[p] {
            objective += Rat::from_int(2) * inst.dc(i, j);
        }
    }
    for k in 0..m {
        if x_k[k] {
            objective += inst.fcost(k);
        }
    }
    let assignment = MultiAssignment::new(
        x_ik.iter()
            .map(|row| {
                FacilitySet::from_indices((0..m).filter(|&k| row[k]))
            })
            .collect(),
    );
    debug_assert!(social_cost_multi(inst, &assignment) <= objective);
    RoundedSolution {
        x_ik,
        x_ij,
        x_ijk,
        x_k,
        objective,
        assignment,
    }
}

/// Threshold rounding: keep every membership with weight at least
/// 1/(m+1) (boundary inclusive, guarded by the LP tolerance) and derive
/// the remaining variables. The result satisfies every constraint of the
/// integral program, each rounded variable is at most (m+1) times its
/// fractional value, and the objective is at most (m+1) times the
/// relaxation's.
pub fn round_deterministic(lp: &LpSolution, inst: &Instance) -> RoundedSolution {
    assert_eq!((lp.n, lp.m), (inst.n(), inst.m()), "solution/instance size mismatch");
    let threshold = 1.0 / (lp.m as f64 + 1.0) - lp::TOL;
    let x_ik: Vec<Vec<bool>> = lp
        .x_ik
        .iter()
        .map(|row| row.iter().map(|&v| v >= threshold).collect())
        .collect();
    let x_ij: Vec<bool> = agent_pairs(lp.n)
        .map(|(i, j)| !(0..lp.m).any(|k| x_ik[i][k] && x_ik[j][k]))
        .collect();
    let rounded = finish_rounding(inst, x_ik, x_ij);
    debug_assert_eq!(
        rounded.objective,
        social_cost_multi(inst, &rounded.assignment)
    );
    rounded
}

/// One correlated sampling run: a single uniform draw per facility keeps
/// every membership with weight at least the draw. Memberships at one
/// facility are maximally coupled — a smaller fractional weight is never
/// kept while a larger one is dropped — so a pair survives together with
/// probability min(x_ik, x_jk). Values within the LP tolerance of 0 or 1
/// are treated as exact.
pub fn sample_memberships(lp: &LpSolution, rng: &mut ChaCha8Rng) -> Vec<Vec<bool>> {
    let draws: Vec<f64> = (0..lp.m).map(|_| rng.gen::<f64>()).collect();
    lp.x_ik
        .iter()
        .map(|row| {
            row.iter()
                .zip(&draws)
                .map(|(&v, &u)| {
                    if v >= 1.0 - lp::TOL {
                        true
                    } else if v <= lp::TOL {
                        false
                    } else {
                        u <= v
                    }
                })
                .collect()
        })
        .collect()
}

/// A [`RoundedSolution`] produced by seeded sampling, with the inputs
/// needed to reproduce it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RandomizedRounding {
    pub solution: RoundedSolution,
    pub seed: u64,
    pub runs: usize,
}

/// Number of sampling runs for an instance with `n` agents.
pub fn randomized_run_count(n: usize) -> usize {
    (4.0 * (10.0 * n as f64).ln()).ceil() as usize
}

/// Correlated randomized rounding: ⌈4·ln(10n)⌉ independent sampling
/// runs; a membership is kept if any run keeps it, while a pair is
/// charged as disconnected only if every run leaves it disconnected.
/// Derived variables are recomputed from the final memberships, so the
/// result satisfies every constraint of the integral program. The same
/// seed always reproduces the same output.
pub fn round_randomized(lp: &LpSolution, inst: &Instance, seed: u64) -> RandomizedRounding {
    assert_eq!((lp.n, lp.m), (inst.n(), inst.m()), "solution/instance size mismatch");
    let runs = randomized_run_count(lp.n);
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = vec![vec![false; lp.m]; lp.n];
    let mut always_apart = vec![true; pair_count(lp.n)];
    for _ in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(master.gen::<u64>());
        let run = sample_memberships(lp, &mut rng);
        for (kept_row, run_row) in kept.iter_mut().zip(&run) {
            for (flag, &bit) in kept_row.iter_mut().zip(run_row) {
                *flag |= bit;
            }
        }
        for (p, (i, j)) in agent_pairs(lp.n).enumerate() {
            if (0..lp.m).any(|k| run[i][k] && run[j][k]) {
                always_apart[p] = false;
            }
        }
    }
    RandomizedRounding {
        solution: finish_rounding(inst, kept, always_apart),
        seed,
        runs,
    }
}

/// Lossy single-facility view of a rounded assignment: each agent keeps
/// only the cheapest facility it uses (lowest index on ties). Pairs
/// connected through different facilities may come apart, so the social
/// cost of the projection can exceed the rounded objective.
pub fn project_single(inst: &Instance, rounded: &RoundedSolution) -> crate::model::Assignment {
    crate::model::Assignment::new(
        (0..inst.n())
            .map(|i| {
                rounded.assignment.get(i).iter().min_by(|&a, &b| {
                    inst.cc(i, a).cmp(inst.cc(i, b)).then(a.cmp(&b))
                })
            })
            .collect(),
    )
}

/// A node-labeling problem: assigning label ℓ to node i costs
/// `label_cost[i][ℓ]`, and each edge (i, j, w) adds w when its endpoints
/// take different labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelingInstance {
    pub nodes: usize,
    /// One label per facility (same index), then one personal label per
    /// agent (facility count + agent index).
    pub labels: usize,
    pub label_cost: Vec<Vec<Rat>>,
    pub edges: Vec<(usize, usize, Rat)>,
    /// The prohibitive cost barring an agent from another agent's
    /// personal label; larger than any meaningful labeling cost.
    pub big: Rat,
}

/// Reduce a free-facility instance to uniform labeling: facilities
/// become labels costing their connection costs, staying out becomes a
/// personal label (free for its owner, prohibitive for everyone else),
/// and each positive disconnection cost becomes an edge separating at
/// weight 2·dc(i,j) — both sides of the broken pair. Optimal labelings
/// and optimal assignments then have equal cost.
pub fn to_uniform_labeling(inst: &Instance) -> Result<LabelingInstance, ApproxError> {
    let (n, m) = (inst.n(), inst.m());
    for k in 0..m {
        if !inst.fcost(k).is_zero() {
            return Err(ApproxError::FacilityCost { facility: k });
        }
    }
    let mut big = Rat::one();
    for i in 0..n {
        for k in 0..m {
            big += inst.cc(i, k);
        }
    }
    for (i, j) in agent_pairs(n) {
        big += Rat::from_int(2) * inst.dc(i, j);
    }
    let label_cost: Vec<Vec<Rat>> = (0..n)
        .map(|i| {
            (0..m)
                .map(|k| inst.cc(i, k).clone())
                .chain((0..n).map(|j| if i == j { Rat::zero() } else { big.clone() }))
                .collect()
        })
        .collect();
    let edges: Vec<(usize, usize, Rat)> = agent_pairs(n)
        .filter(|&(i, j)| inst.dc(i, j).is_positive())
        .map(|(i, j)| (i, j, Rat::from_int(2) * inst.dc(i, j)))
        .collect();
    Ok(LabelingInstance {
        nodes: n,
        labels: m + n,
        label_cost,
        edges,
        big,
    })
}

/// Total cost of one labeling.
pub fn labeling_cost(li: &LabelingInstance, labels: &[usize]) -> Rat {
    assert_eq!(labels.len(), li.nodes, "one label per node");
    let mut total = Rat::zero();
    for (i, &l) in labels.iter().enumerate() {
        total += &li.label_cost[i][l];
    }
    for (i, j, w) in &li.edges {
        if labels[*i] != labels[*j] {
            total += w;
        }
    }
    total
}

/// Exhaustive labeling optimum; ties resolve to the lexicographically
/// first labeling. Refuses searches beyond ~2 million candidates.
pub fn optimal_labeling(li: &LabelingInstance) -> Result<(Vec<usize>, Rat), ModelError> {
    let total = (li.labels as u128).checked_pow(li.nodes as u32);
    match total {
        Some(t) if t <= 2_000_000 => {}
        _ => {
            return Err(ModelError::TooLarge(format!(
                "exhaustive labeling needs {} candidates for {} nodes and {} labels",
                total.map_or_else(|| "too many".into(), |t| t.to_string()),
                li.nodes,
                li.labels
            )))
        }
    }
    let mut labels = vec![0usize; li.nodes];
    let mut best: Option<(Vec<usize>, Rat)> = None;
    loop {
        let cost = labeling_cost(li, &labels);
        match &best {
            Some((_, bc)) if cost >= *bc => {}
            _ => best = Some((labels.clone(), cost)),
        }
        let mut pos = li.nodes;
        loop {
            if pos == 0 {
                return Ok(best.expect("at least one labeling exists"));
            }
            pos -= 1;
            labels[pos] += 1;
            if labels[pos] < li.labels {
                break;
            }
            labels[pos] = 0;
        }
    }
}

/// Read a labeling back as a single-facility assignment: facility labels
/// map to that facility, personal labels to staying out.
pub fn labeling_to_assignment(
    inst: &Instance,
    labels: &[usize],
) -> crate::model::Assignment {
    crate::model::Assignment::new(
        labels
            .iter()
            .map(|&l| if l < inst.m() { Some(l) } else { None })
            .collect(),
    )
}
