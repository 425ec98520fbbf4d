//! Instance generators: two small named fixture families with known
//! equilibrium behaviour, and a seeded uniform random generator used by the
//! CLI and the test sweeps.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{Instance, ModelError};
use crate::rat::Rat;

/// Two agents, one free facility. Agent 1 connects for free, agent 2 for
/// 1 + eps; staying apart costs each pair 1 per side. The cheapest outcome
/// (both on the facility) is only reachable with subsidies, so the best
/// stable cost exceeds the optimum by the factor 2/(1+eps). Requires
/// 0 < eps <= 1.
pub fn pos_gap(eps: &Rat) -> Result<Instance, ModelError> {
    if !eps.is_positive() || *eps > 1 {
        return Err(ModelError::Invalid(format!(
            "eps must satisfy 0 < eps <= 1, got {eps}"
        )));
    }
    let cc = vec![vec![Rat::zero()], vec![Rat::one() + eps]];
    let dc = vec![
        vec![Rat::zero(), Rat::one()],
        vec![Rat::one(), Rat::zero()],
    ];
    Instance::new(cc, dc, vec![Rat::zero()])
}

/// Two agents, one free facility, all connection costs zero. Joining is
/// optimal and stable, but both staying out is also stable at positive
/// cost, so the worst stable outcome is unboundedly bad relative to the
/// optimum of zero.
pub fn anarchy_gap() -> Instance {
    let cc = vec![vec![Rat::zero()], vec![Rat::zero()]];
    let dc = vec![
        vec![Rat::zero(), Rat::one()],
        vec![Rat::one(), Rat::zero()],
    ];
    Instance::new(cc, dc, vec![Rat::zero()]).expect("fixed fixture is valid")
}

/// Parameters for the seeded random generator. Costs are drawn as uniform
/// integers from 0 up to the given bounds inclusive.
#[derive(Clone, Debug)]
pub struct GenConfig {
    pub n: usize,
    pub m: usize,
    pub cc_max: u32,
    pub dc_max: u32,
    pub fcost_max: u32,
}

impl GenConfig {
    pub fn new(n: usize, m: usize) -> Self {
        GenConfig {
            n,
            m,
            cc_max: 8,
            dc_max: 8,
            fcost_max: 8,
        }
    }
}

/// Deterministic for a given config and seed. Draw order is fixed —
/// connection costs row by row, then disconnection costs for pairs i < j in
/// lexicographic order, then facility costs — so generated instances are
/// reproducible across runs and platforms.
pub fn random_instance(cfg: &GenConfig, seed: u64) -> Result<Instance, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cc = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let row: Vec<Rat> = (0..cfg.m)
            .map(|_| Rat::from_int(rng.gen_range(0..=cfg.cc_max) as i64))
            .collect();
        cc.push(row);
    }
    let mut dc = vec![vec![Rat::zero(); cfg.n]; cfg.n];
    for i in 0..cfg.n {
        for j in i + 1..cfg.n {
            let v = Rat::from_int(rng.gen_range(0..=cfg.dc_max) as i64);
            dc[i][j] = v.clone();
            dc[j][i] = v;
        }
    }
    let fcost: Vec<Rat> = (0..cfg.m)
        .map(|_| Rat::from_int(rng.gen_range(0..=cfg.fcost_max) as i64))
        .collect();
    Instance::new(cc, dc, fcost)
}
