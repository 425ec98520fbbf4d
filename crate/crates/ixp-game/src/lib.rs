//! Solver toolkit for facility-based group formation games.
//!
//! Agents choose facilities to join (or stay out). An agent pays a
//! connection cost to each facility it uses, a disconnection cost for every
//! other agent it shares no facility with, and a price toward the opening
//! cost of each facility it uses. The library computes costs and potentials,
//! runs stabilizing best-response dynamics, constructs budget-balanced price
//! and payment schemes (direct subsidies, paid peering via circulations,
//! doubled disconnection weights), solves and rounds the fractional
//! relaxation, reduces zero-facility-cost games to uniform labeling, and
//! provides exact brute-force oracles for all of it at desk scale.
//!
//! All game quantities are exact rationals ([`Rat`]); floating point is
//! confined to the LP layer.

pub mod approx;
pub mod dynamics;
pub mod flow;
pub mod gen;
pub mod lp;
pub mod model;
pub mod multi;
pub mod oracle;
pub mod payments;
pub mod rat;
pub mod report;

pub use model::{Assignment, Instance, ModelError, State, Strategy};
pub use rat::Rat;

#[cfg(test)]
pub(crate) mod fixtures {
    use crate::model::Instance;
    use crate::rat::Rat;

    /// Two agents, one facility. cc(2,f1) = 3/2 makes joint membership
    /// unstable without payments.
    pub fn t1() -> Instance {
        Instance::new(
            vec![vec![Rat::zero()], vec![Rat::ratio(3, 2)]],
            vec![
                vec![Rat::zero(), Rat::one()],
                vec![Rat::one(), Rat::zero()],
            ],
            vec![Rat::zero()],
        )
        .unwrap()
    }

    /// Two agents, one facility, all connection costs zero.
    pub fn t2() -> Instance {
        Instance::new(
            vec![vec![Rat::zero()], vec![Rat::zero()]],
            vec![
                vec![Rat::zero(), Rat::one()],
                vec![Rat::one(), Rat::zero()],
            ],
            vec![Rat::zero()],
        )
        .unwrap()
    }

    /// Two agents, two facilities, multi-facility test instance.
    pub fn m1() -> Instance {
        Instance::new(
            vec![
                vec![Rat::zero(), Rat::one()],
                vec![Rat::from_int(2), Rat::zero()],
            ],
            vec![
                vec![Rat::zero(), Rat::from_int(3)],
                vec![Rat::from_int(3), Rat::zero()],
            ],
            vec![Rat::zero(), Rat::zero()],
        )
        .unwrap()
    }
}
