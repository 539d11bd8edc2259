//! Stochastic energy management of a battery behind the meter: the
//! microgrid model, a nonparametric netload sampler, scenario trees, the
//! extensive-form MILP and the six control policies.

pub mod controllers;
pub mod microgrid;
pub mod milp;
pub mod simulate;
pub mod tree;
pub mod uncertainty;
