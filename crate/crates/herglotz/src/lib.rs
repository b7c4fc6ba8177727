//! Event-driven simulation of dissipative mechanical systems subject to
//! nonholonomic, one-sided and rank-varying velocity constraints.
//!
//! The smooth dynamics are those of a mechanical system `L = T - V(q, z)`
//! whose potential couples to an action variable `z` with `zdot = L`; the
//! `z`-coupling makes the energy evolve as
//! `E(t) = exp(-int dV/dz dt) E(0)` between events. Velocity constraints
//! `psi(q) v = 0` may switch on and off across the chart; when rows activate
//! along a trajectory the momentum is projected metric-orthogonally onto the
//! new admissible set, and one-sided gap constraints `gap(q) >= 0` reflect
//! the normal velocity with a restitution coefficient. Kinetic-energy loss at
//! every jump satisfies the Carnot-type identity
//! `T+ - T- = -((1 - a)/(1 + a)) T(v+ - v-)`.
//!
//! Entry points:
//! - [`simulator::simulate`] runs a [`simulator::Scenario`] over a time span
//!   and returns a [`simulator::HybridTrajectory`];
//! - [`simulator::energy_ledger`] audits it against the energy laws;
//! - [`scenarios`] has two ready-made models with closed-form oracles;
//! - the `hsim` binary drives runs and oracle verification from JSON configs.
//!
//! Every `examples/*.rs` file is a runnable walkthrough of one capability:
//! `cargo run --example rolling_sphere`, `--example cylinder_touchdown`, ...

pub mod cli;
pub mod constraints;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod impacts;
pub mod lagrangian;
pub mod ode;
pub mod scenarios;
pub mod simulator;

pub use constraints::{
    transition_case, ConstraintSet, PointClass, RankTransition, UnilateralConstraint,
};
pub use dynamics::{constrained_rhs, constrained_rhs_rows, free_rhs, Derivative};
pub use error::{Error, Result};
pub use geometry::MetricField;
pub use impacts::{
    activation_jump, carnot_check, restitution_jump, unilateral_projectors, ImpulseAudit,
    ImpulseKind,
};
pub use lagrangian::{MechanicalSystem, State};
pub use simulator::{
    energy_ledger, integrate_segment, simulate, EnergyLedger, EventRecord, Guard,
    HybridTrajectory, IntegratorOptions, ReleaseGuard, Scenario, Segment, StopReason,
};
