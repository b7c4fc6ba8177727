//! A point mass bouncing on a floor: one-sided constraint, restitution
//! impacts, Carnot energy accounting, and the Zeno guard.
//!
//! Run with: cargo run --example bouncing_ball

use nalgebra::{DMatrix, DVector};

use herglotz::{
    simulate, ConstraintSet, Error, IntegratorOptions, MechanicalSystem, MetricField, Scenario,
    State, UnilateralConstraint,
};

fn ball(restitution: f64) -> Scenario {
    // Unit mass, unit gravity: V = q[0].
    let sys = MechanicalSystem::new(
        MetricField::constant(DMatrix::identity(1, 1)),
        |q: &DVector<f64>, _z| q[0],
        |_q, _z| DVector::from_row_slice(&[1.0]),
        |_q, _z| 0.0,
    );
    Scenario {
        name: "ball".into(),
        sys,
        cs: ConstraintSet::empty(1),
        unilaterals: vec![UnilateralConstraint::new(
            "floor",
            |q: &DVector<f64>| q[0],
            |_q| DVector::from_row_slice(&[1.0]),
            restitution,
        )
        .unwrap()],
        guards: Vec::new(),
        release_guards: Vec::new(),
        initial: State::new(0.0, DVector::from_row_slice(&[1.0]), DVector::zeros(1), 0.0),
    }
}

fn main() {
    for alpha in [1.0, 0.8, 0.5] {
        let scn = ball(alpha);
        let opts = IntegratorOptions {
            max_events_per_window: 40,
            ..Default::default()
        };
        println!("restitution {alpha}:");
        match simulate(&scn, (0.0, 12.0), &opts) {
            Ok(traj) => {
                for ev in traj.events.iter().take(6) {
                    println!(
                        "  impact t = {:.6}  v: {:+.4} -> {:+.4}  T lost = {:.5}  Carnot residual = {:+.1e}",
                        ev.audit.t_event,
                        ev.audit.v_minus[0],
                        ev.audit.v_plus[0],
                        ev.audit.t_lost,
                        ev.audit.carnot_residual
                    );
                }
                println!("  {} impacts in total\n", traj.events.len());
            }
            Err(failure) => {
                // Inelastic bounces accumulate; the guard reports it and
                // hands back the partial trajectory.
                if let Error::ZenoDetected { t, count, window } = failure.error {
                    println!(
                        "  Zeno guard: {count} events within {window} time units at t = {t:.4} \
                         ({} impacts recorded)\n",
                        failure.partial.events.len()
                    );
                } else {
                    println!("  failed: {}\n", failure.error);
                }
            }
        }
    }
}
