//! Building a scenario from scratch: a knife-edge skate on the plane with
//! action-coupled dissipation. The no-side-slip row depends on the heading
//! angle, so the constraint matrix is position-dependent and the multiplier
//! is eliminated along the flow.
//!
//! Run with: cargo run --example custom_scenario

use nalgebra::{DMatrix, DVector};

use herglotz::{
    simulate, ConstraintSet, IntegratorOptions, MechanicalSystem, MetricField, Scenario, State,
};

fn main() {
    let mass = 2.0;
    let inertia = 0.5;
    let beta = 0.3;

    // Coordinates (x, y, theta). V = beta z gives vdot = -beta v and the
    // energy law E(t) = e^{-beta t} E(0).
    let metric = DMatrix::from_diagonal(&DVector::from_row_slice(&[mass, mass, inertia]));
    let sys = MechanicalSystem::new(
        MetricField::constant(metric),
        move |_q, z| beta * z,
        |_q, _z| DVector::zeros(3),
        move |_q, _z| beta,
    );

    // No side-slip: xdot sin(theta) - ydot cos(theta) = 0.
    let cs = ConstraintSet::new(
        1,
        3,
        |q: &DVector<f64>| {
            let (s, c) = q[2].sin_cos();
            DMatrix::from_row_slice(1, 3, &[s, -c, 0.0])
        },
        |_q| vec![true],
    );

    // Start heading along +x with a twist.
    let theta0 = 0.0_f64;
    let speed0 = 1.5;
    let scn = Scenario {
        name: "skate".into(),
        sys,
        cs,
        unilaterals: Vec::new(),
        guards: Vec::new(),
        release_guards: Vec::new(),
        initial: State::new(
            0.0,
            DVector::from_row_slice(&[0.0, 0.0, theta0]),
            DVector::from_row_slice(&[speed0 * theta0.cos(), speed0 * theta0.sin(), 2.0]),
            0.0,
        ),
    };

    let traj = simulate(&scn, (0.0, 5.0), &IntegratorOptions::default()).unwrap();
    let e0 = scn.sys.energy(&scn.initial).unwrap();

    println!(
        "{:>5} {:>10} {:>10} {:>9} {:>12} {:>12} {:>12}",
        "t", "x", "y", "theta", "side slip", "E", "e^-bt E0"
    );
    for &t in &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0] {
        let (_seg, s) = traj.state_at(t).unwrap();
        let (sin, cos) = s.q[2].sin_cos();
        let slip = s.v[0] * sin - s.v[1] * cos;
        let e = scn.sys.energy(&s).unwrap();
        println!(
            "{t:>5.1} {:>10.5} {:>10.5} {:>9.4} {slip:>12.2e} {e:>12.7} {:>12.7}",
            s.q[0],
            s.q[1],
            s.q[2],
            (-beta * t).exp() * e0
        );
    }
    println!("\nthe multiplier (lateral contact force) along the run:");
    let seg = &traj.segments[0];
    for sample in seg.samples.iter().step_by(6) {
        println!("  t = {:>7.4}  lambda = {:+.6}", sample.t, sample.lambda[0]);
    }
}
