//! Metric geometry on a curved chart: Christoffel symbols by finite
//! differences, and geodesics of the polar-coordinate metric recovering
//! straight lines.
//!
//! Run with: cargo run --example polar_geodesic

use nalgebra::{DMatrix, DVector};

use herglotz::{
    simulate, ConstraintSet, IntegratorOptions, MechanicalSystem, MetricField, Scenario, State,
};

fn main() {
    let metric = MetricField::new(2, 2, |q: &DVector<f64>| {
        DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, q[0] * q[0]]))
    });

    let q = DVector::from_row_slice(&[2.0, 0.3]);
    let gamma = metric.christoffel_at(&q).unwrap();
    println!("Christoffel symbols of g = diag(1, r^2) at r = 2:");
    println!("  Gamma^r_(phi phi) = {:+.6}   (exact: -2)", gamma[0][(1, 1)]);
    println!("  Gamma^phi_(r phi) = {:+.6}   (exact: 0.5)", gamma[1][(0, 1)]);

    // Straight line x = 1, y = t in polar coordinates: r(0) = 1, phi(0) = 0,
    // rdot(0) = 0, phidot(0) = 1.
    let scn = Scenario {
        name: "polar".into(),
        sys: MechanicalSystem::free(metric),
        cs: ConstraintSet::empty(2),
        unilaterals: Vec::new(),
        guards: Vec::new(),
        release_guards: Vec::new(),
        initial: State::new(
            0.0,
            DVector::from_row_slice(&[1.0, 0.0]),
            DVector::from_row_slice(&[0.0, 1.0]),
            0.0,
        ),
    };
    let traj = simulate(&scn, (0.0, 2.0), &IntegratorOptions::default()).unwrap();

    println!("\ngeodesic vs the straight line x = 1, y = t:");
    println!("{:>6} {:>12} {:>12} {:>11}", "t", "r", "phi", "line dev");
    for &t in &[0.5, 1.0, 1.5, 2.0] {
        let (_seg, s) = traj.state_at(t).unwrap();
        let r_exact = (1.0 + t * t).sqrt();
        let phi_exact = t.atan();
        let dev = (s.q[0] - r_exact).abs().max((s.q[1] - phi_exact).abs());
        println!("{t:>6.2} {:>12.8} {:>12.8} {dev:>11.2e}", s.q[0], s.q[1]);
    }
}
