//! The exponential energy law: the action coupling dV/dz sets the rate at
//! which the total energy grows or decays between events, and the ledger
//! audits every segment and jump against it.
//!
//! Run with: cargo run --example energy_report

use herglotz::scenarios::cylinder::{build_cylinder, CylinderParams};
use herglotz::{energy_ledger, simulate, IntegratorOptions};

fn main() {
    // High drop so the whole window is one aerial segment.
    for beta in [0.0, 0.25, 0.5] {
        let p = CylinderParams {
            beta,
            y0: 10.0,
            vy0: 0.0,
            ..CylinderParams::default()
        };
        let scn = build_cylinder(p).unwrap();
        let traj = simulate(&scn, (0.0, 1.0), &IntegratorOptions::default()).unwrap();
        let e0 = scn.sys.energy(&scn.initial).unwrap();
        let end = traj.final_state().unwrap();
        let e1 = scn.sys.energy(&end).unwrap();
        println!(
            "beta = {beta:<5} E(0) = {e0:.6}  E(1) = {e1:.6}  E(1)/E(0) = {:.9}  e^beta = {:.9}",
            e1 / e0,
            beta.exp()
        );
    }

    // A full hybrid run: the ledger shows the law segment by segment and the
    // Carnot prediction at each jump.
    println!("\nfull hybrid run, restitution 0.5:");
    let scn = build_cylinder(CylinderParams::default()).unwrap();
    let traj = simulate(&scn, (0.0, 2.0), &IntegratorOptions::default()).unwrap();
    println!("{}", energy_ledger(&traj, &scn).unwrap());
}
