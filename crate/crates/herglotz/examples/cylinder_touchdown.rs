//! The cylinder dropping onto a sprung platform: restitution at touchdown,
//! stance with rolling, release of the contact forces, and the full energy
//! audit of the hybrid run.
//!
//! Run with: cargo run --example cylinder_touchdown

use herglotz::scenarios::cylinder::{build_cylinder, t_lost_closed_form, CylinderParams};
use herglotz::{energy_ledger, simulate, IntegratorOptions};

fn main() {
    for alpha in [0.0, 0.5, 1.0] {
        let p = CylinderParams {
            alpha,
            ..CylinderParams::default()
        };
        let scn = build_cylinder(p).unwrap();
        let traj = simulate(&scn, (0.0, 3.0), &IntegratorOptions::default()).unwrap();

        println!("=== restitution {alpha} ===");
        for ev in &traj.events {
            print!(
                "  {:<18} t = {:.6}  dT = {:+.4e}",
                ev.label,
                ev.audit.t_event,
                ev.audit.t_plus - ev.audit.t_minus
            );
            if ev.label == "touchdown" {
                let tl = t_lost_closed_form(&p, ev.q[2], &ev.audit.v_minus, alpha);
                print!(
                    "  T_lost = {:.6} (closed form {:.6}), Carnot residual {:+.1e}",
                    ev.audit.t_lost, tl, ev.audit.carnot_residual
                );
            }
            println!();
        }

        let phases: Vec<String> = traj
            .segments
            .iter()
            .map(|s| match s.active_rows.as_slice() {
                [] => "aerial".into(),
                [1] => "sliding".into(),
                [0, 1] => "stance".into(),
                rows => format!("{rows:?}"),
            })
            .collect();
        println!("  phases: {}", phases.join(" -> "));

        let ledger = energy_ledger(&traj, &scn).unwrap();
        let worst = ledger
            .segments
            .iter()
            .map(|s| s.max_flow_law_dev)
            .fold(0.0_f64, f64::max);
        println!(
            "  energy flow law E(t) = e^(beta t) E(t0) per segment: max rel dev {worst:.2e}\n"
        );
    }
}
