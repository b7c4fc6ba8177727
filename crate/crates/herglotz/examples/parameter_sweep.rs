//! Parallel parameter sweeps: scenarios and options are immutable, so
//! independent runs are safe to fan out across threads.
//!
//! Run with: cargo run --example parameter_sweep

use herglotz::scenarios::sphere::{build_sphere, SphereParams};
use herglotz::{simulate, IntegratorOptions};

fn main() {
    let betas: Vec<f64> = (1..=8).map(|i| 0.05 * i as f64).collect();

    let results: Vec<_> = std::thread::scope(|scope| {
        let handles: Vec<_> = betas
            .iter()
            .map(|&beta| {
                scope.spawn(move || {
                    let p = SphereParams {
                        beta,
                        ..SphereParams::default()
                    };
                    let scn = build_sphere(p).unwrap();
                    let out = simulate(&scn, (0.0, 6.0), &IntegratorOptions::default())
                        .ok()
                        .map(|traj| {
                            let end = traj.final_state().unwrap();
                            (end.q[0], end.v[0], traj.events.len())
                        });
                    (beta, out)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });

    println!("sphere, sweep over the drag coefficient (t = 6):");
    println!("{:>6} {:>12} {:>12} {:>8}", "beta", "x(6)", "vx(6)", "events");
    for (beta, out) in results {
        match out {
            Some((x, vx, events)) => {
                println!("{beta:>6.2} {x:>12.6} {vx:>12.6} {events:>8}");
            }
            None => println!("{beta:>6.2} {:>12} {:>12} {:>8}", "-", "-", "-"),
        }
    }
    println!("\n(with stronger drag the sphere arrives later and rolls away more slowly;");
    println!(" past beta = 1 it would never reach the rough side at all)");
}
