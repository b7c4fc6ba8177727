//! The sphere crossing from a smooth to a rough half-plane: a rank-varying
//! constraint distribution forces an instantaneous momentum projection at
//! the boundary, after which the sphere rolls without slipping.
//!
//! Run with: cargo run --example rolling_sphere

use herglotz::scenarios::sphere::{
    build_sphere, rolling_closed_form, smooth_closed_form, time_to_boundary, SphereParams,
};
use herglotz::{simulate, IntegratorOptions, State};

fn main() {
    let p = SphereParams::default();
    let scn = build_sphere(p).unwrap();
    println!(
        "sphere: r = {}, k2 = {}, beta = {}, start x = {}, vx = {}",
        p.r, p.k2, p.beta, p.x0, p.vx0
    );

    let t_bar = time_to_boundary(&p, &scn.initial).unwrap();
    println!("closed-form boundary arrival: t = {t_bar:.9}");

    let traj = simulate(&scn, (0.0, 4.0), &IntegratorOptions::default()).unwrap();
    let ev = &traj.events[0];
    println!("detected crossing:            t = {:.9}", ev.audit.t_event);
    println!("\nvelocity jump at the crossing (slip is projected out):");
    for (name, i) in [("vx", 0), ("vy", 1), ("w_x", 2), ("w_y", 3), ("w_z", 4)] {
        println!(
            "  {name:>3}: {:+.6} -> {:+.6}",
            ev.audit.v_minus[i], ev.audit.v_plus[i]
        );
    }
    println!(
        "kinetic energy: {:.6} -> {:.6} (lost {:.3e})",
        ev.audit.t_minus, ev.audit.t_plus, ev.audit.t_lost
    );

    // Compare sampled states against the closed forms of both phases.
    let plus = State::new(ev.audit.t_event, ev.q.clone(), ev.audit.v_plus.clone(), ev.z);
    println!("\n{:>6} {:>11} {:>11} {:>12} {:>12}", "t", "x", "vx", "w_y", "oracle dev");
    for &t in &[0.5, 1.0, 1.5, 2.5, 3.5] {
        let (_seg, s) = traj.state_at(t).unwrap();
        let oracle = if t < t_bar {
            smooth_closed_form(&p, &scn.initial, t)
        } else {
            rolling_closed_form(&p, &plus, ev.audit.t_event, t).0
        };
        let dev = (&s.v - &oracle.v).amax().max((&s.q - &oracle.q).amax());
        println!(
            "{t:>6.2} {:>11.6} {:>11.6} {:>12.6} {dev:>12.2e}",
            s.q[0], s.v[0], s.v[3]
        );
    }

    // Rolling holds for the rest of the run.
    let end = traj.final_state().unwrap();
    println!(
        "\nrolling residual at t = {}: |vx - r w_y| = {:.2e}",
        end.t,
        (end.v[0] - p.r * end.v[3]).abs()
    );
}
