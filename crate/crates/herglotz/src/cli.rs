//! Config-driven runs and oracle verification behind the `hsim` binary.
//!
//! Config (JSON):
//! ```json
//! {
//!   "scenario": "sphere",
//!   "params": {"beta": 0.1},
//!   "t_span": [0.0, 3.0],
//!   "integrator": {"rel_tol": 1e-9, "abs_tol": 1e-12, "event_tol": 1e-10, "max_step": 0.25},
//!   "output": {"path": "traj.csv", "format": "csv", "sample_dt": 0.01}
//! }
//! ```
//!
//! Trajectory CSV columns: `t, q[0..n), v[0..n), z, E, T, V, active_mask,
//! segment_id`; events go to a sibling `<path>.events.json`.
//!
//! Exit codes: 0 ok, 2 config error, 3 Zeno, 4 step underflow, 5 oracle
//! failure, 6 other simulator errors.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::scenarios::{
    build_cylinder, build_sphere,
    cylinder::{
        self, stance_multipliers_closed_form, stance_state, t_lost_closed_form,
        touchdown_jump_closed_form, CylinderParams,
    },
    sphere::{
        activation_jump_closed_form, rolling_closed_form, smooth_closed_form, time_to_boundary,
        SphereParams,
    },
};
use crate::simulator::{
    energy_ledger, simulate, HybridTrajectory, IntegratorOptions, Scenario,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ZENO: i32 = 3;
pub const EXIT_UNDERFLOW: i32 = 4;
pub const EXIT_ORACLE: i32 = 5;
pub const EXIT_SIMULATOR: i32 = 6;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub t_span: [f64; 2],
    #[serde(default)]
    pub integrator: IntegratorConfig,
    pub output: Option<OutputConfig>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub event_tol: Option<f64>,
    pub max_step: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: String,
    #[serde(default = "default_format")]
    pub format: String,
    pub sample_dt: f64,
}

fn default_format() -> String {
    "csv".into()
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| format!("config parse error: {e}"))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), String> {
        let increasing = self.t_span[1] > self.t_span[0];
        if !increasing {
            return Err(format!(
                "config error: t_span must be increasing, got [{}, {}]",
                self.t_span[0], self.t_span[1]
            ));
        }
        if let Some(out) = &self.output {
            let positive = out.sample_dt > 0.0;
            if !positive {
                return Err(format!(
                    "config error: sample_dt must be positive, got {}",
                    out.sample_dt
                ));
            }
            if out.format != "csv" {
                return Err(format!("config error: unknown output format '{}'", out.format));
            }
        }
        Ok(())
    }

    pub fn options(&self) -> IntegratorOptions {
        let mut opts = IntegratorOptions::default();
        if let Some(v) = self.integrator.rel_tol {
            opts.rel_tol = v;
        }
        if let Some(v) = self.integrator.abs_tol {
            opts.abs_tol = v;
        }
        if let Some(v) = self.integrator.event_tol {
            opts.event_tol = v;
        }
        if let Some(v) = self.integrator.max_step {
            opts.max_step = v;
        }
        opts
    }
}

fn apply<T: Copy + From<f64>>(
    params: &BTreeMap<String, f64>,
    used: &mut Vec<String>,
    key: &str,
    slot: &mut T,
) {
    if let Some(&v) = params.get(key) {
        *slot = T::from(v);
        used.push(key.to_string());
    }
}

pub fn sphere_params(params: &BTreeMap<String, f64>) -> Result<SphereParams, String> {
    let mut p = SphereParams::default();
    let mut used = Vec::new();
    apply(params, &mut used, "r", &mut p.r);
    apply(params, &mut used, "k2", &mut p.k2);
    apply(params, &mut used, "beta", &mut p.beta);
    apply(params, &mut used, "x0", &mut p.x0);
    apply(params, &mut used, "y0", &mut p.y0);
    apply(params, &mut used, "vx0", &mut p.vx0);
    apply(params, &mut used, "vy0", &mut p.vy0);
    apply(params, &mut used, "omega_x0", &mut p.omega0[0]);
    apply(params, &mut used, "omega_y0", &mut p.omega0[1]);
    apply(params, &mut used, "omega_z0", &mut p.omega0[2]);
    apply(params, &mut used, "z0", &mut p.z0);
    reject_unknown(params, &used)?;
    Ok(p)
}

pub fn cylinder_params(params: &BTreeMap<String, f64>) -> Result<CylinderParams, String> {
    let mut p = CylinderParams::default();
    let mut used = Vec::new();
    apply(params, &mut used, "m", &mut p.m);
    apply(params, &mut used, "M", &mut p.m_plane);
    apply(params, &mut used, "I", &mut p.inertia);
    apply(params, &mut used, "r", &mut p.r);
    apply(params, &mut used, "gamma", &mut p.gamma);
    apply(params, &mut used, "k", &mut p.k_spring);
    apply(params, &mut used, "g", &mut p.g_grav);
    apply(params, &mut used, "beta", &mut p.beta);
    apply(params, &mut used, "alpha", &mut p.alpha);
    apply(params, &mut used, "x0", &mut p.x0);
    apply(params, &mut used, "y0", &mut p.y0);
    apply(params, &mut used, "phi0", &mut p.phi0);
    apply(params, &mut used, "h0", &mut p.h0);
    apply(params, &mut used, "vx0", &mut p.vx0);
    apply(params, &mut used, "vy0", &mut p.vy0);
    apply(params, &mut used, "vphi0", &mut p.vphi0);
    apply(params, &mut used, "vh0", &mut p.vh0);
    apply(params, &mut used, "z0", &mut p.z0);
    reject_unknown(params, &used)?;
    Ok(p)
}

fn reject_unknown(params: &BTreeMap<String, f64>, used: &[String]) -> Result<(), String> {
    for key in params.keys() {
        if !used.iter().any(|u| u == key) {
            return Err(format!("config error: unknown parameter '{key}'"));
        }
    }
    Ok(())
}

pub fn build_scenario(config: &RunConfig) -> Result<Scenario, String> {
    match config.scenario.as_str() {
        "sphere" => {
            let p = sphere_params(&config.params)?;
            build_sphere(p).map_err(|e| format!("config error: {e}"))
        }
        "cylinder" => {
            let p = cylinder_params(&config.params)?;
            build_cylinder(p).map_err(|e| format!("config error: {e}"))
        }
        other => Err(format!("config error: unknown scenario '{other}'")),
    }
}

fn exit_code_for(error: &Error) -> i32 {
    match error {
        Error::ZenoDetected { .. } => EXIT_ZENO,
        Error::StepSizeUnderflow { .. } => EXIT_UNDERFLOW,
        _ => EXIT_SIMULATOR,
    }
}

/// Execute a run config: simulate, write the trajectory CSV and events JSON,
/// print the energy ledger. Returns the process exit code.
pub fn run(config: &RunConfig, out: &mut dyn Write) -> i32 {
    if let Err(msg) = config.check() {
        let _ = writeln!(out, "{msg}");
        return EXIT_CONFIG;
    }
    let scn = match build_scenario(config) {
        Ok(s) => s,
        Err(msg) => {
            let _ = writeln!(out, "{msg}");
            return EXIT_CONFIG;
        }
    };
    let opts = config.options();
    let traj = match simulate(&scn, (config.t_span[0], config.t_span[1]), &opts) {
        Ok(t) => t,
        Err(failure) => {
            let _ = writeln!(out, "simulation failed: {}", failure.error);
            return exit_code_for(&failure.error);
        }
    };

    if let Some(outcfg) = &config.output {
        if let Err(e) = write_outputs(&scn, &traj, outcfg, config.t_span) {
            let _ = writeln!(out, "output error: {e}");
            return EXIT_SIMULATOR;
        }
        let _ = writeln!(
            out,
            "wrote {} and {}",
            outcfg.path,
            events_path(Path::new(&outcfg.path)).display()
        );
    }

    match energy_ledger(&traj, &scn) {
        Ok(ledger) => {
            let _ = writeln!(out, "{ledger}");
        }
        Err(e) => {
            let _ = writeln!(out, "ledger error: {e}");
            return EXIT_SIMULATOR;
        }
    }
    let _ = writeln!(
        out,
        "{}: {} segments, {} events",
        scn.name,
        traj.segments.len(),
        traj.events.len()
    );
    EXIT_OK
}

pub fn events_path(csv: &Path) -> PathBuf {
    let mut p = csv.to_path_buf();
    let stem = p
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trajectory".into());
    p.set_file_name(format!("{stem}.events.json"));
    p
}

#[derive(Serialize)]
struct EventOut {
    t: f64,
    kind: crate::impacts::ImpulseKind,
    label: String,
    v_minus: Vec<f64>,
    v_plus: Vec<f64>,
    #[serde(rename = "T_minus")]
    t_minus: f64,
    #[serde(rename = "T_plus")]
    t_plus: f64,
    #[serde(rename = "T_lost")]
    t_lost: f64,
    carnot_residual: f64,
    constraint_residual_post: f64,
}

fn write_outputs(
    scn: &Scenario,
    traj: &HybridTrajectory,
    out: &OutputConfig,
    t_span: [f64; 2],
) -> std::io::Result<()> {
    let mut csv = String::new();
    let n_q = traj.chart.n_q;
    let n_v = traj.chart.n_v;
    csv.push('t');
    for i in 0..n_q {
        csv.push_str(&format!(",q{i}"));
    }
    for i in 0..n_v {
        csv.push_str(&format!(",v{i}"));
    }
    csv.push_str(",z,E,T,V,active_mask,segment_id\n");

    let mut t = t_span[0];
    let t_final = traj
        .segments
        .last()
        .map(|s| s.t_end)
        .unwrap_or(t_span[1]);
    while t <= t_final + 1e-12 {
        if let Some((seg_id, state)) = traj.state_at(t.min(t_final)) {
            let seg = &traj.segments[seg_id];
            let kinetic = scn.sys.kinetic_energy(&state).unwrap_or(f64::NAN);
            let potential = scn.sys.potential(&state.q, state.z);
            let mask: u64 = seg.active_rows.iter().fold(0, |m, &r| m | (1 << r));
            csv.push_str(&format!("{}", state.t));
            for i in 0..n_q {
                csv.push_str(&format!(",{}", state.q[i]));
            }
            for i in 0..n_v {
                csv.push_str(&format!(",{}", state.v[i]));
            }
            csv.push_str(&format!(
                ",{},{},{},{},{},{}\n",
                state.z,
                kinetic + potential,
                kinetic,
                potential,
                mask,
                seg_id
            ));
        }
        t += out.sample_dt;
    }
    std::fs::write(&out.path, csv)?;

    let events: Vec<EventOut> = traj
        .events
        .iter()
        .map(|e| EventOut {
            t: e.audit.t_event,
            kind: e.audit.kind,
            label: e.label.clone(),
            v_minus: e.audit.v_minus.iter().copied().collect(),
            v_plus: e.audit.v_plus.iter().copied().collect(),
            t_minus: e.audit.t_minus,
            t_plus: e.audit.t_plus,
            t_lost: e.audit.t_lost,
            carnot_residual: e.audit.carnot_residual,
            constraint_residual_post: e.audit.constraint_residual_post,
        })
        .collect();
    let json = serde_json::to_string_pretty(&events).expect("serializable events");
    std::fs::write(events_path(Path::new(&out.path)), json)?;
    Ok(())
}

struct Check {
    name: String,
    status: CheckStatus,
    residual: f64,
    tolerance: f64,
}

enum CheckStatus {
    Pass,
    Fail,
    Skipped(String),
}

impl Check {
    fn run(name: &str, residual: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            status: if residual <= tolerance {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            residual,
            tolerance,
        }
    }

    fn skipped(name: &str, why: &str) -> Self {
        Check {
            name: name.into(),
            status: CheckStatus::Skipped(why.into()),
            residual: f64::NAN,
            tolerance: f64::NAN,
        }
    }
}

/// Run the scenario's oracle-comparison suite and print a pass/fail table.
/// Returns the process exit code (0 iff nothing failed).
pub fn verify(config: &RunConfig, out: &mut dyn Write) -> i32 {
    if let Err(msg) = config.check() {
        let _ = writeln!(out, "{msg}");
        return EXIT_CONFIG;
    }
    let checks = match config.scenario.as_str() {
        "sphere" => match sphere_params(&config.params) {
            Ok(p) => match verify_sphere(&p, config) {
                Ok(c) => c,
                Err(code) => return code,
            },
            Err(msg) => {
                let _ = writeln!(out, "{msg}");
                return EXIT_CONFIG;
            }
        },
        "cylinder" => match cylinder_params(&config.params) {
            Ok(p) => match verify_cylinder(&p, config) {
                Ok(c) => c,
                Err(code) => return code,
            },
            Err(msg) => {
                let _ = writeln!(out, "{msg}");
                return EXIT_CONFIG;
            }
        },
        other => {
            let _ = writeln!(out, "config error: unknown scenario '{other}'");
            return EXIT_CONFIG;
        }
    };

    let mut failed = false;
    let header = format!(
        "{:<44} {:>12} {:>10}  status",
        "check", "max residual", "tolerance"
    );
    let _ = writeln!(out, "{header}");
    for c in &checks {
        match &c.status {
            CheckStatus::Pass => {
                let _ = writeln!(
                    out,
                    "{:<44} {:>12.3e} {:>10.1e}  PASS",
                    c.name, c.residual, c.tolerance
                );
            }
            CheckStatus::Fail => {
                failed = true;
                let _ = writeln!(
                    out,
                    "{:<44} {:>12.3e} {:>10.1e}  FAIL",
                    c.name, c.residual, c.tolerance
                );
            }
            CheckStatus::Skipped(why) => {
                let _ = writeln!(out, "{:<44} {:>12} {:>10}  SKIPPED ({why})", c.name, "-", "-");
            }
        }
    }
    if failed {
        EXIT_ORACLE
    } else {
        EXIT_OK
    }
}

fn rel_dev(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn verify_sphere(p: &SphereParams, config: &RunConfig) -> Result<Vec<Check>, i32> {
    let scn = build_sphere(*p).map_err(|_| EXIT_CONFIG)?;
    let opts = config.options();
    let (t0, t1) = (config.t_span[0], config.t_span[1]);
    let traj = simulate(&scn, (t0, t1), &opts).map_err(|f| exit_code_for(&f.error))?;

    let mut checks = Vec::new();
    let s0 = scn.initial.clone();
    let t_bar = time_to_boundary(p, &s0);

    // Free phase against the closed form.
    let mut dev: f64 = 0.0;
    let free_end = t_bar.map(|tb| tb.min(t1)).unwrap_or(t1);
    for seg in &traj.segments {
        if seg.t_start >= free_end - 1e-9 {
            break;
        }
        for sample in &seg.samples {
            if sample.t > free_end {
                break;
            }
            let oracle = smooth_closed_form(p, &s0, sample.t - t0);
            for i in 0..2 {
                dev = dev.max(rel_dev(sample.state.q[i], oracle.q[i]));
            }
            for i in 0..5 {
                dev = dev.max(rel_dev(sample.state.v[i], oracle.v[i]));
            }
            dev = dev.max(rel_dev(sample.state.z, oracle.z));
        }
    }
    checks.push(Check::run("free phase vs closed form", dev, 1e-6));

    match t_bar {
        Some(tb) if tb < t1 - t0 => {
            let event = traj
                .events
                .iter()
                .find(|e| e.label == "rough-boundary");
            match event {
                Some(ev) => {
                    checks.push(Check::run(
                        "boundary crossing time",
                        (ev.audit.t_event - (t0 + tb)).abs(),
                        1e-8,
                    ));
                    let oracle_vplus = activation_jump_closed_form(p, &ev.audit.v_minus);
                    checks.push(Check::run(
                        "momentum projection at crossing",
                        (&ev.audit.v_plus - &oracle_vplus).amax(),
                        1e-10,
                    ));

                    // Rolling phase (state and contact forces).
                    let plus_state = crate::lagrangian::State::new(
                        ev.audit.t_event,
                        ev.q.clone(),
                        ev.audit.v_plus.clone(),
                        ev.z,
                    );
                    let mut sdev: f64 = 0.0;
                    let mut ldev: f64 = 0.0;
                    let mut roll: f64 = 0.0;
                    for seg in &traj.segments {
                        if seg.active_rows != vec![0, 1] {
                            continue;
                        }
                        for sample in &seg.samples {
                            let (oracle, lambda) =
                                rolling_closed_form(p, &plus_state, ev.audit.t_event, sample.t);
                            for i in 0..2 {
                                sdev = sdev.max(rel_dev(sample.state.q[i], oracle.q[i]));
                            }
                            for i in 0..5 {
                                sdev = sdev.max(rel_dev(sample.state.v[i], oracle.v[i]));
                            }
                            sdev = sdev.max(rel_dev(sample.state.z, oracle.z));
                            if sample.lambda.len() == 2 {
                                ldev = ldev.max(rel_dev(sample.lambda[0], lambda[0]));
                                ldev = ldev.max(rel_dev(sample.lambda[1], lambda[1]));
                            }
                            let v = &sample.state.v;
                            roll = roll
                                .max((v[0] - p.r * v[3]).abs())
                                .max((v[1] + p.r * v[2]).abs());
                        }
                    }
                    checks.push(Check::run("rolling phase vs closed form", sdev, 1e-6));
                    checks.push(Check::run("contact forces vs closed form", ldev, 1e-6));
                    checks.push(Check::run("rolling residual after crossing", roll, 1e-9));
                }
                None => {
                    checks.push(Check::run("boundary crossing detected", 1.0, 0.0));
                }
            }
        }
        _ => {
            checks.push(Check::skipped(
                "boundary crossing / rolling phase",
                "t_span ends before the boundary",
            ));
        }
    }
    Ok(checks)
}

fn verify_cylinder(p: &CylinderParams, config: &RunConfig) -> Result<Vec<Check>, i32> {
    let scn = build_cylinder(*p).map_err(|_| EXIT_CONFIG)?;
    let opts = config.options();
    let (t0, t1) = (config.t_span[0], config.t_span[1]);
    let traj = simulate(&scn, (t0, t1), &opts).map_err(|f| exit_code_for(&f.error))?;

    let mut checks = Vec::new();
    let s0 = scn.initial.clone();

    // Aerial phase against the closed form, up to the first event.
    let aerial_end = traj
        .events
        .first()
        .map(|e| e.audit.t_event)
        .unwrap_or(t1);
    let mut dev: f64 = 0.0;
    for seg in &traj.segments {
        if !seg.active_rows.is_empty() || seg.t_start > aerial_end {
            continue;
        }
        for sample in &seg.samples {
            let (q, v) = cylinder::aerial_closed_form(p, &s0.q, &s0.v, sample.t - t0);
            for i in 0..4 {
                dev = dev.max(rel_dev(sample.state.q[i], q[i]));
                dev = dev.max(rel_dev(sample.state.v[i], v[i]));
            }
        }
        break;
    }
    checks.push(Check::run("aerial phase vs closed form", dev, 1e-6));

    // Energy flow law on the aerial phase.
    let ledger = energy_ledger(&traj, &scn).map_err(|_| EXIT_SIMULATOR)?;
    if let Some(first) = ledger.segments.first() {
        checks.push(Check::run(
            "aerial energy flow law",
            first.max_flow_law_dev,
            1e-6,
        ));
    }

    // Touchdown audit.
    match traj.events.iter().find(|e| e.label == "touchdown") {
        Some(ev) => {
            checks.push(Check::run(
                "Carnot identity at touchdown",
                ev.audit.carnot_residual.abs(),
                1e-10,
            ));
            let phi = ev.q[2];
            let closed = touchdown_jump_closed_form(p, phi, &ev.audit.v_minus, p.alpha);
            checks.push(Check::run(
                "touchdown jump vs closed form",
                (&ev.audit.v_plus - &closed).amax(),
                1e-10,
            ));
            checks.push(Check::run(
                "kinetic energy lost vs closed form",
                rel_dev(
                    ev.audit.t_lost,
                    t_lost_closed_form(p, phi, &ev.audit.v_minus, p.alpha),
                ),
                1e-8,
            ));
        }
        None => {
            checks.push(Check::skipped("touchdown audit", "no impact in t_span"));
        }
    }

    // Stance contact forces against the hand-derived solve (state sampling,
    // independent of the trajectory).
    let mut mdev: f64 = 0.0;
    for i in 0..50 {
        let phi = -1.4 + 2.8 * (i as f64) / 49.0;
        let h = -0.4 + 0.6 * ((i * 7 % 50) as f64) / 49.0;
        let phidot = -2.0 + 4.0 * ((i * 13 % 50) as f64) / 49.0;
        let state = stance_state(p, phi, h, phidot, 0.3);
        match crate::dynamics::constrained_rhs_rows(&scn.sys, &scn.cs, &[0, 1], &state, 0.0) {
            Ok(d) => {
                let (mu1, mu2) = stance_multipliers_closed_form(p, phi, h, phidot);
                mdev = mdev.max(rel_dev(d.lambda[0], mu1)).max(rel_dev(d.lambda[1], mu2));
            }
            Err(_) => mdev = f64::INFINITY,
        }
    }
    checks.push(Check::run("stance forces vs closed form", mdev, 1e-6));

    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parse_names_the_offending_key() {
        let bad = r#"{"scenario": "sphere", "t_span": [0, 1], "params": {"bogus": 1.0}}"#;
        let cfg = RunConfig::from_json(bad).unwrap();
        let err = sphere_params(&cfg.params).unwrap_err();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn malformed_json_is_a_config_error() {
        assert!(RunConfig::from_json("{not json").is_err());
        let decreasing = r#"{"scenario": "sphere", "t_span": [2, 1]}"#;
        assert!(RunConfig::from_json(decreasing).is_err());
    }

    #[test]
    fn unknown_scenario_is_rejected() {
        let cfg = RunConfig::from_json(r#"{"scenario": "torus", "t_span": [0, 1]}"#).unwrap();
        let mut out = Vec::new();
        assert_eq!(run(&cfg, &mut out), EXIT_CONFIG);
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("torus"));
    }
}
