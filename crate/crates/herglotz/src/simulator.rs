//! Event-driven hybrid integration: adaptive smooth segments, event
//! localization on dense output (gap crossings, rank-transition guards,
//! multiplier sign changes), jump application and energy bookkeeping.

use nalgebra::DVector;

use crate::constraints::{transition_case, ConstraintSet, RankTransition, UnilateralConstraint};
use crate::dynamics::{constrained_rhs_rows, constraint_residual, Derivative};
use crate::error::{Error, Result};
use crate::impacts::{activation_jump, restitution_jump, ImpulseAudit, ImpulseKind};
use crate::lagrangian::{MechanicalSystem, State};
use crate::ode::{DenseStep, StepControl, Stepper};

pub type GuardFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;

/// A scalar guard whose zero-crossing marks a rank-transition surface.
pub struct Guard {
    pub f: Box<GuardFn>,
    pub label: String,
}

impl Guard {
    pub fn new<F>(label: impl Into<String>, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        Guard {
            f: Box::new(f),
            label: label.into(),
        }
    }
}

/// Watches the sign of the multiplier on one active constraint row; the
/// constraint is released when the multiplier crosses zero from above. With
/// `drop_all` the whole active set is released (contact scenarios where the
/// stance conditions stand or fall together).
pub struct ReleaseGuard {
    pub row: usize,
    pub label: String,
    pub drop_all: bool,
}

/// A complete model: system, constraints, one-sided gaps, transition guards
/// and the initial state.
pub struct Scenario {
    pub name: String,
    pub sys: MechanicalSystem,
    pub cs: ConstraintSet,
    pub unilaterals: Vec<UnilateralConstraint>,
    pub guards: Vec<Guard>,
    pub release_guards: Vec<ReleaseGuard>,
    pub initial: State,
}

#[derive(Clone, Copy, Debug)]
pub struct IntegratorOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    /// Width to which event times are localized by bisection.
    pub event_tol: f64,
    /// Normal-speed threshold below which a contact counts as grazing.
    pub graze_tol: f64,
    /// Zeno guard: more events than this inside one window is an error.
    pub max_events_per_window: usize,
    pub event_window: f64,
    /// Constraint-drift feedback gain (0 disables stabilization).
    pub baumgarte: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            max_step: 0.25,
            event_tol: 1e-10,
            graze_tol: 1e-8,
            max_events_per_window: 1000,
            event_window: 1.0,
            baumgarte: 0.0,
        }
    }
}

impl IntegratorOptions {
    fn validate(&self) -> Result<()> {
        let all_positive = self.rel_tol > 0.0
            && self.abs_tol > 0.0
            && self.max_step > 0.0
            && self.event_tol > 0.0
            && self.graze_tol > 0.0
            && self.max_events_per_window > 0
            && self.event_window > 0.0;
        if !all_positive {
            return Err(Error::InvalidParameter(
                "integrator options must be positive".into(),
            ));
        }
        Ok(())
    }

    fn control(&self) -> StepControl {
        StepControl {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            max_step: self.max_step,
            ..Default::default()
        }
    }
}

/// Dimensions of the packed phase vector `[q; v; z]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Chart {
    pub n_q: usize,
    pub n_v: usize,
}

impl Chart {
    pub fn pack(&self, s: &State) -> DVector<f64> {
        let mut y = DVector::zeros(self.n_q + self.n_v + 1);
        y.rows_mut(0, self.n_q).copy_from(&s.q);
        y.rows_mut(self.n_q, self.n_v).copy_from(&s.v);
        y[self.n_q + self.n_v] = s.z;
        y
    }

    pub fn unpack(&self, t: f64, y: &DVector<f64>) -> State {
        State {
            t,
            q: y.rows(0, self.n_q).into_owned(),
            v: y.rows(self.n_q, self.n_v).into_owned(),
            z: y[self.n_q + self.n_v],
        }
    }
}

/// A recorded point on a smooth segment (accepted step boundary).
#[derive(Clone, Debug)]
pub struct Sample {
    pub t: f64,
    pub state: State,
    /// Multipliers aligned with the segment's active rows.
    pub lambda: Vec<f64>,
    pub energy: f64,
    pub kinetic: f64,
    pub potential: f64,
}

/// One smooth phase between events.
pub struct Segment {
    pub id: usize,
    pub chart: Chart,
    pub active_rows: Vec<usize>,
    pub t_start: f64,
    pub t_end: f64,
    pub steps: Vec<DenseStep>,
    pub samples: Vec<Sample>,
}

impl Segment {
    /// Interpolated state at `t` within the segment.
    pub fn state_at(&self, t: f64) -> Option<State> {
        if t < self.t_start - 1e-12 || t > self.t_end + 1e-12 {
            return None;
        }
        if self.steps.is_empty() {
            return Some(self.samples.first()?.state.clone());
        }
        let step = self
            .steps
            .iter()
            .find(|s| s.contains(t))
            .or_else(|| self.steps.last())?;
        Some(self.chart.unpack(t, &step.eval(t)))
    }
}

/// Why a smooth segment ended.
#[derive(Clone, Debug, PartialEq)]
pub enum StopReason {
    ReachedEnd,
    Event(EventTrigger),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventTrigger {
    pub t: f64,
    pub kind: TriggerKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TriggerKind {
    /// Gap of unilateral `i` crossed zero downward.
    Gap(usize),
    /// Guard `i` changed sign.
    Guard(usize),
    /// Multiplier of release guard `i` crossed zero downward.
    Release(usize),
}

impl TriggerKind {
    /// Tie-break priority: impacts before rank transitions before releases.
    fn priority(&self) -> u8 {
        match self {
            TriggerKind::Gap(_) => 0,
            TriggerKind::Guard(_) => 1,
            TriggerKind::Release(_) => 2,
        }
    }
}

/// An event with its audit and hybrid bookkeeping.
#[derive(Clone, Debug)]
pub struct EventRecord {
    pub label: String,
    pub audit: ImpulseAudit,
    pub q: DVector<f64>,
    pub z: f64,
    /// Restitution coefficient for restitution events.
    pub restitution: Option<f64>,
    /// Gap value at the localized event time (restitution events).
    pub gap: Option<f64>,
    pub transition: Option<RankTransition>,
    pub rows_added: Vec<usize>,
    pub rows_removed: Vec<usize>,
    pub segment_before: usize,
}

pub struct HybridTrajectory {
    pub chart: Chart,
    pub segments: Vec<Segment>,
    pub events: Vec<EventRecord>,
}

impl HybridTrajectory {
    pub fn final_state(&self) -> Option<State> {
        self.segments.last().and_then(|s| s.samples.last()).map(|s| s.state.clone())
    }

    /// State at a global time; event times resolve to the earlier segment.
    pub fn state_at(&self, t: f64) -> Option<(usize, State)> {
        for seg in &self.segments {
            if t >= seg.t_start - 1e-12 && t <= seg.t_end + 1e-12 {
                return seg.state_at(t).map(|s| (seg.id, s));
            }
        }
        None
    }
}

/// A simulation failure carrying the partial trajectory up to the failure.
#[derive(Debug)]
pub struct SimFailure {
    pub error: Error,
    pub partial: HybridTrajectory,
}

impl std::fmt::Display for SimFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.error)
    }
}

impl std::fmt::Debug for HybridTrajectory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "HybridTrajectory({} segments, {} events)",
            self.segments.len(),
            self.events.len()
        )
    }
}

const INTERIOR_SCAN_NODES: usize = 8;

struct EventScanner<'a> {
    scn: &'a Scenario,
    chart: Chart,
    rows: &'a [usize],
    opts: IntegratorOptions,
    /// Gaps whose normal lies in the active row space: held at zero by the
    /// constrained flow, so apparent crossings are integration noise.
    held_gaps: Vec<bool>,
}

impl<'a> EventScanner<'a> {
    /// Value of one event function at `(t, y)`.
    fn value(&self, kind: TriggerKind, t: f64, y: &DVector<f64>) -> f64 {
        let state = self.chart.unpack(t, y);
        match kind {
            TriggerKind::Gap(i) => self.scn.unilaterals[i].gap_at(&state.q),
            TriggerKind::Guard(i) => (self.scn.guards[i].f)(&state.q),
            TriggerKind::Release(i) => {
                let guard = &self.scn.release_guards[i];
                match self.position_of(guard.row) {
                    Some(pos) => match constrained_rhs_rows(
                        &self.scn.sys,
                        &self.scn.cs,
                        self.rows,
                        &state,
                        self.opts.baumgarte,
                    ) {
                        Ok(d) => d.lambda[pos],
                        Err(_) => 0.0,
                    },
                    None => 1.0, // row not active: guard is idle
                }
            }
        }
    }

    fn position_of(&self, row: usize) -> Option<usize> {
        self.rows.iter().position(|&r| r == row)
    }

    fn kinds(&self) -> Vec<TriggerKind> {
        let mut kinds = Vec::new();
        for i in 0..self.scn.unilaterals.len() {
            if !self.held_gaps[i] {
                kinds.push(TriggerKind::Gap(i));
            }
        }
        for i in 0..self.scn.guards.len() {
            kinds.push(TriggerKind::Guard(i));
        }
        for (i, g) in self.scn.release_guards.iter().enumerate() {
            if self.position_of(g.row).is_some() {
                kinds.push(TriggerKind::Release(i));
            }
        }
        kinds
    }

    fn is_crossing(kind: TriggerKind, fa: f64, fb: f64) -> bool {
        match kind {
            // Downcrossings only.
            TriggerKind::Gap(_) | TriggerKind::Release(_) => fa > 0.0 && fb <= 0.0,
            // Either direction.
            TriggerKind::Guard(_) => (fa > 0.0 && fb <= 0.0) || (fa < 0.0 && fb >= 0.0),
        }
    }

    /// Scan one dense step on `[t0, min(t1, t_cap)]` for the earliest event.
    fn scan(&self, step: &DenseStep, t_cap: f64) -> Option<EventTrigger> {
        let t_hi = step.t1().min(t_cap);
        if t_hi <= step.t0 {
            return None;
        }
        let kinds = self.kinds();
        if kinds.is_empty() {
            return None;
        }
        let n = INTERIOR_SCAN_NODES + 1;
        let nodes: Vec<f64> = (0..=n)
            .map(|i| step.t0 + (t_hi - step.t0) * (i as f64) / (n as f64))
            .collect();
        let states: Vec<DVector<f64>> = nodes.iter().map(|&t| step.eval(t)).collect();

        let mut candidates: Vec<EventTrigger> = Vec::new();
        for &kind in &kinds {
            let vals: Vec<f64> = nodes
                .iter()
                .zip(&states)
                .map(|(&t, y)| self.value(kind, t, y))
                .collect();
            for w in 0..n {
                if Self::is_crossing(kind, vals[w], vals[w + 1]) {
                    let t_event =
                        self.bisect(kind, step, nodes[w], vals[w], nodes[w + 1], vals[w + 1]);
                    candidates.push(EventTrigger { t: t_event, kind });
                    break;
                }
            }
        }
        if candidates.is_empty() {
            return None;
        }
        // Earliest wins; ties inside event_tol resolve by declared priority.
        let t_first = candidates
            .iter()
            .map(|c| c.t)
            .fold(f64::INFINITY, f64::min);
        candidates
            .into_iter()
            .filter(|c| c.t <= t_first + self.opts.event_tol)
            .min_by(|a, b| {
                (a.kind.priority(), a.t)
                    .partial_cmp(&(b.kind.priority(), b.t))
                    .unwrap()
            })
    }

    /// Bisect the crossing to `event_tol`, returning the post-side time.
    fn bisect(&self, kind: TriggerKind, step: &DenseStep, mut a: f64, fa: f64, mut b: f64, _fb: f64) -> f64 {
        let sign_a = fa > 0.0;
        for _ in 0..200 {
            if (b - a) <= self.opts.event_tol {
                break;
            }
            let m = 0.5 * (a + b);
            let fm = self.value(kind, m, &step.eval(m));
            let crossed_left = match kind {
                TriggerKind::Gap(_) | TriggerKind::Release(_) => fm <= 0.0,
                TriggerKind::Guard(_) => (fm > 0.0) != sign_a || fm == 0.0,
            };
            if crossed_left {
                b = m;
            } else {
                a = m;
            }
        }
        b
    }
}

struct SegmentRun {
    segment: Segment,
    stop: StopReason,
    end_state: State,
}

#[allow(clippy::too_many_arguments)]
fn run_segment(
    scn: &Scenario,
    chart: Chart,
    state0: &State,
    rows: &[usize],
    t_end: f64,
    opts: &IntegratorOptions,
    id: usize,
) -> Result<SegmentRun> {
    let held_gaps: Vec<bool> = scn
        .unilaterals
        .iter()
        .map(|uc| gap_is_held(scn, rows, &state0.q, &uc.normal_at(&state0.q)))
        .collect();
    let scanner = EventScanner {
        scn,
        chart,
        rows,
        opts: *opts,
        held_gaps,
    };
    let mut rhs = |t: f64, y: &DVector<f64>| -> Result<DVector<f64>> {
        let state = chart.unpack(t, y);
        let d = constrained_rhs_rows(&scn.sys, &scn.cs, rows, &state, opts.baumgarte)?;
        Ok(pack_derivative(chart, &d))
    };

    let mut stepper = Stepper::new(state0.t, chart.pack(state0), opts.control());
    let mut segment = Segment {
        id,
        chart,
        active_rows: rows.to_vec(),
        t_start: state0.t,
        t_end: state0.t,
        steps: Vec::new(),
        samples: Vec::new(),
    };
    push_sample(scn, &mut segment, rows, state0, opts)?;

    loop {
        let step = stepper.advance(&mut rhs, t_end)?;

        if let Some(trigger) = scanner.scan(&step, t_end) {
            let y_event = step.eval(trigger.t);
            let end_state = chart.unpack(trigger.t, &y_event);
            segment.steps.push(step);
            segment.t_end = trigger.t;
            push_sample(scn, &mut segment, rows, &end_state, opts)?;
            return Ok(SegmentRun {
                segment,
                stop: StopReason::Event(trigger),
                end_state,
            });
        }

        let end_state = chart.unpack(stepper.t, &stepper.y);
        segment.steps.push(step);
        segment.t_end = stepper.t;
        push_sample(scn, &mut segment, rows, &end_state, opts)?;

        if stepper.t >= t_end - 1e-14 * t_end.abs().max(1.0) {
            return Ok(SegmentRun {
                segment,
                stop: StopReason::ReachedEnd,
                end_state,
            });
        }
    }
}

/// Whether a gap normal is a combination of the active constraint rows, in
/// which case the constrained flow freezes the gap.
fn gap_is_held(scn: &Scenario, rows: &[usize], q: &DVector<f64>, normal: &DVector<f64>) -> bool {
    if rows.is_empty() {
        return false;
    }
    let padded = crate::dynamics::pad_covector(normal, scn.cs.dim());
    let psi = scn.cs.rows_matrix(q, rows);
    let svd = psi.transpose().svd(true, true);
    match svd.solve(&padded, 1e-12) {
        Ok(coeff) => {
            let resid = (psi.transpose() * coeff - &padded).norm();
            resid <= 1e-9 * padded.norm().max(1.0)
        }
        Err(_) => false,
    }
}

fn pack_derivative(chart: Chart, d: &Derivative) -> DVector<f64> {
    let mut y = DVector::zeros(chart.n_q + chart.n_v + 1);
    y.rows_mut(0, chart.n_q).copy_from(&d.qdot);
    y.rows_mut(chart.n_q, chart.n_v).copy_from(&d.vdot);
    y[chart.n_q + chart.n_v] = d.zdot;
    y
}

fn push_sample(
    scn: &Scenario,
    segment: &mut Segment,
    rows: &[usize],
    state: &State,
    opts: &IntegratorOptions,
) -> Result<()> {
    let d = constrained_rhs_rows(&scn.sys, &scn.cs, rows, state, opts.baumgarte)?;
    let kinetic = scn.sys.kinetic_energy(state)?;
    let potential = scn.sys.potential(&state.q, state.z);
    segment.samples.push(Sample {
        t: state.t,
        state: state.clone(),
        lambda: d.lambda.iter().copied().collect(),
        energy: kinetic + potential,
        kinetic,
        potential,
    });
    Ok(())
}

/// Integrate a single smooth segment from `state0` using the rows active at
/// the starting configuration, stopping at `t_end` or the first event.
pub fn integrate_segment(
    scn: &Scenario,
    state0: &State,
    t_end: f64,
    opts: &IntegratorOptions,
) -> Result<(Segment, StopReason)> {
    opts.validate()?;
    let chart = Chart {
        n_q: state0.q.len(),
        n_v: state0.v.len(),
    };
    let rows = scn.cs.active_rows(&state0.q);
    let run = run_segment(scn, chart, state0, &rows, t_end, opts, 0)?;
    Ok((run.segment, run.stop))
}

/// Run the full hybrid simulation over `t_span`. The initial state's time is
/// overridden by `t_span.0`. On Zeno accumulation, step underflow or a
/// singular constraint mass, the partial trajectory is returned inside the
/// failure.
pub fn simulate(
    scn: &Scenario,
    t_span: (f64, f64),
    opts: &IntegratorOptions,
) -> std::result::Result<HybridTrajectory, SimFailure> {
    let chart = Chart {
        n_q: scn.initial.q.len(),
        n_v: scn.initial.v.len(),
    };
    let mut traj = HybridTrajectory {
        chart,
        segments: Vec::new(),
        events: Vec::new(),
    };
    match simulate_inner(scn, t_span, opts, chart, &mut traj) {
        Ok(()) => Ok(traj),
        Err(error) => Err(SimFailure {
            error,
            partial: traj,
        }),
    }
}

fn simulate_inner(
    scn: &Scenario,
    t_span: (f64, f64),
    opts: &IntegratorOptions,
    chart: Chart,
    traj: &mut HybridTrajectory,
) -> Result<()> {
    opts.validate()?;
    let (t0, t_end) = t_span;
    let increasing = t_end > t0;
    if !increasing {
        return Err(Error::InvalidParameter(format!(
            "t_span must be increasing, got ({t0}, {t_end})"
        )));
    }
    let mut state = scn.initial.clone();
    state.t = t0;
    if !state.is_finite() {
        return Err(Error::InconsistentInitialState(
            "initial state has non-finite entries".into(),
        ));
    }

    let mut active: Vec<usize> = scn.cs.active_rows(&state.q);
    let mut suppressed: Vec<usize> = Vec::new();

    // Initial consistency: active constraints satisfied, gaps non-penetrating.
    let resid = constraint_residual(&scn.cs, &active, &state.q, &state.v);
    let drift_tol = (100.0 * opts.rel_tol * (1.0 + state.v.norm())).max(1e-10);
    if resid > drift_tol {
        return Err(Error::InconsistentInitialState(format!(
            "active constraint residual {resid:.3e} exceeds {drift_tol:.3e}"
        )));
    }
    for uc in &scn.unilaterals {
        let gap = uc.gap_at(&state.q);
        if gap < -opts.event_tol {
            return Err(Error::InconsistentInitialState(format!(
                "gap '{}' starts at {gap:.3e} < 0",
                uc.label
            )));
        }
    }

    let mut event_times: Vec<f64> = Vec::new();
    let zeno = |t: f64, times: &mut Vec<f64>| -> Result<()> {
        times.push(t);
        let cutoff = t - opts.event_window;
        times.retain(|&s| s >= cutoff);
        if times.len() > opts.max_events_per_window {
            return Err(Error::ZenoDetected {
                t,
                count: times.len(),
                window: opts.event_window,
            });
        }
        Ok(())
    };

    loop {
        // Multipliers that are already non-positive release their rows before
        // the segment starts (chained releases after a jump).
        loop {
            if active.is_empty() || scn.release_guards.is_empty() {
                break;
            }
            let d = constrained_rhs_rows(&scn.sys, &scn.cs, &active, &state, opts.baumgarte)?;
            let mut fired = None;
            for (i, g) in scn.release_guards.iter().enumerate() {
                if let Some(pos) = active.iter().position(|&r| r == g.row) {
                    if d.lambda[pos] < 0.0 {
                        fired = Some(i);
                        break;
                    }
                }
            }
            let Some(i) = fired else { break };
            let guard = &scn.release_guards[i];
            let removed = if guard.drop_all {
                std::mem::take(&mut active)
            } else {
                active.retain(|&r| r != guard.row);
                vec![guard.row]
            };
            for r in &removed {
                if !suppressed.contains(r) {
                    suppressed.push(*r);
                }
            }
            suppressed.sort_unstable();
            traj.events.push(release_record(
                scn,
                &state,
                &removed,
                traj.segments.len().saturating_sub(1),
                &guard.label,
            )?);
            zeno(state.t, &mut event_times)?;
        }

        let id = traj.segments.len();
        let run = run_segment(scn, chart, &state, &active, t_end, opts, id)?;
        traj.segments.push(run.segment);
        state = run.end_state;

        let trigger = match run.stop {
            StopReason::ReachedEnd => return Ok(()),
            StopReason::Event(trigger) => trigger,
        };
        zeno(trigger.t, &mut event_times)?;

        match trigger.kind {
            TriggerKind::Gap(j) => {
                let uc = &scn.unilaterals[j];
                suppressed.clear();
                let gap_value = uc.gap_at(&state.q);
                let stance_holds;
                match restitution_jump(&scn.sys, uc, &state, opts.graze_tol) {
                    Ok((post, audit)) => {
                        let normal = crate::dynamics::pad_covector(
                            &uc.normal_at(&post.q),
                            chart.n_v,
                        );
                        let speed = normal.dot(&post.v);
                        stance_holds = speed.abs() <= opts.graze_tol * (1.0 + post.v.norm());
                        traj.events.push(EventRecord {
                            label: uc.label.clone(),
                            audit,
                            q: post.q.clone(),
                            z: post.z,
                            restitution: Some(uc.restitution),
                            gap: Some(gap_value),
                            transition: None,
                            rows_added: Vec::new(),
                            rows_removed: Vec::new(),
                            segment_before: id,
                        });
                        state = post;
                    }
                    Err(Error::GrazingContact { .. }) => {
                        // Zero normal impulse either way: fall through to the
                        // activation path.
                        stance_holds = true;
                    }
                    Err(e) => return Err(e),
                }

                // Simultaneous contacts: sweep the other gaps until none is
                // both at its boundary and approaching (bounded fixed point).
                'sweep: for _ in 0..10 {
                    for (jj, other) in scn.unilaterals.iter().enumerate() {
                        if jj == j {
                            continue;
                        }
                        let gap = other.gap_at(&state.q);
                        let normal =
                            crate::dynamics::pad_covector(&other.normal_at(&state.q), chart.n_v);
                        let approach = normal.dot(&state.v);
                        if gap <= 10.0 * opts.event_tol
                            && approach < -opts.graze_tol * (1.0 + state.v.norm())
                        {
                            let (post, audit) =
                                restitution_jump(&scn.sys, other, &state, opts.graze_tol)?;
                            traj.events.push(EventRecord {
                                label: other.label.clone(),
                                audit,
                                q: post.q.clone(),
                                z: post.z,
                                restitution: Some(other.restitution),
                                gap: Some(gap),
                                transition: None,
                                rows_added: Vec::new(),
                                rows_removed: Vec::new(),
                                segment_before: id,
                            });
                            state = post;
                            zeno(state.t, &mut event_times)?;
                            continue 'sweep;
                        }
                    }
                    break;
                }

                if stance_holds {
                    let candidates: Vec<usize> = scn
                        .cs
                        .active_rows(&state.q)
                        .into_iter()
                        .filter(|r| !active.contains(r) && !suppressed.contains(r))
                        .collect();
                    if !candidates.is_empty() {
                        let mut union = active.clone();
                        union.extend(candidates.iter().copied());
                        union.sort_unstable();
                        let psi_plus = scn.cs.rows_matrix(&state.q, &union);
                        let (post, audit) = activation_jump(&scn.sys, &psi_plus, &state)?;
                        traj.events.push(EventRecord {
                            label: format!("{}:stance", uc.label),
                            audit,
                            q: post.q.clone(),
                            z: post.z,
                            restitution: None,
                            gap: Some(uc.gap_at(&post.q)),
                            transition: None,
                            rows_added: candidates,
                            rows_removed: Vec::new(),
                            segment_before: id,
                        });
                        state = post;
                        active = union;
                        zeno(state.t, &mut event_times)?;
                    }
                }
            }

            TriggerKind::Guard(k) => {
                suppressed.clear();
                let qdot = state.v.rows(0, chart.n_q).into_owned();
                let dir = {
                    let n = qdot.norm();
                    if n == 0.0 {
                        qdot
                    } else {
                        qdot / n
                    }
                };
                let probe_dist = opts.event_tol;
                let q_post = &state.q + &dir * probe_dist;
                let q_pre = &state.q - &dir * probe_dist;

                let c_before = {
                    let rows = scn.cs.active_rows(&q_pre);
                    scn.cs.rank_at(&q_pre).min(rows.len())
                };
                let c_at = scn.cs.rank_at(&state.q);
                let c_after = scn.cs.rank_at(&q_post);
                let transition = transition_case(c_before, c_at, c_after).ok();

                let post_rows = scn.cs.active_rows(&q_post);
                let removed: Vec<usize> = active
                    .iter()
                    .copied()
                    .filter(|r| !post_rows.contains(r))
                    .collect();
                if !removed.is_empty() {
                    active.retain(|r| !removed.contains(r));
                    traj.events.push(release_record(
                        scn,
                        &state,
                        &removed,
                        id,
                        &scn.guards[k].label,
                    )?);
                }

                let added: Vec<usize> = post_rows
                    .into_iter()
                    .filter(|r| !active.contains(r))
                    .collect();
                if !added.is_empty() {
                    let mut union = active.clone();
                    union.extend(added.iter().copied());
                    union.sort_unstable();
                    // One-sided limit: rows evaluated just past the surface.
                    let psi_plus = scn.cs.rows_matrix(&q_post, &union);
                    let (post, audit) = activation_jump(&scn.sys, &psi_plus, &state)?;
                    traj.events.push(EventRecord {
                        label: scn.guards[k].label.clone(),
                        audit,
                        q: post.q.clone(),
                        z: post.z,
                        restitution: None,
                        gap: None,
                        transition,
                        rows_added: added,
                        rows_removed: Vec::new(),
                        segment_before: id,
                    });
                    state = post;
                    active = union;
                }
            }

            TriggerKind::Release(i) => {
                let guard = &scn.release_guards[i];
                let removed = if guard.drop_all {
                    std::mem::take(&mut active)
                } else {
                    active.retain(|&r| r != guard.row);
                    vec![guard.row]
                };
                for r in &removed {
                    if !suppressed.contains(r) {
                        suppressed.push(*r);
                    }
                }
                suppressed.sort_unstable();
                traj.events.push(release_record(
                    scn,
                    &state,
                    &removed,
                    id,
                    &guard.label,
                )?);
            }
        }

        if state.t >= t_end - 1e-14 * t_end.abs().max(1.0) {
            return Ok(());
        }
    }
}

fn release_record(
    scn: &Scenario,
    state: &State,
    removed: &[usize],
    segment_before: usize,
    label: &str,
) -> Result<EventRecord> {
    let t = scn.sys.kinetic_energy(state)?;
    Ok(EventRecord {
        label: label.to_string(),
        audit: ImpulseAudit {
            t_event: state.t,
            kind: ImpulseKind::Release,
            v_minus: state.v.clone(),
            v_plus: state.v.clone(),
            t_minus: t,
            t_plus: t,
            t_lost: 0.0,
            carnot_residual: 0.0,
            constraint_residual_post: 0.0,
        },
        q: state.q.clone(),
        z: state.z,
        restitution: None,
        gap: None,
        transition: None,
        rows_added: Vec::new(),
        rows_removed: removed.to_vec(),
        segment_before,
    })
}

/// Per-segment energy audit against the exponential flow law, and per-event
/// jump audit against the Carnot prediction.
pub struct EnergyLedger {
    pub segments: Vec<SegmentEnergy>,
    pub events: Vec<EventEnergy>,
}

pub struct SegmentEnergy {
    pub segment: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub e_start: f64,
    pub e_end: f64,
    /// Max relative deviation from `E(t0) exp(-int dV/dz)`.
    pub max_flow_law_dev: f64,
    /// Max relative deviation once applied-force work is accounted for.
    pub max_balance_dev: f64,
}

pub struct EventEnergy {
    pub t: f64,
    pub label: String,
    pub de_actual: f64,
    pub de_predicted: f64,
    pub residual: f64,
}

/// Build the energy ledger for a finished trajectory.
pub fn energy_ledger(traj: &HybridTrajectory, scn: &Scenario) -> Result<EnergyLedger> {
    const SUBDIV: usize = 16;
    let mut segments = Vec::new();
    for seg in &traj.segments {
        let mut ts: Vec<f64> = vec![seg.t_start];
        for step in &seg.steps {
            let hi = step.t1().min(seg.t_end);
            for i in 1..=SUBDIV {
                let t = step.t0 + (hi - step.t0) * (i as f64) / (SUBDIV as f64);
                if t > *ts.last().unwrap() + 1e-15 {
                    ts.push(t);
                }
            }
        }
        if *ts.last().unwrap() < seg.t_end {
            ts.push(seg.t_end);
        }

        let states: Vec<State> = ts
            .iter()
            .map(|&t| seg.state_at(t).expect("time inside segment"))
            .collect();
        let energies: Vec<f64> = states
            .iter()
            .map(|s| Ok(scn.sys.kinetic_energy(s)? + scn.sys.potential(&s.q, s.z)))
            .collect::<Result<_>>()?;
        let rates: Vec<f64> = states.iter().map(|s| scn.sys.dissipation_rate(s)).collect();
        let powers: Vec<f64> = states
            .iter()
            .map(|s| {
                scn.sys
                    .applied_force(&s.q, &s.v, s.z)
                    .map_or(0.0, |f| f.dot(&s.v))
            })
            .collect();

        let e0 = energies[0];
        let scale = e0.abs().max(1e-12);
        let mut integral = 0.0_f64; // int dV/dz dt
        let mut forced = 0.0_f64; // int exp(+I) * power dt
        let mut max_flow = 0.0_f64;
        let mut max_balance = 0.0_f64;
        for i in 1..ts.len() {
            let dt = ts[i] - ts[i - 1];
            let prev_exp = integral.exp();
            integral += 0.5 * (rates[i] + rates[i - 1]) * dt;
            let cur_exp = integral.exp();
            forced += 0.5 * (prev_exp * powers[i - 1] + cur_exp * powers[i]) * dt;

            let flow_pred = e0 * (-integral).exp();
            let balance_pred = (e0 + forced) * (-integral).exp();
            max_flow = max_flow.max((energies[i] - flow_pred).abs() / scale);
            max_balance = max_balance.max((energies[i] - balance_pred).abs() / scale);
        }

        segments.push(SegmentEnergy {
            segment: seg.id,
            t_start: seg.t_start,
            t_end: seg.t_end,
            e_start: e0,
            e_end: *energies.last().unwrap(),
            max_flow_law_dev: max_flow,
            max_balance_dev: max_balance,
        });
    }

    let mut events = Vec::new();
    for ev in &traj.events {
        let de_actual = ev.audit.t_plus - ev.audit.t_minus; // q, z continuous
        let de_predicted = match ev.audit.kind {
            ImpulseKind::Restitution => {
                let a = ev.restitution.unwrap_or(0.0);
                -(1.0 - a) / (1.0 + a) * ev.audit.t_lost
            }
            ImpulseKind::Activation => -ev.audit.t_lost,
            ImpulseKind::Release => 0.0,
        };
        events.push(EventEnergy {
            t: ev.audit.t_event,
            label: ev.label.clone(),
            de_actual,
            de_predicted,
            residual: de_actual - de_predicted,
        });
    }

    Ok(EnergyLedger { segments, events })
}

impl std::fmt::Display for EnergyLedger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{:>3}  {:>12} {:>12}  {:>14} {:>14}  {:>11} {:>11}",
            "seg", "t_start", "t_end", "E_start", "E_end", "flow_dev", "balance_dev"
        )?;
        for s in &self.segments {
            writeln!(
                f,
                "{:>3}  {:>12.6} {:>12.6}  {:>14.8e} {:>14.8e}  {:>11.3e} {:>11.3e}",
                s.segment, s.t_start, s.t_end, s.e_start, s.e_end, s.max_flow_law_dev, s.max_balance_dev
            )?;
        }
        if !self.events.is_empty() {
            writeln!(
                f,
                "{:>20}  {:>12}  {:>14} {:>14}  {:>11}",
                "event", "t", "dE_actual", "dE_predicted", "residual"
            )?;
            for e in &self.events {
                writeln!(
                    f,
                    "{:>20}  {:>12.6}  {:>14.6e} {:>14.6e}  {:>11.3e}",
                    e.label, e.t, e.de_actual, e.de_predicted, e.residual
                )?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MetricField;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn dvec(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    /// Point mass falling onto a floor at y = 0 under unit gravity.
    fn bouncing_ball(alpha: f64, y0: f64, vy0: f64) -> Scenario {
        let sys = MechanicalSystem::new(
            MetricField::constant(DMatrix::identity(1, 1)),
            |q, _z| q[0],
            |_q, _z| dvec(&[1.0]),
            |_q, _z| 0.0,
        );
        Scenario {
            name: "ball".into(),
            sys,
            cs: ConstraintSet::empty(1),
            unilaterals: vec![UnilateralConstraint::new(
                "floor",
                |q: &DVector<f64>| q[0],
                |_q| dvec(&[1.0]),
                alpha,
            )
            .unwrap()],
            guards: Vec::new(),
            release_guards: Vec::new(),
            initial: State::new(0.0, dvec(&[y0]), dvec(&[vy0]), 0.0),
        }
    }

    #[test]
    fn free_motion_is_one_segment_without_events() {
        let scn = Scenario {
            name: "free".into(),
            sys: MechanicalSystem::free(MetricField::constant(DMatrix::identity(2, 2))),
            cs: ConstraintSet::empty(2),
            unilaterals: Vec::new(),
            guards: Vec::new(),
            release_guards: Vec::new(),
            initial: State::new(0.0, dvec(&[0.0, 0.0]), dvec(&[1.0, -0.5]), 0.0),
        };
        let traj = simulate(&scn, (0.0, 2.0), &IntegratorOptions::default()).unwrap();
        assert_eq!(traj.segments.len(), 1);
        assert!(traj.events.is_empty());
        let end = traj.final_state().unwrap();
        assert_relative_eq!(end.q[0], 2.0, max_relative = 1e-9);
        assert_relative_eq!(end.q[1], -1.0, max_relative = 1e-9);
    }

    #[test]
    fn bouncing_ball_event_times_match_closed_forms() {
        // Drop from rest at y0 = 1: first impact at t = sqrt(2), elastic
        // bounce repeats every 2 sqrt(2).
        let scn = bouncing_ball(1.0, 1.0, 0.0);
        let traj = simulate(&scn, (0.0, 6.0), &IntegratorOptions::default()).unwrap();
        let times: Vec<f64> = traj.events.iter().map(|e| e.audit.t_event).collect();
        assert!(times.len() >= 2);
        let sqrt2 = 2.0_f64.sqrt();
        assert!((times[0] - sqrt2).abs() < 1e-8, "first impact at {}", times[0]);
        assert!((times[1] - 3.0 * sqrt2).abs() < 1e-7, "second impact at {}", times[1]);
        // Elastic: speed preserved across the jump.
        let e = &traj.events[0];
        assert_relative_eq!(e.audit.v_plus[0], -e.audit.v_minus[0], max_relative = 1e-10);
    }

    #[test]
    fn event_gap_is_localized() {
        let scn = bouncing_ball(0.7, 1.0, 0.0);
        let opts = IntegratorOptions::default();
        let traj = simulate(&scn, (0.0, 3.0), &opts).unwrap();
        for ev in &traj.events {
            let gap = ev.gap.expect("restitution event records the gap");
            assert!(gap.abs() <= 1e-9, "gap at event: {gap}");
        }
    }

    #[test]
    fn q_and_z_are_continuous_across_events() {
        let scn = bouncing_ball(0.8, 1.0, 0.0);
        let traj = simulate(&scn, (0.0, 5.0), &IntegratorOptions::default()).unwrap();
        assert!(!traj.events.is_empty());
        for w in traj.segments.windows(2) {
            let prev = w[0].samples.last().unwrap();
            let next = w[1].samples.first().unwrap();
            assert_eq!(prev.state.q, next.state.q);
            assert_eq!(prev.state.z, next.state.z);
        }
    }

    #[test]
    fn zeno_accumulation_is_detected() {
        let scn = bouncing_ball(0.5, 1.0, 0.0);
        let opts = IntegratorOptions {
            max_events_per_window: 8,
            ..Default::default()
        };
        // Bounce intervals shrink geometrically; accumulation near t = 3 sqrt(2).
        match simulate(&scn, (0.0, 20.0), &opts) {
            Err(failure) => {
                assert!(matches!(failure.error, Error::ZenoDetected { .. }));
                assert!(!failure.partial.segments.is_empty());
            }
            Ok(traj) => panic!("expected Zeno failure, got {} events", traj.events.len()),
        }
    }

    #[test]
    fn refinement_convergence() {
        let scn = bouncing_ball(0.9, 1.0, 0.3);
        let coarse = IntegratorOptions {
            rel_tol: 1e-8,
            abs_tol: 1e-11,
            ..Default::default()
        };
        let fine = IntegratorOptions {
            rel_tol: 5e-9,
            abs_tol: 5e-12,
            ..Default::default()
        };
        let a = simulate(&scn, (0.0, 3.0), &coarse).unwrap();
        let b = simulate(&scn, (0.0, 3.0), &fine).unwrap();
        let sa = a.final_state().unwrap();
        let sb = b.final_state().unwrap();
        let vscale = 1.0 + sb.v.amax();
        let dev = (sa.q - sb.q).amax().max((sa.v - sb.v).amax());
        assert!(dev < 10.0 * 1e-8 * vscale, "dev = {dev}");
    }

    #[test]
    fn deterministic_reruns() {
        let scn = bouncing_ball(0.6, 1.3, -0.2);
        let opts = IntegratorOptions::default();
        let a = simulate(&scn, (0.0, 4.0), &opts).unwrap();
        let b = simulate(&scn, (0.0, 4.0), &opts).unwrap();
        assert_eq!(a.segments.len(), b.segments.len());
        assert_eq!(a.events.len(), b.events.len());
        for (x, y) in a.segments.iter().zip(&b.segments) {
            assert_eq!(x.samples.len(), y.samples.len());
            for (p, q) in x.samples.iter().zip(&y.samples) {
                assert_eq!(p.t, q.t);
                assert_eq!(p.state.q, q.state.q);
                assert_eq!(p.state.v, q.state.v);
                assert_eq!(p.state.z, q.state.z);
            }
        }
    }

    #[test]
    fn conservative_energy_is_flat() {
        let scn = bouncing_ball(1.0, 1.0, 0.0);
        let traj = simulate(&scn, (0.0, 4.0), &IntegratorOptions::default()).unwrap();
        let ledger = energy_ledger(&traj, &scn).unwrap();
        for seg in &ledger.segments {
            assert!(seg.max_flow_law_dev < 1e-8, "segment {} dev {}", seg.segment, seg.max_flow_law_dev);
        }
        for ev in &ledger.events {
            assert!(ev.residual.abs() < 1e-10);
            assert!(ev.de_actual.abs() < 1e-10, "elastic impact loses no energy");
        }
    }

    #[test]
    fn simultaneous_contacts_are_swept_in_order() {
        // A free particle flying into a corner hits both walls at t = 1; the
        // second reflection happens in the same instant via the sweep.
        let sys = MechanicalSystem::free(MetricField::constant(DMatrix::identity(2, 2)));
        let wall = |axis: usize, label: &str| {
            UnilateralConstraint::new(
                label,
                move |q: &DVector<f64>| q[axis],
                move |q: &DVector<f64>| {
                    let mut d = DVector::zeros(q.len());
                    d[axis] = 1.0;
                    d
                },
                1.0,
            )
            .unwrap()
        };
        let scn = Scenario {
            name: "corner".into(),
            sys,
            cs: ConstraintSet::empty(2),
            unilaterals: vec![wall(0, "wall-x"), wall(1, "wall-y")],
            guards: Vec::new(),
            release_guards: Vec::new(),
            initial: State::new(0.0, dvec(&[1.0, 1.0]), dvec(&[-1.0, -1.0]), 0.0),
        };
        let traj = simulate(&scn, (0.0, 1.5), &IntegratorOptions::default()).unwrap();
        assert_eq!(traj.events.len(), 2);
        assert!((traj.events[0].audit.t_event - 1.0).abs() < 1e-9);
        assert_eq!(traj.events[0].audit.t_event, traj.events[1].audit.t_event);
        let end = traj.final_state().unwrap();
        assert_relative_eq!(end.v[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(end.v[1], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn inconsistent_initial_state_is_rejected() {
        let mut scn = bouncing_ball(1.0, -0.5, 0.0); // starts below the floor
        scn.initial = State::new(0.0, dvec(&[-0.5]), dvec(&[0.0]), 0.0);
        match simulate(&scn, (0.0, 1.0), &IntegratorOptions::default()) {
            Err(failure) => assert!(matches!(
                failure.error,
                Error::InconsistentInitialState(_)
            )),
            Ok(_) => panic!("expected rejection"),
        }
    }
}
