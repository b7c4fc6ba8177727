//! A sphere translating over a plane that is smooth for `x < 0` and
//! absolutely rough for `x > 0`, with drag linear in the velocities.
//!
//! State: configuration `(x, y)` plus quasi-velocities
//! `(xdot, ydot, w_x, w_y, w_z)`; the orientation angles are cyclic and
//! dropped. Kinetic metric `diag(1, 1, k2, k2, k2)` per unit mass, where `k2`
//! is the squared radius of gyration. Drag enters as the covector
//! `F = -beta v`, so translational speeds decay at rate `beta` and angular
//! rates at `beta / k2`. On the rough side the rolling rows
//! `xdot - r w_y = 0`, `ydot + r w_x = 0` activate, which triggers a momentum
//! projection at the crossing.

use nalgebra::{DMatrix, DVector};

use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::geometry::MetricField;
use crate::lagrangian::{MechanicalSystem, State};
use crate::simulator::{Guard, Scenario};

use super::exp_decay_ramp;

#[derive(Clone, Copy, Debug)]
pub struct SphereParams {
    /// Sphere radius.
    pub r: f64,
    /// Squared radius of gyration (2 r^2 / 5 for a homogeneous sphere).
    pub k2: f64,
    /// Drag coefficient.
    pub beta: f64,
    pub x0: f64,
    pub y0: f64,
    pub vx0: f64,
    pub vy0: f64,
    pub omega0: [f64; 3],
    pub z0: f64,
}

impl Default for SphereParams {
    fn default() -> Self {
        SphereParams {
            r: 1.0,
            k2: 0.4,
            beta: 0.1,
            x0: -1.0,
            y0: 0.0,
            vx0: 1.0,
            vy0: 0.0,
            omega0: [0.0, 0.3, 1.0],
            z0: 0.0,
        }
    }
}

impl SphereParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.k2 > 0.0 && self.beta > 0.0) {
            return Err(Error::InvalidParameter(
                "sphere requires r, k2, beta > 0".into(),
            ));
        }
        if self.x0 >= 0.0 {
            return Err(Error::InvalidParameter(
                "sphere must start on the smooth side (x0 < 0)".into(),
            ));
        }
        if self.vx0 <= 0.0 {
            return Err(Error::InvalidParameter(
                "sphere needs vx0 > 0 to reach the rough side".into(),
            ));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> State {
        State::new(
            0.0,
            DVector::from_row_slice(&[self.x0, self.y0]),
            DVector::from_row_slice(&[
                self.vx0,
                self.vy0,
                self.omega0[0],
                self.omega0[1],
                self.omega0[2],
            ]),
            self.z0,
        )
    }

    /// Rolling constraint rows in `(xdot, ydot, w_x, w_y, w_z)`.
    pub fn constraint_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(
            2,
            5,
            &[
                1.0, 0.0, 0.0, -self.r, 0.0, //
                0.0, 1.0, self.r, 0.0, 0.0,
            ],
        )
    }
}

pub fn build_sphere(p: SphereParams) -> Result<Scenario> {
    p.validate()?;
    let metric = DMatrix::from_diagonal(&DVector::from_row_slice(&[
        1.0, 1.0, p.k2, p.k2, p.k2,
    ]));
    let beta = p.beta;
    let sys = MechanicalSystem::free(MetricField::constant_reduced(metric, 2))
        .with_applied_force(move |_q, v, _z| -v * beta);

    let psi = p.constraint_matrix();
    let cs = ConstraintSet::new(2, 5, move |_q| psi.clone(), |q: &DVector<f64>| {
        vec![q[0] > 0.0; 2]
    })
    .with_rate(|_q, _qd| DMatrix::zeros(2, 5));

    Ok(Scenario {
        name: "sphere".into(),
        sys,
        cs,
        unilaterals: Vec::new(),
        guards: vec![Guard::new("rough-boundary", |q: &DVector<f64>| q[0])],
        release_guards: Vec::new(),
        initial: p.initial_state(),
    })
}

/// Closed-form smooth-side state at time `t` (valid while `x(t) < 0`):
/// `x(t) = x0 + vx0 (1 - e^{-beta t}) / beta`, angular rates decay at
/// `beta / k2`, and `z` integrates the kinetic energy.
pub fn smooth_closed_form(p: &SphereParams, state0: &State, t: f64) -> State {
    let b = p.beta;
    let ramp = exp_decay_ramp(b, t);
    let decay = (-b * t).exp();
    let spin = (-b * t / p.k2).exp();

    let q = DVector::from_row_slice(&[
        state0.q[0] + state0.v[0] * ramp,
        state0.q[1] + state0.v[1] * ramp,
    ]);
    let v = DVector::from_row_slice(&[
        state0.v[0] * decay,
        state0.v[1] * decay,
        state0.v[2] * spin,
        state0.v[3] * spin,
        state0.v[4] * spin,
    ]);
    // zdot = T: integrate each decaying square in closed form.
    let trans = 0.5 * (state0.v[0] * state0.v[0] + state0.v[1] * state0.v[1]);
    let rot = 0.5
        * p.k2
        * (state0.v[2] * state0.v[2] + state0.v[3] * state0.v[3] + state0.v[4] * state0.v[4]);
    let z = state0.z + trans * exp_decay_ramp(2.0 * b, t) + rot * exp_decay_ramp(2.0 * b / p.k2, t);

    State::new(state0.t + t, q, v, z)
}

/// Time at which the smooth-side trajectory reaches `x = 0`, if it does.
pub fn time_to_boundary(p: &SphereParams, state0: &State) -> Option<f64> {
    let b = p.beta;
    let x0 = state0.q[0];
    let vx0 = state0.v[0];
    if x0 >= 0.0 || vx0 <= 0.0 {
        return None;
    }
    if b == 0.0 {
        return Some(-x0 / vx0);
    }
    let arg = 1.0 + b * x0 / vx0; // 1 - beta |x0| / vx0
    if arg <= 0.0 {
        None // drag stops the sphere before the boundary
    } else {
        Some(-arg.ln() / b)
    }
}

/// The momentum-projection jump at the rough boundary, written out
/// component-wise.
pub fn activation_jump_closed_form(p: &SphereParams, v_minus: &DVector<f64>) -> DVector<f64> {
    let (r, k2) = (p.r, p.k2);
    let den = r * r + k2;
    let (vx, vy, wx, wy, wz) = (v_minus[0], v_minus[1], v_minus[2], v_minus[3], v_minus[4]);
    DVector::from_row_slice(&[
        (r * r * vx + r * k2 * wy) / den,
        (r * r * vy - r * k2 * wx) / den,
        (-r * vy + k2 * wx) / den,
        (r * vx + k2 * wy) / den,
        wz,
    ])
}

/// Exact rolling-phase solution from the post-jump state at `t_bar`.
///
/// With the drag covector `-beta v` and the rolling rows enforced, the
/// contact forces `lambda = beta (k2 - 1) / (k2 + r^2) * (xdot, ydot)` keep
/// the rolling exact while translational speeds decay at
/// `nu = beta (1 + r^2) / (k2 + r^2)` and the free spin at `beta / k2`.
/// Returns the state and `(lambda_1, lambda_2)`.
pub fn rolling_closed_form(
    p: &SphereParams,
    state_plus: &State,
    t_bar: f64,
    t: f64,
) -> (State, [f64; 2]) {
    let (r, k2, b) = (p.r, p.k2, p.beta);
    let s = t - t_bar;
    let nu = b * (1.0 + r * r) / (k2 + r * r);
    let decay = (-nu * s).exp();
    let spin = (-b * s / k2).exp();

    let vx = state_plus.v[0] * decay;
    let vy = state_plus.v[1] * decay;
    let wz = state_plus.v[4] * spin;
    let q = DVector::from_row_slice(&[
        state_plus.q[0] + state_plus.v[0] * exp_decay_ramp(nu, s),
        state_plus.q[1] + state_plus.v[1] * exp_decay_ramp(nu, s),
    ]);
    let v = DVector::from_row_slice(&[vx, vy, -vy / r, vx / r, wz]);

    // zdot = T = (1/2)(vx^2 + vy^2)(1 + k2 / r^2) + (1/2) k2 wz^2.
    let trans = 0.5
        * (state_plus.v[0] * state_plus.v[0] + state_plus.v[1] * state_plus.v[1])
        * (1.0 + k2 / (r * r));
    let rot = 0.5 * k2 * state_plus.v[4] * state_plus.v[4];
    let z = state_plus.z
        + trans * exp_decay_ramp(2.0 * nu, s)
        + rot * exp_decay_ramp(2.0 * b / k2, s);

    let c = b * (k2 - 1.0) / (k2 + r * r);
    (State::new(t, q, v, z), [c * vx, c * vy])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::PointClass;
    use approx::assert_relative_eq;

    #[test]
    fn build_validates_parameters() {
        let p = SphereParams {
            x0: 0.5,
            ..SphereParams::default()
        };
        assert!(build_sphere(p).is_err());
        assert!(build_sphere(SphereParams::default()).is_ok());
    }

    #[test]
    fn rank_across_the_boundary() {
        let scn = build_sphere(SphereParams::default()).unwrap();
        assert_eq!(scn.cs.rank_at(&DVector::from_row_slice(&[-1.0, 0.0])), 0);
        assert_eq!(scn.cs.rank_at(&DVector::from_row_slice(&[1.0, 0.0])), 2);
        assert_eq!(
            scn.cs
                .classify_point(&DVector::from_row_slice(&[0.0, 0.3]), 0.01),
            PointClass::Singular
        );
    }

    #[test]
    fn smooth_oracle_at_zero_is_the_initial_state() {
        let p = SphereParams::default();
        let s0 = p.initial_state();
        let s = smooth_closed_form(&p, &s0, 0.0);
        assert_eq!(s.q, s0.q);
        assert_eq!(s.v, s0.v);
        assert_eq!(s.z, s0.z);
    }

    #[test]
    fn smooth_oracle_long_time_limit() {
        let p = SphereParams::default();
        let s0 = p.initial_state();
        let s = smooth_closed_form(&p, &s0, 500.0);
        assert_relative_eq!(s.q[0], p.x0 + p.vx0 / p.beta, max_relative = 1e-12);
    }

    #[test]
    fn smooth_oracle_small_beta_recovers_straight_motion() {
        let p = SphereParams {
            beta: 1e-12,
            ..SphereParams::default()
        };
        let s0 = p.initial_state();
        let s = smooth_closed_form(&p, &s0, 2.0);
        assert_relative_eq!(s.q[0], p.x0 + p.vx0 * 2.0, max_relative = 1e-9);
    }

    #[test]
    fn boundary_time_closed_form() {
        let p = SphereParams::default();
        let t = time_to_boundary(&p, &p.initial_state()).unwrap();
        assert_relative_eq!(t, -10.0 * 0.9_f64.ln(), max_relative = 1e-14);

        // Drag too strong: never arrives.
        let slow = SphereParams {
            beta: 2.0,
            ..SphereParams::default()
        };
        assert!(time_to_boundary(&slow, &slow.initial_state()).is_none());
    }

    #[test]
    fn rolling_oracle_is_continuous_at_the_junction() {
        let p = SphereParams::default();
        let plus = State::new(
            1.0,
            DVector::from_row_slice(&[0.0, 0.0]),
            activation_jump_closed_form(&p, &DVector::from_row_slice(&[0.9, 0.1, 0.0, 0.2, 0.7])),
            0.3,
        );
        let (s, _) = rolling_closed_form(&p, &plus, 1.0, 1.0);
        assert_eq!(s.q, plus.q);
        assert!((s.v - &plus.v).amax() < 1e-15);
        assert_eq!(s.z, plus.z);
    }

    #[test]
    fn rolling_oracle_satisfies_the_rolling_rows_for_all_time() {
        let p = SphereParams::default();
        let v_plus =
            activation_jump_closed_form(&p, &DVector::from_row_slice(&[0.9, -0.2, 0.1, 0.23, 0.77]));
        let plus = State::new(0.0, DVector::zeros(2), v_plus, 0.0);
        for i in 0..20 {
            let t = i as f64 * 0.37;
            let (s, _) = rolling_closed_form(&p, &plus, 0.0, t);
            assert!((s.v[0] - p.r * s.v[3]).abs() < 1e-15);
            assert!((s.v[1] + p.r * s.v[2]).abs() < 1e-15);
        }
    }

    #[test]
    fn jump_block_is_the_metric_projection() {
        use crate::impacts::activation_jump;
        let p = SphereParams::default();
        let scn = build_sphere(p).unwrap();
        let psi = p.constraint_matrix();
        let s = State::new(
            0.0,
            DVector::from_row_slice(&[0.0, 0.0]),
            DVector::from_row_slice(&[0.9, -0.4, 0.15, 0.23, 0.77]),
            0.0,
        );
        let (post, _) = activation_jump(&scn.sys, &psi, &s).unwrap();
        let closed = activation_jump_closed_form(&p, &s.v);
        assert!((post.v - closed).amax() < 1e-14);
    }
}
