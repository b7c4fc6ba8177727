//! A cylinder above a sprung platform, with a velocity-proportional drive
//! `+beta z` in the action variable: energy grows as `e^{beta t}` between
//! events.
//!
//! Coordinates `(x, y, phi, h)`: cylinder center, rotation angle, platform
//! displacement. Kinetic metric `diag(m, m, I, M)`, potential
//! `V = k h^2 / 2 + m g y + M g h - beta z`. Touchdown of the lowest surface
//! point (`gap = y - h - gamma cos phi - r`) is an impact with restitution
//! `alpha`; if the contact persists the rolling rows
//! `xdot = (r + gamma cos phi) phidot`, `ydot - hdot + gamma sin phi phidot = 0`
//! activate, and the stance lasts while both contact forces stay positive.

use nalgebra::{DMatrix, DVector};

use crate::constraints::{ConstraintSet, UnilateralConstraint};
use crate::error::{Error, Result};
use crate::geometry::MetricField;
use crate::lagrangian::{MechanicalSystem, State};
use crate::simulator::{ReleaseGuard, Scenario};

/// Width of the configuration band around `gap = 0` inside which the stance
/// rows count as present for activation.
pub const CONTACT_BAND: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
pub struct CylinderParams {
    /// Cylinder mass.
    pub m: f64,
    /// Platform mass.
    pub m_plane: f64,
    /// Cylinder rotational inertia about its center of mass.
    pub inertia: f64,
    /// Cylinder radius.
    pub r: f64,
    /// Center-of-mass offset from the cylinder axis.
    pub gamma: f64,
    /// Platform spring constant.
    pub k_spring: f64,
    pub g_grav: f64,
    /// Drive coefficient on the action variable.
    pub beta: f64,
    /// Restitution at touchdown.
    pub alpha: f64,
    pub x0: f64,
    pub y0: f64,
    pub phi0: f64,
    pub h0: f64,
    pub vx0: f64,
    pub vy0: f64,
    pub vphi0: f64,
    pub vh0: f64,
    pub z0: f64,
}

impl Default for CylinderParams {
    fn default() -> Self {
        CylinderParams {
            m: 1.0,
            m_plane: 10.0,
            inertia: 0.5,
            r: 1.0,
            gamma: 0.3,
            k_spring: 50.0,
            g_grav: 9.81,
            beta: 0.1,
            alpha: 0.5,
            x0: 0.0,
            y0: 2.0,
            phi0: 0.2,
            h0: 0.0,
            vx0: 0.3,
            vy0: -0.5,
            vphi0: 1.0,
            vh0: 0.0,
            z0: 0.0,
        }
    }
}

impl CylinderParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0
            && self.m_plane > 0.0
            && self.inertia > 0.0
            && self.r > 0.0
            && self.k_spring > 0.0
            && self.g_grav > 0.0)
        {
            return Err(Error::InvalidParameter(
                "cylinder requires m, M, I, r, k, g > 0".into(),
            ));
        }
        if self.gamma < 0.0 {
            return Err(Error::InvalidParameter("gamma must be >= 0".into()));
        }
        if self.beta < 0.0 {
            return Err(Error::InvalidParameter("beta must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        // I (M + m) - m M gamma^2 sin^2 phi must stay positive over the angle
        // grid for the stance multipliers to be bounded.
        for i in 0..=72 {
            let phi = 2.0 * std::f64::consts::PI * (i as f64) / 72.0;
            let g = self.inertia * (self.m_plane + self.m)
                - self.m * self.m_plane * self.gamma.powi(2) * phi.sin().powi(2);
            if g <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "I(M+m) - mM gamma^2 sin^2 phi = {g:.3e} <= 0 at phi = {phi:.3}"
                )));
            }
        }
        Ok(())
    }

    pub fn initial_state(&self) -> State {
        State::new(
            0.0,
            DVector::from_row_slice(&[self.x0, self.y0, self.phi0, self.h0]),
            DVector::from_row_slice(&[self.vx0, self.vy0, self.vphi0, self.vh0]),
            self.z0,
        )
    }

    pub fn gap(&self, q: &DVector<f64>) -> f64 {
        q[1] - q[3] - self.gamma * q[2].cos() - self.r
    }

    pub fn gap_normal(&self, q: &DVector<f64>) -> DVector<f64> {
        DVector::from_row_slice(&[0.0, 1.0, self.gamma * q[2].sin(), -1.0])
    }

    /// Stance rows: rolling `dx - (r + gamma cos phi) dphi` and contact
    /// persistence `dy - dh + gamma sin phi dphi`.
    pub fn constraint_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let (s, c) = q[2].sin_cos();
        DMatrix::from_row_slice(
            2,
            4,
            &[
                1.0,
                0.0,
                -(self.r + self.gamma * c),
                0.0,
                0.0,
                1.0,
                self.gamma * s,
                -1.0,
            ],
        )
    }
}

pub fn build_cylinder(p: CylinderParams) -> Result<Scenario> {
    p.validate()?;
    let metric = DMatrix::from_diagonal(&DVector::from_row_slice(&[
        p.m, p.m, p.inertia, p.m_plane,
    ]));
    let (m, mp, k, g, beta) = (p.m, p.m_plane, p.k_spring, p.g_grav, p.beta);
    let sys = MechanicalSystem::new(
        MetricField::constant(metric),
        move |q: &DVector<f64>, z| 0.5 * k * q[3] * q[3] + m * g * q[1] + mp * g * q[3] - beta * z,
        move |q: &DVector<f64>, _z| {
            DVector::from_row_slice(&[0.0, m * g, 0.0, k * q[3] + mp * g])
        },
        move |_q, _z| -beta,
    );
    sys.validate_gradients(&[
        (p.initial_state().q.clone(), p.z0),
        (DVector::from_row_slice(&[0.1, 1.2, 0.4, -0.2]), 1.0),
    ])?;

    let pc = p;
    let gap_uc = UnilateralConstraint::new(
        "touchdown",
        move |q: &DVector<f64>| pc.gap(q),
        move |q: &DVector<f64>| pc.gap_normal(q),
        p.alpha,
    )?;
    gap_uc.validate_gradient(&[p.initial_state().q.clone()])?;

    let cs = ConstraintSet::new(
        2,
        4,
        move |q: &DVector<f64>| pc.constraint_matrix(q),
        move |q: &DVector<f64>| vec![pc.gap(q) <= CONTACT_BAND; 2],
    )
    .with_rate(move |q: &DVector<f64>, qd: &DVector<f64>| {
        let (s, c) = q[2].sin_cos();
        let phidot = qd[2];
        DMatrix::from_row_slice(
            2,
            4,
            &[
                0.0,
                0.0,
                pc.gamma * s * phidot,
                0.0,
                0.0,
                0.0,
                pc.gamma * c * phidot,
                0.0,
            ],
        )
    });

    Ok(Scenario {
        name: "cylinder".into(),
        sys,
        cs,
        unilaterals: vec![gap_uc],
        guards: Vec::new(),
        // Losing the rolling traction releases only the rolling row (the
        // motion degrades to a sliding contact); losing the normal force is
        // liftoff and releases everything.
        release_guards: vec![
            ReleaseGuard {
                row: 0,
                label: "rolling-force".into(),
                drop_all: false,
            },
            ReleaseGuard {
                row: 1,
                label: "normal-force".into(),
                drop_all: true,
            },
        ],
        initial: p.initial_state(),
    })
}

/// `(e^{b t} - 1) / b`, stable as `b -> 0`.
fn growth_ramp(b: f64, t: f64) -> f64 {
    if b == 0.0 {
        t
    } else {
        f64::exp_m1(b * t) / b
    }
}

/// `(e^{b t} - 1 - b t) / b^2`, stable as `b -> 0`.
fn growth_ramp2(b: f64, t: f64) -> f64 {
    let x = b * t;
    if x.abs() < 1e-5 {
        t * t * (0.5 + x / 6.0 + x * x / 24.0)
    } else {
        (f64::exp_m1(x) - x) / (b * b)
    }
}

/// Closed-form aerial motion from `(q0, v0)`: translations and rotation obey
/// `vdot = beta v` (plus gravity on `y`), the platform is an oscillator with
/// anti-damping `beta`. Returns `(q(t), v(t))`.
pub fn aerial_closed_form(
    p: &CylinderParams,
    q0: &DVector<f64>,
    v0: &DVector<f64>,
    t: f64,
) -> (DVector<f64>, DVector<f64>) {
    let b = p.beta;
    let g = p.g_grav;
    let grow = (b * t).exp();
    let ramp = growth_ramp(b, t);

    let x = q0[0] + v0[0] * ramp;
    let vx = v0[0] * grow;
    let phi = q0[2] + v0[2] * ramp;
    let vphi = v0[2] * grow;
    let y = q0[1] + v0[1] * ramp - g * growth_ramp2(b, t);
    let vy = v0[1] * grow - g * ramp;

    // hddot - b hdot + (k/M) h = -g
    let w0 = p.k_spring / p.m_plane;
    let h_eq = -p.m_plane * p.g_grav / p.k_spring;
    let a0 = q0[3] - h_eq;
    let disc = b * b - 4.0 * w0;
    let (h, vh) = if disc < 0.0 {
        let w = (-disc).sqrt() / 2.0;
        let a = a0;
        let bb = (v0[3] - b * a / 2.0) / w;
        let e = (b * t / 2.0).exp();
        let (sw, cw) = (w * t).sin_cos();
        (
            h_eq + e * (a * cw + bb * sw),
            e * ((b * a / 2.0 + bb * w) * cw + (b * bb / 2.0 - a * w) * sw),
        )
    } else if disc > 0.0 {
        let root = disc.sqrt();
        let s1 = (b - root) / 2.0;
        let s2 = (b + root) / 2.0;
        let c2 = (v0[3] - s1 * a0) / (s2 - s1);
        let c1 = a0 - c2;
        (
            h_eq + c1 * (s1 * t).exp() + c2 * (s2 * t).exp(),
            c1 * s1 * (s1 * t).exp() + c2 * s2 * (s2 * t).exp(),
        )
    } else {
        let s = b / 2.0;
        let c1 = a0;
        let c2 = v0[3] - s * a0;
        let e = (s * t).exp();
        (h_eq + (c1 + c2 * t) * e, (c2 + s * (c1 + c2 * t)) * e)
    };

    (
        DVector::from_row_slice(&[x, y, phi, h]),
        DVector::from_row_slice(&[vx, vy, vphi, vh]),
    )
}

/// The contact projectors written out: `Q X` scales the gradient direction
/// `(0, 1/m, gamma sin phi / I, -1/M)` by
/// `(X^y - X^h + gamma sin phi X^phi) / (1/m + 1/M + (gamma sin phi)^2 / I)`.
/// Returns `(P, Q)`.
pub fn projector_closed_form(p: &CylinderParams, phi: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let gs = p.gamma * phi.sin();
    let grad = DVector::from_row_slice(&[0.0, 1.0 / p.m, gs / p.inertia, -1.0 / p.m_plane]);
    let normal = DVector::from_row_slice(&[0.0, 1.0, gs, -1.0]);
    let denom = 1.0 / p.m + 1.0 / p.m_plane + gs * gs / p.inertia;
    let q = grad * normal.transpose() / denom;
    (DMatrix::identity(4, 4) - &q, q)
}

/// Touchdown jump written out component-wise:
/// `xdot` unchanged, the other components move along the gradient direction
/// by `(1 + alpha) w / denom` with `w = ydot - hdot + gamma sin phi phidot`.
pub fn touchdown_jump_closed_form(
    p: &CylinderParams,
    phi: f64,
    v_minus: &DVector<f64>,
    alpha: f64,
) -> DVector<f64> {
    let gs = p.gamma * phi.sin();
    let w = v_minus[1] - v_minus[3] + gs * v_minus[2];
    let denom = 1.0 / p.m + 1.0 / p.m_plane + gs * gs / p.inertia;
    let f = (1.0 + alpha) * w / denom;
    DVector::from_row_slice(&[
        v_minus[0],
        v_minus[1] - f / p.m,
        v_minus[2] - f * gs / p.inertia,
        v_minus[3] + f / p.m_plane,
    ])
}

/// Kinetic energy carried by the touchdown velocity jump:
/// `T_lost = (1/2) (1 + alpha)^2 w^2 / denom`.
pub fn t_lost_closed_form(p: &CylinderParams, phi: f64, v_minus: &DVector<f64>, alpha: f64) -> f64 {
    let gs = p.gamma * phi.sin();
    let w = v_minus[1] - v_minus[3] + gs * v_minus[2];
    let denom = 1.0 / p.m + 1.0 / p.m_plane + gs * gs / p.inertia;
    0.5 * (1.0 + alpha).powi(2) * w * w / denom
}

/// Stance contact forces from the hand-derived 2x2 system. Differentiating
/// the stance rows along the flow and eliminating the accelerations gives
///
/// ```text
/// [ 1/m + a^2/I      -a gs / I          ] [mu1]   [ -gs phidot^2            ]
/// [ -a gs / I         1/m + 1/M + gs^2/I] [mu2] = [ -k h / M - gc phidot^2  ]
/// ```
///
/// with `a = r + gamma cos phi`, `gs = gamma sin phi`, `gc = gamma cos phi`.
/// The drive terms cancel on the constraint surface, so the forces carry no
/// `beta` dependence.
pub fn stance_multipliers_closed_form(
    p: &CylinderParams,
    phi: f64,
    h: f64,
    phidot: f64,
) -> (f64, f64) {
    let (s, c) = phi.sin_cos();
    let a = p.r + p.gamma * c;
    let gs = p.gamma * s;
    let gc = p.gamma * c;
    let c11 = 1.0 / p.m + a * a / p.inertia;
    let c12 = -a * gs / p.inertia;
    let c22 = 1.0 / p.m + 1.0 / p.m_plane + gs * gs / p.inertia;
    let b1 = -gs * phidot * phidot;
    let b2 = -p.k_spring * h / p.m_plane - gc * phidot * phidot;
    let det = c11 * c22 - c12 * c12;
    ((b1 * c22 - c12 * b2) / det, (c11 * b2 - c12 * b1) / det)
}

/// An on-constraint stance state from `(phi, h, phidot, hdot)`; `x` is placed
/// at the origin and `y` on the contact surface.
pub fn stance_state(p: &CylinderParams, phi: f64, h: f64, phidot: f64, hdot: f64) -> State {
    let (s, c) = phi.sin_cos();
    let q = DVector::from_row_slice(&[0.0, h + p.r + p.gamma * c, phi, h]);
    let v = DVector::from_row_slice(&[
        (p.r + p.gamma * c) * phidot,
        hdot - p.gamma * s * phidot,
        phidot,
        hdot,
    ]);
    State::new(0.0, q, v, p.z0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::constrained_rhs_rows;
    use crate::impacts::{restitution_jump, unilateral_projectors};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn validation_rejects_bad_parameters() {
        let bad_alpha = CylinderParams {
            alpha: 1.2,
            ..CylinderParams::default()
        };
        assert!(build_cylinder(bad_alpha).is_err());

        // gamma large enough to make I(M+m) - mM gamma^2 sin^2 phi negative
        let heavy_offset = CylinderParams {
            gamma: 5.0,
            ..CylinderParams::default()
        };
        assert!(heavy_offset.validate().is_err());

        assert!(build_cylinder(CylinderParams::default()).is_ok());
    }

    #[test]
    fn centered_mass_projector_couples_only_y_and_h() {
        let p = CylinderParams {
            gamma: 0.0,
            ..CylinderParams::default()
        };
        let (_pp, qq) = projector_closed_form(&p, 0.7);
        for i in 0..4 {
            assert_eq!(qq[(i, 0)], 0.0);
            assert_eq!(qq[(i, 2)], 0.0);
            assert_eq!(qq[(0, i)], 0.0);
            assert_eq!(qq[(2, i)], 0.0);
        }
        assert!(qq[(1, 1)] != 0.0 && qq[(3, 3)] != 0.0);
    }

    #[test]
    fn projector_closed_form_matches_generic() {
        let p = CylinderParams::default();
        let scn = build_cylinder(p).unwrap();
        let phi = 0.63_f64;
        let q = DVector::from_row_slice(&[0.1, p.r + p.gamma * phi.cos() - 0.2, phi, -0.2]);
        let (pg, qg) = unilateral_projectors(&scn.sys, &scn.unilaterals[0], &q).unwrap();
        let (pc, qc) = projector_closed_form(&p, phi);
        assert!((pg - pc).amax() < 1e-13);
        assert!((qg - qc).amax() < 1e-13);
    }

    #[test]
    fn touchdown_jump_matches_generic_restitution() {
        let p = CylinderParams::default();
        let scn = build_cylinder(p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let phi: f64 = rng.gen_range(-1.5..1.5);
            let h = rng.gen_range(-0.4..0.2);
            let q =
                DVector::from_row_slice(&[0.0, h + p.r + p.gamma * phi.cos(), phi, h]);
            let mut v = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
            let gs = p.gamma * phi.sin();
            let w = v[1] - v[3] + gs * v[2];
            if w > -1e-3 {
                v[1] -= w + 1.0; // ensure an approaching contact
            }
            let s = State::new(0.0, q, v.clone(), 0.0);
            let (post, audit) = restitution_jump(&scn.sys, &scn.unilaterals[0], &s, 1e-12).unwrap();
            let closed = touchdown_jump_closed_form(&p, phi, &v, p.alpha);
            assert!((&post.v - &closed).amax() < 1e-12);
            let tl = t_lost_closed_form(&p, phi, &v, p.alpha);
            assert_relative_eq!(audit.t_lost, tl, max_relative = 1e-10);
        }
    }

    #[test]
    fn stance_multipliers_match_the_generic_elimination() {
        let p = CylinderParams::default();
        let scn = build_cylinder(p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let phi = rng.gen_range(-1.5..1.5);
            let h = rng.gen_range(-0.5..0.2);
            let phidot = rng.gen_range(-2.0..2.0);
            let hdot = rng.gen_range(-2.0..2.0);
            let state = stance_state(&p, phi, h, phidot, hdot);
            let d = constrained_rhs_rows(&scn.sys, &scn.cs, &[0, 1], &state, 0.0).unwrap();
            let (mu1, mu2) = stance_multipliers_closed_form(&p, phi, h, phidot);
            assert_relative_eq!(d.lambda[0], mu1, max_relative = 1e-9, epsilon = 1e-11);
            assert_relative_eq!(d.lambda[1], mu2, max_relative = 1e-9, epsilon = 1e-11);
        }
    }

    #[test]
    fn stance_multipliers_do_not_depend_on_beta() {
        let pa = CylinderParams {
            beta: 0.0,
            ..CylinderParams::default()
        };
        let pb = CylinderParams {
            beta: 2.0,
            ..CylinderParams::default()
        };
        let (a1, a2) = stance_multipliers_closed_form(&pa, 0.8, -0.3, 1.4);
        let scn_b = build_cylinder(pb).unwrap();
        let state = stance_state(&pb, 0.8, -0.3, 1.4, 0.5);
        let d = constrained_rhs_rows(&scn_b.sys, &scn_b.cs, &[0, 1], &state, 0.0).unwrap();
        assert_relative_eq!(d.lambda[0], a1, max_relative = 1e-9);
        assert_relative_eq!(d.lambda[1], a2, max_relative = 1e-9);
    }

    #[test]
    fn stance_equations_reproduce_the_displayed_form() {
        // m xddot - m beta xdot = mu1 etc., with the constraint forces from
        // the rows (1, 0, -(r + gc), 0) and (0, 1, gs, -1).
        let p = CylinderParams::default();
        let scn = build_cylinder(p).unwrap();
        let state = stance_state(&p, 0.45, -0.25, 1.1, 0.4);
        let d = constrained_rhs_rows(&scn.sys, &scn.cs, &[0, 1], &state, 0.0).unwrap();
        let (mu1, mu2) = (d.lambda[0], d.lambda[1]);
        let (s, c) = state.q[2].sin_cos();
        let v = &state.v;
        let a = p.r + p.gamma * c;
        assert_relative_eq!(
            p.m * d.vdot[0],
            p.m * p.beta * v[0] + mu1,
            max_relative = 1e-8
        );
        assert_relative_eq!(
            p.m * d.vdot[1],
            p.m * p.beta * v[1] - p.m * p.g_grav + mu2,
            max_relative = 1e-8
        );
        assert_relative_eq!(
            p.inertia * d.vdot[2],
            p.inertia * p.beta * v[2] - a * mu1 + p.gamma * s * mu2,
            max_relative = 1e-8
        );
        assert_relative_eq!(
            p.m_plane * d.vdot[3],
            p.m_plane * p.beta * v[3]
                - p.m_plane * p.g_grav
                - p.k_spring * state.q[3]
                - mu2,
            max_relative = 1e-8
        );
    }

    #[test]
    fn aerial_closed_form_is_exact_at_zero() {
        let p = CylinderParams::default();
        let s0 = p.initial_state();
        let (q, v) = aerial_closed_form(&p, &s0.q, &s0.v, 0.0);
        assert!((q - &s0.q).amax() < 1e-15);
        assert!((v - &s0.v).amax() < 1e-15);
    }

    #[test]
    fn aerial_closed_form_beta_zero_is_ballistic() {
        let p = CylinderParams {
            beta: 0.0,
            ..CylinderParams::default()
        };
        let q0 = DVector::from_row_slice(&[0.0, 3.0, 0.1, 0.0]);
        let v0 = DVector::from_row_slice(&[0.5, 0.2, 0.8, 0.0]);
        let t = 0.4;
        let (q, v) = aerial_closed_form(&p, &q0, &v0, t);
        assert_relative_eq!(q[0], 0.2, max_relative = 1e-14);
        assert_relative_eq!(
            q[1],
            3.0 + 0.2 * t - 0.5 * p.g_grav * t * t,
            max_relative = 1e-12
        );
        assert_relative_eq!(v[1], 0.2 - p.g_grav * t, max_relative = 1e-12);
    }
}
