//! Instantaneous jump maps: metric-orthogonal contact projectors, restitution
//! at one-sided constraints, momentum projection when new velocity
//! constraints activate, and the kinetic-energy bookkeeping that goes with
//! them.

use nalgebra::{DMatrix, DVector};

use crate::constraints::UnilateralConstraint;
use crate::dynamics::{pad_covector, SINGULAR_MASS_RATIO};
use crate::error::{Error, Result};
use crate::lagrangian::{MechanicalSystem, State};

/// What kind of velocity jump an audit records.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpulseKind {
    Restitution,
    Activation,
    Release,
}

/// Pre/post data for one instantaneous event. `t_lost` is the kinetic energy
/// of the velocity difference `T(v_plus - v_minus)`; for restitution the
/// Carnot residual `(T+ - T-) + ((1-a)/(1+a)) T_lost` must vanish, and for
/// activation the same expression with `a = 0` vanishes because the map is a
/// metric-orthogonal projection.
#[derive(Clone, Debug)]
pub struct ImpulseAudit {
    pub t_event: f64,
    pub kind: ImpulseKind,
    pub v_minus: DVector<f64>,
    pub v_plus: DVector<f64>,
    pub t_minus: f64,
    pub t_plus: f64,
    pub t_lost: f64,
    pub carnot_residual: f64,
    pub constraint_residual_post: f64,
}

/// The orthogonal projectors `(P, Q)` onto the tangent / normal split of the
/// contact surface `gap = 0` under the kinetic metric:
/// `Q X = g(grad gap, X) / g(grad gap, grad gap) * grad gap`, `P = Id - Q`.
pub fn unilateral_projectors(
    sys: &MechanicalSystem,
    uc: &UnilateralConstraint,
    q: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let dim = sys.metric.dim();
    let point = sys.metric.point(q)?;
    let normal = pad_covector(&uc.normal_at(q), dim);
    let grad = point.raise(&normal);
    let denom = normal.dot(&grad); // g(grad, grad)
    let scale = normal.norm_squared().max(1e-300);
    if denom <= 1e-12 * scale {
        return Err(Error::DegenerateNormal {
            q: q.iter().copied().collect(),
            norm_sq: denom,
        });
    }
    let q_proj = &grad * normal.transpose() / denom;
    let p_proj = DMatrix::identity(dim, dim) - &q_proj;
    Ok((p_proj, q_proj))
}

/// Newton restitution at a one-sided constraint boundary:
/// `v+ = (P - alpha Q) v-`. Positions, `z` and `t` are untouched. Fails with
/// [`Error::GrazingContact`] when the approach speed is below `graze_tol`
/// (scaled by velocity magnitude); the caller decides the grazing policy.
pub fn restitution_jump(
    sys: &MechanicalSystem,
    uc: &UnilateralConstraint,
    state: &State,
    graze_tol: f64,
) -> Result<(State, ImpulseAudit)> {
    let dim = sys.metric.dim();
    let normal = pad_covector(&uc.normal_at(&state.q), dim);
    let approach = normal.dot(&state.v);
    if approach.abs() < graze_tol * (1.0 + state.v.norm()) {
        return Err(Error::GrazingContact {
            normal_speed: approach,
        });
    }
    if approach > 0.0 {
        return Err(Error::InconsistentInitialState(format!(
            "restitution requested on a separating contact (d gap(v) = {approach:.3e})"
        )));
    }

    let alpha = uc.restitution;
    let (p_proj, q_proj) = unilateral_projectors(sys, uc, &state.q)?;
    let v_plus = &p_proj * &state.v - &q_proj * &state.v * alpha;

    let point = sys.metric.point(&state.q)?;
    let t_minus = 0.5 * point.norm_sq(&state.v);
    let t_plus = 0.5 * point.norm_sq(&v_plus);
    let dv = &v_plus - &state.v;
    let t_lost = 0.5 * point.norm_sq(&dv);
    let carnot = (t_plus - t_minus) + (1.0 - alpha) / (1.0 + alpha) * t_lost;
    // Reflection-law residual: d gap(v+) = -alpha d gap(v-).
    let resid = (normal.dot(&v_plus) + alpha * approach).abs();

    let audit = ImpulseAudit {
        t_event: state.t,
        kind: ImpulseKind::Restitution,
        v_minus: state.v.clone(),
        v_plus: v_plus.clone(),
        t_minus,
        t_plus,
        t_lost,
        carnot_residual: carnot,
        constraint_residual_post: resid,
    };
    let mut post = state.clone();
    post.v = v_plus;
    Ok((post, audit))
}

/// Momentum jump when velocity constraints `psi v = 0` become active:
/// `p+ = [Id - psi^T (psi g^-1 psi^T)^-1 psi g^-1] p-`, the metric-orthogonal
/// projection of the momentum onto the admissible set. `psi_plus` is the
/// post-transition active constraint matrix (evaluated just past the
/// transition surface when rows degenerate at the surface itself).
pub fn activation_jump(
    sys: &MechanicalSystem,
    psi_plus: &DMatrix<f64>,
    state: &State,
) -> Result<(State, ImpulseAudit)> {
    let point = sys.metric.point(&state.q)?;
    let p_minus = point.lower(&state.v);

    let w = point.raise_mat(&psi_plus.transpose()); // g^-1 psi^T
    let gram = psi_plus * &w;
    let svd = gram.clone().svd(true, true);
    let smax = svd.singular_values.amax();
    let smin = svd.singular_values.min();
    if smax == 0.0 || smin < SINGULAR_MASS_RATIO * smax {
        return Err(Error::SingularConstraintMass {
            ratio: if smax == 0.0 { 0.0 } else { smin / smax },
        });
    }

    // p+ = p- - psi^T C^-1 psi g^-1 p-  (and v = g^-1 p throughout)
    let slack = psi_plus * &state.v; // psi g^-1 p-
    let mu = svd.solve(&slack, 0.0).expect("nonsingular Gram matrix");
    let p_plus = &p_minus - psi_plus.transpose() * &mu;
    let v_plus = point.raise(&p_plus);

    let t_minus = 0.5 * point.norm_sq(&state.v);
    let t_plus = 0.5 * point.norm_sq(&v_plus);
    let dv = &v_plus - &state.v;
    let t_lost = 0.5 * point.norm_sq(&dv);
    let resid = (psi_plus * &v_plus).amax();

    let audit = ImpulseAudit {
        t_event: state.t,
        kind: ImpulseKind::Activation,
        v_minus: state.v.clone(),
        v_plus: v_plus.clone(),
        t_minus,
        t_plus,
        t_lost,
        // alpha = 0 convention: exact for a metric-orthogonal projection.
        carnot_residual: (t_plus - t_minus) + t_lost,
        constraint_residual_post: resid,
    };
    let mut post = state.clone();
    post.v = v_plus;
    Ok((post, audit))
}

/// The Carnot residual `(T+ - T-) + ((1-alpha)/(1+alpha)) T(v+ - v-)`.
pub fn carnot_check(
    sys: &MechanicalSystem,
    q: &DVector<f64>,
    v_minus: &DVector<f64>,
    v_plus: &DVector<f64>,
    alpha: f64,
) -> Result<f64> {
    let point = sys.metric.point(q)?;
    let t_minus = 0.5 * point.norm_sq(v_minus);
    let t_plus = 0.5 * point.norm_sq(v_plus);
    let dv = v_plus - v_minus;
    let t_lost = 0.5 * point.norm_sq(&dv);
    Ok((t_plus - t_minus) + (1.0 - alpha) / (1.0 + alpha) * t_lost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MetricField;
    use approx::assert_relative_eq;

    fn dvec(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn flat_2d() -> MechanicalSystem {
        MechanicalSystem::free(MetricField::constant(DMatrix::identity(2, 2)))
    }

    fn floor() -> UnilateralConstraint {
        UnilateralConstraint::new("floor", |q: &DVector<f64>| q[1], |q| {
            let mut d = DVector::zeros(q.len());
            d[1] = 1.0;
            d
        }, 1.0)
        .unwrap()
    }

    #[test]
    fn axis_aligned_projectors() {
        let sys = flat_2d();
        let (p, q) = unilateral_projectors(&sys, &floor(), &dvec(&[0.0, 0.0])).unwrap();
        assert_eq!(q, DMatrix::from_diagonal(&dvec(&[0.0, 1.0])));
        assert_eq!(p, DMatrix::from_diagonal(&dvec(&[1.0, 0.0])));
    }

    #[test]
    fn projectors_sum_to_identity() {
        let g = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.5, -0.2, 0.0, -0.2, 1.0]);
        let sys = MechanicalSystem::free(MetricField::constant(g));
        let uc = UnilateralConstraint::new(
            "slant",
            |q: &DVector<f64>| q[0] + 2.0 * q[1] - q[2],
            |q| {
                let mut d = DVector::zeros(q.len());
                d[0] = 1.0;
                d[1] = 2.0;
                d[2] = -1.0;
                d
            },
            0.5,
        )
        .unwrap();
        let (p, q) = unilateral_projectors(&sys, &uc, &DVector::zeros(3)).unwrap();
        assert!(((p + q) - DMatrix::identity(3, 3)).amax() < 1e-14);
    }

    #[test]
    fn elastic_mirror_in_one_dimension() {
        let sys = MechanicalSystem::free(MetricField::constant(DMatrix::identity(1, 1)));
        let uc = UnilateralConstraint::new("wall", |q: &DVector<f64>| q[0], |_q| dvec(&[1.0]), 1.0)
            .unwrap();
        let s = State::new(0.0, dvec(&[0.0]), dvec(&[-3.0]), 0.0);
        let (post, audit) = restitution_jump(&sys, &uc, &s, 1e-12).unwrap();
        assert_relative_eq!(post.v[0], 3.0, max_relative = 1e-15);
        assert!(audit.carnot_residual.abs() < 1e-12);
        assert_relative_eq!(audit.t_plus, audit.t_minus, max_relative = 1e-14);
    }

    #[test]
    fn completely_inelastic_kills_the_normal_component() {
        let sys = MechanicalSystem::free(MetricField::constant(DMatrix::identity(1, 1)));
        let uc = UnilateralConstraint::new("wall", |q: &DVector<f64>| q[0], |_q| dvec(&[1.0]), 0.0)
            .unwrap();
        let s = State::new(0.0, dvec(&[0.0]), dvec(&[-3.0]), 0.0);
        let (post, audit) = restitution_jump(&sys, &uc, &s, 1e-12).unwrap();
        assert_eq!(post.v[0], 0.0);
        // Hand check: T- = 4.5, T_lost = 4.5, residual (0 - 4.5) + 1 * 4.5 = 0.
        assert!(audit.carnot_residual.abs() < 1e-12);
    }

    #[test]
    fn grazing_contact_is_reported() {
        let sys = flat_2d();
        let s = State::new(0.0, dvec(&[0.0, 0.0]), dvec(&[1.0, -1e-14]), 0.0);
        assert!(matches!(
            restitution_jump(&sys, &floor(), &s, 1e-10),
            Err(Error::GrazingContact { .. })
        ));
    }

    #[test]
    fn carnot_hand_example() {
        // 1D inelastic, unit mass: v- = -2, v+ = 0: (0 - 2) + 1 * 2 = 0.
        let sys = MechanicalSystem::free(MetricField::constant(DMatrix::identity(1, 1)));
        let r = carnot_check(&sys, &dvec(&[0.0]), &dvec(&[-2.0]), &dvec(&[0.0]), 0.0).unwrap();
        assert!(r.abs() < 1e-15);
    }

    #[test]
    fn activation_fixes_compliant_momenta() {
        // p- already satisfying psi g^-1 p- = 0 is untouched.
        let g = DMatrix::from_diagonal(&dvec(&[2.0, 3.0, 1.0]));
        let sys = MechanicalSystem::free(MetricField::constant(g));
        let psi = DMatrix::from_row_slice(1, 3, &[1.0, -1.0, 0.0]);
        // v with psi v = 0:
        let s = State::new(0.0, DVector::zeros(3), dvec(&[0.7, 0.7, -0.4]), 0.0);
        let (post, audit) = activation_jump(&sys, &psi, &s).unwrap();
        assert!((&post.v - &s.v).amax() < 1e-14);
        assert!(audit.t_lost < 1e-28);
    }

    #[test]
    fn activation_is_idempotent() {
        let g = DMatrix::from_diagonal(&dvec(&[1.0, 1.0, 0.4, 0.4, 0.4]));
        let sys = MechanicalSystem::free(MetricField::constant_reduced(g, 2));
        let r = 1.0;
        let psi = DMatrix::from_row_slice(2, 5, &[1.0, 0.0, 0.0, -r, 0.0, 0.0, 1.0, r, 0.0, 0.0]);
        let s = State::new(
            0.0,
            dvec(&[0.0, 0.0]),
            dvec(&[0.9, -0.3, 0.2, 0.23, 0.77]),
            0.0,
        );
        let (once, _) = activation_jump(&sys, &psi, &s).unwrap();
        let (twice, _) = activation_jump(&sys, &psi, &once).unwrap();
        assert!((&twice.v - &once.v).amax() < 1e-12);
    }

    #[test]
    fn sliding_to_rolling_five_sevenths() {
        // Homogeneous ball k2 = 2 r^2 / 5, zero spin: vx+ / vx- = 5/7.
        let r: f64 = 1.3;
        let k2 = 2.0 * r * r / 5.0;
        let g = DMatrix::from_diagonal(&dvec(&[1.0, 1.0, k2, k2, k2]));
        let sys = MechanicalSystem::free(MetricField::constant_reduced(g, 2));
        let psi =
            DMatrix::from_row_slice(2, 5, &[1.0, 0.0, 0.0, -r, 0.0, 0.0, 1.0, r, 0.0, 0.0]);
        let s = State::new(0.0, dvec(&[0.0, 0.0]), dvec(&[7.0, 0.0, 0.0, 0.0, 0.0]), 0.0);
        let (post, audit) = activation_jump(&sys, &psi, &s).unwrap();
        assert_relative_eq!(post.v[0], 5.0, max_relative = 1e-13);
        assert!(audit.t_plus <= audit.t_minus);
        assert!(audit.constraint_residual_post < 1e-13);
    }

    #[test]
    fn restitution_energy_ordering_on_random_instances() {
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let n = rng.gen_range(2..=5);
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let g = &a * a.transpose() + DMatrix::identity(n, n) * 2.0;
            let sys = MechanicalSystem::free(MetricField::constant(g));
            let normal = DVector::from_fn(n, |_, _| rng.gen_range(-1.0_f64..1.0))
                + DVector::from_element(n, 0.5);
            let alpha = if rng.gen_bool(0.3) {
                1.0
            } else {
                rng.gen_range(0.0..1.0)
            };
            let nc = normal.clone();
            let uc = UnilateralConstraint::new(
                "plane",
                move |q: &DVector<f64>| nc.dot(q),
                {
                    let nc = normal.clone();
                    move |_q: &DVector<f64>| nc.clone()
                },
                alpha,
            )
            .unwrap();
            let mut v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0_f64..1.0));
            let approach = normal.dot(&v);
            if approach > -0.1 {
                v -= &normal * (approach + 0.5) / normal.norm_squared();
            }
            let s = State::new(0.0, DVector::zeros(n), v, 0.0);
            let (_, audit) = restitution_jump(&sys, &uc, &s, 1e-12).unwrap();
            assert!(audit.carnot_residual.abs() < 1e-12 * audit.t_minus.max(1.0));
            assert!(audit.t_plus <= audit.t_minus + 1e-12);
            if alpha == 1.0 {
                assert!((audit.t_plus - audit.t_minus).abs() <= 1e-10 * audit.t_minus);
            }
        }
    }

    #[test]
    fn sphere_activation_matches_published_component_form() {
        // vx+ = r^2 vx- / (r^2 + k2) and wy+ = r vx- / (r^2 + k2) for pure slide.
        let r = 1.0;
        let k2 = 0.4;
        let g = DMatrix::from_diagonal(&dvec(&[1.0, 1.0, k2, k2, k2]));
        let sys = MechanicalSystem::free(MetricField::constant_reduced(g, 2));
        let psi =
            DMatrix::from_row_slice(2, 5, &[1.0, 0.0, 0.0, -r, 0.0, 0.0, 1.0, r, 0.0, 0.0]);
        let v = 0.9;
        let s = State::new(0.0, dvec(&[0.0, 0.0]), dvec(&[v, 0.0, 0.0, 0.0, 0.0]), 0.0);
        let (post, _) = activation_jump(&sys, &psi, &s).unwrap();
        assert_relative_eq!(post.v[0], r * r * v / (r * r + k2), max_relative = 1e-14);
        assert_relative_eq!(post.v[3], r * v / (r * r + k2), max_relative = 1e-14);
    }
}
