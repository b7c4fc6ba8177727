//! Smooth-phase vector fields: the free dissipative flow and the bilaterally
//! constrained flow with multiplier elimination.
//!
//! The velocity equation is
//!
//! ```text
//! vdot^i = -Gamma^i_jk v^j v^k - (g^-1 dV/dq)^i - v^i dV/dz + (g^-1 F)^i + (g^-1 psi^T lambda)^i
//! ```
//!
//! with `zdot = L = T - V`. Multipliers come from differentiating the active
//! constraints once in time (index reduction); an optional stabilization gain
//! feeds the constraint residual back (off by default).

use nalgebra::{DMatrix, DVector};

use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::geometry::geodesic_term;
use crate::lagrangian::{MechanicalSystem, State};

/// Ratio of smallest to largest singular value below which the constraint
/// Gram matrix counts as singular.
pub const SINGULAR_MASS_RATIO: f64 = 1e-12;

/// Time derivative of a state, along with the multipliers that produced it.
#[derive(Clone, Debug)]
pub struct Derivative {
    pub qdot: DVector<f64>,
    pub vdot: DVector<f64>,
    pub zdot: f64,
    /// Multipliers aligned with the active row list (empty for free motion).
    pub lambda: DVector<f64>,
}

/// Pad a covector over configuration coordinates with zeros up to velocity
/// dimension (cyclic coordinates carry no force).
pub fn pad_covector(dv: &DVector<f64>, dim: usize) -> DVector<f64> {
    if dv.len() == dim {
        return dv.clone();
    }
    let mut out = DVector::zeros(dim);
    for i in 0..dv.len() {
        out[i] = dv[i];
    }
    out
}

/// Free (unconstrained) equations of motion.
pub fn free_rhs(sys: &MechanicalSystem, state: &State) -> Result<Derivative> {
    let n_q = state.q.len();
    let dim = sys.metric.dim();
    debug_assert_eq!(state.v.len(), dim);
    debug_assert_eq!(sys.metric.pos_dim(), n_q);

    let point = sys.metric.point(&state.q)?;
    let gamma = sys.metric.christoffel_at(&state.q)?;

    let dvq = pad_covector(&sys.potential_dq(&state.q, state.z), dim);
    let dvz = sys.potential_dz(&state.q, state.z);

    let mut vdot = -geodesic_term(&gamma, &state.v) - point.raise(&dvq) - &state.v * dvz;
    if let Some(f) = sys.applied_force(&state.q, &state.v, state.z) {
        vdot += point.raise(&f);
    }

    let qdot = state.v.rows(0, n_q).into_owned();
    let t = 0.5 * point.norm_sq(&state.v);
    let zdot = t - sys.potential(&state.q, state.z);

    Ok(Derivative {
        qdot,
        vdot,
        zdot,
        lambda: DVector::zeros(0),
    })
}

/// Constrained equations of motion for the rows active at `state.q` per the
/// constraint set's own region mask.
pub fn constrained_rhs(
    sys: &MechanicalSystem,
    cs: &ConstraintSet,
    state: &State,
) -> Result<Derivative> {
    let rows = cs.active_rows(&state.q);
    constrained_rhs_rows(sys, cs, &rows, state, 0.0)
}

/// Constrained equations of motion for an explicit active row set. `baumgarte`
/// adds `-kappa * psi v` to the multiplier right-hand side (0 disables it).
pub fn constrained_rhs_rows(
    sys: &MechanicalSystem,
    cs: &ConstraintSet,
    rows: &[usize],
    state: &State,
    baumgarte: f64,
) -> Result<Derivative> {
    let mut free = free_rhs(sys, state)?;
    if rows.is_empty() {
        return Ok(free);
    }

    let point = sys.metric.point(&state.q)?;
    let psi = cs.rows_matrix(&state.q, rows);
    let w = point.raise_mat(&psi.transpose()); // g^-1 psi^T
    let gram = &psi * &w;

    let svd = gram.clone().svd(true, true);
    let smax = svd.singular_values.amax();
    let smin = svd.singular_values.min();
    if smax == 0.0 || smin < SINGULAR_MASS_RATIO * smax {
        return Err(Error::SingularConstraintMass {
            ratio: if smax == 0.0 { 0.0 } else { smin / smax },
        });
    }

    let psi_rate = cs.rate_along(&state.q, &free.qdot, rows);
    let mut rhs = -(&psi_rate * &state.v) - &psi * &free.vdot;
    if baumgarte != 0.0 {
        rhs -= (&psi * &state.v) * baumgarte;
    }
    let lambda = svd
        .solve(&rhs, 0.0)
        .expect("SVD solve on a checked nonsingular Gram matrix");

    free.vdot += &w * &lambda;
    free.lambda = lambda;
    Ok(free)
}

/// Residual of the active constraints on a velocity: `max |psi v|`.
pub fn constraint_residual(cs: &ConstraintSet, rows: &[usize], q: &DVector<f64>, v: &DVector<f64>) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    (cs.rows_matrix(q, rows) * v).amax()
}

/// The constraint Gram matrix `psi g^-1 psi^T` for a row set at `q`.
pub fn gram_matrix(
    sys: &MechanicalSystem,
    cs: &ConstraintSet,
    rows: &[usize],
    q: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let point = sys.metric.point(q)?;
    let psi = cs.rows_matrix(q, rows);
    Ok(&psi * point.raise_mat(&psi.transpose()))
}
