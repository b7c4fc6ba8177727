//! Linear-in-velocity constraint distributions with position-dependent
//! activation (rank-varying generalized distributions), unilateral gap
//! constraints, and rank / regularity classification.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type ConstraintMatrixFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;
pub type RegionFn = dyn Fn(&DVector<f64>) -> Vec<bool> + Send + Sync;
/// Directional derivative of the constraint matrix along a configuration
/// velocity: `(q, qdot) -> d/dt psi(q(t))`.
pub type ConstraintRateFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync;
pub type GapFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;
pub type GapGradFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// A set of linear velocity constraints `psi(q) v = 0` whose rows switch on
/// and off across the chart. The activation mask encodes the domain of a
/// generalized codistribution; constraints never depend on `z` (none are
/// known physically, and the signature forbids it).
pub struct ConstraintSet {
    rows: usize,
    dim: usize,
    psi: Box<ConstraintMatrixFn>,
    region: Box<RegionFn>,
    rank_tol: f64,
    rate: Option<Box<ConstraintRateFn>>,
    fd_step: f64,
}

impl ConstraintSet {
    pub fn new<P, R>(rows: usize, dim: usize, psi: P, region: R) -> Self
    where
        P: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        R: Fn(&DVector<f64>) -> Vec<bool> + Send + Sync + 'static,
    {
        ConstraintSet {
            rows,
            dim,
            psi: Box::new(psi),
            region: Box::new(region),
            rank_tol: DEFAULT_RANK_TOL,
            rate: None,
            fd_step: 1e-6,
        }
    }

    /// No constraints anywhere (free motion).
    pub fn empty(dim: usize) -> Self {
        ConstraintSet::new(0, dim, move |_q| DMatrix::zeros(0, dim), |_q| Vec::new())
    }

    /// Supply the analytic time derivative of `psi` along a configuration
    /// velocity; finite differences are used otherwise.
    pub fn with_rate<F>(mut self, rate: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.rate = Some(Box::new(rate));
        self
    }

    pub fn with_rank_tol(mut self, tol: f64) -> Self {
        self.rank_tol = tol;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// All rows, active or not.
    pub fn matrix_at(&self, q: &DVector<f64>) -> DMatrix<f64> {
        (self.psi)(q)
    }

    pub fn region_at(&self, q: &DVector<f64>) -> Vec<bool> {
        let mask = (self.region)(q);
        debug_assert_eq!(mask.len(), self.rows);
        mask
    }

    /// Indices of rows active at `q`.
    pub fn active_rows(&self, q: &DVector<f64>) -> Vec<usize> {
        self.region_at(q)
            .iter()
            .enumerate()
            .filter_map(|(i, on)| on.then_some(i))
            .collect()
    }

    /// Submatrix of the rows active at `q`, with their original indices.
    pub fn active_matrix(&self, q: &DVector<f64>) -> (DMatrix<f64>, Vec<usize>) {
        let rows = self.active_rows(q);
        (self.rows_matrix(q, &rows), rows)
    }

    /// Submatrix for an explicit row list (the integrator tracks its own
    /// active set).
    pub fn rows_matrix(&self, q: &DVector<f64>, rows: &[usize]) -> DMatrix<f64> {
        if rows.is_empty() {
            return DMatrix::zeros(0, self.dim);
        }
        let full = self.matrix_at(q);
        DMatrix::from_fn(rows.len(), self.dim, |i, j| full[(rows[i], j)])
    }

    /// Number of independent active constraints at `q` (the corank of the
    /// constraint distribution), by singular values above
    /// `rank_tol * sigma_max`.
    pub fn rank_at(&self, q: &DVector<f64>) -> usize {
        let (m, _) = self.active_matrix(q);
        numerical_rank(&m, self.rank_tol)
    }

    /// Dimension of the constraint distribution at `q`: `dim - rank_at(q)`.
    pub fn distribution_dim(&self, q: &DVector<f64>) -> usize {
        self.dim - self.rank_at(q)
    }

    /// Sample 2n axis probes at the given radius; `Regular` iff the rank is
    /// the same at the point and every probe.
    pub fn classify_point(&self, q: &DVector<f64>, probe_radius: f64) -> PointClass {
        assert!(probe_radius > 0.0);
        let here = self.rank_at(q);
        for i in 0..q.len() {
            for sign in [-1.0, 1.0] {
                let mut p = q.clone();
                p[i] += sign * probe_radius;
                if self.rank_at(&p) != here {
                    return PointClass::Singular;
                }
            }
        }
        PointClass::Regular
    }

    /// `d/dt psi(q(t))` along `qdot`: analytic when supplied, else a central
    /// directional finite difference with step `fd_step * max(1, |q|)`.
    pub fn rate_along(&self, q: &DVector<f64>, qdot: &DVector<f64>, rows: &[usize]) -> DMatrix<f64> {
        if rows.is_empty() {
            return DMatrix::zeros(0, self.dim);
        }
        if let Some(rate) = &self.rate {
            let full = rate(q, qdot);
            return DMatrix::from_fn(rows.len(), self.dim, |i, j| full[(rows[i], j)]);
        }
        let speed = qdot.norm();
        if speed == 0.0 {
            return DMatrix::zeros(rows.len(), self.dim);
        }
        let h = self.fd_step * q.amax().max(1.0) / speed;
        let qp = q + qdot * h;
        let qm = q - qdot * h;
        (self.rows_matrix(&qp, rows) - self.rows_matrix(&qm, rows)) / (2.0 * h)
    }
}

fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.amax();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointClass {
    Regular,
    Singular,
}

/// How the number of active constraints changes across a singular crossing.
/// `Case1`: constraints appear (impulse required). `Case2`: constraints are
/// released (momenta stay continuous). `Case3`: the count dips at the
/// crossing and new constraints hold on the far side (impulse required).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RankTransition {
    None,
    Case1,
    Case2,
    Case3,
}

impl RankTransition {
    /// Whether the transition imposes a momentum jump (new constraints
    /// appear on the post side).
    pub fn imposes_impulse(&self) -> bool {
        matches!(self, RankTransition::Case1 | RankTransition::Case3)
    }
}

/// Classify a (before, at, after) triple of active-constraint counts around a
/// singular crossing. A count that spikes only at the crossing itself cannot
/// come from a codistribution spanned by continuous rows and is rejected.
pub fn transition_case(before: usize, at: usize, after: usize) -> Result<RankTransition> {
    if at > before && at > after {
        return Err(Error::InvalidTriple { before, at, after });
    }
    if after > before.min(at) {
        if before <= at {
            Ok(RankTransition::Case1)
        } else {
            Ok(RankTransition::Case3)
        }
    } else if after < before || after < at {
        Ok(RankTransition::Case2)
    } else {
        Ok(RankTransition::None)
    }
}

/// A one-sided constraint `gap(q) >= 0` with Newton restitution at the
/// boundary.
pub struct UnilateralConstraint {
    gap: Box<GapFn>,
    gap_dq: Box<GapGradFn>,
    pub restitution: f64,
    pub label: String,
}

impl UnilateralConstraint {
    pub fn new<G, D>(label: impl Into<String>, gap: G, gap_dq: D, restitution: f64) -> Result<Self>
    where
        G: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        D: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        if !(0.0..=1.0).contains(&restitution) {
            return Err(Error::InvalidParameter(format!(
                "restitution must lie in [0, 1], got {restitution}"
            )));
        }
        Ok(UnilateralConstraint {
            gap: Box::new(gap),
            gap_dq: Box::new(gap_dq),
            restitution,
            label: label.into(),
        })
    }

    pub fn gap_at(&self, q: &DVector<f64>) -> f64 {
        (self.gap)(q)
    }

    /// `d gap / d q` as a covector of length `q.len()`.
    pub fn normal_at(&self, q: &DVector<f64>) -> DVector<f64> {
        (self.gap_dq)(q)
    }

    /// Cross-check the analytic gap gradient against finite differences.
    pub fn validate_gradient(&self, samples: &[DVector<f64>]) -> Result<()> {
        for q in samples {
            let grad = self.normal_at(q);
            for i in 0..q.len() {
                let h = 1e-6 * q[i].abs().max(1.0);
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[i] += h;
                qm[i] -= h;
                let fd = (self.gap_at(&qp) - self.gap_at(&qm)) / (2.0 * h);
                if (grad[i] - fd).abs() > 1e-6 * fd.abs().max(1.0) {
                    return Err(Error::DerivativeMismatch(format!(
                        "gap gradient [{i}] = {} but finite differences give {fd}",
                        grad[i]
                    )));
                }
            }
        }
        Ok(())
    }
}
