//! Riemannian metric evaluation on a single configuration chart: metric
//! matrices, Christoffel symbols of the Levi-Civita connection, gradients and
//! inner products.
//!
//! Velocity space may be larger than configuration space when a scenario uses
//! quasi-velocities (body rates whose coordinates are cyclic and dropped); the
//! metric is then an `n x n` matrix over velocity components that depends only
//! on the retained `pos_dim` configuration coordinates.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub type MetricFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;
pub type ChristoffelFn = dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync;

/// Default relative step for metric finite differences.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// A positive-definite metric field `q -> g(q)` on the chart.
pub struct MetricField {
    dim: usize,
    pos_dim: usize,
    eval: Box<MetricFn>,
    analytic_christoffel: Option<Box<ChristoffelFn>>,
    fd_step: f64,
}

/// The metric factored at one point; reused for every solve within a
/// right-hand-side evaluation.
pub struct MetricPoint {
    g: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl MetricPoint {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// Solve `g x = b` (index raising) through the Cholesky factor.
    pub fn raise(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// Solve `g X = B` column-wise.
    pub fn raise_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// Lower an index: `v -> g v`.
    pub fn lower(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.g * v
    }

    /// Inner product `g(u, w)`.
    pub fn inner(&self, u: &DVector<f64>, w: &DVector<f64>) -> f64 {
        (u.transpose() * &self.g * w)[(0, 0)]
    }

    /// Squared norm `g(u, u)`.
    pub fn norm_sq(&self, u: &DVector<f64>) -> f64 {
        self.inner(u, u)
    }
}

impl MetricField {
    /// A metric given by an evaluation closure over `pos_dim`-dimensional
    /// configuration points, producing `dim x dim` symmetric matrices.
    pub fn new<F>(dim: usize, pos_dim: usize, eval: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        MetricField {
            dim,
            pos_dim,
            eval: Box::new(eval),
            analytic_christoffel: None,
            fd_step: DEFAULT_FD_STEP,
        }
    }

    /// A constant metric. Christoffel symbols are identically zero.
    pub fn constant(g: DMatrix<f64>) -> Self {
        let dim = g.nrows();
        assert_eq!(g.nrows(), g.ncols(), "metric matrix must be square");
        let zeros = vec![DMatrix::zeros(dim, dim); dim];
        MetricField::new(dim, dim, move |_q| g.clone())
            .with_christoffel(move |_q| zeros.clone())
    }

    /// Same as [`MetricField::constant`] but over a reduced configuration
    /// space (quasi-velocity systems).
    pub fn constant_reduced(g: DMatrix<f64>, pos_dim: usize) -> Self {
        let dim = g.nrows();
        let zeros = vec![DMatrix::zeros(dim, dim); dim];
        MetricField::new(dim, pos_dim, move |_q| g.clone())
            .with_christoffel(move |_q| zeros.clone())
    }

    pub fn with_christoffel<F>(mut self, gamma: F) -> Self
    where
        F: Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    {
        self.analytic_christoffel = Some(Box::new(gamma));
        self
    }

    pub fn with_fd_step(mut self, fd_step: f64) -> Self {
        assert!(fd_step > 0.0, "fd_step must be positive");
        self.fd_step = fd_step;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pos_dim(&self) -> usize {
        self.pos_dim
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    /// The metric matrix at `q`, checked for positive definiteness.
    pub fn metric_at(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.point(q)?.g)
    }

    /// Evaluate and factor the metric at `q`.
    pub fn point(&self, q: &DVector<f64>) -> Result<MetricPoint> {
        let g = (self.eval)(q);
        debug_assert_eq!(g.nrows(), self.dim);
        debug_assert_eq!(g.ncols(), self.dim);
        let chol = g
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NonPositiveDefinite {
                q: q.iter().copied().collect(),
            })?;
        Ok(MetricPoint { g, chol })
    }

    /// Christoffel symbols `Gamma^i_{jk}`, returned as one `dim x dim` matrix
    /// over `(j, k)` per upper index `i`. Uses the analytic supplier when
    /// present, otherwise central finite differences of the metric with step
    /// `fd_step * max(1, |q_j|)` per coordinate, symmetrized in `(j, k)`.
    pub fn christoffel_at(&self, q: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        if let Some(gamma) = &self.analytic_christoffel {
            return Ok(gamma(q));
        }
        let n = self.dim;
        let point = self.point(q)?;

        // dg[l] = d g / d q_l; zero for cyclic (dropped) coordinates.
        let mut dg = vec![DMatrix::zeros(n, n); n];
        for l in 0..self.pos_dim {
            let h = self.fd_step * q[l].abs().max(1.0);
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[l] += h;
            qm[l] -= h;
            let gp = (self.eval)(&qp);
            let gm = (self.eval)(&qm);
            dg[l] = (gp - gm) / (2.0 * h);
        }

        let mut gamma = vec![DMatrix::zeros(n, n); n];
        for j in 0..n {
            for k in j..n {
                let mut rhs = DVector::zeros(n);
                for l in 0..n {
                    rhs[l] = 0.5 * (dg[j][(l, k)] + dg[k][(l, j)] - dg[l][(j, k)]);
                }
                let col = point.raise(&rhs);
                for i in 0..n {
                    gamma[i][(j, k)] = col[i];
                    gamma[i][(k, j)] = col[i];
                }
            }
        }
        Ok(gamma)
    }

    /// The gradient `g^{-1} dV` of a scalar with differential `dv` at `q`,
    /// solved through the Cholesky factor.
    pub fn gradient(&self, dv: &DVector<f64>, q: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.point(q)?.raise(dv))
    }

    /// Inner product of two velocity vectors at `q`.
    pub fn inner(&self, q: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<f64> {
        Ok(self.point(q)?.inner(u, w))
    }
}

/// Contraction `(Gamma v v)^i = Gamma^i_{jk} v^j v^k`.
pub fn geodesic_term(gamma: &[DMatrix<f64>], v: &DVector<f64>) -> DVector<f64> {
    let n = gamma.len();
    let mut out = DVector::zeros(n);
    for i in 0..n {
        out[i] = (v.transpose() * &gamma[i] * v)[(0, 0)];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn polar_metric() -> MetricField {
        MetricField::new(2, 2, |q| {
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, q[0] * q[0]]))
        })
    }

    #[test]
    fn identity_metric_is_identity() {
        let m = MetricField::constant(DMatrix::identity(3, 3));
        let g = m.metric_at(&DVector::from_vec(vec![0.3, -1.0, 2.0])).unwrap();
        assert_eq!(g, DMatrix::identity(3, 3));
    }

    #[test]
    fn polar_metric_at_r2() {
        let m = polar_metric();
        let g = m.metric_at(&DVector::from_vec(vec![2.0, 0.0])).unwrap();
        assert_eq!(g[(0, 0)], 1.0);
        assert_eq!(g[(1, 1)], 4.0);
    }

    #[test]
    fn sphere_metric_block() {
        let k2 = 0.4;
        let g = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, k2, k2, k2]));
        let m = MetricField::constant_reduced(g.clone(), 2);
        let got = m.metric_at(&DVector::from_vec(vec![-1.0, 0.0])).unwrap();
        assert_eq!(got, g);
    }

    #[test]
    fn non_positive_definite_is_an_error() {
        let m = MetricField::constant(DMatrix::from_diagonal(&DVector::from_vec(vec![
            1.0, -1.0,
        ])));
        match m.metric_at(&DVector::zeros(2)) {
            Err(Error::NonPositiveDefinite { .. }) => {}
            other => panic!("expected NonPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn constant_metric_has_zero_christoffel() {
        let m = MetricField::new(2, 2, |_q| {
            DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))
        });
        let gamma = m.christoffel_at(&DVector::from_vec(vec![0.7, -0.4])).unwrap();
        for mat in &gamma {
            assert!(mat.amax() == 0.0, "finite differences of a constant vanish exactly");
        }
    }

    #[test]
    fn polar_christoffel_matches_hand_derivation() {
        // For g = diag(1, r^2): Gamma^r_{phi phi} = -r, Gamma^phi_{r phi} = 1/r.
        let m = polar_metric();
        let q = DVector::from_vec(vec![2.0, 0.5]);
        let gamma = m.christoffel_at(&q).unwrap();
        assert_relative_eq!(gamma[0][(1, 1)], -2.0, max_relative = 1e-8);
        assert_relative_eq!(gamma[1][(0, 1)], 0.5, max_relative = 1e-8);
        assert_relative_eq!(gamma[1][(1, 0)], 0.5, max_relative = 1e-8);
        assert!(gamma[0][(0, 0)].abs() < 1e-8);
        assert!(gamma[0][(0, 1)].abs() < 1e-8);
        assert!(gamma[1][(1, 1)].abs() < 1e-8);
    }

    #[test]
    fn finite_difference_matches_analytic_polar() {
        let analytic = polar_metric().with_christoffel(|q| {
            let r = q[0];
            let mut g0 = DMatrix::zeros(2, 2);
            let mut g1 = DMatrix::zeros(2, 2);
            g0[(1, 1)] = -r;
            g1[(0, 1)] = 1.0 / r;
            g1[(1, 0)] = 1.0 / r;
            vec![g0, g1]
        });
        let fd = polar_metric();
        let q = DVector::from_vec(vec![1.7, -0.3]);
        let ga = analytic.christoffel_at(&q).unwrap();
        let gf = fd.christoffel_at(&q).unwrap();
        for i in 0..2 {
            assert!((&ga[i] - &gf[i]).amax() < 1e-8);
        }
    }

    #[test]
    fn christoffel_is_symmetric_in_lower_indices() {
        let m = MetricField::new(3, 3, |q| {
            let mut g = DMatrix::identity(3, 3);
            g[(0, 0)] = 1.0 + q[1] * q[1];
            g[(1, 1)] = 2.0 + (q[0] * q[2]).sin().powi(2);
            g[(2, 2)] = 1.5 + q[0] * q[0];
            g[(0, 1)] = 0.1 * q[2];
            g[(1, 0)] = 0.1 * q[2];
            g
        });
        let gamma = m
            .christoffel_at(&DVector::from_vec(vec![0.4, -1.2, 0.9]))
            .unwrap();
        for mat in &gamma {
            assert_eq!((mat - mat.transpose()).amax(), 0.0);
        }
    }

    #[test]
    fn gradient_examples() {
        let id = MetricField::constant(DMatrix::identity(2, 2));
        let q = DVector::zeros(2);
        let g = id.gradient(&DVector::from_vec(vec![3.0, -1.0]), &q).unwrap();
        assert_eq!(g, DVector::from_vec(vec![3.0, -1.0]));

        let diag = MetricField::constant(DMatrix::from_diagonal(&DVector::from_vec(vec![
            2.0, 8.0,
        ])));
        let g = diag.gradient(&DVector::from_vec(vec![2.0, 8.0]), &q).unwrap();
        assert_relative_eq!(g[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(g[1], 1.0, max_relative = 1e-14);

        let g = diag.gradient(&DVector::zeros(2), &q).unwrap();
        assert_eq!(g, DVector::zeros(2));
    }

    #[test]
    fn gradient_duality_on_random_spd_metrics() {
        // g(grad dV, u) = dV(u) for random SPD metrics.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let n = rng.gen_range(2..=6);
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let g = &a * a.transpose() + DMatrix::identity(n, n) * (n as f64);
            let m = MetricField::constant(g.clone());
            let q = DVector::zeros(n);
            let dv = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
            let u = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
            let grad = m.gradient(&dv, &q).unwrap();
            let lhs = m.inner(&q, &grad, &u).unwrap();
            let rhs = dv.dot(&u);
            assert!(
                (lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0),
                "duality violated: {lhs} vs {rhs}"
            );
        }
    }
}
