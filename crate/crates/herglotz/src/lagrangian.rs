//! Mechanical systems `L = T - V(q, z)` with an action variable `z`, their
//! energy, momentum and dissipation rate.
//!
//! The potential may depend on `z`; its `z`-derivative is the dissipation
//! rate that drives exponential energy evolution along the flow. Systems may
//! additionally carry a generalized applied force covector `F(q, v, z)` added
//! to `dp/dt` (velocity-linear drag in a fixed chart is the typical use).

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::geometry::MetricField;

pub type PotentialFn = dyn Fn(&DVector<f64>, f64) -> f64 + Send + Sync;
pub type PotentialGradFn = dyn Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync;
pub type PotentialZFn = dyn Fn(&DVector<f64>, f64) -> f64 + Send + Sync;
pub type AppliedForceFn = dyn Fn(&DVector<f64>, &DVector<f64>, f64) -> DVector<f64> + Send + Sync;

/// A point of the extended phase space: configuration `q`, velocity `v`
/// (possibly quasi-velocities, so `v.len() >= q.len()`), action variable `z`
/// and time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub t: f64,
    pub q: DVector<f64>,
    pub v: DVector<f64>,
    pub z: f64,
}

impl State {
    pub fn new(t: f64, q: DVector<f64>, v: DVector<f64>, z: f64) -> Self {
        State { t, q, v, z }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.z.is_finite()
            && self.q.iter().all(|x| x.is_finite())
            && self.v.iter().all(|x| x.is_finite())
    }
}

/// A mechanical system on the chart: kinetic metric plus potential
/// `V(q, z)` with user-supplied analytic derivatives.
pub struct MechanicalSystem {
    pub metric: MetricField,
    potential: Box<PotentialFn>,
    potential_dq: Box<PotentialGradFn>,
    potential_dz: Box<PotentialZFn>,
    applied_force: Option<Box<AppliedForceFn>>,
}

impl MechanicalSystem {
    pub fn new<V, Dq, Dz>(metric: MetricField, potential: V, potential_dq: Dq, potential_dz: Dz) -> Self
    where
        V: Fn(&DVector<f64>, f64) -> f64 + Send + Sync + 'static,
        Dq: Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static,
        Dz: Fn(&DVector<f64>, f64) -> f64 + Send + Sync + 'static,
    {
        MechanicalSystem {
            metric,
            potential: Box::new(potential),
            potential_dq: Box::new(potential_dq),
            potential_dz: Box::new(potential_dz),
            applied_force: None,
        }
    }

    /// A free system (`V = 0`).
    pub fn free(metric: MetricField) -> Self {
        let pos_dim = metric.pos_dim();
        MechanicalSystem::new(
            metric,
            |_q, _z| 0.0,
            move |_q, _z| DVector::zeros(pos_dim),
            |_q, _z| 0.0,
        )
    }

    /// Attach a generalized applied-force covector added to `dp/dt`.
    pub fn with_applied_force<F>(mut self, force: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static,
    {
        self.applied_force = Some(Box::new(force));
        self
    }

    pub fn potential(&self, q: &DVector<f64>, z: f64) -> f64 {
        (self.potential)(q, z)
    }

    /// `dV/dq` as a covector of length `pos_dim`.
    pub fn potential_dq(&self, q: &DVector<f64>, z: f64) -> DVector<f64> {
        (self.potential_dq)(q, z)
    }

    pub fn potential_dz(&self, q: &DVector<f64>, z: f64) -> f64 {
        (self.potential_dz)(q, z)
    }

    pub fn applied_force(&self, q: &DVector<f64>, v: &DVector<f64>, z: f64) -> Option<DVector<f64>> {
        self.applied_force.as_ref().map(|f| f(q, v, z))
    }

    pub fn has_applied_force(&self) -> bool {
        self.applied_force.is_some()
    }

    /// Kinetic energy `T = (1/2) v^T g(q) v`.
    pub fn kinetic_energy(&self, state: &State) -> Result<f64> {
        Ok(0.5 * self.metric.point(&state.q)?.norm_sq(&state.v))
    }

    /// Total energy `E = T + V(q, z)`.
    pub fn energy(&self, state: &State) -> Result<f64> {
        Ok(self.kinetic_energy(state)? + self.potential(&state.q, state.z))
    }

    /// Conjugate momentum covector `p = g(q) v`.
    pub fn momentum(&self, state: &State) -> Result<DVector<f64>> {
        Ok(self.metric.point(&state.q)?.lower(&state.v))
    }

    /// Lagrangian value `L = T - V`; this is also the rate `dz/dt` along the
    /// flow.
    pub fn lagrangian(&self, state: &State) -> Result<f64> {
        Ok(self.kinetic_energy(state)? - self.potential(&state.q, state.z))
    }

    /// Dissipation rate `dV/dz(q, z)`: the factor in the exponential energy
    /// law `E(t) = exp(-int dV/dz) E_0` for systems without applied forces.
    pub fn dissipation_rate(&self, state: &State) -> f64 {
        self.potential_dz(&state.q, state.z)
    }

    /// Cross-check the supplied analytic potential derivatives against
    /// central finite differences at the given sample points.
    pub fn validate_gradients(&self, samples: &[(DVector<f64>, f64)]) -> Result<()> {
        let h = 1e-6;
        for (q, z) in samples {
            let dq = self.potential_dq(q, *z);
            for i in 0..q.len() {
                let step = h * q[i].abs().max(1.0);
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[i] += step;
                qm[i] -= step;
                let fd = (self.potential(&qp, *z) - self.potential(&qm, *z)) / (2.0 * step);
                if (dq[i] - fd).abs() > 1e-6 * fd.abs().max(1.0) {
                    return Err(Error::DerivativeMismatch(format!(
                        "dV/dq[{i}] = {} but finite differences give {fd} at q = {:?}",
                        dq[i], q
                    )));
                }
            }
            let step = h * z.abs().max(1.0);
            let fd = (self.potential(q, z + step) - self.potential(q, z - step)) / (2.0 * step);
            let dz = self.potential_dz(q, *z);
            if (dz - fd).abs() > 1e-6 * fd.abs().max(1.0) {
                return Err(Error::DerivativeMismatch(format!(
                    "dV/dz = {dz} but finite differences give {fd} at q = {q:?}"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn dvec(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn kinetic_energy_examples() {
        let sys = MechanicalSystem::free(MetricField::constant(DMatrix::identity(2, 2)));
        let zero = State::new(0.0, dvec(&[0.0, 0.0]), dvec(&[0.0, 0.0]), 0.0);
        assert_eq!(sys.kinetic_energy(&zero).unwrap(), 0.0);

        let s = State::new(0.0, dvec(&[0.0, 0.0]), dvec(&[3.0, 4.0]), 0.0);
        assert_eq!(sys.kinetic_energy(&s).unwrap(), 12.5);

        // Sphere-type metric diag(1,1,k2,k2,k2) with v = (1, 0, 0, 1, 0).
        let k2 = 0.4;
        let g = DMatrix::from_diagonal(&dvec(&[1.0, 1.0, k2, k2, k2]));
        let sphere = MechanicalSystem::free(MetricField::constant_reduced(g, 2));
        let s = State::new(0.0, dvec(&[-1.0, 0.0]), dvec(&[1.0, 0.0, 0.0, 1.0, 0.0]), 0.0);
        assert_relative_eq!(sphere.kinetic_energy(&s).unwrap(), 0.7, max_relative = 1e-15);
    }

    #[test]
    fn energy_includes_z_term() {
        // V = V_mech - beta z with V_mech = 2, beta = 0.5, z = 4, T = 1.
        let beta = 0.5;
        let sys = MechanicalSystem::new(
            MetricField::constant(DMatrix::identity(1, 1)),
            move |_q, z| 2.0 - beta * z,
            |_q, _z| DVector::zeros(1),
            move |_q, _z| -beta,
        );
        let s = State::new(0.0, dvec(&[0.0]), dvec(&[2.0_f64.sqrt()]), 4.0);
        assert_relative_eq!(sys.energy(&s).unwrap(), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn free_particle_energy() {
        let sys = MechanicalSystem::free(MetricField::constant(DMatrix::identity(2, 2)));
        let s = State::new(0.0, dvec(&[0.0, 0.0]), dvec(&[1.0, 0.0]), 0.0);
        assert_eq!(sys.energy(&s).unwrap(), 0.5);
    }

    #[test]
    fn momentum_examples() {
        let id = MechanicalSystem::free(MetricField::constant(DMatrix::identity(2, 2)));
        let s = State::new(0.0, dvec(&[0.0, 0.0]), dvec(&[1.5, -2.0]), 0.0);
        assert_eq!(id.momentum(&s).unwrap(), dvec(&[1.5, -2.0]));

        let k2 = 0.4;
        let g = DMatrix::from_diagonal(&dvec(&[1.0, 1.0, k2, k2, k2]));
        let sphere = MechanicalSystem::free(MetricField::constant_reduced(g, 2));
        let s = State::new(
            0.0,
            dvec(&[-1.0, 0.0]),
            dvec(&[2.0, 3.0, 1.0, -1.0, 0.5]),
            0.0,
        );
        let p = sphere.momentum(&s).unwrap();
        assert_eq!(p, dvec(&[2.0, 3.0, 0.4, -0.4, 0.2]));

        let diag = MechanicalSystem::free(MetricField::constant(DMatrix::from_diagonal(&dvec(
            &[2.0, 3.0],
        ))));
        let s = State::new(0.0, dvec(&[0.0, 0.0]), dvec(&[1.0, 1.0]), 0.0);
        assert_eq!(diag.momentum(&s).unwrap(), dvec(&[2.0, 3.0]));
    }

    #[test]
    fn dissipation_rate_examples() {
        let conservative = MechanicalSystem::new(
            MetricField::constant(DMatrix::identity(1, 1)),
            |q, _z| 0.5 * q[0] * q[0],
            |q, _z| dvec(&[q[0]]),
            |_q, _z| 0.0,
        );
        let s = State::new(0.0, dvec(&[1.0]), dvec(&[0.0]), 3.0);
        assert_eq!(conservative.dissipation_rate(&s), 0.0);

        let beta = 0.5;
        let contact = MechanicalSystem::new(
            MetricField::constant(DMatrix::identity(1, 1)),
            move |_q, z| -beta * z,
            |_q, _z| DVector::zeros(1),
            move |_q, _z| -beta,
        );
        assert_eq!(contact.dissipation_rate(&s), -beta);

        let squared = MechanicalSystem::new(
            MetricField::constant(DMatrix::identity(1, 1)),
            |_q, z| z * z,
            |_q, _z| DVector::zeros(1),
            |_q, z| 2.0 * z,
        );
        assert_eq!(squared.dissipation_rate(&s), 6.0);
    }

    #[test]
    fn gradient_validation_catches_mismatch() {
        let bad = MechanicalSystem::new(
            MetricField::constant(DMatrix::identity(1, 1)),
            |q, _z| q[0] * q[0],
            |q, _z| dvec(&[q[0]]), // should be 2 q
            |_q, _z| 0.0,
        );
        let samples = vec![(dvec(&[0.7]), 0.0)];
        assert!(bad.validate_gradients(&samples).is_err());

        let good = MechanicalSystem::new(
            MetricField::constant(DMatrix::identity(1, 1)),
            |q, z| q[0] * q[0] - 0.3 * z,
            |q, _z| dvec(&[2.0 * q[0]]),
            |_q, _z| -0.3,
        );
        good.validate_gradients(&samples).unwrap();
    }
}
