//! Embedded Dormand-Prince 5(4) stepper with fourth-order dense output.
//!
//! The simulator drives this one accepted step at a time so it can scan each
//! step's interpolant for event crossings before committing further.

use nalgebra::DVector;

use crate::error::{Error, Result};

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step with its continuous extension over `[t0, t0 + h]`.
#[derive(Clone, Debug)]
pub struct DenseStep {
    pub t0: f64,
    pub h: f64,
    cont: [DVector<f64>; 5],
}

impl DenseStep {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn contains(&self, t: f64) -> bool {
        let (lo, hi) = if self.h >= 0.0 {
            (self.t0, self.t1())
        } else {
            (self.t1(), self.t0)
        };
        t >= lo - 1e-12 * hi.abs().max(1.0) && t <= hi + 1e-12 * hi.abs().max(1.0)
    }

    /// Evaluate the interpolant at `t` inside the step.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        let theta = (t - self.t0) / self.h;
        let theta1 = 1.0 - theta;
        let [c0, c1, c2, c3, c4] = &self.cont;
        c0 + (c1 + (c2 + (c3 + c4 * theta1) * theta) * theta1) * theta
    }

    /// State at the right end of the step (exact, not interpolated).
    pub fn y1(&self) -> DVector<f64> {
        &self.cont[0] + &self.cont[1]
    }

    pub fn y0(&self) -> DVector<f64> {
        self.cont[0].clone()
    }
}

/// Step-size control settings for the embedded pair.
#[derive(Clone, Copy, Debug)]
pub struct StepControl {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub safety: f64,
    pub min_factor: f64,
    pub max_factor: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            max_step: f64::INFINITY,
            safety: 0.9,
            min_factor: 0.2,
            max_factor: 5.0,
        }
    }
}

/// Marching state: current `(t, y)` plus the FSAL derivative and step-size
/// memory.
pub struct Stepper {
    pub t: f64,
    pub y: DVector<f64>,
    k1: Option<DVector<f64>>,
    h: f64,
    control: StepControl,
}

impl Stepper {
    pub fn new(t0: f64, y0: DVector<f64>, control: StepControl) -> Self {
        Stepper {
            t: t0,
            y: y0,
            k1: None,
            h: 0.0,
            control,
        }
    }

    /// Discard the FSAL cache (after the state was changed by a jump).
    pub fn reset(&mut self, t: f64, y: DVector<f64>) {
        self.t = t;
        self.y = y;
        self.k1 = None;
    }

    fn initial_step<F>(&self, rhs: &mut F, f0: &DVector<f64>) -> Result<f64>
    where
        F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
    {
        // Hairer-style starting step guess, clipped to max_step.
        let sc = |y: &DVector<f64>| -> DVector<f64> {
            DVector::from_fn(y.len(), |i, _| {
                self.control.abs_tol + self.control.rel_tol * y[i].abs()
            })
        };
        let s = sc(&self.y);
        let d0 = (self.y.component_div(&s)).norm() / (self.y.len() as f64).sqrt();
        let d1 = (f0.component_div(&s)).norm() / (self.y.len() as f64).sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let y1 = &self.y + f0 * h0;
        let f1 = rhs(self.t + h0, &y1)?;
        let d2 = ((f1 - f0).component_div(&s)).norm() / (self.y.len() as f64).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        Ok((100.0 * h0).min(h1).min(self.control.max_step))
    }

    /// Advance one accepted step toward `t_end` (never past it). Returns the
    /// dense step; the stepper's `(t, y)` move to the step's right end.
    pub fn advance<F>(&mut self, rhs: &mut F, t_end: f64) -> Result<DenseStep>
    where
        F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
    {
        let k1 = match self.k1.take() {
            Some(k) => k,
            None => rhs(self.t, &self.y)?,
        };
        if self.h == 0.0 {
            self.h = self.initial_step(rhs, &k1)?;
        }
        let mut h = self.h.min(self.control.max_step);
        let mut rejected = false;

        loop {
            let remaining = t_end - self.t;
            if h > remaining {
                h = remaining;
            }
            if h < 1e-14 * self.t.abs().max(1.0) {
                return Err(Error::StepSizeUnderflow { t: self.t, h });
            }

            let t = self.t;
            let y = &self.y;
            let k2 = rhs(t + C2 * h, &(y + &k1 * (A21 * h)))?;
            let k3 = rhs(t + C3 * h, &(y + (&k1 * A31 + &k2 * A32) * h))?;
            let k4 = rhs(t + C4 * h, &(y + (&k1 * A41 + &k2 * A42 + &k3 * A43) * h))?;
            let k5 = rhs(
                t + C5 * h,
                &(y + (&k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h),
            )?;
            let k6 = rhs(
                t + h,
                &(y + (&k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h),
            )?;
            let y1 = y + (&k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * h;
            let k7 = rhs(t + h, &y1)?;

            let err_vec = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
            let mut err = 0.0;
            for i in 0..y.len() {
                let sc = self.control.abs_tol
                    + self.control.rel_tol * y[i].abs().max(y1[i].abs());
                let e = err_vec[i] / sc;
                err += e * e;
            }
            err = (err / y.len() as f64).sqrt();

            if err <= 1.0 {
                let ydiff = &y1 - y;
                let bspl = &k1 * h - &ydiff;
                let cont = [
                    y.clone(),
                    ydiff.clone(),
                    bspl.clone(),
                    -(&k7 * h) + &ydiff - &bspl,
                    (&k1 * D1 + &k3 * D3 + &k4 * D4 + &k5 * D5 + &k6 * D6 + &k7 * D7) * h,
                ];
                let step = DenseStep { t0: t, h, cont };

                let factor = if err == 0.0 {
                    self.control.max_factor
                } else {
                    (self.control.safety * err.powf(-0.2))
                        .clamp(self.control.min_factor, self.control.max_factor)
                };
                let factor = if rejected { factor.min(1.0) } else { factor };
                self.h = (h * factor).min(self.control.max_step);
                self.t = t + h;
                self.y = y1;
                self.k1 = Some(k7);
                return Ok(step);
            }

            rejected = true;
            let factor = (self.control.safety * err.powf(-0.2)).clamp(self.control.min_factor, 1.0);
            h *= factor;
        }
    }
}
