//! Built-in models with closed-form reference solutions for validation: a
//! sphere rolling onto a rough half-plane and a cylinder dropping onto a
//! sprung platform.

pub mod cylinder;
pub mod sphere;

pub use cylinder::{build_cylinder, CylinderParams};
pub use sphere::{build_sphere, SphereParams};

/// `(1 - exp(-a t)) / a`, stable as `a -> 0`.
pub(crate) fn exp_decay_ramp(a: f64, t: f64) -> f64 {
    if a == 0.0 {
        t
    } else {
        -f64::exp_m1(-a * t) / a
    }
}
