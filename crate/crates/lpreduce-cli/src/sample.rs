//! Seeded sampling of regular configurations and initial states.
//!
//! Regularity (a nondegenerate orbit through the sampled point) is enforced
//! structurally where a pattern guarantees it and by rejection otherwise: a
//! draw the adapted-chart solver rejects is discarded and redrawn.

use lpreduce_core::dynamics::{ReducedDynamics, ReducedState};
use lpreduce_core::system::SystemDef;
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::Failure;

const MAX_TRIES: usize = 64;

/// A random configuration on the gauge slice, away from degenerate strata.
///
/// Supports the two registered mechanical geometries: a planar configuration
/// sector (one rotating vector) and a six-dimensional one (two vectors with a
/// shared rotation).
pub fn slice_point(sys: &SystemDef, rng: &mut ChaCha8Rng) -> (DVector<f64>, DVector<f64>) {
    let q = match sys.dim_q() {
        2 => DVector::from_vec(vec![rng.gen_range(0.6..1.8), 0.0]),
        6 => DVector::from_vec(vec![
            rng.gen_range(0.6..1.6),
            0.0,
            0.0,
            rng.gen_range(-1.0..1.0),
            rng.gen_range(0.6..1.5),
            0.0,
        ]),
        n => panic!("no slice pattern for a {n}-dimensional configuration sector"),
    };
    let f = DVector::from_fn(sys.dim_v(), |_, _| rng.gen_range(-0.9..0.9));
    (q, f)
}

/// A random regular ambient configuration (off the slice) for chart tests.
pub fn ambient_point(sys: &SystemDef, rng: &mut ChaCha8Rng) -> (DVector<f64>, DVector<f64>) {
    let q = match sys.dim_q() {
        2 => {
            let r: f64 = rng.gen_range(0.6..1.8);
            let th: f64 = rng.gen_range(-3.0..3.0);
            DVector::from_vec(vec![r * th.cos(), r * th.sin()])
        }
        6 => loop {
            let v = DVector::from_fn(6, |_, _| rng.gen_range(-1.5..1.5));
            let a = v.rows(0, 3).norm();
            let b = v.rows(3, 3).norm();
            let cross = {
                let (x, y) = (v.rows(0, 3), v.rows(3, 3));
                DVector::from_vec(vec![
                    x[1] * y[2] - x[2] * y[1],
                    x[2] * y[0] - x[0] * y[2],
                    x[0] * y[1] - x[1] * y[0],
                ])
                .norm()
            };
            // Keep both vectors away from zero and from collinearity, where
            // the orbit degenerates and the chart loses rank.
            if a > 0.5 && b > 0.5 && cross > 0.2 * a * b {
                break v;
            }
        },
        n => panic!("no ambient pattern for a {n}-dimensional configuration sector"),
    };
    let f = DVector::from_fn(sys.dim_v(), |_, _| rng.gen_range(-0.9..0.9));
    (q, f)
}

/// A random reduced initial state, built by drawing an ambient state and
/// pushing it through the chart.
pub fn initial_state(
    dynamics: &ReducedDynamics<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<ReducedState, Failure> {
    let sys = dynamics.system();
    for _ in 0..MAX_TRIES {
        let (q, f) = ambient_point(sys, rng);
        let qdot = DVector::from_fn(sys.dim_q(), |_, _| rng.gen_range(-0.8..0.8));
        let fdot = DVector::from_fn(sys.dim_v(), |_, _| rng.gen_range(-0.8..0.8));
        if let Ok(st) = dynamics.from_ambient(&q, &f, &qdot, &fdot, None) {
            return Ok(st);
        }
    }
    Err(Failure::Numeric(format!(
        "could not draw a regular initial state for `{}` in {MAX_TRIES} tries",
        sys.name()
    )))
}
