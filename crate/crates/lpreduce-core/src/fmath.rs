//! Scalar math routed so the crate builds both with and without `std`.
//!
//! `core` provides no transcendental functions for `f64`; with `std` disabled
//! these fall back to `libm`. Keep every transcendental call in the crate
//! going through this module.

#![allow(dead_code)]

macro_rules! forward_unary {
    ($($name:ident),* $(,)?) => {
        $(
            #[cfg(feature = "std")]
            #[inline]
            pub(crate) fn $name(x: f64) -> f64 { f64::$name(x) }

            #[cfg(not(feature = "std"))]
            #[inline]
            pub(crate) fn $name(x: f64) -> f64 { libm::$name(x) }
        )*
    };
}

forward_unary!(sqrt, sin, cos, floor, exp);

#[cfg(feature = "std")]
#[inline]
pub(crate) fn abs(x: f64) -> f64 {
    f64::abs(x)
}

#[cfg(not(feature = "std"))]
#[inline]
pub(crate) fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[cfg(feature = "std")]
#[inline]
pub(crate) fn atan2(y: f64, x: f64) -> f64 {
    f64::atan2(y, x)
}

#[cfg(not(feature = "std"))]
#[inline]
pub(crate) fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}

/// Wrap an angle to the half-open interval `(-pi, pi]`.
pub(crate) fn wrap_angle(x: f64) -> f64 {
    use core::f64::consts::{PI, TAU};
    if x > -PI && x <= PI {
        return x;
    }
    let wrapped = x - TAU * floor((x + PI) / TAU);
    // `floor` puts us in [-pi, pi); fold the lower boundary onto +pi.
    if wrapped <= -PI {
        wrapped + TAU
    } else {
        wrapped
    }
}
