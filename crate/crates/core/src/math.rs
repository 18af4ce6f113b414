//! Float functions that work without `std`.

pub(crate) use libm::{cos, exp, fabs as abs, log, sin, sqrt};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;
