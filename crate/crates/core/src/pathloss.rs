//! Decibel conversions and the bounded analytic path-loss law.
//!
//! Every power sum in the simulator is taken in linear scale; decibels only
//! appear when reading or writing files and at the command line.

use crate::error::{Error, Result};
use crate::num::Real;

/// A power ratio in decibels.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct DbValue<T>(T);

impl<T: Real> DbValue<T> {
    pub fn new(value: T) -> Result<Self> {
        if value.is_finite() {
            Ok(Self(value))
        } else {
            Err(Error::domain(format!("decibel value {value} is not finite")))
        }
    }

    pub fn value(self) -> T {
        self.0
    }
}

/// A dimensionless, nonnegative power ratio.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LinearPower<T>(T);

impl<T: Real> LinearPower<T> {
    pub fn new(value: T) -> Result<Self> {
        if value.is_finite() && value >= T::zero() {
            Ok(Self(value))
        } else {
            Err(Error::domain(format!(
                "linear power {value} must be finite and nonnegative"
            )))
        }
    }

    pub fn value(self) -> T {
        self.0
    }
}

pub fn db_to_linear<T: Real>(v: DbValue<T>) -> LinearPower<T> {
    LinearPower(T::lit(10.0).powf(v.0 / T::lit(10.0)))
}

pub fn linear_to_db<T: Real>(p: LinearPower<T>) -> Result<DbValue<T>> {
    if p.0 <= T::zero() {
        return Err(Error::domain(format!(
            "cannot express nonpositive power {} in decibels",
            p.0
        )));
    }
    Ok(DbValue(T::lit(10.0) * p.0.log10()))
}

/// `min{1, s^-alpha}`; the clamp makes `s = 0` evaluate to 1.
pub fn analytic_pathloss<T: Real>(distance: T, alpha: T) -> Result<LinearPower<T>> {
    if !(alpha > T::zero()) || !alpha.is_finite() {
        return Err(Error::domain(format!(
            "path-loss exponent must be positive, got {alpha}"
        )));
    }
    if !(distance >= T::zero()) {
        return Err(Error::domain(format!(
            "distance must be nonnegative, got {distance}"
        )));
    }
    if distance <= T::one() {
        return Ok(LinearPower(T::one()));
    }
    Ok(LinearPower(distance.powf(-alpha)))
}
