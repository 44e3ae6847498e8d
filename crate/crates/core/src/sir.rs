//! Uplink connectivity under the signal-to-total-interference ratio.
//!
//! A user on tile `t` is disconnected when
//! `ell[t] < tau_lambda * sum_k ell(X_k)`, where the sum runs over all users
//! including the one being tested and `tau_lambda = tau / lambda`. Users of one
//! tile share a path-loss value, so the test is all-or-nothing per tile.

use crate::error::{Error, Result};
use crate::num::Real;
use crate::pathloss::{db_to_linear, DbValue, LinearPower};
use crate::sampler::UserSample;
use crate::scenario::Scenario;

/// Density-rescaled threshold: `tau_lambda = tau / lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSpec<T> {
    pub tau_db: T,
    pub lambda: T,
    pub tau_lambda_db: T,
    pub tau_lambda_linear: T,
}

pub fn threshold_lambda<T: Real>(tau_db: T, lambda: T) -> Result<ThresholdSpec<T>> {
    if !(lambda > T::zero()) || !lambda.is_finite() {
        return Err(Error::domain(format!("density must be positive, got {lambda}")));
    }
    let tau_lambda_db = DbValue::new(tau_db - T::lit(10.0) * lambda.log10())?;
    Ok(ThresholdSpec {
        tau_db,
        lambda,
        tau_lambda_db: tau_lambda_db.value(),
        tau_lambda_linear: db_to_linear(tau_lambda_db).value(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellOutcome<T> {
    pub total_users: u64,
    pub disconnected_users: u64,
    /// `disconnected_users / lambda`, an area-scale quantity.
    pub l_value: T,
    pub connected_fraction: T,
    pub replicate_index: u64,
    pub total_received: T,
}

fn check_geometry<T: Real>(counts: &[u32], scenario: &Scenario<T>) -> Result<()> {
    let n = scenario.geometry().n_tiles();
    if counts.len() != n {
        return Err(Error::Geometry(format!("sample has {} tiles, scenario has {n}", counts.len())));
    }
    Ok(())
}

fn received<T: Real>(counts: &[u32], ell: &[T]) -> T {
    counts
        .iter()
        .zip(ell)
        .filter(|(c, _)| **c > 0)
        .fold(T::zero(), |acc, (&c, &l)| acc + T::from_u32(c).unwrap() * l)
}

fn disconnected<T: Real>(counts: &[u32], ell: &[T], cutoff: T) -> u64 {
    counts
        .iter()
        .zip(ell)
        .filter(|(c, l)| **c > 0 && **l < cutoff)
        .map(|(&c, _)| u64::from(c))
        .sum()
}

pub fn total_received<T: Real>(sample: &UserSample<T>, scenario: &Scenario<T>) -> Result<LinearPower<T>> {
    check_geometry(&sample.counts, scenario)?;
    LinearPower::new(received(&sample.counts, scenario.linear_pathloss()))
}

pub fn disconnected_count<T: Real>(
    sample: &UserSample<T>,
    scenario: &Scenario<T>,
    threshold: &ThresholdSpec<T>,
) -> Result<u64> {
    check_geometry(&sample.counts, scenario)?;
    let ell = scenario.linear_pathloss();
    let cutoff = threshold.tau_lambda_linear * received(&sample.counts, ell);
    Ok(disconnected(&sample.counts, ell, cutoff))
}

/// Evaluation on raw tile counts; the hot path of every campaign.
pub fn evaluate_counts<T: Real>(
    counts: &[u32],
    total_users: u64,
    ell: &[T],
    threshold: &ThresholdSpec<T>,
    replicate_index: u64,
) -> CellOutcome<T> {
    let total = received(counts, ell);
    let disconnected_users = disconnected(counts, ell, threshold.tau_lambda_linear * total);
    let connected_fraction = if total_users == 0 {
        T::one()
    } else {
        T::one() - T::from_count(disconnected_users) / T::from_count(total_users)
    };
    CellOutcome {
        total_users,
        disconnected_users,
        l_value: T::from_count(disconnected_users) / threshold.lambda,
        connected_fraction,
        replicate_index,
        total_received: total,
    }
}

pub fn evaluate_outcome<T: Real>(
    sample: &UserSample<T>,
    scenario: &Scenario<T>,
    threshold: &ThresholdSpec<T>,
) -> Result<CellOutcome<T>> {
    check_geometry(&sample.counts, scenario)?;
    Ok(evaluate_counts(
        &sample.counts,
        sample.total_users,
        scenario.linear_pathloss(),
        threshold,
        sample.replicate_index,
    ))
}

/// High-density limit of `L_lambda[SIR]`: the intensity mass of tiles with
/// `ell[t] < tau * sum_t ell[t] mu_d(t)`.
pub fn limit_disconnected_mass<T: Real>(scenario: &Scenario<T>, tau_linear: T) -> T {
    let ell = scenario.linear_pathloss();
    let mass = &scenario.intensity.mass_per_tile;
    let mean_field: T = ell.iter().zip(mass).map(|(&l, &m)| l * m).sum();
    let cutoff = tau_linear * mean_field;
    ell.iter()
        .zip(mass)
        .filter(|(l, m)| **m > T::zero() && **l < cutoff)
        .map(|(_, &m)| m)
        .sum()
}
