//! Rare-event simulation of uplink connectivity in a single cell.
//!
//! Users form an inhomogeneous Poisson process over a building-masked
//! path-loss grid. A user is disconnected when its received power falls below
//! `tau / lambda` times the total received power of all users. Campaigns
//! estimate the mean and tail probabilities of the scaled disconnected count
//! `L_lambda[SIR]`, portray the conditional density of atypical
//! configurations, and fit empirical large-deviations rates across densities.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`). The aliases
//! at the crate root fix the scalar to `f64`, with `*F32` variants for single
//! precision.

// `!(x > 0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ascii;
pub mod error;
pub mod ldp;
pub mod num;
pub mod pathloss;
pub mod rare;
pub mod sampler;
pub mod scenario;
pub mod sir;

pub use error::{Error, Result};
pub use num::Real;
pub use sampler::SeedSpec;

pub type GridGeometry = scenario::GridGeometry<f64>;
pub type PathLossGrid = scenario::PathLossGrid<f64>;
pub type BuildingMask = scenario::BuildingMask<f64>;
pub type IntensityMeasure = scenario::IntensityMeasure<f64>;
pub type Scenario = scenario::Scenario<f64>;
pub type SyntheticSpec = scenario::SyntheticSpec<f64>;
pub type Rect = scenario::Rect<f64>;
pub type AsciiGrid = ascii::AsciiGrid<f64>;
pub type DbValue = pathloss::DbValue<f64>;
pub type LinearPower = pathloss::LinearPower<f64>;
pub type UserSample = sampler::UserSample<f64>;
pub type ThresholdSpec = sir::ThresholdSpec<f64>;
pub type CellOutcome = sir::CellOutcome<f64>;
pub type CampaignConfig = rare::CampaignConfig<f64>;
pub type CampaignResult = rare::CampaignResult<f64>;
pub type MeanEstimate = rare::MeanEstimate<f64>;
pub type TailEstimate = rare::TailEstimate<f64>;
pub type HeatMapAccumulator = rare::HeatMapAccumulator<f64>;
pub type ExtremeRecord = rare::ExtremeRecord<f64>;
pub type SweepPoint = ldp::SweepPoint<f64>;
pub type RateFit = ldp::RateFit<f64>;
pub type DiscreteMeasure = ldp::DiscreteMeasure<f64>;
pub type IidDistribution = ldp::IidDistribution<f64>;

pub type ScenarioF32 = scenario::Scenario<f32>;
pub type UserSampleF32 = sampler::UserSample<f32>;
pub type CampaignConfigF32 = rare::CampaignConfig<f32>;
pub type CellOutcomeF32 = sir::CellOutcome<f32>;
pub type RateFitF32 = ldp::RateFit<f32>;
