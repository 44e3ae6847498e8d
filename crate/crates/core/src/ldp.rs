//! Empirical rate functions and the closed-form oracles used to validate them.
//!
//! A sweep over densities gives estimates of `P(L > b)`; fitting
//! `log p = p1 lambda + p2` by least squares makes `-p1` the rate estimate.
//! Natural logarithms throughout.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::num::Real;
use crate::rare::{HeatMapAccumulator, TailEstimate, CHUNK};
use crate::sampler::{derive_seed, derive_stream, SeedSpec};
use crate::scenario::{GridGeometry, IntensityMeasure};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint<T> {
    pub lambda: T,
    pub p_hat: T,
    pub std_err: T,
    pub n: u64,
}

impl<T: Real> SweepPoint<T> {
    pub fn from_tail(lambda: T, tail: &TailEstimate<T>) -> Self {
        Self {
            lambda,
            p_hat: tail.p_hat,
            std_err: tail.std_err,
            n: tail.n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FitWeighting {
    #[default]
    Unweighted,
    /// Weights `1 / Var(log p_hat)` from the binomial delta method.
    InverseVariance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFit<T> {
    pub p1: T,
    pub p2: T,
    pub residual_norm: T,
    pub r_squared: T,
    pub points_used: usize,
    /// Densities dropped because no hit was observed there.
    pub excluded: Vec<T>,
}

impl<T: Real> RateFit<T> {
    pub fn rate_estimate(&self) -> T {
        -self.p1
    }

    pub fn fitted_log_p(&self, lambda: T) -> T {
        self.p1 * lambda + self.p2
    }

    /// `-p1 - p2 / lambda`, the fit expressed as `-log p / lambda`.
    pub fn rate_curve_at(&self, lambda: T) -> T {
        -self.p1 - self.p2 / lambda
    }
}

pub fn fit_rate_linear<T: Real>(points: &[SweepPoint<T>]) -> Result<RateFit<T>> {
    fit_rate_linear_with(points, FitWeighting::Unweighted)
}

pub fn fit_rate_linear_with<T: Real>(points: &[SweepPoint<T>], weighting: FitWeighting) -> Result<RateFit<T>> {
    let mut excluded = Vec::new();
    let mut xs = Vec::with_capacity(points.len());
    for p in points {
        if !(p.p_hat >= T::zero() && p.p_hat <= T::one()) || !p.lambda.is_finite() {
            return Err(Error::domain(format!("invalid sweep point at lambda = {}", p.lambda)));
        }
        if p.p_hat > T::zero() {
            let w = match weighting {
                FitWeighting::Unweighted => T::one(),
                FitWeighting::InverseVariance => {
                    let n = T::from_count(p.n.max(1));
                    // Var(log p) = (1 - p) / (n p); the 1/n floor keeps p = 1 finite.
                    n * p.p_hat / (T::one() - p.p_hat + T::one() / n)
                }
            };
            xs.push((p.lambda, p.p_hat.ln(), w));
        } else {
            excluded.push(p.lambda);
        }
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} usable sweep points (need 2; {} had zero hits)",
            xs.len(),
            excluded.len()
        )));
    }
    let sw: T = xs.iter().map(|p| p.2).sum();
    let mx = xs.iter().map(|p| p.2 * p.0).sum::<T>() / sw;
    let my = xs.iter().map(|p| p.2 * p.1).sum::<T>() / sw;
    let sxx: T = xs.iter().map(|p| p.2 * (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: T = xs.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > T::zero()) {
        return Err(Error::InsufficientData("sweep densities are all equal".into()));
    }
    let p1 = sxy / sxx;
    let p2 = my - p1 * mx;
    let ss_res: T = xs.iter().map(|p| p.2 * (p.1 - p1 * p.0 - p2).powi(2)).sum();
    let ss_tot: T = xs.iter().map(|p| p.2 * (p.1 - my).powi(2)).sum();
    let r_squared = if ss_tot > T::zero() { T::one() - ss_res / ss_tot } else { T::one() };
    let residual_norm = xs.iter().map(|p| (p.1 - p1 * p.0 - p2).powi(2)).sum::<T>().sqrt();
    Ok(RateFit {
        p1,
        p2,
        residual_norm,
        r_squared,
        points_used: xs.len(),
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateCurve<T> {
    /// `(lambda, -log p_hat / lambda)` for every point with hits.
    pub points: Vec<(T, T)>,
    pub fit: RateFit<T>,
}

impl<T: Real> RateCurve<T> {
    pub fn curve_at(&self, lambda: T) -> T {
        self.fit.rate_curve_at(lambda)
    }
}

pub fn rate_curve<T: Real>(points: &[SweepPoint<T>]) -> Result<RateCurve<T>> {
    if let Some(p) = points.iter().find(|p| !(p.lambda > T::zero())) {
        return Err(Error::domain(format!("rate curve needs positive densities, got {}", p.lambda)));
    }
    let fit = fit_rate_linear(points)?;
    let points = points
        .iter()
        .filter(|p| p.p_hat > T::zero())
        .map(|p| (p.lambda, -p.p_hat.ln() / p.lambda))
        .collect();
    Ok(RateCurve { points, fit })
}

/// `(s - m)^2 / (2 sigma^2)`
pub fn gaussian_rate<T: Real>(s: T, m: T, sigma: T) -> Result<T> {
    if !(sigma > T::zero()) {
        return Err(Error::domain(format!("sigma must be positive, got {sigma}")));
    }
    Ok((s - m).powi(2) / (T::lit(2.0) * sigma * sigma))
}

/// `s/m - 1 - log(s/m)`
pub fn exponential_rate<T: Real>(s: T, m: T) -> Result<T> {
    if !(s > T::zero() && m > T::zero()) {
        return Err(Error::domain(format!("exponential rate needs s, m > 0, got s = {s}, m = {m}")));
    }
    let r = s / m;
    Ok(r - T::one() - r.ln())
}

/// Nonnegative per-tile weights aligned with a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure<T> {
    pub geometry: GridGeometry<T>,
    pub weights: Vec<T>,
    pub total: T,
}

impl<T: Real> DiscreteMeasure<T> {
    pub fn new(geometry: GridGeometry<T>, weights: Vec<T>) -> Result<Self> {
        if weights.len() != geometry.n_tiles() {
            return Err(Error::Geometry(format!(
                "{} weights for {} tiles",
                weights.len(),
                geometry.n_tiles()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= T::zero()) || !w.is_finite()) {
            return Err(Error::domain(format!("measure weights must be finite and nonnegative, got {w}")));
        }
        let total = weights.iter().copied().sum();
        Ok(Self { geometry, weights, total })
    }

    /// `lambda mu_d`, the a priori expected user count per tile.
    pub fn from_intensity(intensity: &IntensityMeasure<T>, lambda: T) -> Result<Self> {
        Self::new(
            intensity.geometry,
            intensity.mass_per_tile.iter().map(|&m| lambda * m).collect(),
        )
    }

    /// Conditional mean user count per tile of the atypical configurations.
    pub fn from_heatmap(heat: &HeatMapAccumulator<T>) -> Result<Self> {
        Self::new(heat.geometry, heat.mean_counts.clone())
    }

    pub fn scaled(&self, factor: T) -> Result<Self> {
        Self::new(self.geometry, self.weights.iter().map(|&w| w * factor).collect())
    }
}

/// `sum_t [nu_t log(nu_t / mu_t) - nu_t + mu_t]`, with `0 log 0 = 0`, and
/// `+inf` when `nu` charges a `mu`-null tile. Zero exactly when `nu = mu`.
pub fn relative_entropy<T: Real>(nu: &DiscreteMeasure<T>, mu: &DiscreteMeasure<T>) -> Result<T> {
    if nu.geometry != mu.geometry {
        return Err(Error::Geometry("relative entropy of measures on different grids".into()));
    }
    let mut h = T::zero();
    for (&n, &m) in nu.weights.iter().zip(&mu.weights) {
        if n == T::zero() {
            h = h + m;
        } else if m == T::zero() {
            return Ok(T::infinity());
        } else if n != m {
            h = h + n * (n / m).ln() - n + m;
        }
    }
    Ok(h.max(T::zero()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IidDistribution<T> {
    Exponential { mean: T },
    Gaussian { mean: T, sigma: T },
}

impl<T: Real> IidDistribution<T> {
    pub fn validate(&self) -> Result<()> {
        match *self {
            IidDistribution::Exponential { mean } if !(mean > T::zero()) || !mean.is_finite() => {
                Err(Error::domain(format!("exponential mean must be positive, got {mean}")))
            }
            IidDistribution::Gaussian { mean, sigma } if !(sigma > T::zero()) || !mean.is_finite() => {
                Err(Error::domain(format!("gaussian needs finite mean and sigma > 0, got ({mean}, {sigma})")))
            }
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> T {
        match *self {
            IidDistribution::Exponential { mean } | IidDistribution::Gaussian { mean, .. } => mean,
        }
    }

    /// Closed-form rate of `P(S_n >= s)`; zero at or below the mean.
    pub fn rate(&self, s: T) -> Result<T> {
        self.validate()?;
        if s <= self.mean() {
            return Ok(T::zero());
        }
        match *self {
            IidDistribution::Exponential { mean } => exponential_rate(s, mean),
            IidDistribution::Gaussian { mean, sigma } => gaussian_rate(s, mean, sigma),
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            IidDistribution::Exponential { mean } => mean.to_f64_lossy() * rng.sample::<f64, _>(Exp1),
            IidDistribution::Gaussian { mean, sigma } => {
                mean.to_f64_lossy() + sigma.to_f64_lossy() * rng.sample::<f64, _>(StandardNormal)
            }
        }
    }
}

/// Stream family of the replicates for one sample size.
fn size_seed(seed: u64, n: usize) -> u64 {
    derive_seed(seed, n as u64)
}

fn count_hits<T: Real>(dist: &IidDistribution<T>, n: usize, s: f64, seed: u64, reps: std::ops::Range<u64>) -> u64 {
    let master = size_seed(seed, n);
    let n_chunks = (reps.end - reps.start).div_ceil(CHUNK);
    (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let start = reps.start + chunk * CHUNK;
            let end = (start + CHUNK).min(reps.end);
            let mut hits = 0u64;
            for rep in start..end {
                let mut rng = derive_stream(SeedSpec::new(master, rep));
                let sum: f64 = (0..n).map(|_| dist.draw(&mut rng)).sum();
                if sum / n as f64 >= s {
                    hits += 1;
                }
            }
            hits
        })
        .sum()
}

/// Monte Carlo estimate of `P(S_n >= s)` for the empirical mean of `n` iid
/// draws. The estimate is a pure function of `(dist, n, s, reps, seed)`.
pub fn iid_mean_tail<T: Real>(dist: IidDistribution<T>, n: usize, s: T, reps: u64, seed: u64) -> Result<TailEstimate<T>> {
    dist.validate()?;
    if n == 0 || reps == 0 {
        return Err(Error::domain("need n >= 1 and reps >= 1"));
    }
    if s.is_nan() {
        return Err(Error::domain("tail level is NaN"));
    }
    let hits = count_hits(&dist, n, s.to_f64_lossy(), seed, 0..reps);
    Ok(TailEstimate::from_hits(s, hits, reps))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveTail<T> {
    pub estimate: TailEstimate<T>,
    pub target_met: bool,
}

/// Grows the replicate count until `std_err <= target_rel_se * p_hat` or
/// `max_reps` is reached. The result equals `iid_mean_tail` at the final
/// replicate count.
pub fn iid_mean_tail_adaptive<T: Real>(
    dist: IidDistribution<T>,
    n: usize,
    s: T,
    target_rel_se: f64,
    initial_reps: u64,
    max_reps: u64,
    seed: u64,
) -> Result<AdaptiveTail<T>> {
    dist.validate()?;
    if n == 0 || initial_reps == 0 || max_reps < initial_reps || !(target_rel_se > 0.0) {
        return Err(Error::domain("invalid adaptive replicate schedule"));
    }
    let sf = s.to_f64_lossy();
    let mut reps = initial_reps;
    let mut hits = count_hits(&dist, n, sf, seed, 0..reps);
    loop {
        let p = hits as f64 / reps as f64;
        let met = hits > 0 && ((1.0 - p) / (p * reps as f64)).sqrt() <= target_rel_se;
        if met || reps == max_reps {
            return Ok(AdaptiveTail {
                estimate: TailEstimate::from_hits(s, hits, reps),
                target_met: met,
            });
        }
        let wanted = if hits > 0 {
            ((1.0 - p) / (p * target_rel_se * target_rel_se) * 1.1).ceil() as u64
        } else {
            reps.saturating_mul(10)
        };
        let next = wanted.max(reps + 1).min(max_reps);
        hits += count_hits(&dist, n, sf, seed, reps..next);
        reps = next;
    }
}
