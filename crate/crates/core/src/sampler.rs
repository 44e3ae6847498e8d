//! Tile-by-tile Poisson sampling of user configurations.
//!
//! Every replicate draws from its own ChaCha8 stream keyed by
//! `(master_seed, replicate_index)`, so a sample depends only on the scenario,
//! the density and its [`SeedSpec`], never on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::num::Real;
use crate::scenario::{GridGeometry, Scenario};

/// Means at or above this use transformed rejection instead of inversion.
pub const INVERSION_LIMIT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub replicate_index: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, replicate_index: u64) -> Self {
        Self {
            master_seed,
            replicate_index,
        }
    }
}

/// Domain label for the position jitter of exported point clouds.
pub const JITTER_DOMAIN: u64 = 0x6a69_7474_6572;

/// Mixes a label into a master seed so that independent families of
/// replicates (jitter, sweep points, oracle sizes) never share a stream.
pub fn derive_seed(master_seed: u64, domain: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = master_seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_stream(seed: SeedSpec) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.master_seed);
    rng.set_stream(seed.replicate_index);
    rng
}

/// Poisson variate generator with per-mean constants precomputed.
#[derive(Debug, Clone, Copy)]
pub enum PoissonSampler {
    Zero,
    Inversion { mean: f64, p0: f64 },
    Ptrs(Ptrs),
}

#[derive(Debug, Clone, Copy)]
pub struct Ptrs {
    mean: f64,
    log_mean: f64,
    a: f64,
    b: f64,
    inv_alpha: f64,
    v_r: f64,
}

impl PoissonSampler {
    pub fn new(mean: f64) -> Result<Self> {
        if !(mean >= 0.0) || !mean.is_finite() {
            return Err(Error::domain(format!("Poisson mean must be finite and nonnegative, got {mean}")));
        }
        Ok(if mean == 0.0 {
            PoissonSampler::Zero
        } else if mean < INVERSION_LIMIT {
            PoissonSampler::Inversion { mean, p0: (-mean).exp() }
        } else {
            // Hörmann's PTRS constants.
            let b = 0.931 + 2.53 * mean.sqrt();
            PoissonSampler::Ptrs(Ptrs {
                mean,
                log_mean: mean.ln(),
                a: -0.059 + 0.02483 * b,
                b,
                inv_alpha: 1.1239 + 1.1328 / (b - 3.4),
                v_r: 0.9277 - 3.6224 / (b - 2.0),
            })
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match *self {
            PoissonSampler::Zero => 0,
            PoissonSampler::Inversion { mean, p0 } => {
                let u: f64 = rng.random();
                let mut k = 0u32;
                let mut p = p0;
                let mut cdf = p0;
                while u >= cdf {
                    k += 1;
                    p *= mean / f64::from(k);
                    cdf += p;
                    if p == 0.0 {
                        break;
                    }
                }
                k
            }
            PoissonSampler::Ptrs(c) => c.sample(rng),
        }
    }
}

impl Ptrs {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        loop {
            let u = rng.random::<f64>() - 0.5;
            let v: f64 = rng.random();
            let us = 0.5 - u.abs();
            let k = ((2.0 * self.a / us + self.b) * u + self.mean + 0.43).floor();
            if us >= 0.07 && v <= self.v_r {
                return k as u32;
            }
            if k < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            let lhs = v.ln() + self.inv_alpha.ln() - (self.a / (us * us) + self.b).ln();
            let rhs = -self.mean + k * self.log_mean - statrs::function::gamma::ln_gamma(k + 1.0);
            if lhs <= rhs {
                return k as u32;
            }
        }
    }
}

/// One realization of the user process at tile resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSample<T> {
    pub counts: Vec<u32>,
    pub total_users: u64,
    pub lambda: T,
    pub replicate_index: u64,
}

/// Sampling plan for a fixed scenario and density. Tiles are visited in
/// row-major order and each free tile consumes the stream in turn.
#[derive(Debug, Clone)]
pub struct TileSampler<'a, T> {
    scenario: &'a Scenario<T>,
    lambda: T,
    tiles: Vec<(usize, PoissonSampler)>,
}

impl<'a, T: Real> TileSampler<'a, T> {
    pub fn new(scenario: &'a Scenario<T>, lambda: T) -> Result<Self> {
        if !(lambda >= T::zero()) || !lambda.is_finite() {
            return Err(Error::domain(format!("density must be finite and nonnegative, got {lambda}")));
        }
        let mut cache: Vec<(T, PoissonSampler)> = Vec::new();
        let mut tiles = Vec::new();
        for (i, &mass) in scenario.intensity.mass_per_tile.iter().enumerate() {
            if mass <= T::zero() {
                continue;
            }
            let sampler = match cache.iter().find(|(m, _)| *m == mass) {
                Some((_, s)) => *s,
                None => {
                    let s = PoissonSampler::new((lambda * mass).to_f64_lossy())?;
                    cache.push((mass, s));
                    s
                }
            };
            tiles.push((i, sampler));
        }
        Ok(Self { scenario, lambda, tiles })
    }

    pub fn scenario(&self) -> &'a Scenario<T> {
        self.scenario
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    /// Overwrites `counts` with a fresh draw and returns the user total.
    pub fn fill(&self, seed: SeedSpec, counts: &mut [u32]) -> u64 {
        counts.fill(0);
        let mut rng = derive_stream(seed);
        let mut total = 0u64;
        for &(i, sampler) in &self.tiles {
            let c = sampler.sample(&mut rng);
            counts[i] = c;
            total += u64::from(c);
        }
        total
    }

    pub fn sample(&self, seed: SeedSpec) -> UserSample<T> {
        let mut counts = vec![0u32; self.scenario.geometry().n_tiles()];
        let total_users = self.fill(seed, &mut counts);
        UserSample {
            counts,
            total_users,
            lambda: self.lambda,
            replicate_index: seed.replicate_index,
        }
    }
}

pub fn sample_counts<T: Real>(scenario: &Scenario<T>, lambda: T, seed: SeedSpec) -> Result<UserSample<T>> {
    Ok(TileSampler::new(scenario, lambda)?.sample(seed))
}

/// Places each user uniformly inside its tile. Display only; path loss is
/// constant per tile so coordinates never enter the SIR computation.
pub fn jitter_points<T: Real>(geometry: &GridGeometry<T>, sample: &UserSample<T>, seed: SeedSpec) -> Vec<(T, T)> {
    let mut rng = derive_stream(seed);
    let mut points = Vec::with_capacity(sample.total_users as usize);
    for (i, &c) in sample.counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let (x0, y0) = geometry.tile_corner(i);
        for _ in 0..c {
            let ux = T::lit(rng.random::<f64>());
            let uy = T::lit(rng.random::<f64>());
            points.push((x0 + ux * geometry.cell_width, y0 + uy * geometry.cell_height));
        }
    }
    points
}
