//! Monte Carlo campaigns: mean of `L_lambda[SIR]`, tail probability of the
//! atypical event `L_lambda[SIR] > b`, the conditional density of atypical
//! configurations, and the least/most connected realizations.
//!
//! Replicates are split into fixed chunks of [`CHUNK`] indices. Floating
//! point statistics are merged in chunk order and integer tallies are exact,
//! so results are bit-identical for any rayon thread count.
//!
//! Seeds are two-phase: the mean phase uses replicate indices
//! `[0, n_mean)` and the tail phase `[n_mean, n_mean + n_tail)`.

use std::ops::Range;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::num::Real;
use crate::sampler::{SeedSpec, TileSampler, UserSample};
use crate::scenario::{GridGeometry, Scenario};
use crate::sir::{evaluate_counts, threshold_lambda, CellOutcome, ThresholdSpec};

pub const CHUNK: u64 = 64;
pub const DEFAULT_N_MEAN: u64 = 10_000;
/// Below this many hits the Wilson interval accompanies the normal one.
pub const WILSON_HITS: u64 = 30;
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CampaignConfig<T> {
    pub lambda: T,
    pub tau_db: T,
    pub eps: T,
    pub n_mean: u64,
    pub n_tail: u64,
    pub master_seed: u64,
}

impl<T: Real> CampaignConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > T::zero()) || !self.lambda.is_finite() {
            return Err(Error::domain(format!("density must be positive, got {}", self.lambda)));
        }
        if !self.tau_db.is_finite() {
            return Err(Error::domain("threshold must be finite"));
        }
        if !(self.eps > T::zero()) || !self.eps.is_finite() {
            return Err(Error::domain(format!("relative deviation must be positive, got {}", self.eps)));
        }
        if self.n_tail == 0 {
            return Err(Error::domain("tail replicate count must be at least 1"));
        }
        Ok(())
    }

    pub fn threshold(&self) -> Result<ThresholdSpec<T>> {
        threshold_lambda(self.tau_db, self.lambda)
    }

    pub fn mean_range(&self) -> Range<u64> {
        0..self.n_mean
    }

    pub fn tail_range(&self) -> Range<u64> {
        self.n_mean..self.n_mean + self.n_tail
    }
}

/// `round(1000 e^lambda)`
pub fn run_count_heuristic(lambda: f64) -> Result<u64> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::domain(format!("density must be nonnegative, got {lambda}")));
    }
    let n = (1000.0 * lambda.exp()).round();
    if n >= u64::MAX as f64 {
        return Err(Error::domain(format!("run count overflows at density {lambda}")));
    }
    Ok(n as u64)
}

pub fn pick_b<T: Real>(mean: T, eps: T) -> Result<T> {
    if !(mean >= T::zero()) || !(eps > T::zero()) {
        return Err(Error::domain(format!("need mean >= 0 and eps > 0, got {mean} and {eps}")));
    }
    Ok(mean * (T::one() + eps))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate<T> {
    pub mean: T,
    pub std_err: T,
    pub n: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailEstimate<T> {
    pub b: T,
    pub p_hat: T,
    pub hits: u64,
    pub n: u64,
    pub std_err: T,
}

impl<T: Real> TailEstimate<T> {
    pub fn from_hits(b: T, hits: u64, n: u64) -> Self {
        let p_hat = T::from_count(hits) / T::from_count(n);
        let std_err = (p_hat * (T::one() - p_hat) / T::from_count(n)).sqrt();
        Self { b, p_hat, hits, n, std_err }
    }

    pub fn tail_observed(&self) -> bool {
        self.hits > 0
    }

    /// 95% Wilson score interval.
    pub fn wilson_interval(&self) -> (T, T) {
        let z = T::lit(Z95);
        let n = T::from_count(self.n);
        let p = self.p_hat;
        let z2n = z * z / n;
        let center = (p + z2n / T::lit(2.0)) / (T::one() + z2n);
        let half = z / (T::one() + z2n) * (p * (T::one() - p) / n + z2n / (T::lit(4.0) * n)).sqrt();
        let lo = if self.hits == 0 { T::zero() } else { (center - half).max(T::zero()) };
        let hi = if self.hits == self.n { T::one() } else { (center + half).min(T::one()) };
        (lo, hi)
    }

    /// Wilson interval only where the normal approximation is unreliable.
    pub fn small_count_interval(&self) -> Option<(T, T)> {
        (self.hits < WILSON_HITS).then(|| self.wilson_interval())
    }
}

/// Conditional tile counts over atypical replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMapAccumulator<T> {
    pub geometry: GridGeometry<T>,
    pub lambda: T,
    pub sum_counts: Vec<u64>,
    pub sum_sq_counts: Vec<u64>,
    pub n_atypical: u64,
    /// Users summed over the atypical replicates.
    pub atypical_users: u64,
    pub mean_counts: Vec<T>,
    /// `mean_counts / (lambda mu_d(t))`; `None` on blocked tiles or when empty.
    pub ratio: Vec<Option<T>>,
}

impl<T: Real> HeatMapAccumulator<T> {
    fn finish(scenario: &Scenario<T>, lambda: T, sums: HeatSums) -> Self {
        let geometry = *scenario.geometry();
        let n_tiles = geometry.n_tiles();
        let (sum_counts, sum_sq_counts) = if sums.n == 0 {
            (vec![0; n_tiles], vec![0; n_tiles])
        } else {
            (sums.sum, sums.sum_sq)
        };
        let n = T::from_count(sums.n);
        let mean_counts: Vec<T> = if sums.n == 0 {
            vec![T::zero(); n_tiles]
        } else {
            sum_counts.iter().map(|&s| T::from_count(s) / n).collect()
        };
        let ratio = mean_counts
            .iter()
            .zip(&scenario.intensity.mass_per_tile)
            .map(|(&m, &mass)| (sums.n > 0 && mass > T::zero()).then(|| m / (lambda * mass)))
            .collect();
        Self {
            geometry,
            lambda,
            sum_counts,
            sum_sq_counts,
            n_atypical: sums.n,
            atypical_users: sums.users,
            mean_counts,
            ratio,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.n_atypical == 0
    }

    /// Standard error of each conditional mean count.
    pub fn std_err_counts(&self) -> Vec<T> {
        if self.n_atypical < 2 {
            return vec![T::zero(); self.sum_counts.len()];
        }
        let n = T::from_count(self.n_atypical);
        self.sum_counts
            .iter()
            .zip(&self.sum_sq_counts)
            .map(|(&s, &q)| {
                let mean = T::from_count(s) / n;
                let var = (T::from_count(q) - n * mean * mean) / (n - T::one());
                (var.max(T::zero()) / n).sqrt()
            })
            .collect()
    }

    pub fn total_mean_mass(&self) -> T {
        self.mean_counts.iter().copied().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtremeSample<T> {
    pub connected_fraction: T,
    pub replicate_index: u64,
    pub total_users: u64,
    pub disconnected_users: u64,
    /// Leading 16 hex digits of the SHA-256 of the tile counts.
    pub digest: String,
    pub sample: UserSample<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtremeRecord<T> {
    pub least: ExtremeSample<T>,
    pub most: ExtremeSample<T>,
}

impl<T: Real> ExtremeRecord<T> {
    pub fn spread(&self) -> T {
        self.most.connected_fraction - self.least.connected_fraction
    }
}

pub fn counts_digest(counts: &[u32]) -> String {
    let mut h = Sha256::new();
    for c in counts {
        h.update(c.to_le_bytes());
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

// Running mean and M2 (Chan et al. pairwise merge).
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        Moments {
            n,
            mean: self.mean + d * other.n as f64 / n as f64,
            m2: self.m2 + other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct HeatSums {
    n: u64,
    users: u64,
    sum: Vec<u64>,
    sum_sq: Vec<u64>,
}

impl HeatSums {
    fn add(&mut self, counts: &[u32], users: u64) {
        if self.sum.is_empty() {
            self.sum = vec![0; counts.len()];
            self.sum_sq = vec![0; counts.len()];
        }
        self.n += 1;
        self.users += users;
        for ((s, q), &c) in self.sum.iter_mut().zip(self.sum_sq.iter_mut()).zip(counts) {
            let c = u64::from(c);
            *s += c;
            *q += c * c;
        }
    }

    fn merge(mut self, other: HeatSums) -> HeatSums {
        if other.n == 0 {
            return self;
        }
        if self.n == 0 {
            return other;
        }
        self.n += other.n;
        self.users += other.users;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *a += b;
        }
        self
    }
}

// (connected fraction, replicate index); ties resolve to the lowest index.
type Extreme = (f64, u64);

fn lower(a: Option<Extreme>, b: Option<Extreme>) -> Option<Extreme> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if (y.0, y.1) < (x.0, x.1) { y } else { x }),
        (x, None) => x,
        (None, y) => y,
    }
}

fn higher(a: Option<Extreme>, b: Option<Extreme>) -> Option<Extreme> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if y.0 > x.0 || (y.0 == x.0 && y.1 < x.1) { y } else { x }),
        (x, None) => x,
        (None, y) => y,
    }
}

/// What a pass over a replicate range should collect besides moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassOptions<T> {
    /// Count replicates with `L > b` (and accumulate the heat map if asked).
    pub tail_b: Option<T>,
    pub heatmap: bool,
    pub extremes: bool,
}

#[derive(Debug, Clone, Default)]
struct ChunkOut {
    moments: Moments,
    hits: u64,
    least: Option<Extreme>,
    most: Option<Extreme>,
}

struct Pass {
    moments: Moments,
    hits: u64,
    heat: HeatSums,
    least: Option<Extreme>,
    most: Option<Extreme>,
}

fn run_pass<T: Real>(
    sampler: &TileSampler<'_, T>,
    threshold: &ThresholdSpec<T>,
    master_seed: u64,
    range: Range<u64>,
    opts: PassOptions<T>,
) -> Pass {
    let scenario = sampler.scenario();
    let n_tiles = scenario.geometry().n_tiles();
    let ell = scenario.linear_pathloss();
    let n_chunks = (range.end - range.start).div_ceil(CHUNK);

    let process = |chunk: u64, heat: &mut HeatSums| -> ChunkOut {
        let start = range.start + chunk * CHUNK;
        let end = (start + CHUNK).min(range.end);
        let mut counts = vec![0u32; n_tiles];
        let mut out = ChunkOut::default();
        for idx in start..end {
            let users = sampler.fill(SeedSpec::new(master_seed, idx), &mut counts);
            let o = evaluate_counts(&counts, users, ell, threshold, idx);
            out.moments.push(o.l_value.to_f64_lossy());
            if let Some(b) = opts.tail_b {
                if o.l_value > b {
                    out.hits += 1;
                    if opts.heatmap {
                        heat.add(&counts, users);
                    }
                }
            }
            if opts.extremes {
                let e = Some((o.connected_fraction.to_f64_lossy(), idx));
                out.least = lower(out.least, e);
                out.most = higher(out.most, e);
            }
        }
        out
    };

    let (mut outs, heat) = (0..n_chunks)
        .into_par_iter()
        .fold(
            || (Vec::new(), HeatSums::default()),
            |(mut outs, mut heat), chunk| {
                let out = process(chunk, &mut heat);
                outs.push((chunk, out));
                (outs, heat)
            },
        )
        .reduce(
            || (Vec::new(), HeatSums::default()),
            |(mut a, ha), (b, hb)| {
                a.extend(b);
                (a, ha.merge(hb))
            },
        );
    outs.sort_by_key(|(chunk, _)| *chunk);

    let mut pass = Pass {
        moments: Moments::default(),
        hits: 0,
        heat,
        least: None,
        most: None,
    };
    for (_, out) in outs {
        pass.moments = pass.moments.merge(out.moments);
        pass.hits += out.hits;
        pass.least = lower(pass.least, out.least);
        pass.most = higher(pass.most, out.most);
    }
    pass
}

fn mean_from(m: Moments) -> MeanEstimate<f64> {
    let var = if m.n > 1 { m.m2 / (m.n - 1) as f64 } else { 0.0 };
    MeanEstimate {
        mean: m.mean,
        std_err: (var / m.n as f64).sqrt(),
        n: m.n,
    }
}

fn cast_mean<T: Real>(m: MeanEstimate<f64>) -> MeanEstimate<T> {
    MeanEstimate {
        mean: T::lit(m.mean),
        std_err: T::lit(m.std_err),
        n: m.n,
    }
}

/// Mean of `L_lambda[SIR]` over the mean-phase replicates.
pub fn estimate_mean<T: Real>(scenario: &Scenario<T>, cfg: &CampaignConfig<T>) -> Result<MeanEstimate<T>> {
    cfg.validate()?;
    if cfg.n_mean == 0 {
        return Err(Error::domain("mean replicate count must be at least 1"));
    }
    let sampler = TileSampler::new(scenario, cfg.lambda)?;
    let opts = PassOptions { tail_b: None, heatmap: false, extremes: false };
    let pass = run_pass(&sampler, &cfg.threshold()?, cfg.master_seed, cfg.mean_range(), opts);
    Ok(cast_mean(mean_from(pass.moments)))
}

/// Everything a tail-phase pass can report.
#[derive(Debug, Clone, PartialEq)]
pub struct TailPhase<T> {
    pub tail: TailEstimate<T>,
    /// Mean of `L` over the tail-phase replicates.
    pub tail_mean: MeanEstimate<T>,
    pub heatmap: Option<HeatMapAccumulator<T>>,
    pub extremes: Option<ExtremeRecord<T>>,
}

fn extreme_sample<T: Real>(
    sampler: &TileSampler<'_, T>,
    threshold: &ThresholdSpec<T>,
    master_seed: u64,
    idx: u64,
) -> ExtremeSample<T> {
    let sample = sampler.sample(SeedSpec::new(master_seed, idx));
    let o = evaluate_counts(
        &sample.counts,
        sample.total_users,
        sampler.scenario().linear_pathloss(),
        threshold,
        idx,
    );
    ExtremeSample {
        connected_fraction: o.connected_fraction,
        replicate_index: idx,
        total_users: o.total_users,
        disconnected_users: o.disconnected_users,
        digest: counts_digest(&sample.counts),
        sample,
    }
}

pub fn run_tail_phase<T: Real>(
    scenario: &Scenario<T>,
    cfg: &CampaignConfig<T>,
    b: T,
    heatmap: bool,
    extremes: bool,
) -> Result<TailPhase<T>> {
    cfg.validate()?;
    if b.is_nan() {
        return Err(Error::domain("tail level b is NaN"));
    }
    let threshold = cfg.threshold()?;
    let sampler = TileSampler::new(scenario, cfg.lambda)?;
    let opts = PassOptions { tail_b: Some(b), heatmap, extremes };
    let pass = run_pass(&sampler, &threshold, cfg.master_seed, cfg.tail_range(), opts);
    let extremes = if extremes {
        let (least, most) = (pass.least.expect("n_tail >= 1"), pass.most.expect("n_tail >= 1"));
        Some(ExtremeRecord {
            least: extreme_sample(&sampler, &threshold, cfg.master_seed, least.1),
            most: extreme_sample(&sampler, &threshold, cfg.master_seed, most.1),
        })
    } else {
        None
    };
    Ok(TailPhase {
        tail: TailEstimate::from_hits(b, pass.hits, cfg.n_tail),
        tail_mean: cast_mean(mean_from(pass.moments)),
        heatmap: heatmap.then(|| HeatMapAccumulator::finish(scenario, cfg.lambda, pass.heat)),
        extremes,
    })
}

/// Fraction of tail-phase replicates with `L > b` (strict).
pub fn estimate_tail<T: Real>(scenario: &Scenario<T>, cfg: &CampaignConfig<T>, b: T) -> Result<TailEstimate<T>> {
    Ok(run_tail_phase(scenario, cfg, b, false, false)?.tail)
}

pub fn conditional_heatmap<T: Real>(
    scenario: &Scenario<T>,
    cfg: &CampaignConfig<T>,
    b: T,
) -> Result<HeatMapAccumulator<T>> {
    Ok(run_tail_phase(scenario, cfg, b, true, false)?.heatmap.expect("requested"))
}

pub fn track_extremes<T: Real>(scenario: &Scenario<T>, cfg: &CampaignConfig<T>) -> Result<ExtremeRecord<T>> {
    Ok(run_tail_phase(scenario, cfg, T::infinity(), false, true)?.extremes.expect("requested"))
}

/// Regenerates a single replicate from its index.
pub fn replay_replicate<T: Real>(
    scenario: &Scenario<T>,
    cfg: &CampaignConfig<T>,
    replicate_index: u64,
) -> Result<(UserSample<T>, CellOutcome<T>)> {
    let threshold = cfg.threshold()?;
    let sample = TileSampler::new(scenario, cfg.lambda)?.sample(SeedSpec::new(cfg.master_seed, replicate_index));
    let outcome = evaluate_counts(
        &sample.counts,
        sample.total_users,
        scenario.linear_pathloss(),
        &threshold,
        replicate_index,
    );
    Ok((sample, outcome))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignResult<T> {
    pub config: CampaignConfig<T>,
    pub threshold: ThresholdSpec<T>,
    pub mean: MeanEstimate<T>,
    pub b: T,
    pub tail: TailEstimate<T>,
    pub heatmap: Option<HeatMapAccumulator<T>>,
    pub extremes: Option<ExtremeRecord<T>>,
}

/// Mean phase, then `b = mean (1 + eps)`, then the tail phase.
pub fn run_campaign<T: Real>(
    scenario: &Scenario<T>,
    cfg: &CampaignConfig<T>,
    heatmap: bool,
    extremes: bool,
) -> Result<CampaignResult<T>> {
    let mean = estimate_mean(scenario, cfg)?;
    let b = pick_b(mean.mean, cfg.eps)?;
    let phase = run_tail_phase(scenario, cfg, b, heatmap, extremes)?;
    Ok(CampaignResult {
        config: *cfg,
        threshold: cfg.threshold()?,
        mean,
        b,
        tail: phase.tail,
        heatmap: phase.heatmap,
        extremes: phase.extremes,
    })
}
