//! Sampling engine for calibrated multilevel plans.
//!
//! Each level draws `N_j` independent coupled pairs. Draws are grouped into
//! fixed-size chunks whose moments are merged in ascending chunk order, so
//! the result is bit-identical for any number of worker threads.

use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use crate::calibration::{EstimatorKind, MultilevelPlan};
use crate::error::{Error, Result};
use crate::numeric::Moments;
use crate::stream::{replication_seed, Domain, DrawStream, MAX_DRAW};

/// Number of draws per reduction chunk.
pub const DEFAULT_CHUNK: u64 = 4096;

/// What a sampler must produce at one level.
///
/// Resolutions are integers `k` meaning bias parameter `h_bold / k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSpec {
    /// 1-based level index.
    pub level: usize,
    pub root: u32,
    pub h_bold: f64,
    /// Fine resolution `divisor * n_j`.
    pub fine: u64,
    /// Coarse resolution `divisor * n_{j-1}`, absent on level 1.
    pub coarse: Option<u64>,
}

impl LevelSpec {
    pub fn fine_h(&self) -> f64 {
        self.h_bold / self.fine as f64
    }

    pub fn coarse_h(&self) -> Option<f64> {
        self.coarse.map(|k| self.h_bold / k as f64)
    }

    /// Spec for every level of a plan.
    pub fn for_plan(plan: &MultilevelPlan) -> Vec<LevelSpec> {
        (1..=plan.depth)
            .map(|j| LevelSpec {
                level: j,
                root: plan.root,
                h_bold: plan.h_bold,
                fine: plan.bias_divisor * plan.refiners[j - 1],
                coarse: (j > 1).then(|| plan.bias_divisor * plan.refiners[j - 2]),
            })
            .collect()
    }

    /// Single-resolution spec used for level 1 or for pilots.
    pub fn single(h_bold: f64, root: u32, resolution: u64) -> LevelSpec {
        LevelSpec {
            level: 1,
            root,
            h_bold,
            fine: resolution,
            coarse: None,
        }
    }
}

/// One coupled draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelSample {
    pub fine: f64,
    pub coarse: Option<f64>,
    /// Work spent on this draw, in units where evaluating `Y_h` costs `1/h`.
    pub cost: f64,
}

impl LevelSample {
    pub fn increment(&self) -> f64 {
        self.fine - self.coarse.unwrap_or(0.0)
    }
}

/// A family of coupled simulations `(Y_{h/n_j}, Y_{h/n_{j-1}})`.
pub trait LevelSampler: Sync {
    fn h_bold(&self) -> f64;

    /// Draws one coupled pair using only `rng`. The coarse value must be
    /// present exactly when `spec.coarse` is.
    fn sample(&self, spec: &LevelSpec, rng: &mut DrawStream) -> Result<LevelSample>;
}

/// Moments of one level.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: usize,
    pub increment: Moments,
    pub fine: Moments,
    pub coarse: Moments,
    pub cost: f64,
}

impl LevelStats {
    fn merge(&self, other: &LevelStats) -> LevelStats {
        LevelStats {
            level: self.level.max(other.level),
            increment: self.increment.merge(&other.increment),
            fine: self.fine.merge(&other.fine),
            coarse: self.coarse.merge(&other.coarse),
            cost: self.cost + other.cost,
        }
    }

    pub fn samples(&self) -> u64 {
        self.increment.count
    }
}

/// Outcome of one estimator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub kind: EstimatorKind,
    pub epsilon: f64,
    pub seed: u64,
    pub estimate: f64,
    /// Plug-in standard deviation `sqrt(sum_j W_j^2 Var_j / N_j)`.
    pub std_error: f64,
    pub measured_cost: f64,
    pub theoretical_cost: f64,
    pub levels: Vec<LevelStats>,
}

/// `K` independent runs of one plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationStudy {
    pub plan: MultilevelPlan,
    pub master_seed: u64,
    pub runs: Vec<EstimatorResult>,
}

impl ReplicationStudy {
    pub fn estimates(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.estimate).collect()
    }

    pub fn replications(&self) -> usize {
        self.runs.len()
    }
}

/// Thread pool plus chunking policy.
pub struct Engine {
    pool: ThreadPool,
    workers: usize,
    chunk: u64,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("workers", &self.workers)
            .field("chunk", &self.chunk)
            .finish()
    }
}

impl Engine {
    /// `workers = 0` uses all available cores.
    pub fn new(workers: usize) -> Result<Engine> {
        Engine::with_chunk(workers, DEFAULT_CHUNK)
    }

    pub fn with_chunk(workers: usize, chunk: u64) -> Result<Engine> {
        if chunk == 0 {
            return Err(Error::invalid("chunk size must be > 0"));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
        let workers = pool.current_num_threads();
        Ok(Engine { pool, workers, chunk })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Draws `n` coupled samples at `spec` from streams `(seed, domain)`.
    pub fn sample_level<S: LevelSampler + ?Sized>(
        &self,
        sampler: &S,
        spec: &LevelSpec,
        n: u64,
        seed: u64,
        domain: Domain,
    ) -> Result<LevelStats> {
        if n > MAX_DRAW {
            return Err(Error::invalid(format!("level {} asks for {n} draws", spec.level)));
        }
        let chunks = n.div_ceil(self.chunk);
        let chunk = self.chunk;
        let parts: Vec<Result<LevelStats>> = self.pool.install(|| {
            (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let start = c * chunk;
                    let end = (start + chunk).min(n);
                    sample_range(sampler, spec, start..end, seed, domain)
                })
                .collect()
        });
        let mut total = LevelStats {
            level: spec.level,
            ..Default::default()
        };
        for part in parts {
            total = total.merge(&part?);
        }
        Ok(total)
    }

    /// Runs the estimator described by `plan`.
    pub fn run<S: LevelSampler + ?Sized>(&self, plan: &MultilevelPlan, sampler: &S, seed: u64) -> Result<EstimatorResult> {
        check_sampler(plan, sampler)?;
        let specs = LevelSpec::for_plan(plan);
        let mut levels = Vec::with_capacity(plan.depth);
        for (spec, &n) in specs.iter().zip(&plan.level_sizes) {
            levels.push(self.sample_level(sampler, spec, n, seed, Domain::Estimator)?);
        }
        Ok(combine(plan, seed, levels))
    }

    /// `count` independent runs with seeds derived from `master_seed`.
    pub fn run_replicated<S: LevelSampler + ?Sized>(
        &self,
        plan: &MultilevelPlan,
        sampler: &S,
        master_seed: u64,
        count: usize,
    ) -> Result<Vec<EstimatorResult>> {
        (0..count)
            .map(|k| {
                self.run(plan, sampler, replication_seed(master_seed, k as u64))
                    .map_err(|e| Error::Replication {
                        replication: k,
                        source: Box::new(e),
                    })
            })
            .collect()
    }

    /// Replicated runs packaged with their plan.
    pub fn study<S: LevelSampler + ?Sized>(
        &self,
        plan: &MultilevelPlan,
        sampler: &S,
        master_seed: u64,
        count: usize,
    ) -> Result<ReplicationStudy> {
        if count == 0 {
            return Err(Error::invalid("replication count must be >= 1"));
        }
        Ok(ReplicationStudy {
            plan: plan.clone(),
            master_seed,
            runs: self.run_replicated(plan, sampler, master_seed, count)?,
        })
    }
}

fn check_sampler<S: LevelSampler + ?Sized>(plan: &MultilevelPlan, sampler: &S) -> Result<()> {
    let hb = sampler.h_bold();
    if (hb - plan.h_bold).abs() > 1e-12 * hb.abs().max(1.0) {
        return Err(Error::invalid(format!(
            "plan h_bold = {} does not match the sampler's {hb}",
            plan.h_bold
        )));
    }
    Ok(())
}

fn sample_range<S: LevelSampler + ?Sized>(
    sampler: &S,
    spec: &LevelSpec,
    draws: std::ops::Range<u64>,
    seed: u64,
    domain: Domain,
) -> Result<LevelStats> {
    let mut stats = LevelStats {
        level: spec.level,
        ..Default::default()
    };
    for draw in draws {
        let mut rng = DrawStream::new(seed, domain, spec.level, draw);
        let s = sampler.sample(spec, &mut rng).map_err(|e| Error::Sampler {
            level: spec.level,
            draw,
            message: match e {
                Error::Sampler { message, .. } => message,
                other => other.to_string(),
            },
        })?;
        if s.coarse.is_some() != spec.coarse.is_some() {
            return Err(Error::Sampler {
                level: spec.level,
                draw,
                message: "coarse value presence does not match the level".into(),
            });
        }
        if !s.fine.is_finite() || s.coarse.is_some_and(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                level: spec.level,
                draw,
                fine: s.fine,
                coarse: s.coarse,
            });
        }
        stats.increment.push(s.increment());
        stats.fine.push(s.fine);
        if let Some(c) = s.coarse {
            stats.coarse.push(c);
        }
        stats.cost += s.cost;
    }
    Ok(stats)
}

fn combine(plan: &MultilevelPlan, seed: u64, levels: Vec<LevelStats>) -> EstimatorResult {
    let mut estimate = 0.0;
    let mut var = 0.0;
    let mut cost = 0.0;
    for (j, stats) in levels.iter().enumerate() {
        let w = plan.weights.cumulative[j];
        let n = stats.samples() as f64;
        estimate += w * stats.increment.mean;
        var += w * w * stats.increment.variance() / n;
        cost += stats.cost;
    }
    EstimatorResult {
        kind: plan.kind,
        epsilon: plan.epsilon,
        seed,
        estimate,
        std_error: var.sqrt(),
        measured_cost: cost,
        theoretical_cost: plan.theoretical_cost(),
        levels,
    }
}
