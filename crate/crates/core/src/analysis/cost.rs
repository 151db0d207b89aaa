//! Cost scaling of MLMC against ML2R over a grid of target accuracies.

use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate, EstimatorKind, StructuralParams};
use crate::engine::{Engine, LevelSampler};
use crate::error::{Error, Result};
use crate::stream::replication_seed;

/// Asymptotic complexity `v(epsilon)` of each estimator, up to a constant.
pub fn complexity_scale(kind: EstimatorKind, epsilon: f64, alpha: f64, beta: f64, root: u32) -> f64 {
    let base = epsilon.powi(-2);
    let log_inv = (1.0 / epsilon).ln();
    if beta > 1.0 {
        base
    } else if beta == 1.0 {
        match kind {
            EstimatorKind::Mlmc => base * log_inv * log_inv,
            EstimatorKind::Ml2r => base * log_inv,
        }
    } else {
        match kind {
            EstimatorKind::Mlmc => epsilon.powf(-2.0 - (1.0 - beta) / alpha),
            EstimatorKind::Ml2r => {
                base * ((1.0 - beta) / alpha.sqrt() * (2.0 * log_inv * (root as f64).ln()).sqrt()).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub epsilon: f64,
    pub kind: EstimatorKind,
    pub depth: usize,
    pub n_total: u64,
    pub cost_theoretical: f64,
    pub cost_measured: Option<f64>,
    /// `v(epsilon)` from [`complexity_scale`].
    pub scale: f64,
}

impl CostRow {
    pub fn normalized(&self) -> f64 {
        self.cost_theoretical / self.scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub rows: Vec<CostRow>,
}

impl CostTable {
    pub fn rows_for(&self, kind: EstimatorKind) -> Vec<CostRow> {
        self.rows.iter().filter(|r| r.kind == kind).copied().collect()
    }

    /// `(epsilon, cost_ML2R / cost_MLMC)` for each grid point.
    pub fn ml2r_over_mlmc(&self) -> Vec<(f64, f64)> {
        let a = self.rows_for(EstimatorKind::Ml2r);
        let b = self.rows_for(EstimatorKind::Mlmc);
        a.iter()
            .zip(&b)
            .map(|(x, y)| (x.epsilon, x.cost_theoretical / y.cost_theoretical))
            .collect()
    }

    /// Largest relative deviation of `cost * epsilon^2` from its grid mean.
    pub fn epsilon_squared_spread(&self, kind: EstimatorKind) -> f64 {
        let v: Vec<f64> = self
            .rows_for(kind)
            .iter()
            .map(|r| r.cost_theoretical * r.epsilon * r.epsilon)
            .collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x / m - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// Optional simulation to measure costs alongside the formulas.
pub struct Measurement<'a, S: ?Sized> {
    pub engine: &'a Engine,
    pub sampler: &'a S,
    pub seed: u64,
    /// Cap on the summed theoretical cost of all runs.
    pub budget: Option<f64>,
}

/// Theoretical (and optionally measured) cost of each kind on a grid of
/// at least four accuracies. `params` pairs each kind with its constants.
pub fn cost_scaling_study<S: LevelSampler + ?Sized>(
    params: &[(EstimatorKind, StructuralParams)],
    root: u32,
    epsilons: &[f64],
    measurement: Option<Measurement<'_, S>>,
) -> Result<CostTable> {
    if epsilons.len() < 4 {
        return Err(Error::invalid("cost study needs at least 4 epsilon values"));
    }
    let mut plans = Vec::new();
    for &(kind, p) in params {
        for &eps in epsilons {
            plans.push(calibrate(eps, &p, root, kind)?);
        }
    }
    if let Some(m) = &measurement {
        if let Some(budget) = m.budget {
            let projected: f64 = plans.iter().map(|p| p.theoretical_cost()).sum();
            if projected > budget {
                return Err(Error::BudgetExceeded { projected, budget });
            }
        }
    }
    let mut rows = Vec::with_capacity(plans.len());
    for (i, plan) in plans.iter().enumerate() {
        let cost_measured = match &measurement {
            Some(m) => Some(m.engine.run(plan, m.sampler, replication_seed(m.seed, i as u64))?.measured_cost),
            None => None,
        };
        rows.push(CostRow {
            epsilon: plan.epsilon,
            kind: plan.kind,
            depth: plan.depth,
            n_total: plan.n_total,
            cost_theoretical: plan.theoretical_cost(),
            cost_measured,
            scale: complexity_scale(plan.kind, plan.epsilon, plan.params.alpha, plan.params.beta, root),
        });
    }
    Ok(CostTable { rows })
}
