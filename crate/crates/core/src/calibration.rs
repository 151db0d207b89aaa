//! Optimal parameters for the MLMC and ML2R estimators.
//!
//! Given the structural constants of a biased family `(Y_h)` and a target
//! RMSE `epsilon`, this module computes the depth `R`, the bias parameter
//! `h = h_bold / n`, the allocation `q`, and the size `N`, and exposes the
//! asymptotic constants used to check the estimators' limiting behaviour.

use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::snapped_ceil;
use crate::weights::{limit_constants, ml2r_weights, WeightTable, LIMIT_TRUNCATION};

/// Default hard cap on the estimator size `N` (2^53).
pub const DEFAULT_SAMPLE_CAP: f64 = 9_007_199_254_740_992.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Mlmc,
    Ml2r,
}

impl EstimatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::Mlmc => "mlmc",
            EstimatorKind::Ml2r => "ml2r",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlmc" => Ok(EstimatorKind::Mlmc),
            "ml2r" => Ok(EstimatorKind::Ml2r),
            other => Err(Error::invalid(format!("unknown estimator kind `{other}`"))),
        }
    }
}

/// Structural constants of a biased family driving the calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuralParams {
    /// Weak error rate.
    pub alpha: f64,
    /// Strong error rate.
    pub beta: f64,
    /// Coarsest bias parameter.
    pub h_bold: f64,
    /// `Var(Y_0)`.
    pub var_y0: f64,
    /// Strong error constant `V_1`.
    pub v1: f64,
    /// Bias constant estimate: `c_1` for MLMC, `c~_inf` for ML2R.
    #[serde(default = "default_c_hat")]
    pub c_hat: f64,
}

fn default_c_hat() -> f64 {
    1.0
}

impl StructuralParams {
    pub fn new(alpha: f64, beta: f64, h_bold: f64, var_y0: f64, v1: f64, c_hat: f64) -> Result<Self> {
        let p = StructuralParams {
            alpha,
            beta,
            h_bold,
            var_y0,
            v1,
            c_hat,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.h_bold, self.var_y0, self.v1, self.c_hat];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("non-finite structural parameter in {self:?}")));
        }
        if self.alpha <= 0.0 || self.beta <= 0.0 {
            return Err(Error::invalid("alpha and beta must be > 0"));
        }
        if 2.0 * self.alpha < self.beta {
            return Err(Error::invalid(format!(
                "inconsistent rates: 2 alpha = {} < beta = {}",
                2.0 * self.alpha,
                self.beta
            )));
        }
        if self.h_bold <= 0.0 {
            return Err(Error::invalid("h_bold must be > 0"));
        }
        if self.var_y0 < 0.0 || self.v1 < 0.0 {
            return Err(Error::invalid("var_y0 and v1 must be >= 0"));
        }
        if self.c_hat == 0.0 {
            return Err(Error::invalid("c_hat must be non-zero"));
        }
        Ok(())
    }

    /// `theta = sqrt(V_1 / Var(Y_0))`; a zero-variance family is treated as
    /// deterministic (`theta = 0`).
    pub fn theta(&self) -> f64 {
        if self.var_y0 <= 0.0 {
            0.0
        } else {
            (self.v1 / self.var_y0).sqrt()
        }
    }

    pub fn with_c_hat(mut self, c_hat: f64) -> Self {
        self.c_hat = c_hat;
        self
    }
}

/// `C_{M,beta}` (lower) = `(1 + M^{beta/2}) / sqrt(1 + 1/M)`.
pub fn c_lower(root: u32, beta: f64) -> f64 {
    let m = root as f64;
    (1.0 + m.powf(beta / 2.0)) / (1.0 + 1.0 / m).sqrt()
}

/// `C_{M,beta}` (upper) = `(1 + M^{beta/2}) sqrt(1 + 1/M)`.
pub fn c_upper(root: u32, beta: f64) -> f64 {
    let m = root as f64;
    (1.0 + m.powf(beta / 2.0)) * (1.0 + 1.0 / m).sqrt()
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::invalid(format!("epsilon must be > 0, got {epsilon}")));
    }
    Ok(())
}

fn check_root(root: u32) -> Result<()> {
    if root < 2 {
        return Err(Error::invalid(format!("root M must be >= 2, got {root}")));
    }
    Ok(())
}

/// Unclamped real-valued ML2R depth before the ceiling.
pub fn depth_ml2r_real(epsilon: f64, p: &StructuralParams, root: u32) -> Result<f64> {
    check_epsilon(epsilon)?;
    check_root(root)?;
    p.validate()?;
    let log_m = (root as f64).ln();
    let a = (1.0 + 4.0 * p.alpha).sqrt();
    let c1 = 0.5 + (p.c_hat.abs().powf(1.0 / p.alpha) * p.h_bold).ln() / log_m;
    let c2 = c1 * c1 + 2.0 * a.ln() / (p.alpha * log_m);
    let inner = c2 + 2.0 / (p.alpha * log_m) * (1.0 / epsilon).ln();
    Ok(c1 + inner.max(0.0).sqrt())
}

/// Unclamped real-valued MLMC depth before the ceiling.
pub fn depth_mlmc_real(epsilon: f64, p: &StructuralParams, root: u32) -> Result<f64> {
    check_epsilon(epsilon)?;
    check_root(root)?;
    p.validate()?;
    let log_m = (root as f64).ln();
    let a = (1.0 + 2.0 * p.alpha).sqrt();
    let c1 = 1.0 + (p.c_hat.abs().powf(1.0 / p.alpha) * p.h_bold).ln() / log_m + a.ln() / (p.alpha * log_m);
    Ok(c1 + (1.0 / epsilon).ln() / (p.alpha * log_m))
}

fn clamp_depth(raw: f64, kind: EstimatorKind, epsilon: f64) -> usize {
    let r = snapped_ceil(raw);
    if r < 2.0 {
        warn!("{kind} depth formula gives {r} at epsilon = {epsilon}; clamped to 2");
        2
    } else {
        r as usize
    }
}

/// ML2R depth `R(epsilon)`, clamped below at 2.
pub fn depth_ml2r(epsilon: f64, p: &StructuralParams, root: u32) -> Result<usize> {
    let raw = depth_ml2r_real(epsilon, p, root)?;
    Ok(clamp_depth(raw, EstimatorKind::Ml2r, epsilon))
}

/// MLMC depth `R(epsilon)`, clamped below at 2.
pub fn depth_mlmc(epsilon: f64, p: &StructuralParams, root: u32) -> Result<usize> {
    let raw = depth_mlmc_real(epsilon, p, root)?;
    Ok(clamp_depth(raw, EstimatorKind::Mlmc, epsilon))
}

pub fn depth(epsilon: f64, p: &StructuralParams, root: u32, kind: EstimatorKind) -> Result<usize> {
    match kind {
        EstimatorKind::Mlmc => depth_mlmc(epsilon, p, root),
        EstimatorKind::Ml2r => depth_ml2r(epsilon, p, root),
    }
}

/// A bias parameter on the grid `{h_bold / n}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasChoice {
    pub divisor: u64,
    pub h: f64,
    /// Real-valued argument of the ceiling.
    pub ceiling_argument: f64,
}

/// Optimal bias parameter `h(epsilon) = h_bold / ceil(...)`.
pub fn bias_parameter(
    epsilon: f64,
    depth: usize,
    p: &StructuralParams,
    root: u32,
    kind: EstimatorKind,
) -> Result<BiasChoice> {
    check_epsilon(epsilon)?;
    check_root(root)?;
    p.validate()?;
    if depth < 1 {
        return Err(Error::invalid("depth must be >= 1"));
    }
    let m = root as f64;
    let r = depth as f64;
    let alpha = p.alpha;
    let c = p.c_hat.abs().powf(1.0 / alpha);
    let arg = match kind {
        EstimatorKind::Ml2r => {
            p.h_bold
                * (1.0 + 2.0 * alpha * r).powf(1.0 / (2.0 * alpha * r))
                * c
                * epsilon.powf(-1.0 / (alpha * r))
                * m.powf(-(r - 1.0) / 2.0)
        }
        EstimatorKind::Mlmc => {
            p.h_bold
                * (1.0 + 2.0 * alpha).powf(1.0 / (2.0 * alpha))
                * c
                * epsilon.powf(-1.0 / alpha)
                * m.powf(-(r - 1.0))
        }
    };
    let n = snapped_ceil(arg).max(1.0);
    if n > DEFAULT_SAMPLE_CAP {
        return Err(Error::invalid(format!("bias divisor {n:.3e} is out of range")));
    }
    let divisor = n as u64;
    Ok(BiasChoice {
        divisor,
        h: p.h_bold / divisor as f64,
        ceiling_argument: arg,
    })
}

/// Allocation `q` and its normaliser `mu*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub q: Vec<f64>,
    pub mu_star: f64,
}

/// Optimal allocation for fixed `(R, h, M)`. `weights` carries `W_j`
/// (all ones for MLMC).
pub fn allocation(p: &StructuralParams, h: f64, root: u32, weights: &WeightTable) -> Result<Allocation> {
    check_root(root)?;
    p.validate()?;
    if !(h > 0.0) {
        return Err(Error::invalid("h must be > 0"));
    }
    let m = root as f64;
    let beta = p.beta;
    let theta = p.theta();
    let th = theta * h.powf(beta / 2.0);
    let cl = c_lower(root, beta);
    let mut q = Vec::with_capacity(weights.depth);
    q.push(1.0 + th);
    for j in 2..=weights.depth {
        let wj = weights.cumulative[j - 1].abs();
        q.push(th * cl * wj * m.powf(-(1.0 + beta) * (j - 1) as f64 / 2.0));
    }
    let total: f64 = q.iter().sum();
    for qj in q.iter_mut() {
        *qj /= total;
    }
    if let Some(level) = q.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::DegenerateAllocation {
            level: level + 1,
            theta,
        });
    }
    Ok(Allocation {
        q,
        mu_star: 1.0 / total,
    })
}

/// Estimator size `N(epsilon)` (already rounded up).
#[allow(clippy::too_many_arguments)]
pub fn sample_size(
    epsilon: f64,
    p: &StructuralParams,
    h: f64,
    root: u32,
    mu_star: f64,
    weights: &WeightTable,
    kind: EstimatorKind,
    cap: f64,
) -> Result<u64> {
    let raw = sample_size_real(epsilon, p, h, root, mu_star, weights, kind)?;
    let n = snapped_ceil(raw).max(1.0);
    if n > cap {
        return Err(Error::SampleSizeOverflow { requested: n, cap });
    }
    Ok(n as u64)
}

/// Real-valued `N(epsilon)` before the ceiling.
pub fn sample_size_real(
    epsilon: f64,
    p: &StructuralParams,
    h: f64,
    root: u32,
    mu_star: f64,
    weights: &WeightTable,
    kind: EstimatorKind,
) -> Result<f64> {
    check_epsilon(epsilon)?;
    check_root(root)?;
    p.validate()?;
    if !(mu_star > 0.0) {
        return Err(Error::invalid("mu_star must be > 0"));
    }
    let depth = weights.depth as f64;
    let factor = match kind {
        EstimatorKind::Ml2r => 1.0 + 1.0 / (2.0 * p.alpha * depth),
        EstimatorKind::Mlmc => 1.0 + 1.0 / (2.0 * p.alpha),
    };
    let th = p.theta() * h.powf(p.beta / 2.0);
    let series = weights.weighted_geometric_sum((1.0 - p.beta) / 2.0, None);
    let bracket = 1.0 + th + th * c_upper(root, p.beta) * series;
    Ok(factor * p.var_y0 * bracket / (epsilon * epsilon * mu_star))
}

/// A fully calibrated estimator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultilevelPlan {
    pub kind: EstimatorKind,
    pub epsilon: f64,
    pub root: u32,
    pub depth: usize,
    pub params: StructuralParams,
    pub theta: f64,
    pub h_bold: f64,
    pub bias_divisor: u64,
    pub h: f64,
    pub q: Vec<f64>,
    pub mu_star: f64,
    pub n_total: u64,
    pub level_sizes: Vec<u64>,
    pub weights: WeightTable,
    pub refiners: Vec<u64>,
    /// Set when `theta = 0` forced a single-level plan.
    #[serde(default)]
    pub degenerate: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl MultilevelPlan {
    /// Cumulative weight `W_j` (1-based).
    pub fn level_weight(&self, j: usize) -> f64 {
        self.weights.cumulative[j - 1]
    }

    /// Cost in `1/h` units: `(N/h) sum_j q_j (n_{j-1} + n_j)`, `n_0 = 0`.
    pub fn theoretical_cost(&self) -> f64 {
        theoretical_cost(self)
    }

    /// Checks the plan invariants; used after deserialising a plan file.
    pub fn validate(&self) -> Result<()> {
        let r = self.depth;
        let bad = |m: &str| Err(Error::invalid(format!("plan invariant violated: {m}")));
        if r == 0 || self.q.len() != r || self.level_sizes.len() != r || self.refiners.len() != r {
            return bad("length mismatch");
        }
        if self.weights.depth != r || self.weights.cumulative.len() != r {
            return bad("weight table depth");
        }
        if r < 2 && !self.degenerate {
            return bad("depth < 2 on a non-degenerate plan");
        }
        if (self.q.iter().sum::<f64>() - 1.0).abs() > 1e-12 || self.q.iter().any(|&x| !(x > 0.0)) {
            return bad("allocation");
        }
        for (j, (&qj, &nj)) in self.q.iter().zip(&self.level_sizes).enumerate() {
            let expect = snapped_ceil(self.n_total as f64 * qj).max(1.0) as u64;
            if nj != expect || nj < 1 {
                return bad(&format!("N_{} = {nj}, expected {expect}", j + 1));
            }
        }
        for (j, &n) in self.refiners.iter().enumerate() {
            if n != (self.root as u64).pow(j as u32) {
                return bad("refiners");
            }
        }
        if (self.h - self.h_bold / self.bias_divisor as f64).abs() > 1e-15 * self.h_bold {
            return bad("h is not h_bold / divisor");
        }
        if self.kind == EstimatorKind::Ml2r && !self.degenerate && (self.weights.alpha != self.params.alpha || self.weights.is_unit()) {
            return bad("ML2R weights");
        }
        Ok(())
    }
}

pub fn theoretical_cost(plan: &MultilevelPlan) -> f64 {
    let mut prev = 0.0;
    let mut acc = 0.0;
    for (qj, &n) in plan.q.iter().zip(&plan.refiners) {
        let n = n as f64;
        acc += qj * (prev + n);
        prev = n;
    }
    plan.n_total as f64 / plan.h * acc
}

/// Calibrates a plan with the default sample-size cap.
pub fn calibrate(epsilon: f64, p: &StructuralParams, root: u32, kind: EstimatorKind) -> Result<MultilevelPlan> {
    calibrate_with_cap(epsilon, p, root, kind, DEFAULT_SAMPLE_CAP)
}

pub fn calibrate_with_cap(
    epsilon: f64,
    p: &StructuralParams,
    root: u32,
    kind: EstimatorKind,
    cap: f64,
) -> Result<MultilevelPlan> {
    check_epsilon(epsilon)?;
    check_root(root)?;
    p.validate()?;
    let mut warnings = Vec::new();

    let raw_depth = match kind {
        EstimatorKind::Mlmc => depth_mlmc_real(epsilon, p, root)?,
        EstimatorKind::Ml2r => depth_ml2r_real(epsilon, p, root)?,
    };
    let depth = clamp_depth(raw_depth, kind, epsilon);
    if snapped_ceil(raw_depth) < 2.0 {
        warnings.push(format!("depth formula gave {raw_depth:.4}; clamped to R = 2"));
    }

    if p.theta() == 0.0 {
        let msg = "theta = 0 (V1 = 0 or Var(Y0) = 0): degraded to a single-level plan".to_string();
        warn!("{msg}");
        warnings.push(msg);
        return single_level_plan(epsilon, p, root, kind, cap, warnings);
    }

    let bias = bias_parameter(epsilon, depth, p, root, kind)?;
    let weights = match kind {
        EstimatorKind::Mlmc => WeightTable::unit(p.alpha, root, depth)?,
        EstimatorKind::Ml2r => ml2r_weights(p.alpha, root, depth)?,
    };
    let alloc = allocation(p, bias.h, root, &weights)?;
    let n_total = sample_size(epsilon, p, bias.h, root, alloc.mu_star, &weights, kind, cap)?;
    let level_sizes = level_sizes(n_total, &alloc.q);
    let refiners = (0..depth).map(|j| (root as u64).pow(j as u32)).collect();
    let plan = MultilevelPlan {
        kind,
        epsilon,
        root,
        depth,
        params: *p,
        theta: p.theta(),
        h_bold: p.h_bold,
        bias_divisor: bias.divisor,
        h: bias.h,
        q: alloc.q,
        mu_star: alloc.mu_star,
        n_total,
        level_sizes,
        weights,
        refiners,
        degenerate: false,
        warnings,
    };
    plan.validate()?;
    Ok(plan)
}

fn level_sizes(n_total: u64, q: &[f64]) -> Vec<u64> {
    q.iter()
        .map(|&qj| snapped_ceil(n_total as f64 * qj).max(1.0) as u64)
        .collect()
}

fn single_level_plan(
    epsilon: f64,
    p: &StructuralParams,
    root: u32,
    kind: EstimatorKind,
    cap: f64,
    warnings: Vec<String>,
) -> Result<MultilevelPlan> {
    let weights = WeightTable::unit(p.alpha, root, 1)?;
    let bias = bias_parameter(epsilon, 1, p, root, kind)?;
    let alloc = allocation(p, bias.h, root, &weights)?;
    let n_total = sample_size(epsilon, p, bias.h, root, alloc.mu_star, &weights, kind, cap)?;
    let plan = MultilevelPlan {
        kind,
        epsilon,
        root,
        depth: 1,
        params: *p,
        theta: 0.0,
        h_bold: p.h_bold,
        bias_divisor: bias.divisor,
        h: bias.h,
        level_sizes: level_sizes(n_total, &alloc.q),
        q: alloc.q,
        mu_star: alloc.mu_star,
        n_total,
        weights,
        refiners: vec![1],
        degenerate: true,
        warnings,
    };
    plan.validate()?;
    Ok(plan)
}

/// Limit `mu*` of the normaliser as `R -> infinity` at `h = h_bold`.
pub fn asymptotic_mu_star(p: &StructuralParams, root: u32) -> f64 {
    let m = root as f64;
    let th = p.theta() * p.h_bold.powf(p.beta / 2.0);
    1.0 / (1.0 + th * (1.0 + c_lower(root, p.beta) / (m.powf((1.0 + p.beta) / 2.0) - 1.0)))
}

/// Bounds `(lower, upper)` on `mu*(epsilon)` at bias parameter `h`.
pub fn mu_star_bounds(p: &StructuralParams, root: u32, kind: EstimatorKind, h: f64) -> Result<(f64, f64)> {
    let m = root as f64;
    let th = p.theta() * h.powf(p.beta / 2.0);
    let w_bound = match kind {
        EstimatorKind::Mlmc => 1.0,
        EstimatorKind::Ml2r => limit_constants(p.alpha, root)?.weight_bound(),
    };
    let upper = 1.0 / (1.0 + th);
    let lower = 1.0 / (1.0 + th * (1.0 + c_lower(root, p.beta) * w_bound / (1.0 - m.powf(-(p.beta + 1.0) / 2.0))));
    Ok((lower, upper))
}

/// Constant `C_beta` in `N(epsilon) ~ C_beta epsilon^{-2} {1, R, M^{(1-beta)R/2}}`.
pub fn asymptotic_size_constant(p: &StructuralParams, root: u32, kind: EstimatorKind) -> Result<f64> {
    check_root(root)?;
    p.validate()?;
    let m = root as f64;
    let beta = p.beta;
    let theta = p.theta();
    let mlmc_factor = 1.0 + 1.0 / (2.0 * p.alpha);
    let base = p.var_y0 / asymptotic_mu_star(p, root);
    let th = theta * p.h_bold.powf(beta / 2.0);
    let cu = c_upper(root, beta);
    let c = if beta > 1.0 {
        let g = m.powf((1.0 - beta) / 2.0);
        let bracket = 1.0 + th * (1.0 + cu * g / (1.0 - g));
        base * bracket
            * match kind {
                EstimatorKind::Ml2r => 1.0,
                EstimatorKind::Mlmc => mlmc_factor,
            }
    } else if beta == 1.0 {
        base * th * cu
            * match kind {
                EstimatorKind::Ml2r => 1.0,
                EstimatorKind::Mlmc => mlmc_factor,
            }
    } else {
        let gamma = (1.0 - beta) / 2.0;
        let series = match kind {
            EstimatorKind::Ml2r => ml2r_boundary_series(p.alpha, root, gamma)?,
            EstimatorKind::Mlmc => mlmc_factor / (m.powf(gamma) - 1.0),
        };
        base * th * cu * series
    };
    Ok(c)
}

/// `a_inf sum_{j>=1} |sum_{l<j} b_l| M^{-gamma j}` for `gamma > 0`.
///
/// Terms up to `j = 50` are summed explicitly; beyond that the partial sums
/// of `b` equal `B_inf` to machine precision and the geometric tail is added
/// in closed form.
fn ml2r_boundary_series(alpha: f64, root: u32, gamma: f64) -> Result<f64> {
    let m = root as f64;
    let (_, b) = crate::weights::closed_form_coeffs(alpha, root, LIMIT_TRUNCATION + 1)?;
    let lim = limit_constants(alpha, root)?;
    let mut partial = 0.0;
    let mut acc = 0.0;
    for j in 1..=LIMIT_TRUNCATION {
        partial += b[j - 1];
        acc += partial.abs() * m.powf(-gamma * j as f64);
    }
    let ratio = m.powf(-gamma);
    let tail = lim.b_sum.abs() * ratio.powi(LIMIT_TRUNCATION as i32 + 1) / (1.0 - ratio);
    Ok(lim.a_inf * (acc + tail))
}

/// Asymptotic band `(M^{-alpha}, 1) / sqrt(1 + 2 alpha)` for the MLMC
/// normalised bias.
pub fn bias_band(alpha: f64, root: u32) -> Result<(f64, f64)> {
    if !(alpha > 0.0) {
        return Err(Error::invalid("alpha must be > 0"));
    }
    check_root(root)?;
    let s = (1.0 + 2.0 * alpha).sqrt();
    Ok(((root as f64).powf(-alpha) / s, 1.0 / s))
}

/// Level-variance information for the limiting variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LevelVariances {
    /// `beta > 1`: `Var(Y_hbold)` and `Var(Z_j)` for `j = 2, 3, ...`. The
    /// sequence is extended by its last entry.
    Sequence { var_y_hbold: f64, var_z: Vec<f64> },
    /// `beta <= 1`: `v_inf = lim ||Z(h)||_2^2`, and `c_1` when `2 alpha = beta`.
    Limit { v_inf: f64, c1: Option<f64> },
}

/// Predicted limiting variance of `(I - I_0)/epsilon - m(epsilon)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CltVariance {
    /// Coarse-level share (`beta > 1` only, before the MLMC factor).
    pub sigma1_sq: Option<f64>,
    /// Refined-level share (`beta > 1` only, before the MLMC factor).
    pub sigma2_sq: Option<f64>,
    /// Total variance, MLMC factor `2 alpha / (2 alpha + 1)` included.
    pub total: f64,
}

pub fn clt_variance(
    p: &StructuralParams,
    root: u32,
    kind: EstimatorKind,
    input: &LevelVariances,
) -> Result<CltVariance> {
    check_root(root)?;
    p.validate()?;
    let m = root as f64;
    let (alpha, beta) = (p.alpha, p.beta);
    if 2.0 * alpha < beta {
        return Err(Error::Regime(format!("2 alpha = {} < beta = {beta}", 2.0 * alpha)));
    }
    let kind_factor = match kind {
        EstimatorKind::Ml2r => 1.0,
        EstimatorKind::Mlmc => 2.0 * alpha / (2.0 * alpha + 1.0),
    };
    if beta > 1.0 {
        let LevelVariances::Sequence { var_y_hbold, var_z } = input else {
            return Err(Error::Regime("beta > 1 needs the Var(Z_j) sequence".into()));
        };
        if var_z.is_empty() {
            return Err(Error::invalid("empty Var(Z_j) sequence"));
        }
        if !(p.var_y0 > 0.0) || !(p.v1 > 0.0) {
            return Err(Error::invalid("Var(Y0) and V1 must be > 0"));
        }
        let th = p.theta() * p.h_bold.powf(beta / 2.0);
        let g = m.powf((1.0 - beta) / 2.0);
        let sigma = 1.0 + th * (1.0 + c_upper(root, beta) * g / (1.0 - g));
        let mut series = 0.0;
        for (i, v) in var_z.iter().enumerate() {
            series += g.powi(i as i32 + 1) * v;
        }
        let last = *var_z.last().unwrap();
        series += last * g.powi(var_z.len() as i32 + 1) / (1.0 - g);
        let s1 = var_y_hbold / (p.var_y0 * (1.0 + th)) / sigma;
        let s2 = p.h_bold.powf(beta / 2.0) * series / ((p.var_y0 * p.v1).sqrt() * c_lower(root, beta)) / sigma;
        Ok(CltVariance {
            sigma1_sq: Some(s1),
            sigma2_sq: Some(s2),
            total: kind_factor * (s1 + s2),
        })
    } else {
        let LevelVariances::Limit { v_inf, c1 } = input else {
            return Err(Error::Regime("beta <= 1 needs v_inf".into()));
        };
        if kind == EstimatorKind::Mlmc && beta < 1.0 && 2.0 * alpha <= beta {
            return Err(Error::Regime("MLMC with beta < 1 requires 2 alpha > beta".into()));
        }
        if !(p.v1 > 0.0) {
            return Err(Error::invalid("V1 must be > 0"));
        }
        let mut v = *v_inf;
        if 2.0 * alpha == beta {
            let c1 = c1.ok_or_else(|| Error::Regime("2 alpha = beta needs c1".into()))?;
            v -= c1 * c1 * (1.0 - m.powf(beta / 2.0)).powi(2);
        }
        let sigma_sq = v / ((1.0 + m.powf(beta / 2.0)).powi(2) * p.v1);
        Ok(CltVariance {
            sigma1_sq: None,
            sigma2_sq: None,
            total: kind_factor * sigma_sq,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::ml2r_weights;

    fn unit_params() -> StructuralParams {
        StructuralParams::new(1.0, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(StructuralParams::new(1.0, 3.0, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(StructuralParams::new(0.0, 1.0, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(StructuralParams::new(1.0, 1.0, -1.0, 1.0, 1.0, 1.0).is_err());
        assert!(StructuralParams::new(1.0, 1.0, 1.0, 1.0, 1.0, 0.0).is_err());
        let p = StructuralParams::new(1.0, 1.0, 1.0, 4.0, 1.0, 1.0).unwrap();
        assert!((p.theta() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn depth_examples() {
        let p = unit_params();
        let eps = 2f64.powi(-5);
        // 0.5 + sqrt(0.25 + log2(5) + 10) = 4.0457
        assert!((depth_ml2r_real(eps, &p, 2).unwrap() - 4.045_691_483_319_913).abs() < 1e-12);
        assert_eq!(depth_ml2r(eps, &p, 2).unwrap(), 5);
        // 1 + log2(sqrt 3) + 5 = 6.7925
        assert!((depth_mlmc_real(eps, &p, 2).unwrap() - 6.792_481_250_360_579).abs() < 1e-12);
        assert_eq!(depth_mlmc(eps, &p, 2).unwrap(), 7);
    }

    #[test]
    fn depth_clamps_at_two() {
        let p = unit_params();
        assert!(depth_ml2r_real(10.0, &p, 2).unwrap() < 2.0);
        assert_eq!(depth_ml2r(10.0, &p, 2).unwrap(), 2);
        assert!(depth_mlmc_real(10.0, &p, 2).unwrap() < 2.0);
        assert_eq!(depth_mlmc(10.0, &p, 2).unwrap(), 2);
        assert!(depth_ml2r(0.0, &p, 2).is_err());
        assert!(depth_mlmc(-1.0, &p, 2).is_err());
    }

    #[test]
    fn depth_monotone_and_growth() {
        let p = unit_params();
        for &e in &[1e-2, 1e-3, 1e-4] {
            assert!(depth_ml2r(e / 10.0, &p, 2).unwrap() >= depth_ml2r(e, &p, 2).unwrap());
            assert!(depth_mlmc(e / 10.0, &p, 2).unwrap() >= depth_mlmc(e, &p, 2).unwrap());
        }
        // MLMC depth grows by log(1/eps) / (alpha log M)
        let d = depth_mlmc_real(1e-6, &p, 2).unwrap() - depth_mlmc_real(1e-3, &p, 2).unwrap();
        assert!((d - 3.0 * 10f64.ln() / 2f64.ln()).abs() < 1e-9);
        // ML2R depth grows like sqrt(2 log(1/eps) / (alpha log M))
        let r = |e: f64| depth_ml2r_real(e, &p, 2).unwrap();
        let ratio = (r(1e-40) - 0.5) / (r(1e-10) - 0.5);
        assert!((ratio - 2.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn bias_parameter_examples() {
        let p = unit_params();
        let b = bias_parameter(2f64.powi(-5), 5, &p, 2, EstimatorKind::Ml2r).unwrap();
        assert!((b.ceiling_argument - 0.635_490_807_605_070_4).abs() < 1e-12);
        assert_eq!(b.divisor, 1);
        assert_eq!(b.h, 1.0);

        let big = p.with_c_hat(1e6);
        let b = bias_parameter(2f64.powi(-5), 5, &big, 2, EstimatorKind::Ml2r).unwrap();
        assert!(b.h < 1.0);
        assert_eq!(b.h, 1.0 / b.divisor as f64);
    }

    #[test]
    fn allocation_examples() {
        let p = unit_params();
        // R = 1: q = [1], mu* = 1/(1 + theta h^{beta/2})
        let w1 = ml2r_weights(1.0, 2, 1).unwrap();
        let a = allocation(&p, 1.0, 2, &w1).unwrap();
        assert_eq!(a.q, vec![1.0]);
        assert!((a.mu_star - 0.5).abs() < 1e-15);

        // R = 3 with W = [1, 2/3, 8/3]: unnormalised q = [2, (2/3) C 2^{-1}, (8/3) C 2^{-2}]
        let w3 = ml2r_weights(1.0, 2, 3).unwrap();
        let a = allocation(&p, 1.0, 2, &w3).unwrap();
        let c = (1.0 + 2f64.sqrt()) / 1.5f64.sqrt();
        let raw = [2.0, 2.0 / 3.0 * c / 2.0, 8.0 / 3.0 * c / 4.0];
        let total: f64 = raw.iter().sum();
        for (q, r) in a.q.iter().zip(raw) {
            assert!((q - r / total).abs() < 1e-14);
        }
        assert!((a.mu_star - 1.0 / total).abs() < 1e-14);
        assert!((a.q[0] / a.mu_star - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_theta_is_degenerate() {
        let p = StructuralParams::new(1.0, 1.0, 1.0, 1.0, 0.0, 1.0).unwrap();
        let w = ml2r_weights(1.0, 2, 3).unwrap();
        match allocation(&p, 1.0, 2, &w) {
            Err(Error::DegenerateAllocation { level, .. }) => assert_eq!(level, 2),
            other => panic!("expected degenerate allocation, got {other:?}"),
        }
        let plan = calibrate(0.01, &p, 2, EstimatorKind::Ml2r).unwrap();
        assert!(plan.degenerate);
        assert_eq!(plan.q, vec![1.0]);
        assert_eq!(plan.depth, 1);
        assert!(!plan.warnings.is_empty());
        // classic Monte Carlo sizing with mu* = 1
        assert_eq!(plan.mu_star, 1.0);
        let expect = (1.0 + 0.5) * 1.0 / (0.01f64 * 0.01);
        assert_eq!(plan.n_total, snapped_ceil(expect) as u64);
    }

    #[test]
    fn calibrate_examples() {
        let p = unit_params();
        let eps = 2f64.powi(-5);
        let plan = calibrate(eps, &p, 2, EstimatorKind::Ml2r).unwrap();
        assert_eq!(plan.depth, 5);
        assert_eq!(plan.h, 1.0);
        // independent evaluation of the table rows (oracle script)
        assert_eq!(plan.n_total, 82_258);
        let expect_q = [0.503_626_473_306_121, 0.247_398_868_860_123_86, 0.135_517_851_732_297_16, 0.012_606_311_789_050_906, 0.100_850_494_312_407_17];
        for (a, b) in plan.q.iter().zip(expect_q) {
            assert!((a - b).abs() < 1e-12);
        }
        let plan = calibrate(eps, &p, 2, EstimatorKind::Mlmc).unwrap();
        assert_eq!(plan.depth, 7);
        assert_eq!(plan.h, 1.0);
        assert_eq!(plan.n_total, 119_481);
    }

    #[test]
    fn sample_size_overflow_guard() {
        let p = unit_params();
        let err = calibrate_with_cap(1e-3, &p, 2, EstimatorKind::Mlmc, 1000.0).unwrap_err();
        assert!(matches!(err, Error::SampleSizeOverflow { .. }));
    }

    #[test]
    fn sample_size_quadruples_when_epsilon_halves() {
        let p = StructuralParams::new(1.0, 2.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        for kind in [EstimatorKind::Mlmc, EstimatorKind::Ml2r] {
            let n1 = calibrate(1e-5, &p, 2, kind).unwrap().n_total as f64;
            let n2 = calibrate(5e-6, &p, 2, kind).unwrap().n_total as f64;
            assert!((n2 / n1 / 4.0 - 1.0).abs() < 0.10, "{kind}: {}", n2 / n1);
        }
    }

    #[test]
    fn plan_invariants_fuzz_grid() {
        for &eps in &[0.1, 0.03, 0.01, 3e-3, 1e-3] {
            for &alpha in &[0.5, 1.0] {
                for &beta in &[0.5, 1.0, 2.0] {
                    if 2.0 * alpha < beta {
                        continue;
                    }
                    let p = StructuralParams::new(alpha, beta, 1.0, 1.0, 0.7, 1.0).unwrap();
                    for kind in [EstimatorKind::Mlmc, EstimatorKind::Ml2r] {
                        let plan = calibrate(eps, &p, 2, kind).unwrap();
                        plan.validate().unwrap();
                        assert!(plan.depth >= 2);
                        if kind == EstimatorKind::Ml2r {
                            assert_eq!(plan.weights.depth, plan.depth);
                            assert_eq!(plan.weights.alpha, alpha);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn size_constant_examples() {
        let p = StructuralParams::new(1.0, 2.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let a = asymptotic_size_constant(&p, 2, EstimatorKind::Mlmc).unwrap();
        let b = asymptotic_size_constant(&p, 2, EstimatorKind::Ml2r).unwrap();
        assert!((a / b - 1.5).abs() < 1e-12);

        let p1 = StructuralParams::new(1.0, 1.0, 1.0, 2.0, 0.5, 1.0).unwrap();
        let c = asymptotic_size_constant(&p1, 2, EstimatorKind::Ml2r).unwrap();
        let expect = p1.var_y0 / asymptotic_mu_star(&p1, 2) * p1.theta() * c_upper(2, 1.0);
        assert!((c - expect).abs() < 1e-12);

        let p0 = StructuralParams::new(1.0, 1.0, 1.0, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(asymptotic_size_constant(&p0, 2, EstimatorKind::Ml2r).unwrap(), 0.0);
    }

    #[test]
    fn bias_band_examples() {
        let (lo, hi) = bias_band(1.0, 2).unwrap();
        assert!((lo - 0.5 / 3f64.sqrt()).abs() < 1e-15);
        assert!((hi - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!((lo - 0.288_675_134_594_812_9).abs() < 1e-12);
        let (lo, hi) = bias_band(0.5, 4).unwrap();
        assert!((lo - 0.5 / 2f64.sqrt()).abs() < 1e-15);
        assert!((hi - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        for &alpha in &[0.25, 1.0, 3.0] {
            for root in 2..6 {
                let (lo, hi) = bias_band(alpha, root).unwrap();
                assert!(lo < hi);
            }
        }
    }

    #[test]
    fn clt_variance_saturates_at_cap() {
        let p = StructuralParams::new(1.0, 1.0, 1.0, 2.0, 0.3, 1.0).unwrap();
        let cap = p.v1 * (1.0 + 2f64.sqrt()).powi(2);
        let v = clt_variance(&p, 2, EstimatorKind::Ml2r, &LevelVariances::Limit { v_inf: cap, c1: None }).unwrap();
        assert!((v.total - 1.0).abs() < 1e-12);

        let p2 = StructuralParams::new(1.0, 2.0, 0.5, 2.0, 0.3, 1.0).unwrap();
        let th = p2.theta() * p2.h_bold.powf(1.0);
        let var_y = p2.var_y0 * (1.0 + th).powi(2);
        let zcap = p2.v1 * (1.0 + 2.0f64).powi(2);
        let seq = LevelVariances::Sequence {
            var_y_hbold: var_y,
            var_z: vec![zcap; 3],
        };
        let v = clt_variance(&p2, 2, EstimatorKind::Ml2r, &seq).unwrap();
        assert!((v.sigma1_sq.unwrap() + v.sigma2_sq.unwrap() - 1.0).abs() < 1e-9);
        let vm = clt_variance(&p2, 2, EstimatorKind::Mlmc, &seq).unwrap();
        assert!((vm.total - 2.0 / 3.0 * v.total).abs() < 1e-12);
    }

    #[test]
    fn clt_variance_regimes() {
        let p = StructuralParams::new(0.5, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let lim = LevelVariances::Limit { v_inf: 2.0, c1: None };
        assert!(matches!(clt_variance(&p, 2, EstimatorKind::Ml2r, &lim), Err(Error::Regime(_))));
        let lim = LevelVariances::Limit { v_inf: 2.0, c1: Some(0.1) };
        let v = clt_variance(&p, 2, EstimatorKind::Ml2r, &lim).unwrap();
        let expect = (2.0 - 0.01 * (1.0 - 2f64.sqrt()).powi(2)) / (1.0 + 2f64.sqrt()).powi(2);
        assert!((v.total - expect).abs() < 1e-12);

        let pb = StructuralParams::new(0.25, 0.5, 1.0, 1.0, 1.0, 1.0).unwrap();
        let lim = LevelVariances::Limit { v_inf: 2.0, c1: Some(0.1) };
        assert!(matches!(clt_variance(&pb, 2, EstimatorKind::Mlmc, &lim), Err(Error::Regime(_))));
    }

    #[test]
    fn theoretical_cost_basics() {
        let p = unit_params();
        let mut plan = calibrate(0.01, &p, 2, EstimatorKind::Ml2r).unwrap();
        let c1 = plan.theoretical_cost();
        plan.n_total += 1;
        assert!(plan.theoretical_cost() > c1);

        let p0 = StructuralParams::new(1.0, 1.0, 1.0, 1.0, 0.0, 1.0).unwrap();
        let single = calibrate(0.1, &p0, 2, EstimatorKind::Mlmc).unwrap();
        assert!((single.theoretical_cost() - single.n_total as f64 / single.h).abs() < 1e-9);
    }

    #[test]
    fn ml2r_cheaper_than_mlmc_at_beta_one() {
        let p = unit_params();
        let ratio = |e: f64| {
            calibrate(e, &p, 2, EstimatorKind::Ml2r).unwrap().theoretical_cost()
                / calibrate(e, &p, 2, EstimatorKind::Mlmc).unwrap().theoretical_cost()
        };
        assert!(ratio(1e-3) < 1.0);
        assert!(ratio(1e-6) < ratio(1e-3));
    }
}
