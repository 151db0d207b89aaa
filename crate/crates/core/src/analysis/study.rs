//! Statistics of replicated estimator runs.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::calibration::{calibrate, EstimatorKind, StructuralParams};
use crate::engine::{Engine, LevelSampler, ReplicationStudy};
use crate::error::{Error, Result};
use crate::stream::replication_seed;

/// Asymptotic 5% critical value of the Kolmogorov distance, times `sqrt(K)`.
pub const KS_CRITICAL: f64 = 1.36;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub epsilon: f64,
    pub kind: EstimatorKind,
    pub replications: usize,
    pub mean: f64,
    /// Empirical RMSE against the oracle; `None` without one.
    pub rmse: Option<f64>,
    pub bias: Option<f64>,
    /// `bias / epsilon`.
    pub m_hat: Option<f64>,
    /// Standard error of `m_hat`.
    pub m_hat_se: f64,
    /// Sample standard deviation of the estimates.
    pub sd: f64,
    /// `sd / epsilon`.
    pub sigma_hat: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Kolmogorov distance of the standardised estimates to `N(0, 1)`.
    pub ks_distance: f64,
    pub cost_theoretical: f64,
    pub cost_measured_mean: f64,
    pub cost_measured_median: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Sup distance between the empirical CDF of `xs` and `cdf`.
pub fn ks_distance(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let g = cdf(x);
            ((i + 1) as f64 / n - g).max(g - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Skewness and excess kurtosis from central moments.
fn shape(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    let n = xs.len() as f64;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    if m2 == 0.0 {
        return (0.0, 0.0);
    }
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

/// Summary of `K >= 2` estimates produced at target RMSE `epsilon`.
pub fn summarize(
    epsilon: f64,
    kind: EstimatorKind,
    estimates: &[f64],
    cost_theoretical: f64,
    costs_measured: &[f64],
    i0: Option<f64>,
) -> Result<StudyReport> {
    let k = estimates.len();
    if k < 2 {
        return Err(Error::invalid("a study needs at least 2 replications"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be > 0"));
    }
    let mu = mean(estimates);
    let var = sample_variance(estimates);
    let sd = var.sqrt();
    let (bias, rmse, m_hat) = match i0 {
        Some(i0) => {
            let mse = estimates.iter().map(|x| (x - i0).powi(2)).sum::<f64>() / k as f64;
            let b = mu - i0;
            (Some(b), Some(mse.sqrt()), Some(b / epsilon))
        }
        None => (None, None, None),
    };
    let (skewness, excess_kurtosis) = shape(estimates);
    let ks = if sd > 0.0 {
        let n = Normal::standard();
        let z: Vec<f64> = estimates.iter().map(|x| (x - mu) / sd).collect();
        ks_distance(&z, |x| n.cdf(x))
    } else {
        0.0
    };
    let (cost_mean, cost_median) = if costs_measured.is_empty() {
        (0.0, 0.0)
    } else {
        (mean(costs_measured), median(costs_measured))
    };
    Ok(StudyReport {
        epsilon,
        kind,
        replications: k,
        mean: mu,
        rmse,
        bias,
        m_hat,
        m_hat_se: sd / (k as f64).sqrt() / epsilon,
        sd,
        sigma_hat: sd / epsilon,
        skewness,
        excess_kurtosis,
        ks_distance: ks,
        cost_theoretical,
        cost_measured_mean: cost_mean,
        cost_measured_median: cost_median,
    })
}

pub fn study_statistics(study: &ReplicationStudy, i0: Option<f64>) -> Result<StudyReport> {
    let costs: Vec<f64> = study.runs.iter().map(|r| r.measured_cost).collect();
    summarize(
        study.plan.epsilon,
        study.plan.kind,
        &study.estimates(),
        study.plan.theoretical_cost(),
        &costs,
        i0,
    )
}

/// Pass thresholds for [`clt_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CltThresholds {
    /// Accepted range of empirical over predicted variance.
    pub variance_ratio: (f64, f64),
    /// Multiplier on the `1.36 / sqrt(K)` critical distance.
    pub ks_slack: f64,
}

impl Default for CltThresholds {
    fn default() -> Self {
        CltThresholds {
            variance_ratio: (0.6, 1.4),
            ks_slack: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub replications: usize,
    /// Centre `m` subtracted from the scaled errors.
    pub center: f64,
    pub predicted_variance: f64,
    pub empirical_variance: f64,
    pub variance_ratio: f64,
    pub ks_distance: f64,
    pub ks_threshold: f64,
    pub variance_ok: bool,
    pub ks_ok: bool,
}

impl CltReport {
    pub fn passed(&self) -> bool {
        self.variance_ok && self.ks_ok
    }
}

/// Compares `(I - I_0)/epsilon - m` with `N(0, predicted_variance)`.
///
/// `center = None` uses the empirical `m_hat`. At least 200 replications are
/// advisable for the default thresholds.
pub fn clt_check(
    estimates: &[f64],
    epsilon: f64,
    i0: f64,
    predicted_variance: f64,
    center: Option<f64>,
    thresholds: &CltThresholds,
) -> Result<CltReport> {
    let k = estimates.len();
    if k < 2 {
        return Err(Error::invalid("CLT check needs at least 2 replications"));
    }
    if !(predicted_variance > 0.0) {
        return Err(Error::invalid("predicted variance must be > 0"));
    }
    let scaled: Vec<f64> = estimates.iter().map(|x| (x - i0) / epsilon).collect();
    let m = center.unwrap_or_else(|| mean(&scaled));
    let sigma = predicted_variance.sqrt();
    let z: Vec<f64> = scaled.iter().map(|x| (x - m) / sigma).collect();
    let n = Normal::standard();
    let ks = ks_distance(&z, |x| n.cdf(x));
    let empirical = sample_variance(&scaled);
    let ratio = empirical / predicted_variance;
    let threshold = thresholds.ks_slack * KS_CRITICAL / (k as f64).sqrt();
    Ok(CltReport {
        replications: k,
        center: m,
        predicted_variance,
        empirical_variance: empirical,
        variance_ratio: ratio,
        ks_distance: ks,
        ks_threshold: threshold,
        variance_ok: (thresholds.variance_ratio.0..=thresholds.variance_ratio.1).contains(&ratio),
        ks_ok: ks <= threshold,
    })
}

pub fn clt_check_study(
    study: &ReplicationStudy,
    i0: f64,
    predicted_variance: f64,
    center: Option<f64>,
    thresholds: &CltThresholds,
) -> Result<CltReport> {
    clt_check(&study.estimates(), study.plan.epsilon, i0, predicted_variance, center, thresholds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SllnRow {
    pub epsilon: f64,
    pub estimate: f64,
    pub error: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SllnReport {
    pub kind: EstimatorKind,
    pub rows: Vec<SllnRow>,
    /// Smallest `C` with `|error_k| <= C epsilon_k` for every `k`.
    pub fitted_constant: f64,
}

impl SllnReport {
    pub fn dominated_by(&self, c: f64) -> bool {
        self.fitted_constant <= c
    }
}

/// One estimator per `epsilon_k`, each with its own derived seed.
#[allow(clippy::too_many_arguments)]
pub fn slln_decay_check<S: LevelSampler + ?Sized>(
    engine: &Engine,
    sampler: &S,
    params: &StructuralParams,
    root: u32,
    kind: EstimatorKind,
    epsilons: &[f64],
    seed: u64,
    i0: f64,
) -> Result<SllnReport> {
    if epsilons.is_empty() {
        return Err(Error::invalid("empty epsilon sequence"));
    }
    let mut rows = Vec::with_capacity(epsilons.len());
    for (k, &eps) in epsilons.iter().enumerate() {
        let plan = calibrate(eps, params, root, kind)?;
        let run = engine.run(&plan, sampler, replication_seed(seed, k as u64))?;
        let error = (run.estimate - i0).abs();
        rows.push(SllnRow {
            epsilon: eps,
            estimate: run.estimate,
            error,
            ratio: error / eps,
        });
    }
    let fitted_constant = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(SllnReport {
        kind,
        rows,
        fitted_constant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{LevelSample, LevelSpec};
    use crate::stream::{Domain, DrawStream};

    fn gaussian_sample(n: usize, mu: f64, sd: f64, seed: u64) -> Vec<f64> {
        let mut s = DrawStream::new(seed, Domain::Audit, 1, 0);
        (0..n).map(|_| mu + sd * s.normal()).collect()
    }

    #[test]
    fn exact_runs_have_zero_error() {
        let xs = vec![0.5; 10];
        let r = summarize(0.1, EstimatorKind::Mlmc, &xs, 1.0, &[], Some(0.5)).unwrap();
        assert_eq!(r.rmse, Some(0.0));
        assert_eq!(r.bias, Some(0.0));
        assert_eq!(r.sd, 0.0);
    }

    #[test]
    fn rmse_decomposition_identity() {
        let xs = gaussian_sample(137, 1.02, 0.3, 1);
        let r = summarize(0.1, EstimatorKind::Ml2r, &xs, 1.0, &[], Some(1.0)).unwrap();
        let k = xs.len() as f64;
        let lhs = r.rmse.unwrap().powi(2);
        let rhs = r.bias.unwrap().powi(2) + (k - 1.0) / k * r.sd * r.sd;
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn synthetic_rmse_scaling() {
        let eps = 0.01;
        let xs = gaussian_sample(2000, 0.0, 0.6 * eps, 2);
        let r = summarize(eps, EstimatorKind::Ml2r, &xs, 1.0, &[], Some(0.0)).unwrap();
        assert!((r.rmse.unwrap() / eps / 0.6 - 1.0).abs() < 0.05);
        assert!(r.skewness.abs() < 0.2 && r.excess_kurtosis.abs() < 0.4);
    }

    #[test]
    fn missing_oracle_omits_bias() {
        let xs = gaussian_sample(10, 0.0, 1.0, 3);
        let r = summarize(0.1, EstimatorKind::Ml2r, &xs, 1.0, &[1.0, 3.0, 2.0], None).unwrap();
        assert!(r.rmse.is_none() && r.bias.is_none() && r.m_hat.is_none());
        assert_eq!(r.cost_measured_median, 2.0);
        assert!(summarize(0.1, EstimatorKind::Ml2r, &xs[..1], 1.0, &[], None).is_err());
    }

    #[test]
    fn ks_distance_examples() {
        assert!((ks_distance(&[0.5], |x| x) - 0.5).abs() < 1e-15);
        let u: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_distance(&u, |x| x) - 0.005).abs() < 1e-12);
    }

    #[test]
    fn clt_check_on_matching_gaussians() {
        let (eps, i0, var) = (0.01, 1.0, 0.8f64);
        let xs = gaussian_sample(500, i0, eps * var.sqrt(), 4);
        let rep = clt_check(&xs, eps, i0, var, Some(0.0), &CltThresholds::default()).unwrap();
        assert!((0.8..=1.25).contains(&rep.variance_ratio), "{rep:?}");
        assert!(rep.ks_distance < 1.5 * KS_CRITICAL / (500f64).sqrt());
        assert!(rep.passed());
    }

    #[test]
    fn clt_check_pass_rate_on_normal_data() {
        let (eps, var) = (0.05, 0.5f64);
        let passes = (0..100)
            .filter(|&seed| {
                let xs = gaussian_sample(300, 0.0, eps * var.sqrt(), 100 + seed);
                clt_check(&xs, eps, 0.0, var, Some(0.0), &CltThresholds::default()).unwrap().passed()
            })
            .count();
        assert!(passes >= 90, "{passes}");
    }

    #[test]
    fn clt_check_rejects_wrong_variance() {
        let xs = gaussian_sample(500, 0.0, 0.02, 5);
        let rep = clt_check(&xs, 0.01, 0.0, 1.0, Some(0.0), &CltThresholds::default()).unwrap();
        assert!(!rep.variance_ok);
        assert!(!rep.ks_ok);
    }

    struct Deterministic;

    impl LevelSampler for Deterministic {
        fn h_bold(&self) -> f64 {
            1.0
        }

        fn sample(&self, spec: &LevelSpec, _: &mut DrawStream) -> Result<LevelSample> {
            Ok(LevelSample {
                fine: 1.0 + 0.1 * spec.fine_h(),
                coarse: spec.coarse_h().map(|h| 1.0 + 0.1 * h),
                cost: 1.0,
            })
        }
    }

    #[test]
    fn slln_on_deterministic_family() {
        let engine = Engine::new(1).unwrap();
        let p = StructuralParams::new(1.0, 1.0, 1.0, 1.0, 0.5, 0.1).unwrap();
        let eps: Vec<f64> = (1..=7).map(|k| 2f64.powi(-k)).collect();
        for kind in [EstimatorKind::Mlmc, EstimatorKind::Ml2r] {
            let rep = slln_decay_check(&engine, &Deterministic, &p, 2, kind, &eps, 1, 1.0).unwrap();
            for row in &rep.rows {
                assert!(row.error <= row.epsilon, "{kind}: {row:?}");
            }
            assert!(rep.dominated_by(1.0));
        }
    }
}
