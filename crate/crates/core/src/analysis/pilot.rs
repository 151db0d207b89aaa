//! Pilot estimation of the structural constants of a family.

use serde::{Deserialize, Serialize};

use crate::calibration::StructuralParams;
use crate::engine::{Engine, LevelSampler, LevelSpec, LevelStats};
use crate::error::{Error, Result};
use crate::stream::Domain;

// Stream levels reserved for the pilot draws.
const C1_LEVEL: usize = 1;
const STRUCTURAL_LEVEL: usize = 2;
const V_INF_LEVEL: usize = 3;

/// Estimate of the first bias coefficient with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C1Estimate {
    pub value: f64,
    pub std_error: f64,
    pub h: f64,
    pub refiner: u32,
    pub samples: u64,
}

fn coupled_spec(level: usize, h_bold: f64, root: u32, resolution: u64, refiner: u32) -> LevelSpec {
    LevelSpec {
        level,
        root,
        h_bold,
        fine: resolution * refiner as u64,
        coarse: Some(resolution),
    }
}

fn c1_from_stats(stats: &LevelStats, h: f64, refiner: u32) -> C1Estimate {
    let dh = h / refiner as f64 - h;
    let n = stats.samples();
    C1Estimate {
        value: stats.increment.mean / dh,
        std_error: (stats.increment.variance() / n as f64).sqrt() / dh.abs(),
        h,
        refiner,
        samples: n,
    }
}

fn check_c1(est: C1Estimate) -> Result<C1Estimate> {
    if est.std_error > est.value.abs() {
        return Err(Error::InsufficientPilot {
            estimate: est.value,
            std_error: est.std_error,
        });
    }
    Ok(est)
}

/// `c_1 ~ (E[Y_{h/M}] - E[Y_h]) / (h/M - h)` from `n` coupled draws at
/// `h = h_bold / resolution`.
pub fn estimate_c1<S: LevelSampler + ?Sized>(
    engine: &Engine,
    sampler: &S,
    resolution: u64,
    refiner: u32,
    n: u64,
    seed: u64,
) -> Result<C1Estimate> {
    if n < 2 {
        return Err(Error::invalid("pilot needs at least 2 draws"));
    }
    if refiner < 2 || resolution == 0 {
        return Err(Error::invalid("pilot refiner must be >= 2 and resolution >= 1"));
    }
    let h_bold = sampler.h_bold();
    let spec = coupled_spec(C1_LEVEL, h_bold, refiner, resolution, refiner);
    let stats = engine.sample_level(sampler, &spec, n, seed, Domain::Pilot)?;
    check_c1(c1_from_stats(&stats, h_bold / resolution as f64, refiner))
}

/// Moments of one pilot resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilotLevel {
    pub h: f64,
    pub mean: f64,
    pub variance: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotReport {
    pub root: u32,
    pub beta: f64,
    pub h_bold: f64,
    pub var_y0_hat: f64,
    pub v1_hat: f64,
    pub c1: C1Estimate,
    pub theta_hat: f64,
    /// `Y_hbold` and `Y_{hbold/M}`.
    pub levels: Vec<PilotLevel>,
    /// `E[(Y_hbold - Y_{hbold/M})^2]`.
    pub increment_second_moment: f64,
}

impl PilotReport {
    /// Structural parameters with the given weak rate and bias constant.
    pub fn params(&self, alpha: f64, c_hat: f64) -> Result<StructuralParams> {
        StructuralParams::new(alpha, self.beta, self.h_bold, self.var_y0_hat, self.v1_hat, c_hat)
    }
}

/// Pilot of `n` coupled draws of `(Y_hbold, Y_{hbold/M})`.
///
/// `Var(Y_0)` is the sample variance of `Y_{hbold/M}`, and `V_1` is
/// `||Y_hbold - Y_{hbold/M}||_2^2 / (hbold^beta (1 + M^{-beta/2})^2)`.
pub fn estimate_structural<S: LevelSampler + ?Sized>(
    engine: &Engine,
    sampler: &S,
    root: u32,
    beta: f64,
    n: u64,
    seed: u64,
) -> Result<PilotReport> {
    if n < 100 {
        return Err(Error::invalid(format!("structural pilot needs >= 100 draws, got {n}")));
    }
    if root < 2 || !(beta > 0.0) {
        return Err(Error::invalid("pilot needs M >= 2 and beta > 0"));
    }
    let h_bold = sampler.h_bold();
    let spec = coupled_spec(STRUCTURAL_LEVEL, h_bold, root, 1, root);
    let stats = engine.sample_level(sampler, &spec, n, seed, Domain::Pilot)?;
    let m = root as f64;
    let second = stats.increment.mean_square();
    let v1_hat = second / (h_bold.powf(beta) * (1.0 + m.powf(-beta / 2.0)).powi(2));
    let var_y0_hat = stats.fine.variance();
    let c1 = check_c1(c1_from_stats(&stats, h_bold, root))?;
    let theta_hat = if var_y0_hat > 0.0 { (v1_hat / var_y0_hat).sqrt() } else { 0.0 };
    let level = |h: f64, mom: &crate::numeric::Moments| PilotLevel {
        h,
        mean: mom.mean,
        variance: mom.variance(),
        count: mom.count,
    };
    let report = PilotReport {
        root,
        beta,
        h_bold,
        var_y0_hat,
        v1_hat,
        c1,
        theta_hat,
        levels: vec![level(h_bold, &stats.coarse), level(h_bold / m, &stats.fine)],
        increment_second_moment: second,
    };
    if ![var_y0_hat, v1_hat, c1.value].iter().all(|x| x.is_finite()) {
        return Err(Error::invalid("pilot produced a non-finite estimate"));
    }
    Ok(report)
}

/// Estimate of `v_inf = lim ||Z(h)||_2^2` with `Z(h) = (h/M)^{-beta/2} (Y_{h/M} - Y_h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VInfEstimate {
    /// `(h, ||Z(h)||_2^2)` at the two pilot resolutions.
    pub points: Vec<(f64, f64)>,
    /// Extrapolated limit, assuming a first-order error in `h`.
    pub v_inf: f64,
    /// True when extrapolation went negative and the finest value was kept.
    pub fallback: bool,
}

/// Estimates `v_inf` from `n` draws at resolutions `coarse < fine` by linear
/// extrapolation in `h` to zero.
pub fn estimate_v_inf<S: LevelSampler + ?Sized>(
    engine: &Engine,
    sampler: &S,
    root: u32,
    beta: f64,
    resolutions: (u64, u64),
    n: u64,
    seed: u64,
) -> Result<VInfEstimate> {
    let (k1, k2) = resolutions;
    if k1 == 0 || k2 <= k1 || n < 2 || root < 2 {
        return Err(Error::invalid("v_inf pilot needs 0 < k1 < k2, n >= 2 and M >= 2"));
    }
    let h_bold = sampler.h_bold();
    let mut points = Vec::with_capacity(2);
    for (i, &k) in [k1, k2].iter().enumerate() {
        let spec = coupled_spec(V_INF_LEVEL + i, h_bold, root, k, root);
        let stats = engine.sample_level(sampler, &spec, n, seed, Domain::Pilot)?;
        let h = h_bold / k as f64;
        let scale = (h / root as f64).powf(-beta);
        points.push((h, scale * stats.increment.mean_square()));
    }
    let (z1, z2) = (points[0].1, points[1].1);
    let ratio = k2 as f64 / k1 as f64;
    let extrapolated = z2 + (z2 - z1) / (ratio - 1.0);
    let fallback = !(extrapolated > 0.0);
    Ok(VInfEstimate {
        points,
        v_inf: if fallback { z2 } else { extrapolated },
        fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::LevelSample;
    use crate::models::{gaussian_nested_oracle, GaussianNested, NestedCoupling, NestedSampler, OuterFunction};
    use crate::stream::DrawStream;

    /// `Y_h = i0 + c h`, no noise.
    struct Linear {
        i0: f64,
        c: f64,
    }

    impl LevelSampler for Linear {
        fn h_bold(&self) -> f64 {
            1.0
        }

        fn sample(&self, spec: &LevelSpec, _: &mut DrawStream) -> Result<LevelSample> {
            Ok(LevelSample {
                fine: self.i0 + self.c * spec.fine_h(),
                coarse: spec.coarse_h().map(|h| self.i0 + self.c * h),
                cost: 1.0,
            })
        }
    }

    fn nested(k0: u64) -> NestedSampler<GaussianNested> {
        NestedSampler::new(GaussianNested, OuterFunction::Cos, k0, NestedCoupling::Prefix).unwrap()
    }

    #[test]
    fn linear_bias_is_recovered_exactly() {
        let engine = Engine::new(1).unwrap();
        let s = Linear { i0: 2.0, c: -0.75 };
        let est = estimate_c1(&engine, &s, 1, 2, 10, 1).unwrap();
        assert!((est.value + 0.75).abs() < 1e-12);
        assert_eq!(est.std_error, 0.0);

        let rep = estimate_structural(&engine, &s, 2, 1.0, 100, 1).unwrap();
        assert_eq!(rep.var_y0_hat, 0.0);
        assert_eq!(rep.theta_hat, 0.0);
        let gap = 0.75f64 * 0.5;
        let expect = gap * gap / (1.0 + 2f64.powf(-0.5)).powi(2);
        assert!((rep.v1_hat - expect).abs() < 1e-12);
        let p = rep.params(1.0, 1.0).unwrap();
        let plan = crate::calibration::calibrate(0.01, &p, 2, crate::calibration::EstimatorKind::Ml2r).unwrap();
        assert!(plan.degenerate);
    }

    #[test]
    fn too_small_pilots_are_rejected() {
        let engine = Engine::new(1).unwrap();
        let s = Linear { i0: 0.0, c: 1.0 };
        assert!(estimate_c1(&engine, &s, 1, 2, 1, 1).is_err());
        assert!(estimate_structural(&engine, &s, 2, 1.0, 99, 1).is_err());
    }

    #[test]
    fn noisy_flat_family_is_insufficient() {
        let engine = Engine::new(1).unwrap();
        // identity outer function: no nested bias, so c1 is pure noise
        let s = NestedSampler::new(GaussianNested, OuterFunction::Identity, 1, NestedCoupling::Prefix).unwrap();
        let mut insufficient = 0;
        for seed in 0..10 {
            if matches!(estimate_c1(&engine, &s, 1, 2, 1000, seed), Err(Error::InsufficientPilot { .. })) {
                insufficient += 1;
            }
        }
        assert!(insufficient >= 5);
    }

    #[test]
    fn nested_c1_matches_exact_slope() {
        let engine = Engine::new(0).unwrap();
        let est = estimate_c1(&engine, &nested(1), 1, 2, 400_000, 3).unwrap();
        let exact = ((-0.75f64).exp() - (-1.0f64).exp()) / -0.5;
        assert!((est.value - exact).abs() < 3.0 * est.std_error, "{} vs {exact} (se {})", est.value, est.std_error);
    }

    #[test]
    fn nested_structural_constants() {
        let engine = Engine::new(0).unwrap();
        let o = gaussian_nested_oracle();
        let r1 = estimate_structural(&engine, &nested(1), 2, 1.0, 200_000, 4).unwrap();
        let r2 = estimate_structural(&engine, &nested(2), 2, 1.0, 200_000, 4).unwrap();
        assert!(r1.v1_hat > 0.0 && r2.v1_hat > 0.0);
        let ratio = r1.v1_hat / r2.v1_hat;
        assert!((0.5..=2.0).contains(&ratio), "ratio {ratio}");
        let expect = o.increment_second_moment(1, 2) / (1.0 + 2f64.powf(-0.5)).powi(2);
        assert!((r1.v1_hat / expect - 1.0).abs() < 0.02);
        assert!((r1.var_y0_hat / o.variance_at(0.5) - 1.0).abs() < 0.02);
        assert!(r1.theta_hat > 0.0);
    }

    #[test]
    fn nested_v_inf_is_close_to_limit() {
        let engine = Engine::new(0).unwrap();
        let o = gaussian_nested_oracle();
        let est = estimate_v_inf(&engine, &nested(1), 2, 1.0, (8, 16), 100_000, 5).unwrap();
        assert!(!est.fallback);
        assert!((est.v_inf / o.v_inf(2) - 1.0).abs() < 0.1, "{:?}", est);
    }
}
