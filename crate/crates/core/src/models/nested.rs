//! Nested Monte Carlo for `I_0 = E[f(E[X | Y])]` with `X = F(xi, Y)`.
//!
//! The bias parameter is `h = 1 / K` where `K` is the inner sample count;
//! with `K_0` inner samples at the coarsest level, `h_bold = 1 / K_0`.

use serde::{Deserialize, Serialize};

use crate::engine::{LevelSample, LevelSampler, LevelSpec};
use crate::error::{Error, Result};
use crate::stream::DrawStream;

/// Outer and inner simulation of a nested expectation.
pub trait NestedModel: Sync {
    /// Draws the outer variable `Y`.
    fn outer(&self, rng: &mut DrawStream) -> f64;

    /// Draws one inner value `F(xi, y)`.
    fn inner(&self, y: f64, rng: &mut DrawStream) -> f64;
}

/// `Y ~ N(0, 1)` and `F(xi, y) = y + xi` with `xi ~ N(0, 1)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussianNested;

impl NestedModel for GaussianNested {
    fn outer(&self, rng: &mut DrawStream) -> f64 {
        rng.normal()
    }

    fn inner(&self, y: f64, rng: &mut DrawStream) -> f64 {
        y + rng.normal()
    }
}

/// Outer function `f` applied to the inner mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterFunction {
    Cos,
    Identity,
    /// `ln(1 + e^x)`, smooth and convex.
    Softplus,
}

impl OuterFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            OuterFunction::Cos => x.cos(),
            OuterFunction::Identity => x,
            OuterFunction::Softplus => {
                if x > 0.0 {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }
}

/// How fine and coarse values share inner draws on refined levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NestedCoupling {
    /// Coarse uses the first `K_coarse` of the fine level's inner draws.
    Prefix,
    /// Coarse averages `f` over the `M` blocks of `K_coarse` inner draws.
    Smooth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedSampler<N> {
    pub model: N,
    pub f: OuterFunction,
    /// `K_0 >= 1`.
    pub base_inner: u64,
    pub coupling: NestedCoupling,
}

impl<N: NestedModel> NestedSampler<N> {
    pub fn new(model: N, f: OuterFunction, base_inner: u64, coupling: NestedCoupling) -> Result<Self> {
        if base_inner == 0 {
            return Err(Error::invalid("inner base count K_0 must be >= 1"));
        }
        Ok(NestedSampler {
            model,
            f,
            base_inner,
            coupling,
        })
    }

    fn inner_count(&self, resolution: u64) -> Result<u64> {
        self.base_inner
            .checked_mul(resolution)
            .ok_or_else(|| Error::invalid(format!("resolution {resolution} overflows the inner count")))
    }

    /// Outer draw followed by `count` inner values, in sampling order.
    pub fn inner_values(&self, count: u64, rng: &mut DrawStream) -> (f64, Vec<f64>) {
        let y = self.model.outer(rng);
        let xs = (0..count).map(|_| self.model.inner(y, rng)).collect();
        (y, xs)
    }
}

impl<N: NestedModel> LevelSampler for NestedSampler<N> {
    fn h_bold(&self) -> f64 {
        1.0 / self.base_inner as f64
    }

    fn sample(&self, spec: &LevelSpec, rng: &mut DrawStream) -> Result<LevelSample> {
        let fine_count = self.inner_count(spec.fine)?;
        let coarse_count = match spec.coarse {
            Some(c) => {
                if c == 0 || !spec.fine.is_multiple_of(c) {
                    return Err(Error::invalid("fine resolution is not a multiple of the coarse one"));
                }
                Some(self.inner_count(c)?)
            }
            None => None,
        };
        let y = self.model.outer(rng);
        let mut sum = 0.0;
        let mut prefix = 0.0;
        let mut blocks = 0.0;
        let mut block_sum = 0.0;
        for i in 1..=fine_count {
            let x = self.model.inner(y, rng);
            if !x.is_finite() {
                return Err(Error::invalid(format!("inner kernel returned {x} at inner draw {i}")));
            }
            sum += x;
            block_sum += x;
            if let Some(k) = coarse_count {
                if i == k {
                    prefix = sum;
                }
                if i % k == 0 {
                    blocks += self.f.eval(block_sum / k as f64);
                    block_sum = 0.0;
                }
            }
        }
        let fine = self.f.eval(sum / fine_count as f64);
        let coarse = coarse_count.map(|k| match self.coupling {
            NestedCoupling::Prefix => self.f.eval(prefix / k as f64),
            NestedCoupling::Smooth => blocks / (fine_count / k) as f64,
        });
        Ok(LevelSample {
            fine,
            coarse,
            cost: (spec.fine + spec.coarse.unwrap_or(0)) as f64 / spec.h_bold,
        })
    }
}

/// Closed-form quantities of the Gaussian model with `f = cos`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianNestedOracle {
    /// `E cos(Y) = e^{-1/2}`.
    pub i0: f64,
    /// `Var cos(Y) = (1 + e^{-2})/2 - e^{-1}`.
    pub var_y0: f64,
    /// Conditional standard deviation of the inner kernel.
    pub sigma_f: f64,
}

pub fn gaussian_nested_oracle() -> GaussianNestedOracle {
    let e = std::f64::consts::E;
    GaussianNestedOracle {
        i0: (-0.5f64).exp(),
        var_y0: (1.0 + e.powi(-2)) / 2.0 - 1.0 / e,
        sigma_f: 1.0,
    }
}

impl GaussianNestedOracle {
    /// `E[Y_h] = e^{-(1+h)/2}`.
    pub fn mean_at(&self, h: f64) -> f64 {
        (-(1.0 + h) / 2.0).exp()
    }

    /// Bias expansion coefficient `c_k = e^{-1/2} (-1/2)^k / k!`.
    pub fn coefficient(&self, k: u32) -> f64 {
        let fact: f64 = (1..=k).map(|i| i as f64).product();
        self.i0 * (-0.5f64).powi(k as i32) / fact
    }

    /// `Var(Y_h)` at `h = 1/K`.
    pub fn variance_at(&self, h: f64) -> f64 {
        (1.0 + (-2.0 - 2.0 * h).exp()) / 2.0 - (-1.0 - h).exp()
    }

    /// `E[(Y_h - Y_{h/M})^2]` for the prefix coupling with `K` coarse inner
    /// draws and `M K` fine ones.
    pub fn increment_second_moment(&self, coarse_inner: u64, root: u32) -> f64 {
        let k = coarse_inner as f64;
        let mk = root as f64 * k;
        1.0 + ((-2.0 - 2.0 / k).exp() + (-2.0 - 2.0 / mk).exp()) / 2.0
            - (-(root as f64 - 1.0) / (2.0 * mk)).exp()
            - (-(4.0 + 1.0 / k + 3.0 / mk) / 2.0).exp()
    }

    /// `lim_{h -> 0} ||(h/M)^{-1/2} (Y_{h/M} - Y_h)||_2^2 = (M - 1) E sin^2(Y)`.
    pub fn v_inf(&self, root: u32) -> f64 {
        (root as f64 - 1.0) * (1.0 - (-2.0f64).exp()) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Engine;
    use crate::numeric::ols_slope;
    use crate::stream::Domain;

    fn spec(level: usize, fine: u64, coarse: Option<u64>) -> LevelSpec {
        LevelSpec {
            level,
            root: 2,
            h_bold: 1.0,
            fine,
            coarse,
        }
    }

    fn sampler(f: OuterFunction, coupling: NestedCoupling) -> NestedSampler<GaussianNested> {
        NestedSampler::new(GaussianNested, f, 1, coupling).unwrap()
    }

    #[test]
    fn oracle_values() {
        let o = gaussian_nested_oracle();
        assert!((o.i0 - 0.606_530_659_712_633_4).abs() < 1e-15);
        assert!((o.coefficient(1) + 0.303_265_329_856_316_7).abs() < 1e-15);
        assert!((o.var_y0 - 0.199_788_200_446_864_07).abs() < 1e-15);
        // Simpson quadrature of E cos^2(Y) - (E cos Y)^2 and of E cos(Y + sqrt(h) G)
        let quad = |g: &dyn Fn(f64) -> f64| {
            let n = 20_000;
            let (a, b) = (-12.0f64, 12.0f64);
            let step = (b - a) / n as f64;
            let mut acc = 0.0;
            for i in 0..=n {
                let z = a + i as f64 * step;
                let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * g(z) * (-0.5 * z * z).exp();
            }
            acc * step / 3.0 / (2.0 * std::f64::consts::PI).sqrt()
        };
        let mean = quad(&|z: f64| z.cos());
        assert!((quad(&|z: f64| z.cos().powi(2)) - mean * mean - o.var_y0).abs() < 1e-10);
        let slope = (quad(&|z: f64| (z * (1.0 + 1e-3f64).sqrt()).cos()) - o.i0) / 1e-3;
        assert!((slope - o.coefficient(1)).abs() < 1e-4);
        assert_eq!(o.sigma_f, 1.0);
        // Taylor coefficients reproduce the exact mean at small h
        let h: f64 = 1e-3;
        let series: f64 = (0..6).map(|k| o.coefficient(k) * h.powi(k as i32)).sum();
        assert!((series - o.mean_at(h)).abs() < 1e-15);
        assert!((o.variance_at(0.0) - o.var_y0).abs() < 1e-15);
        assert!((o.increment_second_moment(1, 2) - 0.216_476_362_725_172_26).abs() < 1e-14);
        assert!((o.v_inf(2) - 0.432_332_358_381_693_6).abs() < 1e-12);
    }

    #[test]
    fn prefix_coupling_is_exact() {
        let s = sampler(OuterFunction::Cos, NestedCoupling::Prefix);
        for draw in 0..20 {
            let x = s.sample(&spec(3, 8, Some(4)), &mut DrawStream::new(4, Domain::Audit, 3, draw)).unwrap();
            let (_, inner) = s.inner_values(8, &mut DrawStream::new(4, Domain::Audit, 3, draw));
            let prefix: f64 = inner[..4].iter().sum::<f64>() / 4.0;
            let all: f64 = inner.iter().sum::<f64>() / 8.0;
            assert_eq!(x.coarse.unwrap(), prefix.cos());
            assert_eq!(x.fine, all.cos());
        }
    }

    #[test]
    fn identity_has_no_nested_bias() {
        let engine = Engine::new(0).unwrap();
        let s = sampler(OuterFunction::Identity, NestedCoupling::Prefix);
        let st = engine.sample_level(&s, &spec(2, 4, Some(2)), 50_000, 1, Domain::Audit).unwrap();
        let se = (st.increment.variance() / st.samples() as f64).sqrt();
        assert!(st.increment.mean.abs() < 4.0 * se);
    }

    #[test]
    fn smooth_difference_vanishes_for_linear_f() {
        let s = sampler(OuterFunction::Identity, NestedCoupling::Smooth);
        for draw in 0..20 {
            let x = s.sample(&spec(2, 8, Some(2)), &mut DrawStream::new(4, Domain::Audit, 2, draw)).unwrap();
            assert!(x.increment().abs() < 1e-12);
        }
    }

    #[test]
    fn smooth_difference_is_nonpositive_for_convex_f() {
        let s = sampler(OuterFunction::Softplus, NestedCoupling::Smooth);
        for draw in 0..500 {
            let x = s.sample(&spec(2, 4, Some(2)), &mut DrawStream::new(4, Domain::Audit, 2, draw)).unwrap();
            assert!(x.increment() <= 1e-15);
        }
    }

    #[test]
    fn level_one_mean_at_one_inner_draw() {
        let engine = Engine::new(0).unwrap();
        let s = sampler(OuterFunction::Cos, NestedCoupling::Prefix);
        let st = engine.sample_level(&s, &spec(1, 1, None), 200_000, 3, Domain::Audit).unwrap();
        let se = (st.fine.variance() / st.samples() as f64).sqrt();
        assert!((st.fine.mean - (-1.0f64).exp()).abs() < 3.0 * se);
    }

    #[test]
    fn weak_rate_matches_oracle() {
        let engine = Engine::new(0).unwrap();
        let s = sampler(OuterFunction::Cos, NestedCoupling::Prefix);
        let o = gaussian_nested_oracle();
        for k in [1u64, 2, 4] {
            let st = engine.sample_level(&s, &spec(1, k, None), 1_000_000, 8, Domain::Audit).unwrap();
            let se = (st.fine.variance() / st.samples() as f64).sqrt();
            let h = 1.0 / k as f64;
            let expect = o.i0 * ((-h / 2.0).exp() - 1.0);
            assert!((st.fine.mean - o.i0 - expect).abs() < 3.0 * se, "k={k}");
        }
    }

    fn slope(s: &NestedSampler<GaussianNested>) -> f64 {
        let engine = Engine::new(0).unwrap();
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for j in 0..5u32 {
            let k = 2u64.pow(j);
            let st = engine.sample_level(s, &spec(2, 2 * k, Some(k)), 40_000, 5, Domain::Audit).unwrap();
            xs.push((1.0 / k as f64).ln());
            ys.push(st.increment.mean_square().ln());
        }
        ols_slope(&xs, &ys)
    }

    #[test]
    fn prefix_strong_rate() {
        let b = slope(&sampler(OuterFunction::Cos, NestedCoupling::Prefix));
        assert!((0.8..=1.2).contains(&b), "slope {b}");
    }

    #[test]
    fn smooth_strong_rate() {
        let b = slope(&sampler(OuterFunction::Cos, NestedCoupling::Smooth));
        assert!((1.6..=2.4).contains(&b), "slope {b}");
    }

    #[test]
    fn exact_increment_moment_matches_simulation() {
        let engine = Engine::new(0).unwrap();
        let s = sampler(OuterFunction::Cos, NestedCoupling::Prefix);
        let o = gaussian_nested_oracle();
        let st = engine.sample_level(&s, &spec(2, 2, Some(1)), 400_000, 6, Domain::Audit).unwrap();
        assert!((st.increment.mean_square() / o.increment_second_moment(1, 2) - 1.0).abs() < 0.02);
    }
}
