//! Coupled Euler and Milstein discretisations of Brownian diffusions.
//!
//! The fine path uses `K_0 k` steps on `[0, T]`; the coarse path uses
//! `K_0 k / M` steps driven by sums of `M` consecutive fine increments.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::engine::{LevelSample, LevelSampler, LevelSpec};
use crate::error::{Error, Result};
use crate::stream::DrawStream;

/// Coefficients of `dX = b(t, X) dt + sigma(t, X) dW`.
pub trait Diffusion: Sync {
    /// State dimension `d`.
    fn dim(&self) -> usize;

    /// Driving noise dimension `q`.
    fn noise_dim(&self) -> usize;

    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// Row-major `d x q` diffusion matrix.
    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// `d sigma / dx` for scalar diffusions; `None` when unavailable.
    fn diffusion_derivative(&self, _t: f64, _x: f64) -> Option<f64> {
        None
    }
}

/// Geometric Brownian motion `dX = r X dt + vol X dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlackScholes {
    pub rate: f64,
    pub vol: f64,
}

impl Diffusion for BlackScholes {
    fn dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out[0] = self.rate * x[0];
    }

    fn diffusion(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out[0] = self.vol * x[0];
    }

    fn diffusion_derivative(&self, _t: f64, _x: f64) -> Option<f64> {
        Some(self.vol)
    }
}

/// `dX = drift dt + vol dW` in `d` independent coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArithmeticBrownian {
    pub dim: usize,
    pub drift: f64,
    pub vol: f64,
}

impl Diffusion for ArithmeticBrownian {
    fn dim(&self) -> usize {
        self.dim
    }

    fn noise_dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.fill(self.drift);
    }

    fn diffusion(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.dim {
            out[i * self.dim + i] = self.vol;
        }
    }

    fn diffusion_derivative(&self, _t: f64, _x: f64) -> Option<f64> {
        (self.dim == 1).then_some(0.0)
    }
}

/// A discretised path: `steps + 1` states of dimension `dim`, flattened.
#[derive(Debug, Clone, Copy)]
pub struct Skeleton<'a> {
    pub states: &'a [f64],
    pub dim: usize,
    pub dt: f64,
}

impl Skeleton<'_> {
    pub fn steps(&self) -> usize {
        self.states.len() / self.dim - 1
    }

    /// Values of coordinate `i` at the grid points.
    pub fn coordinate(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.states.iter().skip(i).step_by(self.dim).copied()
    }

    pub fn terminal(&self) -> &[f64] {
        &self.states[self.states.len() - self.dim..]
    }
}

/// Lipschitz functional of a path.
pub trait PathFunctional: Sync {
    fn evaluate(&self, path: &Skeleton<'_>) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffKind {
    /// `X_T` itself.
    Terminal,
    Call,
    Put,
    /// Call on the time average of the path (trapezoidal rule).
    AsianCall,
    /// Floating-strike lookback `max_t X_t - X_T` over the linearly
    /// interpolated path.
    Lookback,
}

/// Discounted payoff on the first coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Payoff {
    pub kind: PayoffKind,
    #[serde(default)]
    pub strike: f64,
    #[serde(default = "unit_discount")]
    pub discount: f64,
}

fn unit_discount() -> f64 {
    1.0
}

impl Payoff {
    pub fn call(strike: f64, discount: f64) -> Payoff {
        Payoff {
            kind: PayoffKind::Call,
            strike,
            discount,
        }
    }

    pub fn terminal() -> Payoff {
        Payoff {
            kind: PayoffKind::Terminal,
            strike: 0.0,
            discount: 1.0,
        }
    }
}

impl PathFunctional for Payoff {
    fn evaluate(&self, path: &Skeleton<'_>) -> f64 {
        let x_t = path.terminal()[0];
        let value = match self.kind {
            PayoffKind::Terminal => x_t,
            PayoffKind::Call => (x_t - self.strike).max(0.0),
            PayoffKind::Put => (self.strike - x_t).max(0.0),
            PayoffKind::AsianCall => {
                let n = path.steps();
                let mut sum = 0.0;
                for (k, x) in path.coordinate(0).enumerate() {
                    sum += if k == 0 || k == n { 0.5 * x } else { x };
                }
                (sum / n as f64 - self.strike).max(0.0)
            }
            PayoffKind::Lookback => path.coordinate(0).fold(f64::NEG_INFINITY, f64::max) - x_t,
        };
        self.discount * value
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    Milstein,
}

/// Coupled discretisation of one diffusion and one payoff.
#[derive(Debug, Clone)]
pub struct SdeSampler<D, F> {
    pub diffusion: D,
    pub payoff: F,
    pub x0: Vec<f64>,
    pub horizon: f64,
    /// Steps at the coarsest level, so `h_bold = T / K_0`.
    pub base_steps: u64,
    pub scheme: Scheme,
}

impl<D: Diffusion, F: PathFunctional> SdeSampler<D, F> {
    pub fn new(diffusion: D, payoff: F, x0: Vec<f64>, horizon: f64, base_steps: u64, scheme: Scheme) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::invalid("horizon T must be > 0"));
        }
        if base_steps == 0 {
            return Err(Error::invalid("base step count must be >= 1"));
        }
        if x0.len() != diffusion.dim() {
            return Err(Error::invalid(format!(
                "x0 has {} coordinates but the diffusion has {}",
                x0.len(),
                diffusion.dim()
            )));
        }
        if scheme == Scheme::Milstein
            && (diffusion.dim() != 1 || diffusion.noise_dim() != 1 || diffusion.diffusion_derivative(0.0, x0[0]).is_none())
        {
            return Err(Error::invalid("Milstein needs a scalar diffusion with a known derivative"));
        }
        Ok(SdeSampler {
            diffusion,
            payoff,
            x0,
            horizon,
            base_steps,
            scheme,
        })
    }

    /// Simulates one path from the given Brownian increments (`steps * q`
    /// values) and returns its payoff.
    pub fn path_payoff(&self, increments: &[f64], steps: usize) -> Result<f64> {
        let d = self.diffusion.dim();
        let q = self.diffusion.noise_dim();
        debug_assert_eq!(increments.len(), steps * q);
        let dt = self.horizon / steps as f64;
        let mut states = Vec::with_capacity((steps + 1) * d);
        states.extend_from_slice(&self.x0);
        let mut drift = vec![0.0; d];
        let mut sigma = vec![0.0; d * q];
        let mut x = self.x0.clone();
        for k in 0..steps {
            let t = k as f64 * dt;
            let dw = &increments[k * q..(k + 1) * q];
            self.diffusion.drift(t, &x, &mut drift);
            self.diffusion.diffusion(t, &x, &mut sigma);
            let mut next = x.clone();
            for i in 0..d {
                let mut noise = 0.0;
                for l in 0..q {
                    noise += sigma[i * q + l] * dw[l];
                }
                next[i] += drift[i] * dt + noise;
            }
            if self.scheme == Scheme::Milstein {
                let ds = self.diffusion.diffusion_derivative(t, x[0]).unwrap_or(0.0);
                next[0] += 0.5 * sigma[0] * ds * (dw[0] * dw[0] - dt);
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Sampler {
                    level: 0,
                    draw: 0,
                    message: format!("non-finite state at step {}", k + 1),
                });
            }
            states.extend_from_slice(&next);
            x = next;
        }
        Ok(self.payoff.evaluate(&Skeleton {
            states: &states,
            dim: d,
            dt,
        }))
    }

    /// Sums groups of `ratio` consecutive step increments.
    pub fn aggregate(&self, increments: &[f64], ratio: usize) -> Vec<f64> {
        let q = self.diffusion.noise_dim();
        let steps = increments.len() / q;
        let mut out = vec![0.0; steps / ratio * q];
        for k in 0..steps {
            for l in 0..q {
                out[(k / ratio) * q + l] += increments[k * q + l];
            }
        }
        out
    }

    fn steps_for(&self, resolution: u64) -> Result<usize> {
        self.base_steps
            .checked_mul(resolution)
            .and_then(|s| usize::try_from(s).ok())
            .ok_or_else(|| Error::invalid(format!("resolution {resolution} overflows the step count")))
    }
}

impl<D: Diffusion, F: PathFunctional> LevelSampler for SdeSampler<D, F> {
    fn h_bold(&self) -> f64 {
        self.horizon / self.base_steps as f64
    }

    fn sample(&self, spec: &LevelSpec, rng: &mut DrawStream) -> Result<LevelSample> {
        let fine_steps = self.steps_for(spec.fine)?;
        let q = self.diffusion.noise_dim();
        let sd = (self.horizon / fine_steps as f64).sqrt();
        let mut dw = vec![0.0; fine_steps * q];
        rng.fill_normal(&mut dw);
        for v in dw.iter_mut() {
            *v *= sd;
        }
        let fine = self.path_payoff(&dw, fine_steps)?;
        let coarse = match spec.coarse {
            None => None,
            Some(c) => {
                if c == 0 || !spec.fine.is_multiple_of(c) {
                    return Err(Error::invalid("fine resolution is not a multiple of the coarse one"));
                }
                let coarse_steps = self.steps_for(c)?;
                let agg = self.aggregate(&dw, fine_steps / coarse_steps);
                Some(self.path_payoff(&agg, coarse_steps)?)
            }
        };
        Ok(LevelSample {
            fine,
            coarse,
            cost: (spec.fine + spec.coarse.unwrap_or(0)) as f64 / spec.h_bold,
        })
    }
}

/// Closed-form Black-Scholes call price.
pub fn bs_call_oracle(s0: f64, strike: f64, rate: f64, vol: f64, horizon: f64) -> Result<f64> {
    if !(s0 > 0.0) || strike < 0.0 || !(vol > 0.0) || !(horizon > 0.0) {
        return Err(Error::invalid("Black-Scholes needs s0, vol, T > 0 and strike >= 0"));
    }
    if strike == 0.0 {
        return Ok(s0);
    }
    let n = Normal::standard();
    let sd = vol * horizon.sqrt();
    let d1 = ((s0 / strike).ln() + (rate + 0.5 * vol * vol) * horizon) / sd;
    let d2 = d1 - sd;
    Ok(s0 * n.cdf(d1) - strike * (-rate * horizon).exp() * n.cdf(d2))
}
