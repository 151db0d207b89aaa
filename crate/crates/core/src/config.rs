//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{estimate_structural, PilotReport};
use crate::calibration::{EstimatorKind, StructuralParams};
use crate::engine::{Engine, LevelSample, LevelSampler, LevelSpec};
use crate::error::{Error, Result};
use crate::models::{
    bs_call_oracle, gaussian_nested_oracle, BlackScholes, GaussianNested, NestedCoupling, NestedSampler, OuterFunction,
    Payoff, PayoffKind, Scheme, SdeSampler,
};
use crate::stream::DrawStream;

/// Version of the config, plan, study and CSV layouts.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// `E cos(E[Y + xi | Y])` with prefix-coupled inner draws.
    NestedCos {
        #[serde(default = "one")]
        base_inner: u64,
    },
    /// Same target with the smooth block difference on refined levels.
    NestedCosSmooth {
        #[serde(default = "one")]
        base_inner: u64,
    },
    BlackScholes {
        s0: f64,
        strike: f64,
        rate: f64,
        vol: f64,
        #[serde(default = "one_f64")]
        horizon: f64,
        #[serde(default = "one")]
        base_steps: u64,
        #[serde(default = "default_scheme")]
        scheme: Scheme,
        #[serde(default = "default_payoff")]
        payoff: PayoffKind,
    },
}

fn one() -> u64 {
    1
}

fn one_f64() -> f64 {
    1.0
}

fn default_scheme() -> Scheme {
    Scheme::Euler
}

fn default_payoff() -> PayoffKind {
    PayoffKind::Call
}

impl ModelConfig {
    /// Default `(alpha, beta)` of the family.
    pub fn rates(&self) -> (f64, f64) {
        match self {
            ModelConfig::NestedCos { .. } => (1.0, 1.0),
            ModelConfig::NestedCosSmooth { .. } => (1.0, 2.0),
            ModelConfig::BlackScholes { scheme, .. } => match scheme {
                Scheme::Euler => (1.0, 1.0),
                Scheme::Milstein => (1.0, 2.0),
            },
        }
    }

    /// Exact target value when one is known.
    pub fn oracle(&self) -> Option<f64> {
        match self {
            ModelConfig::NestedCos { .. } | ModelConfig::NestedCosSmooth { .. } => Some(gaussian_nested_oracle().i0),
            ModelConfig::BlackScholes {
                s0,
                strike,
                rate,
                vol,
                horizon,
                payoff: PayoffKind::Call,
                ..
            } => bs_call_oracle(*s0, *strike, *rate, *vol, *horizon).ok(),
            ModelConfig::BlackScholes { .. } => None,
        }
    }

    pub fn build(&self) -> Result<ModelSampler> {
        let nested = |k0, coupling| -> Result<ModelSampler> {
            Ok(ModelSampler::Nested(NestedSampler::new(GaussianNested, OuterFunction::Cos, k0, coupling)?))
        };
        match *self {
            ModelConfig::NestedCos { base_inner } => nested(base_inner, NestedCoupling::Prefix),
            ModelConfig::NestedCosSmooth { base_inner } => nested(base_inner, NestedCoupling::Smooth),
            ModelConfig::BlackScholes {
                s0,
                strike,
                rate,
                vol,
                horizon,
                base_steps,
                scheme,
                payoff,
            } => {
                if !(s0 > 0.0) || !(vol > 0.0) || strike < 0.0 {
                    return Err(Error::Config("black_scholes needs s0 > 0, vol > 0, strike >= 0".into()));
                }
                let payoff = Payoff {
                    kind: payoff,
                    strike,
                    discount: (-rate * horizon).exp(),
                };
                Ok(ModelSampler::Sde(SdeSampler::new(
                    BlackScholes { rate, vol },
                    payoff,
                    vec![s0],
                    horizon,
                    base_steps,
                    scheme,
                )?))
            }
        }
    }
}

/// Any of the configurable samplers.
#[derive(Debug, Clone)]
pub enum ModelSampler {
    Nested(NestedSampler<GaussianNested>),
    Sde(SdeSampler<BlackScholes, Payoff>),
}

impl LevelSampler for ModelSampler {
    fn h_bold(&self) -> f64 {
        match self {
            ModelSampler::Nested(s) => s.h_bold(),
            ModelSampler::Sde(s) => s.h_bold(),
        }
    }

    fn sample(&self, spec: &LevelSpec, rng: &mut DrawStream) -> Result<LevelSample> {
        match self {
            ModelSampler::Nested(s) => s.sample(spec, rng),
            ModelSampler::Sde(s) => s.sample(spec, rng),
        }
    }
}

/// Known structural constants; missing ones come from the pilot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuralConfig {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub var_y0: Option<f64>,
    pub v1: Option<f64>,
}

/// Bias-constant overrides per estimator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CHatConfig {
    /// Defaults to the pilot estimate of `|c_1|`.
    pub mlmc: Option<f64>,
    /// Defaults to 1.
    pub ml2r: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PilotConfig {
    #[serde(default = "default_pilot_samples")]
    pub samples: u64,
}

fn default_pilot_samples() -> u64 {
    100_000
}

impl Default for PilotConfig {
    fn default() -> Self {
        PilotConfig {
            samples: default_pilot_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default = "default_root")]
    pub root: u32,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub epsilons: Option<Vec<f64>>,
    #[serde(default)]
    pub structural: StructuralConfig,
    #[serde(default)]
    pub c_hat: CHatConfig,
    #[serde(default)]
    pub pilot: PilotConfig,
    #[serde(default = "one_usize")]
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub budget: Option<f64>,
}

fn default_estimators() -> Vec<EstimatorKind> {
    vec![EstimatorKind::Mlmc, EstimatorKind::Ml2r]
}

fn default_root() -> u32 {
    2
}

fn one_usize() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        ExperimentConfig::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.estimators.is_empty() {
            return bad("no estimators selected");
        }
        if self.root < 2 {
            return bad("root must be >= 2");
        }
        if self.replications < 1 {
            return bad("replications must be >= 1");
        }
        if self.epsilon.is_some() && self.epsilons.is_some() {
            return bad("give either epsilon or epsilons, not both");
        }
        if self.epsilon_grid().iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return bad("every epsilon must be > 0");
        }
        if let Some(b) = self.budget {
            if !(b > 0.0) {
                return bad("budget must be > 0");
            }
        }
        if self.pilot.samples < 100 {
            return bad("pilot.samples must be >= 100");
        }
        Ok(())
    }

    /// `epsilons` if given, otherwise the single `epsilon`.
    pub fn epsilon_grid(&self) -> Vec<f64> {
        match (&self.epsilons, self.epsilon) {
            (Some(v), _) => v.clone(),
            (None, Some(e)) => vec![e],
            (None, None) => Vec::new(),
        }
    }

    pub fn needs_pilot(&self) -> bool {
        self.structural.var_y0.is_none()
            || self.structural.v1.is_none()
            || (self.estimators.contains(&EstimatorKind::Mlmc) && self.c_hat.mlmc.is_none())
    }

    /// Structural parameters for each selected estimator, running a pilot
    /// when some constant is missing.
    pub fn resolve(&self, engine: &Engine, sampler: &ModelSampler) -> Result<Resolved> {
        let (alpha_d, beta_d) = self.model.rates();
        let alpha = self.structural.alpha.unwrap_or(alpha_d);
        let beta = self.structural.beta.unwrap_or(beta_d);
        let pilot = if self.needs_pilot() {
            Some(estimate_structural(engine, sampler, self.root, beta, self.pilot.samples, self.seed)?)
        } else {
            None
        };
        let var_y0 = self.structural.var_y0.or(pilot.as_ref().map(|p| p.var_y0_hat)).unwrap_or_default();
        let v1 = self.structural.v1.or(pilot.as_ref().map(|p| p.v1_hat)).unwrap_or_default();
        let mut params = Vec::with_capacity(self.estimators.len());
        for &kind in &self.estimators {
            let c_hat = match kind {
                EstimatorKind::Mlmc => self
                    .c_hat
                    .mlmc
                    .or(pilot.as_ref().map(|p| p.c1.value.abs()))
                    .unwrap_or(1.0),
                EstimatorKind::Ml2r => self.c_hat.ml2r.unwrap_or(1.0),
            };
            let p = StructuralParams::new(alpha, beta, sampler.h_bold(), var_y0, v1, c_hat)
                .map_err(|e| Error::Config(e.to_string()))?;
            params.push((kind, p));
        }
        Ok(Resolved { pilot, params })
    }
}

/// Constants used for calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub pilot: Option<PilotReport>,
    pub params: Vec<(EstimatorKind, StructuralParams)>,
}

#[cfg(test)]
mod tests {
    use super::*;

    const NESTED: &str = r#"{
        "model": {"type": "nested_cos"},
        "epsilon": 0.05,
        "structural": {"var_y0": 0.2, "v1": 0.07},
        "c_hat": {"mlmc": 0.3},
        "seed": 1
    }"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_json(NESTED).unwrap();
        assert_eq!(c.root, 2);
        assert_eq!(c.estimators, vec![EstimatorKind::Mlmc, EstimatorKind::Ml2r]);
        assert_eq!(c.epsilon_grid(), vec![0.05]);
        assert_eq!(c.model.rates(), (1.0, 1.0));
        assert!((c.model.oracle().unwrap() - (-0.5f64).exp()).abs() < 1e-15);
        assert!(!c.needs_pilot());
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_json(r#"{"model": {"type": "nested_cos"}}"#).is_err());
        let bad_eps = NESTED.replace("0.05", "-1");
        assert!(matches!(ExperimentConfig::from_json(&bad_eps), Err(Error::Config(_))));
        let unknown = NESTED.replace("\"seed\": 1", "\"seed\": 1, \"colour\": 3");
        assert!(ExperimentConfig::from_json(&unknown).is_err());
        let both = NESTED.replace("\"epsilon\": 0.05", "\"epsilon\": 0.05, \"epsilons\": [0.1]");
        assert!(ExperimentConfig::from_json(&both).is_err());
    }

    #[test]
    fn resolves_without_pilot() {
        let c = ExperimentConfig::from_json(NESTED).unwrap();
        let engine = Engine::new(1).unwrap();
        let r = c.resolve(&engine, &c.model.build().unwrap()).unwrap();
        assert!(r.pilot.is_none());
        assert_eq!(r.params[0].1.c_hat, 0.3);
        assert_eq!(r.params[1].1.c_hat, 1.0);
        assert_eq!(r.params[1].1.h_bold, 1.0);
    }

    #[test]
    fn black_scholes_model() {
        let text = r#"{"model": {"type": "black_scholes", "s0": 100, "strike": 80, "rate": 0.1, "vol": 0.4,
                        "scheme": "milstein", "base_steps": 2}, "epsilon": 0.1, "seed": 3}"#;
        let c = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(c.model.rates(), (1.0, 2.0));
        let s = c.model.build().unwrap();
        assert_eq!(s.h_bold(), 0.5);
        let price = c.model.oracle().unwrap();
        assert!((price - bs_call_oracle(100.0, 80.0, 0.1, 0.4, 1.0).unwrap()).abs() < 1e-15);
        let asian = text.replace("\"scheme\"", "\"payoff\": \"asian_call\", \"scheme\"");
        assert!(ExperimentConfig::from_json(&asian).unwrap().model.oracle().is_none());
    }
}
