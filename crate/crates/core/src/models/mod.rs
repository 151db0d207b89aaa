//! Concrete biased-simulation families with analytic oracles.

pub mod nested;
pub mod sde;

pub use nested::{gaussian_nested_oracle, GaussianNested, GaussianNestedOracle, NestedCoupling, NestedModel, NestedSampler, OuterFunction};
pub use sde::{bs_call_oracle, ArithmeticBrownian, BlackScholes, Diffusion, PathFunctional, Payoff, PayoffKind, Scheme, SdeSampler, Skeleton};
