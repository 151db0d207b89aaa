//! ML2R weight system.
//!
//! The raw weights `w` solve the Vandermonde system `V w = e_1` whose rows are
//! `sum_r w_r n_r^{-alpha k} = delta_{k,0}` with refiners `n_r = M^{r-1}`.
//! The matrix is badly conditioned, so the weights are always built from the
//! closed-form product coefficients `w_l = a_l b_{R-l}` and the cumulative
//! weights `W_j = sum_{r >= j} w_r` by suffix sums.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;

/// Truncation index for the limits `a_inf` and `sum |b_l|`.
pub const LIMIT_TRUNCATION: usize = 50;

/// ML2R weights for one `(alpha, M, R)` triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub alpha: f64,
    pub root: u32,
    pub depth: usize,
    /// Raw weights `w_1..w_R`.
    pub raw: Vec<f64>,
    /// Cumulative weights `W_1..W_R`.
    pub cumulative: Vec<f64>,
    /// `a_1..a_R`; empty for a unit (MLMC) table.
    pub a: Vec<f64>,
    /// `b_0..b_{R-1}`; empty for a unit (MLMC) table.
    pub b: Vec<f64>,
}

fn validate(alpha: f64, root: u32, depth: usize) -> Result<()> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha must be > 0, got {alpha}")));
    }
    if root < 2 {
        return Err(Error::invalid(format!("root M must be >= 2, got {root}")));
    }
    if depth < 1 {
        return Err(Error::invalid("depth R must be >= 1"));
    }
    Ok(())
}

/// `prod_{k=1}^{upto} (1 - M^{-k alpha})`, empty product = 1.
fn decay_product(alpha: f64, root: u32, upto: usize) -> f64 {
    let m = root as f64;
    (1..=upto).map(|k| 1.0 - m.powf(-(k as f64) * alpha)).product()
}

fn coeff_a(alpha: f64, root: u32, l: usize) -> f64 {
    1.0 / decay_product(alpha, root, l - 1)
}

fn coeff_b(alpha: f64, root: u32, l: usize) -> f64 {
    let m = root as f64;
    let sign = if l.is_multiple_of(2) { 1.0 } else { -1.0 };
    let lf = l as f64;
    sign * m.powf(-0.5 * alpha * lf * (lf + 1.0)) / decay_product(alpha, root, l)
}

/// Closed-form coefficients `(a_1..a_R, b_0..b_{R-1})`.
pub fn closed_form_coeffs(alpha: f64, root: u32, depth: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    validate(alpha, root, depth)?;
    let a = (1..=depth).map(|l| coeff_a(alpha, root, l)).collect();
    let b = (0..depth).map(|l| coeff_b(alpha, root, l)).collect();
    Ok((a, b))
}

/// Builds the ML2R weight table from the closed form.
pub fn ml2r_weights(alpha: f64, root: u32, depth: usize) -> Result<WeightTable> {
    let (a, b) = closed_form_coeffs(alpha, root, depth)?;
    let raw: Vec<f64> = (1..=depth).map(|l| a[l - 1] * b[depth - l]).collect();
    let mut cumulative = vec![0.0; depth];
    let mut acc = 0.0;
    for j in (0..depth).rev() {
        acc += raw[j];
        cumulative[j] = acc;
    }
    Ok(WeightTable {
        alpha,
        root,
        depth,
        raw,
        cumulative,
        a,
        b,
    })
}

/// Limits of the coefficient sequences, truncated at [`LIMIT_TRUNCATION`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitConstants {
    /// `a_inf = lim a_l`.
    pub a_inf: f64,
    /// `B~_inf = sum_l |b_l|`.
    pub b_abs_sum: f64,
    /// `B_inf = sum_l b_l`.
    pub b_sum: f64,
}

impl LimitConstants {
    /// Uniform bound on `|W_j^R|`.
    pub fn weight_bound(&self) -> f64 {
        self.a_inf * self.b_abs_sum
    }
}

pub fn limit_constants(alpha: f64, root: u32) -> Result<LimitConstants> {
    validate(alpha, root, 1)?;
    let a_inf = coeff_a(alpha, root, LIMIT_TRUNCATION);
    let bs: Vec<f64> = (0..=LIMIT_TRUNCATION).map(|l| coeff_b(alpha, root, l)).collect();
    Ok(LimitConstants {
        a_inf,
        b_abs_sum: bs.iter().map(|b| b.abs()).sum(),
        b_sum: bs.iter().sum(),
    })
}

/// Upper bound on the truncation error of the `a`/`b` limits, i.e. the first
/// omitted Gaussian-decay term `M^{-(alpha/2) L (L+1)}`.
pub fn truncation_tail(alpha: f64, root: u32) -> f64 {
    let l = LIMIT_TRUNCATION as f64;
    (root as f64).powf(-0.5 * alpha * l * (l + 1.0))
}

impl WeightTable {
    /// All-ones cumulative weights: the MLMC estimator seen as a weighted one.
    pub fn unit(alpha: f64, root: u32, depth: usize) -> Result<WeightTable> {
        validate(alpha, root, depth)?;
        let mut raw = vec![0.0; depth];
        raw[depth - 1] = 1.0;
        Ok(WeightTable {
            alpha,
            root,
            depth,
            raw,
            cumulative: vec![1.0; depth],
            a: Vec::new(),
            b: Vec::new(),
        })
    }

    pub fn is_unit(&self) -> bool {
        self.a.is_empty()
    }

    /// Refiner `n_r = M^{r-1}` (1-based `r`).
    pub fn refiner(&self, r: usize) -> f64 {
        (self.root as f64).powi(r as i32 - 1)
    }

    /// Absolute residual of each row `k = 0..R-1` of `V w = e_1`.
    pub fn row_residuals(&self) -> Vec<f64> {
        let m = self.root as f64;
        (0..self.depth)
            .map(|k| {
                let row = compensated_sum(self.raw.iter().enumerate().map(|(i, w)| {
                    w * m.powf(-self.alpha * (k as f64) * (i as f64))
                }));
                let target = if k == 0 { 1.0 } else { 0.0 };
                (row - target).abs()
            })
            .collect()
    }

    /// Max row residual of `V w = e_1`.
    pub fn vandermonde_residual(&self) -> f64 {
        self.row_residuals().into_iter().fold(0.0, f64::max)
    }

    /// `sum_{j=2}^R |W_j| M^{gamma (j-1)} v_j`; `v` is indexed from `j = 1`
    /// and missing entries count as 1.
    pub fn weighted_geometric_sum(&self, gamma: f64, v: Option<&[f64]>) -> f64 {
        let m = self.root as f64;
        (2..=self.depth)
            .map(|j| {
                let vj = v.and_then(|v| v.get(j - 1).copied()).unwrap_or(1.0);
                self.cumulative[j - 1].abs() * m.powf(gamma * (j - 1) as f64) * vj
            })
            .sum()
    }

    pub fn max_abs_cumulative(&self) -> f64 {
        self.cumulative.iter().fold(0.0, |acc, w| acc.max(w.abs()))
    }
}
