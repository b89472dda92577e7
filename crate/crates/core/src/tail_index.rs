//! Tail-index estimation for GEV data from the PWMs θ_j = E max(X_1, …, X_j).
//!
//! ξ̂ = log2((θ̂_4 - θ̂_2) / (θ̂_2 - θ̂_1)), followed by the usual PWM relations
//! for location and scale.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::distributions::{gev_quantile, GevParams, XI_ZERO_TOL};
use crate::error::{Error, Result};
use crate::estimators::{linear_combination_pwm, mom_on_partition, partition_blocks, KernelSpec, MomConfig};
use crate::special::{ln_gamma_1m, EULER_GAMMA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XiMethod {
    /// Median of block estimates over K = ⌈ln(1/δ)⌉ blocks shared by j = 1, 2, 4.
    Mom,
    /// Full-sample U-statistics T_{j:j}.
    LinearCombination,
}

impl XiMethod {
    pub fn label(self) -> &'static str {
        match self {
            XiMethod::Mom => "mom",
            XiMethod::LinearCombination => "lc",
        }
    }
}

impl std::str::FromStr for XiMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mom" => Ok(XiMethod::Mom),
            "lc" | "linear_combination" => Ok(XiMethod::LinearCombination),
            other => Err(Error::invalid(format!("unknown method {other:?} (expected mom or lc)"))),
        }
    }
}

/// Estimates of θ_1, θ_2, θ_4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaHats {
    pub theta1: f64,
    pub theta2: f64,
    pub theta4: f64,
}

impl ThetaHats {
    pub fn from_params(p: &GevParams) -> Result<Self> {
        use crate::distributions::gev_pwm_theta;
        Ok(Self {
            theta1: gev_pwm_theta(1, p)?,
            theta2: gev_pwm_theta(2, p)?,
            theta4: gev_pwm_theta(4, p)?,
        })
    }

    fn non_identifiable(&self) -> Error {
        let d = self.theta2 - self.theta1;
        Error::NonIdentifiable {
            theta1: self.theta1,
            theta2: self.theta2,
            theta4: self.theta4,
            ratio: (d != 0.0).then(|| (self.theta4 - self.theta2) / d),
        }
    }

    /// log2 of (θ_4 - θ_2)/(θ_2 - θ_1).
    ///
    /// NonIdentifiable unless both gaps are positive and above rounding noise
    /// at the scale of the θ values.
    pub fn xi(&self) -> Result<f64> {
        let lower = self.theta2 - self.theta1;
        let upper = self.theta4 - self.theta2;
        let scale = self.theta1.abs().max(self.theta2.abs()).max(self.theta4.abs());
        let noise = 64.0 * f64::EPSILON * scale;
        if !(lower > noise && upper > noise) {
            return Err(self.non_identifiable());
        }
        let xi = (upper / lower).ln() / LN_2;
        if !xi.is_finite() {
            return Err(self.non_identifiable());
        }
        Ok(xi)
    }
}

/// A tail-index estimate with the PWMs it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct XiEstimate {
    pub xi_hat: f64,
    pub theta_hats: ThetaHats,
    pub delta: f64,
    pub method: XiMethod,
    /// Number of blocks actually used (1 for the linear-combination method).
    pub blocks: usize,
    /// θ̂_2 - θ̂_1.
    pub lower_gap: f64,
    /// θ̂_4 - θ̂_2.
    pub upper_gap: f64,
}

/// θ̂_1, θ̂_2, θ̂_4 and the block count behind them.
pub fn estimate_thetas(values: &[f64], delta: f64, method: XiMethod) -> Result<(ThetaHats, usize)> {
    let n = values.len();
    if n < 4 {
        return Err(Error::InsufficientSample { n, required: 4 });
    }
    match method {
        XiMethod::LinearCombination => Ok((
            ThetaHats {
                theta1: linear_combination_pwm(values, 1, 1)?,
                theta2: linear_combination_pwm(values, 2, 2)?,
                theta4: linear_combination_pwm(values, 4, 4)?,
            },
            1,
        )),
        XiMethod::Mom => {
            let cfg = MomConfig::new(delta)?;
            let partition = partition_blocks(n, 4, &cfg)?;
            let theta = |j: usize| -> Result<f64> {
                Ok(mom_on_partition(values, &KernelSpec::order_statistic(j, j)?, &partition)?.0)
            };
            Ok((
                ThetaHats {
                    theta1: theta(1)?,
                    theta2: theta(2)?,
                    theta4: theta(4)?,
                },
                cfg.blocks,
            ))
        }
    }
}

pub fn estimate_xi(values: &[f64], delta: f64, method: XiMethod) -> Result<XiEstimate> {
    let (theta_hats, blocks) = estimate_thetas(values, delta, method)?;
    let xi_hat = theta_hats.xi()?;
    Ok(XiEstimate {
        xi_hat,
        theta_hats,
        delta,
        method,
        blocks,
        lower_gap: theta_hats.theta2 - theta_hats.theta1,
        upper_gap: theta_hats.theta4 - theta_hats.theta2,
    })
}

/// GEV(ξ, μ, σ) whose θ_1 and θ_2 equal the given values.
pub fn gev_params_from_pwm(theta1: f64, theta2: f64, xi: f64) -> Result<GevParams> {
    if !(xi < 1.0) {
        return Err(Error::invalid(format!("shape estimate {xi} >= 1: the mean does not exist")));
    }
    let gap = theta2 - theta1;
    if !(gap > 0.0) {
        return Err(Error::NonIdentifiable {
            theta1,
            theta2,
            theta4: f64::NAN,
            ratio: None,
        });
    }
    let (mu, sigma) = if xi.abs() < XI_ZERO_TOL {
        let sigma = gap / LN_2;
        (theta1 - sigma * EULER_GAMMA, sigma)
    } else {
        let lg = ln_gamma_1m(xi);
        let sigma = gap * xi / (lg.exp() * (xi * LN_2).exp_m1());
        (theta1 - sigma * lg.exp_m1() / xi, sigma)
    };
    GevParams::new(xi, mu, sigma)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GevFit {
    pub params: GevParams,
    pub source: XiEstimate,
}

impl GevFit {
    pub fn from_estimate(est: XiEstimate) -> Result<Self> {
        let params = gev_params_from_pwm(est.theta_hats.theta1, est.theta_hats.theta2, est.xi_hat)?;
        Ok(Self { params, source: est })
    }

    pub fn quantile(&self, prob: f64) -> Result<f64> {
        gev_quantile(prob, &self.params)
    }
}

pub fn fit_gev(values: &[f64], delta: f64, method: XiMethod) -> Result<GevFit> {
    GevFit::from_estimate(estimate_xi(values, delta, method)?)
}

/// Plug-in quantile of the fitted GEV.
pub fn estimate_quantile(values: &[f64], prob: f64, delta: f64, method: XiMethod) -> Result<f64> {
    fit_gev(values, delta, method)?.quantile(prob)
}
