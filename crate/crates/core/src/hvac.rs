// SPDX-License-Identifier: Apache-2.0

//! Transactive HVAC controller in cooling mode.
//!
//! The controller keeps a trailing day of cleared prices. A cleared price
//! above the trailing mean pushes the setpoint up (less cooling), a lower
//! price pulls it down. The bid price is the inverse map: a room hotter than
//! its target bids above the mean price. Both maps share the comfort-band
//! half-width on the side the adjustment moves toward.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::HvacError;
use crate::units::Energy;

pub const HISTORY_LEN: usize = 96;
pub const SEED_P_MEAN: f64 = 0.10;
pub const SEED_SIGMA_P: f64 = 0.02;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HvacMode {
    #[default]
    Cooling,
}

fn default_sigma_t() -> f64 {
    1.5
}
fn default_drift() -> f64 {
    0.08
}
fn default_cooling() -> f64 {
    1.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HvacParams {
    pub t_target: f64,
    pub t_min: f64,
    pub t_max: f64,
    /// Comfort gain, °C.
    #[serde(default = "default_sigma_t")]
    pub sigma_t: f64,
    pub rated_power_kw: f64,
    #[serde(default)]
    pub mode: HvacMode,
    /// Fraction of the indoor/outdoor gap closed per interval while idle.
    #[serde(default = "default_drift")]
    pub drift_coeff: f64,
    /// Temperature drop per interval while running, °C.
    #[serde(default = "default_cooling")]
    pub cooling_per_interval: f64,
}

impl HvacParams {
    pub fn validate(&self) -> Result<(), HvacError> {
        let bad = |m: &str| Err(HvacError::InvalidParams(m.to_string()));
        if !(self.t_min < self.t_target && self.t_target < self.t_max) {
            return bad("require t_min < t_target < t_max");
        }
        if !(self.sigma_t > 0.0) {
            return bad("sigma_t must be positive");
        }
        if !(self.rated_power_kw > 0.0) {
            return bad("rated_power must be positive");
        }
        if !(0.0..=1.0).contains(&self.drift_coeff) || !(self.cooling_per_interval >= 0.0) {
            return bad("thermal coefficients out of range");
        }
        Ok(())
    }
}

/// Trailing window of cleared prices (currency per kWh).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceHistory {
    buf: VecDeque<f64>,
    capacity: usize,
    seed_mean: f64,
    seed_sigma: f64,
    sigma_floor: f64,
    p_mean: f64,
    sigma_p: f64,
}

impl Default for PriceHistory {
    fn default() -> Self {
        PriceHistory::new(HISTORY_LEN, SEED_P_MEAN, SEED_SIGMA_P)
    }
}

impl PriceHistory {
    pub fn new(capacity: usize, seed_mean: f64, seed_sigma: f64) -> Self {
        PriceHistory {
            buf: VecDeque::with_capacity(capacity),
            capacity: capacity.max(1),
            seed_mean,
            seed_sigma,
            sigma_floor: 0.0,
            p_mean: seed_mean,
            sigma_p: seed_sigma,
        }
    }

    /// Lower bound applied to sigma_p when it feeds the controller equations.
    pub fn with_sigma_floor(mut self, floor: f64) -> Self {
        self.sigma_floor = floor.max(0.0);
        self
    }

    pub fn from_prices(prices: &[f64]) -> Self {
        let mut h = PriceHistory::default();
        for p in prices {
            h.push(*p);
        }
        h
    }

    pub fn push(&mut self, price: f64) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(price);
        self.recompute();
    }

    fn recompute(&mut self) {
        if self.buf.len() < 2 {
            self.p_mean = self.seed_mean;
            self.sigma_p = self.seed_sigma;
            return;
        }
        let n = self.buf.len() as f64;
        let mean = self.buf.iter().sum::<f64>() / n;
        let var = self.buf.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n;
        self.p_mean = mean;
        self.sigma_p = var.sqrt();
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn p_mean(&self) -> f64 {
        self.p_mean
    }

    /// Population standard deviation of the buffer (or the seed value).
    pub fn sigma_p(&self) -> f64 {
        self.sigma_p
    }

    pub fn effective_sigma_p(&self) -> f64 {
        self.sigma_p.max(self.sigma_floor)
    }
}

pub fn update_price_history(history: &PriceHistory, p_clear: f64) -> PriceHistory {
    let mut h = history.clone();
    h.push(p_clear);
    h
}

/// Distance from target to the comfort bound the setpoint moves toward.
/// A tie (`p_clear == p_mean`) takes the upper bound.
pub fn band_halfwidth(params: &HvacParams, p_clear: f64, p_mean: f64) -> f64 {
    if p_clear >= p_mean {
        params.t_max - params.t_target
    } else {
        params.t_target - params.t_min
    }
}

/// Same bound selection keyed on temperature. A room at or above target
/// corresponds to a price at or above the mean, so both equations agree.
pub fn band_halfwidth_for_temperature(params: &HvacParams, t_current: f64) -> f64 {
    if t_current >= params.t_target {
        params.t_max - params.t_target
    } else {
        params.t_target - params.t_min
    }
}

fn check_sigmas(params: &HvacParams, sigma_p: f64) -> Result<(), HvacError> {
    if !(params.sigma_t > 0.0) || !(sigma_p > 0.0) {
        return Err(HvacError::NonPositiveSigma { sigma_t: params.sigma_t, sigma_p });
    }
    Ok(())
}

pub fn compute_setpoint_unclamped(
    params: &HvacParams,
    p_mean: f64,
    sigma_p: f64,
    p_clear: f64,
) -> Result<f64, HvacError> {
    check_sigmas(params, sigma_p)?;
    let half = band_halfwidth(params, p_clear, p_mean);
    Ok(params.t_target + (p_clear - p_mean) * half / (params.sigma_t * sigma_p))
}

pub fn compute_setpoint(params: &HvacParams, history: &PriceHistory, p_clear: f64) -> Result<f64, HvacError> {
    let raw = compute_setpoint_unclamped(params, history.p_mean(), history.effective_sigma_p(), p_clear)?;
    Ok(raw.clamp(params.t_min, params.t_max))
}

pub fn compute_bid_price_raw(
    params: &HvacParams,
    p_mean: f64,
    sigma_p: f64,
    t_current: f64,
) -> Result<f64, HvacError> {
    check_sigmas(params, sigma_p)?;
    let half = band_halfwidth_for_temperature(params, t_current);
    Ok(p_mean + (t_current - params.t_target) * params.sigma_t * sigma_p / half)
}

pub fn compute_bid_price(params: &HvacParams, history: &PriceHistory, t_current: f64) -> Result<f64, HvacError> {
    let raw = compute_bid_price_raw(params, history.p_mean(), history.effective_sigma_p(), t_current)?;
    Ok(raw.max(0.0))
}

/// Energy requested for one interval: full rated power while the room is
/// above its setpoint, nothing otherwise.
pub fn compute_bid_quantity(params: &HvacParams, t_current: f64, t_set: f64, interval_seconds: u32) -> Energy {
    if t_current > t_set {
        Energy::from_kw(params.rated_power_kw, interval_seconds)
    } else {
        Energy::ZERO
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HvacState {
    pub t_current: f64,
    pub t_set: f64,
    pub last_cleared: Option<f64>,
    pub bid_price: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HvacController {
    pub params: HvacParams,
    pub history: PriceHistory,
    pub state: HvacState,
}

impl HvacController {
    pub fn new(params: HvacParams, t_initial: f64, history: PriceHistory) -> Result<Self, HvacError> {
        params.validate()?;
        let t_set = params.t_target;
        Ok(HvacController {
            params,
            history,
            state: HvacState { t_current: t_initial, t_set, last_cleared: None, bid_price: None },
        })
    }

    /// Consumes a received cleared price: the setpoint is moved using the
    /// statistics of the preceding window, then the price joins the window.
    pub fn on_clearing(&mut self, p_clear: f64) -> Result<(), HvacError> {
        self.state.t_set = compute_setpoint(&self.params, &self.history, p_clear)?;
        self.history.push(p_clear);
        self.state.last_cleared = Some(p_clear);
        Ok(())
    }

    pub fn form_bid(&mut self, interval_seconds: u32) -> Result<Option<(f64, Energy)>, HvacError> {
        let qty = compute_bid_quantity(&self.params, self.state.t_current, self.state.t_set, interval_seconds);
        if !qty.is_positive() {
            self.state.bid_price = None;
            return Ok(None);
        }
        let price = compute_bid_price(&self.params, &self.history, self.state.t_current)?;
        self.state.bid_price = Some(price);
        Ok(Some((price, qty)))
    }

    /// First-order indoor temperature update for one interval.
    pub fn advance_temperature(&mut self, outdoor: f64, running: bool) {
        let mut t = self.state.t_current + self.params.drift_coeff * (outdoor - self.state.t_current);
        if running {
            t -= self.params.cooling_per_interval;
        }
        self.state.t_current = t;
    }
}
