// SPDX-License-Identifier: Apache-2.0

//! Fixed-point quantities used throughout the simulator.
//!
//! Energy is held in integer watt-hours, prices in integer micro-currency per
//! kWh and money in nano-currency, so that one micro-price times one Wh is
//! exactly one money unit. Scenario files use plain kWh / currency floats;
//! the serde impls convert at the boundary.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const WH_PER_KWH: i64 = 1_000;
pub const MICROS_PER_UNIT: i64 = 1_000_000;

/// Energy in watt-hours.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Energy(pub i64);

impl Energy {
    pub const ZERO: Energy = Energy(0);

    pub fn from_wh(wh: i64) -> Self {
        Energy(wh)
    }

    pub fn from_kwh(kwh: f64) -> Self {
        Energy((kwh * WH_PER_KWH as f64).round() as i64)
    }

    pub fn wh(self) -> i64 {
        self.0
    }

    pub fn kwh(self) -> f64 {
        self.0 as f64 / WH_PER_KWH as f64
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }

    pub fn abs(self) -> Self {
        Energy(self.0.abs())
    }

    pub fn min(self, other: Energy) -> Energy {
        Energy(self.0.min(other.0))
    }

    pub fn max(self, other: Energy) -> Energy {
        Energy(self.0.max(other.0))
    }

    /// Scales by a non-negative factor, rounding to the nearest Wh.
    pub fn scale(self, factor: f64) -> Energy {
        Energy((self.0 as f64 * factor).round() as i64)
    }

    /// Average power over `seconds`, in kW.
    pub fn to_kw(self, seconds: u32) -> f64 {
        self.kwh() * 3600.0 / seconds as f64
    }

    /// Energy moved by `kw` of power held for `seconds`.
    pub fn from_kw(kw: f64, seconds: u32) -> Energy {
        Energy::from_kwh(kw * seconds as f64 / 3600.0)
    }
}

impl fmt::Display for Energy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let a = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:03}", a / 1000, a % 1000)
    }
}

impl Add for Energy {
    type Output = Energy;
    fn add(self, rhs: Energy) -> Energy {
        Energy(self.0 + rhs.0)
    }
}

impl Sub for Energy {
    type Output = Energy;
    fn sub(self, rhs: Energy) -> Energy {
        Energy(self.0 - rhs.0)
    }
}

impl Neg for Energy {
    type Output = Energy;
    fn neg(self) -> Energy {
        Energy(-self.0)
    }
}

impl AddAssign for Energy {
    fn add_assign(&mut self, rhs: Energy) {
        self.0 += rhs.0;
    }
}

impl SubAssign for Energy {
    fn sub_assign(&mut self, rhs: Energy) {
        self.0 -= rhs.0;
    }
}

impl Sum for Energy {
    fn sum<I: Iterator<Item = Energy>>(iter: I) -> Energy {
        Energy(iter.map(|e| e.0).sum())
    }
}

impl<'a> Sum<&'a Energy> for Energy {
    fn sum<I: Iterator<Item = &'a Energy>>(iter: I) -> Energy {
        Energy(iter.map(|e| e.0).sum())
    }
}

impl Serialize for Energy {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.kwh())
    }
}

impl<'de> Deserialize<'de> for Energy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let kwh = f64::deserialize(d)?;
        if !kwh.is_finite() {
            return Err(serde::de::Error::custom("energy must be finite"));
        }
        Ok(Energy::from_kwh(kwh))
    }
}

/// Price in micro-currency per kWh.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Price(pub i64);

impl Price {
    pub const ZERO: Price = Price(0);

    pub fn from_micros(m: i64) -> Self {
        Price(m)
    }

    pub fn from_f64(p: f64) -> Self {
        Price((p * MICROS_PER_UNIT as f64).round() as i64)
    }

    pub fn micros(self) -> i64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_UNIT as f64
    }

    /// Integer midpoint, rounded toward the lower price.
    pub fn midpoint(a: Price, b: Price) -> Price {
        Price(a.0.min(b.0) + (a.0 - b.0).abs() / 2)
    }

    pub fn scale(self, factor: f64) -> Price {
        Price((self.0 as f64 * factor).round() as i64)
    }

    /// Cost of `energy` at this price.
    pub fn cost(self, energy: Energy) -> Money {
        Money(self.0 as i128 * energy.0 as i128)
    }
}

impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let a = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:06}", a / 1_000_000, a % 1_000_000)
    }
}

impl Serialize for Price {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Price {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let p = f64::deserialize(d)?;
        if !p.is_finite() {
            return Err(serde::de::Error::custom("price must be finite"));
        }
        Ok(Price::from_f64(p))
    }
}

/// Money in nano-currency (micro-price times Wh).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Money(pub i128);

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        Money(iter.map(|m| m.0).sum())
    }
}

/// Simulated time in microseconds since 0:00 of the first day.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const MICROS_PER_SEC: u64 = 1_000_000;

    pub fn from_secs(s: u64) -> Self {
        SimTime(s * Self::MICROS_PER_SEC)
    }

    pub fn from_secs_f64(s: f64) -> Self {
        SimTime((s.max(0.0) * Self::MICROS_PER_SEC as f64).round() as u64)
    }

    pub fn micros(self) -> u64 {
        self.0
    }

    pub fn plus_micros(self, us: u64) -> SimTime {
        SimTime(self.0 + us)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / Self::MICROS_PER_SEC, self.0 % Self::MICROS_PER_SEC)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_display_and_conversion() {
        assert_eq!(Energy::from_kwh(1.25).to_string(), "1.250");
        assert_eq!(Energy::from_wh(-5).to_string(), "-0.005");
        assert_eq!(Energy::from_kwh(5.0).to_kw(900), 20.0);
        assert_eq!(Energy::from_kw(4.0, 900), Energy::from_kwh(1.0));
    }

    #[test]
    fn price_midpoint_lies_between() {
        let a = Price::from_f64(0.10);
        let b = Price::from_f64(0.06);
        assert_eq!(Price::midpoint(a, b), Price::from_f64(0.08));
        let odd = Price::midpoint(Price(3), Price(6));
        assert!(odd >= Price(3) && odd <= Price(6));
    }

    #[test]
    fn money_is_exact() {
        let p = Price::from_f64(0.123457);
        assert_eq!(p.cost(Energy::from_wh(3)), Money(3 * 123_457));
    }

    #[test]
    fn serde_uses_kwh() {
        let e: Energy = serde_json::from_str("2.5").unwrap();
        assert_eq!(e.wh(), 2500);
        assert_eq!(serde_json::to_string(&Price::from_f64(0.1)).unwrap(), "0.1");
    }
}
