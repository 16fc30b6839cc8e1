// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::units::SimTime;

/// Interval counter. Interval `k` starts `k * interval_duration` seconds after midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimClock {
    pub interval_index: u32,
    pub intervals_per_day: u32,
    pub interval_duration: u32,
}

impl Default for SimClock {
    fn default() -> Self {
        SimClock { interval_index: 0, intervals_per_day: 96, interval_duration: 900 }
    }
}

impl SimClock {
    pub fn new(intervals_per_day: u32, interval_duration: u32) -> Self {
        SimClock { interval_index: 0, intervals_per_day, interval_duration }
    }

    pub fn advance(&mut self) {
        self.interval_index += 1;
    }

    pub fn start_of(&self, k: u32) -> SimTime {
        SimTime::from_secs(k as u64 * self.interval_duration as u64)
    }

    pub fn now(&self) -> SimTime {
        self.start_of(self.interval_index)
    }

    /// Wall-clock label `HH:MM` of the start of interval `k`, wrapping daily.
    pub fn label(&self, k: u32) -> String {
        let secs = (k as u64 * self.interval_duration as u64) % 86_400;
        format!("{:02}:{:02}", secs / 3600, secs % 3600 / 60)
    }

    /// Label of the last minute of interval `k`.
    pub fn end_label(&self, k: u32) -> String {
        let secs = ((k as u64 + 1) * self.interval_duration as u64 - 60) % 86_400;
        format!("{:02}:{:02}", secs / 3600, secs % 3600 / 60)
    }

    /// Hour of day at the middle of interval `k`.
    pub fn hour_of(&self, k: u32) -> f64 {
        let day = self.intervals_per_day.max(1);
        ((k % day) as f64 + 0.5) * 24.0 / day as f64
    }
}
