// SPDX-License-Identifier: Apache-2.0

//! In-process message network with seeded latency, drops and background noise.
//!
//! Messages are discrete events rather than packets. Every message handed to
//! [`Network::send`] ends up exactly once in the delivered log or the drop
//! log; [`Network::flush`] drains whatever is still in flight at the end of a
//! run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::NetError;
use crate::market::auction::Bid;
use crate::market::ledger::{Offer, PostedOffer, Solution};
use crate::rng::{self, StreamRng};
use crate::units::{Price, SimTime};

pub const CAPTURE_BUCKET_SECS: u64 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Endpoint {
    Prosumer(u32),
    Market,
    Ledger,
    Solver(u32),
    Dso,
    Workstation(u32),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Prosumer(id) => write!(f, "prosumer:{id}"),
            Endpoint::Market => f.write_str("market"),
            Endpoint::Ledger => f.write_str("ledger"),
            Endpoint::Solver(id) => write!(f, "solver:{id}"),
            Endpoint::Dso => f.write_str("dso"),
            Endpoint::Workstation(id) => write!(f, "workstation:{id}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageKind {
    Bid,
    Offer,
    Clearing,
    Solution,
    Finalize,
    Noise,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Bid => "bid",
            MessageKind::Offer => "offer",
            MessageKind::Clearing => "clearing",
            MessageKind::Solution => "solution",
            MessageKind::Finalize => "finalize",
            MessageKind::Noise => "noise",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Bid(Bid),
    Offer(Offer),
    OfferNotify(PostedOffer),
    Clearing { interval: u32, price: Option<Price> },
    Solution(Solution),
    Finalize { interval: u32, matched: bool },
    Noise,
}

impl Payload {
    fn wire_size(&self) -> u32 {
        match self {
            Payload::Bid(_) => 64,
            Payload::Offer(o) => 80 + 8 * o.intervals.len() as u32,
            Payload::OfferNotify(p) => 88 + 8 * p.offer.intervals.len() as u32,
            Payload::Clearing { .. } => 48,
            Payload::Solution(s) => 64 + 40 * s.matches.len() as u32,
            Payload::Finalize { .. } => 56,
            Payload::Noise => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub id: u64,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub kind: MessageKind,
    pub protocol_tag: String,
    pub payload_size: u32,
    pub send_time: SimTime,
    pub deliver_time: Option<SimTime>,
    pub payload: Payload,
}

impl Message {
    pub fn new(src: Endpoint, dst: Endpoint, kind: MessageKind, send_time: SimTime, payload: Payload) -> Self {
        let payload_size = payload.wire_size();
        Message {
            id: 0,
            src,
            dst,
            kind,
            protocol_tag: kind.as_str().to_string(),
            payload_size,
            send_time,
            deliver_time: None,
            payload,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkModel {
    pub base_latency: f64,
    pub jitter: f64,
    pub drop_prob: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel { base_latency: 0.05, jitter: 0.02, drop_prob: 0.0 }
    }
}

impl LinkModel {
    pub fn ideal() -> Self {
        LinkModel { base_latency: 0.0, jitter: 0.0, drop_prob: 0.0 }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(NetError::InvalidLink("drop_prob must be in [0, 1]".into()));
        }
        if !(self.base_latency >= 0.0) || !(self.jitter >= 0.0) {
            return Err(NetError::InvalidLink("latencies must be non-negative".into()));
        }
        Ok(())
    }
}

/// Background traffic shaped as web browsing plus occasional system updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub web_fraction: f64,
    pub web_bytes: (u32, u32),
    pub update_bytes: (u32, u32),
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel { web_fraction: 0.8, web_bytes: (200, 1500), update_bytes: (20_000, 200_000) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropCause {
    Link,
    Attack,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficEntry {
    pub id: u64,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub kind: MessageKind,
    pub protocol_tag: String,
    pub bytes: u32,
    pub send_time: SimTime,
    pub deliver_time: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropEntry {
    pub id: u64,
    pub kind: MessageKind,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub send_time: SimTime,
    pub cause: DropCause,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped_link: u64,
    pub dropped_attack: u64,
}

impl NetStats {
    pub fn dropped(&self) -> u64 {
        self.dropped_link + self.dropped_attack
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    link: LinkModel,
    noise: NoiseModel,
    rng: StreamRng,
    noise_rng: StreamRng,
    endpoints: BTreeSet<Endpoint>,
    queue: BTreeMap<(SimTime, u64), Message>,
    next_id: u64,
    delivered: Vec<TrafficEntry>,
    dropped: Vec<DropEntry>,
    stats: NetStats,
}

impl Network {
    pub fn new(link: LinkModel, seed: u64) -> Self {
        Network {
            link,
            noise: NoiseModel::default(),
            rng: rng::stream(seed, rng::NETWORK),
            noise_rng: rng::stream(seed, "network/noise"),
            endpoints: BTreeSet::new(),
            queue: BTreeMap::new(),
            next_id: 0,
            delivered: Vec::new(),
            dropped: Vec::new(),
            stats: NetStats::default(),
        }
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = noise;
        self
    }

    pub fn register(&mut self, endpoint: Endpoint) {
        self.endpoints.insert(endpoint);
    }

    pub fn register_all(&mut self, endpoints: impl IntoIterator<Item = Endpoint>) {
        self.endpoints.extend(endpoints);
    }

    pub fn link(&self) -> &LinkModel {
        &self.link
    }

    fn check_endpoints(&self, msg: &Message) -> Result<(), NetError> {
        for e in [msg.src, msg.dst] {
            if !self.endpoints.contains(&e) {
                return Err(NetError::UnregisteredEndpoint(e.to_string()));
            }
        }
        Ok(())
    }

    fn assign_id(&mut self, msg: &mut Message) -> u64 {
        msg.id = self.next_id;
        self.next_id += 1;
        self.stats.sent += 1;
        msg.id
    }

    /// Enqueues a message. Each send consumes exactly two draws from the
    /// network stream (drop, jitter) whatever the outcome.
    pub fn send(&mut self, mut msg: Message) -> Result<u64, NetError> {
        self.check_endpoints(&msg)?;
        let id = self.assign_id(&mut msg);
        let u: f64 = self.rng.gen();
        let jitter_unit: f64 = self.rng.gen();
        if u < self.link.drop_prob {
            self.record_drop(&msg, DropCause::Link);
            return Ok(id);
        }
        let latency = self.link.base_latency + jitter_unit * self.link.jitter;
        let deliver = msg.send_time.plus_micros(SimTime::from_secs_f64(latency).micros());
        msg.deliver_time = Some(deliver);
        self.queue.insert((deliver, id), msg);
        Ok(id)
    }

    /// Records a message that an attacker suppressed before it reached the link.
    pub fn suppress(&mut self, mut msg: Message) -> Result<u64, NetError> {
        self.check_endpoints(&msg)?;
        let id = self.assign_id(&mut msg);
        self.record_drop(&msg, DropCause::Attack);
        Ok(id)
    }

    fn record_drop(&mut self, msg: &Message, cause: DropCause) {
        match cause {
            DropCause::Link => self.stats.dropped_link += 1,
            DropCause::Attack => self.stats.dropped_attack += 1,
        }
        self.dropped.push(DropEntry {
            id: msg.id,
            kind: msg.kind,
            src: msg.src,
            dst: msg.dst,
            send_time: msg.send_time,
            cause,
        });
    }

    /// Removes and returns every queued message due at or before `now`,
    /// ordered by delivery time then send order.
    pub fn deliver_due(&mut self, now: SimTime) -> Vec<Message> {
        let later = self.queue.split_off(&(SimTime(now.0.saturating_add(1)), 0));
        let due = std::mem::replace(&mut self.queue, later);
        due.into_values().map(|m| self.log_delivery(m)).collect()
    }

    pub fn flush(&mut self) -> Vec<Message> {
        let due = std::mem::take(&mut self.queue);
        due.into_values().map(|m| self.log_delivery(m)).collect()
    }

    fn log_delivery(&mut self, m: Message) -> Message {
        self.stats.delivered += 1;
        self.delivered.push(TrafficEntry {
            id: m.id,
            src: m.src,
            dst: m.dst,
            kind: m.kind,
            protocol_tag: m.protocol_tag.clone(),
            bytes: m.payload_size,
            send_time: m.send_time,
            deliver_time: m.deliver_time.unwrap_or(m.send_time),
        });
        m
    }

    /// Adds `rate` noise messages at seeded times inside `[start, start + span)`.
    pub fn inject_background_traffic(&mut self, rate: u32, start: SimTime, span_secs: u32) -> Result<(), NetError> {
        let pool: Vec<Endpoint> = self.endpoints.iter().copied().collect();
        if rate == 0 || pool.len() < 2 {
            return Ok(());
        }
        let span_us = span_secs as u64 * SimTime::MICROS_PER_SEC;
        for _ in 0..rate {
            let offset = self.noise_rng.gen_range(0..span_us.max(1));
            let src = pool[self.noise_rng.gen_range(0..pool.len())];
            let mut dst = pool[self.noise_rng.gen_range(0..pool.len() - 1)];
            if dst >= src {
                // skip over src so the pair is always distinct
                let idx = pool.iter().position(|e| *e == dst).unwrap_or(0) + 1;
                dst = pool[idx.min(pool.len() - 1)];
            }
            let web = self.noise_rng.gen::<f64>() < self.noise.web_fraction;
            let (lo, hi, tag) = if web {
                (self.noise.web_bytes.0, self.noise.web_bytes.1, "web")
            } else {
                (self.noise.update_bytes.0, self.noise.update_bytes.1, "update")
            };
            let bytes = self.noise_rng.gen_range(lo..=hi.max(lo));
            let mut msg = Message::new(src, dst, MessageKind::Noise, start.plus_micros(offset), Payload::Noise);
            msg.payload_size = bytes;
            msg.protocol_tag = tag.to_string();
            self.send(msg)?;
        }
        Ok(())
    }

    pub fn stats(&self) -> NetStats {
        self.stats
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    pub fn delivered_log(&self) -> &[TrafficEntry] {
        &self.delivered
    }

    pub fn drop_log(&self) -> &[DropEntry] {
        &self.dropped
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrafficRecord {
    pub bucket_start: u64,
    pub src: String,
    pub dst: String,
    pub protocol_tag: String,
    pub packet_count: u64,
    pub total_bytes: u64,
}

/// Five-minute capture over delivered traffic, keyed by send time.
/// Entries sent at or after `horizon` are excluded.
pub fn capture_traffic_summary(delivered: &[TrafficEntry], horizon: SimTime) -> Vec<TrafficRecord> {
    let bucket_us = CAPTURE_BUCKET_SECS * SimTime::MICROS_PER_SEC;
    let mut map: BTreeMap<(u64, String, String, String), (u64, u64)> = BTreeMap::new();
    for e in delivered.iter().filter(|e| e.send_time < horizon) {
        let bucket = e.send_time.micros() / bucket_us * CAPTURE_BUCKET_SECS;
        let slot = map
            .entry((bucket, e.src.to_string(), e.dst.to_string(), e.protocol_tag.clone()))
            .or_default();
        slot.0 += 1;
        slot.1 += e.bytes as u64;
    }
    map.into_iter()
        .map(|((bucket_start, src, dst, protocol_tag), (packet_count, total_bytes))| TrafficRecord {
            bucket_start,
            src,
            dst,
            protocol_tag,
            packet_count,
            total_bytes,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(drop_prob: f64) -> Network {
        let mut n = Network::new(LinkModel { base_latency: 0.05, jitter: 0.02, drop_prob }, 42);
        n.register_all([Endpoint::Prosumer(1), Endpoint::Prosumer(2), Endpoint::Market]);
        n
    }

    fn msg(t: u64) -> Message {
        Message::new(Endpoint::Prosumer(1), Endpoint::Market, MessageKind::Noise, SimTime::from_secs(t), Payload::Noise)
    }

    #[test]
    fn drop_prob_extremes() {
        let mut n = net(0.0);
        for _ in 0..100 {
            n.send(msg(0)).unwrap();
        }
        assert_eq!(n.deliver_due(SimTime::from_secs(1)).len(), 100);
        let mut n = net(1.0);
        for _ in 0..100 {
            n.send(msg(0)).unwrap();
        }
        assert!(n.deliver_due(SimTime::from_secs(1)).is_empty());
        assert_eq!(n.stats().dropped_link, 100);
    }

    #[test]
    fn seeded_drops_replay() {
        let run = || {
            let mut n = net(0.3);
            for _ in 0..1000 {
                n.send(msg(0)).unwrap();
            }
            n.drop_log().iter().map(|d| d.id).collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.len() > 200 && a.len() < 400, "{}", a.len());
    }

    #[test]
    fn unregistered_endpoint() {
        let mut n = net(0.0);
        let m = Message::new(Endpoint::Prosumer(9), Endpoint::Market, MessageKind::Bid, SimTime(0), Payload::Noise);
        assert_eq!(n.send(m), Err(NetError::UnregisteredEndpoint("prosumer:9".into())));
    }

    #[test]
    fn delivery_order_and_cutoff() {
        let mut n = Network::new(LinkModel { base_latency: 1.0, jitter: 0.0, drop_prob: 0.0 }, 1);
        n.register_all([Endpoint::Prosumer(1), Endpoint::Market]);
        assert!(n.deliver_due(SimTime::from_secs(100)).is_empty());
        let a = n.send(msg(10)).unwrap();
        let b = n.send(msg(10)).unwrap();
        n.send(msg(11)).unwrap();
        // due at 11 s; at 11 s the third one (due 12 s) stays queued
        let got: Vec<u64> = n.deliver_due(SimTime::from_secs(11)).iter().map(|m| m.id).collect();
        assert_eq!(got, vec![a, b]);
        assert_eq!(n.in_flight(), 1);
        assert!(n.deliver_due(SimTime::from_secs(12) .plus_micros(0)).len() == 1);
    }

    #[test]
    fn background_traffic_counts() {
        let mut n = net(0.0);
        n.inject_background_traffic(0, SimTime(0), 900).unwrap();
        assert_eq!(n.stats().sent, 0);
        n.inject_background_traffic(10, SimTime(0), 900).unwrap();
        assert_eq!(n.stats().sent, 10);
        let a: Vec<_> = n.flush().into_iter().map(|m| (m.src, m.dst, m.payload_size, m.send_time)).collect();
        let mut m = net(0.0);
        m.inject_background_traffic(10, SimTime(0), 900).unwrap();
        let b: Vec<_> = m.flush().into_iter().map(|m| (m.src, m.dst, m.payload_size, m.send_time)).collect();
        assert_eq!(a, b);
        assert!(a.iter().all(|(s, d, _, _)| s != d));
    }

    #[test]
    fn capture_buckets() {
        assert!(capture_traffic_summary(&[], SimTime::from_secs(900)).is_empty());
        let entry = |t: u64, bytes: u32| TrafficEntry {
            id: t,
            src: Endpoint::Prosumer(1),
            dst: Endpoint::Market,
            kind: MessageKind::Bid,
            protocol_tag: "bid".into(),
            bytes,
            send_time: SimTime::from_secs(t),
            deliver_time: SimTime::from_secs(t),
        };
        let recs = capture_traffic_summary(&[entry(10, 100), entry(20, 100)], SimTime::from_secs(900));
        assert_eq!(recs.len(), 1);
        assert_eq!((recs[0].packet_count, recs[0].total_bytes), (2, 200));
        let recs = capture_traffic_summary(&[entry(299, 1), entry(300, 1)], SimTime::from_secs(900));
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].bucket_start, 0);
        assert_eq!(recs[1].bucket_start, 300);
    }

    #[test]
    fn conservation() {
        let mut n = net(0.4);
        for i in 0..500 {
            n.send(msg(i)).unwrap();
        }
        n.suppress(msg(0)).unwrap();
        n.deliver_due(SimTime::from_secs(200));
        n.flush();
        let s = n.stats();
        assert_eq!(s.sent, s.delivered + s.dropped());
        assert_eq!(s.dropped_attack, 1);
    }
}
