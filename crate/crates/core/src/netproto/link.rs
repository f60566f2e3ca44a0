//! Seeded link impairment: constant latency, uniform jitter and independent
//! drops. Reordering falls out of jitter.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkModel {
    /// Constant one-way delay, s.
    pub base_latency: f64,
    /// Half-width of the uniform delay perturbation, s.
    pub jitter: f64,
    pub drop_prob: f64,
    pub seed: u64,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self {
            base_latency: 0.0,
            jitter: 0.0,
            drop_prob: 0.0,
            seed: 0,
        }
    }
}

impl LinkModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.base_latency >= 0.0 && self.base_latency.is_finite()) {
            return Err("base_latency must be >= 0".into());
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err("jitter must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err("drop_prob must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn is_ideal(&self) -> bool {
        self.base_latency == 0.0 && self.jitter == 0.0 && self.drop_prob == 0.0
    }
}

struct Pending<T> {
    deliver_at: f64,
    order: u64,
    item: T,
}

impl<T> PartialEq for Pending<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T> Eq for Pending<T> {}

impl<T> PartialOrd for Pending<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Pending<T> {
    // reversed: BinaryHeap is a max-heap and we want the earliest delivery first
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .deliver_at
            .total_cmp(&self.deliver_at)
            .then_with(|| other.order.cmp(&self.order))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub sent: u64,
    pub dropped: u64,
    pub delivered: u64,
}

/// One direction of an impaired link.
pub struct ImpairedLink<T> {
    model: LinkModel,
    rng: Xoshiro256PlusPlus,
    queue: BinaryHeap<Pending<T>>,
    next_order: u64,
    stats: LinkStats,
}

impl<T> ImpairedLink<T> {
    pub fn new(model: LinkModel) -> Self {
        Self {
            rng: Xoshiro256PlusPlus::seed_from_u64(model.seed),
            model,
            queue: BinaryHeap::new(),
            next_order: 0,
            stats: LinkStats::default(),
        }
    }

    pub fn model(&self) -> &LinkModel {
        &self.model
    }

    pub fn stats(&self) -> LinkStats {
        self.stats
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    /// Submits `item` at `send_time`; returns false if the link dropped it.
    pub fn send(&mut self, item: T, send_time: f64) -> bool {
        self.stats.sent += 1;
        let roll: f64 = self.rng.random();
        if roll < self.model.drop_prob {
            self.stats.dropped += 1;
            return false;
        }
        let jitter = if self.model.jitter > 0.0 {
            self.rng.random_range(-self.model.jitter..=self.model.jitter)
        } else {
            0.0
        };
        let deliver_at = (send_time + self.model.base_latency + jitter).max(send_time);
        self.queue.push(Pending {
            deliver_at,
            order: self.next_order,
            item,
        });
        self.next_order += 1;
        true
    }

    /// Releases every message due at or before `now`, earliest first, each
    /// paired with its delivery time.
    pub fn poll(&mut self, now: f64) -> Vec<(f64, T)> {
        let mut out = Vec::new();
        while self.queue.peek().is_some_and(|p| p.deliver_at <= now) {
            let p = self.queue.pop().expect("peeked");
            out.push((p.deliver_at, p.item));
        }
        self.stats.delivered += out.len() as u64;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ideal_link_delivers_immediately() {
        let mut l = ImpairedLink::new(LinkModel::default());
        l.send(1, 0.5);
        l.send(2, 0.5);
        let got: Vec<_> = l.poll(0.5).into_iter().map(|(_, v)| v).collect();
        assert_eq!(got, vec![1, 2]);
    }

    #[test]
    fn latency_holds_messages() {
        let mut l = ImpairedLink::new(LinkModel {
            base_latency: 0.020,
            ..Default::default()
        });
        l.send("a", 0.0);
        assert!(l.poll(0.019).is_empty());
        assert_eq!(l.poll(0.020).len(), 1);
    }

    #[test]
    fn full_drop_delivers_nothing() {
        let mut l = ImpairedLink::new(LinkModel {
            drop_prob: 1.0,
            seed: 3,
            ..Default::default()
        });
        for i in 0..1000 {
            l.send(i, i as f64 * 0.002);
        }
        assert!(l.poll(1e9).is_empty());
        assert_eq!(l.stats().dropped, 1000);
    }

    #[test]
    fn jitter_reorders_but_releases_in_time_order() {
        let mut l = ImpairedLink::new(LinkModel {
            base_latency: 0.02,
            jitter: 0.01,
            seed: 11,
            ..Default::default()
        });
        for i in 0..500u32 {
            l.send(i, i as f64 * 0.002);
        }
        let out = l.poll(10.0);
        assert_eq!(out.len(), 500);
        assert!(out.windows(2).all(|w| w[0].0 <= w[1].0));
        let ids: Vec<u32> = out.iter().map(|(_, v)| *v).collect();
        assert!(ids.windows(2).any(|w| w[0] > w[1]), "expected some reordering");
        for (t, id) in &out {
            let sent = *id as f64 * 0.002;
            assert!(*t >= sent + 0.01 - 1e-12 && *t <= sent + 0.03 + 1e-12);
        }
    }

    #[test]
    fn same_seed_same_fate() {
        let model = LinkModel {
            base_latency: 0.01,
            jitter: 0.005,
            drop_prob: 0.3,
            seed: 99,
        };
        let run = || {
            let mut l = ImpairedLink::new(model);
            for i in 0..200 {
                l.send(i, i as f64 * 0.002);
            }
            l.poll(100.0)
        };
        assert_eq!(run(), run());
    }
}
