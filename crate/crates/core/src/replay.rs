//! Fixed-capacity FIFO replay buffer with uniform sampling.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::features::{EncodedItem, Observation};
use crate::qnet::AdAction;

/// Default capacity of the replay buffer.
pub const DEFAULT_CAPACITY: usize = 10_000;

/// One `(s, a, r, s')` record.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Arc<Observation>,
    /// Taken action; the ad vector is all-zero for location 0.
    pub action: AdAction,
    pub r_ad: f64,
    pub r_ex: f64,
    /// `r_ad + alpha * r_ex` at the alpha used when the transition was stored.
    pub reward: f64,
    /// `None` when terminal.
    pub next_obs: Option<Arc<Observation>>,
    /// Candidates offered at the next request (empty when terminal).
    pub next_candidates: Arc<Vec<EncodedItem>>,
    pub terminal: bool,
    /// Monotone id assigned by the producer.
    pub serial: u64,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    /// Slot the next push writes to once the buffer is full.
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends; at capacity the oldest transition is overwritten.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.items.split_at(self.cursor);
        older.iter().chain(newer.iter())
    }

    /// Uniform draws with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices(batch_size, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }

    /// Storage slots of a uniform draw with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::Precondition("cannot sample from an empty replay buffer".into()));
        }
        let n = self.items.len();
        Ok((0..batch_size).map(|_| rng.random_range(0..n)).collect())
    }

    pub fn get(&self, slot: usize) -> Option<&Transition> {
        self.items.get(slot)
    }
}

/// Transition over random observations: a random candidate at a random
/// location (possibly 0), random rewards, and `next_candidates` fresh ads.
pub fn random_transition<R: Rng + ?Sized>(
    rng: &mut R,
    list_len: usize,
    serial: u64,
    terminal: bool,
    next_candidates: usize,
) -> Transition {
    use crate::features::{random_item, random_observation, ItemKind};
    let hist = |rng: &mut R| rng.random_range(0..6usize);
    let (rh, ah) = (hist(rng), hist(rng));
    let obs = Arc::new(random_observation(rng, list_len, rh, ah));
    let location = rng.random_range(0..list_len + 2);
    let action = if location == 0 {
        AdAction::no_ad()
    } else {
        AdAction::insert(random_item(ItemKind::Ad, rng).vector(), 0, location)
    };
    let r_ad = rng.random_range(0.0..1.0);
    let r_ex = rng.random_range(-1.0..1.0);
    let (next_obs, next) = if terminal {
        (None, Vec::new())
    } else {
        let (rh, ah) = (hist(rng), hist(rng));
        let next_obs = Arc::new(random_observation(rng, list_len, rh, ah));
        (Some(next_obs), (0..next_candidates).map(|_| random_item(ItemKind::Ad, rng)).collect())
    };
    Transition {
        obs,
        action,
        r_ad,
        r_ex,
        reward: r_ad + r_ex,
        next_obs,
        next_candidates: Arc::new(next),
        terminal,
        serial,
    }
}

/// Pearson goodness-of-fit p-value of `counts` against a uniform distribution.
pub fn uniformity_p_value(counts: &[u64]) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let k = counts.len();
    assert!(k >= 2, "need at least two cells");
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / k as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((k - 1) as f64).expect("positive degrees of freedom");
    1.0 - dist.cdf(stat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::random_observation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn transition(obs: &Arc<Observation>, serial: u64) -> Transition {
        Transition {
            obs: obs.clone(),
            action: AdAction::no_ad(),
            r_ad: 0.0,
            r_ex: 1.0,
            reward: 1.0,
            next_obs: None,
            next_candidates: Arc::new(Vec::new()),
            terminal: true,
            serial,
        }
    }

    fn filled(capacity: usize, pushes: u64) -> ReplayBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let obs = Arc::new(random_observation(&mut rng, 6, 2, 1));
        let mut b = ReplayBuffer::new(capacity);
        for s in 0..pushes {
            b.push(transition(&obs, s));
        }
        b
    }

    #[test]
    fn evicts_oldest_first() {
        let b = filled(5, 12);
        assert_eq!(b.len(), 5);
        let serials: Vec<u64> = b.iter().map(|t| t.serial).collect();
        assert_eq!(serials, vec![7, 8, 9, 10, 11]);
    }

    #[test]
    fn partial_fill_keeps_order() {
        let b = filled(10, 3);
        assert_eq!(b.iter().map(|t| t.serial).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn empty_sample_is_an_error() {
        let b = ReplayBuffer::new(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(b.sample(3, &mut rng), Err(Error::Precondition(_))));
    }

    #[test]
    fn sampling_is_uniform() {
        let b = filled(50, 80);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = vec![0u64; 50];
        for _ in 0..2000 {
            for i in b.sample_indices(25, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        assert!(uniformity_p_value(&counts) > 0.01);
    }

    #[test]
    fn skewed_counts_fail_uniformity() {
        let mut counts = vec![100u64; 20];
        counts[0] = 200;
        assert!(uniformity_p_value(&counts) < 0.01);
    }

    #[test]
    fn same_seed_same_draws() {
        let b = filled(30, 30);
        let draw = |s| b.sample_indices(64, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }
}
