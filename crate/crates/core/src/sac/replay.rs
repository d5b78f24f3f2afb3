use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// One `(s, a, r, s′, done)` tuple. `done` marks genuine terminal states only.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

/// Structure-of-arrays minibatch; every matrix is row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(items: &[Transition]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Contract("a batch must not be empty".into()))?;
        let (sd, ad) = (first.s.len(), first.a.len());
        let mut b = Batch {
            size: items.len(),
            states: Vec::with_capacity(items.len() * sd),
            actions: Vec::with_capacity(items.len() * ad),
            rewards: Vec::with_capacity(items.len()),
            next_states: Vec::with_capacity(items.len() * sd),
            dones: Vec::with_capacity(items.len()),
        };
        for t in items {
            check_len("transition state", sd, t.s.len())?;
            check_len("transition next state", sd, t.s_next.len())?;
            check_len("transition action", ad, t.a.len())?;
            b.states.extend_from_slice(&t.s);
            b.actions.extend_from_slice(&t.a);
            b.rewards.push(t.r);
            b.next_states.extend_from_slice(&t.s_next);
            b.dones.push(t.done);
        }
        Ok(b)
    }
}

/// Fixed-capacity FIFO ring of transitions with uniform sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    dones: Vec<bool>,
    /// Total insertions ever made; the write slot is `inserted % capacity`.
    inserted: u64,
}

/// Flat storage of a buffer, in slot order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayContents {
    pub capacity: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub inserted: u64,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub dones: Vec<bool>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            state_dim,
            action_dim,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            dones: Vec::new(),
            inserted: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn total_inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        check_len("transition state", self.state_dim, t.s.len())?;
        check_len("transition next state", self.state_dim, t.s_next.len())?;
        check_len("transition action", self.action_dim, t.a.len())?;
        let (sd, ad) = (self.state_dim, self.action_dim);
        if self.len() < self.capacity {
            self.states.extend_from_slice(&t.s);
            self.actions.extend_from_slice(&t.a);
            self.rewards.push(t.r);
            self.next_states.extend_from_slice(&t.s_next);
            self.dones.push(t.done);
        } else {
            let slot = (self.inserted % self.capacity as u64) as usize;
            self.states[slot * sd..(slot + 1) * sd].copy_from_slice(&t.s);
            self.actions[slot * ad..(slot + 1) * ad].copy_from_slice(&t.a);
            self.rewards[slot] = t.r;
            self.next_states[slot * sd..(slot + 1) * sd].copy_from_slice(&t.s_next);
            self.dones[slot] = t.done;
        }
        self.inserted += 1;
        Ok(())
    }

    fn slot_of(&self, i: usize) -> usize {
        if self.len() < self.capacity {
            i
        } else {
            (self.inserted as usize + i) % self.capacity
        }
    }

    /// Transition `i` counted from the oldest one still stored.
    pub fn get(&self, i: usize) -> Option<Transition> {
        (i < self.len()).then(|| self.at_slot(self.slot_of(i)))
    }

    fn at_slot(&self, k: usize) -> Transition {
        let (sd, ad) = (self.state_dim, self.action_dim);
        Transition {
            s: self.states[k * sd..(k + 1) * sd].to_vec(),
            a: self.actions[k * ad..(k + 1) * ad].to_vec(),
            r: self.rewards[k],
            s_next: self.next_states[k * sd..(k + 1) * sd].to_vec(),
            done: self.dones[k],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Transition> + '_ {
        (0..self.len()).map(|i| self.at_slot(self.slot_of(i)))
    }

    /// Uniform storage slots, with replacement.
    pub fn sample_slots<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        let len = self.len();
        (0..n).map(|_| rng.random_range(0..len)).collect()
    }

    pub fn batch_from_slots(&self, slots: &[usize]) -> Batch {
        let (sd, ad) = (self.state_dim, self.action_dim);
        let mut b = Batch {
            size: slots.len(),
            states: Vec::with_capacity(slots.len() * sd),
            actions: Vec::with_capacity(slots.len() * ad),
            rewards: Vec::with_capacity(slots.len()),
            next_states: Vec::with_capacity(slots.len() * sd),
            dones: Vec::with_capacity(slots.len()),
        };
        for &k in slots {
            b.states.extend_from_slice(&self.states[k * sd..(k + 1) * sd]);
            b.actions.extend_from_slice(&self.actions[k * ad..(k + 1) * ad]);
            b.rewards.push(self.rewards[k]);
            b.next_states
                .extend_from_slice(&self.next_states[k * sd..(k + 1) * sd]);
            b.dones.push(self.dones[k]);
        }
        b
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Batch> {
        if self.is_empty() {
            return Err(Error::Contract("cannot sample from an empty buffer".into()));
        }
        Ok(self.batch_from_slots(&self.sample_slots(rng, n)))
    }

    pub fn contents(&self) -> ReplayContents {
        // Raw slot order, so a restored buffer samples the same slots.
        ReplayContents {
            capacity: self.capacity,
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            inserted: self.inserted,
            states: self.states.clone(),
            actions: self.actions.clone(),
            rewards: self.rewards.clone(),
            next_states: self.next_states.clone(),
            dones: self.dones.clone(),
        }
    }

    pub fn from_contents(c: ReplayContents) -> Result<Self> {
        let n = c.rewards.len();
        if n > c.capacity || (n as u64) > c.inserted || (n < c.capacity && n as u64 != c.inserted) {
            return Err(Error::Contract("inconsistent replay buffer contents".into()));
        }
        check_len("replay states", n * c.state_dim, c.states.len())?;
        check_len("replay next states", n * c.state_dim, c.next_states.len())?;
        check_len("replay actions", n * c.action_dim, c.actions.len())?;
        check_len("replay dones", n, c.dones.len())?;
        Ok(ReplayBuffer {
            capacity: c.capacity,
            state_dim: c.state_dim,
            action_dim: c.action_dim,
            states: c.states,
            actions: c.actions,
            rewards: c.rewards,
            next_states: c.next_states,
            dones: c.dones,
            inserted: c.inserted,
        })
    }
}
