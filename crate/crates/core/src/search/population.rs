use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use crate::arch::ArchGenome;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Member {
    pub id: usize,
    pub genome: ArchGenome,
    #[serde(with = "crate::serde_f64")]
    pub score: f64,
}

/// Fixed-capacity FIFO of evaluated architectures; the oldest member is
/// evicted when a new one arrives at capacity.
#[derive(Clone, Debug)]
pub struct Population {
    capacity: usize,
    members: VecDeque<Member>,
}

impl Population {
    pub fn new(capacity: usize) -> Self {
        Population {
            capacity,
            members: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.members.len() == self.capacity
    }

    /// Oldest first.
    pub fn members(&self) -> impl Iterator<Item = &Member> {
        self.members.iter()
    }

    /// Admits a member, returning the evicted oldest one if at capacity.
    pub fn push(&mut self, member: Member) -> Option<Member> {
        let evicted = if self.members.len() == self.capacity {
            self.members.pop_front()
        } else {
            None
        };
        self.members.push_back(member);
        evicted
    }

    /// Tournament: `s` members drawn without replacement, lowest score wins,
    /// ties go to the earliest inserted.
    pub fn select_parent<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> Result<&Member> {
        if s == 0 || s > self.members.len() {
            return Err(Error::Config(format!(
                "sample size {s} exceeds population of {}",
                self.members.len()
            )));
        }
        let mut picked = sample(rng, self.members.len(), s).into_vec();
        picked.sort_unstable();
        let best = picked
            .into_iter()
            .reduce(|a, b| {
                if self.members[b].score < self.members[a].score {
                    b
                } else {
                    a
                }
            })
            .expect("s >= 1");
        Ok(&self.members[best])
    }
}
