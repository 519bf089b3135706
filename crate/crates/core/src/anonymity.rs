//! An ideal anonymity system: one round of user messages is delivered under a
//! secret uniform permutation, and replies travel back along the inverse.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{param_err, Error, Result};
use crate::params::{ServerId, UserId};

/// Position of a message in the delivered order.
pub type SlotId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Destination {
    Server(ServerId),
    /// A bundle whose parts go to several servers; the parts stay linked.
    Fanout,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Delivered<P> {
    pub slot: SlotId,
    pub destination: Destination,
    pub payload: P,
}

/// Messages entered by the users of one round, in entry order.
#[derive(Clone, Debug)]
pub struct AnonBatch<P> {
    inbound: Vec<(UserId, Destination, P)>,
}

impl<P> Default for AnonBatch<P> {
    fn default() -> Self {
        Self { inbound: Vec::new() }
    }
}

impl<P> AnonBatch<P> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, user: UserId, destination: Destination, payload: P) {
        self.inbound.push((user, destination, payload));
    }

    pub fn len(&self) -> usize {
        self.inbound.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inbound.is_empty()
    }

    /// Applies a fresh uniform permutation.
    pub fn mix<R: Rng + ?Sized>(self, rng: &mut R) -> Result<MixedBatch<P>> {
        if self.inbound.is_empty() {
            return param_err("cannot mix an empty batch");
        }
        let mut entries = self.inbound;
        entries.shuffle(rng);
        let mut slot_users = Vec::with_capacity(entries.len());
        let delivered = entries
            .into_iter()
            .enumerate()
            .map(|(slot, (user, destination, payload))| {
                slot_users.push(user);
                Delivered { slot, destination, payload }
            })
            .collect();
        Ok(MixedBatch { delivered, slot_users })
    }
}

/// A mixed batch. Only [`delivered`](Self::delivered) is visible to servers;
/// the slot-to-user map stays inside the channel.
#[derive(Clone, Debug)]
pub struct MixedBatch<P> {
    delivered: Vec<Delivered<P>>,
    slot_users: Vec<UserId>,
}

impl<P> MixedBatch<P> {
    pub fn delivered(&self) -> &[Delivered<P>] {
        &self.delivered
    }

    pub fn into_delivered(self) -> (Vec<Delivered<P>>, ReplyRouter) {
        (self.delivered, ReplyRouter { slot_users: self.slot_users })
    }

    pub fn router(&self) -> ReplyRouter {
        ReplyRouter { slot_users: self.slot_users.clone() }
    }

    pub fn len(&self) -> usize {
        self.delivered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delivered.is_empty()
    }
}

/// The inverse permutation, used to return replies.
#[derive(Clone, Debug)]
pub struct ReplyRouter {
    slot_users: Vec<UserId>,
}

impl ReplyRouter {
    /// Sends each reply to the user behind its slot. Exactly one reply per
    /// delivered message is required; output follows slot order.
    pub fn route_replies<R>(&self, replies: Vec<(SlotId, R)>) -> Result<Vec<(UserId, R)>> {
        let mut filled: Vec<Option<R>> = (0..self.slot_users.len()).map(|_| None).collect();
        for (slot, reply) in replies {
            let cell = filled
                .get_mut(slot)
                .ok_or_else(|| Error::Routing(format!("unknown slot {slot}")))?;
            if cell.replace(reply).is_some() {
                return Err(Error::Routing(format!("duplicate reply for slot {slot}")));
            }
        }
        filled
            .into_iter()
            .enumerate()
            .map(|(slot, reply)| {
                reply
                    .map(|r| (self.slot_users[slot], r))
                    .ok_or_else(|| Error::Routing(format!("no reply for slot {slot}")))
            })
            .collect()
    }
}
