use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::time::SimTime;
use crate::traffic::FlowClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Packet {
    pub flow: u32,
    pub seq: u32,
    pub class: FlowClass,
    pub retransmission_count: u16,
    /// Injection time of this attempt at the source server.
    pub created_at: SimTime,
    pub(crate) enqueued_at: SimTime,
    pub(crate) path_sig: u64,
    /// Took a random egress at some hop of this attempt.
    pub(crate) sprayed: bool,
}

impl Packet {
    pub fn new(flow: u32, seq: u32, class: FlowClass, created_at: SimTime) -> Self {
        Self {
            flow,
            seq,
            class,
            retransmission_count: 0,
            created_at,
            enqueued_at: created_at,
            path_sig: 0,
            sprayed: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheduling {
    /// Alternate between the two class queues when both are backlogged.
    #[default]
    RoundRobin,
    /// Always serve the short queue first.
    ShortPriority,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QueueSharing {
    /// Each class queue holds the full configured capacity.
    #[default]
    PerClass,
    /// Both class queues draw from one buffer of the configured capacity.
    Shared,
}

#[inline]
fn slot(class: FlowClass) -> usize {
    match class {
        FlowClass::Short => 0,
        FlowClass::Long => 1,
    }
}

/// Per-class counters, indexed `[short, long]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassCounters {
    pub arrivals: [u64; 2],
    pub served: [u64; 2],
    pub drops: [u64; 2],
    pub wait_ns: [u64; 2],
}

impl ClassCounters {
    pub fn add(&mut self, other: &ClassCounters) {
        for i in 0..2 {
            self.arrivals[i] += other.arrivals[i];
            self.served[i] += other.served[i];
            self.drops[i] += other.drops[i];
            self.wait_ns[i] += other.wait_ns[i];
        }
    }

    /// Mean queueing delay (seconds) of served packets of a class.
    pub fn mean_wait(&self, class: FlowClass) -> Option<f64> {
        let s = slot(class);
        (self.served[s] > 0).then(|| self.wait_ns[s] as f64 / self.served[s] as f64 / 1e9)
    }

    pub fn loss_ratio(&self, class: FlowClass) -> Option<f64> {
        let s = slot(class);
        (self.arrivals[s] > 0).then(|| self.drops[s] as f64 / self.arrivals[s] as f64)
    }
}

/// Dual class queues in front of one deterministic server. Capacity counts
/// waiting packets; the packet in service does not occupy a slot.
#[derive(Debug, Clone)]
pub struct PortQueues {
    queues: [VecDeque<Packet>; 2],
    capacity: usize,
    sharing: QueueSharing,
    scheduling: Scheduling,
    prefer_long: bool,
    in_service: Option<Packet>,
    pub counters: ClassCounters,
}

impl PortQueues {
    pub fn new(capacity: usize, sharing: QueueSharing, scheduling: Scheduling) -> Self {
        Self {
            queues: [VecDeque::new(), VecDeque::new()],
            capacity,
            sharing,
            scheduling,
            prefer_long: false,
            in_service: None,
            counters: ClassCounters::default(),
        }
    }

    pub fn len(&self, class: FlowClass) -> usize {
        self.queues[slot(class)].len()
    }

    pub fn is_empty(&self) -> bool {
        self.queues[0].is_empty() && self.queues[1].is_empty()
    }

    pub fn is_busy(&self) -> bool {
        self.in_service.is_some()
    }

    fn full(&self, class: FlowClass) -> bool {
        match self.sharing {
            QueueSharing::PerClass => self.queues[slot(class)].len() >= self.capacity,
            QueueSharing::Shared => self.queues[0].len() + self.queues[1].len() >= self.capacity,
        }
    }

    /// Tail drop: hands the packet back if its class queue is full.
    pub fn enqueue(&mut self, mut pkt: Packet, now: SimTime) -> Result<(), Packet> {
        let s = slot(pkt.class);
        self.counters.arrivals[s] += 1;
        if self.full(pkt.class) {
            self.counters.drops[s] += 1;
            return Err(pkt);
        }
        pkt.enqueued_at = now;
        self.queues[s].push_back(pkt);
        Ok(())
    }

    fn pick(&mut self) -> Option<usize> {
        let (short, long) = (!self.queues[0].is_empty(), !self.queues[1].is_empty());
        match (short, long) {
            (false, false) => None,
            (true, false) => Some(0),
            (false, true) => Some(1),
            (true, true) => Some(match self.scheduling {
                Scheduling::ShortPriority => 0,
                Scheduling::RoundRobin => usize::from(self.prefer_long),
            }),
        }
    }

    /// Moves the next packet into service, if the server is idle.
    pub fn start_service(&mut self, now: SimTime) -> Option<&Packet> {
        if self.in_service.is_some() {
            return None;
        }
        let s = self.pick()?;
        let pkt = self.queues[s].pop_front().expect("picked queue is non-empty");
        self.prefer_long = s == 0;
        self.counters.served[s] += 1;
        self.counters.wait_ns[s] += now - pkt.enqueued_at;
        self.in_service = Some(pkt);
        self.in_service.as_ref()
    }

    pub fn finish_service(&mut self) -> Option<Packet> {
        self.in_service.take()
    }
}
