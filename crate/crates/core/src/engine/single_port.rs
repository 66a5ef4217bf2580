//! One isolated switch port driven by an explicit arrival sequence, using the
//! same queue and timeline machinery as full runs.

use super::queue::{Packet, PortQueues, QueueSharing, Scheduling};
use super::timeline::Timeline;
use crate::time::SimTime;
use crate::traffic::FlowClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PortStats {
    pub offered: u64,
    pub dropped: u64,
    pub served: u64,
    pub total_wait_ns: u64,
}

impl PortStats {
    pub fn loss_ratio(&self) -> f64 {
        if self.offered == 0 {
            0.0
        } else {
            self.dropped as f64 / self.offered as f64
        }
    }
}

enum Ev {
    Arrival(usize),
    Done,
}

/// Feeds `arrivals` (nondecreasing, ns) into one long-class queue of
/// `capacity` waiting slots served in `service` ns per packet.
pub fn simulate(arrivals: &[SimTime], service: SimTime, capacity: usize) -> PortStats {
    let mut port = PortQueues::new(capacity, QueueSharing::PerClass, Scheduling::RoundRobin);
    let mut tl = Timeline::new();
    if let Some(&t) = arrivals.first() {
        tl.schedule(t, Ev::Arrival(0));
    }
    while let Some((now, ev)) = tl.pop() {
        match ev {
            Ev::Arrival(i) => {
                if let Some(&t) = arrivals.get(i + 1) {
                    tl.schedule(t, Ev::Arrival(i + 1));
                }
                let _ = port.enqueue(Packet::new(0, i as u32, FlowClass::Long, now), now);
            }
            Ev::Done => {
                port.finish_service();
            }
        }
        if port.start_service(now).is_some() {
            tl.schedule(now + service, Ev::Done);
        }
    }
    let c = port.counters;
    PortStats {
        offered: c.arrivals[1],
        dropped: c.drops[1],
        served: c.served[1],
        total_wait_ns: c.wait_ns[1],
    }
}
