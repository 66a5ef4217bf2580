//! Simulation clock. Time is kept in integer nanoseconds so event ordering is
//! exact and reproducible; public APIs report seconds.

pub type SimTime = u64;

pub const NS_PER_SEC: f64 = 1e9;

pub fn secs_to_ns(secs: f64) -> SimTime {
    (secs * NS_PER_SEC).round() as SimTime
}

pub fn ns_to_secs(ns: SimTime) -> f64 {
    ns as f64 / NS_PER_SEC
}
