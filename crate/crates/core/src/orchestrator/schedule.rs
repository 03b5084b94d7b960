use std::sync::atomic::{AtomicI64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::model::Timestamp;

/// 2024-01-01T00:00:00Z. Virtual time starts here; one tick is one millisecond.
pub const VIRTUAL_EPOCH_MILLIS: i64 = 1_704_067_200_000;

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
    /// Moves the clock forward to at least `t`. Wall clocks ignore this.
    fn advance_to(&self, t: Timestamp);
}

#[derive(Debug)]
pub struct VirtualClock {
    now: AtomicI64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::starting_at(Timestamp(VIRTUAL_EPOCH_MILLIS))
    }

    pub fn starting_at(t: Timestamp) -> Self {
        VirtualClock {
            now: AtomicI64::new(t.millis()),
        }
    }

    pub fn tick(&self, ticks: u64) -> Timestamp {
        let t = self.now.fetch_add(ticks as i64, Ordering::SeqCst) + ticks as i64;
        Timestamp(t)
    }
}

impl Default for VirtualClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.now.load(Ordering::SeqCst))
    }

    fn advance_to(&self, t: Timestamp) {
        self.now.fetch_max(t.millis(), Ordering::SeqCst);
    }
}

/// Wall-clock milliseconds, never running backwards.
#[derive(Debug, Default)]
pub struct SystemClock {
    last: AtomicI64,
}

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        let wall = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or(0);
        let prev = self.last.fetch_max(wall, Ordering::SeqCst);
        Timestamp(prev.max(wall))
    }

    fn advance_to(&self, _t: Timestamp) {}
}

/// Decides among `n > 1` equally eligible alternatives.
pub trait Scheduler {
    fn choose(&mut self, n: usize) -> usize;
}

#[derive(Debug, Clone)]
pub struct SeededScheduler {
    rng: ChaCha8Rng,
}

impl SeededScheduler {
    pub fn new(seed: u64) -> Self {
        SeededScheduler {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream per request, so one request's schedule does not
    /// depend on how many choices earlier requests made.
    pub fn for_request(seed: u64, request_id: &str) -> Self {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(request_id.as_bytes());
        let d = h.finalize();
        Self::new(u64::from_le_bytes(d[..8].try_into().expect("eight bytes")))
    }
}

impl Scheduler for SeededScheduler {
    fn choose(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }
}

/// Replays a fixed prefix of choices, then always picks 0, recording the
/// arity of every decision it was asked to make.
#[derive(Debug, Clone, Default)]
pub struct ExhaustiveScheduler {
    prefix: Vec<usize>,
    taken: Vec<(usize, usize)>,
}

impl ExhaustiveScheduler {
    fn with_prefix(prefix: Vec<usize>) -> Self {
        ExhaustiveScheduler {
            prefix,
            taken: Vec::new(),
        }
    }

    /// The choices made so far, as (choice, arity).
    pub fn decisions(&self) -> &[(usize, usize)] {
        &self.taken
    }

    /// Next prefix in depth-first order, or `None` once exhausted.
    fn successor(&self) -> Option<Vec<usize>> {
        let i = self.taken.iter().rposition(|&(c, n)| c + 1 < n)?;
        let mut next: Vec<usize> = self.taken[..i].iter().map(|&(c, _)| c).collect();
        next.push(self.taken[i].0 + 1);
        Some(next)
    }
}

impl Scheduler for ExhaustiveScheduler {
    fn choose(&mut self, n: usize) -> usize {
        let c = self
            .prefix
            .get(self.taken.len())
            .copied()
            .unwrap_or(0)
            .min(n - 1);
        self.taken.push((c, n));
        c
    }
}

/// Runs `f` once per distinct decision sequence, depth first. `f` must
/// build fresh state each time, since every run starts from scratch.
/// Stops after `limit` runs.
pub fn enumerate_schedules<T>(limit: usize, mut f: impl FnMut(&mut dyn Scheduler) -> T) -> Vec<T> {
    let mut out = Vec::new();
    let mut prefix = Some(Vec::new());
    while let Some(p) = prefix.take() {
        if out.len() >= limit {
            break;
        }
        let mut s = ExhaustiveScheduler::with_prefix(p);
        out.push(f(&mut s));
        prefix = s.successor();
    }
    out
}

/// How a plan's nodes are driven.
pub enum Runtime<'a> {
    /// Single-threaded virtual time; ties broken by the scheduler.
    Deterministic(&'a mut dyn Scheduler),
    /// One thread per in-flight call, bounded by the real deadline.
    Concurrent,
}
