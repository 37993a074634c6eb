//! Per-station cache lists and the online replacement policies.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gain::{normalizers, GainModel, Normalizers};
use crate::geometry::{ChannelModel, Configuration, Point, Topology};
use crate::traffic::{Request, NETWORK_STREAM, STATION_STREAM_BASE};

const NIL: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Node {
    content: u32,
    prev: u32,
    next: u32,
}

/// Ordered content list of one cache. Front = most recently inserted or
/// promoted; evictions happen at the rear.
#[derive(Clone)]
pub struct CacheList {
    capacity: usize,
    nodes: Vec<Node>,
    free: Vec<u32>,
    head: u32,
    tail: u32,
    len: usize,
    /// `slot[f]`: node holding content `f`, or `NIL`.
    slot: Vec<u32>,
}

impl CacheList {
    /// An empty list for contents `0..num_contents`.
    pub fn new(capacity: usize, num_contents: usize) -> Self {
        assert!(num_contents < NIL as usize, "catalog too large");
        CacheList {
            capacity,
            nodes: Vec::with_capacity(capacity),
            free: Vec::new(),
            head: NIL,
            tail: NIL,
            len: 0,
            slot: vec![NIL; num_contents],
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_full(&self) -> bool {
        self.len >= self.capacity
    }

    pub fn contains(&self, f: usize) -> bool {
        self.slot[f] != NIL
    }

    /// Position counted from the front.
    pub fn lookup(&self, f: usize) -> Option<usize> {
        let target = self.slot[f];
        if target == NIL {
            return None;
        }
        let mut at = self.head;
        let mut pos = 0;
        while at != target {
            at = self.nodes[at as usize].next;
            pos += 1;
        }
        Some(pos)
    }

    /// Puts `f` at the front, evicting the rear element first when full.
    /// Returns the evicted content. A zero-capacity cache stores nothing.
    pub fn insert_front(&mut self, f: usize) -> Option<usize> {
        debug_assert!(!self.contains(f), "content {f} already cached");
        if self.capacity == 0 {
            return None;
        }
        let evicted = if self.is_full() { self.pop_back() } else { None };
        let node = Node {
            content: f as u32,
            prev: NIL,
            next: self.head,
        };
        let idx = match self.free.pop() {
            Some(i) => {
                self.nodes[i as usize] = node;
                i
            }
            None => {
                self.nodes.push(node);
                (self.nodes.len() - 1) as u32
            }
        };
        if self.head != NIL {
            self.nodes[self.head as usize].prev = idx;
        } else {
            self.tail = idx;
        }
        self.head = idx;
        self.slot[f] = idx;
        self.len += 1;
        evicted
    }

    /// Moves a cached `f` to the front; returns false if absent.
    pub fn move_to_front(&mut self, f: usize) -> bool {
        let idx = self.slot[f];
        if idx == NIL {
            return false;
        }
        if idx != self.head {
            self.unlink(idx);
            let n = &mut self.nodes[idx as usize];
            n.prev = NIL;
            n.next = self.head;
            self.nodes[self.head as usize].prev = idx;
            self.head = idx;
        }
        true
    }

    /// Removes `f`; returns false if absent.
    pub fn remove(&mut self, f: usize) -> bool {
        let idx = self.slot[f];
        if idx == NIL {
            return false;
        }
        self.unlink(idx);
        self.slot[f] = NIL;
        self.free.push(idx);
        self.len -= 1;
        true
    }

    fn pop_back(&mut self) -> Option<usize> {
        if self.tail == NIL {
            return None;
        }
        let f = self.nodes[self.tail as usize].content as usize;
        self.remove(f);
        Some(f)
    }

    fn unlink(&mut self, idx: u32) {
        let Node { prev, next, .. } = self.nodes[idx as usize];
        if prev != NIL {
            self.nodes[prev as usize].next = next;
        } else {
            self.head = next;
        }
        if next != NIL {
            self.nodes[next as usize].prev = prev;
        } else {
            self.tail = prev;
        }
    }

    /// Contents from front to rear.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        let mut at = self.head;
        std::iter::from_fn(move || {
            if at == NIL {
                None
            } else {
                let n = self.nodes[at as usize];
                at = n.next;
                Some(n.content as usize)
            }
        })
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.iter().collect()
    }
}

impl fmt::Debug for CacheList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CacheList")
            .field("capacity", &self.capacity)
            .field("contents", &self.to_vec())
            .finish()
    }
}

impl PartialEq for CacheList {
    fn eq(&self, other: &Self) -> bool {
        self.capacity == other.capacity && self.iter().eq(other.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    QlruDelta,
    Qlru,
    Lru,
    Fifo,
    LruOne,
    LruAll,
    /// Contents never move; used to evaluate offline allocations.
    Static,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::QlruDelta => "qlru_delta",
            PolicyKind::Qlru => "qlru",
            PolicyKind::Lru => "lru",
            PolicyKind::Fifo => "fifo",
            PolicyKind::LruOne => "lru_one",
            PolicyKind::LruAll => "lru_all",
            PolicyKind::Static => "static",
        }
    }

    pub fn uses_q(self) -> bool {
        matches!(self, PolicyKind::QlruDelta | PolicyKind::Qlru)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    /// Base admission parameter; station `b` uses `q^gamma[b]`.
    pub q: f64,
    /// Per-station exponents; empty means all ones.
    pub gamma: Vec<f64>,
    /// Size of the id-only admission list, if any.
    pub virtual_cache: Option<usize>,
}

impl PolicySpec {
    pub fn new(kind: PolicyKind, q: f64) -> Self {
        PolicySpec {
            kind,
            q,
            gamma: Vec::new(),
            virtual_cache: None,
        }
    }

    pub fn validate(&self, stations: usize) -> Result<()> {
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::config("q", format!("must lie in (0, 1], got {}", self.q)));
        }
        if !self.gamma.is_empty() && self.gamma.len() != stations {
            return Err(Error::config(
                "gamma",
                format!("expected {stations} entries, got {}", self.gamma.len()),
            ));
        }
        if let Some(g) = self.gamma.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
            return Err(Error::config("gamma", format!("entries must be positive, got {g}")));
        }
        Ok(())
    }

    /// `q^(b) = q^gamma_b`.
    pub fn station_q(&self, b: usize) -> f64 {
        match self.gamma.get(b) {
            Some(g) => self.q.powf(*g),
            None => self.q,
        }
    }
}

/// What happened to one request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitOutcome {
    /// Stations in range of the user (`I_u`).
    pub coverage: Configuration,
    /// Stations in range holding the content (`J`).
    pub hits: Configuration,
    pub served: bool,
    /// Seconds.
    pub delay: f64,
    pub gain_sample: f64,
    pub promoted: Configuration,
    pub inserted: Configuration,
}

/// Network-wide copy counts with request-averaged accumulation.
#[derive(Debug, Clone)]
struct Occupancy {
    count: Vec<u8>,
    last: Vec<u64>,
    acc: Vec<f64>,
    clock: u64,
}

impl Occupancy {
    fn new(f: usize) -> Self {
        Occupancy {
            count: vec![0; f],
            last: vec![0; f],
            acc: vec![0.0; f],
            clock: 0,
        }
    }

    fn change(&mut self, f: usize, up: bool) {
        self.acc[f] += f64::from(self.count[f]) * (self.clock - self.last[f]) as f64;
        self.last[f] = self.clock;
        if up {
            self.count[f] += 1;
        } else {
            self.count[f] -= 1;
        }
    }

    fn reset(&mut self) {
        self.acc.iter_mut().for_each(|a| *a = 0.0);
        self.last.iter_mut().for_each(|l| *l = 0);
        self.clock = 0;
    }

    fn average(&self) -> Vec<f64> {
        if self.clock == 0 {
            return self.count.iter().map(|c| f64::from(*c)).collect();
        }
        let t = self.clock as f64;
        self.acc
            .iter()
            .zip(&self.count)
            .zip(&self.last)
            .map(|((a, c), l)| (a + f64::from(*c) * (self.clock - l) as f64) / t)
            .collect()
    }
}

fn bernoulli(rng: &mut ChaCha8Rng, p: f64) -> bool {
    if p >= 1.0 {
        true
    } else if p <= 0.0 {
        false
    } else {
        rng.random::<f64>() < p
    }
}

/// The caches of every station plus the randomness driving their updates.
#[derive(Debug, Clone)]
pub struct Network<'a> {
    topology: &'a Topology,
    spec: PolicySpec,
    gain: &'a dyn GainModel,
    norm: Normalizers,
    channel: ChannelModel,
    caches: Vec<CacheList>,
    shadow: Option<Vec<CacheList>>,
    station_q: Vec<f64>,
    station_rng: Vec<ChaCha8Rng>,
    net_rng: ChaCha8Rng,
    occupancy: Occupancy,
    snr: Vec<f64>,
}

impl<'a> Network<'a> {
    /// Empty caches of size `capacity`. `gain` drives `qlru_delta` decisions
    /// and selects how delays are accounted: joint transmission from every
    /// holder for the delay gain, a single serving station otherwise.
    pub fn new(
        topology: &'a Topology,
        spec: PolicySpec,
        gain: &'a dyn GainModel,
        channel: ChannelModel,
        capacity: usize,
        num_contents: usize,
        seed: u64,
    ) -> Result<Self> {
        let b = topology.len();
        spec.validate(b)?;
        channel.validate()?;
        if num_contents > u32::MAX as usize - 1 {
            return Err(Error::config("F", "catalog too large"));
        }
        if b > u8::MAX as usize {
            return Err(Error::config("stations", "copy counts are tracked in 8 bits"));
        }
        let norm = normalizers(gain, topology)?;
        let station_q = (0..b).map(|i| spec.station_q(i)).collect();
        let station_rng = (0..b)
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(STATION_STREAM_BASE + i as u64);
                r
            })
            .collect();
        let mut net_rng = ChaCha8Rng::seed_from_u64(seed);
        net_rng.set_stream(NETWORK_STREAM);
        let shadow = spec
            .virtual_cache
            .map(|v| (0..b).map(|_| CacheList::new(v, num_contents)).collect());
        let h = channel.snr.min();
        Ok(Network {
            topology,
            spec,
            gain,
            norm,
            channel,
            caches: (0..b).map(|_| CacheList::new(capacity, num_contents)).collect(),
            shadow,
            station_q,
            station_rng,
            net_rng,
            occupancy: Occupancy::new(num_contents),
            snr: vec![h; b],
        })
    }

    /// Preloads caches; `contents[b]` is listed front to rear.
    pub fn preload(&mut self, contents: &[Vec<usize>]) -> Result<()> {
        if contents.len() != self.caches.len() {
            return Err(Error::config("initial_allocation", "one list per station expected"));
        }
        for (b, list) in contents.iter().enumerate() {
            if list.len() > self.caches[b].capacity() {
                return Err(Error::config(
                    "initial_allocation",
                    format!("station {b} is given {} contents", list.len()),
                ));
            }
            for &f in list.iter().rev() {
                if f >= self.occupancy.count.len() || self.caches[b].contains(f) {
                    return Err(Error::config(
                        "initial_allocation",
                        format!("invalid or repeated content {f} at station {b}"),
                    ));
                }
                self.store(b, f);
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    pub fn normalizers(&self) -> Normalizers {
        self.norm
    }

    pub fn caches(&self) -> &[CacheList] {
        &self.caches
    }

    /// `x_f`: stations holding `f`.
    pub fn configuration(&self, f: usize) -> Configuration {
        self.caches
            .iter()
            .enumerate()
            .filter(|(_, c)| c.contains(f))
            .fold(Configuration::EMPTY, |x, (b, _)| x.with(b))
    }

    /// Current network copy count of every content.
    pub fn copy_counts(&self) -> &[u8] {
        &self.occupancy.count
    }

    /// Restarts occupancy averaging (start of the measurement phase).
    pub fn reset_occupancy(&mut self) {
        self.occupancy.reset();
    }

    /// Counts the current state as one sample of the occupancy average.
    pub fn tick_occupancy(&mut self) {
        self.occupancy.clock += 1;
    }

    /// Copy counts averaged over the ticks since the last reset.
    pub fn occupancy(&self) -> Vec<f64> {
        self.occupancy.average()
    }

    fn store(&mut self, b: usize, f: usize) {
        if self.caches[b].capacity() == 0 {
            return;
        }
        if let Some(old) = self.caches[b].insert_front(f) {
            self.occupancy.change(old, false);
        }
        self.occupancy.change(f, true);
    }

    /// Serves one request and applies the policy's cache updates.
    pub fn process_request(&mut self, request: &Request) -> HitOutcome {
        self.process_at(&request.location, request.content)
    }

    /// As [`Network::process_request`] for content `f` requested at `location`.
    pub fn process_at(&mut self, location: &Point, f: usize) -> HitOutcome {
        let coverage = self.topology.coverage_set(location);
        debug_assert!(!coverage.is_empty(), "request from an uncovered location");
        let hits = coverage
            .iter()
            .filter(|&b| self.caches[b].contains(f))
            .fold(Configuration::EMPTY, |x, b| x.with(b));

        let random_snr = !self.channel.snr.is_constant();
        if random_snr {
            for b in coverage.iter() {
                self.snr[b] = self.channel.snr.sample(&mut self.net_rng);
            }
        }
        let serving = if hits.is_empty() {
            None
        } else {
            Some(self.pick(hits))
        };
        let delay = match serving {
            Some(s) => {
                if self.gain.kind() == crate::gain::GainKind::CompDelay {
                    let sum: f64 = hits.iter().map(|b| self.snr[b]).sum();
                    self.channel.transmission_delay(sum)
                } else {
                    self.channel.transmission_delay(self.snr[s])
                }
            }
            None => {
                let retrieval = if random_snr {
                    self.pick(coverage)
                } else {
                    coverage.iter().next().unwrap_or(0)
                };
                self.channel.backhaul_delay_s + self.channel.transmission_delay(self.snr[retrieval])
            }
        };
        let gain_sample = self.gain.realized_gain(hits, delay);

        let mut promoted = Configuration::EMPTY;
        let mut inserted = Configuration::EMPTY;
        match self.spec.kind {
            PolicyKind::Static => {}
            PolicyKind::QlruDelta => {
                for b in hits.iter() {
                    let p = self.norm.beta * self.gain.promote_marginal(b, hits, &self.snr);
                    if bernoulli(&mut self.station_rng[b], p) {
                        self.caches[b].move_to_front(f);
                        promoted = promoted.with(b);
                    }
                }
                for b in coverage.difference(hits).iter() {
                    let p = self.station_q[b]
                        * (self.norm.delta * self.gain.insert_marginal(b, hits, &self.snr))
                            .clamp(0.0, 1.0);
                    if self.admit(b, f, p) {
                        inserted = inserted.with(b);
                    }
                }
            }
            PolicyKind::Qlru | PolicyKind::Lru | PolicyKind::Fifo => match serving {
                Some(s) => {
                    if self.spec.kind != PolicyKind::Fifo {
                        self.caches[s].move_to_front(f);
                        promoted = promoted.with(s);
                    }
                }
                None => {
                    for b in coverage.iter() {
                        let p = if self.spec.kind == PolicyKind::Qlru {
                            self.station_q[b]
                        } else {
                            1.0
                        };
                        if self.admit(b, f, p) {
                            inserted = inserted.with(b);
                        }
                    }
                }
            },
            PolicyKind::LruOne => {
                if let Some(r) = self.topology.nearest_covering(location) {
                    if hits.contains(r) {
                        self.caches[r].move_to_front(f);
                        promoted = promoted.with(r);
                    } else if self.admit(r, f, 1.0) {
                        inserted = inserted.with(r);
                    }
                }
            }
            PolicyKind::LruAll => {
                for b in hits.iter() {
                    self.caches[b].move_to_front(f);
                }
                promoted = hits;
                for b in coverage.difference(hits).iter() {
                    if self.admit(b, f, 1.0) {
                        inserted = inserted.with(b);
                    }
                }
            }
        }

        HitOutcome {
            coverage,
            hits,
            served: !hits.is_empty(),
            delay,
            gain_sample,
            promoted,
            inserted,
        }
    }

    /// Uniform member of a nonempty set; draws only when there is a choice.
    fn pick(&mut self, set: Configuration) -> usize {
        let n = set.weight() as usize;
        let k = if n > 1 {
            self.net_rng.random_range(0..n)
        } else {
            0
        };
        set.iter().nth(k).expect("nonempty set")
    }

    /// Local miss at `b`: consults the id-only list if configured, then
    /// inserts with probability `p`.
    fn admit(&mut self, b: usize, f: usize, p: f64) -> bool {
        if let Some(shadow) = &mut self.shadow {
            let known = shadow[b].move_to_front(f);
            if !known {
                shadow[b].insert_front(f);
                return false;
            }
        }
        if bernoulli(&mut self.station_rng[b], p) {
            self.store(b, f);
            true
        } else {
            false
        }
    }
}
