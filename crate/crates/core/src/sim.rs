//! Request-driven experiment loop and its metrics.

use crate::error::{Error, Result};
use crate::gain::GainModel;
use crate::geometry::{ChannelModel, Topology};
use crate::placement::Allocation;
use crate::policies::{Network, PolicySpec};
use crate::traffic::{Catalog, RequestGenerator, RequestSource};

/// One simulation run.
#[derive(Debug, Clone)]
pub struct ExperimentConfig<'a> {
    pub topology: &'a Topology,
    pub catalog: &'a Catalog,
    pub source: &'a RequestSource,
    pub channel: ChannelModel,
    pub gain: &'a dyn GainModel,
    pub policy: PolicySpec,
    pub capacity: usize,
    pub warmup_requests: u64,
    pub measure_requests: u64,
    pub seed: u64,
    /// Caches start from this allocation instead of empty.
    pub initial_allocation: Option<&'a Allocation>,
    /// Occupancy vector that snapshots measure cosine distance against.
    pub reference_occupancy: Option<&'a [f64]>,
    /// Emit cumulative metrics every this many measured requests.
    pub snapshot_every: Option<u64>,
}

/// Cumulative metrics after some number of measured requests.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub requests_processed: u64,
    pub hit_rate: f64,
    pub mean_delay: f64,
    pub cosine_to_reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub requests: u64,
    pub hits: u64,
    pub hit_rate: f64,
    /// Seconds.
    pub mean_delay: f64,
    pub mean_gain: f64,
    /// For each station, the fraction of requests it covers that it could
    /// serve from its own cache.
    pub station_hit_rates: Vec<f64>,
    /// Network copies of each content, averaged over measured requests.
    pub occupancy: Vec<f64>,
    pub cosine_to_reference: Option<f64>,
    pub snapshots: Vec<Snapshot>,
}

#[derive(Default)]
struct Totals {
    requests: u64,
    hits: u64,
    delay: f64,
    gain: f64,
}

impl Totals {
    fn ratio(&self, v: f64) -> f64 {
        if self.requests == 0 {
            0.0
        } else {
            v / self.requests as f64
        }
    }
}

/// Runs warm-up then measurement; metrics cover the measurement phase only.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsReport> {
    let f = config.catalog.len();
    let b = config.topology.len();
    if let Some(r) = config.reference_occupancy {
        if r.len() != f {
            return Err(Error::config("reference", "occupancy length must equal F"));
        }
    }
    if config.snapshot_every == Some(0) {
        return Err(Error::config("snapshot_every", "must be positive"));
    }
    let mut requests =
        RequestGenerator::new(config.topology, config.catalog, config.source, config.seed)?;
    let mut net = Network::new(
        config.topology,
        config.policy.clone(),
        config.gain,
        config.channel,
        config.capacity,
        f,
        config.seed,
    )?;
    if let Some(a) = config.initial_allocation {
        if a.num_contents() != f || a.stations() != b {
            return Err(Error::config("initial_allocation", "shape does not match the network"));
        }
        net.preload(a.station_lists())?;
    }
    for _ in 0..config.warmup_requests {
        let r = requests.next_request();
        net.process_request(&r);
    }
    net.reset_occupancy();

    let mut t = Totals::default();
    let mut covered = vec![0u64; b];
    let mut local = vec![0u64; b];
    let mut snapshots = Vec::new();
    for i in 1..=config.measure_requests {
        let r = requests.next_request();
        let out = net.process_request(&r);
        net.tick_occupancy();
        t.requests += 1;
        t.hits += u64::from(out.served);
        t.delay += out.delay;
        t.gain += out.gain_sample;
        for s in out.coverage.iter() {
            covered[s] += 1;
        }
        for s in out.hits.iter() {
            local[s] += 1;
        }
        if config.snapshot_every.is_some_and(|k| i % k == 0) && i != config.measure_requests {
            snapshots.push(snapshot(&t, &net, config.reference_occupancy)?);
        }
    }
    if config.measure_requests > 0 && config.snapshot_every.is_some() {
        snapshots.push(snapshot(&t, &net, config.reference_occupancy)?);
    }
    let occupancy = net.occupancy();
    let cosine_to_reference = match config.reference_occupancy {
        Some(r) if t.requests > 0 => defined(cosine_distance(&occupancy, r))?,
        _ => None,
    };
    Ok(MetricsReport {
        requests: t.requests,
        hits: t.hits,
        hit_rate: t.ratio(t.hits as f64),
        mean_delay: t.ratio(t.delay),
        mean_gain: t.ratio(t.gain),
        station_hit_rates: covered
            .iter()
            .zip(&local)
            .map(|(c, l)| if *c == 0 { 0.0 } else { *l as f64 / *c as f64 })
            .collect(),
        occupancy,
        cosine_to_reference,
        snapshots,
    })
}

fn snapshot(t: &Totals, net: &Network, reference: Option<&[f64]>) -> Result<Snapshot> {
    let cosine_to_reference = match reference {
        Some(r) => defined(cosine_distance(&net.occupancy(), r))?,
        None => None,
    };
    Ok(Snapshot {
        requests_processed: t.requests,
        hit_rate: t.ratio(t.hits as f64),
        mean_delay: t.ratio(t.delay),
        cosine_to_reference,
    })
}

/// An empty network has no direction to compare.
fn defined(d: Result<f64>) -> Result<Option<f64>> {
    match d {
        Ok(v) => Ok(Some(v)),
        Err(Error::ZeroVector) => Ok(None),
        Err(e) => Err(e),
    }
}

/// `1 − ⟨u, v⟩ / (‖u‖ ‖v‖)` for nonnegative vectors.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Contract("vectors differ in length".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((1.0 - dot / (nu * nv)).clamp(0.0, 1.0))
}

/// Copies of each content under a static allocation.
pub fn greedy_occupancy_vector(allocation: &Allocation) -> Vec<f64> {
    allocation
        .configurations()
        .iter()
        .map(|x| f64::from(x.weight()))
        .collect()
}
