//! Characteristic-time predictions for a single cache checked against
//! simulation, for LRU, qLRU and FIFO.
//!
//! cargo run --release --example cta_single_cache -- [capacity] [alpha] [requests]

use edgecache::analysis::{cta_hit_probability, solve_tc_single, CtaPolicy};
use edgecache::gain::HitRateGain;
use edgecache::geometry::{BaseStation, ChannelModel, Point, Topology};
use edgecache::policies::{PolicyKind, PolicySpec};
use edgecache::sim::{run_experiment, ExperimentConfig};
use edgecache::traffic::{Catalog, RequestSource};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let capacity: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(100);
    let alpha: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.8);
    let requests: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2_000_000);

    let topology = Topology::new(
        vec![BaseStation {
            id: 0,
            position: Point::new(0.0, 0.0),
            range: 100.0,
        }],
        None,
    )?;
    let catalog = Catalog::zipf(10_000, alpha, 1.0)?;
    let rates: Vec<f64> = (0..catalog.len()).map(|f| catalog.rate(f)).collect();
    let source = RequestSource::Spatial { density: 1.0 };

    println!("policy      T_c        predicted  simulated");
    for (kind, q, cta) in [
        (PolicyKind::Lru, 1.0, CtaPolicy::Lru),
        (PolicyKind::Qlru, 0.1, CtaPolicy::Qlru { q: 0.1 }),
        (PolicyKind::Qlru, 0.01, CtaPolicy::Qlru { q: 0.01 }),
        (PolicyKind::Fifo, 1.0, CtaPolicy::Fifo),
    ] {
        let tc = solve_tc_single(cta, &rates, capacity as f64)?.tc[0];
        let predicted = cta_hit_probability(cta, &rates, tc);
        let report = run_experiment(&ExperimentConfig {
            topology: &topology,
            catalog: &catalog,
            source: &source,
            channel: ChannelModel::default(),
            gain: &HitRateGain,
            policy: PolicySpec::new(kind, q),
            capacity,
            warmup_requests: requests,
            measure_requests: requests,
            seed: 1,
            initial_allocation: None,
            reference_occupancy: None,
            snapshot_every: None,
        })?;
        let label = if kind.uses_q() { format!("{kind}({q})") } else { kind.to_string() };
        println!("{label:<11} {tc:<10.1} {predicted:<10.4} {:.4}", report.hit_rate);
    }
    Ok(())
}
