//! Greedy placement against exhaustive search on a small random instance,
//! then the greedy allocation on the bundled layout.
//!
//! cargo run --release --example greedy_placement -- [capacity]

use edgecache::gain::{build_gain, GainKind, GainTable};
use edgecache::geometry::{ChannelModel, Configuration, Topology};
use edgecache::placement::{brute_force_allocation, greedy_allocation, GreedyStrategy, BRUTE_FORCE_BUDGET};
use edgecache::traffic::{Catalog, Demand, RequestSource};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let capacity: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(100);
    let channel = ChannelModel::default();

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let classes: Vec<Configuration> = [0b001, 0b011, 0b110, 0b100, 0b111]
        .into_iter()
        .map(Configuration::from_mask)
        .collect();
    let rates = (0..6)
        .map(|_| (0..classes.len()).map(|_| rng.random::<f64>()).collect())
        .collect();
    let small = Demand::from_table(3, classes, rates)?;
    println!("three stations, six contents, two slots each");
    for kind in [GainKind::HitRate, GainKind::CompDelay] {
        let model = build_gain(kind, &channel)?;
        let table = GainTable::new(model.as_ref(), &small);
        let greedy = greedy_allocation(&table, 2, GreedyStrategy::Lazy)?;
        let best = brute_force_allocation(&table, 2, BRUTE_FORCE_BUDGET)?;
        println!(
            "  {kind}: greedy {:.4}, optimum {:.4}, ratio {:.4}, greedy lists {:?}",
            greedy.gain,
            best.gain,
            greedy.gain / best.gain,
            greedy.allocation.station_lists()
        );
    }

    let topology = Topology::berlin();
    let catalog = Catalog::zipf(10_000, 1.2, 1.0)?;
    let demand = Demand::resolve(&topology, &catalog, &RequestSource::Spatial { density: 1.0 }, 200)?;
    println!("\nbundled layout, capacity {capacity}");
    for kind in [GainKind::HitRate, GainKind::CompDelay] {
        let model = build_gain(kind, &channel)?;
        let table = GainTable::new(model.as_ref(), &demand);
        let greedy = greedy_allocation(&table, capacity, GreedyStrategy::Lazy)?;
        let copies: Vec<usize> = (0..catalog.len())
            .map(|f| greedy.allocation.configuration(f).weight() as usize)
            .collect();
        let distinct = copies.iter().filter(|c| **c > 0).count();
        let replicated = copies.iter().take(10).collect::<Vec<_>>();
        println!(
            "  {kind}: gain {:.2}, {distinct} distinct contents, copies of the ten most popular {replicated:?}",
            greedy.gain
        );
    }
    Ok(())
}
