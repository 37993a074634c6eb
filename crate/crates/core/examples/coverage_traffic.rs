//! Coverage statistics of the bundled layout and the demand classes it
//! induces, plus a few sampled requests.
//!
//! cargo run --example coverage_traffic -- [grid_resolution]

use edgecache::geometry::Topology;
use edgecache::traffic::{Catalog, Demand, RequestGenerator, RequestSource};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let resolution: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(200);
    let topology = Topology::berlin();
    let region = topology.region();
    println!(
        "{} stations, region {:.0} m x {:.0} m, max overlap {}",
        topology.len(),
        region.width(),
        region.height(),
        topology.max_overlap(resolution)
    );

    let mut histogram = vec![0usize; topology.len() + 1];
    for p in topology.grid_points(resolution) {
        histogram[topology.coverage_set(&p).weight() as usize] += 1;
    }
    let covered: usize = histogram[1..].iter().sum();
    let mean = histogram.iter().enumerate().map(|(k, n)| k * n).sum::<usize>() as f64 / covered as f64;
    println!("stations in range | grid points");
    for (k, n) in histogram.iter().enumerate().filter(|(_, n)| **n > 0) {
        println!("{k:>17} | {n}");
    }
    println!("mean over covered points: {mean:.3}");

    let catalog = Catalog::zipf(10_000, 1.2, 1.0)?;
    let source = RequestSource::Spatial { density: 1.0 };
    let demand = Demand::resolve(&topology, &catalog, &source, resolution)?;
    let mut classes: Vec<_> = demand.classes().to_vec();
    classes.sort_by(|a, b| b.weight.total_cmp(&a.weight));
    println!("\n{} user classes; heaviest:", classes.len());
    for c in classes.iter().take(5) {
        println!("  {:?} weight {:.1}", c.coverage, c.weight);
    }

    let mut gen = RequestGenerator::new(&topology, &catalog, &source, 1)?;
    println!("\nfirst requests:");
    for r in gen.by_ref().take(5) {
        println!(
            "  #{} at ({:.1}, {:.1}) for content {}, in range of {:?}",
            r.index,
            r.location.x,
            r.location.y,
            r.content,
            topology.coverage_set(&r.location)
        );
    }
    Ok(())
}
