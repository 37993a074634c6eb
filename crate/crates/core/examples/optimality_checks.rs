//! Balance equations of the resistance graph and the KKT conditions of the
//! relaxed placement problem, on a random small instance.
//!
//! cargo run --release --example optimality_checks -- [seed]

use edgecache::analysis::{
    calibrate_gamma, check_balance, check_kkt, phi_all, stationary_all, EaParams, FixedPointOptions,
};
use edgecache::gain::{build_gain, GainKind, GainTable};
use edgecache::geometry::{ChannelModel, Configuration};
use edgecache::placement::{brute_force_allocation, BRUTE_FORCE_BUDGET};
use edgecache::traffic::Demand;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(7);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stations = 3;
    let mut classes: Vec<Configuration> = (0..stations).map(Configuration::single).collect();
    classes.push(Configuration::from_mask(0b111));
    let rates: Vec<Vec<f64>> = (0..4)
        .map(|_| classes.iter().map(|_| rng.random_range(1.0..10.0)).collect())
        .collect();
    let demand = Demand::from_table(stations, classes, rates)?;
    let model = build_gain(GainKind::HitRate, &ChannelModel::default())?;
    let table = GainTable::new(model.as_ref(), &demand);
    let norm = model.normalizers(true)?;

    let gamma: Vec<f64> = (0..stations).map(|_| rng.random_range(0.2..2.0)).collect();
    let balance = check_balance(0, &gamma, &table, None)?;
    println!(
        "balance with gamma {gamma:.3?}: holds {}, worst {:.1e}, {} subsets",
        balance.holds, balance.worst, balance.subsets_checked
    );
    let mut bent = phi_all(0, &gamma, &table);
    bent[3] += 0.25;
    let control = check_balance(0, &gamma, &table, Some(&bent))?;
    println!("perturbed potential: holds {}, failing pair {:?}", control.holds, control.worst_pair);

    let q = 1e-10;
    let opts = FixedPointOptions {
        tolerance: 1e-4,
        max_iterations: 500,
        damping: 0.5,
    };
    let (gamma, residual) = calibrate_gamma(&table, q, norm, 1.0, opts)?;
    let laws: Vec<Vec<f64>> = stationary_all(&table, &EaParams::asymptotic(q, gamma.clone(), norm))?
        .into_iter()
        .map(|s| s.pi)
        .collect();
    let optimum = brute_force_allocation(&table, 1, BRUTE_FORCE_BUDGET)?.gain;
    let kkt = check_kkt(&laws, &gamma, &table, 1, optimum, 1e-2)?;
    println!("\ncalibrated gamma {gamma:.4?} (capacity residual {residual:.1e}) at q = {q:e}");
    println!(
        "objective {:.4}, integer optimum {:.4}, dual bound {:.4}",
        kkt.objective, kkt.integer_optimum, kkt.dual_bound
    );
    println!(
        "complementarity gap {:.2e}, unstable mass {:.2e}, passed {}",
        kkt.complementarity_gap,
        kkt.unstable_mass,
        kkt.passed()
    );
    Ok(())
}
