//! Stationary laws of the per-content configuration chain on three
//! overlapping stations as q shrinks: mass concentrates on the states that
//! maximize the potential, and each state's probability decays like
//! `q^(r(x) - min r)`.
//!
//! cargo run --example stability_analysis -- [hit_rate|comp_delay]

use edgecache::analysis::{
    build_ea_chain, exponent_fits, phi_all, stable_states, state_resistances, stationary, EaParams,
    ResistanceGraph, Stationary, UpEdges,
};
use edgecache::gain::{build_gain, GainKind, GainTable};
use edgecache::geometry::{ChannelModel, Configuration};
use edgecache::traffic::Demand;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kind = match std::env::args().nth(1).as_deref() {
        Some("comp_delay") => GainKind::CompDelay,
        _ => GainKind::HitRate,
    };
    // Users near each station alone, plus a crowd every station reaches.
    let classes: Vec<Configuration> = [0b001, 0b010, 0b100, 0b111].into_iter().map(Configuration::from_mask).collect();
    let scale = if kind == GainKind::CompDelay { 10.0 } else { 1.0 };
    let rates = vec![[0.4, 0.3, 2.0, 1.5].iter().map(|r| r * scale).collect()];
    let demand = Demand::from_table(3, classes, rates)?;
    let model = build_gain(kind, &ChannelModel::default())?;
    let table = GainTable::new(model.as_ref(), &demand);
    let gamma = vec![1.0; 3];
    let norm = model.normalizers(true)?;

    let phi = phi_all(0, &gamma, &table);
    let r = state_resistances(&ResistanceGraph::for_content(0, &table, &gamma, UpEdges::SingleBit));
    let rmin = r.iter().copied().fold(f64::INFINITY, f64::min);
    let qs = [1e-2, 1e-4, 1e-8, 1e-12, 1e-16];
    let laws = qs
        .iter()
        .map(|&q| stationary(&build_ea_chain(0, &table, &EaParams::asymptotic(q, gamma.clone(), norm))?))
        .collect::<Result<Vec<Stationary>, _>>()?;
    let fits = exponent_fits(&qs[2..], &laws[2..]);

    println!("gain {kind}; stable states {:?}", stable_states(0, &gamma, &table));
    print!("state  phi      r-min r ");
    for q in qs {
        print!(" pi(q={q:e})");
    }
    println!("  fitted exponent");
    for x in Configuration::all(3) {
        let i = x.mask() as usize;
        print!("{:<6} {:<8.4} {:<8.4}", format!("{x:?}"), phi[i], r[i] - rmin);
        for law in &laws {
            print!(" {:<11.3e}", law.pi[i]);
        }
        println!("  {:.4}", fits[i]);
    }
    Ok(())
}
