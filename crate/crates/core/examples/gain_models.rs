//! Expected gain and update probabilities of both gain models as a user
//! sees more copies of a content.
//!
//! cargo run --example gain_models -- [snr_db] [backhaul_ms]

use edgecache::gain::{insert_prob, move_to_front_prob, CompDelayGain, GainModel, HitRateGain};
use edgecache::geometry::{ChannelModel, Configuration, SnrModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let snr_db: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(10.0);
    let backhaul_ms: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(100.0);
    let channel = ChannelModel {
        snr: SnrModel::from_db(snr_db),
        backhaul_delay_s: backhaul_ms / 1e3,
        ..ChannelModel::default()
    };
    let delay = CompDelayGain::new(channel)?;
    let hit = HitRateGain;
    let coverage = Configuration::from_mask(0b1_1111);
    let snr = vec![channel.snr.min(); 5];

    println!("d_max = {:.2} ms", 1e3 * delay.d_max());
    println!("copies | delay_ms | delay gain | hit gain");
    for k in 0..=5 {
        let hits = Configuration::from_mask((1 << k) - 1);
        println!(
            "{k:>6} | {:>8.3} | {:>10.5} | {:>8.1}",
            1e3 * delay.expected_delay(k),
            delay.expected_gain(hits, coverage),
            hit.expected_gain(hits, coverage)
        );
    }

    for (name, model) in [("hit_rate", &hit as &dyn GainModel), ("comp_delay", &delay)] {
        let norm = model.normalizers(true)?;
        println!("\n{name}: beta {:.3}, delta {:.3}", norm.beta, norm.delta);
        println!("copies | promote | insert (q=1)");
        for k in 0..=4usize {
            let hits = Configuration::from_mask((1 << k) - 1);
            let insert = insert_prob(model, &norm, 4, hits, &snr, 1.0)?;
            let promote = match k {
                0 => "-".to_string(),
                _ => format!("{:.4}", move_to_front_prob(model, &norm, 0, hits, &snr)?),
            };
            println!("{k:>6} | {promote:>7} | {insert:>7.4}");
        }
    }
    Ok(())
}
