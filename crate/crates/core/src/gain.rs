//! Gain models: expected gains, marginal gains and the update probabilities
//! they induce.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ChannelModel, Configuration, Topology, MAX_STATIONS};
use crate::traffic::Demand;

/// Floor applied to vanishing aggregate insertion marginals in the EA chain,
/// in gain units.
pub const INSERT_FLOOR: f64 = 1e-6;

/// Number of SNR draws used to tabulate expected delays under random SNR.
const SNR_SAMPLES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainKind {
    HitRate,
    CompDelay,
}

impl fmt::Display for GainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GainKind::HitRate => "hit_rate",
            GainKind::CompDelay => "comp_delay",
        })
    }
}

/// Scale factors keeping promotion and insertion probabilities in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizers {
    pub beta: f64,
    pub delta: f64,
}

/// Per-user gain of holding copies of a content.
///
/// Expected gains depend on the configuration only through the hit set
/// `J = x ∩ I_u`, which is what every method receives. `snr` is indexed by
/// station id and holds the link SNRs seen by the current request; only
/// entries of stations in `I_u` are meaningful.
pub trait GainModel: fmt::Debug + Send + Sync {
    fn kind(&self) -> GainKind;

    /// `E[g(x, u)]` for a user with coverage `coverage` and hit set `hits`.
    fn expected_gain(&self, hits: Configuration, coverage: Configuration) -> f64;

    /// Largest promotion and insertion marginals. `overlap` tells whether
    /// two stations can serve the same user.
    fn normalizers(&self, overlap: bool) -> Result<Normalizers>;

    /// The per-request quantity standing in for `Δg(x, u)` when `b ∈ J`
    /// decides whether to move the content to the front.
    fn promote_marginal(&self, b: usize, hits: Configuration, snr: &[f64]) -> f64;

    /// The per-request quantity standing in for `Δg(x ⊕ e(b), u)` when
    /// `b ∉ J` decides whether to store the content.
    fn insert_marginal(&self, b: usize, hits: Configuration, snr: &[f64]) -> f64;

    /// Gain realized by one request given its hit set and delay.
    fn realized_gain(&self, hits: Configuration, _delay: f64) -> f64 {
        if hits.is_empty() {
            0.0
        } else {
            1.0
        }
    }

    /// Whether requests need per-link SNR draws.
    fn needs_snr(&self) -> bool {
        false
    }
}

/// Gain 1 for a hit, 0 for a miss.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HitRateGain;

impl GainModel for HitRateGain {
    fn kind(&self) -> GainKind {
        GainKind::HitRate
    }

    fn expected_gain(&self, hits: Configuration, _coverage: Configuration) -> f64 {
        if hits.is_empty() {
            0.0
        } else {
            1.0
        }
    }

    fn normalizers(&self, _overlap: bool) -> Result<Normalizers> {
        Ok(Normalizers {
            beta: 1.0,
            delta: 1.0,
        })
    }

    fn promote_marginal(&self, b: usize, hits: Configuration, _snr: &[f64]) -> f64 {
        debug_assert!(hits.contains(b));
        if hits == Configuration::single(b) {
            1.0
        } else {
            0.0
        }
    }

    fn insert_marginal(&self, b: usize, hits: Configuration, _snr: &[f64]) -> f64 {
        debug_assert!(!hits.contains(b));
        if hits.is_empty() {
            1.0
        } else {
            0.0
        }
    }
}

/// Delay reduction under joint transmission: a hit is served by all of `J`
/// at the aggregate capacity, a miss pays the backhaul delay plus the
/// transmission from one covering station picked at random.
#[derive(Debug, Clone, PartialEq)]
pub struct CompDelayGain {
    channel: ChannelModel,
    d_max: f64,
    /// `expected_delay[k]`: expected delay with `k` cooperating copies, with
    /// index 0 standing for a miss.
    expected_delay: Vec<f64>,
    /// With a constant SNR, `tx_by_count[k]` is the delay of `k` joint
    /// transmitters.
    tx_by_count: Option<Vec<f64>>,
}

impl CompDelayGain {
    /// `d_max` defaults to the expected miss delay, so that an empty
    /// configuration has zero gain.
    pub fn new(channel: ChannelModel) -> Result<Self> {
        channel.validate()?;
        if channel.snr.min() <= 0.0 {
            return Err(Error::config(
                "snr",
                "zero SNR makes the transmission delay unbounded under the delay gain",
            ));
        }
        let expected_delay = expected_delays(&channel);
        let tx_by_count = channel.snr.is_constant().then(|| {
            let h = channel.snr.min();
            (0..=MAX_STATIONS + 1)
                .map(|k| channel.transmission_delay(h * k as f64))
                .collect()
        });
        Ok(CompDelayGain {
            channel,
            d_max: expected_delay[0],
            expected_delay,
            tx_by_count,
        })
    }

    #[must_use]
    pub fn with_d_max(mut self, d_max: f64) -> Self {
        self.d_max = d_max;
        self
    }

    pub fn channel(&self) -> &ChannelModel {
        &self.channel
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    /// Expected delay with `copies` cooperating holders (0 = miss).
    pub fn expected_delay(&self, copies: u32) -> f64 {
        self.expected_delay[copies as usize]
    }

    /// Delay of one request: joint transmission from `hits` on a hit, backhaul
    /// plus the `retrieval` station's link on a miss.
    pub fn realized_delay(&self, hits: Configuration, retrieval: usize, snr: &[f64]) -> f64 {
        if hits.is_empty() {
            self.channel.backhaul_delay_s + self.channel.transmission_delay(snr[retrieval])
        } else if let Some(t) = &self.tx_by_count {
            t[hits.weight() as usize]
        } else {
            self.channel.transmission_delay(snr_sum(hits, snr))
        }
    }

    fn tx(&self, snr_sum: f64) -> f64 {
        self.channel.transmission_delay(snr_sum)
    }
}

fn snr_sum(set: Configuration, snr: &[f64]) -> f64 {
    set.iter().map(|b| snr[b]).sum()
}

fn expected_delays(channel: &ChannelModel) -> Vec<f64> {
    let mut tx = vec![0.0; MAX_STATIONS + 1];
    if channel.snr.is_constant() {
        let h = channel.snr.min();
        for (k, t) in tx.iter_mut().enumerate().skip(1) {
            *t = channel.transmission_delay(h * k as f64);
        }
    } else {
        // Common draws for every k keep the table monotone in k.
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_5a7);
        for _ in 0..SNR_SAMPLES {
            let mut sum = 0.0;
            for t in tx.iter_mut().skip(1) {
                sum += channel.snr.sample(&mut rng);
                *t += channel.transmission_delay(sum);
            }
        }
        for t in tx.iter_mut().skip(1) {
            *t /= SNR_SAMPLES as f64;
        }
    }
    tx[0] = channel.backhaul_delay_s + tx[1];
    tx
}

impl GainModel for CompDelayGain {
    fn kind(&self) -> GainKind {
        GainKind::CompDelay
    }

    fn expected_gain(&self, hits: Configuration, _coverage: Configuration) -> f64 {
        self.d_max - self.expected_delay[hits.weight() as usize]
    }

    fn normalizers(&self, overlap: bool) -> Result<Normalizers> {
        let mut sup = self.channel.backhaul_delay_s;
        if overlap {
            // M/C(s) - M/C(s + h) shrinks in s and grows in h.
            let (lo, hi) = (self.channel.snr.min(), self.channel.snr.max());
            let pair = self.tx(lo) - self.tx(lo + hi);
            if !pair.is_finite() {
                return Err(Error::UnboundedGain(
                    "cooperative delay reduction is unbounded for the configured SNR".into(),
                ));
            }
            sup = sup.max(pair);
        }
        Ok(Normalizers {
            beta: 1.0 / sup,
            delta: 1.0 / sup,
        })
    }

    fn promote_marginal(&self, b: usize, hits: Configuration, snr: &[f64]) -> f64 {
        debug_assert!(hits.contains(b));
        if hits == Configuration::single(b) {
            self.channel.backhaul_delay_s
        } else if let Some(t) = &self.tx_by_count {
            let k = hits.weight() as usize;
            t[k - 1] - t[k]
        } else {
            let s = snr_sum(hits, snr);
            self.tx(s - snr[b]) - self.tx(s)
        }
    }

    fn insert_marginal(&self, b: usize, hits: Configuration, snr: &[f64]) -> f64 {
        debug_assert!(!hits.contains(b));
        if hits.is_empty() {
            self.channel.backhaul_delay_s
        } else if let Some(t) = &self.tx_by_count {
            let k = hits.weight() as usize;
            t[k] - t[k + 1]
        } else {
            let s = snr_sum(hits, snr);
            self.tx(s) - self.tx(s + snr[b])
        }
    }

    fn realized_gain(&self, _hits: Configuration, delay: f64) -> f64 {
        self.d_max - delay
    }

    fn needs_snr(&self) -> bool {
        !self.channel.snr.is_constant()
    }
}

/// `E[g(x, u)] − E[g(x ⊖ e(b), u)]`.
pub fn marginal_gain(
    model: &dyn GainModel,
    b: usize,
    x: Configuration,
    coverage: Configuration,
) -> Result<f64> {
    if !x.contains(b) {
        return Err(Error::Contract(format!("station {b} holds no copy in {x:?}")));
    }
    let hits = x.intersect(coverage);
    Ok(model.expected_gain(hits, coverage) - model.expected_gain(hits.without(b), coverage))
}

/// `G_f(x) = Σ_u λ_{f,u} E[g(x, u)]`.
pub fn total_gain(model: &dyn GainModel, x: Configuration, demand: &Demand, f: usize) -> f64 {
    demand
        .classes()
        .iter()
        .enumerate()
        .map(|(c, class)| {
            let rate = demand.rate(f, c);
            if rate == 0.0 {
                0.0
            } else {
                rate * model.expected_gain(x.intersect(class.coverage), class.coverage)
            }
        })
        .sum()
}

/// Probability that `b ∈ J` moves the content to the front on a hit.
pub fn move_to_front_prob(
    model: &dyn GainModel,
    norm: &Normalizers,
    b: usize,
    hits: Configuration,
    snr: &[f64],
) -> Result<f64> {
    if !hits.contains(b) {
        return Err(Error::Contract(format!("station {b} is not in the hit set {hits:?}")));
    }
    Ok((norm.beta * model.promote_marginal(b, hits, snr)).clamp(0.0, 1.0))
}

/// Probability that `b ∈ I_u \ J` stores the content, for admission
/// parameter `q_b`.
pub fn insert_prob(
    model: &dyn GainModel,
    norm: &Normalizers,
    b: usize,
    hits: Configuration,
    snr: &[f64],
    q_b: f64,
) -> Result<f64> {
    if hits.contains(b) {
        return Err(Error::Contract(format!("station {b} already holds a copy")));
    }
    Ok(q_b * (norm.delta * model.insert_marginal(b, hits, snr)).clamp(0.0, 1.0))
}

/// Normalizers for `model` on `topology`.
pub fn normalizers(model: &dyn GainModel, topology: &Topology) -> Result<Normalizers> {
    let s = topology.stations();
    let overlap = s.iter().enumerate().any(|(i, a)| {
        s[i + 1..]
            .iter()
            .any(|c| a.position.distance(&c.position) <= a.range + c.range)
    });
    model.normalizers(overlap)
}

/// Gain specification as it appears in configuration files.
pub fn build_gain(kind: GainKind, channel: &ChannelModel) -> Result<Box<dyn GainModel>> {
    Ok(match kind {
        GainKind::HitRate => Box::new(HitRateGain),
        GainKind::CompDelay => Box::new(CompDelayGain::new(*channel)?),
    })
}

/// Largest station count for which per-configuration totals are tabulated.
const TABLE_MAX_STATIONS: usize = 20;

/// `G_f(x)` for every content, tabulating the configuration factor when
/// rates are separable.
#[derive(Debug)]
pub struct GainTable<'a> {
    model: &'a dyn GainModel,
    demand: &'a Demand,
    shared: Option<Vec<f64>>,
}

impl<'a> GainTable<'a> {
    pub fn new(model: &'a dyn GainModel, demand: &'a Demand) -> Self {
        let b = demand.stations();
        let separable = demand.num_contents() > 0 && demand.separable_content_rate(0).is_some();
        let shared = (separable && b <= TABLE_MAX_STATIONS).then(|| {
            Configuration::all(b)
                .map(|x| {
                    demand
                        .classes()
                        .iter()
                        .map(|c| {
                            c.weight * model.expected_gain(x.intersect(c.coverage), c.coverage)
                        })
                        .sum()
                })
                .collect()
        });
        GainTable {
            model,
            demand,
            shared,
        }
    }

    pub fn model(&self) -> &dyn GainModel {
        self.model
    }

    pub fn demand(&self) -> &Demand {
        self.demand
    }

    pub fn stations(&self) -> usize {
        self.demand.stations()
    }

    pub fn num_contents(&self) -> usize {
        self.demand.num_contents()
    }

    pub fn total(&self, f: usize, x: Configuration) -> f64 {
        match (&self.shared, self.demand.separable_content_rate(f)) {
            (Some(s), Some(rate)) => rate * s[x.mask() as usize],
            _ => total_gain(self.model, x, self.demand, f),
        }
    }

    /// `ΔG_f^(b)(x) = G_f(x) − G_f(x ⊖ e(b))` for `b ∈ x`.
    pub fn marginal(&self, f: usize, b: usize, x: Configuration) -> f64 {
        debug_assert!(x.contains(b));
        self.total(f, x) - self.total(f, x.without(b))
    }

    /// Insertion-side aggregate `Σ_u λ_{f,u} E[Δg(x ⊕ e(b), u)]` restricted to
    /// users covered by `b`. Equals `ΔG_f^(b)(x ⊕ e(b))`.
    pub fn insert_marginal(&self, f: usize, b: usize, x: Configuration) -> f64 {
        debug_assert!(!x.contains(b));
        let y = x.with(b);
        self.total(f, y) - self.total(f, x)
    }

    /// Total arrival rate for content `f` from users covered by `b`.
    pub fn covered_rate(&self, f: usize, b: usize) -> f64 {
        self.demand
            .classes()
            .iter()
            .enumerate()
            .filter(|(_, c)| c.coverage.contains(b))
            .map(|(c, _)| self.demand.rate(f, c))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SnrModel;

    fn comp() -> CompDelayGain {
        CompDelayGain::new(ChannelModel::default()).unwrap()
    }

    fn ids(v: &[usize]) -> Configuration {
        Configuration::from_ids(v.iter().copied())
    }

    const H: [f64; 4] = [10.0; 4];

    #[test]
    fn hit_rate_marginals() {
        let cov = ids(&[0, 1]);
        assert_eq!(marginal_gain(&HitRateGain, 0, ids(&[0]), cov).unwrap(), 1.0);
        assert_eq!(marginal_gain(&HitRateGain, 0, ids(&[0, 1]), cov).unwrap(), 0.0);
        assert!(marginal_gain(&HitRateGain, 1, ids(&[0]), cov).is_err());
    }

    #[test]
    fn comp_second_copy_marginal() {
        let g = comp();
        let m = marginal_gain(&g, 1, ids(&[0, 1]), ids(&[0, 1])).unwrap();
        let ch = ChannelModel::default();
        let want = ch.transmission_delay(10.0) - ch.transmission_delay(20.0);
        assert!((m - want).abs() < 1e-15);
        assert!((m - 0.012_279).abs() < 1e-5, "{m}");
    }

    #[test]
    fn empty_configuration_has_zero_gain() {
        let g = comp();
        assert!(g.expected_gain(Configuration::EMPTY, ids(&[0, 1])).abs() < 1e-15);
        assert_eq!(HitRateGain.expected_gain(Configuration::EMPTY, ids(&[0])), 0.0);
    }

    #[test]
    fn probabilities_match_worked_values() {
        let g = comp();
        let norm = g.normalizers(true).unwrap();
        assert!((norm.beta - 10.0).abs() < 1e-12 && (norm.delta - 10.0).abs() < 1e-12);
        let p = move_to_front_prob(&g, &norm, 0, ids(&[0]), &H).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
        let p = move_to_front_prob(&g, &norm, 0, ids(&[0, 1]), &H).unwrap();
        assert!((p - 0.122_79).abs() < 1e-4, "{p}");
        let p = insert_prob(&g, &norm, 2, Configuration::EMPTY, &H, 0.01).unwrap();
        assert!((p - 0.01).abs() < 1e-15);

        let hn = HitRateGain.normalizers(true).unwrap();
        assert_eq!(move_to_front_prob(&HitRateGain, &hn, 0, ids(&[0]), &H).unwrap(), 1.0);
        assert_eq!(move_to_front_prob(&HitRateGain, &hn, 0, ids(&[0, 1]), &H).unwrap(), 0.0);
        assert_eq!(insert_prob(&HitRateGain, &hn, 0, Configuration::EMPTY, &H, 0.3).unwrap(), 0.3);
        assert_eq!(insert_prob(&HitRateGain, &hn, 0, ids(&[1]), &H, 0.3).unwrap(), 0.0);
        assert!(insert_prob(&HitRateGain, &hn, 1, ids(&[1]), &H, 0.3).is_err());
        assert!(move_to_front_prob(&HitRateGain, &hn, 2, ids(&[1]), &H).is_err());
    }

    #[test]
    fn short_backhaul_normalizer_uses_pair_difference() {
        let ch = ChannelModel {
            backhaul_delay_s: 0.01,
            ..ChannelModel::default()
        };
        let g = CompDelayGain::new(ch).unwrap();
        let n = g.normalizers(true).unwrap();
        let sup = ch.transmission_delay(10.0) - ch.transmission_delay(20.0);
        assert!((n.beta - 1.0 / sup).abs() < 1e-9);
        let n = g.normalizers(false).unwrap();
        assert!((n.beta - 100.0).abs() < 1e-9);
    }

    #[test]
    fn zero_snr_rejected() {
        let ch = ChannelModel {
            snr: SnrModel::Uniform { lo: 0.0, hi: 10.0 },
            ..ChannelModel::default()
        };
        assert!(CompDelayGain::new(ch).is_err());
    }

    #[test]
    fn d_max_cancels_in_probabilities() {
        let a = comp();
        let b = comp().with_d_max(3.0);
        let norm = a.normalizers(true).unwrap();
        for hits in [ids(&[0]), ids(&[0, 1]), ids(&[0, 1, 2])] {
            let pa = move_to_front_prob(&a, &norm, 0, hits, &H).unwrap();
            let pb = move_to_front_prob(&b, &norm, 0, hits, &H).unwrap();
            assert_eq!(pa, pb);
            let ia = insert_prob(&a, &norm, 3, hits, &H, 0.5).unwrap();
            let ib = insert_prob(&b, &norm, 3, hits, &H, 0.5).unwrap();
            assert_eq!(ia, ib);
        }
        let cov = ids(&[0, 1, 2]);
        let ma = marginal_gain(&a, 1, ids(&[0, 1]), cov).unwrap();
        let mb = marginal_gain(&b, 1, ids(&[0, 1]), cov).unwrap();
        assert!((ma - mb).abs() < 1e-15);
    }

    #[test]
    fn random_snr_table_is_monotone() {
        let ch = ChannelModel {
            snr: SnrModel::Uniform { lo: 2.0, hi: 20.0 },
            ..ChannelModel::default()
        };
        let g = CompDelayGain::new(ch).unwrap();
        for k in 1..10 {
            assert!(g.expected_delay(k + 1) < g.expected_delay(k));
        }
        assert!(g.expected_delay(0) > g.expected_delay(1));
    }
}
