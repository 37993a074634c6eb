//! Content catalog, demand model and the stationary request stream.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, Zipf};

use crate::error::{Error, Result};
use crate::geometry::{Configuration, Point, Topology};

/// `p_f ∝ f^(-alpha)` over ranks `1..=n`, returned 0-indexed.
pub fn zipf_popularity(n: usize, alpha: f64) -> Vec<f64> {
    assert!(n >= 1, "catalog must hold at least one content");
    assert!(alpha >= 0.0, "zipf exponent must be non-negative");
    let weights: Vec<f64> = (1..=n).map(|k| (k as f64).powf(-alpha)).collect();
    normalize(weights)
}

fn normalize(mut w: Vec<f64>) -> Vec<f64> {
    // Summing smallest-first keeps the normalizer accurate for long tails.
    let total: f64 = w.iter().rev().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

#[derive(Debug, Clone)]
enum ContentSampler {
    Zipf(Zipf<f64>),
    Weighted(WeightedIndex<f64>),
}

impl ContentSampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self {
            ContentSampler::Zipf(z) => z.sample(rng) as usize - 1,
            ContentSampler::Weighted(w) => w.sample(rng),
        }
    }
}

/// A catalog of `F` contents and their request probabilities.
#[derive(Debug, Clone)]
pub struct Catalog {
    popularity: Vec<f64>,
    alpha: Option<f64>,
    total_rate: f64,
    sampler: ContentSampler,
}

impl Catalog {
    pub fn zipf(num_contents: usize, alpha: f64, total_rate: f64) -> Result<Self> {
        if num_contents == 0 {
            return Err(Error::config("F", "catalog must hold at least one content"));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::config("alpha", "zipf exponent must be >= 0"));
        }
        check_rate(total_rate)?;
        let sampler = Zipf::new(num_contents as f64, alpha)
            .map_err(|e| Error::config("alpha", e.to_string()))?;
        Ok(Catalog {
            popularity: zipf_popularity(num_contents, alpha),
            alpha: Some(alpha),
            total_rate,
            sampler: ContentSampler::Zipf(sampler),
        })
    }

    /// Catalog with arbitrary non-negative weights (normalized internally).
    pub fn from_weights(weights: Vec<f64>, total_rate: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::config("popularity", "catalog must hold at least one content"));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::config("popularity", "weights must be finite and >= 0"));
        }
        check_rate(total_rate)?;
        let sampler = WeightedIndex::new(&weights)
            .map_err(|e| Error::config("popularity", e.to_string()))?;
        Ok(Catalog {
            popularity: normalize(weights),
            alpha: None,
            total_rate,
            sampler: ContentSampler::Weighted(sampler),
        })
    }

    pub fn len(&self) -> usize {
        self.popularity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.popularity.is_empty()
    }

    pub fn popularity(&self) -> &[f64] {
        &self.popularity
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    pub fn total_rate(&self) -> f64 {
        self.total_rate
    }

    /// `λ_f = total_rate · p_f`.
    pub fn rate(&self, f: usize) -> f64 {
        self.total_rate * self.popularity[f]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sampler.sample(rng)
    }

    /// Popularity estimates `p_f · L_f` with `L_f` log-normal of mean one and
    /// log-variance `sigma2`.
    pub fn noisy_estimate<R: Rng + ?Sized>(&self, sigma2: f64, rng: &mut R) -> Result<Catalog> {
        if !(sigma2 >= 0.0) {
            return Err(Error::config("sigma2", "variance must be >= 0"));
        }
        if sigma2 == 0.0 {
            return Catalog::from_weights(self.popularity.clone(), self.total_rate);
        }
        let sigma = sigma2.sqrt();
        let noise = LogNormal::new(-0.5 * sigma2, sigma)
            .map_err(|e| Error::config("sigma2", e.to_string()))?;
        let weights = self
            .popularity
            .iter()
            .map(|p| p * noise.sample(rng))
            .collect();
        Catalog::from_weights(weights, self.total_rate)
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if rate > 0.0 && rate.is_finite() {
        Ok(())
    } else {
        Err(Error::config("total_rate", "request rate must be positive"))
    }
}

/// A user at a fixed position in finite-population mode.
#[derive(Debug, Clone, PartialEq)]
pub struct User {
    pub position: Point,
    /// Scales the catalog rates: `λ_{f,u} = weight · λ_f`.
    pub weight: f64,
    /// Per-content rates overriding `weight · λ_f` when present.
    pub rates: Option<Vec<f64>>,
}

/// Where requests come from.
#[derive(Debug, Clone, PartialEq)]
pub enum RequestSource {
    /// Homogeneous Poisson field of users over the covered part of the region.
    Spatial { density: f64 },
    FiniteUsers(Vec<User>),
}

impl RequestSource {
    pub fn validate(&self, catalog: &Catalog) -> Result<()> {
        match self {
            RequestSource::Spatial { density } => {
                if !(*density > 0.0 && density.is_finite()) {
                    return Err(Error::config("density", "user density must be positive"));
                }
            }
            RequestSource::FiniteUsers(users) => {
                if users.is_empty() {
                    return Err(Error::config("users", "at least one user is required"));
                }
                for (i, u) in users.iter().enumerate() {
                    if !(u.weight >= 0.0 && u.weight.is_finite()) {
                        return Err(Error::config(format!("users[{i}].weight"), "must be >= 0"));
                    }
                    if let Some(r) = &u.rates {
                        if r.len() != catalog.len() {
                            return Err(Error::config(
                                format!("users[{i}].rates"),
                                format!("expected {} rates, got {}", catalog.len(), r.len()),
                            ));
                        }
                        if r.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                            return Err(Error::config(format!("users[{i}].rates"), "must be >= 0"));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Users grouped by coverage set; all members of a class see the same gains.
#[derive(Debug, Clone, PartialEq)]
pub struct UserClass {
    pub coverage: Configuration,
    pub weight: f64,
}

#[derive(Debug, Clone)]
enum ContentRates {
    /// `λ_{f,class} = content[f] · class.weight`
    Separable(Vec<f64>),
    /// `λ_{f,class} = table[f][class]`
    Explicit(Vec<Vec<f64>>),
}

/// Request rates per (content, user class), resolved against a topology.
#[derive(Debug, Clone)]
pub struct Demand {
    stations: usize,
    classes: Vec<UserClass>,
    rates: ContentRates,
}

impl Demand {
    /// Resolves a request source. Spatial demand integrates over a regular
    /// `grid_resolution^2` grid; uncovered cells and uncovered users drop out.
    pub fn resolve(
        topology: &Topology,
        catalog: &Catalog,
        source: &RequestSource,
        grid_resolution: usize,
    ) -> Result<Self> {
        source.validate(catalog)?;
        let content: Vec<f64> = (0..catalog.len()).map(|f| catalog.rate(f)).collect();
        match source {
            RequestSource::Spatial { density } => {
                if grid_resolution == 0 {
                    return Err(Error::config("grid_resolution", "must be positive"));
                }
                let region = topology.region();
                let cell_area = region.area() / (grid_resolution * grid_resolution) as f64;
                let mut counts: std::collections::BTreeMap<Configuration, usize> =
                    Default::default();
                for p in topology.grid_points(grid_resolution) {
                    let c = topology.coverage_set(&p);
                    if !c.is_empty() {
                        *counts.entry(c).or_default() += 1;
                    }
                }
                let classes = counts
                    .into_iter()
                    .map(|(coverage, n)| UserClass {
                        coverage,
                        weight: density * cell_area * n as f64,
                    })
                    .collect();
                Ok(Demand {
                    stations: topology.len(),
                    classes,
                    rates: ContentRates::Separable(content),
                })
            }
            RequestSource::FiniteUsers(users) => {
                let covered: Vec<(&User, Configuration)> = users
                    .iter()
                    .map(|u| (u, topology.coverage_set(&u.position)))
                    .filter(|(_, c)| !c.is_empty())
                    .collect();
                let classes = covered
                    .iter()
                    .map(|(u, c)| UserClass {
                        coverage: *c,
                        weight: u.weight,
                    })
                    .collect();
                let rates = if covered.iter().any(|(u, _)| u.rates.is_some()) {
                    let table = (0..catalog.len())
                        .map(|f| {
                            covered
                                .iter()
                                .map(|(u, _)| match &u.rates {
                                    Some(r) => r[f],
                                    None => content[f] * u.weight,
                                })
                                .collect()
                        })
                        .collect();
                    ContentRates::Explicit(table)
                } else {
                    ContentRates::Separable(content)
                };
                Ok(Demand {
                    stations: topology.len(),
                    classes,
                    rates,
                })
            }
        }
    }

    /// Demand given directly as classes and a `[content][class]` rate table.
    pub fn from_table(
        stations: usize,
        classes: Vec<Configuration>,
        table: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if table.iter().any(|row| row.len() != classes.len()) {
            return Err(Error::config("rates", "every content needs one rate per class"));
        }
        if table.iter().flatten().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::config("rates", "rates must be finite and >= 0"));
        }
        if let Some(c) = classes.iter().find(|c| c.mask() >> stations != 0) {
            return Err(Error::config(
                "classes",
                format!("coverage {c:?} refers to stations beyond {stations}"),
            ));
        }
        Ok(Demand {
            stations,
            classes: classes
                .into_iter()
                .map(|coverage| UserClass {
                    coverage,
                    weight: 1.0,
                })
                .collect(),
            rates: ContentRates::Explicit(table),
        })
    }

    pub fn stations(&self) -> usize {
        self.stations
    }

    pub fn num_contents(&self) -> usize {
        match &self.rates {
            ContentRates::Separable(c) => c.len(),
            ContentRates::Explicit(t) => t.len(),
        }
    }

    pub fn classes(&self) -> &[UserClass] {
        &self.classes
    }

    /// `λ_{f,u}` for user class `class`.
    pub fn rate(&self, f: usize, class: usize) -> f64 {
        match &self.rates {
            ContentRates::Separable(c) => c[f] * self.classes[class].weight,
            ContentRates::Explicit(t) => t[f][class],
        }
    }

    /// When rates factor as `content_rate[f] · class_weight`, the content
    /// factor.
    pub fn separable_content_rate(&self, f: usize) -> Option<f64> {
        match &self.rates {
            ContentRates::Separable(c) => Some(c[f]),
            ContentRates::Explicit(_) => None,
        }
    }

    /// Union of all class coverages.
    pub fn covered_stations(&self) -> Configuration {
        self.classes
            .iter()
            .fold(Configuration::EMPTY, |acc, c| acc.union(c.coverage))
    }
}

/// One request of the stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Request {
    pub index: u64,
    pub location: Point,
    /// User id in finite-population mode.
    pub user: Option<usize>,
    pub content: usize,
}

#[derive(Debug)]
enum Origin {
    Spatial,
    Users {
        positions: Vec<Point>,
        pick: WeightedIndex<f64>,
    },
    /// Joint `(content, user)` draw for non-separable rates.
    Joint {
        positions: Vec<Point>,
        contents: usize,
        pick: WeightedIndex<f64>,
    },
}

/// Seeded, deterministic request stream.
#[derive(Debug)]
pub struct RequestGenerator<'a> {
    topology: &'a Topology,
    catalog: &'a Catalog,
    origin: Origin,
    rng: ChaCha8Rng,
    next_index: u64,
}

impl<'a> RequestGenerator<'a> {
    pub fn new(
        topology: &'a Topology,
        catalog: &'a Catalog,
        source: &RequestSource,
        seed: u64,
    ) -> Result<Self> {
        source.validate(catalog)?;
        let origin = match source {
            RequestSource::Spatial { .. } => {
                let probe = topology.grid_points(64).any(|p| !topology.coverage_set(&p).is_empty());
                if !probe {
                    return Err(Error::config("topology", "no point of the region is covered"));
                }
                Origin::Spatial
            }
            RequestSource::FiniteUsers(users) => {
                let covered: Vec<&User> = users
                    .iter()
                    .filter(|u| !topology.coverage_set(&u.position).is_empty())
                    .collect();
                if covered.is_empty() {
                    return Err(Error::config("users", "no user is covered by any station"));
                }
                let positions = covered.iter().map(|u| u.position).collect();
                if covered.iter().any(|u| u.rates.is_some()) {
                    let mut weights = Vec::with_capacity(catalog.len() * covered.len());
                    for f in 0..catalog.len() {
                        for u in &covered {
                            weights.push(match &u.rates {
                                Some(r) => r[f],
                                None => u.weight * catalog.rate(f),
                            });
                        }
                    }
                    let pick = WeightedIndex::new(&weights)
                        .map_err(|e| Error::config("users.rates", e.to_string()))?;
                    Origin::Joint {
                        positions,
                        contents: catalog.len(),
                        pick,
                    }
                } else {
                    let pick = WeightedIndex::new(covered.iter().map(|u| u.weight))
                        .map_err(|e| Error::config("users.weight", e.to_string()))?;
                    Origin::Users { positions, pick }
                }
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(REQUEST_STREAM);
        Ok(RequestGenerator {
            topology,
            catalog,
            origin,
            rng,
            next_index: 0,
        })
    }

    pub fn next_request(&mut self) -> Request {
        let index = self.next_index;
        self.next_index += 1;
        match &self.origin {
            Origin::Spatial => {
                let content = self.catalog.sample(&mut self.rng);
                let region = *self.topology.region();
                let location = loop {
                    let p = Point::new(
                        region.x0 + region.width() * self.rng.random::<f64>(),
                        region.y0 + region.height() * self.rng.random::<f64>(),
                    );
                    if !self.topology.coverage_set(&p).is_empty() {
                        break p;
                    }
                };
                Request {
                    index,
                    location,
                    user: None,
                    content,
                }
            }
            Origin::Users { positions, pick } => {
                let content = self.catalog.sample(&mut self.rng);
                let u = pick.sample(&mut self.rng);
                Request {
                    index,
                    location: positions[u],
                    user: Some(u),
                    content,
                }
            }
            Origin::Joint {
                positions,
                contents,
                pick,
            } => {
                let k = pick.sample(&mut self.rng);
                let (content, u) = (k / positions.len(), k % positions.len());
                debug_assert!(content < *contents);
                Request {
                    index,
                    location: positions[u],
                    user: Some(u),
                    content,
                }
            }
        }
    }
}

impl Iterator for RequestGenerator<'_> {
    type Item = Request;

    fn next(&mut self) -> Option<Request> {
        Some(self.next_request())
    }
}

/// ChaCha stream ids derived from one master seed.
pub(crate) const REQUEST_STREAM: u64 = 0;
pub(crate) const NETWORK_STREAM: u64 = 1;
/// Station `b` uses stream `STATION_STREAM_BASE + b`.
pub(crate) const STATION_STREAM_BASE: u64 = 1 << 16;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BaseStation, Region};

    #[test]
    fn zipf_small_cases() {
        assert_eq!(zipf_popularity(1, 3.0), vec![1.0]);
        let p = zipf_popularity(2, 1.0);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        for v in zipf_popularity(3, 0.0) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zipf_normalized_and_monotone() {
        for &(n, a) in &[(10usize, 0.8), (10_000, 1.2), (1_000_000, 1.2)] {
            let p = zipf_popularity(n, a);
            let s: f64 = p.iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "{n} {a}: {s}");
            assert!(p.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    fn unit_square() -> Topology {
        // One station whose disk covers the whole unit square.
        Topology::new(
            vec![BaseStation {
                id: 0,
                position: Point::new(0.5, 0.5),
                range: 1.0,
            }],
            Some(Region {
                x0: 0.0,
                y0: 0.0,
                x1: 1.0,
                y1: 1.0,
            }),
        )
        .unwrap()
    }

    #[test]
    fn same_seed_same_stream() {
        let t = Topology::berlin();
        let c = Catalog::zipf(1000, 1.2, 1.0).unwrap();
        let src = RequestSource::Spatial { density: 1.0 };
        let a: Vec<_> = RequestGenerator::new(&t, &c, &src, 7).unwrap().take(500).collect();
        let b: Vec<_> = RequestGenerator::new(&t, &c, &src, 7).unwrap().take(500).collect();
        assert_eq!(a, b);
        let d: Vec<_> = RequestGenerator::new(&t, &c, &src, 8).unwrap().take(500).collect();
        assert_ne!(a, d);
    }

    #[test]
    fn spatial_locations_centered() {
        let t = unit_square();
        let c = Catalog::zipf(10, 1.0, 1.0).unwrap();
        let mut g = RequestGenerator::new(&t, &c, &RequestSource::Spatial { density: 1.0 }, 3)
            .unwrap();
        let n = 1_000_000;
        let (mut sx, mut sy) = (0.0, 0.0);
        for _ in 0..n {
            let r = g.next_request();
            sx += r.location.x;
            sy += r.location.y;
        }
        assert!((sx / n as f64 - 0.5).abs() < 0.01);
        assert!((sy / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn most_popular_frequency() {
        let t = unit_square();
        let c = Catalog::zipf(100, 1.2, 1.0).unwrap();
        let p1 = zipf_popularity(100, 1.2)[0];
        let mut g = RequestGenerator::new(&t, &c, &RequestSource::Spatial { density: 1.0 }, 11)
            .unwrap();
        let n = 1_000_000;
        let hits = (0..n).filter(|_| g.next_request().content == 0).count();
        let freq = hits as f64 / n as f64;
        assert!((freq - p1).abs() / p1 < 0.01, "{freq} vs {p1}");
    }

    #[test]
    fn explicit_rates_drive_joint_draws() {
        let t = unit_square();
        let c = Catalog::zipf(2, 1.0, 1.0).unwrap();
        let users = vec![
            User {
                position: Point::new(0.5, 0.5),
                weight: 1.0,
                rates: Some(vec![0.0, 3.0]),
            },
            User {
                position: Point::new(0.4, 0.5),
                weight: 1.0,
                rates: Some(vec![1.0, 0.0]),
            },
        ];
        let src = RequestSource::FiniteUsers(users);
        let mut g = RequestGenerator::new(&t, &c, &src, 5).unwrap();
        let n = 40_000;
        let mut count = [[0usize; 2]; 2];
        for _ in 0..n {
            let r = g.next_request();
            count[r.content][r.user.unwrap()] += 1;
        }
        assert_eq!(count[0][0], 0);
        assert_eq!(count[1][1], 0);
        let frac = count[1][0] as f64 / n as f64;
        assert!((frac - 0.75).abs() < 0.01);
        let d = Demand::resolve(&t, &c, &src, 10).unwrap();
        assert_eq!(d.rate(1, 0), 3.0);
        assert_eq!(d.rate(0, 1), 1.0);
    }

    #[test]
    fn spatial_demand_weights_sum_to_covered_area() {
        let t = unit_square();
        let c = Catalog::zipf(3, 1.0, 1.0).unwrap();
        let d = Demand::resolve(&t, &c, &RequestSource::Spatial { density: 2.0 }, 50).unwrap();
        let w: f64 = d.classes().iter().map(|c| c.weight).sum();
        assert!((w - 2.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_estimate_zero_variance_is_exact() {
        let c = Catalog::zipf(50, 1.2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = c.noisy_estimate(0.0, &mut rng).unwrap();
        for (a, b) in c.popularity().iter().zip(e.popularity()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
