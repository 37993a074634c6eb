//! JSON experiment configuration shared by every subcommand.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gain::GainKind;
use crate::geometry::{ChannelModel, Point, Region, SnrModel, StationRecord, Topology, TopologyFile};
use crate::policies::{PolicyKind, PolicySpec};
use crate::traffic::{Catalog, RequestSource, User};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub topology: TopologySpec,
    #[serde(default)]
    pub catalog: CatalogSpec,
    #[serde(default)]
    pub traffic: TrafficSpec,
    #[serde(default)]
    pub channel: ChannelSpec,
    /// Gain used by policies that do not name one, and by `greedy` and
    /// `analyze`.
    #[serde(default = "default_gain")]
    pub gain: GainKind,
    /// Per-station cache size.
    pub capacity: usize,
    #[serde(default)]
    pub policies: Vec<PolicyEntry>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub warmup_requests: u64,
    #[serde(default)]
    pub measure_requests: u64,
    /// Measured requests between metric snapshots.
    #[serde(default = "default_snapshot")]
    pub snapshot_every: Option<u64>,
    #[serde(default = "default_grid")]
    pub grid_resolution: usize,
    #[serde(default)]
    pub initial_allocation: Option<InitialAllocation>,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default)]
    pub jobs: Option<usize>,
}

fn default_gain() -> GainKind {
    GainKind::HitRate
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn default_snapshot() -> Option<u64> {
    Some(100_000)
}

fn default_grid() -> usize {
    200
}

/// `{"builtin": "berlin"}`, `{"file": "path.json"}` or an inline station
/// list with optional region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopologySpec {
    Builtin {
        builtin: String,
    },
    File {
        file: PathBuf,
    },
    Inline {
        stations: Vec<StationRecord>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        region: Option<Region>,
    },
}

impl TopologySpec {
    /// Relative file paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<Topology> {
        match self {
            TopologySpec::Builtin { builtin } => match builtin.as_str() {
                "berlin" => Ok(Topology::berlin()),
                other => Err(Error::config("topology.builtin", format!("unknown layout {other:?}"))),
            },
            TopologySpec::File { file } => {
                let path = if file.is_absolute() {
                    file.clone()
                } else {
                    base.join(file)
                };
                Topology::from_json_file(&path)
            }
            TopologySpec::Inline { stations, region } => TopologyFile::WithRegion {
                stations: stations.clone(),
                region: *region,
            }
            .into_topology(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalogSpec {
    #[serde(rename = "F")]
    pub num_contents: usize,
    pub alpha: f64,
    pub total_rate: f64,
}

impl Default for CatalogSpec {
    fn default() -> Self {
        CatalogSpec {
            num_contents: 10_000,
            alpha: 1.2,
            total_rate: 1.0,
        }
    }
}

impl CatalogSpec {
    pub fn build(&self) -> Result<Catalog> {
        Catalog::zipf(self.num_contents, self.alpha, self.total_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrafficSpec {
    Spatial {
        #[serde(default = "one")]
        density: f64,
    },
    Finite {
        users: Vec<UserSpec>,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for TrafficSpec {
    fn default() -> Self {
        TrafficSpec::Spatial { density: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub x_m: f64,
    pub y_m: f64,
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<Vec<f64>>,
}

impl TrafficSpec {
    pub fn build(&self) -> RequestSource {
        match self {
            TrafficSpec::Spatial { density } => RequestSource::Spatial { density: *density },
            TrafficSpec::Finite { users } => RequestSource::FiniteUsers(
                users
                    .iter()
                    .map(|u| User {
                        position: Point::new(u.x_m, u.y_m),
                        weight: u.weight,
                        rates: u.rates.clone(),
                    })
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSpec {
    #[serde(rename = "W_hz")]
    pub bandwidth_hz: f64,
    pub snr_db: f64,
    /// Random per-link SNR (linear scale); overrides `snr_db` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr: Option<SnrModel>,
    pub d_backhaul_s: f64,
    #[serde(rename = "M_bits")]
    pub content_size_bits: f64,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        ChannelSpec {
            bandwidth_hz: 5e6,
            snr_db: 10.0,
            snr: None,
            d_backhaul_s: 0.1,
            content_size_bits: 1e6,
        }
    }
}

impl ChannelSpec {
    pub fn build(&self) -> Result<ChannelModel> {
        let c = ChannelModel {
            bandwidth_hz: self.bandwidth_hz,
            snr: self.snr.unwrap_or_else(|| SnrModel::from_db(self.snr_db)),
            backhaul_delay_s: self.d_backhaul_s,
            content_size_bits: self.content_size_bits,
        };
        c.validate()?;
        Ok(c)
    }
}

/// One or several admission parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QValues {
    One(f64),
    Many(Vec<f64>),
}

impl QValues {
    pub fn values(&self) -> Vec<f64> {
        match self {
            QValues::One(q) => vec![*q],
            QValues::Many(v) => v.clone(),
        }
    }
}

impl Default for QValues {
    fn default() -> Self {
        QValues::One(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyEntry {
    pub policy: PolicyKind,
    #[serde(default)]
    pub q: QValues,
    #[serde(default)]
    pub gamma: Option<Vec<f64>>,
    #[serde(default)]
    pub gain: Option<GainKind>,
    #[serde(default)]
    pub virtual_cache: Option<usize>,
}

/// Start every cache from the greedy allocation computed on popularity
/// estimates with log-normal noise of log-variance `sigma2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialAllocation {
    #[serde(default)]
    pub sigma2: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSpec {
    pub q_grid: Vec<f64>,
    pub gamma: Option<Vec<f64>>,
    pub max_stations: usize,
    /// Analyze only the first this many contents.
    pub contents: Option<usize>,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        AnalysisSpec {
            q_grid: vec![1e-1, 1e-2, 1e-3, 1e-4],
            gamma: None,
            max_stations: 6,
            contents: None,
        }
    }
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    /// Field-level checks that need no external files.
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::config("capacity", "must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.grid_resolution == 0 {
            return Err(Error::config("grid_resolution", "must be positive"));
        }
        if self.snapshot_every == Some(0) {
            return Err(Error::config("snapshot_every", "must be positive"));
        }
        if self.jobs == Some(0) {
            return Err(Error::config("jobs", "must be positive"));
        }
        for (i, p) in self.policies.iter().enumerate() {
            let qs = p.q.values();
            if qs.is_empty() {
                return Err(Error::config(format!("policies[{i}].q"), "empty list"));
            }
            for q in qs {
                if !(q > 0.0 && q <= 1.0) {
                    return Err(Error::config(
                        format!("policies[{i}].q"),
                        format!("must lie in (0, 1], got {q}"),
                    ));
                }
            }
        }
        if let Some(a) = &self.initial_allocation {
            if !(a.sigma2 >= 0.0) {
                return Err(Error::config("initial_allocation.sigma2", "must be >= 0"));
            }
        }
        if self.analysis.q_grid.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
            return Err(Error::config("analysis.q_grid", "values must lie in (0, 1)"));
        }
        self.channel.build()?;
        self.catalog.build()?;
        Ok(())
    }

    /// Expands policies × admission parameters × seeds into run cells.
    pub fn manifest(&self, out_dir: PathBuf) -> Result<RunManifest> {
        let mut runs = Vec::new();
        for p in &self.policies {
            let gain = p.gain.unwrap_or(self.gain);
            let qs = if p.policy.uses_q() {
                p.q.values()
            } else {
                vec![1.0]
            };
            for q in qs {
                for &seed in &self.seeds {
                    let spec = PolicySpec {
                        kind: p.policy,
                        q,
                        gamma: p.gamma.clone().unwrap_or_default(),
                        virtual_cache: p.virtual_cache,
                    };
                    let mut run_id = format!("{}-{}-q{}-s{}", p.policy, gain, q, seed);
                    if let Some(v) = p.virtual_cache {
                        run_id.push_str(&format!("-v{v}"));
                    }
                    runs.push(RunCell {
                        run_id,
                        policy: spec,
                        gain,
                        seed,
                    });
                }
            }
        }
        let mut seen = HashSet::new();
        if let Some(dup) = runs.iter().find(|r| !seen.insert(r.run_id.clone())) {
            return Err(Error::config("policies", format!("duplicate run {}", dup.run_id)));
        }
        Ok(RunManifest {
            runs,
            out_dir,
            jobs: self.jobs,
        })
    }
}

/// One cell of the experiment grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RunCell {
    pub run_id: String,
    pub policy: PolicySpec,
    pub gain: GainKind,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub runs: Vec<RunCell>,
    pub out_dir: PathBuf,
    pub jobs: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"topology": {"builtin": "berlin"}, "capacity": 10,
        "policies": [{"policy": "qlru_delta", "q": [0.1, 0.01], "gain": "comp_delay"},
                     {"policy": "fifo"}],
        "seeds": [1, 2]}"#;

    #[test]
    fn minimal_config_defaults() {
        let c: Config = serde_json::from_str(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.catalog, CatalogSpec::default());
        assert_eq!(c.grid_resolution, 200);
        let m = c.manifest("out".into()).unwrap();
        assert_eq!(m.runs.len(), 6);
        assert_eq!(m.runs[0].run_id, "qlru_delta-comp_delay-q0.1-s1");
        assert_eq!(m.runs[5].run_id, "fifo-hit_rate-q1-s2");
    }

    #[test]
    fn resolved_config_round_trips() {
        let c: Config = serde_json::from_str(MINIMAL).unwrap();
        let again: Config = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.manifest("o".into()).unwrap(), again.manifest("o".into()).unwrap());
    }

    #[test]
    fn field_level_errors() {
        let bad = MINIMAL.replace("0.01", "1.5");
        let c: Config = serde_json::from_str(&bad).unwrap();
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("policies[0].q"), "{e}");
        assert!(serde_json::from_str::<Config>(&MINIMAL.replace("seeds", "sedes")).is_err());
    }

    #[test]
    fn topology_variants() {
        let inline: TopologySpec = serde_json::from_str(
            r#"{"stations": [{"id": 0, "x_m": 0, "y_m": 0, "range_m": 5}]}"#,
        )
        .unwrap();
        assert_eq!(inline.load(Path::new(".")).unwrap().len(), 1);
        let missing = TopologySpec::File {
            file: "nowhere.json".into(),
        };
        let e = missing.load(Path::new("/tmp")).unwrap_err();
        assert!(e.to_string().contains("/tmp/nowhere.json"));
    }
}
