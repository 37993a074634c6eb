//! Subcommand implementations behind the `edgecache` binary.

use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analysis::{
    build_ea_chain, exponent_fits, phi_all, state_resistances, stationary, EaParams,
    ResistanceGraph, Stationary, UpEdges,
};
use crate::config::{Config, RunManifest};
use crate::error::{Error, Result};
use crate::gain::{build_gain, normalizers, GainKind, GainModel, GainTable};
use crate::geometry::{ChannelModel, Topology};
use crate::placement::{greedy_allocation, Allocation, GreedyStrategy};
use crate::selfcheck;
use crate::sim::{greedy_occupancy_vector, run_experiment, ExperimentConfig, MetricsReport};
use crate::traffic::{Catalog, Demand, RequestSource};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "EDGECACHE_OUT";

/// Command-line values that take precedence over the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub snapshot_every: Option<u64>,
}

/// A validated configuration together with everything it resolves to.
pub struct Loaded {
    pub config: Config,
    pub out_dir: PathBuf,
    pub topology: Topology,
    pub catalog: Catalog,
    pub source: RequestSource,
    pub channel: ChannelModel,
}

/// Reads, overrides and validates a configuration; relative paths inside it
/// resolve against the file's directory.
pub fn load(path: &Path, overrides: &Overrides) -> Result<Loaded> {
    let mut config = Config::from_file(path)?;
    if let Some(s) = overrides.seed {
        config.seeds = vec![s];
    }
    if let Some(j) = overrides.jobs {
        config.jobs = Some(j);
    }
    if let Some(k) = overrides.snapshot_every {
        config.snapshot_every = Some(k);
    }
    config.validate()?;
    let base = path.parent().unwrap_or(Path::new("."));
    let topology = config.topology.load(base)?;
    let catalog = config.catalog.build()?;
    let source = config.traffic.build();
    source.validate(&catalog)?;
    let channel = config.channel.build()?;
    let out_dir = overrides
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("edgecache-out"));
    Ok(Loaded {
        config,
        out_dir,
        topology,
        catalog,
        source,
        channel,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn flush(mut w: csv::Writer<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        b = b.num_threads(j);
    }
    b.build()
        .map_err(|e| Error::Contract(format!("cannot start worker pool: {e}")))
}

fn gain_for(kind: GainKind, channel: &ChannelModel, cache: &mut Vec<(GainKind, Box<dyn GainModel>)>) -> Result<()> {
    if !cache.iter().any(|(k, _)| *k == kind) {
        cache.push((kind, build_gain(kind, channel)?));
    }
    Ok(())
}

/// Result of one grid cell.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_id: String,
    pub report: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct SimulateSummary {
    pub csv: PathBuf,
    pub resolved_config: PathBuf,
    pub runs: Vec<RunOutcome>,
}

struct Reference {
    kind: GainKind,
    occupancy: Vec<f64>,
    start: Option<Allocation>,
}

/// Runs every (policy, q, seed) cell and writes `simulate.csv` plus the
/// resolved configuration.
pub fn cmd_simulate(path: &Path, overrides: &Overrides) -> Result<SimulateSummary> {
    let loaded = load(path, overrides)?;
    let manifest = loaded.config.manifest(loaded.out_dir.clone())?;
    if manifest.runs.is_empty() {
        return Err(Error::config("policies", "at least one policy is required"));
    }
    let cfg = &loaded.config;
    let demand = Demand::resolve(&loaded.topology, &loaded.catalog, &loaded.source, cfg.grid_resolution)?;
    let noisy_demand = match &cfg.initial_allocation {
        Some(a) => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let estimate = loaded.catalog.noisy_estimate(a.sigma2, &mut rng)?;
            Some(Demand::resolve(&loaded.topology, &estimate, &loaded.source, cfg.grid_resolution)?)
        }
        None => None,
    };

    let mut gains = Vec::new();
    for r in &manifest.runs {
        gain_for(r.gain, &loaded.channel, &mut gains)?;
    }
    let mut references = Vec::new();
    for (kind, model) in &gains {
        let table = GainTable::new(model.as_ref(), &demand);
        let greedy = greedy_allocation(&table, cfg.capacity, GreedyStrategy::Lazy)?;
        let start = match &noisy_demand {
            Some(d) => {
                let t = GainTable::new(model.as_ref(), d);
                Some(greedy_allocation(&t, cfg.capacity, GreedyStrategy::Lazy)?.allocation)
            }
            None => None,
        };
        references.push(Reference {
            kind: *kind,
            occupancy: greedy_occupancy_vector(&greedy.allocation),
            start,
        });
    }

    let pool = thread_pool(manifest.jobs)?;
    let results: Vec<Result<RunOutcome>> = pool.install(|| {
        manifest
            .runs
            .par_iter()
            .map(|cell| {
                let gain = gains.iter().find(|(k, _)| *k == cell.gain).expect("gain built").1.as_ref();
                let reference = references.iter().find(|r| r.kind == cell.gain).expect("reference built");
                let experiment = ExperimentConfig {
                    topology: &loaded.topology,
                    catalog: &loaded.catalog,
                    source: &loaded.source,
                    channel: loaded.channel,
                    gain,
                    policy: cell.policy.clone(),
                    capacity: cfg.capacity,
                    warmup_requests: cfg.warmup_requests,
                    measure_requests: cfg.measure_requests,
                    seed: cell.seed,
                    initial_allocation: reference.start.as_ref(),
                    reference_occupancy: Some(&reference.occupancy),
                    snapshot_every: cfg.snapshot_every,
                };
                run_experiment(&experiment).map(|report| RunOutcome {
                    run_id: cell.run_id.clone(),
                    report,
                })
            })
            .collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;

    create_dir(&manifest.out_dir)?;
    let csv_path = manifest.out_dir.join("simulate.csv");
    write_simulate_csv(&csv_path, &manifest, &runs)?;
    let resolved = manifest.out_dir.join("resolved_config.json");
    write_file(&resolved, &(cfg.to_json() + "\n"))?;

    println!("{:<40} {:>9} {:>12} {:>10}", "run_id", "hit_rate", "delay_ms", "cos_dist");
    for r in &runs {
        println!(
            "{:<40} {:>9.4} {:>12.3} {:>10}",
            r.run_id,
            r.report.hit_rate,
            1e3 * r.report.mean_delay,
            r.report
                .cosine_to_reference
                .map_or_else(|| "-".to_string(), |c| format!("{c:.4}"))
        );
    }
    Ok(SimulateSummary {
        csv: csv_path,
        resolved_config: resolved,
        runs,
    })
}

fn write_simulate_csv(path: &Path, manifest: &RunManifest, runs: &[RunOutcome]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "run_id",
        "policy",
        "q",
        "requests_processed",
        "hit_rate",
        "mean_delay_s",
        "cosine_dist_to_greedy",
    ])?;
    for (cell, run) in manifest.runs.iter().zip(runs) {
        let r = &run.report;
        let final_row = crate::sim::Snapshot {
            requests_processed: r.requests,
            hit_rate: r.hit_rate,
            mean_delay: r.mean_delay,
            cosine_to_reference: r.cosine_to_reference,
        };
        let rows = if r.snapshots.is_empty() {
            std::slice::from_ref(&final_row)
        } else {
            &r.snapshots[..]
        };
        for s in rows {
            w.write_record([
                run.run_id.clone(),
                cell.policy.kind.to_string(),
                cell.policy.q.to_string(),
                s.requests_processed.to_string(),
                s.hit_rate.to_string(),
                s.mean_delay.to_string(),
                s.cosine_to_reference.map(|c| c.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    flush(w, path)
}

/// Per-content state table written by `analyze`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateRow {
    pub content: usize,
    pub state_mask: u64,
    pub phi: f64,
    pub resistance: f64,
    pub pi: Vec<f64>,
    pub stable: bool,
    pub argmax_phi: bool,
    pub fitted_exponent: f64,
    pub predicted_exponent: f64,
}

#[derive(Debug, Clone)]
pub struct AnalyzeSummary {
    pub csv: PathBuf,
    pub q_grid: Vec<f64>,
    pub rows: Vec<StateRow>,
}

/// Tolerance for calling two potentials or resistances equal.
fn tie(values: &[f64]) -> f64 {
    1e-9 * values.iter().fold(1.0f64, |m, v| m.max(v.abs()))
}

/// State-by-state analysis of the first contents over the configured q grid.
pub fn analyze_states(
    table: &GainTable,
    gamma: &[f64],
    norm: crate::gain::Normalizers,
    q_grid: &[f64],
    contents: usize,
) -> Result<Vec<StateRow>> {
    let per_content: Vec<Result<Vec<StateRow>>> = (0..contents)
        .into_par_iter()
        .map(|f| {
            let phi = phi_all(f, gamma, table);
            let graph = ResistanceGraph::for_content(f, table, gamma, UpEdges::SingleBit);
            let r = state_resistances(&graph);
            let laws = q_grid
                .iter()
                .map(|&q| {
                    let params = EaParams::asymptotic(q, gamma.to_vec(), norm);
                    stationary(&build_ea_chain(f, table, &params)?)
                })
                .collect::<Result<Vec<Stationary>>>()?;
            let fits = if q_grid.len() >= 2 {
                exponent_fits(q_grid, &laws)
            } else {
                vec![f64::NAN; phi.len()]
            };
            let best = phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let rmin = r.iter().copied().fold(f64::INFINITY, f64::min);
            let (tp, tr) = (tie(&phi), tie(&r));
            Ok((0..phi.len())
                .map(|x| StateRow {
                    content: f,
                    state_mask: x as u64,
                    phi: phi[x],
                    resistance: r[x],
                    pi: laws.iter().map(|l| l.pi[x]).collect(),
                    stable: r[x] - rmin <= tr,
                    argmax_phi: best - phi[x] <= tp,
                    fitted_exponent: fits[x],
                    predicted_exponent: r[x] - rmin,
                })
                .collect())
        })
        .collect();
    Ok(per_content.into_iter().collect::<Result<Vec<_>>>()?.concat())
}

/// Writes `analyze.csv`: potentials, resistances and stationary laws for
/// every configuration of every analyzed content.
pub fn cmd_analyze(path: &Path, overrides: &Overrides) -> Result<AnalyzeSummary> {
    let loaded = load(path, overrides)?;
    let cfg = &loaded.config;
    let b = loaded.topology.len();
    if b > cfg.analysis.max_stations {
        return Err(Error::config(
            "analysis.max_stations",
            format!("topology has {b} stations, enumeration is capped at {}", cfg.analysis.max_stations),
        ));
    }
    let gamma = cfg.analysis.gamma.clone().unwrap_or_else(|| vec![1.0; b]);
    if gamma.len() != b || gamma.iter().any(|g| !(*g > 0.0)) {
        return Err(Error::config("analysis.gamma", format!("need {b} positive exponents")));
    }
    let demand = Demand::resolve(&loaded.topology, &loaded.catalog, &loaded.source, cfg.grid_resolution)?;
    let model = build_gain(cfg.gain, &loaded.channel)?;
    let table = GainTable::new(model.as_ref(), &demand);
    let norm = normalizers(model.as_ref(), &loaded.topology)?;
    let contents = cfg.analysis.contents.unwrap_or(usize::MAX).min(loaded.catalog.len());
    let q_grid = cfg.analysis.q_grid.clone();
    let pool = thread_pool(cfg.jobs)?;
    let rows = pool.install(|| analyze_states(&table, &gamma, norm, &q_grid, contents))?;

    create_dir(&loaded.out_dir)?;
    let csv_path = loaded.out_dir.join("analyze.csv");
    let mut w = csv_writer(&csv_path)?;
    let mut header = vec!["content".to_string(), "state_mask".into(), "phi".into(), "resistance".into()];
    header.extend(q_grid.iter().map(|q| format!("pi_q{q}")));
    header.extend(["stable", "argmax_phi", "fitted_exponent", "predicted_exponent"].map(String::from));
    w.write_record(&header)?;
    for r in &rows {
        let mut rec = vec![
            r.content.to_string(),
            r.state_mask.to_string(),
            r.phi.to_string(),
            r.resistance.to_string(),
        ];
        rec.extend(r.pi.iter().map(|p| p.to_string()));
        rec.push(u8::from(r.stable).to_string());
        rec.push(u8::from(r.argmax_phi).to_string());
        rec.push(r.fitted_exponent.to_string());
        rec.push(r.predicted_exponent.to_string());
        w.write_record(&rec)?;
    }
    flush(w, &csv_path)?;
    write_file(&loaded.out_dir.join("resolved_config.json"), &(cfg.to_json() + "\n"))?;

    let mismatched = rows.iter().filter(|r| r.stable != r.argmax_phi).count();
    println!(
        "{} contents, {} states each, {} stability mismatches",
        contents,
        1u64 << b,
        mismatched
    );
    Ok(AnalyzeSummary {
        csv: csv_path,
        q_grid,
        rows,
    })
}

#[derive(Debug, Clone)]
pub struct GreedySummary {
    pub csv: PathBuf,
    pub allocation: Allocation,
    pub gain: f64,
}

/// Writes `greedy.csv` with one `(content_id, bs_id)` row per cached copy,
/// station by station in placement order.
pub fn cmd_greedy(path: &Path, overrides: &Overrides) -> Result<GreedySummary> {
    let loaded = load(path, overrides)?;
    let cfg = &loaded.config;
    let demand = Demand::resolve(&loaded.topology, &loaded.catalog, &loaded.source, cfg.grid_resolution)?;
    let model = build_gain(cfg.gain, &loaded.channel)?;
    let table = GainTable::new(model.as_ref(), &demand);
    let result = greedy_allocation(&table, cfg.capacity, GreedyStrategy::Lazy)?;

    create_dir(&loaded.out_dir)?;
    let csv_path = loaded.out_dir.join("greedy.csv");
    let mut w = csv_writer(&csv_path)?;
    w.write_record(["content_id", "bs_id"])?;
    for b in 0..result.allocation.stations() {
        let id = loaded.topology.stations()[b].id;
        for f in result.allocation.station_list(b) {
            w.write_record([f.to_string(), id.to_string()])?;
        }
    }
    flush(w, &csv_path)?;
    write_file(&loaded.out_dir.join("resolved_config.json"), &(cfg.to_json() + "\n"))?;
    println!("greedy {} gain {:.6}", cfg.gain, result.gain);
    Ok(GreedySummary {
        csv: csv_path,
        allocation: result.allocation,
        gain: result.gain,
    })
}

/// Runs the built-in invariant suite, plus configuration checks when a
/// configuration is given. Returns whether everything passed.
pub fn cmd_validate(path: Option<&Path>, overrides: &Overrides) -> Result<bool> {
    let mut all = true;
    if let Some(p) = path {
        let loaded = load(p, overrides)?;
        loaded.config.manifest(loaded.out_dir.clone())?;
        println!(
            "PASS config: {} stations, {} contents",
            loaded.topology.len(),
            loaded.catalog.len()
        );
    }
    for c in selfcheck::run_all() {
        all &= c.passed;
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(all)
}

/// Process exit code for an error: 2 for configuration and input problems,
/// 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig { .. } | Error::Io { .. } | Error::Json { .. } => 2,
        _ => 1,
    }
}
