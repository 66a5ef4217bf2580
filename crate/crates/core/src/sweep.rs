//! Batch harness: the scheme × load × seed sweep, its on-disk artifacts, the
//! analytic evaluation and the sim-versus-model comparison.
//!
//! Layout under the output directory:
//!
//! ```text
//! workloads/load<ρ>_seed<s>.txt        workload dump shared by all schemes
//! runs/<scheme>_load<ρ>_seed<s>/       flows.csv aggregate.csv detections.csv nodes.csv complete
//! aggregate.csv                        per (scheme, load, class), pooled over seeds
//! analytic.csv                         model fed with measured waits and losses
//! figures/                             fig4a.csv fig4b.csv fig5a.csv fig5b.csv plot.gp
//! ```

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{md1k, PairModel, PathScheme};
use crate::config::ScenarioConfig;
use crate::engine::{self, RunResult, Scenario, Scheme, Seeds};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, flow_rows, read_csv, write_csv, ClassFilter, FlowRow, MetricsRecord};
use crate::topology::{NodeId, Topology};
use crate::traffic::{FlowClass, Workload};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub scheme: Scheme,
    pub load: f64,
    pub seed: u64,
}

impl Cell {
    pub fn dir_name(&self) -> String {
        format!("{}_load{:.2}_seed{}", self.scheme, self.load, self.seed)
    }
}

pub fn workload_file_name(load: f64, seed: u64) -> String {
    format!("load{load:.2}_seed{seed}.txt")
}

/// Every cell of the sweep, grouped by load then seed.
pub fn cells(cfg: &ScenarioConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &load in &cfg.loads {
        for &seed in &cfg.seeds {
            for &scheme in &cfg.schemes {
                out.push(Cell { scheme, load, seed });
            }
        }
    }
    out
}

/// Per-node, per-class queue statistics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRow {
    pub node: String,
    pub class: FlowClass,
    pub arrivals: u64,
    pub served: u64,
    pub drops: u64,
    pub mean_wait: Option<f64>,
}

pub fn node_rows(result: &RunResult) -> Vec<NodeRow> {
    let mut rows = Vec::new();
    for n in &result.nodes {
        for (i, class) in [FlowClass::Short, FlowClass::Long].into_iter().enumerate() {
            rows.push(NodeRow {
                node: n.node.to_string(),
                class,
                arrivals: n.counters.arrivals[i],
                served: n.counters.served[i],
                drops: n.counters.drops[i],
                mean_wait: n.counters.mean_wait(class),
            });
        }
    }
    rows
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Runs one cell on an already generated workload.
pub fn run_cell(cfg: &ScenarioConfig, topo: &Topology, workload: &Workload, cell: Cell) -> Result<RunResult> {
    let scenario = Scenario {
        topology: topo,
        workload,
        scheme: cell.scheme,
        control: cfg.control.clone(),
        engine: cfg.engine.clone(),
        seeds: Seeds::from_run_seed(cell.seed),
    };
    engine::run(&scenario)
}

/// Writes a cell's CSVs, then the `complete` marker holding the workload
/// digest.
pub fn write_cell(dir: &Path, cell: Cell, result: &RunResult, digest: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let rows = flow_rows(result, cell.load, cell.seed);
    write_csv(&rows, create(&dir.join("flows.csv"))?)?;
    write_csv(&aggregate(&rows), create(&dir.join("aggregate.csv"))?)?;
    write_csv(&result.detections, create(&dir.join("detections.csv"))?)?;
    write_csv(&node_rows(result), create(&dir.join("nodes.csv"))?)?;
    let mut marker = create(&dir.join("complete"))?;
    writeln!(marker, "workload_sha256={digest}")?;
    writeln!(marker, "events={}", result.events)?;
    writeln!(marker, "truncated={}", result.truncated)?;
    marker.flush()?;
    Ok(())
}

fn is_complete(dir: &Path) -> bool {
    dir.join("complete").is_file()
}

fn pool(parallelism: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

#[derive(Debug, Clone, Default)]
pub struct SweepReport {
    pub out_dir: PathBuf,
    pub cells_run: usize,
    pub cells_skipped: usize,
    /// Workload digest per (load, seed).
    pub digests: Vec<(f64, u64, String)>,
    pub aggregate: Vec<MetricsRecord>,
    pub analysis: Vec<AnalysisRow>,
    pub missing: Vec<String>,
}

/// Runs every cell, skipping finished ones when `resume` is set, then
/// rebuilds the pooled aggregate, figures and model comparison from disk.
pub fn run_sweep(cfg: &ScenarioConfig, resume: bool) -> Result<SweepReport> {
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    let topo = Topology::new(cfg.topology.clone())?;
    fs::create_dir_all(out.join("runs"))?;
    fs::create_dir_all(out.join("workloads"))?;

    let mut digests = Vec::new();
    for &load in &cfg.loads {
        for &seed in &cfg.seeds {
            let w = Workload::generate(&cfg.workload_for(load, seed), &topo)?;
            w.write_text(create(&out.join("workloads").join(workload_file_name(load, seed)))?)?;
            digests.push((load, seed, w.digest()));
        }
    }

    let todo: Vec<Cell> = cells(cfg)
        .into_iter()
        .filter(|c| !(resume && is_complete(&out.join("runs").join(c.dir_name()))))
        .collect();
    let skipped = cells(cfg).len() - todo.len();
    let digest_of = |load: f64, seed: u64| {
        digests
            .iter()
            .find(|(l, s, _)| *l == load && *s == seed)
            .map(|d| d.2.clone())
            .expect("digest for every (load, seed)")
    };
    pool(cfg.parallelism)?.install(|| {
        todo.par_iter()
            .map(|&cell| -> Result<()> {
                let started = Instant::now();
                let w = Workload::generate(&cfg.workload_for(cell.load, cell.seed), &topo)?;
                let digest = w.digest();
                if digest != digest_of(cell.load, cell.seed) {
                    return Err(Error::Contract(format!(
                        "workload for {} is not reproducible",
                        cell.dir_name()
                    )));
                }
                let result = run_cell(cfg, &topo, &w, cell)?;
                write_cell(&out.join("runs").join(cell.dir_name()), cell, &result, &digest)?;
                log::info!(
                    "{}: {} events in {:.1}s{}",
                    cell.dir_name(),
                    result.events,
                    started.elapsed().as_secs_f64(),
                    if result.truncated { " (truncated)" } else { "" }
                );
                Ok(())
            })
            .collect::<Result<Vec<()>>>()
    })?;

    let mut report = finish(cfg, &topo)?;
    report.cells_run = todo.len();
    report.cells_skipped = skipped;
    report.digests = digests;
    Ok(report)
}

/// Runs every configured scheme over one workload dump. Requires exactly one
/// configured load, which labels the outputs.
pub fn replay(cfg: &ScenarioConfig, workload_path: &Path) -> Result<SweepReport> {
    cfg.validate()?;
    let [load] = cfg.loads[..] else {
        return Err(Error::config(
            "loads",
            "replay needs exactly one load to label the runs",
        ));
    };
    let topo = Topology::new(cfg.topology.clone())?;
    let w = Workload::read_text(BufReader::new(File::open(workload_path)?), &topo, &cfg.workload)?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(out.join("workloads"))?;
    w.write_text(create(&out.join("workloads").join(workload_file_name(load, w.seed)))?)?;
    let digest = w.digest();
    let mut replay_cfg = cfg.clone();
    replay_cfg.seeds = vec![w.seed];
    for &scheme in &cfg.schemes {
        let cell = Cell {
            scheme,
            load,
            seed: w.seed,
        };
        let result = run_cell(cfg, &topo, &w, cell)?;
        write_cell(&out.join("runs").join(cell.dir_name()), cell, &result, &digest)?;
    }
    let mut report = finish(&replay_cfg, &topo)?;
    report.cells_run = cfg.schemes.len();
    report.digests = vec![(load, w.seed, digest)];
    Ok(report)
}

fn finish(cfg: &ScenarioConfig, topo: &Topology) -> Result<SweepReport> {
    let out = &cfg.output_dir;
    let (aggregate, missing) = pooled_aggregate(cfg)?;
    write_csv(&aggregate, create(&out.join("aggregate.csv"))?)?;
    write_figures(&out.join("figures"), &aggregate)?;
    let analysis = compare_cells(cfg, topo)?;
    write_csv(&analysis, create(&out.join("analytic.csv"))?)?;
    Ok(SweepReport {
        out_dir: out.clone(),
        aggregate,
        analysis,
        missing,
        ..Default::default()
    })
}

/// Pools per-flow rows over seeds for each (scheme, load). Returns the
/// records and the run directories that were expected but absent.
pub fn pooled_aggregate(cfg: &ScenarioConfig) -> Result<(Vec<MetricsRecord>, Vec<String>)> {
    let runs = cfg.output_dir.join("runs");
    let mut records = Vec::new();
    let mut missing = Vec::new();
    for &scheme in &cfg.schemes {
        for &load in &cfg.loads {
            let mut rows: Vec<FlowRow> = Vec::new();
            for &seed in &cfg.seeds {
                let cell = Cell { scheme, load, seed };
                let dir = runs.join(cell.dir_name());
                if !is_complete(&dir) {
                    missing.push(cell.dir_name());
                    continue;
                }
                rows.extend(read_csv::<FlowRow, _>(BufReader::new(File::open(
                    dir.join("flows.csv"),
                )?))?);
            }
            records.extend(aggregate(&rows));
        }
    }
    Ok((records, missing))
}

/// One (scheme, load, value, ci95) row of a figure series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureRow {
    pub scheme: Scheme,
    pub load: f64,
    pub value: f64,
    pub ci95: Option<f64>,
}

pub fn figure_rows(records: &[MetricsRecord], class: ClassFilter, throughput: bool) -> Vec<FigureRow> {
    records
        .iter()
        .filter(|r| r.class == class)
        .filter_map(|r| {
            let (value, ci95) = if throughput {
                (r.norm_throughput?, None)
            } else {
                (r.mean_norm_fct, Some(r.ci95))
            };
            Some(FigureRow {
                scheme: r.scheme,
                load: r.load,
                value,
                ci95,
            })
        })
        .collect()
}

const PLOT_SCRIPT: &str = r#"# gnuplot -p plot.gp
set datafile separator ","
set key top left
set xlabel "Load"
schemes = "ecmp rps diffflow"
do for [f in "fig4a fig4b fig5a fig5b"] {
    set term pngcairo size 640,480
    set output f.".png"
    set ylabel (f eq "fig4b") ? "Normalized throughput" : "Normalized FCT"
    plot for [s in schemes] f.".csv" every ::1 using 2:(strcol(1) eq s ? $3 : 1/0) with linespoints title s
}
"#;

pub fn write_figures(dir: &Path, records: &[MetricsRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, class, throughput) in [
        ("fig4a.csv", ClassFilter::All, false),
        ("fig4b.csv", ClassFilter::All, true),
        ("fig5a.csv", ClassFilter::Short, false),
        ("fig5b.csv", ClassFilter::Long, false),
    ] {
        write_csv(&figure_rows(records, class, throughput), create(&dir.join(name))?)?;
    }
    fs::write(dir.join("plot.gp"), PLOT_SCRIPT)?;
    Ok(())
}

/// Model output per (scheme, load, class), optionally beside simulated means.
/// Times are means over flows, in seconds. Normalized values divide each
/// flow's time by its own no-queuing reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRow {
    pub scheme: Scheme,
    pub load: f64,
    pub class: ClassFilter,
    pub flows: u64,
    pub p_loss: f64,
    pub t_ideal: f64,
    pub fct_base: f64,
    pub fct_queued: f64,
    pub p_r: f64,
    pub fct_total: f64,
    pub analytic_norm_fct: f64,
    pub sim_mean_fct: Option<f64>,
    pub sim_norm_fct: Option<f64>,
    /// |analytic - simulated| / simulated, on normalized FCT.
    pub deviation: Option<f64>,
}

fn path_scheme(scheme: Scheme, class: FlowClass) -> PathScheme {
    if scheme.sprays(class) {
        PathScheme::Rps
    } else {
        PathScheme::Ecmp
    }
}

struct PairCache<'a> {
    topo: &'a Topology,
    load: f64,
    rps_probability: Option<f64>,
    models: HashMap<(u16, u16, PathScheme), PairModel>,
}

impl<'a> PairCache<'a> {
    fn get(&mut self, src: NodeId, dst: NodeId, scheme: PathScheme) -> Result<&PairModel> {
        let key = (src.index, dst.index, scheme);
        if !self.models.contains_key(&key) {
            let n = self.topo.enumerate_paths(src, dst)?.len();
            let probs = match (scheme, self.rps_probability) {
                (PathScheme::Rps, Some(p)) => Some(vec![p; n]),
                _ => None,
            };
            let m = PairModel::new(self.topo, src, dst, scheme, probs, self.load)?;
            self.models.insert(key, m);
        }
        Ok(&self.models[&key])
    }
}

#[derive(Default)]
struct ClassAcc {
    flows: u64,
    t_ideal: f64,
    fct_base: f64,
    fct_queued: f64,
    p_r: f64,
    fct_total: f64,
    norm: f64,
    sim_fct: f64,
    sim_norm: f64,
    p_loss: f64,
}

impl ClassAcc {
    fn row(&self, scheme: Scheme, load: f64, class: ClassFilter, with_sim: bool) -> Option<AnalysisRow> {
        if self.flows == 0 {
            return None;
        }
        let n = self.flows as f64;
        let analytic_norm_fct = self.norm / n;
        let sim_norm = with_sim.then(|| self.sim_norm / n);
        Some(AnalysisRow {
            scheme,
            load,
            class,
            flows: self.flows,
            p_loss: self.p_loss / n,
            t_ideal: self.t_ideal / n,
            fct_base: self.fct_base / n,
            fct_queued: self.fct_queued / n,
            p_r: self.p_r / n,
            fct_total: self.fct_total / n,
            analytic_norm_fct,
            sim_mean_fct: with_sim.then(|| self.sim_fct / n),
            sim_norm_fct: sim_norm,
            deviation: sim_norm.map(|s| (analytic_norm_fct - s).abs() / s),
        })
    }
}

/// Inputs the model needs at one node.
type WaitTable = HashMap<(String, FlowClass), f64>;

#[allow(clippy::too_many_arguments)]
fn accumulate(
    accs: &mut [ClassAcc; 3],
    cache: &mut PairCache<'_>,
    cfg: &ScenarioConfig,
    scheme: Scheme,
    flow: &crate::traffic::FlowSpec,
    p_loss: f64,
    wait: &dyn Fn(NodeId, FlowClass) -> f64,
    sim: Option<(f64, f64)>,
) -> Result<()> {
    let packet_bits = cfg.topology.packet_bits();
    let pm = cache.get(flow.src, flow.dst, path_scheme(scheme, flow.class))?;
    let e = pm.evaluate(
        flow.size_packets,
        packet_bits,
        |v| wait(v, flow.class),
        p_loss,
        cfg.gamma(flow.class),
    )?;
    for (i, filter) in ClassFilter::ALL.into_iter().enumerate() {
        if !filter.matches(flow.class) {
            continue;
        }
        let a = &mut accs[i];
        a.flows += 1;
        a.t_ideal += e.t_ideal;
        a.fct_base += e.fct_base;
        a.fct_queued += e.fct_queued;
        a.p_r += e.p_r;
        a.fct_total += e.fct_total;
        a.norm += e.fct_total / e.fct_base;
        a.p_loss += p_loss;
        if let Some((fct, norm)) = sim {
            a.sim_fct += fct;
            a.sim_norm += norm;
        }
    }
    Ok(())
}

fn read_workload(cfg: &ScenarioConfig, topo: &Topology, load: f64, seed: u64) -> Result<Workload> {
    let path = cfg.output_dir.join("workloads").join(workload_file_name(load, seed));
    if path.is_file() {
        Workload::read_text(BufReader::new(File::open(path)?), topo, &cfg.workload)
    } else {
        Workload::generate(&cfg.workload_for(load, seed), topo)
    }
}

/// Feeds each finished cell's measured per-node waits and per-class loss
/// into the model and sets the result beside the simulated means. Flows
/// are pooled over seeds; only completed flows are compared.
pub fn compare_cells(cfg: &ScenarioConfig, topo: &Topology) -> Result<Vec<AnalysisRow>> {
    let runs = cfg.output_dir.join("runs");
    let mut out = Vec::new();
    for &scheme in &cfg.schemes {
        for &load in &cfg.loads {
            let mut cache = PairCache {
                topo,
                load,
                rps_probability: cfg.analysis.rps_path_probability,
                models: HashMap::new(),
            };
            let mut accs: [ClassAcc; 3] = Default::default();
            let mut any = false;
            for &seed in &cfg.seeds {
                let dir = runs.join(Cell { scheme, load, seed }.dir_name());
                if !is_complete(&dir) {
                    continue;
                }
                any = true;
                let rows: Vec<FlowRow> = read_csv(BufReader::new(File::open(dir.join("flows.csv"))?))?;
                let nodes: Vec<NodeRow> = read_csv(BufReader::new(File::open(dir.join("nodes.csv"))?))?;
                let waits: WaitTable = nodes
                    .into_iter()
                    .map(|n| ((n.node, n.class), n.mean_wait.unwrap_or(0.0)))
                    .collect();
                let mut loss = [(0u64, 0u64); 2];
                for r in &rows {
                    let s = &mut loss[(r.class == FlowClass::Long) as usize];
                    s.0 += r.drops as u64;
                    s.1 += r.attempts as u64;
                }
                let p_loss = |c: FlowClass| {
                    let (d, a) = loss[(c == FlowClass::Long) as usize];
                    if a == 0 {
                        0.0
                    } else {
                        d as f64 / a as f64
                    }
                };
                let workload = read_workload(cfg, topo, load, seed)?;
                if workload.flows.len() != rows.len() {
                    return Err(Error::Contract(format!(
                        "{} has {} flow rows but its workload has {} flows",
                        dir.display(),
                        rows.len(),
                        workload.flows.len()
                    )));
                }
                let wait = |v: NodeId, c: FlowClass| waits.get(&(v.to_string(), c)).copied().unwrap_or(0.0);
                for (flow, row) in workload.flows.iter().zip(&rows) {
                    let (Some(fct), Some(norm)) = (row.fct, row.normalized_fct) else {
                        continue;
                    };
                    accumulate(
                        &mut accs,
                        &mut cache,
                        cfg,
                        scheme,
                        flow,
                        p_loss(flow.class),
                        &wait,
                        Some((fct, norm)),
                    )?;
                }
            }
            if any {
                out.extend(
                    ClassFilter::ALL
                        .into_iter()
                        .zip(&accs)
                        .filter_map(|(c, a)| a.row(scheme, load, c, true)),
                );
            }
        }
    }
    Ok(out)
}

/// Re-evaluates the model over an existing output directory and writes
/// `comparison.csv`. Returns the rows and the run directories that were
/// expected but absent.
pub fn compare_analysis(cfg: &ScenarioConfig) -> Result<(Vec<AnalysisRow>, Vec<String>)> {
    cfg.validate()?;
    let topo = Topology::new(cfg.topology.clone())?;
    let (_, missing) = pooled_aggregate(cfg)?;
    let rows = compare_cells(cfg, &topo)?;
    write_csv(&rows, create(&cfg.output_dir.join("comparison.csv"))?)?;
    Ok((rows, missing))
}

/// Egress busy time of a forwarding node's slowest port.
fn node_occupancy(topo: &Topology, v: NodeId) -> f64 {
    let i = topo.index_of(v).expect("node exists");
    (0..topo.ports(i).len())
        .map(|p| topo.port_occupancy(i, p))
        .fold(0.0, f64::max)
}

/// Model-only evaluation: every port is an M/D/1/K queue at the configured
/// load. Flows come from the first seed's workload at each load.
pub fn analyze(cfg: &ScenarioConfig) -> Result<Vec<AnalysisRow>> {
    cfg.validate()?;
    let topo = Topology::new(cfg.topology.clone())?;
    let capacity = topo.params().queue_capacity_packets() + 1;
    let seed = cfg.seeds[0];
    let mut out = Vec::new();
    for &load in &cfg.loads {
        let q = md1k(load, capacity)?;
        let workload = Workload::generate(&cfg.workload_for(load, seed), &topo)?;
        for &scheme in &cfg.schemes {
            let mut cache = PairCache {
                topo: &topo,
                load,
                rps_probability: cfg.analysis.rps_path_probability,
                models: HashMap::new(),
            };
            let wait = |v: NodeId, _: FlowClass| q.mean_wait * node_occupancy(&topo, v);
            let mut accs: [ClassAcc; 3] = Default::default();
            for flow in &workload.flows {
                let hops = topo.enumerate_paths(flow.src, flow.dst)?.paths[0].hop_count;
                let p_loss = 1.0 - (1.0 - q.loss).powi(hops as i32);
                accumulate(&mut accs, &mut cache, cfg, scheme, flow, p_loss, &wait, None)?;
            }
            out.extend(
                ClassFilter::ALL
                    .into_iter()
                    .zip(&accs)
                    .filter_map(|(c, a)| a.row(scheme, load, c, false)),
            );
        }
    }
    Ok(out)
}

/// Mean and CI of a figure series point, for reports.
pub fn series_point(
    records: &[MetricsRecord],
    scheme: Scheme,
    load: f64,
    class: ClassFilter,
) -> Option<&MetricsRecord> {
    records
        .iter()
        .find(|r| r.scheme == scheme && r.class == class && (r.load - load).abs() < 1e-9)
}
