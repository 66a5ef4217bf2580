//! Acceptance criteria on the reference setup. Each test prints one
//! `[PASS]`/`[FAIL]` line straight to stdout so the verdicts appear even when
//! output capture is on.

use std::collections::{HashMap, VecDeque};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use diffflow::analytic::{blocking_probability, retransmission_probability, NodeBlockingModel};
use diffflow::checks::{self, Check};
use diffflow::control_plane::DetectionRecord;
use diffflow::engine::single_port;
use diffflow::metrics::{read_csv, FlowRow};
use diffflow::sweep::{self, Cell, SweepReport};
use diffflow::time::SimTime;
use diffflow::{FlowClass, NodeId, Scenario, ScenarioConfig, Scheme, Seeds, Topology, Workload};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp};

struct Sweep {
    _dir: tempfile::TempDir,
    cfg: ScenarioConfig,
    report: SweepReport,
}

/// The full reference sweep, run once and shared by every criterion.
fn sweep() -> &'static Sweep {
    static SWEEP: OnceLock<Sweep> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let dir = tempfile::tempdir().expect("temp dir");
        let cfg = ScenarioConfig {
            output_dir: dir.path().to_path_buf(),
            ..ScenarioConfig::default()
        };
        assert!(cfg.seeds.len() >= 5);
        assert_eq!(cfg.workload.flow_count, Some(50_000));
        let report = sweep::run_sweep(&cfg, false).expect("reference sweep");
        assert!(report.missing.is_empty(), "missing runs: {:?}", report.missing);
        Sweep { _dir: dir, cfg, report }
    })
}

fn report(check: &Check) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{check}").unwrap();
    out.flush().unwrap();
}

fn verdict(check: Check) {
    report(&check);
    assert!(check.passed, "{check}");
}

fn custom(id: u32, name: &'static str, passed: bool, detail: String) -> Check {
    Check {
        id,
        name,
        passed,
        detail,
    }
}

fn run_dir(s: &Sweep, cell: Cell) -> PathBuf {
    s.cfg.output_dir.join("runs").join(cell.dir_name())
}

fn flow_rows(dir: &Path) -> Vec<FlowRow> {
    read_csv(std::fs::File::open(dir.join("flows.csv")).unwrap()).unwrap()
}

#[test]
fn c01_overall_fct() {
    verdict(checks::overall_fct(&sweep().report.aggregate));
}

#[test]
fn c02_throughput() {
    verdict(checks::throughput(&sweep().report.aggregate));
}

#[test]
fn c03_short_flow_fct() {
    verdict(checks::short_fct(&sweep().report.aggregate));
}

#[test]
fn c04_long_flow_fct() {
    verdict(checks::long_fct(&sweep().report.aggregate));
}

#[test]
fn c05_model_agreement() {
    verdict(checks::model_agreement(&sweep().report.analysis));
}

/// Probability that the number of delivering paths lies in
/// `out_degree + 1 ..= in_degree`, by walking every delivery outcome.
fn exhaustive_blocking(probs: &[f64], in_degree: usize, out_degree: usize) -> f64 {
    let n = probs.len();
    let mut total = 0.0;
    for outcome in 0u64..(1 << n) {
        let mut pr = 1.0;
        let mut delivering = 0;
        for (i, p) in probs.iter().enumerate() {
            if outcome >> i & 1 == 1 {
                pr *= p;
                delivering += 1;
            } else {
                pr *= 1.0 - p;
            }
        }
        if delivering > out_degree && delivering <= in_degree {
            total += pr;
        }
    }
    total
}

#[test]
fn c06_blocking_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for n in 1..=12usize {
        for in_degree in 1..=n {
            for out_degree in 0..=in_degree {
                for _ in 0..100 {
                    let probs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                    let node = NodeBlockingModel {
                        node: NodeId::server(0),
                        in_degree,
                        out_degree,
                        path_probabilities: probs.clone(),
                    };
                    let got = blocking_probability(&node).unwrap();
                    worst = worst.max((got - exhaustive_blocking(&probs, in_degree, out_degree)).abs());
                    cases += 1;
                }
            }
        }
    }
    verdict(custom(
        6,
        "blocking formula vs exhaustive enumeration",
        worst <= 1e-12,
        format!("{cases} configurations, max |error| {worst:.2e} <= 1e-12"),
    ));
}

#[test]
fn c07_retransmission_monte_carlo() {
    const TRIALS: u64 = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_sigma: f64 = 0.0;
    let mut ok = true;
    for p in [0.001, 0.01, 0.05] {
        for h in [1u32, 6, 666] {
            let losses = Binomial::new(h as u64, p).unwrap();
            let hits = (0..TRIALS).filter(|_| losses.sample(&mut rng) > 0).count() as f64;
            let est = hits / TRIALS as f64;
            let exact = retransmission_probability(p, h);
            let sigma = (exact * (1.0 - exact) / TRIALS as f64).sqrt();
            let z = (est - exact).abs() / sigma;
            ok &= z <= 3.0;
            worst_sigma = worst_sigma.max(z);
        }
    }
    verdict(custom(
        7,
        "retransmission probability vs Monte Carlo",
        ok,
        format!("9 (p_loss, H) pairs x 10^6 trials, worst deviation {worst_sigma:.2} sigma <= 3"),
    ));
}

/// Single FIFO queue with `capacity` waiting places and one deterministic
/// server, tracked by the departure times of the packets in the system.
fn brute_force_loss(arrivals: &[SimTime], service: SimTime, capacity: usize) -> f64 {
    let mut departures: VecDeque<SimTime> = VecDeque::new();
    let mut dropped = 0u64;
    for &t in arrivals {
        while departures.front().is_some_and(|&d| d <= t) {
            departures.pop_front();
        }
        if departures.len() > capacity {
            dropped += 1;
            continue;
        }
        let start = departures.back().copied().unwrap_or(t).max(t);
        departures.push_back(start + service);
    }
    dropped as f64 / arrivals.len() as f64
}

fn poisson_arrivals(rng: &mut ChaCha8Rng, rate_per_ns: f64, count: usize) -> Vec<SimTime> {
    let gap = Exp::new(rate_per_ns).unwrap();
    let mut t = 0.0f64;
    (0..count)
        .map(|_| {
            t += gap.sample(rng);
            t.round() as SimTime
        })
        .collect()
}

#[test]
fn c08_queue_oracle() {
    const SERVICE: SimTime = 12_000;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ok = true;
    let mut notes = Vec::new();
    for capacity in [1000usize, 10] {
        for rho in [0.5, 0.9, 1.1] {
            let arrivals = poisson_arrivals(&mut rng, rho / SERVICE as f64, 1_000_000);
            let port = single_port::simulate(&arrivals, SERVICE, capacity).loss_ratio();
            let oracle = brute_force_loss(&arrivals, SERVICE, capacity);
            let rel = if oracle == 0.0 {
                port
            } else {
                (port - oracle).abs() / oracle
            };
            ok &= rel <= 0.02;
            notes.push(format!("K={capacity} rho={rho}: {port:.5} vs {oracle:.5}"));
        }
    }
    verdict(custom(8, "port loss vs brute-force queue", ok, notes.join(", ")));
}

fn structural_paths(topo: &Topology) -> Result<usize, String> {
    let mut pairs = 0;
    let servers: Vec<NodeId> = topo.servers().collect();
    let tor_of = |s: u16| s / topo.params().servers_per_tor;
    let pod_of = |s: u16| tor_of(s) / topo.params().tors_per_pod;
    for &a in &servers {
        for &b in &servers {
            if a == b {
                continue;
            }
            let expect = if tor_of(a.index) == tor_of(b.index) {
                1
            } else if pod_of(a.index) == pod_of(b.index) {
                2
            } else {
                8
            };
            let n = topo.enumerate_paths(a, b).map_err(|e| e.to_string())?.paths.len();
            if n != expect {
                return Err(format!("{a}->{b} has {n} paths, expected {expect}"));
            }
            pairs += 1;
        }
    }
    Ok(pairs)
}

#[test]
fn c09_structural_properties() {
    let s = sweep();
    let topo = Topology::new(s.cfg.topology.clone()).unwrap();
    let mut ok = true;
    let mut notes = Vec::new();

    match structural_paths(&topo) {
        Ok(pairs) => notes.push(format!("path counts 8/2/1 on {pairs} pairs")),
        Err(e) => {
            ok = false;
            notes.push(e);
        }
    }

    let w = Workload::generate(&s.cfg.workload_for(0.8, 1), &topo).unwrap();
    let ecmp = sweep::run_cell(
        &s.cfg,
        &topo,
        &w,
        Cell {
            scheme: Scheme::Ecmp,
            load: 0.8,
            seed: 1,
        },
    )
    .unwrap();
    let pinned = ecmp.flows.iter().filter(|f| f.single_path).count();
    ok &= pinned == ecmp.flows.len();
    notes.push(format!("ecmp pinned {pinned}/{}", ecmp.flows.len()));

    let mut short_only = s.cfg.workload_for(0.5, 1);
    short_only.short_fraction = 1.0;
    short_only.flow_count = Some(5_000);
    let w = Workload::generate(&short_only, &topo).unwrap();
    let mut engine = s.cfg.engine.clone();
    engine.record_trace = true;
    let trace = |scheme| {
        let sc = Scenario {
            topology: &topo,
            workload: &w,
            scheme,
            control: s.cfg.control.clone(),
            engine: engine.clone(),
            seeds: Seeds::from_run_seed(1),
        };
        diffflow::run(&sc).unwrap().trace.unwrap()
    };
    let same = trace(Scheme::DiffFlow) == trace(Scheme::Ecmp);
    ok &= same;
    notes.push(format!("short-only diffflow trace equals ecmp: {same}"));

    let mut detections = 0;
    let mut wrong = 0;
    let mut broken = 0;
    let mut rows_checked = 0;
    for cell in sweep::cells(&s.cfg) {
        let dir = run_dir(s, cell);
        let rows = flow_rows(&dir);
        for r in &rows {
            rows_checked += 1;
            let settled = r.attempts.checked_sub(r.drops);
            let holds = match r.fct {
                Some(_) => settled == Some(r.size),
                None => settled.is_some_and(|d| d <= r.size),
            };
            broken += usize::from(!holds);
        }
        if cell.scheme == Scheme::DiffFlow {
            let class: HashMap<u32, FlowClass> = rows.iter().map(|r| (r.flow_id, r.class)).collect();
            let log: Vec<DetectionRecord> = read_csv(std::fs::File::open(dir.join("detections.csv")).unwrap()).unwrap();
            detections += log.len();
            wrong += log
                .iter()
                .filter(|d| class.get(&d.flow_id) != Some(&FlowClass::Long))
                .count();
        }
    }
    ok &= wrong == 0 && detections > 0 && broken == 0;
    notes.push(format!("{detections} detections, {wrong} not long"));
    notes.push(format!("conservation broken on {broken}/{rows_checked} flow rows"));
    verdict(custom(9, "structural properties", ok, notes.join("; ")));
}

#[test]
fn c10_determinism() {
    let s = sweep();
    let topo = Topology::new(s.cfg.topology.clone()).unwrap();
    let cell = Cell {
        scheme: Scheme::DiffFlow,
        load: 0.8,
        seed: 1,
    };
    let w = Workload::generate(&s.cfg.workload_for(cell.load, cell.seed), &topo).unwrap();
    let result = sweep::run_cell(&s.cfg, &topo, &w, cell).unwrap();
    let dir = tempfile::tempdir().unwrap();
    sweep::write_cell(dir.path(), cell, &result, &w.digest()).unwrap();
    let again = std::fs::read(dir.path().join("flows.csv")).unwrap();
    let first = std::fs::read(run_dir(s, cell).join("flows.csv")).unwrap();
    verdict(custom(
        10,
        "determinism",
        again == first,
        format!(
            "{} rerun flows.csv ({} bytes) byte-identical: {}",
            cell.dir_name(),
            first.len(),
            again == first
        ),
    ));
}
