//! Closed-form FCT model: ideal and per-scheme FCT, blocking-path
//! combinatorics, queuing-adjusted FCT and retransmission inflation.
//!
//! All times are in seconds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{NodeId, PathSet, Topology};

/// Largest path collection `blocking_probability` will enumerate.
pub const MAX_ENUMERATED_PATHS: usize = 20;

/// Default FCT inflation factors for retransmitted flows.
pub const GAMMA_SHORT: f64 = 5.0;
pub const GAMMA_LONG: f64 = 1.2;

/// Forwarding behavior the model distinguishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathScheme {
    Ecmp,
    Rps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticPathModel {
    pub src: NodeId,
    pub dst: NodeId,
    /// End-to-end single-packet delays, ascending.
    pub delays: Vec<f64>,
    /// Path occurrence probabilities.
    pub probabilities: Vec<f64>,
    /// Forwarding nodes per path.
    pub forwarding_nodes: Vec<u32>,
    pub flow_bits: f64,
    pub link_rate_bps: f64,
    pub scheme: PathScheme,
}

impl AnalyticPathModel {
    pub fn from_paths(
        set: &PathSet,
        probabilities: Vec<f64>,
        flow_bits: f64,
        link_rate_bps: f64,
        scheme: PathScheme,
    ) -> Result<Self> {
        let model = Self {
            src: set.src,
            dst: set.dst,
            delays: set.paths.iter().map(|p| p.ideal_delay).collect(),
            probabilities,
            forwarding_nodes: set.paths.iter().map(|p| p.hop_count).collect(),
            flow_bits,
            link_rate_bps,
            scheme,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.delays.len();
        if n == 0 {
            return Err(Error::InvalidArgument("path model needs at least one path".into()));
        }
        if self.probabilities.len() != n || self.forwarding_nodes.len() != n {
            return Err(Error::InvalidArgument(
                "delay, probability and node-count vectors differ in length".into(),
            ));
        }
        if self.delays.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("path delays must be ascending".into()));
        }
        if self.probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("path probabilities must lie in [0, 1]".into()));
        }
        if !(self.flow_bits > 0.0 && self.link_rate_bps > 0.0) {
            return Err(Error::InvalidArgument(
                "flow length and link rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Default path occurrence probabilities: `1/N` per path for ECMP, the
/// per-path share `load/N` of the offered load for RPS.
pub fn default_path_probabilities(scheme: PathScheme, paths: usize, load: f64) -> Vec<f64> {
    let n = paths as f64;
    let p = match scheme {
        PathScheme::Ecmp => 1.0 / n,
        PathScheme::Rps => (load / n).clamp(0.0, 1.0),
    };
    vec![p; paths]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utilization {
    pub per_path: Vec<f64>,
    pub total: f64,
}

pub fn path_utilization(model: &AnalyticPathModel) -> Utilization {
    let n = model.len();
    let per_path = match model.scheme {
        PathScheme::Ecmp => vec![1.0 / n as f64; n],
        PathScheme::Rps => vec![1.0; n],
    };
    let total = per_path.iter().sum();
    Utilization { per_path, total }
}

/// Store-and-forward time of the whole flow, weighted over utilized paths.
pub fn ideal_mean_fct(model: &AnalyticPathModel) -> f64 {
    let u = path_utilization(model);
    let per_hop = model.flow_bits / model.link_rate_bps;
    model
        .forwarding_nodes
        .iter()
        .zip(&u.per_path)
        .map(|(&y, &pu)| (y as f64 + 1.0) * per_hop * pu / u.total)
        .sum()
}

pub fn fct_ecmp(model: &AnalyticPathModel) -> f64 {
    let u = path_utilization(model);
    let weighted: f64 = u.per_path.iter().zip(&model.delays).map(|(pu, tau)| pu * tau).sum();
    ideal_mean_fct(model) + weighted / u.total
}

pub fn fct_rps(model: &AnalyticPathModel) -> f64 {
    ideal_mean_fct(model) + model.delays.last().copied().unwrap_or(0.0)
}

/// FCT without queuing for the model's scheme.
pub fn base_fct(model: &AnalyticPathModel) -> f64 {
    match model.scheme {
        PathScheme::Ecmp => fct_ecmp(model),
        PathScheme::Rps => fct_rps(model),
    }
}

/// Probability that exactly the paths of `delivering` carry a packet and
/// none of `idle` do.
pub fn combination_probability(delivering: &[f64], idle: &[f64]) -> f64 {
    delivering.iter().product::<f64>() * idle.iter().map(|p| 1.0 - p).product::<f64>()
}

/// One forwarding node as seen from a source: its degree within the
/// source-destination path graph and the prefix paths reaching it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeBlockingModel {
    pub node: NodeId,
    pub in_degree: usize,
    pub out_degree: usize,
    /// Delivery probability of each distinct path from the source to `node`.
    pub path_probabilities: Vec<f64>,
}

impl NodeBlockingModel {
    pub fn path_count(&self) -> usize {
        self.path_probabilities.len()
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Number of path combinations that force queuing at a node.
pub fn blocking_combinations(path_count: usize, in_degree: usize, out_degree: usize) -> u128 {
    if in_degree <= out_degree {
        return 0;
    }
    (1..=in_degree - out_degree)
        .map(|i| binomial(path_count, out_degree + i))
        .sum()
}

/// Sum of `combination_probability` over every subset of the prefix paths
/// whose size lies in `out_degree + 1 ..= in_degree`.
pub fn blocking_probability(node: &NodeBlockingModel) -> Result<f64> {
    let n = node.path_count();
    if n > MAX_ENUMERATED_PATHS {
        return Err(Error::TooManyPaths(n));
    }
    if node.path_probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidArgument(format!(
            "path probabilities at {} must lie in [0, 1]",
            node.node
        )));
    }
    if node.in_degree <= node.out_degree {
        return Ok(0.0);
    }
    let lo = node.out_degree + 1;
    let hi = node.in_degree.min(n);
    let mut total = 0.0;
    let mut delivering = Vec::with_capacity(n);
    let mut idle = Vec::with_capacity(n);
    for mask in 0u32..(1u32 << n) {
        let size = mask.count_ones() as usize;
        if size < lo || size > hi {
            continue;
        }
        delivering.clear();
        idle.clear();
        for (i, &p) in node.path_probabilities.iter().enumerate() {
            if mask & (1 << i) != 0 {
                delivering.push(p);
            } else {
                idle.push(p);
            }
        }
        total += combination_probability(&delivering, &idle);
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Blocking models for every forwarding node of a path set. Degrees count
/// distinct neighbors within the set; each prefix path's probability is the
/// summed probability of the full paths extending it.
pub fn node_blocking_models(topology: &Topology, set: &PathSet, probabilities: &[f64]) -> Vec<NodeBlockingModel> {
    struct Acc {
        preds: Vec<usize>,
        succs: Vec<usize>,
        prefixes: BTreeMap<Vec<usize>, f64>,
    }
    let mut acc: BTreeMap<usize, Acc> = BTreeMap::new();
    for (path, &p) in set.paths.iter().zip(probabilities) {
        let idx = &path.indices;
        for k in 1..idx.len() - 1 {
            let e = acc.entry(idx[k]).or_insert_with(|| Acc {
                preds: Vec::new(),
                succs: Vec::new(),
                prefixes: BTreeMap::new(),
            });
            if !e.preds.contains(&idx[k - 1]) {
                e.preds.push(idx[k - 1]);
            }
            if !e.succs.contains(&idx[k + 1]) {
                e.succs.push(idx[k + 1]);
            }
            *e.prefixes.entry(idx[..k].to_vec()).or_insert(0.0) += p;
        }
    }
    acc.into_iter()
        .map(|(v, a)| NodeBlockingModel {
            node: topology.node(v),
            in_degree: a.preds.len(),
            out_degree: a.succs.len(),
            path_probabilities: a.prefixes.into_values().map(|p| p.min(1.0)).collect(),
        })
        .collect()
}

/// Base FCT plus `P_B * wait` summed over every (path, forwarding node) pair.
pub fn queued_fct(base: f64, terms: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    base + terms.into_iter().map(|(pb, wait)| pb * wait).sum::<f64>()
}

/// Probability that at least one of `packets` packets is dropped.
pub fn retransmission_probability(p_loss: f64, packets: u32) -> f64 {
    (1.0 - (1.0 - p_loss).powf(packets as f64)).clamp(0.0, 1.0)
}

/// Retransmission-inflated FCT.
pub fn total_fct(queued: f64, packets: u32, p_loss: f64, gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_loss) {
        return Err(Error::InvalidArgument(format!(
            "loss probability {p_loss} outside [0, 1]"
        )));
    }
    if !(gamma.is_finite() && gamma >= 1.0) {
        return Err(Error::InvalidArgument(format!("gamma {gamma} must be at least 1")));
    }
    if !(queued.is_finite() && queued >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "queued FCT {queued} must be non-negative"
        )));
    }
    let pr = retransmission_probability(p_loss, packets);
    Ok((1.0 - pr) * queued + pr * queued * gamma)
}

/// Stationary quantities of an M/D/1 queue holding at most `system_capacity`
/// customers (one in service plus `system_capacity - 1` waiting).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Md1k {
    pub loss: f64,
    /// Mean number in system.
    pub mean_in_system: f64,
    /// Mean wait before service of accepted customers, in service times.
    pub mean_wait: f64,
}

/// Solves the departure-epoch embedded chain by level crossing, then maps to
/// time averages. Offered load `rho` is arrivals per service time.
pub fn md1k(rho: f64, system_capacity: usize) -> Result<Md1k> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::InvalidArgument(format!("offered load {rho} must be positive")));
    }
    if system_capacity == 0 {
        return Err(Error::InvalidArgument("system capacity must be at least 1".into()));
    }
    let k = system_capacity;
    // Poisson(rho) pmf and upper tails P(A >= j), summed from the top.
    let top = k + 64 + (4.0 * rho) as usize;
    let mut pmf = Vec::with_capacity(top + 1);
    let mut term = (-rho).exp();
    for j in 0..=top {
        pmf.push(term);
        term *= rho / (j + 1) as f64;
    }
    let mut tail = vec![0.0; top + 2];
    for j in (0..=top).rev() {
        tail[j] = tail[j + 1] + pmf[j];
    }

    // pi_j * a_0 = pi_0 * P(A >= j) + sum_{i=1}^{j-1} pi_i * P(A >= j - i + 1)
    let mut pi = vec![0.0; k];
    pi[0] = 1.0;
    for j in 1..k {
        let mut s = pi[0] * tail[j];
        for i in 1..j {
            s += pi[i] * tail[j - i + 1];
        }
        pi[j] = s / pmf[0];
        if pi[j] > 1e250 {
            for x in pi.iter_mut().take(j + 1) {
                *x *= 1e-250;
            }
        }
    }
    let sum: f64 = pi.iter().sum();
    for x in &mut pi {
        *x /= sum;
    }
    let denom = pi[0] + rho;
    let mut p: Vec<f64> = pi.iter().map(|x| x / denom).collect();
    let loss = (1.0 - 1.0 / denom).max(0.0);
    p.push(loss);
    let mean_in_system: f64 = p.iter().enumerate().map(|(j, x)| j as f64 * x).sum();
    let accepted = rho * (1.0 - loss);
    let mean_wait = (mean_in_system / accepted - 1.0).max(0.0);
    Ok(Md1k {
        loss,
        mean_in_system,
        mean_wait,
    })
}

/// Model quantities of one evaluated flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowEvaluation {
    pub t_ideal: f64,
    pub fct_base: f64,
    pub fct_queued: f64,
    pub p_r: f64,
    pub fct_total: f64,
}

/// Everything about a server pair that does not depend on the flow size.
#[derive(Debug, Clone)]
pub struct PairModel {
    pub scheme: PathScheme,
    pub set: PathSet,
    pub probabilities: Vec<f64>,
    pub blocking: Vec<NodeBlockingModel>,
    pub blocking_probability: Vec<f64>,
    /// For every path, the indices into `blocking` of its forwarding nodes.
    path_nodes: Vec<Vec<usize>>,
    link_rate_bps: f64,
}

impl PairModel {
    pub fn new(
        topology: &Topology,
        src: NodeId,
        dst: NodeId,
        scheme: PathScheme,
        probabilities: Option<Vec<f64>>,
        load: f64,
    ) -> Result<Self> {
        let set = topology.enumerate_paths(src, dst)?;
        let probabilities = probabilities.unwrap_or_else(|| default_path_probabilities(scheme, set.len(), load));
        if probabilities.len() != set.len() {
            return Err(Error::InvalidArgument(format!(
                "{} path probabilities given for {} paths",
                probabilities.len(),
                set.len()
            )));
        }
        let blocking = node_blocking_models(topology, &set, &probabilities);
        let blocking_probability = blocking.iter().map(blocking_probability).collect::<Result<Vec<_>>>()?;
        let path_nodes = set
            .paths
            .iter()
            .map(|p| {
                p.nodes[1..p.nodes.len() - 1]
                    .iter()
                    .map(|n| blocking.iter().position(|b| b.node == *n).expect("node on path"))
                    .collect()
            })
            .collect();
        Ok(Self {
            scheme,
            set,
            probabilities,
            blocking,
            blocking_probability,
            path_nodes,
            link_rate_bps: topology.params().link_rate_bps,
        })
    }

    pub fn path_model(&self, flow_bits: f64) -> Result<AnalyticPathModel> {
        AnalyticPathModel::from_paths(
            &self.set,
            self.probabilities.clone(),
            flow_bits,
            self.link_rate_bps,
            self.scheme,
        )
    }

    /// Evaluates a flow of `packets` packets of `packet_bits` each. `wait`
    /// gives the queuing delay at a node.
    pub fn evaluate(
        &self,
        packets: u32,
        packet_bits: f64,
        wait: impl Fn(NodeId) -> f64,
        p_loss: f64,
        gamma: f64,
    ) -> Result<FlowEvaluation> {
        let model = self.path_model(packets as f64 * packet_bits)?;
        let t_ideal = ideal_mean_fct(&model);
        let fct_base = base_fct(&model);
        let terms = self
            .path_nodes
            .iter()
            .flatten()
            .map(|&b| (self.blocking_probability[b], wait(self.blocking[b].node)));
        let fct_queued = queued_fct(fct_base, terms);
        Ok(FlowEvaluation {
            t_ideal,
            fct_base,
            fct_queued,
            p_r: retransmission_probability(p_loss, packets),
            fct_total: total_fct(fct_queued, packets, p_loss, gamma)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::TopologyParams;
    use proptest::prelude::*;

    fn model(delays: Vec<f64>, nodes: Vec<u32>, scheme: PathScheme) -> AnalyticPathModel {
        let n = delays.len();
        AnalyticPathModel {
            src: NodeId::server(0),
            dst: NodeId::server(1),
            delays,
            probabilities: vec![1.0 / n as f64; n],
            forwarding_nodes: nodes,
            flow_bits: 12_000.0,
            link_rate_bps: 1e9,
            scheme,
        }
    }

    /// Counts outcomes with more than `out` deliveries among `probs`.
    fn blocking_oracle(probs: &[f64], inn: usize, out: usize) -> f64 {
        if inn <= out {
            return 0.0;
        }
        let n = probs.len();
        let mut total = 0.0;
        for mask in 0u32..(1 << n) {
            let delivered = (0..n).filter(|i| mask >> i & 1 == 1).count();
            if delivered > out && delivered <= inn {
                let mut p = 1.0;
                for (i, q) in probs.iter().enumerate() {
                    p *= if mask >> i & 1 == 1 { *q } else { 1.0 - q };
                }
                total += p;
            }
        }
        total
    }

    #[test]
    fn utilization() {
        let m = model(vec![1.0; 8], vec![5; 8], PathScheme::Ecmp);
        let u = path_utilization(&m);
        assert!(u.per_path.iter().all(|&p| p == 0.125));
        assert!((u.total - 1.0).abs() < 1e-12);
        let m = model(vec![1.0; 8], vec![5; 8], PathScheme::Rps);
        let u = path_utilization(&m);
        assert!(u.per_path.iter().all(|&p| p == 1.0));
        assert_eq!(u.total, 8.0);
        for s in [PathScheme::Ecmp, PathScheme::Rps] {
            let m = model(vec![1.0], vec![1], s);
            let u = path_utilization(&m);
            assert_eq!(u.per_path[0] / u.total, 1.0);
        }
    }

    #[test]
    fn ideal_fct_values() {
        let m = model(vec![1e-6], vec![1], PathScheme::Ecmp);
        assert!((ideal_mean_fct(&m) - 24e-6).abs() < 1e-15);
        for s in [PathScheme::Ecmp, PathScheme::Rps] {
            let m = model(vec![1e-6; 4], vec![3; 4], s);
            assert!((ideal_mean_fct(&m) - 4.0 * 12e-6).abs() < 1e-15);
        }
        let m = model(vec![1e-6, 2e-6], vec![3, 5], PathScheme::Ecmp);
        assert!((ideal_mean_fct(&m) - (4.0 * 12e-6 + 6.0 * 12e-6) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn scheme_fcts() {
        let m = model(vec![10e-6, 30e-6], vec![3, 3], PathScheme::Ecmp);
        let t = ideal_mean_fct(&m);
        assert!((fct_ecmp(&m) - (t + 20e-6)).abs() < 1e-15);
        assert!((fct_rps(&m) - (t + 30e-6)).abs() < 1e-15);
        let m = model(vec![7e-6; 3], vec![3; 3], PathScheme::Rps);
        assert!((fct_rps(&m) - fct_ecmp(&m)).abs() < 1e-15);
    }

    #[test]
    fn combination_examples() {
        assert_eq!(combination_probability(&[1.0, 1.0], &[]), 1.0);
        let p: f64 = 0.3;
        let v = combination_probability(&[p; 2], &[p; 3]);
        assert!((v - p.powi(2) * (1.0 - p).powi(3)).abs() < 1e-15);
    }

    #[test]
    fn combination_completeness() {
        for n in 1..=10usize {
            let probs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37 + 0.11) % 1.0).collect();
            let mut total = 0.0;
            for mask in 0u32..(1 << n) {
                let (a, b): (Vec<(usize, f64)>, Vec<(usize, f64)>) =
                    probs.iter().copied().enumerate().partition(|(i, _)| mask >> i & 1 == 1);
                let a: Vec<f64> = a.into_iter().map(|x| x.1).collect();
                let b: Vec<f64> = b.into_iter().map(|x| x.1).collect();
                total += combination_probability(&a, &b);
            }
            assert!((total - 1.0).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn blocking_examples() {
        let node = |inn, out, probs: Vec<f64>| NodeBlockingModel {
            node: NodeId::new(crate::topology::Tier::Tor, 0),
            in_degree: inn,
            out_degree: out,
            path_probabilities: probs,
        };
        assert_eq!(blocking_probability(&node(1, 2, vec![0.5; 4])).unwrap(), 0.0);
        assert_eq!(blocking_probability(&node(2, 2, vec![0.5; 4])).unwrap(), 0.0);
        let v = blocking_probability(&node(2, 1, vec![0.4; 2])).unwrap();
        assert!((v - 0.16).abs() < 1e-15);
        assert!(matches!(
            blocking_probability(&node(2, 1, vec![0.1; 21])),
            Err(Error::TooManyPaths(21))
        ));
        assert_eq!(blocking_combinations(8, 2, 1), 28);
        assert_eq!(blocking_combinations(4, 4, 1), 6 + 4 + 1);
        assert_eq!(blocking_combinations(4, 1, 1), 0);
    }

    #[test]
    fn reference_dag_degrees() {
        let t = Topology::new(TopologyParams::default()).unwrap();
        let set = t.enumerate_paths(NodeId::server(0), NodeId::server(4)).unwrap();
        let probs = default_path_probabilities(PathScheme::Ecmp, set.len(), 0.5);
        let nodes = node_blocking_models(&t, &set, &probs);
        assert_eq!(nodes.len(), 1 + 2 + 2 + 2 + 1);
        let dst_tor = nodes
            .iter()
            .find(|n| n.node == NodeId::new(crate::topology::Tier::Tor, 2))
            .unwrap();
        assert_eq!((dst_tor.in_degree, dst_tor.out_degree, dst_tor.path_count()), (2, 1, 8));
        let src_tor = nodes
            .iter()
            .find(|n| n.node == NodeId::new(crate::topology::Tier::Tor, 0))
            .unwrap();
        assert_eq!((src_tor.in_degree, src_tor.out_degree), (1, 2));
        assert_eq!(src_tor.path_probabilities, vec![1.0]);
        let core = nodes
            .iter()
            .find(|n| n.node.tier == crate::topology::Tier::Core)
            .unwrap();
        assert_eq!((core.in_degree, core.out_degree, core.path_count()), (2, 2, 2));
    }

    #[test]
    fn queued_and_total() {
        assert_eq!(queued_fct(1e-3, []), 1e-3);
        let n = 8;
        let v = queued_fct(1e-3, (0..n).map(|_| (0.5, 10e-6)));
        assert!((v - (1e-3 + n as f64 * 5e-6)).abs() < 1e-15);
        assert!((retransmission_probability(0.01, 6) - 0.058_519_850_599).abs() < 1e-9);
        assert_eq!(total_fct(2.0, 10, 0.0, 5.0).unwrap(), 2.0);
        let pr = retransmission_probability(0.05, 6);
        let short = total_fct(1.0, 6, 0.05, GAMMA_SHORT).unwrap() - 1.0;
        let long = total_fct(1.0, 6, 0.05, GAMMA_LONG).unwrap() - 1.0;
        assert!(short > long);
        assert!((short - pr * 4.0).abs() < 1e-12);
        assert!(total_fct(1.0, 1, 1.5, 2.0).is_err());
        assert!(total_fct(1.0, 1, 0.1, 0.5).is_err());
    }

    #[test]
    fn md1k_limits() {
        // a single slot loses what arrives while busy: rho / (1 + rho)
        let r = md1k(0.5, 1).unwrap();
        assert!((r.loss - 0.5 / 1.5).abs() < 1e-12);
        assert!(r.mean_wait.abs() < 1e-12);
        // large buffer at rho < 1 approaches M/D/1: Wq = rho / (2(1 - rho))
        let r = md1k(0.5, 200).unwrap();
        assert!(r.loss < 1e-12);
        assert!((r.mean_wait - 0.5).abs() < 1e-9);
        // overload loses at least the excess
        let r = md1k(1.25, 1001).unwrap();
        assert!((r.loss - 0.2).abs() < 1e-6);
        assert!(md1k(0.0, 3).is_err());
        assert!(md1k(0.5, 0).is_err());
    }

    #[test]
    fn pair_model_evaluates() {
        let t = Topology::new(TopologyParams::default()).unwrap();
        let pm = PairModel::new(&t, NodeId::server(0), NodeId::server(4), PathScheme::Ecmp, None, 0.5).unwrap();
        assert_eq!(pm.set.len(), 8);
        let e = pm.evaluate(6, 12_000.0, |_| 0.0, 0.0, 5.0).unwrap();
        assert_eq!(e.fct_queued, e.fct_base);
        assert_eq!(e.fct_total, e.fct_base);
        let busy = pm.evaluate(6, 12_000.0, |_| 10e-6, 0.01, 5.0).unwrap();
        assert!(busy.fct_queued > e.fct_queued);
        assert!(busy.fct_total > busy.fct_queued);
        let rps = PairModel::new(&t, NodeId::server(0), NodeId::server(4), PathScheme::Rps, None, 0.5).unwrap();
        assert!(rps.evaluate(6, 12_000.0, |_| 0.0, 0.0, 5.0).unwrap().fct_base >= e.fct_base);
    }

    proptest! {
        #[test]
        fn blocking_matches_outcome_oracle(
            probs in prop::collection::vec(0.0f64..=1.0, 1..=12),
            inn in 0usize..14,
            out in 0usize..14,
        ) {
            let node = NodeBlockingModel {
                node: NodeId::server(0),
                in_degree: inn,
                out_degree: out,
                path_probabilities: probs.clone(),
            };
            let got = blocking_probability(&node).unwrap();
            prop_assert!((got - blocking_oracle(&probs, inn, out)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&got));
        }

        #[test]
        fn total_fct_monotone(
            q in 0.0f64..1.0,
            h in 1u32..1000,
            pl in 0.0f64..1.0,
            g in 1.0f64..10.0,
            dq in 0.0f64..1.0,
            dh in 0u32..100,
            dp in 0.0f64..0.5,
            dg in 0.0f64..5.0,
        ) {
            let base = total_fct(q, h, pl, g).unwrap();
            let pl2 = (pl + dp).min(1.0);
            prop_assert!(total_fct(q, h, pl2, g).unwrap() >= base);
            prop_assert!(total_fct(q, h + dh, pl, g).unwrap() >= base);
            prop_assert!(total_fct(q, h, pl, g + dg).unwrap() >= base);
            prop_assert!(total_fct(q + dq, h, pl, g).unwrap() >= base);
        }

        #[test]
        fn queued_fct_monotone_in_wait(
            pbs in prop::collection::vec(0.0f64..=1.0, 1..10),
            waits in prop::collection::vec(0.0f64..1e-3, 10),
            bump in 0.0f64..1e-3,
            which in 0usize..10,
        ) {
            let terms: Vec<(f64, f64)> = pbs.iter().copied().zip(waits.iter().copied()).collect();
            let mut more = terms.clone();
            let i = which % more.len();
            more[i].1 += bump;
            prop_assert!(queued_fct(1.0, more) >= queued_fct(1.0, terms));
        }

        #[test]
        fn retransmission_probability_range(pl in 0.0f64..=1.0, h in 1u32..100_000) {
            let pr = retransmission_probability(pl, h);
            prop_assert!((0.0..=1.0).contains(&pr));
            if pl > 0.0 {
                prop_assert!(retransmission_probability(pl, h.saturating_mul(2)) >= pr);
            }
        }

        #[test]
        fn rps_never_below_ecmp(mut delays in prop::collection::vec(1e-6f64..1e-3, 1..9), y in 1u32..7) {
            delays.sort_by(f64::total_cmp);
            let n = delays.len();
            let e = model(delays.clone(), vec![y; n], PathScheme::Ecmp);
            let r = model(delays, vec![y; n], PathScheme::Rps);
            prop_assert!(fct_rps(&r) >= fct_ecmp(&e) - 1e-15);
        }
    }

    #[test]
    fn retransmission_tends_to_one() {
        assert!(retransmission_probability(0.001, 10_000_000) > 1.0 - 1e-9);
    }
}
