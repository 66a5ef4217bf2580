//! Sweep configuration, read from TOML. Every field has a default, so an
//! empty document describes the reference experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analytic::{GAMMA_LONG, GAMMA_SHORT};
use crate::control_plane::ControlParams;
use crate::engine::{EngineParams, Scheme};
use crate::error::{Error, Result};
use crate::topology::TopologyParams;
use crate::traffic::WorkloadParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisParams {
    pub gamma_short: f64,
    pub gamma_long: f64,
    /// Overrides the per-path occurrence probability used for spraying.
    pub rps_path_probability: Option<f64>,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self {
            gamma_short: GAMMA_SHORT,
            gamma_long: GAMMA_LONG,
            rps_path_probability: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schemes: Vec<Scheme>,
    pub loads: Vec<f64>,
    /// Each seed drives the workload and the engine of one run per cell.
    pub seeds: Vec<u64>,
    /// Concurrent runs; 0 uses every available core.
    pub parallelism: usize,
    pub output_dir: PathBuf,
    pub topology: TopologyParams,
    /// `load` and `seed` are replaced per run.
    pub workload: WorkloadParams,
    pub control: ControlParams,
    pub engine: EngineParams,
    pub analysis: AnalysisParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            schemes: Scheme::ALL.to_vec(),
            loads: (1..=8).map(|i| i as f64 / 10.0).collect(),
            seeds: (1..=5).collect(),
            parallelism: 0,
            output_dir: PathBuf::from("out"),
            topology: TopologyParams::default(),
            workload: WorkloadParams::default(),
            control: ControlParams::default(),
            engine: EngineParams::default(),
            analysis: AnalysisParams::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::config("schemes", "must not be empty"));
        }
        if self.loads.is_empty() {
            return Err(Error::config("loads", "must not be empty"));
        }
        if let Some(l) = self.loads.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::config("loads", format!("{l} is not a positive load")));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must not be empty"));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::config("seeds", "contains duplicates"));
        }
        self.topology.validate()?;
        self.workload.validate()?;
        self.control.validate()?;
        if self.engine.max_sim_time.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::config("engine.max_sim_time", "must be positive"));
        }
        for (field, g) in [
            ("analysis.gamma_short", self.analysis.gamma_short),
            ("analysis.gamma_long", self.analysis.gamma_long),
        ] {
            if !(g.is_finite() && g >= 1.0) {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if let Some(p) = self.analysis.rps_path_probability {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config("analysis.rps_path_probability", "must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Workload parameters of one (load, seed) cell.
    pub fn workload_for(&self, load: f64, seed: u64) -> WorkloadParams {
        WorkloadParams {
            load,
            seed,
            ..self.workload.clone()
        }
    }

    pub fn gamma(&self, class: crate::traffic::FlowClass) -> f64 {
        match class {
            crate::traffic::FlowClass::Short => self.analysis.gamma_short,
            crate::traffic::FlowClass::Long => self.analysis.gamma_long,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_reference() {
        let cfg = ScenarioConfig::from_toml("").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!(cfg.loads.len(), 8);
        assert_eq!(cfg.workload.flow_count, Some(50_000));
        assert_eq!(cfg.topology.queue_capacity_packets(), 1000);
    }

    #[test]
    fn round_trip() {
        let mut cfg = ScenarioConfig::default();
        cfg.schemes = vec![Scheme::Ecmp];
        cfg.loads = vec![0.1];
        cfg.seeds = vec![1];
        cfg.control.sampling = crate::control_plane::SamplingMode::EveryNth { n: 50 };
        let back = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn bad_fields_are_named() {
        let field = |text: &str| match ScenarioConfig::from_toml(text) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        };
        assert_eq!(field("loads = []"), "loads");
        assert_eq!(field("seeds = [1, 1]"), "seeds");
        assert_eq!(field("[analysis]\ngamma_short = 0.5"), "analysis.gamma_short");
        assert_eq!(field("[workload]\nshort_fraction = 2.0"), "workload.short_fraction");
        assert_eq!(field("[control]\ncontrol_latency = -1.0"), "control.control_latency");
        assert!(matches!(ScenarioConfig::from_toml("bogus = 1"), Err(Error::Toml(_))));
        assert!(matches!(
            ScenarioConfig::from_toml("schemes = [\"spray\"]"),
            Err(Error::Toml(_))
        ));
    }
}
