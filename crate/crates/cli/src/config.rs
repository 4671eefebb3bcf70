//! Run configuration: one TOML file, overridable from the command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use flowcast_core::estimators::EstimatorKind;
use flowcast_core::measurement::{default_hv_placement, NoiseSpec, PmuPlacement};
use flowcast_core::netmodel::BusId;
use flowcast_core::nn::TrainConfig;
use flowcast_core::placement::{greedy_dominating_set, greedy_vertex_cover, CandidatePool};
use flowcast_core::rng;
use flowcast_core::scenario::{DatasetSizes, ScenarioParams};
use flowcast_core::NetworkModel;
use serde::{Deserialize, Serialize};

use crate::InputError;

/// Where PMUs go: a named rule or an explicit bus list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlacementSpec {
    Named(String),
    Buses(Vec<u32>),
}

impl PlacementSpec {
    pub fn parse(s: &str) -> anyhow::Result<PlacementSpec> {
        match s {
            "hv" | "greedy-dominating" | "greedy-vertex-cover" => Ok(PlacementSpec::Named(s.to_string())),
            list => {
                let buses = list
                    .split(',')
                    .map(|b| b.trim().parse::<u32>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| {
                        InputError(format!(
                            "placement '{s}' is neither hv, greedy-dominating, greedy-vertex-cover nor a bus list"
                        ))
                    })?;
                Ok(PlacementSpec::Buses(buses))
            }
        }
    }

    pub fn resolve(&self, model: &NetworkModel) -> anyhow::Result<PmuPlacement> {
        Ok(match self {
            PlacementSpec::Named(n) if n == "hv" => default_hv_placement(model),
            PlacementSpec::Named(n) if n == "greedy-dominating" => greedy_dominating_set(model),
            PlacementSpec::Named(n) if n == "greedy-vertex-cover" => greedy_vertex_cover(model),
            PlacementSpec::Named(n) => bail!(InputError(format!("unknown placement '{n}'"))),
            PlacementSpec::Buses(b) => {
                let ids: Vec<BusId> = b.iter().map(|&x| BusId(x)).collect();
                PmuPlacement::new(model, &ids)?
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_layers: usize,
    pub width_factor: f64,
    pub fresh_noise: bool,
    pub n_bin: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            learning_rate: d.learning_rate,
            epochs: d.epochs,
            batch_size: d.batch_size,
            hidden_layers: d.hidden_layers,
            width_factor: d.width_factor,
            fresh_noise: d.fresh_noise,
            n_bin: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub trials: usize,
    pub subset: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            trials: 100,
            subset: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LseSection {
    pub placement: PlacementSpec,
    /// Test rows used for the study.
    pub samples: usize,
    pub gaussian_tve: f64,
}

impl Default for LseSection {
    fn default() -> Self {
        LseSection {
            placement: PlacementSpec::Named("greedy-dominating".into()),
            samples: 1000,
            gaussian_tve: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub models: Vec<EstimatorKind>,
    pub start: PlacementSpec,
    pub steps: usize,
    /// Candidate pool size per step; 0 tries every unplaced bus.
    pub pool: usize,
    pub candidate_epochs: usize,
    /// Full-budget retraining of each adopted placement.
    pub retrain_adopted: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            models: vec![EstimatorKind::Lr, EstimatorKind::Pic],
            start: PlacementSpec::Named("hv".into()),
            steps: 4,
            pool: 8,
            candidate_epochs: 20,
            retrain_adopted: false,
        }
    }
}

impl SweepSection {
    pub fn candidate_pool(&self) -> CandidatePool {
        if self.pool == 0 {
            CandidatePool::All
        } else {
            CandidatePool::TopCoverage(self.pool)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub case: PathBuf,
    pub output: PathBuf,
    pub seed: u64,
    pub placement: PlacementSpec,
    /// `none`, `gaussian` or `gmm`.
    pub noise: String,
    /// RMS TVE of the `gaussian` noise setting.
    pub gaussian_tve: f64,
    pub estimators: Vec<EstimatorKind>,
    pub scenario: ScenarioParams,
    pub dataset: DatasetSizes,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub lse: LseSection,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            case: PathBuf::from("data/case118.m"),
            output: PathBuf::from("out"),
            seed: 1,
            placement: PlacementSpec::Named("hv".into()),
            noise: "gmm".into(),
            gaussian_tve: 0.01,
            estimators: EstimatorKind::LEARNED.to_vec(),
            scenario: ScenarioParams::default(),
            dataset: DatasetSizes::DESK,
            train: TrainSection::default(),
            eval: EvalSection::default(),
            lse: LseSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

/// Independent seeds fanned out from the master seed by label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub scenario: u64,
    pub noise: u64,
    pub init: u64,
    pub shuffle: u64,
    pub trials: u64,
}

impl Seeds {
    pub fn derive(master: u64) -> Seeds {
        Seeds {
            master,
            scenario: rng::derive(master, "scenario"),
            noise: rng::derive(master, "noise"),
            init: rng::derive(master, "init"),
            shuffle: rng::derive(master, "shuffle"),
            trials: rng::derive(master, "trials"),
        }
    }

    /// Noise seed of one pipeline stage (`train`, `eval`, `lse`, `sweep`).
    pub fn noise_for(&self, stage: &str) -> u64 {
        rng::derive(self.noise, stage)
    }
}

impl RunConfig {
    /// Reads `path`; relative paths inside are taken relative to its directory.
    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| InputError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| InputError(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.case, &mut cfg.output] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !self.case.is_file() {
            bail!(InputError(format!("case file not found: {}", self.case.display())));
        }
        self.noise_spec()?;
        self.scenario.validate()?;
        self.train_config().validate()?;
        if self.train.epochs > 0 && self.train.batch_size > self.dataset.train {
            bail!(InputError(format!(
                "batch size {} exceeds the training split ({})",
                self.train.batch_size, self.dataset.train
            )));
        }
        if self.train.n_bin == 0 {
            bail!(InputError("train.n_bin must be >= 1".into()));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::derive(self.seed)
    }

    pub fn noise_spec(&self) -> anyhow::Result<NoiseSpec> {
        let spec: NoiseSpec = self.noise.parse().map_err(|e| InputError(format!("{e}")))?;
        Ok(match spec {
            NoiseSpec::Gaussian { .. } => NoiseSpec::Gaussian { tve: self.gaussian_tve },
            other => other,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        let seeds = self.seeds();
        TrainConfig {
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            hidden_layers: self.train.hidden_layers,
            width_factor: self.train.width_factor,
            seed: seeds.init,
            shuffle_seed: seeds.shuffle,
            fresh_noise: self.train.fresh_noise,
            ..TrainConfig::default()
        }
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.output.join("dataset")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.output.join("models")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.output.join("report")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub fn read_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}
