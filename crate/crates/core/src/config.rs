//! Experiment configuration, read from TOML with one section per component.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::baselines::BaselineConfig;
use crate::datagen::SettingSpec;
use crate::error::{Error, Result};
use crate::federation::Learn2pFedConfig;
use crate::learner::BoundaryPolicy;
use crate::seed::derive_seed;
use crate::unrolled::{DualStep, LossScale, VUpdate};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub methods: Vec<String>,
    pub setting: u8,
    pub clients: usize,
    pub samples_per_client: usize,
    pub noise_std: f64,
    pub train_ratio: f64,
    pub seed: u64,
    pub trials: usize,
    pub rounds: usize,
    pub out_dir: PathBuf,
    pub transcript: bool,
    pub diagnostics: bool,
    pub per_client_rows: bool,
    /// Record real wall-clock times; off keeps the CSV byte-reproducible.
    pub timing: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            methods: vec!["learn2pfed".into()],
            setting: 1,
            clients: 10,
            samples_per_client: 200,
            noise_std: 0.1,
            train_ratio: 0.9,
            seed: 0,
            trials: 1,
            rounds: 500,
            out_dir: PathBuf::from("results"),
            transcript: false,
            diagnostics: false,
            per_client_rows: false,
            timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Learn2pFedSection {
    pub layers: usize,
    pub epochs_per_round: usize,
    pub lr: f64,
    pub optimizer: String,
    pub policy: String,
    pub tied: bool,
    pub participation: f64,
    /// `penalty` or `scaled`.
    pub dual_step: String,
    /// `linear` or `gradient`.
    pub v_update: String,
    pub v_lr: f64,
    pub v_steps: usize,
    pub v_batch: Option<usize>,
    /// `mean` or `sum`.
    pub loss_scale: String,
}

impl Default for Learn2pFedSection {
    fn default() -> Self {
        Learn2pFedSection {
            layers: 10,
            epochs_per_round: 2,
            lr: 0.01,
            optimizer: "adam".into(),
            policy: "exact".into(),
            tied: false,
            participation: 1.0,
            dual_step: "penalty".into(),
            v_update: "linear".into(),
            v_lr: 0.01,
            v_steps: 5,
            v_batch: None,
            loss_scale: "mean".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub local_epochs: usize,
    pub lr: f64,
    pub optimizer: String,
    pub batch_size: Option<usize>,
    pub mu: f64,
    pub lambda_ditto: f64,
    pub ft_epochs: usize,
    pub participation: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        let d = BaselineConfig::default();
        BaselineSection {
            local_epochs: d.local_epochs,
            lr: d.lr,
            optimizer: d.optimizer,
            batch_size: d.batch_size,
            mu: d.mu,
            lambda_ditto: d.lambda_ditto,
            ft_epochs: d.ft_epochs,
            participation: d.participation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub learn2pfed: Learn2pFedSection,
    pub baselines: BaselineSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Checks every field before any computation starts.
    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if e.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        self.setting_spec(0).validate().map_err(|err| Error::Config(err.to_string()))?;
        self.learn2pfed_config()?.validate()?;
        self.baseline_config().validate()?;
        Ok(())
    }

    /// Seed of trial `trial`; trials are numbered from 0.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.experiment.seed.wrapping_add(trial as u64)
    }

    pub fn setting_spec(&self, trial: usize) -> SettingSpec {
        let e = &self.experiment;
        SettingSpec {
            setting: e.setting,
            clients: e.clients,
            samples_per_client: e.samples_per_client,
            noise_std: e.noise_std,
            train_ratio: e.train_ratio,
            seed: derive_seed(self.trial_seed(trial), 10),
        }
    }

    pub fn learn2pfed_config(&self) -> Result<Learn2pFedConfig> {
        let s = &self.learn2pfed;
        let policy: BoundaryPolicy = s.policy.parse()?;
        let dual_step = match s.dual_step.as_str() {
            "penalty" => DualStep::Penalty,
            "scaled" => DualStep::Scaled,
            other => return Err(Error::Config(format!("unknown dual_step `{other}`"))),
        };
        let v_update = match s.v_update.as_str() {
            "linear" => VUpdate::Linear,
            "gradient" => VUpdate::Gradient {
                lr: s.v_lr,
                steps: s.v_steps,
                batch: s.v_batch,
            },
            other => return Err(Error::Config(format!("unknown v_update `{other}`"))),
        };
        let loss_scale = match s.loss_scale.as_str() {
            "mean" => LossScale::Mean,
            "sum" => LossScale::Sum,
            other => return Err(Error::Config(format!("unknown loss_scale `{other}`"))),
        };
        Ok(Learn2pFedConfig {
            layers: s.layers,
            rounds: self.experiment.rounds,
            epochs_per_round: s.epochs_per_round,
            lr: s.lr,
            optimizer: s.optimizer.clone(),
            policy,
            tied: s.tied,
            participation: s.participation,
            v_update,
            dual_step,
            loss_scale,
            keep_transcript: self.experiment.transcript,
        })
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        let s = &self.baselines;
        BaselineConfig {
            rounds: self.experiment.rounds,
            local_epochs: s.local_epochs,
            lr: s.lr,
            optimizer: s.optimizer.clone(),
            batch_size: s.batch_size,
            mu: s.mu,
            lambda_ditto: s.lambda_ditto,
            ft_epochs: s.ft_epochs,
            participation: s.participation,
        }
    }
}
