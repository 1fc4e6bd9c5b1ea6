use super::messages::Transcript;
use super::participation::{sample_participants, ParticipationPlan};
use super::round::Federation;
use crate::datagen::DataShard;
use crate::diagnostics::lagrangian;
use crate::error::{Error, Result};
use crate::learner::{BoundaryPolicy, ParamOptimizer};
use crate::metrics::{evaluate, Evaluation, MetricsSeries, RoundMetrics};
use crate::params::{LearnableParams, ParamShape};
use crate::seed::derive_seed;
use crate::unrolled::{CellState, DualStep, ForwardConfig, LossScale, NetworkData, Tape, VUpdate};

#[derive(Debug, Clone, PartialEq)]
pub struct Learn2pFedConfig {
    pub layers: usize,
    pub rounds: usize,
    pub epochs_per_round: usize,
    pub lr: f64,
    pub optimizer: String,
    pub policy: BoundaryPolicy,
    pub tied: bool,
    pub participation: f64,
    pub v_update: VUpdate,
    pub dual_step: DualStep,
    pub loss_scale: LossScale,
    pub keep_transcript: bool,
}

impl Default for Learn2pFedConfig {
    fn default() -> Self {
        Learn2pFedConfig {
            layers: 10,
            rounds: 500,
            epochs_per_round: 2,
            lr: 0.01,
            optimizer: "adam".into(),
            policy: BoundaryPolicy::Exact,
            tied: false,
            participation: 1.0,
            v_update: VUpdate::Linear,
            dual_step: DualStep::Penalty,
            loss_scale: LossScale::Mean,
            keep_transcript: false,
        }
    }
}

impl Learn2pFedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("layers must be at least 1".into()));
        }
        if self.epochs_per_round == 0 {
            return Err(Error::Config("epochs_per_round must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::Config(format!(
                "participation must lie in (0, 1], got {}",
                self.participation
            )));
        }
        if let VUpdate::Gradient { lr, steps, batch } = self.v_update {
            if !(lr > 0.0) || steps == 0 || batch == Some(0) {
                return Err(Error::Config("gradient v-update needs lr > 0, steps > 0, batch > 0".into()));
            }
        }
        Ok(())
    }
}

/// Network data built from the training side of each shard.
pub fn network_data(shards: &[DataShard], scale: LossScale) -> Result<NetworkData> {
    let pairs: Vec<_> = shards
        .iter()
        .map(|s| (s.x_train.clone(), s.y_train.clone()))
        .collect();
    NetworkData::from_pairs(&pairs, scale)
}

/// Everything produced by a training run.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub series: MetricsSeries,
    pub params: LearnableParams,
    pub state: CellState,
    pub data: NetworkData,
    pub last_tape: Option<Tape>,
    pub transcript: Option<Transcript>,
}

impl ExperimentRun {
    pub fn final_models(&self) -> &[Vec<f64>] {
        &self.state.v
    }
}

fn is_numeric_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::NonFinite
            | Error::NonFiniteInput(_)
            | Error::NonFiniteGradient { .. }
            | Error::NotPd { .. }
            | Error::DegenerateWeights(_)
    )
}

pub fn build_federation(shards: &[DataShard], cfg: &Learn2pFedConfig, seed: u64) -> Result<Federation> {
    cfg.validate()?;
    let data = network_data(shards, cfg.loss_scale)?;
    let shape = ParamShape::new(data.num_clients(), cfg.layers, data.dim(), cfg.tied);
    let params = LearnableParams::init_default(shape);
    let state = CellState::init_random(data.num_clients(), data.dim(), derive_seed(seed, 1));
    let optimizer = ParamOptimizer::new(&cfg.optimizer, cfg.lr, &params)?;
    let forward = ForwardConfig {
        depth: cfg.layers,
        v_update: cfg.v_update,
        dual_step: cfg.dual_step,
        batch_seed: derive_seed(seed, 2),
    };
    let mut fed = Federation::new(data, params, state, optimizer, forward, cfg.policy);
    if cfg.keep_transcript {
        fed.record_transcript();
    }
    Ok(fed)
}

/// `rounds × epochs_per_round` passes with evaluation after every round.
/// A numerical blow-up ends training; the remaining rounds are recorded as
/// diverged.
pub fn run_experiment(shards: &[DataShard], cfg: &Learn2pFedConfig, seed: u64) -> Result<ExperimentRun> {
    let mut fed = build_federation(shards, cfg, seed)?;
    let m = fed.data.num_clients();
    let depth = cfg.layers;
    let mut series = Vec::with_capacity(cfg.rounds + 1);
    series.push(RoundMetrics {
        round: 0,
        epochs: 0,
        eval: evaluate(shards, &fed.state.v)?,
        lagrangian: None,
        diverged: false,
    });

    let mut diverged = false;
    for round in 1..=cfg.rounds {
        if diverged {
            series.push(RoundMetrics {
                round,
                epochs: round * cfg.epochs_per_round,
                eval: Evaluation::diverged(m),
                lagrangian: None,
                diverged: true,
            });
            continue;
        }
        let plan = if cfg.participation >= 1.0 {
            ParticipationPlan::full(m)
        } else {
            sample_participants(m, cfg.participation, derive_seed(seed, 1000 + round as u64))?
        };
        for epoch in 1..=cfg.epochs_per_round {
            fed.cfg.batch_seed = derive_seed(seed, ((round as u64) << 16) | epoch as u64);
            match fed.run_round(&plan, round, epoch) {
                Ok(_) => {}
                Err(e) if is_numeric_failure(&e) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let eval = if diverged {
            Evaluation::diverged(m)
        } else {
            evaluate(shards, &fed.state.v)?
        };
        let lag = if diverged {
            None
        } else {
            lagrangian(&fed.state, &fed.data, &fed.params, depth).ok()
        };
        diverged |= !eval.is_finite();
        series.push(RoundMetrics {
            round,
            epochs: round * cfg.epochs_per_round,
            eval,
            lagrangian: lag,
            diverged,
        });
    }

    Ok(ExperimentRun {
        series,
        params: fed.params.clone(),
        state: fed.state.clone(),
        last_tape: fed.last_tape().cloned(),
        transcript: fed.transcript().cloned(),
        data: fed.data,
    })
}
