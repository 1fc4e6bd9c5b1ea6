//! Reference federated methods on the same linear model: Local-Only,
//! FedAvg, FedProx, their fine-tuned variants and Ditto.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::DataShard;
use crate::error::{Error, Result};
use crate::federation::{sample_participants, ParticipationPlan};
use crate::learner::{make_optimizer, Optimizer};
use crate::linalg::{spd_solve, Mat};
use crate::metrics::{evaluate, MetricsSeries, RoundMetrics};
use crate::seed::derive_seed;

/// Ridge added to the normal equations of [`local_exact`].
pub const EXACT_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Local,
    FedAvg,
    FedProx,
    FedAvgFt,
    FedProxFt,
    Ditto,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 6] = [
        BaselineKind::Local,
        BaselineKind::FedAvg,
        BaselineKind::FedProx,
        BaselineKind::FedAvgFt,
        BaselineKind::FedProxFt,
        BaselineKind::Ditto,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Local => "local",
            BaselineKind::FedAvg => "fedavg",
            BaselineKind::FedProx => "fedprox",
            BaselineKind::FedAvgFt => "fedavg_ft",
            BaselineKind::FedProxFt => "fedprox_ft",
            BaselineKind::Ditto => "ditto",
        }
    }

    fn proximal(self) -> bool {
        matches!(self, BaselineKind::FedProx | BaselineKind::FedProxFt)
    }

    fn fine_tuned(self) -> bool {
        matches!(self, BaselineKind::FedAvgFt | BaselineKind::FedProxFt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub lr: f64,
    pub optimizer: String,
    /// `None` trains on the full local set each step.
    pub batch_size: Option<usize>,
    pub mu: f64,
    pub lambda_ditto: f64,
    pub ft_epochs: usize,
    pub participation: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            rounds: 500,
            local_epochs: 2,
            lr: 0.01,
            optimizer: "adam".into(),
            batch_size: None,
            mu: 0.01,
            lambda_ditto: 1.0,
            ft_epochs: 20,
            participation: 1.0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("baseline lr must be positive, got {}", self.lr)));
        }
        if self.local_epochs == 0 {
            return Err(Error::Config("local_epochs must be at least 1".into()));
        }
        if !(self.mu >= 0.0) || !(self.lambda_ditto >= 0.0) {
            return Err(Error::Config("mu and lambda_ditto must be non-negative".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::Config(format!(
                "participation must lie in (0, 1], got {}",
                self.participation
            )));
        }
        make_optimizer(&self.optimizer, self.lr).map(|_| ())
    }
}

#[derive(Debug, Clone)]
pub struct BaselineRun {
    /// Model used by each client for evaluation.
    pub models: Vec<Vec<f64>>,
    pub series: MetricsSeries,
}

/// Closed-form local least squares with a tiny ridge.
pub fn local_exact(shard: &DataShard) -> Result<Vec<f64>> {
    let gram = shard.x_train.gram().add_diag(EXACT_JITTER);
    spd_solve(&gram, &shard.x_train.tmatvec(&shard.y_train)?)
}

/// Gradient of the mean squared error over `rows` (all rows when `None`).
fn mse_grad(x: &Mat, y: &[f64], v: &[f64], rows: Option<&[usize]>) -> Vec<f64> {
    let k = v.len();
    let mut g = vec![0.0; k];
    let mut add_row = |i: usize| {
        let r = x.row(i);
        let resid: f64 = r.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() - y[i];
        for j in 0..k {
            g[j] += resid * r[j];
        }
    };
    let n = match rows {
        Some(rs) => {
            rs.iter().for_each(|&i| add_row(i));
            rs.len()
        }
        None => {
            (0..y.len()).for_each(&mut add_row);
            y.len()
        }
    };
    g.iter().map(|x| 2.0 * x / n as f64).collect()
}

/// Proximal pull `coeff · (v − anchor)` added to the data gradient.
#[derive(Debug, Clone, Copy)]
struct Prox<'a> {
    anchor: &'a [f64],
    coeff: f64,
}

#[allow(clippy::too_many_arguments)]
fn train_local(
    shard: &DataShard,
    v: &mut [f64],
    prox: Option<Prox<'_>>,
    epochs: usize,
    batch: Option<usize>,
    opt: &mut dyn Optimizer,
    seed: u64,
) -> Result<()> {
    let n = shard.y_train.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..epochs {
        let batches: Vec<Option<Vec<usize>>> = match batch {
            Some(b) if b < n => {
                order.shuffle(&mut rng);
                order.chunks(b).map(|c| Some(c.to_vec())).collect()
            }
            _ => vec![None],
        };
        for rows in batches {
            let mut g = mse_grad(&shard.x_train, &shard.y_train, v, rows.as_deref());
            if let Some(p) = prox {
                for j in 0..g.len() {
                    g[j] += p.coeff * (v[j] - p.anchor[j]);
                }
            }
            opt.step(v, &g)?;
        }
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

fn round_plan(clients: usize, fraction: f64, seed: u64, round: usize) -> Result<ParticipationPlan> {
    if fraction >= 1.0 {
        Ok(ParticipationPlan::full(clients))
    } else {
        sample_participants(clients, fraction, derive_seed(seed, 1000 + round as u64))
    }
}

fn batch_seed(seed: u64, client: usize, round: usize) -> u64 {
    derive_seed(seed, ((client as u64) << 32) | round as u64)
}

fn check_shards(shards: &[DataShard]) -> Result<usize> {
    let first = shards.first().ok_or(Error::EmptyData("baseline shards"))?;
    let k = first.dim();
    for s in shards {
        if s.dim() != k {
            return Err(Error::DimensionMismatch {
                context: "baseline shards",
                expected: k,
                got: s.dim(),
            });
        }
    }
    Ok(k)
}

/// Runs `kind` for `cfg.rounds` rounds, evaluating after each round. Models
/// start at zero.
pub fn run_baseline(kind: BaselineKind, cfg: &BaselineConfig, shards: &[DataShard], seed: u64) -> Result<BaselineRun> {
    cfg.validate()?;
    let k = check_shards(shards)?;
    let m = shards.len();
    let fresh = || make_optimizer(&cfg.optimizer, cfg.lr);

    let mut global = vec![0.0; k];
    let mut personal = vec![vec![0.0; k]; m];
    let mut global_opts = (0..m).map(|_| fresh()).collect::<Result<Vec<_>>>()?;
    let mut personal_opts = (0..m).map(|_| fresh()).collect::<Result<Vec<_>>>()?;

    let models_of = |global: &[f64], personal: &[Vec<f64>]| -> Vec<Vec<f64>> {
        match kind {
            BaselineKind::Local | BaselineKind::Ditto => personal.to_vec(),
            _ => vec![global.to_vec(); m],
        }
    };

    let mut series = Vec::with_capacity(cfg.rounds + 1);
    series.push(RoundMetrics {
        round: 0,
        epochs: 0,
        eval: evaluate(shards, &models_of(&global, &personal))?,
        lagrangian: None,
        diverged: false,
    });

    let mut diverged = false;
    for round in 1..=cfg.rounds {
        if !diverged {
            let outcome = run_one_round(
                kind,
                cfg,
                shards,
                seed,
                round,
                &mut global,
                &mut personal,
                &mut global_opts,
                &mut personal_opts,
            );
            match outcome {
                Ok(()) => {}
                Err(Error::NonFinite) => diverged = true,
                Err(e) => return Err(e),
            }
        }
        let mut eval = evaluate(shards, &models_of(&global, &personal))?;
        if diverged {
            eval = crate::metrics::Evaluation::diverged(m);
        }
        diverged |= !eval.is_finite();
        series.push(RoundMetrics {
            round,
            epochs: round * cfg.local_epochs,
            eval,
            lagrangian: None,
            diverged,
        });
    }

    let mut models = models_of(&global, &personal);
    if kind.fine_tuned() && !diverged {
        for (i, (s, v)) in shards.iter().zip(models.iter_mut()).enumerate() {
            let mut opt = fresh()?;
            let ft_seed = derive_seed(seed, 0xF1_0000 + i as u64);
            if let Err(e) = train_local(s, v, None, cfg.ft_epochs, cfg.batch_size, opt.as_mut(), ft_seed) {
                match e {
                    Error::NonFinite => diverged = true,
                    other => return Err(other),
                }
            }
        }
        if let Some(last) = series.last_mut() {
            last.eval = if diverged {
                crate::metrics::Evaluation::diverged(m)
            } else {
                evaluate(shards, &models)?
            };
            last.diverged = diverged || !last.eval.is_finite();
        }
    }
    Ok(BaselineRun { models, series })
}

#[allow(clippy::too_many_arguments)]
fn run_one_round(
    kind: BaselineKind,
    cfg: &BaselineConfig,
    shards: &[DataShard],
    seed: u64,
    round: usize,
    global: &mut Vec<f64>,
    personal: &mut [Vec<f64>],
    global_opts: &mut [Box<dyn Optimizer>],
    personal_opts: &mut [Box<dyn Optimizer>],
) -> Result<()> {
    let m = shards.len();
    if kind == BaselineKind::Local {
        for i in 0..m {
            train_local(
                &shards[i],
                &mut personal[i],
                None,
                cfg.local_epochs,
                cfg.batch_size,
                personal_opts[i].as_mut(),
                batch_seed(seed, i, round),
            )?;
        }
        return Ok(());
    }

    let plan = round_plan(m, cfg.participation, seed, round)?;
    let received = global.clone();
    let mut weighted = vec![0.0; global.len()];
    let mut total = 0.0;
    for &i in &plan.active {
        let mut v = received.clone();
        let prox = kind.proximal().then_some(Prox {
            anchor: &received,
            coeff: cfg.mu,
        });
        train_local(
            &shards[i],
            &mut v,
            prox,
            cfg.local_epochs,
            cfg.batch_size,
            global_opts[i].as_mut(),
            batch_seed(seed, i, round),
        )?;
        let n = shards[i].y_train.len() as f64;
        for (acc, x) in weighted.iter_mut().zip(&v) {
            *acc += n * x;
        }
        total += n;

        if kind == BaselineKind::Ditto {
            train_local(
                &shards[i],
                &mut personal[i],
                Some(Prox {
                    anchor: &received,
                    coeff: 2.0 * cfg.lambda_ditto,
                }),
                cfg.local_epochs,
                cfg.batch_size,
                personal_opts[i].as_mut(),
                batch_seed(seed, i, round),
            )?;
        }
    }
    *global = weighted.iter().map(|x| x / total).collect();
    Ok(())
}
