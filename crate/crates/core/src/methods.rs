//! Training methods behind a common trait, selected by name.

use crate::baselines::{run_baseline, BaselineKind};
use crate::config::ExperimentConfig;
use crate::datagen::DataShard;
use crate::error::{Error, Result};
use crate::federation::{run_experiment, ExperimentRun};
use crate::metrics::MetricsSeries;

pub struct MethodContext<'a> {
    pub shards: &'a [DataShard],
    pub config: &'a ExperimentConfig,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct MethodResult {
    pub series: MetricsSeries,
    pub models: Vec<Vec<f64>>,
    /// Learned state of the unrolled network, when the method has one.
    pub unrolled: Option<ExperimentRun>,
}

impl MethodResult {
    pub fn final_test_rmse(&self) -> f64 {
        self.series.last().map_or(f64::NAN, |m| m.eval.mean_test())
    }

    pub fn diverged(&self) -> bool {
        self.series.last().is_some_and(|m| m.diverged)
    }
}

pub trait Method: Send + Sync {
    fn name(&self) -> &'static str;
    fn run(&self, ctx: &MethodContext<'_>) -> Result<MethodResult>;
}

pub struct Learn2pFed;

impl Method for Learn2pFed {
    fn name(&self) -> &'static str {
        "learn2pfed"
    }

    fn run(&self, ctx: &MethodContext<'_>) -> Result<MethodResult> {
        let cfg = ctx.config.learn2pfed_config()?;
        let run = run_experiment(ctx.shards, &cfg, ctx.seed)?;
        Ok(MethodResult {
            series: run.series.clone(),
            models: run.final_models().to_vec(),
            unrolled: Some(run),
        })
    }
}

pub struct Baseline(pub BaselineKind);

impl Method for Baseline {
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn run(&self, ctx: &MethodContext<'_>) -> Result<MethodResult> {
        let run = run_baseline(self.0, &ctx.config.baseline_config(), ctx.shards, ctx.seed)?;
        Ok(MethodResult {
            series: run.series,
            models: run.models,
            unrolled: None,
        })
    }
}

pub struct MethodRegistry {
    methods: Vec<Box<dyn Method>>,
}

impl Default for MethodRegistry {
    fn default() -> Self {
        let mut reg = MethodRegistry { methods: Vec::new() };
        reg.methods.push(Box::new(Learn2pFed));
        for kind in BaselineKind::ALL {
            reg.methods.push(Box::new(Baseline(kind)));
        }
        reg
    }
}

impl MethodRegistry {
    pub fn empty() -> Self {
        MethodRegistry { methods: Vec::new() }
    }

    pub fn register(&mut self, method: Box<dyn Method>) -> Result<()> {
        if self.methods.iter().any(|m| m.name() == method.name()) {
            return Err(Error::Config(format!("method `{}` registered twice", method.name())));
        }
        self.methods.push(method);
        Ok(())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.methods.iter().map(|m| m.name()).collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn Method> {
        self.methods
            .iter()
            .find(|m| m.name() == name)
            .map(|m| m.as_ref())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method `{name}` (known: {})",
                    self.names().join(", ")
                ))
            })
    }
}
