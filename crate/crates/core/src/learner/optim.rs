//! First-order optimizers over flat parameter vectors, and per-party
//! optimizer state over the learnable-parameter layout.

use crate::error::{Error, Result};
use crate::params::{LearnableParams, ParamCoord, ParamGradients, ParamLayout};

pub trait Optimizer: std::fmt::Debug + Send {
    fn name(&self) -> &'static str;
    /// Updates `params` in place. The first call fixes the state size.
    fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()>;
    fn box_clone(&self) -> Box<dyn Optimizer>;
}

impl Clone for Box<dyn Optimizer> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

fn check_len(params: &[f64], grads: &[f64], state: Option<usize>) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::LayoutMismatch(format!(
            "{} parameters, {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if let Some(n) = state {
        if n != params.len() {
            return Err(Error::LayoutMismatch(format!(
                "optimizer state holds {n} entries, got {}",
                params.len()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gd {
    pub lr: f64,
}

impl Optimizer for Gd {
    fn name(&self) -> &'static str {
        "gd"
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_len(params, grads, None)?;
        for (p, g) in params.iter_mut().zip(grads) {
            *p -= self.lr * g;
        }
        Ok(())
    }

    fn box_clone(&self) -> Box<dyn Optimizer> {
        Box::new(self.clone())
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        let state = (self.step_count > 0).then_some(self.first_moment.len());
        check_len(params, grads, state)?;
        if self.step_count == 0 {
            self.first_moment = vec![0.0; params.len()];
            self.second_moment = vec![0.0; params.len()];
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        Ok(())
    }

    fn box_clone(&self) -> Box<dyn Optimizer> {
        Box::new(self.clone())
    }
}

type OptimizerCtor = fn(f64) -> Box<dyn Optimizer>;

const OPTIMIZERS: &[(&str, OptimizerCtor)] = &[
    ("adam", |lr| Box::new(Adam::new(lr))),
    ("gd", |lr| Box::new(Gd { lr })),
];

pub fn optimizer_names() -> Vec<&'static str> {
    OPTIMIZERS.iter().map(|(n, _)| *n).collect()
}

/// Fresh optimizer registered under `name`.
pub fn make_optimizer(name: &str, lr: f64) -> Result<Box<dyn Optimizer>> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    OPTIMIZERS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, ctor)| ctor(lr))
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown optimizer `{name}` (known: {})",
                optimizer_names().join(", ")
            ))
        })
}

/// Independent optimizer state for every party: the client-side block
/// (Λ, ρ) of each client and the server-side block (p, γ) kept per client.
/// Updating a subset of clients leaves the others' parameters and state
/// untouched.
#[derive(Debug, Clone)]
pub struct ParamOptimizer {
    client: Vec<Box<dyn Optimizer>>,
    server: Vec<Box<dyn Optimizer>>,
    client_coords: Vec<Vec<ParamCoord>>,
    server_coords: Vec<Vec<ParamCoord>>,
    shape: crate::params::ParamShape,
}

impl ParamOptimizer {
    pub fn new(name: &str, lr: f64, params: &LearnableParams) -> Result<Self> {
        let shape = params.shape();
        let proto = make_optimizer(name, lr)?;
        Ok(ParamOptimizer {
            client: vec![proto.clone(); shape.clients],
            server: vec![proto; shape.clients],
            client_coords: (0..shape.clients)
                .map(|i| params.party_coords(i, true))
                .collect(),
            server_coords: (0..shape.clients)
                .map(|i| params.party_coords(i, false))
                .collect(),
            shape,
        })
    }

    /// One update of the parameters owned by `clients` (client side and
    /// their server-side entries).
    pub fn step(
        &mut self,
        params: &mut LearnableParams,
        grads: &ParamGradients,
        clients: &[usize],
    ) -> Result<()> {
        params.check_congruent(grads)?;
        if params.shape() != self.shape {
            return Err(Error::LayoutMismatch(format!(
                "optimizer built for {:?}, got {:?}",
                self.shape,
                params.shape()
            )));
        }
        for &i in clients {
            if i >= self.shape.clients {
                return Err(Error::LayoutMismatch(format!("client {i} out of range")));
            }
            for (opt, coords) in [
                (&mut self.client[i], &self.client_coords[i]),
                (&mut self.server[i], &self.server_coords[i]),
            ] {
                let mut values: Vec<f64> = coords.iter().map(|&c| params.get(c)).collect();
                let g: Vec<f64> = coords.iter().map(|&c| grads.get(c)).collect();
                opt.step(&mut values, &g)?;
                for (&c, v) in coords.iter().zip(values) {
                    params.set(c, v);
                }
            }
        }
        Ok(())
    }

    pub fn step_all(&mut self, params: &mut LearnableParams, grads: &ParamGradients) -> Result<()> {
        let all: Vec<usize> = (0..self.shape.clients).collect();
        self.step(params, grads, &all)
    }
}
