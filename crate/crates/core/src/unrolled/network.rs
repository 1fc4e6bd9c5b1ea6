use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{
    client_message, grad_step_trajectory, phi1_dual, phi3_aux, phi4_global, v_anchor,
    Contribution, NormalEquations,
};
use super::tape::{CellRecord, ClientRecord, ServerWeight, Tape, VStepRecord};
use crate::error::{Error, Result};
use crate::linalg::{sse_loss, DiagPD, Mat};
use crate::params::{clamp_penalty, LearnableParams, ParamLayout};

/// How the local loss is scaled inside the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossScale {
    /// `F = ‖Xv − Y‖²`.
    Sum,
    /// `F = ‖Xv − Y‖² / n` (mean squared error), realised by feeding
    /// `X/√n, Y/√n` to the layers.
    #[default]
    Mean,
}

/// Multiplier on the consensus residual in the dual layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DualStep {
    /// `α + ρ(z − v + w)`.
    #[default]
    Penalty,
    /// `α + (z − v + w)`: the scaled-form multiplier step that matches the
    /// `ρ/2‖z − v + w + α‖²` penalty of the augmented Lagrangian.
    Scaled,
}

impl DualStep {
    pub fn multiplier(self, rho: f64) -> f64 {
        match self {
            DualStep::Penalty => rho,
            DualStep::Scaled => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VUpdate {
    /// Exact minimiser via `(XᵀX + ρI)⁻¹`, full local data.
    Linear,
    /// `steps` gradient steps on the proximal objective, optionally on a
    /// mini-batch of `batch` rows drawn fresh for every cell.
    Gradient {
        lr: f64,
        steps: usize,
        batch: Option<usize>,
    },
}

impl VUpdate {
    pub fn gradient_default() -> Self {
        VUpdate::Gradient {
            lr: 0.01,
            steps: 5,
            batch: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardConfig {
    pub depth: usize,
    pub v_update: VUpdate,
    pub dual_step: DualStep,
    /// Seeds mini-batch sampling in gradient mode.
    pub batch_seed: u64,
}

impl ForwardConfig {
    pub fn linear(depth: usize) -> Self {
        ForwardConfig {
            depth,
            v_update: VUpdate::Linear,
            dual_step: DualStep::Penalty,
            batch_seed: 0,
        }
    }

    pub fn with_dual_step(mut self, dual_step: DualStep) -> Self {
        self.dual_step = dual_step;
        self
    }
}

/// One client's local data as seen by the layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    pub x: Mat,
    pub y: Vec<f64>,
    pub normal: NormalEquations,
}

impl ClientData {
    pub fn new(x: Mat, y: Vec<f64>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "ClientData::new",
                expected: x.rows(),
                got: y.len(),
            });
        }
        if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("ClientData::new"));
        }
        let normal = NormalEquations::new(&x, &y)?;
        Ok(ClientData { x, y, normal })
    }

    pub fn with_scale(x: &Mat, y: &[f64], scale: LossScale) -> Result<Self> {
        match scale {
            LossScale::Sum => ClientData::new(x.clone(), y.to_vec()),
            LossScale::Mean => {
                if y.is_empty() {
                    return Err(Error::EmptyData("ClientData::with_scale"));
                }
                let s = 1.0 / (y.len() as f64).sqrt();
                ClientData::new(x.scaled(s), y.iter().map(|v| v * s).collect())
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn loss(&self, v: &[f64]) -> Result<f64> {
        sse_loss(&self.x, v, &self.y)
    }

    /// Normal equations restricted to `rows`, rescaled by `n/|rows|` so the
    /// batch loss is an unbiased estimate of the full loss.
    pub fn batch_normal(&self, rows: &[usize]) -> Result<NormalEquations> {
        let xb = self.x.select_rows(rows);
        let yb: Vec<f64> = rows.iter().map(|&i| self.y[i]).collect();
        let mut ne = NormalEquations::new(&xb, &yb)?;
        let s = self.y.len() as f64 / rows.len() as f64;
        ne.gram = ne.gram.scaled(s);
        ne.xty.iter_mut().for_each(|v| *v *= s);
        Ok(ne)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkData {
    pub clients: Vec<ClientData>,
}

impl NetworkData {
    pub fn new(clients: Vec<ClientData>) -> Result<Self> {
        let k = clients.first().ok_or(Error::EmptyData("NetworkData"))?.dim();
        for c in &clients {
            if c.dim() != k {
                return Err(Error::DimensionMismatch {
                    context: "NetworkData",
                    expected: k,
                    got: c.dim(),
                });
            }
        }
        Ok(NetworkData { clients })
    }

    pub fn from_pairs(pairs: &[(Mat, Vec<f64>)], scale: LossScale) -> Result<Self> {
        NetworkData::new(
            pairs
                .iter()
                .map(|(x, y)| ClientData::with_scale(x, y, scale))
                .collect::<Result<_>>()?,
        )
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn dim(&self) -> usize {
        self.clients[0].dim()
    }
}

/// Per-client `v, z, α` and the global `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub v: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    pub w: Vec<f64>,
}

impl CellState {
    pub fn zeros(clients: usize, dim: usize) -> Self {
        CellState {
            v: vec![vec![0.0; dim]; clients],
            z: vec![vec![0.0; dim]; clients],
            alpha: vec![vec![0.0; dim]; clients],
            w: vec![0.0; dim],
        }
    }

    /// `v ~ N(0, 0.1²)` per entry; `z = α = w = 0`.
    pub fn init_random(clients: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.1).expect("valid std");
        let mut state = CellState::zeros(clients, dim);
        for v in state.v.iter_mut() {
            for x in v.iter_mut() {
                *x = normal.sample(&mut rng);
            }
        }
        state
    }

    pub fn num_clients(&self) -> usize {
        self.v.len()
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn is_finite(&self) -> bool {
        let ok = |vs: &Vec<Vec<f64>>| vs.iter().flatten().all(|x| x.is_finite());
        ok(&self.v) && ok(&self.z) && ok(&self.alpha) && self.w.iter().all(|x| x.is_finite())
    }
}

/// Client-side parameters of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientLayerParams {
    pub rho_raw: f64,
    pub lambda_raw: Vec<f64>,
}

/// Server-side parameters of one client at one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerLayerParams {
    pub p: f64,
    pub gamma_raw: f64,
}

impl LearnableParams {
    pub fn client_layer(&self, layer: usize, client: usize) -> ClientLayerParams {
        ClientLayerParams {
            rho_raw: self.rho_raw(layer, client),
            lambda_raw: self.lambda(layer, client).raw_diag,
        }
    }

    pub fn server_layer(&self, layer: usize, client: usize) -> ServerLayerParams {
        ServerLayerParams {
            p: self.p_at(layer, client),
            gamma_raw: self.gamma_raw(layer, client),
        }
    }
}

fn batch_rows(n: usize, batch: usize, seed: u64, layer: usize, client: usize) -> Vec<usize> {
    // distinct stream per (seed, layer, client)
    let mixed = seed
        ^ (layer as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (client as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    let mut rows = rand::seq::index::sample(&mut rng, n, batch.min(n)).into_vec();
    rows.sort_unstable();
    rows
}

/// Client-side part of one cell: dual, v and z layers. Pure in its inputs.
#[allow(clippy::too_many_arguments)]
pub fn client_step(
    data: &ClientData,
    client: usize,
    layer: usize,
    v_prev: &[f64],
    z_prev: &[f64],
    alpha_prev: &[f64],
    w_prev: &[f64],
    params: &ClientLayerParams,
    cfg: &ForwardConfig,
) -> Result<ClientRecord> {
    let rho = clamp_penalty(params.rho_raw);
    let dual = cfg.dual_step.multiplier(rho);
    let alpha = phi1_dual(alpha_prev, v_prev, z_prev, w_prev, dual)?;
    let anchor = v_anchor(&alpha, z_prev, w_prev);
    let (v, vstep) = match cfg.v_update {
        VUpdate::Linear => (data.normal.solve_prox(&anchor, rho)?, VStepRecord::Linear),
        VUpdate::Gradient { lr, steps, batch } => {
            let rows = batch.map(|b| batch_rows(data.y.len(), b, cfg.batch_seed, layer, client));
            let ne = match &rows {
                Some(r) => data.batch_normal(r)?,
                None => data.normal.clone(),
            };
            let grad = |v: &[f64]| ne.loss_grad(v);
            let traj = grad_step_trajectory(&grad, v_prev, &alpha, z_prev, w_prev, rho, lr, steps)
                .map_err(|e| match e {
                    Error::NonFiniteGradient { .. } => Error::NonFiniteGradient { layer, client },
                    other => other,
                })?;
            let v = traj.last().cloned().expect("trajectory holds v_prev");
            (
                v,
                VStepRecord::Gradient {
                    lr,
                    rows,
                    trajectory: traj,
                },
            )
        }
    };
    let z = phi3_aux(&alpha, &v, w_prev, rho, &DiagPD::new(params.lambda_raw.clone()))?;
    let message = client_message(&v, &z, &alpha);
    Ok(ClientRecord {
        client,
        alpha_prev: alpha_prev.to_vec(),
        v_prev: v_prev.to_vec(),
        z_prev: z_prev.to_vec(),
        rho_raw: params.rho_raw,
        lambda_raw: params.lambda_raw.clone(),
        alpha,
        anchor,
        v,
        z,
        message,
        vstep,
    })
}

/// Server-side part of one cell: the weighted average of uploaded messages.
pub fn server_step(messages: &[(&[f64], ServerLayerParams)]) -> Result<Vec<f64>> {
    let parts: Vec<Contribution<'_>> = messages
        .iter()
        .map(|(m, s)| Contribution {
            message: m,
            p: s.p,
            gamma: clamp_penalty(s.gamma_raw),
        })
        .collect();
    phi4_global(&parts)
}

fn check_active(active: &[usize], clients: usize) -> Result<()> {
    if active.is_empty() {
        return Err(Error::EmptyData("active clients"));
    }
    for w in active.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::Config("active ids must be strictly increasing".into()));
        }
    }
    if let Some(&last) = active.last() {
        if last >= clients {
            return Err(Error::DimensionMismatch {
                context: "active clients",
                expected: clients,
                got: last + 1,
            });
        }
    }
    Ok(())
}

fn check_shapes(state: &CellState, data: &NetworkData, params: &LearnableParams) -> Result<()> {
    let m = data.num_clients();
    let shape = params.shape();
    if state.num_clients() != m || shape.clients != m {
        return Err(Error::DimensionMismatch {
            context: "client count",
            expected: m,
            got: state.num_clients().max(shape.clients),
        });
    }
    if state.dim() != data.dim() || shape.dim != data.dim() {
        return Err(Error::DimensionMismatch {
            context: "model dimension",
            expected: data.dim(),
            got: state.dim(),
        });
    }
    Ok(())
}

/// Runs cell `layer` over the active clients, updating `state` in place and
/// appending the cell to `tape`.
pub fn forward_cell(
    state: &mut CellState,
    data: &NetworkData,
    params: &LearnableParams,
    layer: usize,
    active: &[usize],
    cfg: &ForwardConfig,
    tape: &mut Tape,
) -> Result<()> {
    check_shapes(state, data, params)?;
    check_active(active, data.num_clients())?;
    if layer == 0 || layer > params.shape().depth {
        return Err(Error::Config(format!(
            "layer {layer} outside [1, {}]",
            params.shape().depth
        )));
    }
    let w_prev = state.w.clone();
    let mut records = Vec::with_capacity(active.len());
    for &i in active {
        records.push(client_step(
            &data.clients[i],
            i,
            layer,
            &state.v[i],
            &state.z[i],
            &state.alpha[i],
            &w_prev,
            &params.client_layer(layer, i),
            cfg,
        )?);
    }
    let weights: Vec<ServerWeight> = active
        .iter()
        .map(|&i| ServerWeight {
            client: i,
            p: params.p_at(layer, i),
            gamma_raw: params.gamma_raw(layer, i),
        })
        .collect();
    let msgs: Vec<(&[f64], ServerLayerParams)> = records
        .iter()
        .zip(&weights)
        .map(|(r, s)| {
            (
                r.message.as_slice(),
                ServerLayerParams {
                    p: s.p,
                    gamma_raw: s.gamma_raw,
                },
            )
        })
        .collect();
    let w = server_step(&msgs)?;
    for r in &records {
        state.v[r.client] = r.v.clone();
        state.z[r.client] = r.z.clone();
        state.alpha[r.client] = r.alpha.clone();
    }
    state.w = w.clone();
    tape.push_cell(CellRecord::new(layer, w_prev, records, weights, w));
    Ok(())
}

/// Output of a full forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub state: CellState,
    pub tape: Tape,
}

impl ForwardOutput {
    /// Final personalized models of the active clients, `(client, v^L)`.
    pub fn final_models(&self) -> Vec<(usize, &[f64])> {
        self.tape
            .active()
            .iter()
            .map(|&i| (i, self.state.v[i].as_slice()))
            .collect()
    }
}

/// Runs `cfg.depth` cells starting from `initial`.
pub fn forward_network(
    data: &NetworkData,
    params: &LearnableParams,
    initial: &CellState,
    active: &[usize],
    cfg: &ForwardConfig,
) -> Result<ForwardOutput> {
    if cfg.depth == 0 || cfg.depth != params.shape().depth {
        return Err(Error::Config(format!(
            "depth {} does not match parameter depth {}",
            cfg.depth,
            params.shape().depth
        )));
    }
    check_shapes(initial, data, params)?;
    check_active(active, data.num_clients())?;
    let mut state = initial.clone();
    let mut tape = Tape::new(*cfg, initial.clone(), active.to_vec());
    for layer in 1..=cfg.depth {
        forward_cell(&mut state, data, params, layer, active, cfg, &mut tape)?;
    }
    Ok(ForwardOutput { state, tape })
}

/// Backward objective: sum of local losses at the final models of the
/// active clients.
pub fn backward_objective(data: &NetworkData, out: &ForwardOutput) -> Result<f64> {
    out.final_models()
        .iter()
        .map(|(i, v)| data.clients[*i].loss(v))
        .sum()
}
