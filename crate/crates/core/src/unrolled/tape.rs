//! Record of a forward pass, sufficient to replay it and to run the
//! reverse sweep.

use super::network::{
    client_step, server_step, CellState, ClientLayerParams, ForwardConfig, NetworkData,
    ServerLayerParams,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum VStepRecord {
    Linear,
    Gradient {
        lr: f64,
        rows: Option<Vec<usize>>,
        /// `v_0 = v_prev, …, v_steps`.
        trajectory: Vec<Vec<f64>>,
    },
}

/// Inputs and outputs of the client-side layers for one client in one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientRecord {
    pub client: usize,
    pub alpha_prev: Vec<f64>,
    pub v_prev: Vec<f64>,
    pub z_prev: Vec<f64>,
    pub rho_raw: f64,
    pub lambda_raw: Vec<f64>,
    pub alpha: Vec<f64>,
    /// `w_prev + z_prev + α`.
    pub anchor: Vec<f64>,
    pub v: Vec<f64>,
    pub z: Vec<f64>,
    /// `v − z − α`, the uploaded vector.
    pub message: Vec<f64>,
    pub vstep: VStepRecord,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerWeight {
    pub client: usize,
    pub p: f64,
    pub gamma_raw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    /// 1-based layer index.
    pub layer: usize,
    pub w_prev: Vec<f64>,
    /// Sorted by client id.
    pub clients: Vec<ClientRecord>,
    /// Sorted by client id, aligned with `clients`.
    pub weights: Vec<ServerWeight>,
    pub w: Vec<f64>,
}

impl CellRecord {
    /// Canonicalises ordering by client id regardless of the order in which
    /// client records arrived.
    pub fn new(
        layer: usize,
        w_prev: Vec<f64>,
        mut clients: Vec<ClientRecord>,
        mut weights: Vec<ServerWeight>,
        w: Vec<f64>,
    ) -> Self {
        clients.sort_by_key(|r| r.client);
        weights.sort_by_key(|s| s.client);
        CellRecord {
            layer,
            w_prev,
            clients,
            weights,
            w,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tape {
    config: ForwardConfig,
    initial: CellState,
    active: Vec<usize>,
    cells: Vec<CellRecord>,
}

impl Tape {
    pub fn new(config: ForwardConfig, initial: CellState, active: Vec<usize>) -> Self {
        Tape {
            config,
            initial,
            active,
            cells: Vec::new(),
        }
    }

    pub fn push_cell(&mut self, cell: CellRecord) {
        self.cells.push(cell);
        self.cells.sort_by_key(|c| c.layer);
    }

    pub fn config(&self) -> &ForwardConfig {
        &self.config
    }

    pub fn initial(&self) -> &CellState {
        &self.initial
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn cells(&self) -> &[CellRecord] {
        &self.cells
    }

    /// Full state after `n` cells (`n = 0` is the initial state). Inactive
    /// clients keep their initial values.
    pub fn state_after(&self, n: usize) -> CellState {
        let mut state = self.initial.clone();
        for cell in &self.cells[..n] {
            for r in &cell.clients {
                state.v[r.client] = r.v.clone();
                state.z[r.client] = r.z.clone();
                state.alpha[r.client] = r.alpha.clone();
            }
            state.w = cell.w.clone();
        }
        state
    }

    /// Re-executes every recorded layer from its recorded inputs and checks
    /// the outputs bit-for-bit.
    pub fn replay(&self, data: &NetworkData) -> Result<()> {
        let mut expected_prev = self.initial.clone();
        for cell in &self.cells {
            if cell.w_prev != expected_prev.w {
                return Err(Error::TapeMismatch(format!("w input at layer {}", cell.layer)));
            }
            let cfg = self.config;
            for r in &cell.clients {
                let c = data.clients.get(r.client).ok_or_else(|| {
                    Error::TapeMismatch(format!("client {} not in data", r.client))
                })?;
                if r.v_prev != expected_prev.v[r.client]
                    || r.z_prev != expected_prev.z[r.client]
                    || r.alpha_prev != expected_prev.alpha[r.client]
                {
                    return Err(Error::TapeMismatch(format!(
                        "state chain broken at layer {}, client {}",
                        cell.layer, r.client
                    )));
                }
                let again = client_step(
                    c,
                    r.client,
                    cell.layer,
                    &r.v_prev,
                    &r.z_prev,
                    &r.alpha_prev,
                    &cell.w_prev,
                    &ClientLayerParams {
                        rho_raw: r.rho_raw,
                        lambda_raw: r.lambda_raw.clone(),
                    },
                    &cfg,
                )?;
                if &again != r {
                    return Err(Error::TapeMismatch(format!(
                        "client layers differ at layer {}, client {}",
                        cell.layer, r.client
                    )));
                }
            }
            let msgs: Vec<(&[f64], ServerLayerParams)> = cell
                .clients
                .iter()
                .zip(&cell.weights)
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
            if server_step(&msgs)? != cell.w {
                return Err(Error::TapeMismatch(format!("w differs at layer {}", cell.layer)));
            }
            for r in &cell.clients {
                expected_prev.v[r.client] = r.v.clone();
                expected_prev.z[r.client] = r.z.clone();
                expected_prev.alpha[r.client] = r.alpha.clone();
            }
            expected_prev.w = cell.w.clone();
        }
        Ok(())
    }
}
