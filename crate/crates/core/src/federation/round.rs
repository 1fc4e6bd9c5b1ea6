//! One pass of layer-wise training executed as client/server message
//! exchange.

use super::messages::{RoundMessage, Transcript};
use super::participation::ParticipationPlan;
use crate::error::{Error, Result};
use crate::learner::{backward, BoundaryPolicy, ParamOptimizer};
use crate::params::{LearnableParams, ParamLayout};
use crate::unrolled::{
    client_step, server_step, CellRecord, CellState, ForwardConfig, NetworkData, ServerLayerParams,
    ServerWeight, Tape,
};

/// Result of one pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    /// `(client, F_i(v_i^L))` as reported by the active clients.
    pub losses: Vec<(usize, f64)>,
    /// The value broadcast back to the clients.
    pub loss_sum: f64,
}

/// Mutable federation state carried across passes: parameters, warm-start
/// cell state and optimizer moments.
#[derive(Debug, Clone)]
pub struct Federation {
    pub data: NetworkData,
    pub params: LearnableParams,
    pub state: CellState,
    pub optimizer: ParamOptimizer,
    pub cfg: ForwardConfig,
    pub policy: BoundaryPolicy,
    /// Whether passes update the parameters.
    pub train: bool,
    transcript: Option<Transcript>,
    last_tape: Option<Tape>,
}

impl Federation {
    pub fn new(
        data: NetworkData,
        params: LearnableParams,
        state: CellState,
        optimizer: ParamOptimizer,
        cfg: ForwardConfig,
        policy: BoundaryPolicy,
    ) -> Self {
        Federation {
            data,
            params,
            state,
            optimizer,
            cfg,
            policy,
            train: true,
            transcript: None,
            last_tape: None,
        }
    }

    /// Keep every message of every pass.
    pub fn record_transcript(&mut self) {
        self.transcript.get_or_insert_with(Transcript::new);
    }

    pub fn transcript(&self) -> Option<&Transcript> {
        self.transcript.as_ref()
    }

    pub fn last_tape(&self) -> Option<&Tape> {
        self.last_tape.as_ref()
    }

    /// Forward pass over the active clients through messages, loss
    /// collection, then the backward pass and optimizer update on both
    /// sides. Cell state is carried into the next pass.
    pub fn run_round(&mut self, plan: &ParticipationPlan, round: usize, epoch: usize) -> Result<RoundOutcome> {
        let m = self.data.num_clients();
        plan.validate(m)?;
        let active = &plan.active;
        let depth = self.cfg.depth;
        let mut log = Transcript::new();
        let mut tape = Tape::new(self.cfg, self.state.clone(), active.clone());

        for layer in 1..=depth {
            let w_prev = self.state.w.clone();
            let mut records = Vec::with_capacity(active.len());
            for &i in active {
                let r = client_step(
                    &self.data.clients[i],
                    i,
                    layer,
                    &self.state.v[i],
                    &self.state.z[i],
                    &self.state.alpha[i],
                    &w_prev,
                    &self.params.client_layer(layer, i),
                    &self.cfg,
                )?;
                log.push(
                    round,
                    epoch,
                    RoundMessage::ClientVector {
                        client: i,
                        layer,
                        vec: r.message.clone(),
                    },
                );
                records.push(r);
            }

            // the server only sees the uploaded vectors of this layer
            let inbox: Vec<(usize, &[f64])> = log
                .entries()
                .iter()
                .filter_map(|e| match &e.message {
                    RoundMessage::ClientVector { client, layer: l, vec } if *l == layer => {
                        Some((*client, vec.as_slice()))
                    }
                    _ => None,
                })
                .collect();
            let weights: Vec<ServerWeight> = inbox
                .iter()
                .map(|&(i, _)| ServerWeight {
                    client: i,
                    p: self.params.p_at(layer, i),
                    gamma_raw: self.params.gamma_raw(layer, i),
                })
                .collect();
            let msgs: Vec<(&[f64], ServerLayerParams)> = inbox
                .iter()
                .zip(&weights)
                .map(|(&(_, vec), s)| {
                    (
                        vec,
                        ServerLayerParams {
                            p: s.p,
                            gamma_raw: s.gamma_raw,
                        },
                    )
                })
                .collect();
            let w = server_step(&msgs)?;
            log.push(round, epoch, RoundMessage::GlobalBroadcast { layer, w: w.clone() });

            for r in &records {
                self.state.v[r.client] = r.v.clone();
                self.state.z[r.client] = r.z.clone();
                self.state.alpha[r.client] = r.alpha.clone();
            }
            self.state.w = w.clone();
            tape.push_cell(CellRecord::new(layer, w_prev, records, weights, w));
        }

        let mut losses = Vec::with_capacity(active.len());
        for &i in active {
            let value = self.data.clients[i].loss(&self.state.v[i])?;
            if !value.is_finite() {
                return Err(Error::NonFinite);
            }
            losses.push((i, value));
            log.push(round, epoch, RoundMessage::LossReport { client: i, value });
        }
        let loss_sum: f64 = log
            .entries()
            .iter()
            .filter_map(|e| match e.message {
                RoundMessage::LossReport { value, .. } => Some(value),
                _ => None,
            })
            .sum();
        log.push(round, epoch, RoundMessage::LossSumBroadcast { value: loss_sum });
        log.check_counts(round, epoch, active.len(), depth)?;

        if self.train {
            let grads = backward(&tape, &self.data, self.params.shape(), self.policy)?;
            self.optimizer.step(&mut self.params, &grads, active)?;
            if !self.params.is_finite() {
                return Err(Error::NonFinite);
            }
        }
        if let Some(t) = self.transcript.as_mut() {
            t.extend(log);
        }
        self.last_tape = Some(tape);
        Ok(RoundOutcome { losses, loss_sum })
    }
}
