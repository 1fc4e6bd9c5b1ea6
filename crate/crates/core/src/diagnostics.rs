//! Convergence and interpretability instrumentation for the unrolled
//! network: the augmented Lagrangian per cell, descent checking, the
//! dual/primal step ratio and the learned Λ diagonals.

use crate::error::{Error, Result};
use crate::linalg::{norm, sub};
use crate::params::{LearnableParams, ParamLayout};
use crate::unrolled::{CellState, NetworkData, Tape};

/// Slack allowed when checking `ℒ^ℓ ≤ ℒ^{ℓ−1}`.
pub const DESCENT_SLACK: f64 = 1e-9;

/// Penalty level from which fixed-parameter descent is expected to hold.
pub const LARGE_RHO: f64 = 100.0;

/// Augmented Lagrangian of the consensus problem at `state`, using the
/// effective parameters of layer `layer`:
/// `(1/M) Σ_i p_i (F_i(v_i) + z_iᵀ Λ_i z_i + (ρ_i/2)‖z_i − v_i + w + α_i‖²)`.
pub fn lagrangian(
    state: &CellState,
    data: &NetworkData,
    params: &LearnableParams,
    layer: usize,
) -> Result<f64> {
    let m = data.num_clients();
    let k = data.dim();
    let shape = params.shape();
    if state.num_clients() != m || shape.clients != m {
        return Err(Error::DimensionMismatch {
            context: "lagrangian clients",
            expected: m,
            got: state.num_clients(),
        });
    }
    if state.dim() != k || shape.dim != k {
        return Err(Error::DimensionMismatch {
            context: "lagrangian dimension",
            expected: k,
            got: state.dim(),
        });
    }
    if layer == 0 || layer > shape.depth {
        return Err(Error::DimensionMismatch {
            context: "lagrangian layer",
            expected: shape.depth,
            got: layer,
        });
    }
    let mut total = 0.0;
    for i in 0..m {
        let lam = params.lambda_effective(layer, i);
        let rho = params.rho_effective(layer, i);
        let (v, z, a) = (&state.v[i], &state.z[i], &state.alpha[i]);
        let mut quad = 0.0;
        let mut pen = 0.0;
        for j in 0..k {
            quad += lam[j] * z[j] * z[j];
            let r = z[j] - v[j] + state.w[j] + a[j];
            pen += r * r;
        }
        total += params.p_at(layer, i) * (data.clients[i].loss(v)? + quad + 0.5 * rho * pen);
    }
    Ok(total / m as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub layer: usize,
    pub lagrangian: f64,
    /// `(client, ‖v^ℓ − v^{ℓ−1}‖)` for active clients.
    pub v_step: Vec<(usize, f64)>,
    pub alpha_step: Vec<(usize, f64)>,
    pub w_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellTrace {
    /// Lagrangian of the input state, evaluated with layer-1 parameters.
    pub initial_lagrangian: f64,
    pub layers: Vec<LayerTrace>,
    /// Smallest effective ρ used by any active client in the pass.
    pub min_rho: f64,
}

impl CellTrace {
    pub fn from_tape(tape: &Tape, data: &NetworkData, params: &LearnableParams) -> Result<Self> {
        let depth = tape.cells().len();
        if depth == 0 {
            return Err(Error::EmptyData("CellTrace::from_tape"));
        }
        let initial_lagrangian = lagrangian(tape.initial(), data, params, 1)?;
        let mut prev = tape.initial().clone();
        let mut layers = Vec::with_capacity(depth);
        let mut min_rho = f64::INFINITY;
        for (n, cell) in tape.cells().iter().enumerate() {
            let state = tape.state_after(n + 1);
            let mut v_step = Vec::new();
            let mut alpha_step = Vec::new();
            for r in &cell.clients {
                let i = r.client;
                v_step.push((i, norm(&sub(&state.v[i], &prev.v[i]))));
                alpha_step.push((i, norm(&sub(&state.alpha[i], &prev.alpha[i]))));
                min_rho = min_rho.min(params.rho_effective(cell.layer, i));
            }
            layers.push(LayerTrace {
                layer: cell.layer,
                lagrangian: lagrangian(&state, data, params, cell.layer)?,
                v_step,
                alpha_step,
                w_step: norm(&sub(&state.w, &prev.w)),
            });
            prev = state;
        }
        Ok(CellTrace {
            initial_lagrangian,
            layers,
            min_rho,
        })
    }

    pub fn lagrangians(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.lagrangian).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// Parameters were learned or ρ is small, so descent is not guaranteed.
    Expected,
    /// Fixed parameters with large ρ, where descent should hold.
    Anomalous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub layer: usize,
    pub increase: f64,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DescentReport {
    pub checked: usize,
    pub violations: Vec<Violation>,
}

impl DescentReport {
    pub fn anomalous(&self) -> usize {
        self.violations
            .iter()
            .filter(|v| v.kind == ViolationKind::Anomalous)
            .count()
    }

    pub fn is_monotone(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `ℒ^ℓ ≤ ℒ^{ℓ−1} + slack` over consecutive executed layers.
/// With `include_initial`, the input state's Lagrangian is compared against
/// layer 1 as well.
pub fn check_descent(trace: &CellTrace, params_fixed: bool, include_initial: bool) -> DescentReport {
    let kind = if params_fixed && trace.min_rho >= LARGE_RHO {
        ViolationKind::Anomalous
    } else {
        ViolationKind::Expected
    };
    let mut values = Vec::with_capacity(trace.layers.len() + 1);
    if include_initial {
        values.push((0, trace.initial_lagrangian));
    }
    values.extend(trace.layers.iter().map(|l| (l.layer, l.lagrangian)));
    let mut report = DescentReport::default();
    for pair in values.windows(2) {
        let ((_, before), (layer, after)) = (pair[0], pair[1]);
        report.checked += 1;
        if !(after <= before + DESCENT_SLACK) {
            report.violations.push(Violation {
                layer,
                increase: after - before,
                kind,
            });
        }
    }
    report
}

/// Largest observed `‖Δα‖ / ‖Δv‖` for `client` over layers whose v-step
/// exceeds 1e-14.
pub fn dual_primal_ratio(trace: &CellTrace, client: usize) -> Result<f64> {
    let mut best: Option<f64> = None;
    for l in &trace.layers {
        let dv = l.v_step.iter().find(|(i, _)| *i == client).map(|(_, n)| *n);
        let da = l.alpha_step.iter().find(|(i, _)| *i == client).map(|(_, n)| *n);
        if let (Some(dv), Some(da)) = (dv, da) {
            if dv > 1e-14 {
                let r = da / dv;
                best = Some(best.map_or(r, |b| b.max(r)));
            }
        }
    }
    best.ok_or(Error::DegenerateStep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaReport {
    /// Effective diagonal of the last layer, per client.
    pub final_layer: Vec<Vec<f64>>,
    /// Effective diagonal averaged over layers, per client.
    pub layer_mean: Vec<Vec<f64>>,
    /// Per-coordinate mean over clients of `final_layer`.
    pub cross_client_final: Vec<f64>,
    /// Per-coordinate mean over clients of `layer_mean`.
    pub cross_client_mean: Vec<f64>,
}

pub fn lambda_report(params: &LearnableParams) -> LambdaReport {
    let shape = params.shape();
    let (m, k, depth) = (shape.clients, shape.dim, shape.depth);
    let final_layer: Vec<Vec<f64>> = (0..m).map(|i| params.lambda_effective(depth, i)).collect();
    let layer_mean: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut acc = vec![0.0; k];
            for layer in 1..=depth {
                for (a, l) in acc.iter_mut().zip(params.lambda_effective(layer, i)) {
                    *a += l / depth as f64;
                }
            }
            acc
        })
        .collect();
    let cross = |rows: &[Vec<f64>]| -> Vec<f64> {
        (0..k)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / m as f64)
            .collect()
    };
    LambdaReport {
        cross_client_final: cross(&final_layer),
        cross_client_mean: cross(&layer_mean),
        final_layer,
        layer_mean,
    }
}

impl std::fmt::Display for LambdaReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let row = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:>10.5}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        writeln!(f, "effective Lambda diagonal, final layer")?;
        for (i, d) in self.final_layer.iter().enumerate() {
            writeln!(f, "  client {i:>3}: {}", row(d))?;
        }
        writeln!(f, "  mean      : {}", row(&self.cross_client_final))?;
        writeln!(f, "effective Lambda diagonal, mean over layers")?;
        for (i, d) in self.layer_mean.iter().enumerate() {
            writeln!(f, "  client {i:>3}: {}", row(d))?;
        }
        writeln!(f, "  mean      : {}", row(&self.cross_client_mean))
    }
}
