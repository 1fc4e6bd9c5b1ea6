//! Reverse-mode sweep over a [`Tape`] for the backward objective
//! `Σ_i F_i(v_i^L)`.

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, rectify, rectify_grad};
use crate::params::{clamp_penalty, clamp_penalty_grad, ParamGradients, ParamKind, ParamLayout, ParamShape};
use crate::unrolled::{DualStep, NetworkData, Tape, VStepRecord};

/// Whether adjoints cross the client/server boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryPolicy {
    /// Full-graph reverse mode: every parameter receives the exact gradient
    /// of the summed loss.
    #[default]
    Exact,
    /// Each client's Λ and ρ receive only the gradient of that client's own
    /// loss; the broadcast loss-sum carries no adjoint. Server-side p and γ
    /// receive the gradient of the summed loss.
    FederatedLocal,
}

impl std::str::FromStr for BoundaryPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(BoundaryPolicy::Exact),
            "federated_local" => Ok(BoundaryPolicy::FederatedLocal),
            other => Err(Error::Config(format!("unknown boundary policy `{other}`"))),
        }
    }
}

impl std::fmt::Display for BoundaryPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BoundaryPolicy::Exact => "exact",
            BoundaryPolicy::FederatedLocal => "federated_local",
        })
    }
}

fn check_tape(tape: &Tape, data: &NetworkData, shape: ParamShape) -> Result<()> {
    let k = data.dim();
    if tape.initial().dim() != k || shape.dim != k {
        return Err(Error::TapeMismatch(format!(
            "model dimension {} vs data {}",
            tape.initial().dim(),
            k
        )));
    }
    if tape.initial().num_clients() != data.num_clients() || shape.clients != data.num_clients() {
        return Err(Error::TapeMismatch(format!(
            "{} clients on tape, {} in data",
            tape.initial().num_clients(),
            data.num_clients()
        )));
    }
    if tape.cells().len() != shape.depth {
        return Err(Error::TapeMismatch(format!(
            "{} cells on tape, parameter depth {}",
            tape.cells().len(),
            shape.depth
        )));
    }
    Ok(())
}

/// Gradient of the backward objective with respect to every learnable
/// parameter under `policy`.
pub fn backward(
    tape: &Tape,
    data: &NetworkData,
    shape: ParamShape,
    policy: BoundaryPolicy,
) -> Result<ParamGradients> {
    check_tape(tape, data, shape)?;
    let active = tape.active();
    let full = reverse_sweep(tape, data, shape, active)?;
    match policy {
        BoundaryPolicy::Exact => Ok(full),
        BoundaryPolicy::FederatedLocal => {
            let mut out = full.clone();
            for kind in [ParamKind::Lambda, ParamKind::Rho] {
                out.field_mut(kind).iter_mut().for_each(|g| *g = 0.0);
            }
            for &i in active {
                let own = reverse_sweep(tape, data, shape, &[i])?;
                for c in own.party_coords(i, true) {
                    out.set(c, own.get(c));
                }
            }
            Ok(out)
        }
    }
}

/// Reverse sweep seeded with the losses of `seed_clients` only.
pub(crate) fn reverse_sweep(
    tape: &Tape,
    data: &NetworkData,
    shape: ParamShape,
    seed_clients: &[usize],
) -> Result<ParamGradients> {
    let m = data.num_clients();
    let k = data.dim();
    let mut grads = ParamGradients::zeros(shape);
    let mut vbar = vec![vec![0.0; k]; m];
    let mut zbar = vec![vec![0.0; k]; m];
    let mut abar = vec![vec![0.0; k]; m];
    let mut wbar = vec![0.0; k];

    let final_state = tape.state_after(tape.cells().len());
    for &i in seed_clients {
        vbar[i] = data.clients[i].normal.loss_grad(&final_state.v[i]);
    }

    let dual_step = tape.config().dual_step;
    for cell in tape.cells().iter().rev() {
        let layer = cell.layer;
        let total: f64 = cell
            .weights
            .iter()
            .map(|s| s.p * clamp_penalty(s.gamma_raw))
            .sum();

        // global layer
        for (r, s) in cell.clients.iter().zip(&cell.weights) {
            let i = r.client;
            let gamma = clamp_penalty(s.gamma_raw);
            let weight = s.p * gamma;
            let diff: Vec<f64> = r.message.iter().zip(&cell.w).map(|(q, w)| q - w).collect();
            let weight_bar = dot(&diff, &wbar) / total;
            *grads.scalar_mut(ParamKind::P, layer, i) += gamma * weight_bar;
            *grads.scalar_mut(ParamKind::Gamma, layer, i) +=
                s.p * weight_bar * clamp_penalty_grad(s.gamma_raw);
            let scale = weight / total;
            for j in 0..k {
                let qbar = scale * wbar[j];
                vbar[i][j] += qbar;
                zbar[i][j] -= qbar;
                abar[i][j] -= qbar;
            }
        }

        let mut wprev_bar = vec![0.0; k];
        for r in &cell.clients {
            let i = r.client;
            let rho = clamp_penalty(r.rho_raw);
            let mut rho_bar = 0.0;

            // auxiliary layer
            {
                let lam = grads.lambda_slice_mut(layer, i);
                for j in 0..k {
                    let lp = rectify(r.lambda_raw[j]);
                    let denom = lp + rho;
                    let u = r.v[j] - cell.w_prev[j] - r.alpha[j];
                    let ubar = zbar[i][j] * rho / denom;
                    rho_bar += zbar[i][j] * u * lp / (denom * denom);
                    lam[j] += -zbar[i][j] * rho * u / (denom * denom) * rectify_grad(r.lambda_raw[j]);
                    vbar[i][j] += ubar;
                    wprev_bar[j] -= ubar;
                    abar[i][j] -= ubar;
                }
            }

            // primal layer
            let mut vprev_bar = vec![0.0; k];
            let cbar: Vec<f64> = match &r.vstep {
                VStepRecord::Linear => {
                    let c = &data.clients[i];
                    let rbar = c.normal.factor(rho)?.solve(&vbar[i])?;
                    let resid: Vec<f64> = r.anchor.iter().zip(&r.v).map(|(a, v)| a - v).collect();
                    rho_bar += dot(&rbar, &resid);
                    rbar.iter().map(|x| rho * x).collect()
                }
                VStepRecord::Gradient {
                    lr,
                    rows,
                    trajectory,
                } => {
                    let c = &data.clients[i];
                    let ne = match rows {
                        Some(rws) => c.batch_normal(rws)?,
                        None => c.normal.clone(),
                    };
                    let mut g = vbar[i].clone();
                    let mut cbar = vec![0.0; k];
                    for t in (0..trajectory.len() - 1).rev() {
                        let vt = &trajectory[t];
                        let off: Vec<f64> = vt.iter().zip(&r.anchor).map(|(v, a)| v - a).collect();
                        rho_bar += -lr * dot(&off, &g);
                        axpy(lr * rho, &g, &mut cbar);
                        let gg = ne.gram.matvec(&g)?;
                        for j in 0..k {
                            g[j] -= lr * (2.0 * gg[j] + rho * g[j]);
                        }
                    }
                    vprev_bar = g;
                    cbar
                }
            };
            // anchor = w_prev + z_prev + α
            let mut zprev_bar = cbar.clone();
            for j in 0..k {
                wprev_bar[j] += cbar[j];
                abar[i][j] += cbar[j];
            }

            // dual layer
            let d = dual_step.multiplier(rho);
            let aprev_bar = abar[i].clone();
            for j in 0..k {
                zprev_bar[j] += d * aprev_bar[j];
                vprev_bar[j] -= d * aprev_bar[j];
                wprev_bar[j] += d * aprev_bar[j];
            }
            if dual_step == DualStep::Penalty {
                let resid: Vec<f64> = (0..k)
                    .map(|j| r.z_prev[j] - r.v_prev[j] + cell.w_prev[j])
                    .collect();
                rho_bar += dot(&aprev_bar, &resid);
            }
            *grads.scalar_mut(ParamKind::Rho, layer, i) += rho_bar * clamp_penalty_grad(r.rho_raw);

            vbar[i] = vprev_bar;
            zbar[i] = zprev_bar;
            abar[i] = aprev_bar;
        }
        wbar = wprev_bar;
    }

    if grads.to_flat().iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(grads)
}
