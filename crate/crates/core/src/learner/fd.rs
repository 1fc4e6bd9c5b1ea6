//! Central finite differences of the backward objective, used as the
//! independent oracle for [`super::backward`].

use crate::error::{Error, Result};
use crate::params::{LearnableParams, ParamCoord, ParamLayout};
use crate::unrolled::{backward_objective, forward_network, CellState, ForwardConfig, NetworkData};

/// Backward objective at `params`, running the full forward pass.
pub fn objective(
    data: &NetworkData,
    params: &LearnableParams,
    initial: &CellState,
    active: &[usize],
    cfg: &ForwardConfig,
) -> Result<f64> {
    let out = forward_network(data, params, initial, active, cfg)?;
    backward_objective(data, &out)
}

/// `(P(θ + h·e) − P(θ − h·e)) / 2h` along coordinate `which`.
pub fn fd_gradient(
    data: &NetworkData,
    params: &LearnableParams,
    initial: &CellState,
    active: &[usize],
    cfg: &ForwardConfig,
    which: ParamCoord,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let base = params.get(which);
    let mut probe = params.clone();
    probe.set(which, base + h);
    let plus = objective(data, &probe, initial, active, cfg).map_err(|_| Error::NonFinite)?;
    probe.set(which, base - h);
    let minus = objective(data, &probe, initial, active, cfg).map_err(|_| Error::NonFinite)?;
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok((plus - minus) / (2.0 * h))
}
