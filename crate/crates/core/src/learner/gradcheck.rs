//! Comparison of [`backward`] against central finite differences on small
//! random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backward::{backward, BoundaryPolicy};
use super::fd::fd_gradient;
use crate::error::Result;
use crate::linalg::Mat;
use crate::params::{LearnableParams, ParamCoord, ParamKind, ParamLayout, ParamShape, PENALTY_FLOOR};
use crate::unrolled::{forward_network, CellState, ForwardConfig, LossScale, NetworkData};

/// Distance from a rectifier or clamp kink below which a coordinate is not
/// compared.
pub const KINK_MARGIN: f64 = 1e-3;

/// Denominator floor for the relative error, so that gradients that vanish
/// analytically are compared in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-4;

pub const DEFAULT_FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckInstance {
    pub data: NetworkData,
    pub params: LearnableParams,
    pub initial: CellState,
    pub active: Vec<usize>,
    pub cfg: ForwardConfig,
}

impl GradCheckInstance {
    /// Random regression data, random parameters (some Λ entries in the
    /// dead zone of the rectifier) and a random initial state.
    pub fn random(seed: u64, clients: usize, depth: usize, dim: usize, samples: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs: Vec<(Mat, Vec<f64>)> = (0..clients)
            .map(|_| {
                let rows: Vec<Vec<f64>> = (0..samples)
                    .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect();
                let y = (0..samples).map(|_| rng.random_range(-1.0..1.0)).collect();
                Ok((Mat::from_rows(&rows)?, y))
            })
            .collect::<Result<_>>()?;
        let data = NetworkData::from_pairs(&pairs, LossScale::Sum)?;

        let shape = ParamShape::new(clients, depth, dim, false);
        let mut params = LearnableParams::zeros(shape);
        params.lambda_raw.iter_mut().for_each(|v| *v = rng.random_range(-0.5..2.0));
        params.rho.iter_mut().for_each(|v| *v = rng.random_range(0.2..2.0));
        params.p.iter_mut().for_each(|v| *v = rng.random_range(0.1..1.0));
        params.gamma.iter_mut().for_each(|v| *v = rng.random_range(0.2..2.0));

        let initial = CellState::init_random(clients, dim, rng.random());
        Ok(GradCheckInstance {
            data,
            params,
            initial,
            active: (0..clients).collect(),
            cfg: ForwardConfig::linear(depth),
        })
    }

    pub fn with_config(mut self, cfg: ForwardConfig) -> Self {
        self.cfg = cfg;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordCheck {
    pub coord: ParamCoord,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: Vec<CoordCheck>,
    /// Coordinates within [`KINK_MARGIN`] of a kink.
    pub skipped: Vec<ParamCoord>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.checked.iter().map(|c| c.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&CoordCheck> {
        self.checked
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

pub fn near_kink(params: &LearnableParams, c: ParamCoord) -> bool {
    let value = params.get(c);
    match c.kind {
        ParamKind::Lambda => value.abs() < KINK_MARGIN,
        ParamKind::Rho | ParamKind::Gamma => (value - PENALTY_FLOOR).abs() < KINK_MARGIN,
        ParamKind::P => false,
    }
}

/// Exact-mode gradient against finite differences on every coordinate away
/// from a kink.
pub fn gradcheck(inst: &GradCheckInstance, h: f64) -> Result<GradCheckReport> {
    let out = forward_network(&inst.data, &inst.params, &inst.initial, &inst.active, &inst.cfg)?;
    let grads = backward(&out.tape, &inst.data, inst.params.shape(), BoundaryPolicy::Exact)?;
    let mut checked = Vec::new();
    let mut skipped = Vec::new();
    for c in inst.params.coords() {
        if near_kink(&inst.params, c) {
            skipped.push(c);
            continue;
        }
        let numeric = fd_gradient(
            &inst.data,
            &inst.params,
            &inst.initial,
            &inst.active,
            &inst.cfg,
            c,
            h,
        )?;
        let analytic = grads.get(c);
        checked.push(CoordCheck {
            coord: c,
            analytic,
            numeric,
            rel_err: relative_error(analytic, numeric),
        });
    }
    Ok(GradCheckReport { checked, skipped })
}
