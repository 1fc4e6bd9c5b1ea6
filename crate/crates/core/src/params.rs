//! Learnable parameter layout shared by the unrolled network, the learner
//! and the optimizers.
//!
//! Storage is `[slot][client]` for scalars and `[slot][client][k]` for the
//! Λ diagonals, where `slot` is the layer index when parameters are untied
//! and always 0 when tied.

use crate::error::{Error, Result};
use crate::linalg::{rectify, rectify_grad, DiagPD};

/// Floor applied to ρ and γ at the point of use.
pub const PENALTY_FLOOR: f64 = 1e-6;

pub fn clamp_penalty(raw: f64) -> f64 {
    if raw > PENALTY_FLOOR {
        raw
    } else {
        PENALTY_FLOOR
    }
}

pub fn clamp_penalty_grad(raw: f64) -> f64 {
    if raw > PENALTY_FLOOR {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamShape {
    pub clients: usize,
    /// Number of unrolled cells L.
    pub depth: usize,
    pub dim: usize,
    pub tied: bool,
}

impl ParamShape {
    pub fn new(clients: usize, depth: usize, dim: usize, tied: bool) -> Self {
        ParamShape {
            clients,
            depth,
            dim,
            tied,
        }
    }

    pub fn slots(&self) -> usize {
        if self.tied {
            1
        } else {
            self.depth
        }
    }

    /// Storage slot for 1-based layer `layer`.
    pub fn slot(&self, layer: usize) -> usize {
        debug_assert!(layer >= 1 && layer <= self.depth);
        if self.tied {
            0
        } else {
            layer - 1
        }
    }

    pub fn scalar_len(&self) -> usize {
        self.slots() * self.clients
    }

    pub fn lambda_len(&self) -> usize {
        self.scalar_len() * self.dim
    }

    pub fn len(&self) -> usize {
        self.lambda_len() + 3 * self.scalar_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamKind {
    Lambda,
    Rho,
    P,
    Gamma,
}

impl ParamKind {
    /// Λ and ρ live on the client; p and γ live on the server.
    pub fn is_client_side(self) -> bool {
        matches!(self, ParamKind::Lambda | ParamKind::Rho)
    }
}

/// One scalar coordinate of the parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamCoord {
    pub kind: ParamKind,
    pub slot: usize,
    pub client: usize,
    /// Diagonal index for Λ, 0 otherwise.
    pub j: usize,
}

impl std::fmt::Display for ParamCoord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.kind {
            ParamKind::Lambda => write!(f, "lambda[{}][{}][{}]", self.slot, self.client, self.j),
            ParamKind::Rho => write!(f, "rho[{}][{}]", self.slot, self.client),
            ParamKind::P => write!(f, "p[{}][{}]", self.slot, self.client),
            ParamKind::Gamma => write!(f, "gamma[{}][{}]", self.slot, self.client),
        }
    }
}

/// Common storage for parameter-shaped data (values, gradients, moments).
pub trait ParamLayout {
    fn shape(&self) -> ParamShape;
    fn field(&self, kind: ParamKind) -> &[f64];
    fn field_mut(&mut self, kind: ParamKind) -> &mut [f64];

    fn index_of(&self, c: ParamCoord) -> usize {
        let s = self.shape();
        let scalar = c.slot * s.clients + c.client;
        match c.kind {
            ParamKind::Lambda => scalar * s.dim + c.j,
            _ => scalar,
        }
    }

    fn get(&self, c: ParamCoord) -> f64 {
        self.field(c.kind)[self.index_of(c)]
    }

    fn set(&mut self, c: ParamCoord, value: f64) {
        let i = self.index_of(c);
        self.field_mut(c.kind)[i] = value;
    }

    /// Every coordinate in canonical order: Λ, ρ, p, γ; each slot-major,
    /// then client, then diagonal index.
    fn coords(&self) -> Vec<ParamCoord> {
        let s = self.shape();
        let mut out = Vec::with_capacity(s.len());
        for kind in [ParamKind::Lambda, ParamKind::Rho, ParamKind::P, ParamKind::Gamma] {
            for slot in 0..s.slots() {
                for client in 0..s.clients {
                    let dims = if kind == ParamKind::Lambda { s.dim } else { 1 };
                    for j in 0..dims {
                        out.push(ParamCoord {
                            kind,
                            slot,
                            client,
                            j,
                        });
                    }
                }
            }
        }
        out
    }

    /// Coordinates owned by one party: client-side (Λ, ρ) or server-side
    /// (p, γ) entries of client `client`.
    fn party_coords(&self, client: usize, client_side: bool) -> Vec<ParamCoord> {
        self.coords()
            .into_iter()
            .filter(|c| c.client == client && c.kind.is_client_side() == client_side)
            .collect()
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.shape().len());
        for kind in [ParamKind::Lambda, ParamKind::Rho, ParamKind::P, ParamKind::Gamma] {
            out.extend_from_slice(self.field(kind));
        }
        out
    }

    fn check_congruent(&self, other: &dyn ParamLayout) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::LayoutMismatch(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }
}

macro_rules! param_struct {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            shape: ParamShape,
            pub lambda_raw: Vec<f64>,
            pub rho: Vec<f64>,
            pub p: Vec<f64>,
            pub gamma: Vec<f64>,
        }

        impl $name {
            pub fn filled(shape: ParamShape, lambda: f64, rho: f64, p: f64, gamma: f64) -> Self {
                $name {
                    shape,
                    lambda_raw: vec![lambda; shape.lambda_len()],
                    rho: vec![rho; shape.scalar_len()],
                    p: vec![p; shape.scalar_len()],
                    gamma: vec![gamma; shape.scalar_len()],
                }
            }

            pub fn zeros(shape: ParamShape) -> Self {
                Self::filled(shape, 0.0, 0.0, 0.0, 0.0)
            }
        }

        impl ParamLayout for $name {
            fn shape(&self) -> ParamShape {
                self.shape
            }
            fn field(&self, kind: ParamKind) -> &[f64] {
                match kind {
                    ParamKind::Lambda => &self.lambda_raw,
                    ParamKind::Rho => &self.rho,
                    ParamKind::P => &self.p,
                    ParamKind::Gamma => &self.gamma,
                }
            }
            fn field_mut(&mut self, kind: ParamKind) -> &mut [f64] {
                match kind {
                    ParamKind::Lambda => &mut self.lambda_raw,
                    ParamKind::Rho => &mut self.rho,
                    ParamKind::P => &mut self.p,
                    ParamKind::Gamma => &mut self.gamma,
                }
            }
        }
    };
}

param_struct!(
    /// Per-client, per-layer Λ diagonal and ρ, plus the server-side p and
    /// γ (the server's copy of ρ).
    LearnableParams
);

param_struct!(
    /// Adjoints of the backward objective, congruent with [`LearnableParams`].
    ParamGradients
);

impl LearnableParams {
    /// Λ raw diagonal 1.0, ρ = γ = 1.0, p = 1/M.
    pub fn init_default(shape: ParamShape) -> Self {
        Self::filled(shape, 1.0, 1.0, 1.0 / shape.clients as f64, 1.0)
    }

    fn scalar_index(&self, layer: usize, client: usize) -> usize {
        self.shape.slot(layer) * self.shape.clients + client
    }

    pub fn lambda(&self, layer: usize, client: usize) -> DiagPD {
        let start = self.scalar_index(layer, client) * self.shape.dim;
        DiagPD::new(self.lambda_raw[start..start + self.shape.dim].to_vec())
    }

    pub fn lambda_effective(&self, layer: usize, client: usize) -> Vec<f64> {
        let start = self.scalar_index(layer, client) * self.shape.dim;
        self.lambda_raw[start..start + self.shape.dim]
            .iter()
            .map(|&x| rectify(x))
            .collect()
    }

    pub fn lambda_mask(&self, layer: usize, client: usize) -> Vec<f64> {
        let start = self.scalar_index(layer, client) * self.shape.dim;
        self.lambda_raw[start..start + self.shape.dim]
            .iter()
            .map(|&x| rectify_grad(x))
            .collect()
    }

    pub fn rho_raw(&self, layer: usize, client: usize) -> f64 {
        self.rho[self.scalar_index(layer, client)]
    }

    pub fn rho_effective(&self, layer: usize, client: usize) -> f64 {
        clamp_penalty(self.rho_raw(layer, client))
    }

    pub fn p_at(&self, layer: usize, client: usize) -> f64 {
        self.p[self.scalar_index(layer, client)]
    }

    pub fn gamma_raw(&self, layer: usize, client: usize) -> f64 {
        self.gamma[self.scalar_index(layer, client)]
    }

    pub fn gamma_effective(&self, layer: usize, client: usize) -> f64 {
        clamp_penalty(self.gamma_raw(layer, client))
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|x| x.is_finite())
    }
}

impl ParamGradients {
    pub fn max_abs(&self) -> f64 {
        self.to_flat().iter().fold(0.0, |a, b| a.max(b.abs()))
    }

    pub fn add_assign(&mut self, other: &ParamGradients) -> Result<()> {
        self.check_congruent(other)?;
        for kind in [ParamKind::Lambda, ParamKind::Rho, ParamKind::P, ParamKind::Gamma] {
            for (a, b) in self.field_mut(kind).iter_mut().zip(other.field(kind)) {
                *a += b;
            }
        }
        Ok(())
    }

    pub(crate) fn lambda_slice_mut(&mut self, layer: usize, client: usize) -> &mut [f64] {
        let start = (self.shape.slot(layer) * self.shape.clients + client) * self.shape.dim;
        &mut self.lambda_raw[start..start + self.shape.dim]
    }

    pub(crate) fn scalar_mut(&mut self, kind: ParamKind, layer: usize, client: usize) -> &mut f64 {
        let i = self.shape.slot(layer) * self.shape.clients + client;
        &mut self.field_mut(kind)[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coords_cover_layout_once() {
        for tied in [false, true] {
            let shape = ParamShape::new(3, 4, 2, tied);
            let p = LearnableParams::init_default(shape);
            let coords = p.coords();
            assert_eq!(coords.len(), shape.len());
            let mut seen = std::collections::HashSet::new();
            for c in &coords {
                assert!(seen.insert((c.kind, p.index_of(*c))));
            }
        }
    }

    #[test]
    fn tied_layers_share_storage() {
        let shape = ParamShape::new(2, 3, 2, true);
        let mut p = LearnableParams::init_default(shape);
        p.rho[1] = 5.0;
        assert_eq!(p.rho_raw(1, 1), 5.0);
        assert_eq!(p.rho_raw(3, 1), 5.0);
    }

    #[test]
    fn penalty_clamp() {
        assert_eq!(clamp_penalty(-3.0), PENALTY_FLOOR);
        assert_eq!(clamp_penalty(2.0), 2.0);
        assert_eq!(clamp_penalty_grad(PENALTY_FLOOR), 0.0);
        assert_eq!(clamp_penalty_grad(0.5), 1.0);
    }

    #[test]
    fn defaults() {
        let p = LearnableParams::init_default(ParamShape::new(4, 2, 3, false));
        assert_eq!(p.lambda_effective(2, 3), vec![1.0; 3]);
        assert_eq!(p.p_at(1, 0), 0.25);
        assert_eq!(p.gamma_effective(1, 0), 1.0);
    }
}
