//! Forward pass of the unrolled ADMM network.

pub mod layers;
pub mod network;
pub mod tape;

pub use layers::{
    client_message, phi1_dual, phi2_v_grad, phi2_v_linear, phi3_aux, phi4_global, Contribution,
    NormalEquations,
};
pub use network::{
    backward_objective, client_step, forward_cell, forward_network, server_step, CellState,
    ClientData, ClientLayerParams, DualStep, ForwardConfig, ForwardOutput, LossScale, NetworkData,
    ServerLayerParams, VUpdate,
};
pub use tape::{CellRecord, ClientRecord, ServerWeight, Tape, VStepRecord};
