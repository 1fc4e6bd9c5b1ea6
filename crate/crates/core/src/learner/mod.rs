//! Training of the unrolled network's parameters.

mod backward;
mod fd;
mod gradcheck;
mod optim;

pub use backward::{backward, BoundaryPolicy};
pub use fd::{fd_gradient, objective};
pub use gradcheck::{
    gradcheck, near_kink, relative_error, CoordCheck, GradCheckInstance, GradCheckReport,
    DEFAULT_FD_STEP, KINK_MARGIN, REL_ERR_FLOOR,
};
pub use optim::{make_optimizer, optimizer_names, Adam, Gd, Optimizer, ParamOptimizer};
