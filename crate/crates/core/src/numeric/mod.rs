//! Small numerical kernels shared by the physics modules.

pub mod interp;
pub mod lm;
pub mod ode;
pub mod quad;
pub mod roots;
