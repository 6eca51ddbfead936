pub mod algebra;
pub mod asymptotics;
pub mod cli;
pub mod error;
pub mod linalg;
pub mod special;
pub mod spectral;
pub mod linear_ode;
pub mod mellin;
pub mod rk;
pub mod toda_solver;
pub mod jump_data;
