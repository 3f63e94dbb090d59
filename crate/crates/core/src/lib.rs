pub mod basis;
pub mod classical;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod exec;
pub mod hamiltonian;
pub mod linalg;
pub mod observables;
pub mod operator;
pub mod pulses;
pub mod units;
pub mod wigner;
