//! Stochastic simulation of a Kerr-resonator memory used to read out, store
//! and conditionally reset a superconducting qubit in a 3D cavity.
//!
//! Internal units are rad/s and seconds; configuration files use MHz, kHz
//! and ns.

pub mod bifurcation;
pub mod cli;
pub mod ensemble;
pub mod manifest;
pub mod oracle;
pub mod params;
pub mod protocol;
pub mod qubit;
pub mod sde;
pub mod trajectory;

pub use params::SystemParams;
