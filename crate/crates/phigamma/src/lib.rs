//! Exact p-adic arithmetic, (phi,Gamma)-operator algebra on power series,
//! Mahler/Amice analysis on Z_p, rank-2 crystalline lattice computations,
//! the principal-series Banach model for GL_2(Q_p), and the correspondence
//! between the two sides, together with a deterministic check harness.

pub mod rat;
pub mod padic;
pub mod series;
pub mod mahler;
pub mod wach;
pub mod gl2;
pub mod correspondence;
pub mod harness;
