//! Indefinite linear-quadratic optimal control for dissipative linear systems,
//! recast as a nonnegative problem on a dissipation output.
//!
//! Given a system `(A, B, C, D)`, a quadratic supply rate `s(y, u)` and a
//! quadratic storage `S(x) = xᵀPx`, the Lur'e residual `W(P)` is factored as
//! `[K L]ᵀ[K L]`. The dissipation output `w = Kx + Lu` turns the indefinite cost
//! `∫ s(y, u)` into `S(x₀) + ∫ ‖w‖²`, which is solved by regularized Riccati
//! equations.

pub mod dissipative_system;
pub mod error;
pub mod io;
pub mod lure_lq;
pub mod matrix_core;
pub mod pde_models;
pub mod simulate;

pub use dissipative_system::{ExtendedSystem, StateSpaceSystem, StorageCertificate, SupplyRate};
pub use error::{Error, Result};
pub use lure_lq::{FeedbackGain, LureSolution, ValueReport};
pub use matrix_core::{Matrix, SymEigResult, Vector};
pub use pde_models::{ModelBundle, ModelKind};
pub use simulate::{BalanceReport, Policy, Trajectory};
