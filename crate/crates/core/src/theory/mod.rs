//! Numerical checks of KL decay under forward diffusion: the closed-form
//! conditional KL and its time derivative, and the marginal KL of diffused
//! one-dimensional mixtures with its Fisher-divergence rate.

mod conditional;
mod mixture;
mod trace;
mod verify;

pub use conditional::{added_variance, kl_conditional, kl_conditional_derivative, variance_rate};
pub use mixture::{fisher_divergence, mixture_marginal_kl, GaussianMixture1D, QuadratureGrid};
pub use trace::{time_grid, KlTrace};
pub use verify::{fisher_rate, marginal_kl_rate, verify_theorem, CheckOutcome, TheoremReport};
