//! Simulator and analysis toolkit for a four-dimensional BB84 QKD protocol
//! encoded in polarization-OAM hybrid vector vortex states.
//!
//! The crate covers the full chain of the protocol:
//!
//! - [`state`]: dense complex linear algebra on C^2 (x) C^(2*l_max+1);
//! - [`elements`]: q-plates, wave-plate unitaries, polarizers and the
//!   single-mode-fiber zero-OAM filter;
//! - [`protocol`]: the two mutually unbiased four-state bases, their
//!   polarization-only preparation pipeline, the state-mapping projective
//!   measurement and crosstalk matrices;
//! - [`channel`]: weak-coherent-pulse decoy-state Monte Carlo sessions with
//!   dark counts and timing-window post-selection, plus exact closed-form
//!   expectations;
//! - [`security`]: vacuum+weak decoy-state bounds and the d-dimensional GLLP
//!   secret-key rate;
//! - [`cli`]: the `vortexqkd` command-line front end.

pub mod channel;
pub mod cli;
pub mod elements;
pub mod error;
pub mod presets;
pub mod protocol;
pub mod security;
pub mod state;

pub use error::{QkdError, Result};
