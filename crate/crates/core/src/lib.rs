//! Simulation and inference for the generalized rescaled Pólya urn.
//!
//! * [`urn`] and [`schedule`]: the reinforcement dynamics and the named
//!   (α_n, β_n) regimes.
//! * [`montecarlo`]: seeded replica experiments and CLT diagnostics.
//! * [`gof`]: the correlation-corrected chi-squared test for clustered
//!   counts, with maximum-likelihood estimation of (η, λ).
//! * [`specfun`]: the special functions the above rely on.
//! * [`io`]: contingency files, the bundled Twitter fixture and the
//!   end-to-end pipelines used by the command-line tool.

pub mod gof;
pub mod io;
pub mod montecarlo;
pub mod schedule;
pub mod specfun;
pub mod urn;

pub use schedule::{Schedule, ScheduleSpec};
pub use specfun::GammaDist;
pub use urn::{new_state, UrnParams, UrnState};
