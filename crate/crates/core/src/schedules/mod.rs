//! Constants and schedules that drive the optimizers and the verification
//! harness: quadratic noise bounds `(a, b)`, stepsize rules, averaging
//! weights and closed-form rate envelopes.

mod averaging;
mod bounds;
mod envelope;
mod step;

pub use averaging::{averaging_weights, geometric_weights, AveragingSetting};
pub use bounds::{quad_bound, BoundInputs, QuadBound, Validity};
pub use envelope::{rate_envelope, EnvelopeConstants, EnvelopeKind, RateEnvelope, Theorem};
pub use step::{constant_stepsize_for_t, log_t_over_t_stepsize, ConvexSetting, StepSchedule};
