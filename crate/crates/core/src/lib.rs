//! Learning corrective shared-autonomy behaviors from expert demonstrations.
//!
//! The learning pipeline turns a set of demonstrations into a
//! [`formats::BehaviorBundle`]:
//!
//! 1. [`alignment`] warps all demonstrations onto a common timeline,
//! 2. [`segmentation`] splits the timeline into free-space and in-contact
//!    segments (in-contact data is re-expressed in surface coordinates),
//! 3. [`dmp`] learns a forward and a backward movement primitive per segment,
//! 4. [`corrections`] extracts the per-sample principal components that
//!    define which corrections the operator may apply, and how large.
//!
//! At run time the [`executor`] integrates the nominal behavior and adds the
//! operator's corrections, mapped through [`input_mapping`] after the
//! [`override_law`] input law, while a simulated cleaning task ([`sim_env`])
//! reacts to the commanded state.

// NaN must fail validation, hence `!(x > 0.0)`; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod alignment;
pub mod corrections;
pub mod demo_synth;
pub mod dmp;
pub mod error;
pub mod executor;
pub mod formats;
pub mod input_mapping;
pub mod override_law;
pub mod pipeline;
pub mod policy;
pub mod segmentation;
pub mod sim_env;
pub mod surface;

pub use error::{Error, Result};
