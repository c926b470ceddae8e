//! Keystroke-dynamics and face verification.
//!
//! A password entry becomes a sequence of normalized durations and latencies
//! ([`keystroke`]) scored by a per-user two-state HMM ([`hmm`]). A face frame
//! is projected into Fisherface space and compared to the claimed user's mean
//! ([`face`]). Both matchers report calibrated `(p_true, p_false)` pairs that
//! [`fusion`] combines into one decision. [`evaluation`] measures FAR, FRR and
//! EER on synthetic populations, and [`store`] keeps every artifact encrypted
//! at rest.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod codec;
pub mod evaluation;
pub mod face;
pub mod fusion;
pub mod hmm;
pub mod keystroke;
pub mod store;

pub use codec::DecodeError;
pub use nalgebra;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/keystroke-features.md")]
    mod keystroke_features {}
    #[doc = include_str!("../../../book/src/typing-models.md")]
    mod typing_models {}
    #[doc = include_str!("../../../book/src/fisherfaces.md")]
    mod fisherfaces {}
    #[doc = include_str!("../../../book/src/fusion.md")]
    mod fusion {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/profiles.md")]
    mod profiles {}
    #[doc = include_str!("../../../book/src/service.md")]
    mod service {}
}
