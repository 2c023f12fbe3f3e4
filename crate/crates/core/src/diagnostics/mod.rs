//! Accuracy diagnostics.
pub mod kl;
pub mod np;
pub mod re;
