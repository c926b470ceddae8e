//! Command line and HTTP front end for keyface.
//!
//! [`engine::Engine`] owns an encrypted profile directory and implements
//! enrollment and verification; [`http::router`] and [`cli::run`] expose it.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod engine;
mod error;
pub mod http;

pub use error::CliError;
