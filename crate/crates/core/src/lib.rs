//! Rating prediction by joint factorization of ratings, a directed trust
//! network and item review text, together with the baselines it reduces to
//! (global mean, PMF, HFT, LOCABAL, eSMF).
//!
//! The pipeline is: [`ingest`] raw files into a [`dataset::Dataset`], split it
//! with [`experiment::split`], build a [`model::TrainingSet`] (centered
//! ratings plus frozen [`social::SocialContext`]), fit it with
//! [`inference::train`], and score held-out ratings with [`experiment::rmse`].

extern crate self as mr3;

mod binio;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod ingest;
pub mod model;
pub mod social;
pub mod synth;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
