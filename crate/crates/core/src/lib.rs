//! Multi-scale spherical location encoders and a presence-only geo-prior pipeline.
//!
//! A location encoder is `Enc(x) = NN(PE_S(x))`: a deterministic multi-scale
//! position encoder ([`encoders`]) followed by a small fully connected network
//! ([`nnet`]). The network is trained on presence-only observations with
//! uniformly sampled negatives ([`training`]) and evaluated as a per-class prior
//! that can be combined with image-model probabilities ([`eval`]).

pub mod cli;
pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod nnet;
pub mod training;

pub use encoders::{EncoderSpec, PositionEncoding, RbfState, Variant};
pub use error::{Error, Result};
pub use geometry::SphericalPoint;
