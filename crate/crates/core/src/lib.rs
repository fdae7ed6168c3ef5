//! Ransomware detection by classifying binaries rendered as grayscale images,
//! with the classifier trained across data owners by federated averaging.

pub mod corpus;
pub mod dataset;
pub mod error;
pub mod fedavg;
pub mod fedwire;
pub mod imagization;
pub mod metrics;
pub mod nn;

pub use error::{Error, Result};
