// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod euler;
pub mod fields;
pub mod limit;
pub mod measure;
pub mod montecarlo;
pub mod paths;
pub mod transport;

pub use error::{Error, Result};
pub use fields::{NoiseSpace, PvfSpec};
pub use limit::{sticky_flow, LimitFlow, StickyFlowConfig};
pub use measure::{Coupling, DiscreteMeasure, Point, TangentMeasure, TuplePlan};
pub use montecarlo::{sample_paths_monte_carlo, NoiseMode};
pub use paths::{PathEnsemble, PiecewisePath, Provenance};
