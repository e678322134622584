//! File formats, report writers and the command-line front end for the
//! `reach-core` audits.

pub mod bundle;
pub mod cli;
pub mod error;
pub mod plot;
pub mod ratings;
pub mod report;

pub use bundle::{load_model, save_model, ModelBundle};
pub use error::{AppError, AppResult};
pub use ratings::{parse_ratings, parse_ratings_from, RatingsFormat};
