//! Sharp constants of Brascamp–Lieb inequalities and their reverse forms.

pub mod convex;
pub mod datum;
pub mod error;
pub mod gaussian;
pub mod linalg;
pub mod lp;
pub mod minors;
pub mod optimize;
pub mod structure;
pub mod transport;

pub use datum::{validate, Datum, MultiDatum, RankOneDatum, ValidationReport, Violation};
pub use error::{BlError, Result};
pub use minors::{minor_table, weighted_gram_det, MinorOptions, MinorTable};
