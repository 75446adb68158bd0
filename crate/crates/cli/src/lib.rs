//! JSON front end over `bl_core`: datum documents in, result documents out.

pub mod commands;
pub mod doc;
pub mod error;

pub use commands::{analyze, constant, run, verify, young, zonoid, Flags, Outcome, VerifySide};
pub use doc::{render, DatumDocument, FunctionsDocument, YoungDocument};
pub use error::{CliError, Exit};
