pub mod error;
pub mod evalkit;
pub mod exec;
pub mod pipeline;
pub mod scoring;
pub mod seqmodel;
pub mod staypoint;
pub mod synthgen;
pub mod uncertainty;

pub use error::{Error, Result};
pub use exec::Exec;
