//! The benchmark pipeline: generate a corpus, train a grey-box classifier to
//! perfection, attribute, and score interaction methods by ARR.

pub mod config;
pub mod events;
pub mod pipeline;

pub use config::{ConfigError, PipelineConfig};
pub use pipeline::Pipeline;

/// Process exit code for an error: 2 config, 3 non-convergence,
/// 4 integrity, 1 anything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<fidam_core::Error>() {
            match e {
                fidam_core::Error::NonConvergence { .. } | fidam_core::Error::NotConverged { .. } => return 3,
                fidam_core::Error::Integrity { .. } => return 4,
                _ => {}
            }
        }
    }
    1
}
