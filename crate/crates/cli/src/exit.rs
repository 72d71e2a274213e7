//! Process exit codes.

use chunkdelay::Error;

pub const OK: i32 = 0;
pub const USAGE: i32 = 1;
pub const DATA: i32 = 2;
pub const NUMERICAL: i32 = 3;

/// Bad arguments or configuration values.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Exit code for an error: the first toolkit or usage error in the chain
/// decides; anything else is a data error.
pub fn code_for(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return USAGE;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::NonFiniteLoss { .. }
                | Error::Diverged { .. }
                | Error::NonFiniteSample { .. }
                | Error::NonFiniteAction => NUMERICAL,
                Error::Config(_) | Error::InvalidTiming(_) => USAGE,
                _ => DATA,
            };
        }
    }
    DATA
}
