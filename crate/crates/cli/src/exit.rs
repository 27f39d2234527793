use snrd::dataset::DatasetError;
use snrd::distill::DistillError;
use snrd::metrics::MetricError;
use snrd::signal::SignalError;
use snrd::unet::{CheckpointError, UnetError};
use thiserror::Error;

pub const OK: u8 = 0;
pub const CONFIG: u8 = 2;
pub const INPUT: u8 = 3;
pub const RUNTIME: u8 = 4;

/// Invalid arguments or configuration detected by the CLI itself.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Unreadable or malformed input files.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct InputError(pub String);

pub fn input(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

fn signal_code(e: &SignalError) -> Option<u8> {
    match e {
        e if e.is_format() => Some(INPUT),
        SignalError::Io { .. } => Some(INPUT),
        _ => None,
    }
}

fn dataset_code(e: &DatasetError) -> Option<u8> {
    match e {
        e if e.is_validation() => Some(CONFIG),
        DatasetError::Parse { .. } | DatasetError::Io { .. } => Some(INPUT),
        DatasetError::Render { source, .. } | DatasetError::Signal(source) => signal_code(source),
        _ => None,
    }
}

fn distill_code(e: &DistillError) -> Option<u8> {
    match e {
        DistillError::Config { .. } | DistillError::EmptyBank | DistillError::OutsideBand { .. } => Some(CONFIG),
        DistillError::Teacher { .. } | DistillError::NoTrainingData => Some(CONFIG),
        DistillError::Io { .. } | DistillError::Checkpoint(_) => Some(INPUT),
        DistillError::Unet(UnetError::InvalidArch(_)) => Some(CONFIG),
        DistillError::Dataset(d) => dataset_code(d),
        DistillError::Signal(s) => signal_code(s),
        DistillError::Metric(MetricError::Empty) => Some(CONFIG),
        _ => None,
    }
}

/// Exit status for a failed command: 2 for configuration and validation
/// errors, 3 for unreadable or malformed inputs, 4 for everything else.
pub fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        let code = if cause.is::<UsageError>() || cause.is::<serde_json::Error>() {
            Some(CONFIG)
        } else if cause.is::<InputError>() || cause.is::<CheckpointError>() {
            Some(INPUT)
        } else if let Some(e) = cause.downcast_ref::<DistillError>() {
            distill_code(e)
        } else if let Some(e) = cause.downcast_ref::<DatasetError>() {
            dataset_code(e)
        } else if let Some(e) = cause.downcast_ref::<SignalError>() {
            signal_code(e)
        } else if let Some(UnetError::InvalidArch(_)) = cause.downcast_ref::<UnetError>() {
            Some(CONFIG)
        } else if let Some(MetricError::Empty) = cause.downcast_ref::<MetricError>() {
            Some(CONFIG)
        } else {
            None
        };
        if let Some(c) = code {
            return c;
        }
    }
    RUNTIME
}
