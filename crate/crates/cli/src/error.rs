use std::error::Error;
use std::fmt;

use wakeword_core::audio::AudioError;
use wakeword_core::checkpoint::CheckpointError;
use wakeword_core::corpus::CorpusError;
use wakeword_core::decode::DecodeError;
use wakeword_core::eval::EvalError;
use wakeword_core::pipeline::PipelineError;
use wakeword_core::train::TrainError;

pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_MISSING: u8 = 3;
pub const EXIT_CONFIG: u8 = 4;
pub const EXIT_INFEASIBLE: u8 = 5;

/// An error that already knows its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl Error for Failure {}

fn audio_of<'a>(e: &'a (dyn Error + 'static)) -> Option<&'a AudioError> {
    if let Some(a) = e.downcast_ref::<AudioError>() {
        return Some(a);
    }
    fn pipeline(p: &PipelineError) -> Option<&AudioError> {
        match p {
            PipelineError::Audio(a) => Some(a),
            _ => None,
        }
    }
    if let Some(CorpusError::Audio(a)) = e.downcast_ref::<CorpusError>() {
        return Some(a);
    }
    if let Some(p) = e.downcast_ref::<PipelineError>() {
        return pipeline(p);
    }
    match e.downcast_ref::<TrainError>() {
        Some(TrainError::Pipeline(p)) => pipeline(p),
        _ => None,
    }
}

fn classify(e: &(dyn Error + 'static)) -> Option<u8> {
    if let Some(f) = e.downcast_ref::<Failure>() {
        return Some(f.code);
    }
    if let Some(io) = e.downcast_ref::<std::io::Error>() {
        if io.kind() == std::io::ErrorKind::NotFound {
            return Some(EXIT_MISSING);
        }
    }
    if let Some(a) = audio_of(e) {
        return Some(if a.is_not_found() { EXIT_MISSING } else { EXIT_CONFIG });
    }
    if let Some(c) = e.downcast_ref::<CheckpointError>() {
        return match c {
            CheckpointError::ConfigMismatch { .. } | CheckpointError::DimMismatch(_) => Some(EXIT_CONFIG),
            _ => None,
        };
    }
    if let Some(c) = e.downcast_ref::<CorpusError>() {
        return match c {
            CorpusError::InvalidParameter(_) | CorpusError::Inventory(_) => Some(EXIT_CONFIG),
            CorpusError::Empty
            | CorpusError::NoTrainSpeakers { .. }
            | CorpusError::EmptyNoiseBank
            | CorpusError::AugmentationRejected { .. } => Some(EXIT_INFEASIBLE),
            _ => None,
        };
    }
    if let Some(t) = e.downcast_ref::<TrainError>() {
        return match t {
            TrainError::InvalidConfig(_) => Some(EXIT_CONFIG),
            TrainError::MissingAlignments(_) | TrainError::NoData(_) => Some(EXIT_INFEASIBLE),
            _ => None,
        };
    }
    if let Some(d) = e.downcast_ref::<DecodeError>() {
        return match d {
            DecodeError::WindowTooShort { .. } | DecodeError::InvalidConfig(_) => Some(EXIT_CONFIG),
            DecodeError::Csv { .. } => None,
        };
    }
    if let Some(PipelineError::Decode(DecodeError::WindowTooShort { .. } | DecodeError::InvalidConfig(_))) =
        e.downcast_ref::<PipelineError>()
    {
        return Some(EXIT_CONFIG);
    }
    if e.downcast_ref::<EvalError>().is_some() {
        return Some(EXIT_INFEASIBLE);
    }
    if let Some(PipelineError::Eval(_)) = e.downcast_ref::<PipelineError>() {
        return Some(EXIT_INFEASIBLE);
    }
    None
}

/// Exit code for an error: the first recognised cause in its chain wins.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain().find_map(classify).unwrap_or(EXIT_INTERNAL)
}

/// The whole cause chain on a single line.
pub fn one_line(err: &anyhow::Error) -> String {
    format!("{err:#}").replace('\n', " ")
}
