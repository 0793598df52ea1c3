use dynfield::data::DataError;
use dynfield::export::ExportError;
use dynfield::metrics::MetricError;
use dynfield::refinement::RefineError;
use dynfield::rendering::RenderError;
use dynfield::training::TrainError;

pub const RUNTIME: u8 = 1;
pub const USAGE: u8 = 2;
pub const INVALID: u8 = 3;
pub const IO: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn runtime(message: impl Into<String>) -> Self {
        Self { code: RUNTIME, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self { code: INVALID, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { code: IO, message: message.into() }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let code = match e {
            DataError::MissingFile { .. } | DataError::MissingPath(_) | DataError::Io { .. } => IO,
            _ => INVALID,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Data(d) => d.into(),
            TrainError::Config(_) | TrainError::MissingMask(_) | TrainError::Diff(_) => Self::config(e.to_string()),
            _ => Self::runtime(e.to_string()),
        }
    }
}

impl From<RenderError> for CliError {
    fn from(e: RenderError) -> Self {
        match e {
            RenderError::InvalidCamera(_) | RenderError::TimeOutOfRange(_) | RenderError::TooFewSamples(_) => {
                Self::config(e.to_string())
            }
            _ => Self::runtime(e.to_string()),
        }
    }
}

impl From<RefineError> for CliError {
    fn from(e: RefineError) -> Self {
        Self::config(e.to_string())
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Render(r) => r.into(),
            _ => Self::config(e.to_string()),
        }
    }
}

impl From<ExportError> for CliError {
    fn from(e: ExportError) -> Self {
        match e {
            ExportError::Data(d) => d.into(),
            ExportError::Ply { .. } => Self::io(e.to_string()),
            _ => Self::config(e.to_string()),
        }
    }
}
