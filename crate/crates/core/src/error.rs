use thiserror::Error;

pub type Result<T> = std::result::Result<T, AicError>;

#[derive(Debug, Error)]
pub enum AicError {
    #[error("plant dynamics produced a non-finite value in component {component} ({value})")]
    DynamicsBlowup { component: usize, value: f64 },

    #[error("plant state left the simulation envelope: |x| = {norm:.3e}")]
    StateEnvelope { norm: f64 },

    #[error("identifier weights became non-finite")]
    IdentifierDiverged,

    #[error("critic weights became non-finite")]
    CriticDiverged,

    #[error("actor weights became non-finite")]
    ActorDiverged,

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<AicError>,
    },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AicError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        AicError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn at_step(self, step: usize) -> Self {
        match self {
            e @ AicError::AtStep { .. } => e,
            e => AicError::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }

    /// True for numerical divergence of the plant or any of the networks.
    pub fn is_divergence(&self) -> bool {
        match self {
            AicError::DynamicsBlowup { .. }
            | AicError::StateEnvelope { .. }
            | AicError::IdentifierDiverged
            | AicError::CriticDiverged
            | AicError::ActorDiverged => true,
            AicError::AtStep { source, .. } => source.is_divergence(),
            _ => false,
        }
    }
}
