use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    ShapeMismatch { what: &'static str, expected: usize, found: usize },
    #[error("row {row} of {what} is not a distribution (sum {sum})")]
    NotStochastic { what: &'static str, row: usize, sum: f64 },
    #[error("invalid latent spaces: {0}")]
    InvalidSpaces(&'static str),
    #[error("domains mix variants {first:?} and {other:?}")]
    MixedVariants { first: crate::cld::Variant, other: crate::cld::Variant },
    #[error("unknown fixture {0:?}")]
    UnknownFixture(String),
    #[error("index {index} out of range for {what} (size {bound})")]
    IndexOutOfRange { what: &'static str, index: usize, bound: usize },
    #[error("{0} must be at least 1")]
    EmptyRequest(&'static str),
    #[error("pure set is empty")]
    EmptyPureSet,
    #[error("need at least {needed} domains, got {got}")]
    TooFewDomains { needed: usize, got: usize },
    #[error("need at least {needed} examples per domain, got {got}")]
    TooFewExamples { needed: usize, got: usize },
    #[error("pair {0} carries no label")]
    UnlabeledPair(usize),
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(&'static str),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(&'static str),
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: &'static str },
}

pub type Result<T> = core::result::Result<T, Error>;
