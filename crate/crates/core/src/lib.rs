//! Coupon allocation for two-sided marketplaces that maximizes the expected
//! number of providers with at least one sale.
//!
//! The pipeline runs: [`simulate`] a market and a randomized coupon trial,
//! [`scoring`] per-item sale rates with and without a coupon, [`ser`]
//! per-provider value curves, [`alloc`] coupons under a budget, and
//! [`eval`] the resulting plans against the trial log.

pub mod alloc;
pub mod chart;
pub mod domain;
pub mod eval;
pub mod io;
pub mod pipeline;
pub mod scoring;
pub mod ser;
pub mod simulate;

use thiserror::Error;

pub use domain::{
    validate_dataset, AllocationPlan, BudgetMode, BudgetSpec, Dataset, ItemId, ItemRecord,
    ItemScore, ProviderId,
};

/// Any failure surfaced by the pipeline or the command line.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Validation(#[from] domain::ValidationError),
    #[error(transparent)]
    Score(#[from] domain::ScoreError),
    #[error(transparent)]
    Scoring(#[from] scoring::ScoringError),
    #[error(transparent)]
    Ser(#[from] ser::SerError),
    #[error(transparent)]
    Alloc(#[from] alloc::AllocError),
    #[error(transparent)]
    Sim(#[from] simulate::SimError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Io(#[from] io::IoError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// Process exit status: 2 for invalid input, 3 for an infeasible
    /// allocation, 4 for file-system failures.
    pub fn exit_code(&self) -> i32 {
        use alloc::AllocError as A;
        match self {
            Error::Alloc(A::Io { .. }) => 4,
            Error::Alloc(A::ZeroBaseRate(_)) => 2,
            Error::Alloc(_) => 3,
            Error::Io(e) if !e.is_content_error() => 4,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
