//! Supply-voltage coupling side-channel lab.
//!
//! An AES-128 victim leaks the Hamming weight of its intermediate states
//! onto a shared supply rail. The simulator renders that leakage through a
//! direct probe, a regulator or an AM radio link; the DSP stage cleans the
//! traces; correlation power analysis ranks key guesses; and the leakdown
//! test decides whether the best guess stands out.

pub mod aes;
pub mod cpa;
pub mod dsp;
pub mod leakdown;
pub mod seed;
pub mod sim;
pub mod traceio;
pub mod traceset;

pub use aes::{AesBlock, AesError, AesKey, OpKind, RoundTrace};
pub use cpa::{CorrelationMatrix, CpaError, GuessSummary, SelectionKind, SelectionModel};
pub use dsp::{DspError, FilterKind, FilterSpec, SnrReport};
pub use leakdown::{
    AttackPipeline, ExperimentReport, KeyRecovery, LeakdownError, LeakdownVerdict, OperatingRange,
    SweepPoint, SweepSpec, SweepVariable, Verdict, DEFAULT_LAMBDA,
};
pub use sim::{ChannelConfig, Granularity, LeakageConfig, OpBaselines, SimError};
pub use traceio::TraceIoError;
pub use traceset::{TraceSet, TraceSetError};
