//! Leakdown test: decides whether the top CPA guess stands out from the rest.
//!
//! Each guess gets a distance `d[k] = r[k] - mean(r)`, the mean taken over
//! every guess in the summary (the best one included). The best guess is
//! accepted when its distance exceeds the threshold `lambda`.

mod sweep;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use sweep::{
    AttackPipeline, ExperimentReport, OperatingRange, SweepPoint, SweepSpec, SweepVariable,
};

use crate::aes::AesKey;
use crate::cpa::{self, CpaError, GuessSummary, SelectionKind};
use crate::dsp::DspError;
use crate::sim::SimError;
use crate::traceset::TraceSet;

/// Threshold used when none is given.
pub const DEFAULT_LAMBDA: f64 = 0.095;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LeakdownError {
    #[error("guess summary is empty")]
    EmptySummary,
    #[error("threshold must be a finite value >= 0, got {0}")]
    InvalidLambda(f64),
    #[error(transparent)]
    Cpa(#[from] CpaError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("supply voltage {voltage} V outside the operating range {min}..={max} V")]
    OutOfOperatingRange { voltage: f64, min: f64, max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Success,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakdownVerdict {
    pub guesses: Vec<u8>,
    pub d: Vec<f64>,
    pub best_guess: u8,
    pub best_distance: f64,
    pub lambda: f64,
    pub verdict: Verdict,
}

impl LeakdownVerdict {
    pub fn is_success(&self) -> bool {
        self.verdict == Verdict::Success
    }
}

pub fn leakdown_test(summary: &GuessSummary, lambda: f64) -> Result<LeakdownVerdict, LeakdownError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(LeakdownError::InvalidLambda(lambda));
    }
    let r = &summary.r;
    if r.is_empty() {
        return Err(LeakdownError::EmptySummary);
    }
    let mut sum = 0.0;
    for v in r {
        sum += v;
    }
    let mean = sum / r.len() as f64;
    let d: Vec<f64> = r.iter().map(|v| v - mean).collect();
    let mut best = 0;
    for (i, v) in d.iter().enumerate() {
        if *v > d[best] {
            best = i;
        }
    }
    let best_distance = d[best];
    Ok(LeakdownVerdict {
        guesses: summary.guesses.clone(),
        best_guess: summary.guesses[best],
        best_distance,
        lambda,
        verdict: if best_distance > lambda {
            Verdict::Success
        } else {
            Verdict::Failed
        },
        d,
    })
}

/// Outcome of attacking several key bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRecovery {
    /// Byte positions attacked, in order.
    pub bytes: Vec<usize>,
    /// Best guess per attacked byte.
    pub guesses: Vec<u8>,
    pub verdicts: Vec<LeakdownVerdict>,
    pub summaries: Vec<GuessSummary>,
    /// Known key bytes matched by the best guess, when the set stores a key.
    pub correct_count: Option<usize>,
    /// Known key bytes matched by the best guess *and* accepted by the test.
    pub success_count: Option<usize>,
}

impl KeyRecovery {
    /// Full key when all 16 bytes were attacked.
    pub fn key_guess(&self) -> Option<AesKey> {
        if self.bytes != (0..16).collect::<Vec<_>>() {
            return None;
        }
        let mut k = [0u8; 16];
        k.copy_from_slice(&self.guesses);
        Some(AesKey(k))
    }

    pub fn accepted(&self) -> usize {
        self.verdicts.iter().filter(|v| v.is_success()).count()
    }
}

/// CPA plus leakdown on each listed byte.
pub fn recover_bytes(
    ts: &TraceSet,
    kind: SelectionKind,
    lambda: f64,
    bytes: &[usize],
    window: Option<(usize, usize)>,
) -> Result<KeyRecovery, LeakdownError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(LeakdownError::InvalidLambda(lambda));
    }
    let summaries: Vec<GuessSummary> = cpa::run_cpa_bytes(ts, kind, bytes, window)?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    let verdicts = summaries
        .iter()
        .map(|s| leakdown_test(s, lambda))
        .collect::<Result<Vec<_>, _>>()?;
    let guesses: Vec<u8> = verdicts.iter().map(|v| v.best_guess).collect();
    let (correct_count, success_count) = match ts.key() {
        Some(key) => {
            let hits = bytes.iter().zip(&verdicts).filter(|(&b, v)| v.best_guess == key.0[b]);
            let correct = hits.clone().count();
            let success = hits.filter(|(_, v)| v.is_success()).count();
            (Some(correct), Some(success))
        }
        None => (None, None),
    };
    Ok(KeyRecovery {
        bytes: bytes.to_vec(),
        guesses,
        verdicts,
        summaries,
        correct_count,
        success_count,
    })
}

/// Attacks all 16 key bytes.
pub fn recover_key(ts: &TraceSet, kind: SelectionKind, lambda: f64) -> Result<KeyRecovery, LeakdownError> {
    let bytes: Vec<usize> = (0..16).collect();
    recover_bytes(ts, kind, lambda, &bytes, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{self, ChannelConfig, LeakageConfig};
    use proptest::prelude::*;

    fn example2() -> GuessSummary {
        GuessSummary {
            guesses: vec![0x01, 0x02, 0x03],
            r: vec![0.69, 0.99, 0.98],
            argmax_time: vec![0; 3],
        }
    }

    #[test]
    fn example2_distances_and_verdict() {
        let v = leakdown_test(&example2(), 0.095).unwrap();
        for (got, want) in v.d.iter().zip([-0.20, 0.10, 0.09]) {
            assert!((got - want).abs() <= 0.005, "{:?}", v.d);
        }
        assert_eq!(v.best_guess, 0x02);
        assert_eq!(v.verdict, Verdict::Success);
        assert_eq!(leakdown_test(&example2(), 0.2).unwrap().verdict, Verdict::Failed);
    }

    #[test]
    fn uniform_r_fails() {
        let s = GuessSummary {
            guesses: (0..=255).collect(),
            r: vec![0.4; 256],
            argmax_time: vec![0; 256],
        };
        let v = leakdown_test(&s, 1e-9).unwrap();
        assert!(v.d.iter().all(|&d| d.abs() < 1e-12));
        assert_eq!(v.verdict, Verdict::Failed);
    }

    #[test]
    fn errors() {
        let empty = GuessSummary {
            guesses: vec![],
            r: vec![],
            argmax_time: vec![],
        };
        assert_eq!(leakdown_test(&empty, 0.1), Err(LeakdownError::EmptySummary));
        assert_eq!(
            leakdown_test(&example2(), -1.0),
            Err(LeakdownError::InvalidLambda(-1.0))
        );
    }

    #[test]
    fn noiseless_key_recovery() {
        let key = sim::random_key(21);
        let cfg = LeakageConfig {
            rng_seed: 21,
            samples_per_op: 32,
            ..LeakageConfig::default().noiseless()
        };
        let ts = sim::simulate_traces(&key, 500, &cfg, &ChannelConfig::Direct).unwrap();
        let rec = recover_key(&ts, SelectionKind::SboxHw, 0.1).unwrap();
        assert_eq!(rec.correct_count, Some(16));
        assert_eq!(rec.success_count, Some(16));
        assert_eq!(rec.key_guess(), Some(key));
        assert_eq!(rec, recover_key(&ts, SelectionKind::SboxHw, 0.1).unwrap());

        let mut hidden = ts.clone();
        hidden.forget_key();
        let rec = recover_bytes(&hidden, SelectionKind::SboxHw, 0.1, &[3], None).unwrap();
        assert_eq!(rec.correct_count, None);
        assert_eq!(rec.guesses, vec![key.0[3]]);
        assert_eq!(rec.key_guess(), None);
    }

    proptest! {
        #[test]
        fn distance_properties(
            r in prop::collection::vec(0.0f64..1.0, 1..256),
            lambda in 0.0f64..0.5,
            c in 0.01f64..10.0,
        ) {
            let s = GuessSummary {
                guesses: (0..r.len()).map(|i| i as u8).collect(),
                argmax_time: vec![0; r.len()],
                r: r.clone(),
            };
            let v = leakdown_test(&s, lambda).unwrap();
            prop_assert!(v.d.iter().sum::<f64>().abs() < 1e-9);
            prop_assert_eq!(v.is_success(), v.best_distance > lambda);
            if v.is_success() {
                prop_assert!(leakdown_test(&s, lambda * 0.5).unwrap().is_success());
            }
            let scaled = GuessSummary { r: r.iter().map(|x| x * c).collect(), ..s.clone() };
            let vs = leakdown_test(&scaled, lambda).unwrap();
            prop_assert_eq!(vs.best_guess, v.best_guess);
            for (a, b) in vs.d.iter().zip(&v.d) {
                prop_assert!((a - c * b).abs() < 1e-9);
            }
        }
    }
}
