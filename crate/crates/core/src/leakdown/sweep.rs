//! Monte-Carlo experiments: attack success against trace count or supply
//! voltage.
//!
//! Repetition `i` derives its own seed from the experiment seed, and that
//! seed fixes the key, plaintexts and noise of the repetition for every
//! sweep point. Points therefore differ only in the swept variable.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{recover_key, LeakdownError, DEFAULT_LAMBDA};
use crate::aes::AesBlock;
use crate::cpa::SelectionKind;
use crate::dsp;
use crate::seed::{self, Domain};
use crate::sim::{self, ChannelConfig, LeakageConfig};
use crate::traceset::TraceSet;

/// Processing applied to simulated traces before the attack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackPipeline {
    /// Captures per plaintext; also the averaging factor.
    pub repeat: usize,
    pub detrend: bool,
    pub kind: SelectionKind,
    pub lambda: f64,
}

impl Default for AttackPipeline {
    fn default() -> Self {
        Self {
            repeat: 10,
            detrend: true,
            kind: SelectionKind::SboxHw,
            lambda: DEFAULT_LAMBDA,
        }
    }
}

impl AttackPipeline {
    /// Detrends (if enabled) and averages a raw simulated set.
    pub fn condition(&self, ts: TraceSet) -> Result<TraceSet, LeakdownError> {
        let ts = if self.detrend { dsp::detrend_set(ts)? } else { ts };
        Ok(dsp::average(ts, self.repeat)?)
    }
}

/// Supply range the victim is rated for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingRange {
    pub min: f64,
    pub max: f64,
}

impl Default for OperatingRange {
    fn default() -> Self {
        Self { min: 1.8, max: 5.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub leakage: LeakageConfig,
    pub channel: ChannelConfig,
    pub pipeline: AttackPipeline,
    pub repetitions: usize,
    pub seed: u64,
    /// Fixed-plaintext captures used to measure SNR at each point.
    pub snr_traces: usize,
    pub operating_range: OperatingRange,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            leakage: LeakageConfig::default(),
            channel: ChannelConfig::Direct,
            pipeline: AttackPipeline::default(),
            repetitions: 20,
            seed: 0,
            snr_traces: 200,
            operating_range: OperatingRange::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepVariable {
    TraceCount,
    InputVoltage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub x_value: f64,
    /// Key bytes both ranked first and accepted by the leakdown test,
    /// over `16 × repetitions`.
    pub success_rate: f64,
    /// Repetitions where all 16 bytes succeeded.
    pub full_key_rate: f64,
    pub mean_best_distance: f64,
    pub snr_db: f64,
    /// Key bytes ranked first regardless of the verdict.
    pub recovery_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub sweep_variable: SweepVariable,
    pub points: Vec<SweepPoint>,
    pub repetitions: usize,
    pub seed: u64,
    pub spec: SweepSpec,
}

pub const CSV_HEADER: [&str; 5] = [
    "x_value",
    "success_rate",
    "full_key_rate",
    "mean_best_distance",
    "snr_db",
];

impl ExperimentReport {
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for p in &self.points {
            w.write_record([
                p.x_value.to_string(),
                p.success_rate.to_string(),
                p.full_key_rate.to_string(),
                p.mean_best_distance.to_string(),
                p.snr_db.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

struct RepOutcome {
    /// Per point: (successful bytes, ranked-first bytes, full key, sum of best distances)
    points: Vec<(usize, usize, bool, f64)>,
    /// Per point: (signal power, noise power)
    snr: Vec<(f64, f64)>,
}

impl SweepSpec {
    fn validate(&self) -> Result<(), LeakdownError> {
        let bad = |m: &str| Err(LeakdownError::InvalidSweep(m.to_string()));
        if self.repetitions == 0 {
            return bad("repetitions must be >= 1");
        }
        if self.pipeline.repeat == 0 {
            return bad("repeat must be >= 1");
        }
        if self.snr_traces < 2 {
            return bad("snr_traces must be >= 2");
        }
        if !(self.pipeline.lambda >= 0.0 && self.pipeline.lambda.is_finite()) {
            return Err(LeakdownError::InvalidLambda(self.pipeline.lambda));
        }
        self.leakage.validate()?;
        self.channel.validate()?;
        Ok(())
    }

    fn rep_config(&self, rep: usize) -> (crate::aes::AesKey, LeakageConfig) {
        let rep_seed = seed::derive_seed(self.seed, Domain::Repetition, rep as u64);
        let cfg = LeakageConfig {
            rng_seed: rep_seed,
            ..self.leakage.clone()
        };
        (sim::random_key(rep_seed), cfg)
    }

    fn measure_snr(&self, key: &crate::aes::AesKey, cfg: &LeakageConfig) -> Result<(f64, f64), LeakdownError> {
        let snr_seed = seed::derive_seed(cfg.rng_seed, Domain::Snr, 0);
        let pt = AesBlock(rand::Rng::random(&mut seed::stream(snr_seed, Domain::Plaintext, 0)));
        let snr_cfg = LeakageConfig {
            rng_seed: snr_seed,
            ..cfg.clone()
        };
        let ts = sim::simulate_fixed_plaintext(key, &pt, self.snr_traces, &snr_cfg, &self.channel)?;
        let r = dsp::estimate_snr(&ts)?;
        Ok((r.signal_power, r.noise_power))
    }

    fn attack(&self, ts: &TraceSet, key: &crate::aes::AesKey) -> Result<(usize, usize, bool, f64), LeakdownError> {
        let conditioned = self.pipeline.condition(ts.clone())?;
        let rec = recover_key(&conditioned, self.pipeline.kind, self.pipeline.lambda)?;
        let mut success = 0;
        let mut ranked = 0;
        let mut dist = 0.0;
        for (b, v) in rec.verdicts.iter().enumerate() {
            dist += v.best_distance;
            if v.best_guess == key.0[b] {
                ranked += 1;
                if v.is_success() {
                    success += 1;
                }
            }
        }
        Ok((success, ranked, success == 16, dist))
    }

    fn aggregate(
        &self,
        variable: SweepVariable,
        xs: &[f64],
        reps: Vec<RepOutcome>,
    ) -> ExperimentReport {
        let n = self.repetitions as f64;
        let points = xs
            .iter()
            .enumerate()
            .map(|(p, &x)| {
                let (mut succ, mut ranked, mut full, mut dist) = (0usize, 0usize, 0usize, 0.0);
                let (mut sig, mut noise) = (0.0, 0.0);
                for r in &reps {
                    let (s, k, f, d) = r.points[p];
                    succ += s;
                    ranked += k;
                    full += f as usize;
                    dist += d;
                    sig += r.snr[p].0;
                    noise += r.snr[p].1;
                }
                SweepPoint {
                    x_value: x,
                    success_rate: succ as f64 / (16.0 * n),
                    full_key_rate: full as f64 / n,
                    mean_best_distance: dist / (16.0 * n),
                    snr_db: 10.0 * (sig / noise).log10(),
                    recovery_rate: ranked as f64 / (16.0 * n),
                }
            })
            .collect();
        ExperimentReport {
            sweep_variable: variable,
            points,
            repetitions: self.repetitions,
            seed: self.seed,
            spec: self.clone(),
        }
    }

    /// Success against the number of raw captures. Each count must be a
    /// multiple of the pipeline's repeat factor.
    pub fn sweep_trace_count(&self, counts: &[usize]) -> Result<ExperimentReport, LeakdownError> {
        self.validate()?;
        if counts.is_empty() {
            return Err(LeakdownError::InvalidSweep("no trace counts given".into()));
        }
        if counts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LeakdownError::InvalidSweep("trace counts must be strictly ascending".into()));
        }
        let r = self.pipeline.repeat;
        if let Some(c) = counts.iter().find(|&&c| c < 2 * r || c % r != 0) {
            return Err(LeakdownError::InvalidSweep(format!(
                "trace count {c} must be a multiple of the repeat factor {r} giving at least 2 averaged traces"
            )));
        }
        let max = *counts.last().expect("non-empty");
        let reps = (0..self.repetitions)
            .into_par_iter()
            .map(|rep| {
                let (key, cfg) = self.rep_config(rep);
                // counts share a prefix of one simulation: trace i depends
                // only on (seed, i)
                let full = sim::simulate_repeated(&key, max, r, &cfg, &self.channel)?;
                let snr = self.measure_snr(&key, &cfg)?;
                let points = counts
                    .iter()
                    .map(|&c| {
                        let idx: Vec<usize> = (0..c).collect();
                        self.attack(&full.select(&idx), &key)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(RepOutcome {
                    snr: vec![snr; counts.len()],
                    points,
                })
            })
            .collect::<Result<Vec<_>, LeakdownError>>()?;
        let xs: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        Ok(self.aggregate(SweepVariable::TraceCount, &xs, reps))
    }

    /// Success against supply voltage at a fixed trace count. Noise stays
    /// as configured; only the rail amplitude scales.
    pub fn sweep_voltage(&self, voltages: &[f64], trace_count: usize) -> Result<ExperimentReport, LeakdownError> {
        self.validate()?;
        if voltages.is_empty() {
            return Err(LeakdownError::InvalidSweep("no voltages given".into()));
        }
        let range = self.operating_range;
        if let Some(&v) = voltages
            .iter()
            .find(|&&v| !(v >= range.min && v <= range.max))
        {
            return Err(LeakdownError::OutOfOperatingRange {
                voltage: v,
                min: range.min,
                max: range.max,
            });
        }
        let mut xs = voltages.to_vec();
        xs.sort_by(|a, b| a.total_cmp(b));
        if xs.windows(2).any(|w| w[0] == w[1]) {
            return Err(LeakdownError::InvalidSweep("duplicate voltages".into()));
        }
        let r = self.pipeline.repeat;
        if trace_count < 2 * r || trace_count % r != 0 {
            return Err(LeakdownError::InvalidSweep(format!(
                "trace count {trace_count} must be a multiple of the repeat factor {r} giving at least 2 averaged traces"
            )));
        }
        let reps = (0..self.repetitions)
            .into_par_iter()
            .map(|rep| {
                let (key, base) = self.rep_config(rep);
                let mut points = Vec::with_capacity(xs.len());
                let mut snr = Vec::with_capacity(xs.len());
                for &v in &xs {
                    let cfg = LeakageConfig {
                        supply_voltage: v,
                        ..base.clone()
                    };
                    let ts = sim::simulate_repeated(&key, trace_count, r, &cfg, &self.channel)?;
                    points.push(self.attack(&ts, &key)?);
                    snr.push(self.measure_snr(&key, &cfg)?);
                }
                Ok(RepOutcome { points, snr })
            })
            .collect::<Result<Vec<_>, LeakdownError>>()?;
        Ok(self.aggregate(SweepVariable::InputVoltage, &xs, reps))
    }
}
