//! Correlation power analysis.
//!
//! For every key-byte guess the selection function predicts a leakage value
//! per trace; the Pearson coefficient between that prediction and the
//! measured samples is computed at every time index. The largest absolute
//! coefficient over time summarizes each guess.
//!
//! Accumulation is two-pass (means first, then centered products) in `f64`
//! over the `f32` samples, and every sum runs over traces in index order.
//! The blocked kernel therefore returns exactly what a naive per-cell
//! implementation returns, bit for bit.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aes::{hamming_distance, hamming_weight, sbox};
use crate::traceset::TraceSet;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CpaError {
    #[error("Hamming-distance model needs the previous state byte")]
    MissingPrevState,
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 observations, got {0}")]
    TooShort(usize),
    #[error("zero variance; correlation undefined")]
    ZeroVariance,
    #[error("CPA needs at least 2 traces, got {0}")]
    InsufficientTraces(usize),
    #[error("time window {start}..{end} not within 0..{samples}")]
    BadWindow {
        start: usize,
        end: usize,
        samples: usize,
    },
    #[error("target byte {0} out of range 0..16")]
    BadTargetByte(usize),
}

/// Which intermediate value the attacker assumes leaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum SelectionKind {
    /// `HW(pt ^ k)`
    XorHw,
    /// `HW(sbox(pt ^ k))`, the first-round SubBytes output.
    #[default]
    SboxHw,
    /// `HD(pt ^ k, sbox(pt ^ k))`: SubBytes input against its output.
    Hd,
    /// The raw byte `pt ^ k` as a number (identity leakage).
    XorValue,
}

impl SelectionKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::XorHw => "xor",
            Self::SboxHw => "sbox",
            Self::Hd => "hd",
            Self::XorValue => "xor-value",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionModel {
    pub kind: SelectionKind,
    pub target_byte: usize,
}

impl SelectionModel {
    pub fn new(kind: SelectionKind, target_byte: usize) -> Result<Self, CpaError> {
        if target_byte >= 16 {
            return Err(CpaError::BadTargetByte(target_byte));
        }
        Ok(Self { kind, target_byte })
    }
}

/// Predicted leakage for one plaintext byte under one key guess.
pub fn select_value(
    pt_byte: u8,
    key_guess: u8,
    kind: SelectionKind,
    prev_byte: Option<u8>,
) -> Result<u32, CpaError> {
    let x = pt_byte ^ key_guess;
    Ok(match kind {
        SelectionKind::XorHw => hamming_weight(x),
        SelectionKind::SboxHw => hamming_weight(sbox(x)),
        SelectionKind::Hd => hamming_distance(prev_byte.ok_or(CpaError::MissingPrevState)?, sbox(x)),
        SelectionKind::XorValue => x as u32,
    })
}

/// Selection value as used by [`run_cpa`]; the HD model pairs the SubBytes
/// input `pt ^ k` with its output.
fn hypothesis(kind: SelectionKind, pt_byte: u8, guess: u8) -> f64 {
    let prev = (kind == SelectionKind::Hd).then_some(pt_byte ^ guess);
    select_value(pt_byte, guess, kind, prev).expect("prev supplied for HD") as f64
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, CpaError> {
    if x.len() != y.len() {
        return Err(CpaError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(CpaError::TooShort(n));
    }
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(CpaError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn mean(x: &[f64]) -> f64 {
    let mut s = 0.0;
    for v in x {
        s += v;
    }
    s / x.len() as f64
}

/// Correlation per key guess (rows) and time sample (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub values: Array2<f64>,
    pub model: SelectionModel,
    pub trace_count: usize,
    /// Absolute sample index of column 0.
    pub time_offset: usize,
    /// Absolute indices of columns with zero variance across traces; their
    /// correlations are reported as 0.
    pub dead_samples: Vec<usize>,
}

/// Peak absolute correlation per guess.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuessSummary {
    /// Key-byte value of each entry.
    pub guesses: Vec<u8>,
    pub r: Vec<f64>,
    /// Absolute sample index where each peak occurs.
    pub argmax_time: Vec<usize>,
}

impl GuessSummary {
    pub fn from_matrix(m: &CorrelationMatrix) -> Self {
        let mut r = Vec::with_capacity(m.values.nrows());
        let mut argmax_time = Vec::with_capacity(m.values.nrows());
        for row in m.values.rows() {
            let (mut best, mut at) = (0.0f64, 0usize);
            for (t, v) in row.iter().enumerate() {
                if v.abs() > best {
                    best = v.abs();
                    at = t;
                }
            }
            r.push(best);
            argmax_time.push(m.time_offset + at);
        }
        Self {
            guesses: (0..=255).collect(),
            r,
            argmax_time,
        }
    }

    /// Keeps only the listed guesses, in the given order.
    pub fn restrict(&self, guesses: &[u8]) -> Self {
        let idx: Vec<usize> = guesses
            .iter()
            .map(|g| {
                self.guesses
                    .iter()
                    .position(|x| x == g)
                    .expect("guess present in summary")
            })
            .collect();
        Self {
            guesses: guesses.to_vec(),
            r: idx.iter().map(|&i| self.r[i]).collect(),
            argmax_time: idx.iter().map(|&i| self.argmax_time[i]).collect(),
        }
    }

    /// Guess with the highest peak correlation (lowest value on ties).
    pub fn best_guess(&self) -> Option<u8> {
        let mut best: Option<(u8, f64)> = None;
        for (&g, &r) in self.guesses.iter().zip(&self.r) {
            if best.map_or(true, |(_, b)| r > b) {
                best = Some((g, r));
            }
        }
        best.map(|(g, _)| g)
    }
}

/// Mean-centered samples of a time window, shared by all byte attacks.
struct CenteredTraces {
    /// T×W row-major.
    xc: Vec<f64>,
    sxx: Vec<f64>,
    traces: usize,
    width: usize,
    offset: usize,
}

impl CenteredTraces {
    fn new(ts: &TraceSet, start: usize, end: usize) -> Self {
        let t = ts.trace_count();
        let w = end - start;
        let samples = ts.traces();
        let mut mean = vec![0.0f64; w];
        for row in samples.rows() {
            for (m, &v) in mean.iter_mut().zip(row.slice(ndarray::s![start..end])) {
                *m += v as f64;
            }
        }
        for m in mean.iter_mut() {
            *m /= t as f64;
        }
        let mut xc = Vec::with_capacity(t * w);
        let mut sxx = vec![0.0f64; w];
        for row in samples.rows() {
            for ((s, m), &v) in sxx
                .iter_mut()
                .zip(&mean)
                .zip(row.slice(ndarray::s![start..end]))
            {
                let d = v as f64 - m;
                xc.push(d);
                *s += d * d;
            }
        }
        Self {
            xc,
            sxx,
            traces: t,
            width: w,
            offset: start,
        }
    }
}

const TIME_BLOCK: usize = 64;
const GUESS_BLOCK: usize = 32;

/// `cov[k][t] = Σ_i hc[i][k] · xc[i][t]`, summed over `i` in order.
/// `hc` is T×G row-major.
fn covariance(hc: &[f64], guesses: usize, x: &CenteredTraces) -> Vec<f64> {
    let (t, w) = (x.traces, x.width);
    let blocks: Vec<Vec<f64>> = (0..w.div_ceil(TIME_BLOCK))
        .into_par_iter()
        .map(|b| {
            let t0 = b * TIME_BLOCK;
            let tb = TIME_BLOCK.min(w - t0);
            let mut out = vec![0.0f64; guesses * tb];
            let mut acc = [0.0f64; GUESS_BLOCK * TIME_BLOCK];
            for k0 in (0..guesses).step_by(GUESS_BLOCK) {
                let kb = GUESS_BLOCK.min(guesses - k0);
                acc.iter_mut().for_each(|a| *a = 0.0);
                for i in 0..t {
                    let xrow = &x.xc[i * w + t0..i * w + t0 + tb];
                    let hrow = &hc[i * guesses + k0..i * guesses + k0 + kb];
                    for (kk, &h) in hrow.iter().enumerate() {
                        let a = &mut acc[kk * TIME_BLOCK..kk * TIME_BLOCK + tb];
                        for (av, &xv) in a.iter_mut().zip(xrow) {
                            *av += h * xv;
                        }
                    }
                }
                for kk in 0..kb {
                    out[(k0 + kk) * tb..(k0 + kk + 1) * tb]
                        .copy_from_slice(&acc[kk * TIME_BLOCK..kk * TIME_BLOCK + tb]);
                }
            }
            out
        })
        .collect();
    let mut cov = vec![0.0f64; guesses * w];
    for (b, block) in blocks.into_iter().enumerate() {
        let t0 = b * TIME_BLOCK;
        let tb = TIME_BLOCK.min(w - t0);
        for k in 0..guesses {
            cov[k * w + t0..k * w + t0 + tb].copy_from_slice(&block[k * tb..(k + 1) * tb]);
        }
    }
    cov
}

fn correlate(ts: &TraceSet, x: &CenteredTraces, model: SelectionModel) -> CorrelationMatrix {
    let t = x.traces;
    const G: usize = 256;
    // hypotheses, centered, T×G
    let mut hc = vec![0.0f64; t * G];
    for (i, pt) in ts.plaintexts().iter().enumerate() {
        let b = pt.0[model.target_byte];
        for k in 0..G {
            hc[i * G + k] = hypothesis(model.kind, b, k as u8);
        }
    }
    let mut hmean = [0.0f64; G];
    for i in 0..t {
        for k in 0..G {
            hmean[k] += hc[i * G + k];
        }
    }
    for m in hmean.iter_mut() {
        *m /= t as f64;
    }
    let mut shh = [0.0f64; G];
    for i in 0..t {
        for k in 0..G {
            let d = hc[i * G + k] - hmean[k];
            hc[i * G + k] = d;
            shh[k] += d * d;
        }
    }

    let cov = covariance(&hc, G, x);
    let w = x.width;
    let mut values = Array2::<f64>::zeros((G, w));
    for k in 0..G {
        for j in 0..w {
            values[[k, j]] = if shh[k] == 0.0 || x.sxx[j] == 0.0 {
                0.0
            } else {
                (cov[k * w + j] / (shh[k] * x.sxx[j]).sqrt()).clamp(-1.0, 1.0)
            };
        }
    }
    let dead_samples = x
        .sxx
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == 0.0)
        .map(|(j, _)| x.offset + j)
        .collect();
    CorrelationMatrix {
        values,
        model,
        trace_count: t,
        time_offset: x.offset,
        dead_samples,
    }
}

fn check_window(ts: &TraceSet, window: Option<(usize, usize)>) -> Result<(usize, usize), CpaError> {
    if ts.trace_count() < 2 {
        return Err(CpaError::InsufficientTraces(ts.trace_count()));
    }
    let s = ts.sample_count();
    let (start, end) = window.unwrap_or((0, s));
    if start >= end || end > s {
        return Err(CpaError::BadWindow {
            start,
            end,
            samples: s,
        });
    }
    Ok((start, end))
}

/// Correlation of every key guess against every sample in `window`
/// (half-open, whole trace when `None`).
pub fn run_cpa(
    ts: &TraceSet,
    model: SelectionModel,
    window: Option<(usize, usize)>,
) -> Result<(CorrelationMatrix, GuessSummary), CpaError> {
    if model.target_byte >= 16 {
        return Err(CpaError::BadTargetByte(model.target_byte));
    }
    let (start, end) = check_window(ts, window)?;
    let x = CenteredTraces::new(ts, start, end);
    let m = correlate(ts, &x, model);
    let summary = GuessSummary::from_matrix(&m);
    Ok((m, summary))
}

/// [`run_cpa`] for each of `bytes`, centering the traces only once.
pub fn run_cpa_bytes(
    ts: &TraceSet,
    kind: SelectionKind,
    bytes: &[usize],
    window: Option<(usize, usize)>,
) -> Result<Vec<(CorrelationMatrix, GuessSummary)>, CpaError> {
    if let Some(&b) = bytes.iter().find(|&&b| b >= 16) {
        return Err(CpaError::BadTargetByte(b));
    }
    let (start, end) = check_window(ts, window)?;
    let x = CenteredTraces::new(ts, start, end);
    Ok(bytes
        .iter()
        .map(|&b| {
            let m = correlate(ts, &x, SelectionModel { kind, target_byte: b });
            let s = GuessSummary::from_matrix(&m);
            (m, s)
        })
        .collect())
}

/// Peak-correlation summaries for key bytes 0..16, in order.
pub fn run_cpa_all_bytes(ts: &TraceSet, kind: SelectionKind) -> Result<Vec<GuessSummary>, CpaError> {
    let bytes: Vec<usize> = (0..16).collect();
    Ok(run_cpa_bytes(ts, kind, &bytes, None)?
        .into_iter()
        .map(|(_, s)| s)
        .collect())
}
