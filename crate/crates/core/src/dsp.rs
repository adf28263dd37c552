//! Trace conditioning: linear detrending, moving-average filters, alignment,
//! averaging of repeated captures, and SNR estimation.
//!
//! Per-trace kernels work on `f64` slices. The `*_set` wrappers apply them to
//! every row of a [`TraceSet`] and store the result back as `f32`.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::traceset::TraceSet;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DspError {
    #[error("need at least 2 samples to fit a line, got {0}")]
    InsufficientSamples(usize),
    #[error("filter window {window} exceeds trace length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error("filter window must be odd and positive, got {0}")]
    InvalidWindow(usize),
    #[error("trace set is empty")]
    EmptySet,
    #[error("reference index {index} out of range for {count} traces")]
    ReferenceOutOfRange { index: usize, count: usize },
    #[error("{traces} traces cannot be split into groups of {group}")]
    GroupMismatch { traces: usize, group: usize },
    #[error("averaging group {group} mixes different plaintexts; simulate with a repeat count equal to the averaging factor")]
    MixedPlaintextGroup { group: usize },
    #[error("noise power is zero; SNR is unbounded")]
    ZeroNoise,
    #[error("need at least 2 traces, got {0}")]
    InsufficientTraces(usize),
    #[error("reference signature has {got} samples, traces have {expected}")]
    LengthMismatch { got: usize, expected: usize },
}

/// Subtracts the least-squares line from `trace`.
pub fn detrend_linear(trace: &[f64]) -> Result<Vec<f64>, DspError> {
    let n = trace.len();
    if n < 2 {
        return Err(DspError::InsufficientSamples(n));
    }
    let (slope, intercept) = fit_line(trace);
    Ok(trace
        .iter()
        .enumerate()
        .map(|(i, &y)| y - (intercept + slope * i as f64))
        .collect())
}

/// Least-squares `(slope, intercept)` of `y` against sample index.
pub fn fit_line(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, &v) in y.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxy += dx * (v - y_mean);
        sxx += dx * dx;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, y_mean - slope * x_mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterKind {
    LowPass,
    HighPass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    /// Odd window length in samples.
    pub window: usize,
}

impl FilterSpec {
    pub fn low_pass(window: usize) -> Self {
        Self {
            kind: FilterKind::LowPass,
            window,
        }
    }

    pub fn high_pass(window: usize) -> Self {
        Self {
            kind: FilterKind::HighPass,
            window,
        }
    }
}

/// Centered moving average. Near the edges the window shrinks symmetrically
/// so every output sample is an unweighted mean of a window centered on it.
pub fn moving_average(trace: &[f64], window: usize) -> Result<Vec<f64>, DspError> {
    if window == 0 || window % 2 == 0 {
        return Err(DspError::InvalidWindow(window));
    }
    let n = trace.len();
    if window > n {
        return Err(DspError::WindowTooLarge { window, len: n });
    }
    let half = (window - 1) / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &v in trace {
        acc += v;
        prefix.push(acc);
    }
    Ok((0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let (lo, hi) = (i - h, i + h + 1);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect())
}

pub fn filter(trace: &[f64], spec: FilterSpec) -> Result<Vec<f64>, DspError> {
    let low = moving_average(trace, spec.window)?;
    Ok(match spec.kind {
        FilterKind::LowPass => low,
        FilterKind::HighPass => trace.iter().zip(&low).map(|(x, l)| x - l).collect(),
    })
}

/// Circular shift: `out[t] = x[(t - lag) mod n]`.
pub fn roll(x: &[f64], lag: isize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let k = lag.rem_euclid(n as isize) as usize;
    let mut out = Vec::with_capacity(n);
    out.extend_from_slice(&x[n - k..]);
    out.extend_from_slice(&x[..n - k]);
    out
}

/// Lag in `[-max_lag, max_lag]` that, applied with [`roll`], maximizes the
/// mean-centered cross-correlation of `trace` with `reference`. Ties go to
/// the smallest `|lag|`, then to the negative one.
pub fn best_lag(reference: &[f64], trace: &[f64], max_lag: usize) -> isize {
    let n = reference.len().min(trace.len());
    if n == 0 {
        return 0;
    }
    let max_lag = max_lag.min(n - 1) as isize;
    let rm = reference[..n].iter().sum::<f64>() / n as f64;
    let xm = trace[..n].iter().sum::<f64>() / n as f64;
    let r: Vec<f64> = reference[..n].iter().map(|v| v - rm).collect();
    let x: Vec<f64> = trace[..n].iter().map(|v| v - xm).collect();
    let score = |lag: isize| -> f64 {
        let k = lag.rem_euclid(n as isize) as usize;
        // rolled[t] = x[(t - k) mod n]
        let mut s = 0.0;
        for t in 0..n {
            let src = if t >= k { t - k } else { t + n - k };
            s += r[t] * x[src];
        }
        s
    };
    let mut best = (0isize, score(0));
    for m in 1..=max_lag {
        for lag in [-m, m] {
            let s = score(lag);
            if s > best.1 {
                best = (lag, s);
            }
        }
    }
    best.0
}

fn rows_f64(ts: &TraceSet) -> Vec<Vec<f64>> {
    ts.traces()
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect()
}

fn to_matrix(rows: Vec<Vec<f64>>, samples: usize) -> Array2<f32> {
    let mut out = Array2::zeros((rows.len(), samples));
    for (mut dst, src) in out.rows_mut().into_iter().zip(rows) {
        for (d, s) in dst.iter_mut().zip(src) {
            *d = s as f32;
        }
    }
    out
}

fn map_rows<F>(ts: TraceSet, f: F) -> Result<TraceSet, DspError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, DspError> + Sync,
{
    let s = ts.sample_count();
    let rows = rows_f64(&ts)
        .par_iter()
        .map(|r| f(r))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ts
        .with_traces(to_matrix(rows, s))
        .expect("row count preserved"))
}

fn push_chain(ts: &mut TraceSet, step: &str) {
    let chain = match ts.meta().get("filter_chain") {
        Some(prev) if !prev.is_empty() => format!("{prev},{step}"),
        _ => step.to_string(),
    };
    ts.set_meta("filter_chain", chain);
}

pub fn detrend_set(ts: TraceSet) -> Result<TraceSet, DspError> {
    if !ts.is_empty() && ts.sample_count() < 2 {
        return Err(DspError::InsufficientSamples(ts.sample_count()));
    }
    let mut out = map_rows(ts, detrend_linear)?;
    push_chain(&mut out, "detrend");
    Ok(out)
}

pub fn filter_set(ts: TraceSet, spec: FilterSpec) -> Result<TraceSet, DspError> {
    if spec.window == 0 || spec.window % 2 == 0 {
        return Err(DspError::InvalidWindow(spec.window));
    }
    if spec.window > ts.sample_count() {
        return Err(DspError::WindowTooLarge {
            window: spec.window,
            len: ts.sample_count(),
        });
    }
    let mut out = map_rows(ts, |r| filter(r, spec))?;
    let tag = match spec.kind {
        FilterKind::LowPass => "lowpass",
        FilterKind::HighPass => "highpass",
    };
    push_chain(&mut out, &format!("{tag}({})", spec.window));
    Ok(out)
}

/// Aligns every trace to trace `reference_index` by circular shifts of at
/// most `max_lag` samples. Returns the aligned set and the applied lags; the
/// lags are also recorded in the metadata under `align_lags`.
pub fn align(
    ts: TraceSet,
    reference_index: usize,
    max_lag: usize,
) -> Result<(TraceSet, Vec<isize>), DspError> {
    if ts.is_empty() {
        return Err(DspError::EmptySet);
    }
    if reference_index >= ts.trace_count() {
        return Err(DspError::ReferenceOutOfRange {
            index: reference_index,
            count: ts.trace_count(),
        });
    }
    let rows = rows_f64(&ts);
    let reference = &rows[reference_index];
    let lags: Vec<isize> = rows
        .par_iter()
        .map(|r| best_lag(reference, r, max_lag))
        .collect();
    let s = ts.sample_count();
    let shifted: Vec<Vec<f64>> = rows
        .iter()
        .zip(&lags)
        .map(|(r, &lag)| roll(r, lag))
        .collect();
    let mut out = ts
        .with_traces(to_matrix(shifted, s))
        .expect("row count preserved");
    let lag_list = lags
        .iter()
        .map(|l| l.to_string())
        .collect::<Vec<_>>()
        .join(",");
    out.set_meta("align_lags", lag_list);
    push_chain(&mut out, &format!("align({max_lag})"));
    Ok((out, lags))
}

/// Averages consecutive groups of `n` traces that share a plaintext:
/// each output sample is the mean of the group's samples at that index.
pub fn average(ts: TraceSet, n: usize) -> Result<TraceSet, DspError> {
    let t = ts.trace_count();
    if n == 0 || t % n != 0 {
        return Err(DspError::GroupMismatch {
            traces: t,
            group: n,
        });
    }
    for (g, group) in ts.plaintexts().chunks(n).enumerate() {
        if group.iter().any(|pt| *pt != group[0]) {
            return Err(DspError::MixedPlaintextGroup { group: g });
        }
    }
    if n == 1 {
        let mut out = ts;
        push_chain(&mut out, "avg(1)");
        return Ok(out);
    }
    let s = ts.sample_count();
    let groups = t / n;
    let samples = ts.traces();
    let mut out = Array2::<f32>::zeros((groups, s));
    let mut acc = vec![0.0f64; s];
    for g in 0..groups {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for i in g * n..(g + 1) * n {
            for (a, &v) in acc.iter_mut().zip(samples.row(i)) {
                *a += v as f64;
            }
        }
        for (d, a) in out.row_mut(g).iter_mut().zip(&acc) {
            *d = (a / n as f64) as f32;
        }
    }
    let keep: Vec<usize> = (0..groups).map(|g| g * n).collect();
    let mut averaged = ts
        .select(&keep)
        .with_traces(out)
        .expect("row count preserved");
    push_chain(&mut averaged, &format!("avg({n})"));
    Ok(averaged)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    pub snr_db: f64,
    pub signal_power: f64,
    pub noise_power: f64,
}

impl SnrReport {
    fn from_powers(signal_power: f64, noise_power: f64) -> Result<Self, DspError> {
        if noise_power <= 0.0 {
            return Err(DspError::ZeroNoise);
        }
        Ok(Self {
            snr_db: 10.0 * (signal_power / noise_power).log10(),
            signal_power,
            noise_power,
        })
    }
}

/// `(temporal variance of the mean trace, mean per-sample residual variance)`
/// for one group of repeated captures.
fn group_powers(rows: &[ndarray::ArrayView1<'_, f32>]) -> (f64, f64) {
    let t = rows.len() as f64;
    let s = rows[0].len();
    let mut mean = vec![0.0f64; s];
    for r in rows {
        for (m, &v) in mean.iter_mut().zip(r.iter()) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t);
    let mut resid = 0.0;
    for r in rows {
        for (m, &v) in mean.iter().zip(r.iter()) {
            let d = v as f64 - m;
            resid += d * d;
        }
    }
    let noise = resid / ((t - 1.0) * s as f64);
    (variance(&mean), noise)
}

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
}

/// Empirical SNR of repeated captures of one computation: signal is the
/// temporal variance of the per-sample mean trace, noise is the mean
/// per-sample variance of the residuals around it.
pub fn estimate_snr(ts: &TraceSet) -> Result<SnrReport, DspError> {
    estimate_snr_grouped(ts, ts.trace_count())
}

/// Pooled SNR over consecutive plaintext groups of size `group`
/// (for sets simulated with a repeat count). Powers are averaged across
/// groups before taking the ratio.
pub fn estimate_snr_grouped(ts: &TraceSet, group: usize) -> Result<SnrReport, DspError> {
    let t = ts.trace_count();
    if group < 2 || t < 2 {
        return Err(DspError::InsufficientTraces(group.min(t)));
    }
    if t % group != 0 {
        return Err(DspError::GroupMismatch { traces: t, group });
    }
    let pts = ts.plaintexts();
    let samples = ts.traces();
    let mut signal = 0.0;
    let mut noise = 0.0;
    let groups = t / group;
    for g in 0..groups {
        let range = g * group..(g + 1) * group;
        if pts[range.clone()].iter().any(|p| *p != pts[range.start]) {
            return Err(DspError::MixedPlaintextGroup { group: g });
        }
        let rows: Vec<_> = range.map(|i| samples.row(i)).collect();
        let (sp, np) = group_powers(&rows);
        signal += sp;
        noise += np;
    }
    SnrReport::from_powers(signal / groups as f64, noise / groups as f64)
}

/// SNR against a known noise-free signature: signal is the signature's
/// temporal variance, noise the mean squared residual around it.
pub fn estimate_snr_with_reference(
    ts: &TraceSet,
    signature: &[f64],
) -> Result<SnrReport, DspError> {
    if ts.trace_count() < 2 {
        return Err(DspError::InsufficientTraces(ts.trace_count()));
    }
    if signature.len() != ts.sample_count() {
        return Err(DspError::LengthMismatch {
            got: signature.len(),
            expected: ts.sample_count(),
        });
    }
    let mut resid = 0.0;
    for r in ts.traces().rows() {
        for (&v, s) in r.iter().zip(signature) {
            let d = v as f64 - s;
            resid += d * d;
        }
    }
    let noise = resid / (ts.trace_count() * ts.sample_count()) as f64;
    SnrReport::from_powers(variance(signature), noise)
}

/// Mean of each consecutive `segment_len`-sample segment.
pub fn segment_means(trace: &[f64], segment_len: usize) -> Vec<f64> {
    trace
        .chunks(segment_len.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

/// Indices of strict local maxima (the first and last points count when
/// they exceed their single neighbor).
pub fn local_maxima(x: &[f64]) -> Vec<usize> {
    (0..x.len())
        .filter(|&i| {
            let left = i == 0 || x[i] > x[i - 1];
            let right = i + 1 == x.len() || x[i] > x[i + 1];
            x.len() > 1 && left && right
        })
        .collect()
}
