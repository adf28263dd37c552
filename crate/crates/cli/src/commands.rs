use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use psvc_core::{
    cpa, dsp, leakdown, sim, traceio, AesKey, AttackPipeline, FilterSpec, SelectionKind,
    SweepSpec, TraceSet, Verdict, DEFAULT_LAMBDA,
};
use serde::Serialize;
use serde_json::json;

use crate::args::{AttackArgs, FilterArgs, ModelArg, SimulateArgs, SweepArgs, SweepMode};
use crate::config::usage;

/// Process exit status of a command that ran to completion.
pub enum Status {
    Ok,
    NoLeak,
}

fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone().ok_or_else(|| usage(format!("missing required option --{flag}")))
}

fn config_json<T: Serialize>(args: &T) -> String {
    serde_json::to_string(args).expect("arguments serialize")
}

fn read_set(path: &Path) -> Result<TraceSet> {
    Ok(traceio::read_traceset(path)?)
}

fn write_set(ts: &TraceSet, path: &Path) -> Result<()> {
    Ok(traceio::write_traceset(ts, path)?)
}

pub fn simulate(mut a: SimulateArgs) -> Result<Status> {
    a.physics = a.physics.with_defaults();
    a.key.get_or_insert_with(|| "random".into());
    a.traces.get_or_insert(1000);
    a.repeat.get_or_insert(1);
    a.vin.get_or_insert(5.0);
    a.seed.get_or_insert(0);
    a.hide_key.get_or_insert(false);
    let out = required(&a.out, "out")?;
    let seed = a.seed.unwrap();

    let key = match a.key.as_deref().unwrap() {
        "random" => sim::random_key(seed),
        hex => hex
            .parse::<AesKey>()
            .map_err(|e| usage(format!("--key: {e}")))?,
    };
    let ch = a.physics.channel_config();
    let mut cfg = a.physics.leakage(a.vin.unwrap(), seed);
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    ch.validate().map_err(|e| usage(e.to_string()))?;
    let (traces, repeat) = (a.traces.unwrap(), a.repeat.unwrap());
    if traces == 0 || repeat == 0 || traces % repeat != 0 {
        return Err(usage(format!(
            "--traces {traces} must be a positive multiple of --repeat {repeat}"
        )));
    }
    if let Some(target) = a.snr_db {
        cfg.noise_sigma = sim::calibrate_noise_sigma(&key, &cfg, &ch, target)?;
    }
    let snr = sim::nominal_snr_db(&key, &cfg, &ch)?;

    let mut ts = sim::simulate_repeated(&key, traces, repeat, &cfg, &ch)?;
    ts.set_meta("run_config.simulate", config_json(&a));
    ts.set_meta("nominal_snr_db", snr.to_string());
    if a.hide_key.unwrap() {
        ts.forget_key();
    }
    write_set(&ts, &out)?;
    println!(
        "T={} S={} channel={} vin={} seed={} snr_db={:.2} noise_sigma={:.6} out={}",
        ts.trace_count(),
        ts.sample_count(),
        ch.name(),
        cfg.supply_voltage,
        seed,
        snr,
        cfg.noise_sigma,
        out.display()
    );
    Ok(Status::Ok)
}

pub fn filter(mut a: FilterArgs) -> Result<Status> {
    let input = required(&a.input, "in")?;
    let out = required(&a.out, "out")?;
    a.detrend.get_or_insert(false);
    let mut ts = read_set(&input)?;
    let before = ts.trace_count();
    if a.detrend.unwrap() {
        ts = dsp::detrend_set(ts)?;
    }
    if let Some(w) = a.lowpass {
        ts = dsp::filter_set(ts, FilterSpec::low_pass(w))?;
    }
    if let Some(w) = a.highpass {
        ts = dsp::filter_set(ts, FilterSpec::high_pass(w))?;
    }
    if let Some(lag) = a.align {
        ts = dsp::align(ts, 0, lag)?.0;
    }
    if let Some(n) = a.avg {
        ts = dsp::average(ts, n).with_context(|| {
            format!("--avg {n} needs consecutive groups of {n} traces sharing a plaintext (simulate with --repeat {n})")
        })?;
    }
    ts.set_meta("run_config.filter", config_json(&a));
    write_set(&ts, &out)?;
    println!(
        "{} -> {} traces, chain: {}",
        before,
        ts.trace_count(),
        ts.meta().get("filter_chain").map_or("none", String::as_str)
    );
    Ok(Status::Ok)
}

fn parse_window(s: &str) -> Result<(usize, usize)> {
    let bad = || usage(format!("--window {s}: expected START:END"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

#[derive(Serialize)]
struct ByteReport {
    byte: usize,
    guess: u8,
    best_distance: f64,
    peak_r: f64,
    peak_sample: usize,
    verdict: Verdict,
    correct: Option<bool>,
}

pub fn attack(mut a: AttackArgs) -> Result<Status> {
    let input = required(&a.input, "in")?;
    a.model.get_or_insert(ModelArg::Sbox);
    a.lambda.get_or_insert(DEFAULT_LAMBDA);
    let lambda = a.lambda.unwrap();
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(usage(format!("--lambda {lambda} must be >= 0")));
    }
    let bytes: Vec<usize> = match a.byte {
        Some(b) if b < 16 => vec![b],
        Some(b) => return Err(usage(format!("--byte {b} must be below 16"))),
        None => (0..16).collect(),
    };
    let window = a.window.as_deref().map(parse_window).transpose()?;
    let kind: SelectionKind = a.model.unwrap().into();

    let ts = read_set(&input)?;
    if ts.trace_count() < 2 {
        anyhow::bail!(
            "attack needs at least 2 traces, {} holds {}",
            input.display(),
            ts.trace_count()
        );
    }
    let results = cpa::run_cpa_bytes(&ts, kind, &bytes, window)?;

    if let Some(dir) = &a.corr_out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (b, (m, _)) in bytes.iter().zip(&results) {
            let p = dir.join(format!("corr_byte_{b:02}.csv"));
            let f = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
            traceio::write_correlation_csv(m, BufWriter::new(f))
                .with_context(|| format!("writing {}", p.display()))?;
        }
    }

    let mut reports = Vec::new();
    let mut key_hex = vec!["??".to_string(); 16];
    for (&b, (_, summary)) in bytes.iter().zip(&results) {
        let v = leakdown::leakdown_test(summary, lambda)?;
        let idx = summary.guesses.iter().position(|&g| g == v.best_guess).unwrap();
        key_hex[b] = format!("{:02x}", v.best_guess);
        let correct = ts.key().map(|k| k.0[b] == v.best_guess);
        println!(
            "byte {b:2}: guess {:02x}  r={:.4} at sample {}  d={:.4}  {:?}{}",
            v.best_guess,
            summary.r[idx],
            summary.argmax_time[idx],
            v.best_distance,
            v.verdict,
            match correct {
                Some(true) => "  (correct)",
                Some(false) => "  (wrong)",
                None => "",
            }
        );
        reports.push(ByteReport {
            byte: b,
            guess: v.best_guess,
            best_distance: v.best_distance,
            peak_r: summary.r[idx],
            peak_sample: summary.argmax_time[idx],
            verdict: v.verdict,
            correct,
        });
    }
    let failed = reports.iter().filter(|r| r.verdict == Verdict::Failed).count();
    let correct_count = ts
        .key()
        .map(|_| reports.iter().filter(|r| r.correct == Some(true)).count());
    println!("key: {}", key_hex.concat());
    if let Some(c) = correct_count {
        println!("{c}/{} bytes correct", bytes.len());
    }
    println!("{}/{} bytes accepted at lambda {lambda}", bytes.len() - failed, bytes.len());

    if let Some(out) = &a.out {
        let report = json!({
            "run_config": a,
            "input": input,
            "traces": ts.trace_count(),
            "samples": ts.sample_count(),
            "model": kind.name(),
            "key_guess": key_hex.concat(),
            "correct_count": correct_count,
            "accepted": bytes.len() - failed,
            "bytes": reports,
        });
        write_json(out, &report)?;
    }
    if 2 * failed > bytes.len() {
        eprintln!("no leak detected: {failed}/{} bytes failed the leakdown test", bytes.len());
        return Ok(Status::NoLeak);
    }
    Ok(Status::Ok)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn sweep(mut a: SweepArgs) -> Result<Status> {
    a.physics = a.physics.with_defaults();
    let mode = required(&a.mode, "mode")?;
    let points = required(&a.points, "points")?;
    let out_dir: PathBuf = required(&a.out_dir, "out-dir")?;
    let pd = AttackPipeline::default();
    let sd = SweepSpec::default();
    a.reps.get_or_insert(sd.repetitions);
    a.seed.get_or_insert(0);
    a.traces.get_or_insert(500);
    a.vin.get_or_insert(5.0);
    a.repeat.get_or_insert(pd.repeat);
    a.detrend.get_or_insert(pd.detrend);
    a.model.get_or_insert(ModelArg::Sbox);
    a.lambda.get_or_insert(pd.lambda);
    a.snr_traces.get_or_insert(sd.snr_traces);

    let spec = SweepSpec {
        leakage: a.physics.leakage(a.vin.unwrap(), 0),
        channel: a.physics.channel_config(),
        pipeline: AttackPipeline {
            repeat: a.repeat.unwrap(),
            detrend: a.detrend.unwrap(),
            kind: a.model.unwrap().into(),
            lambda: a.lambda.unwrap(),
        },
        repetitions: a.reps.unwrap(),
        seed: a.seed.unwrap(),
        snr_traces: a.snr_traces.unwrap(),
        ..sd
    };
    spec.leakage.validate().map_err(|e| usage(e.to_string()))?;
    spec.channel.validate().map_err(|e| usage(e.to_string()))?;

    let report = match mode {
        SweepMode::Traces => {
            let counts = parse_list::<usize>(&points)?;
            spec.sweep_trace_count(&counts)
        }
        SweepMode::Voltage => {
            let volts = parse_list::<f64>(&points)?;
            spec.sweep_voltage(&volts, a.traces.unwrap())
        }
    }
    .map_err(|e| match e {
        leakdown::LeakdownError::InvalidSweep(_)
        | leakdown::LeakdownError::OutOfOperatingRange { .. }
        | leakdown::LeakdownError::InvalidLambda(_) => usage(e.to_string()),
        other => other.into(),
    })?;

    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let csv_path = out_dir.join("sweep.csv");
    let f = File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    report
        .write_csv(BufWriter::new(f))
        .with_context(|| format!("writing {}", csv_path.display()))?;
    let manifest = json!({ "run_config": a, "report": report });
    write_json(&out_dir.join("sweep.json"), &manifest)?;

    println!("x_value  success_rate  full_key_rate  mean_best_distance  snr_db");
    for p in &report.points {
        println!(
            "{:<8} {:<13.4} {:<14.4} {:<19.4} {:.2}",
            p.x_value, p.success_rate, p.full_key_rate, p.mean_best_distance, p.snr_db
        );
    }
    println!("wrote {} and sweep.json", csv_path.display());
    Ok(Status::Ok)
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| usage(format!("--points: cannot parse `{}`", p.trim())))
        })
        .collect()
}
