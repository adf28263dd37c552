use psvc_core::{
    cpa, leakdown, sim, traceio, AttackPipeline, ChannelConfig, LeakageConfig, SelectionKind,
    SelectionModel, SweepSpec,
};
use sha2::{Digest, Sha256};

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn default_config_recovers_byte_zero_from_500_traces() {
    let key = sim::random_key(296);
    let cfg = LeakageConfig {
        rng_seed: 296,
        ..Default::default()
    };
    let ts = sim::simulate_traces(&key, 500, &cfg, &ChannelConfig::Direct).unwrap();
    let model = SelectionModel::new(SelectionKind::SboxHw, 0).unwrap();
    let (_, summary) = cpa::run_cpa(&ts, model, None).unwrap();
    assert_eq!(summary.best_guess(), Some(key.0[0]));
}

#[test]
fn noiseless_200_traces_give_every_key_byte() {
    let key = sim::random_key(303);
    let cfg = LeakageConfig {
        rng_seed: 303,
        ..LeakageConfig::default().noiseless()
    };
    let ts = sim::simulate_traces(&key, 200, &cfg, &ChannelConfig::Direct).unwrap();
    let guesses: Vec<u8> = cpa::run_cpa_all_bytes(&ts, SelectionKind::SboxHw)
        .unwrap()
        .iter()
        .map(|s| s.best_guess().unwrap())
        .collect();
    assert_eq!(guesses, key.0.to_vec());
}

#[test]
fn success_grows_with_trace_count() {
    let spec = SweepSpec {
        repetitions: 8,
        seed: 370,
        snr_traces: 100,
        ..Default::default()
    };
    let report = spec.sweep_trace_count(&[50, 200, 800]).unwrap();
    let rates: Vec<f64> = report.points.iter().map(|p| p.success_rate).collect();
    assert!(rates.windows(2).all(|w| w[0] <= w[1]), "{rates:?}");
    assert!(rates[2] > rates[0], "{rates:?}");
    let again = spec.sweep_trace_count(&[50, 200, 800]).unwrap();
    assert_eq!(report.to_csv_string(), again.to_csv_string());
}

#[test]
fn null_sweep_stays_at_chance() {
    let spec = SweepSpec {
        leakage: LeakageConfig {
            leak_gain: 0.0,
            samples_per_op: 16,
            ..Default::default()
        },
        pipeline: AttackPipeline {
            repeat: 1,
            ..Default::default()
        },
        repetitions: 20,
        seed: 369,
        snr_traces: 50,
        ..Default::default()
    };
    let report = spec.sweep_trace_count(&[400]).unwrap();
    let p: f64 = 1.0 / 256.0;
    let n = 16.0 * 20.0;
    let hi = p + 3.0 * (p * (1.0 - p) / n).sqrt();
    let point = &report.points[0];
    assert!(point.success_rate <= hi, "{point:?}");
    assert!(point.recovery_rate <= hi, "{point:?}");
}

#[test]
fn voltage_sweep_orders_snr_and_success() {
    let spec = SweepSpec {
        leakage: LeakageConfig {
            samples_per_op: 32,
            noise_sigma: 0.042,
            ..Default::default()
        },
        repetitions: 6,
        seed: 379,
        ..Default::default()
    };
    let report = spec.sweep_voltage(&[3.0, 4.0, 5.0], 500).unwrap();
    let p = &report.points;
    assert!(p.windows(2).all(|w| w[0].snr_db < w[1].snr_db), "{p:?}");
    assert!(p.windows(2).all(|w| w[0].success_rate <= w[1].success_rate), "{p:?}");
}

#[test]
fn repeated_writes_hash_identically() {
    let dir = tempfile::tempdir().unwrap();
    let key = sim::random_key(422);
    let cfg = LeakageConfig {
        rng_seed: 422,
        samples_per_op: 16,
        ..Default::default()
    };
    let ts = sim::simulate_traces(&key, 50, &cfg, &ChannelConfig::Direct).unwrap();
    let (a, b) = (dir.path().join("a.psvc"), dir.path().join("b.psvc"));
    traceio::write_traceset(&ts, &a).unwrap();
    traceio::write_traceset(&ts, &b).unwrap();
    let ha = sha256_hex(&std::fs::read(&a).unwrap());
    assert_eq!(ha, sha256_hex(&std::fs::read(&b).unwrap()));
}

#[test]
fn noiseless_container_is_frozen() {
    // no transcendental functions on this path, so the bytes are portable
    let key = sim::random_key(1);
    let cfg = LeakageConfig {
        rng_seed: 1,
        samples_per_op: 16,
        ..LeakageConfig::default().noiseless()
    };
    let ts = sim::simulate_traces(&key, 20, &cfg, &ChannelConfig::Direct).unwrap();
    assert_eq!(sha256_hex(&traceio::encode(&ts)), "5b40fe7e56debfcd14471516825a66e26798870e673cb99cb71b33d38b367503");
}

#[test]
fn leakdown_on_noiseless_set() {
    let key = sim::random_key(360);
    let cfg = LeakageConfig {
        rng_seed: 360,
        ..LeakageConfig::default().noiseless()
    };
    let ts = sim::simulate_traces(&key, 500, &cfg, &ChannelConfig::Direct).unwrap();
    let rec = leakdown::recover_key(&ts, SelectionKind::SboxHw, 0.1).unwrap();
    assert_eq!(rec.correct_count, Some(16));
    assert!(rec.verdicts.iter().all(|v| v.is_success()));
}
