use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use psvc_core::{ChannelConfig, Granularity, LeakageConfig, SelectionKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "psvc", version, about = "Supply-voltage coupling side-channel lab")]
pub struct Cli {
    /// JSON file with defaults, one section per subcommand
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (all cores when unset)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate AES power traces and write a trace container
    Simulate(SimulateArgs),
    /// Detrend, filter, align and average a trace container
    Filter(FilterArgs),
    /// Run CPA and the leakdown test on a trace container
    Attack(AttackArgs),
    /// Monte-Carlo success rate against trace count or supply voltage
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelKind {
    Direct,
    Vrm,
    Rf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelArg {
    /// Hamming weight of plaintext XOR key
    Xor,
    /// Hamming weight of the first-round S-box output
    Sbox,
    /// Hamming distance between S-box input and output
    Hd,
    /// Raw value of plaintext XOR key
    XorValue,
}

impl From<ModelArg> for SelectionKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Xor => SelectionKind::XorHw,
            ModelArg::Sbox => SelectionKind::SboxHw,
            ModelArg::Hd => SelectionKind::Hd,
            ModelArg::XorValue => SelectionKind::XorValue,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GranularityArg {
    ByteSerial,
    SegmentMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    Traces,
    Voltage,
}

/// Victim and channel physics shared by `simulate` and `sweep`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct Physics {
    #[arg(long, value_enum)]
    pub channel: Option<ChannelKind>,
    #[arg(long)]
    pub samples_per_op: Option<usize>,
    /// Volts per Hamming-weight unit
    #[arg(long)]
    pub leak_gain: Option<f64>,
    /// White capture noise, volts
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Per-trace drift slope std-dev, volts per sample
    #[arg(long)]
    pub drift_sigma: Option<f64>,
    /// Per-trace DC offset std-dev, volts
    #[arg(long)]
    pub dc_sigma: Option<f64>,
    /// Maximum trigger jitter, samples
    #[arg(long)]
    pub jitter: Option<usize>,
    #[arg(long, value_enum)]
    pub granularity: Option<GranularityArg>,
    /// Supply voltage at which the baselines and gain are specified
    #[arg(long)]
    pub vref: Option<f64>,
    /// VRM ripple attenuation
    #[arg(long)]
    pub attenuation: Option<f64>,
    /// VRM output or RF receiver noise, volts
    #[arg(long)]
    pub channel_noise: Option<f64>,
    /// RF carrier frequency, cycles per RF sample
    #[arg(long)]
    pub carrier: Option<f64>,
    /// RF modulation depth
    #[arg(long)]
    pub depth: Option<f64>,
    /// RF samples per baseband sample
    #[arg(long)]
    pub oversample: Option<usize>,
}

impl Physics {
    pub fn with_defaults(mut self) -> Self {
        let d = LeakageConfig::default();
        self.channel.get_or_insert(ChannelKind::Direct);
        self.samples_per_op.get_or_insert(d.samples_per_op);
        self.leak_gain.get_or_insert(d.leak_gain);
        self.noise_sigma.get_or_insert(d.noise_sigma);
        self.drift_sigma.get_or_insert(d.drift_slope_sigma);
        self.dc_sigma.get_or_insert(d.dc_shift_sigma);
        self.jitter.get_or_insert(d.jitter_max);
        self.granularity.get_or_insert(GranularityArg::ByteSerial);
        self.vref.get_or_insert(d.reference_voltage);
        self.attenuation.get_or_insert(0.5);
        self.channel_noise.get_or_insert(0.01);
        self.carrier.get_or_insert(0.25);
        self.depth.get_or_insert(0.8);
        self.oversample.get_or_insert(8);
        self
    }

    /// Leakage model for a resolved parameter set.
    pub fn leakage(&self, vin: f64, seed: u64) -> LeakageConfig {
        LeakageConfig {
            samples_per_op: self.samples_per_op.unwrap(),
            leak_gain: self.leak_gain.unwrap(),
            granularity: match self.granularity.unwrap() {
                GranularityArg::ByteSerial => Granularity::ByteSerial,
                GranularityArg::SegmentMean => Granularity::SegmentMean,
            },
            supply_voltage: vin,
            reference_voltage: self.vref.unwrap(),
            noise_sigma: self.noise_sigma.unwrap(),
            drift_slope_sigma: self.drift_sigma.unwrap(),
            dc_shift_sigma: self.dc_sigma.unwrap(),
            jitter_max: self.jitter.unwrap(),
            rng_seed: seed,
            ..LeakageConfig::default()
        }
    }

    pub fn channel_config(&self) -> ChannelConfig {
        match self.channel.unwrap() {
            ChannelKind::Direct => ChannelConfig::Direct,
            ChannelKind::Vrm => ChannelConfig::vrm(self.attenuation.unwrap(), self.channel_noise.unwrap()),
            ChannelKind::Rf => ChannelConfig::RfAm {
                carrier_freq_fraction: self.carrier.unwrap(),
                modulation_depth: self.depth.unwrap(),
                receiver_noise_sigma: self.channel_noise.unwrap(),
                oversample: self.oversample.unwrap(),
            },
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// 32 hex digits, or "random" to derive the key from the seed
    #[arg(long)]
    pub key: Option<String>,
    #[arg(long)]
    pub traces: Option<usize>,
    /// Consecutive captures per plaintext, for later averaging
    #[arg(long)]
    pub repeat: Option<usize>,
    /// Supply voltage, volts
    #[arg(long)]
    pub vin: Option<f64>,
    /// Calibrate the white noise to this single-trace SNR, dB
    #[arg(long)]
    pub snr_db: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Leave the key out of the file, as an attacker would have it
    #[arg(long, num_args = 0, default_missing_value = "true")]
    pub hide_key: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub physics: Physics,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct FilterArgs {
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Remove a least-squares line from every trace
    #[arg(long, num_args = 0, default_missing_value = "true")]
    pub detrend: Option<bool>,
    /// Centered moving average of this odd width
    #[arg(long)]
    pub lowpass: Option<usize>,
    /// Subtract a centered moving average of this odd width
    #[arg(long)]
    pub highpass: Option<usize>,
    /// Align to the first trace, searching lags up to this bound
    #[arg(long)]
    pub align: Option<usize>,
    /// Average consecutive groups of this many same-plaintext traces
    #[arg(long)]
    pub avg: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct AttackArgs {
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Attack only this key byte
    #[arg(long)]
    pub byte: Option<usize>,
    /// Sample window START:END (half-open)
    #[arg(long)]
    pub window: Option<String>,
    /// Directory for per-byte correlation matrices as CSV
    #[arg(long)]
    pub corr_out: Option<PathBuf>,
    /// JSON report path
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub mode: Option<SweepMode>,
    /// Comma-separated trace counts or voltages
    #[arg(long)]
    pub points: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Raw traces per attack in voltage mode
    #[arg(long)]
    pub traces: Option<usize>,
    /// Supply voltage in trace-count mode
    #[arg(long)]
    pub vin: Option<f64>,
    /// Captures per plaintext, averaged before the attack
    #[arg(long)]
    pub repeat: Option<usize>,
    #[arg(long)]
    pub detrend: Option<bool>,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Fixed-plaintext captures per SNR measurement
    #[arg(long)]
    pub snr_traces: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub physics: Physics,
}
