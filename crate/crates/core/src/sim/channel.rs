//! Physical paths from the victim's supply rail to the attacker's probe.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::dsp;

/// How the victim's power signature reaches the observer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum ChannelConfig {
    /// Probe on the victim's own supply rail.
    Direct,
    /// Probe on the regulated side of a voltage regulator sharing the rail.
    Vrm {
        /// Fraction of the rail ripple that survives regulation, in (0, 1].
        attenuation: f64,
        /// Regulator output noise, volts.
        noise_sigma: f64,
    },
    /// Rail ripple amplitude-modulates a radio carrier that the attacker
    /// receives and envelope-detects.
    RfAm {
        /// Carrier frequency in cycles per RF sample, below 0.5.
        carrier_freq_fraction: f64,
        /// Modulation depth in (0, 1].
        modulation_depth: f64,
        /// Receiver noise after demodulation, volts.
        receiver_noise_sigma: f64,
        /// RF samples per baseband sample.
        oversample: usize,
    },
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self::Direct
    }
}

impl ChannelConfig {
    pub fn vrm(attenuation: f64, noise_sigma: f64) -> Self {
        Self::Vrm {
            attenuation,
            noise_sigma,
        }
    }

    /// AM carrier at a quarter of the RF sample rate, 8× oversampled.
    pub fn rf_am(modulation_depth: f64, receiver_noise_sigma: f64) -> Self {
        Self::RfAm {
            carrier_freq_fraction: 0.25,
            modulation_depth,
            receiver_noise_sigma,
            oversample: 8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Direct => "direct",
            Self::Vrm { .. } => "vrm",
            Self::RfAm { .. } => "rf",
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidChannel(msg));
        match *self {
            Self::Direct => Ok(()),
            Self::Vrm {
                attenuation,
                noise_sigma,
            } => {
                if !(attenuation > 0.0 && attenuation <= 1.0) {
                    return bad(format!("VRM attenuation {attenuation} outside (0, 1]"));
                }
                if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
                    return bad(format!("VRM noise sigma {noise_sigma} must be >= 0"));
                }
                Ok(())
            }
            Self::RfAm {
                carrier_freq_fraction,
                modulation_depth,
                receiver_noise_sigma,
                oversample,
            } => {
                if !(carrier_freq_fraction > 0.0 && carrier_freq_fraction < 0.5) {
                    return bad(format!(
                        "carrier frequency {carrier_freq_fraction} cycles/sample must lie in (0, 0.5) to avoid aliasing"
                    ));
                }
                if !(modulation_depth > 0.0 && modulation_depth <= 1.0) {
                    return bad(format!("modulation depth {modulation_depth} outside (0, 1]"));
                }
                if !(receiver_noise_sigma >= 0.0 && receiver_noise_sigma.is_finite()) {
                    return bad(format!(
                        "receiver noise sigma {receiver_noise_sigma} must be >= 0"
                    ));
                }
                if oversample == 0 {
                    return bad("RF oversampling factor must be >= 1".into());
                }
                Ok(())
            }
        }
    }

    /// Variance the channel itself adds to every output sample.
    pub fn noise_variance(&self) -> f64 {
        match *self {
            Self::Direct => 0.0,
            Self::Vrm { noise_sigma, .. } => noise_sigma * noise_sigma,
            Self::RfAm {
                receiver_noise_sigma,
                ..
            } => receiver_noise_sigma * receiver_noise_sigma,
        }
    }

    /// Same path with its noise source switched off.
    pub fn noiseless(&self) -> Self {
        match *self {
            Self::Direct => Self::Direct,
            Self::Vrm { attenuation, .. } => Self::Vrm {
                attenuation,
                noise_sigma: 0.0,
            },
            Self::RfAm {
                carrier_freq_fraction,
                modulation_depth,
                oversample,
                ..
            } => Self::RfAm {
                carrier_freq_fraction,
                modulation_depth,
                receiver_noise_sigma: 0.0,
                oversample,
            },
        }
    }
}

/// A channel with its carrier tables precomputed for a fixed trace length.
#[derive(Debug, Clone)]
pub struct PreparedChannel {
    config: ChannelConfig,
    len: usize,
    rf: Option<RfTables>,
}

#[derive(Debug, Clone)]
struct RfTables {
    oversample: usize,
    depth: f64,
    window: usize,
    /// |cos| of the carrier at each RF sample.
    carrier_abs: Vec<f64>,
    /// Moving average of `carrier_abs`; the demodulator's gain per sample.
    carrier_gain: Vec<f64>,
}

impl PreparedChannel {
    pub fn new(config: ChannelConfig, len: usize) -> Result<Self, SimError> {
        config.validate()?;
        if len == 0 {
            return Err(SimError::EmptySignature);
        }
        let rf = match config {
            ChannelConfig::RfAm {
                carrier_freq_fraction,
                modulation_depth,
                oversample,
                ..
            } => {
                let n = len * oversample;
                let period = (1.0 / carrier_freq_fraction).round() as usize;
                // odd window spanning one carrier period
                let window = (period | 1).min(if n % 2 == 1 { n } else { n - 1 }).max(1);
                let carrier_abs: Vec<f64> = (0..n)
                    .map(|m| {
                        (2.0 * std::f64::consts::PI * carrier_freq_fraction * m as f64)
                            .cos()
                            .abs()
                    })
                    .collect();
                let carrier_gain = dsp::moving_average(&carrier_abs, window)
                    .expect("window bounded by length");
                Some(RfTables {
                    oversample,
                    depth: modulation_depth,
                    window,
                    carrier_abs,
                    carrier_gain,
                })
            }
            _ => None,
        };
        Ok(Self { config, len, rf })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    pub fn apply<R: Rng + ?Sized>(&self, signature: &[f64], rng: &mut R) -> Result<Vec<f64>, SimError> {
        if signature.is_empty() {
            return Err(SimError::EmptySignature);
        }
        if signature.len() != self.len {
            return Err(SimError::LengthMismatch {
                got: signature.len(),
                expected: self.len,
            });
        }
        match self.config {
            ChannelConfig::Direct => Ok(signature.to_vec()),
            ChannelConfig::Vrm {
                attenuation,
                noise_sigma,
            } => {
                let mut out: Vec<f64> = signature.iter().map(|v| attenuation * v).collect();
                add_gaussian(&mut out, noise_sigma, rng);
                Ok(out)
            }
            ChannelConfig::RfAm {
                receiver_noise_sigma,
                ..
            } => {
                let tables = self.rf.as_ref().expect("prepared for RF");
                let mut out = tables.demodulate(signature);
                add_gaussian(&mut out, receiver_noise_sigma, rng);
                Ok(out)
            }
        }
    }
}

impl RfTables {
    /// Normalizes the signature to [-1, 1], modulates the carrier, rectifies,
    /// smooths over one carrier period, divides out the carrier's own
    /// smoothed envelope, decimates back to baseband and undoes the
    /// normalization.
    fn demodulate(&self, signature: &[f64]) -> Vec<f64> {
        let center = signature.iter().sum::<f64>() / signature.len() as f64;
        let scale = signature
            .iter()
            .map(|v| (v - center).abs())
            .fold(0.0, f64::max);
        if scale == 0.0 {
            return vec![center; signature.len()];
        }
        let k = self.oversample;
        let rectified: Vec<f64> = self
            .carrier_abs
            .iter()
            .enumerate()
            .map(|(m, c)| {
                let u = (signature[m / k] - center) / scale;
                // 1 + m·u >= 0, so |(1 + m·u)·cos| = (1 + m·u)·|cos|
                (1.0 + self.depth * u) * c
            })
            .collect();
        let smoothed =
            dsp::moving_average(&rectified, self.window).expect("window bounded by length");
        smoothed
            .chunks_exact(k)
            .zip(self.carrier_gain.chunks_exact(k))
            .map(|(env, gain)| {
                let e = env.iter().zip(gain).map(|(e, g)| e / g).sum::<f64>() / k as f64;
                center + scale * (e - 1.0) / self.depth
            })
            .collect()
    }
}

fn add_gaussian<R: Rng + ?Sized>(out: &mut [f64], sigma: f64, rng: &mut R) {
    if sigma > 0.0 {
        let n = Normal::new(0.0, sigma).expect("sigma validated");
        for v in out.iter_mut() {
            *v += n.sample(rng);
        }
    }
}

/// One-shot form of [`PreparedChannel::apply`].
pub fn apply_channel<R: Rng + ?Sized>(
    signature: &[f64],
    config: &ChannelConfig,
    rng: &mut R,
) -> Result<Vec<f64>, SimError> {
    if signature.is_empty() {
        return Err(SimError::EmptySignature);
    }
    PreparedChannel::new(*config, signature.len())?.apply(signature, rng)
}
