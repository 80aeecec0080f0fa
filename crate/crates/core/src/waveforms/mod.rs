//! Synthesis of the three radar pulse classes (Barker, Costas, LFM) and
//! additive white Gaussian noise at a requested SNR.
//!
//! Frequencies are in cycles per sample with the default sample rate of 1.0,
//! so the Nyquist limit is 0.5. Every noise-free waveform is scaled to unit
//! RMS before noise is added.

mod record;

pub use record::{decode_record, encode_record, read_record, write_record, RECORD_HEADER_LEN, RECORD_MAGIC};

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// The 13-chip Barker code.
pub const BARKER_13: [i8; 13] = [1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1];

/// An order-7 Costas permutation: sub-pulse `k` hops to `COSTAS_7[k]` steps
/// above the base frequency.
pub const COSTAS_7: [u8; 7] = [0, 2, 5, 1, 6, 3, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalClass {
    Barker = 0,
    Costas = 1,
    Lfm = 2,
}

impl SignalClass {
    pub const ALL: [SignalClass; 3] = [SignalClass::Barker, SignalClass::Costas, SignalClass::Lfm];
    pub const COUNT: usize = 3;

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SignalClass::Barker => "barker",
            SignalClass::Costas => "costas",
            SignalClass::Lfm => "lfm",
        }
    }
}

impl fmt::Display for SignalClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SignalClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown signal class `{s}` (expected barker, costas or lfm)")))
    }
}

/// A labeled real-valued radar pulse record.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub label: SignalClass,
    /// `f64::INFINITY` for a noise-free waveform.
    pub snr_db: f64,
    pub seed: u64,
}

impl TimeSignal {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean square amplitude.
    pub fn power(&self) -> f64 {
        mean_square(&self.samples)
    }

    pub fn l2_norm(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Closed frequency (or dB) interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }

    /// Uniform draw; a degenerate interval returns `lo` without consuming
    /// randomness.
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.lo, self.hi)
    }
}

/// Parses `lo:hi`. Reversed bounds are rejected.
impl FromStr for Interval {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        // Skip the first char so a leading minus sign is not a separator.
        let split = s
            .char_indices()
            .skip(1)
            .find(|&(_, c)| c == ':')
            .map(|(i, _)| i)
            .ok_or_else(|| Error::Config(format!("range `{s}` must look like lo:hi")))?;
        let parse = |t: &str| -> Result<f64> {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("range `{s}`: `{t}` is not a number")))
        };
        let iv = Interval::new(parse(&s[..split])?, parse(&s[split + 1..])?);
        if !iv.is_valid() {
            return Err(Error::Config(format!("range `{s}` must be finite with lo <= hi")));
        }
        Ok(iv)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformConfig {
    pub n_samples: usize,
    pub sample_rate: f64,
    /// Barker carrier, Costas base frequency and LFM start frequency.
    pub carrier_range: Interval,
    pub lfm_bandwidth_range: Interval,
    /// Spacing between adjacent Costas hop frequencies.
    pub costas_step: f64,
    pub barker_code_length: usize,
    pub costas_order: usize,
    pub snr_range_db: Interval,
}

impl Default for WaveformConfig {
    fn default() -> Self {
        Self {
            n_samples: 1024,
            sample_rate: 1.0,
            carrier_range: Interval::new(0.08, 0.25),
            lfm_bandwidth_range: Interval::new(0.10, 0.20),
            costas_step: 0.025,
            barker_code_length: BARKER_13.len(),
            costas_order: COSTAS_7.len(),
            snr_range_db: Interval::new(-10.0, 10.0),
        }
    }
}

impl WaveformConfig {
    pub fn nyquist(&self) -> f64 {
        self.sample_rate / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        if self.n_samples < self.barker_code_length.max(self.costas_order) {
            return cfg_err(format!("n_samples {} too short for the pulse codes", self.n_samples));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return cfg_err(format!("sample_rate {} must be positive", self.sample_rate));
        }
        if self.barker_code_length != BARKER_13.len() {
            return cfg_err(format!("only Barker-13 is supported (got {})", self.barker_code_length));
        }
        if self.costas_order != COSTAS_7.len() {
            return cfg_err(format!("only order-7 Costas coding is supported (got {})", self.costas_order));
        }
        for (name, iv) in [
            ("carrier_range", self.carrier_range),
            ("lfm_bandwidth_range", self.lfm_bandwidth_range),
            ("snr_range_db", self.snr_range_db),
        ] {
            if !iv.is_valid() {
                return cfg_err(format!("{name} {iv} must be finite with lo <= hi"));
            }
        }
        let nyq = self.nyquist();
        if self.carrier_range.lo <= 0.0 || self.carrier_range.hi >= nyq {
            return cfg_err(format!("carrier_range {} must lie inside (0, {nyq})", self.carrier_range));
        }
        if self.lfm_bandwidth_range.lo < 0.0 {
            return cfg_err("lfm_bandwidth_range must be non-negative".into());
        }
        if self.carrier_range.hi + self.lfm_bandwidth_range.hi >= nyq {
            return cfg_err(format!(
                "LFM sweep up to {} reaches Nyquist {nyq}",
                self.carrier_range.hi + self.lfm_bandwidth_range.hi
            ));
        }
        let costas_top = self.carrier_range.hi + (self.costas_order - 1) as f64 * self.costas_step;
        if !(self.costas_step > 0.0) || costas_top >= nyq {
            return cfg_err(format!("Costas hops up to {costas_top} reach Nyquist {nyq}"));
        }
        Ok(())
    }
}

/// Biphase Barker-13 pulse on a carrier drawn from `carrier_range`.
pub fn synth_barker(cfg: &WaveformConfig, rng: &mut Rng) -> Result<TimeSignal> {
    cfg.validate()?;
    let n = cfg.n_samples;
    let f0 = cfg.carrier_range.sample(rng) / cfg.sample_rate;
    let chips = BARKER_13.len();
    let samples = (0..n)
        .map(|i| {
            let chip = BARKER_13[i * chips / n] as f64;
            chip * (2.0 * PI * f0 * i as f64).cos()
        })
        .collect();
    finish(samples, cfg, SignalClass::Barker)
}

/// Order-7 Costas frequency-hopped pulse: `costas_order` equal sub-pulses at
/// `f_base + COSTAS_7[k] * costas_step`, phase continuous across hops.
pub fn synth_costas(cfg: &WaveformConfig, rng: &mut Rng) -> Result<TimeSignal> {
    cfg.validate()?;
    let n = cfg.n_samples;
    let base = cfg.carrier_range.sample(rng);
    let order = COSTAS_7.len();
    let mut phase = 0.0f64;
    let samples = (0..n)
        .map(|i| {
            let k = i * order / n;
            let f = (base + COSTAS_7[k] as f64 * cfg.costas_step) / cfg.sample_rate;
            let v = phase.cos();
            phase = (phase + 2.0 * PI * f) % (2.0 * PI);
            v
        })
        .collect();
    finish(samples, cfg, SignalClass::Costas)
}

/// Linear up-chirp from a start frequency in `carrier_range` sweeping a
/// bandwidth drawn from `lfm_bandwidth_range` over the record.
pub fn synth_lfm(cfg: &WaveformConfig, rng: &mut Rng) -> Result<TimeSignal> {
    cfg.validate()?;
    let n = cfg.n_samples;
    let f0 = cfg.carrier_range.sample(rng) / cfg.sample_rate;
    let bw = cfg.lfm_bandwidth_range.sample(rng) / cfg.sample_rate;
    let samples = (0..n).map(|i| lfm_phase(f0, bw, n, i).cos()).collect();
    finish(samples, cfg, SignalClass::Lfm)
}

/// Instantaneous phase of the discrete chirp at sample `i`; its frequency
/// `f0 + bw * i / n` is affine in time.
pub(crate) fn lfm_phase(f0: f64, bw: f64, n: usize, i: usize) -> f64 {
    let t = i as f64;
    2.0 * PI * (f0 * t + 0.5 * bw * t * t / n as f64)
}

/// Noise-free waveform of the given class.
pub fn synthesize(class: SignalClass, cfg: &WaveformConfig, rng: &mut Rng) -> Result<TimeSignal> {
    match class {
        SignalClass::Barker => synth_barker(cfg, rng),
        SignalClass::Costas => synth_costas(cfg, rng),
        SignalClass::Lfm => synth_lfm(cfg, rng),
    }
}

/// Adds white Gaussian noise so that `10 log10(Ps / Pn) = snr_db`, with `Ps`
/// the empirical power of `sig`.
pub fn add_awgn(sig: &TimeSignal, snr_db: f64, rng: &mut Rng) -> Result<TimeSignal> {
    if !snr_db.is_finite() {
        return Err(Error::Config(format!("snr_db must be finite (got {snr_db})")));
    }
    if sig.samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("signal contains non-finite samples".into()));
    }
    let ps = sig.power();
    if ps == 0.0 {
        return Err(Error::Degenerate("SNR is undefined for an all-zero signal".into()));
    }
    let sigma = (ps / 10f64.powf(snr_db / 10.0)).sqrt();
    let samples = sig
        .samples
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(rng);
            v + sigma * z
        })
        .collect();
    Ok(TimeSignal {
        samples,
        snr_db,
        ..sig.clone()
    })
}

/// One noisy sample: synthesize, draw an SNR from `snr_range_db`, add noise.
/// Samples are rounded to `f32` precision so that the record format stores
/// them losslessly.
pub fn generate(class: SignalClass, cfg: &WaveformConfig, seed: u64) -> Result<TimeSignal> {
    let mut rng = crate::rng::rng_from_seed(seed);
    let clean = synthesize(class, cfg, &mut rng)?;
    let snr = cfg.snr_range_db.sample(&mut rng);
    let mut noisy = add_awgn(&clean, snr, &mut rng)?;
    for v in &mut noisy.samples {
        *v = *v as f32 as f64;
    }
    noisy.seed = seed;
    Ok(noisy)
}

fn finish(samples: Vec<f64>, cfg: &WaveformConfig, label: SignalClass) -> Result<TimeSignal> {
    let rms = mean_square(&samples).sqrt();
    if rms == 0.0 {
        return Err(Error::Degenerate("synthesized an all-zero waveform".into()));
    }
    Ok(TimeSignal {
        samples: samples.into_iter().map(|v| v / rms).collect(),
        sample_rate: cfg.sample_rate,
        label,
        snr_db: f64::INFINITY,
        seed: 0,
    })
}

fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}
