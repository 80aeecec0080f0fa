//! Short-time Fourier transform and its overlap-add inverse.
//!
//! Frame `m` covers samples `[m*hop - (length - hop), m*hop + hop)`, zero
//! padded outside the record, so every sample lies under exactly
//! `length / hop` frames. The DFT phase is referenced to absolute time:
//!
//! ```text
//! X[k][m] = sum_n x[n] h[n - s_m] exp(-j 2 pi k n / fft_size),  s_m = m*hop - (length - hop)
//! ```
//!
//! Inversion weights each frame by the window and divides by the summed
//! squared window, which reconstructs any consistent grid exactly.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    /// Periodic Hann.
    Hann,
    /// Boxcar; meant for tests with `hop == length`.
    Rectangular,
}

impl WindowKind {
    fn id(self) -> u8 {
        match self {
            WindowKind::Hann => 0,
            WindowKind::Rectangular => 1,
        }
    }

    fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(WindowKind::Hann),
            1 => Some(WindowKind::Rectangular),
            _ => None,
        }
    }
}

/// Analysis window, hop and transform size. Only constructible through
/// [`WindowSpec::new`], which enforces constant overlap-add.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawWindowSpec", into = "RawWindowSpec")]
pub struct WindowSpec {
    kind: WindowKind,
    length: usize,
    hop: usize,
    fft_size: usize,
}

#[derive(Serialize, Deserialize)]
struct RawWindowSpec {
    kind: WindowKind,
    length: usize,
    hop: usize,
    fft_size: usize,
}

impl TryFrom<RawWindowSpec> for WindowSpec {
    type Error = Error;

    fn try_from(r: RawWindowSpec) -> Result<Self> {
        WindowSpec::new(r.kind, r.length, r.hop, r.fft_size)
    }
}

impl From<WindowSpec> for RawWindowSpec {
    fn from(w: WindowSpec) -> Self {
        RawWindowSpec {
            kind: w.kind,
            length: w.length,
            hop: w.hop,
            fft_size: w.fft_size,
        }
    }
}

impl Default for WindowSpec {
    /// Hann, length 128, hop 32, 128-point transform.
    fn default() -> Self {
        WindowSpec::new(WindowKind::Hann, 128, 32, 128).expect("default window satisfies COLA")
    }
}

impl WindowSpec {
    pub fn new(kind: WindowKind, length: usize, hop: usize, fft_size: usize) -> Result<Self> {
        if length == 0 || hop == 0 {
            return Err(Error::Config("window length and hop must be positive".into()));
        }
        if hop > length {
            return Err(Error::Config(format!("hop {hop} exceeds window length {length}")));
        }
        if length % hop != 0 {
            return Err(Error::Config(format!("hop {hop} must divide window length {length}")));
        }
        if fft_size < length {
            return Err(Error::Config(format!("fft_size {fft_size} is smaller than window length {length}")));
        }
        let spec = WindowSpec {
            kind,
            length,
            hop,
            fft_size,
        };
        let w = spec.window();
        let phase_sums = |f: &dyn Fn(f64) -> f64| -> Vec<f64> {
            (0..hop)
                .map(|j| w[j..].iter().step_by(hop).map(|&v| f(v)).sum())
                .collect()
        };
        let ola = phase_sums(&|v| v);
        let (lo, hi) = min_max(&ola);
        if hi <= 0.0 || hi - lo > 1e-9 * hi {
            return Err(Error::Config(format!(
                "{kind:?} window of length {length} with hop {hop} violates constant overlap-add"
            )));
        }
        let (lo_sq, _) = min_max(&phase_sums(&|v| v * v));
        if lo_sq <= 0.0 {
            return Err(Error::Config("window leaves samples with zero synthesis weight".into()));
        }
        Ok(spec)
    }

    pub fn kind(&self) -> WindowKind {
        self.kind
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn window(&self) -> Vec<f64> {
        let l = self.length;
        match self.kind {
            WindowKind::Hann => (0..l)
                .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / l as f64).cos()))
                .collect(),
            WindowKind::Rectangular => vec![1.0; l],
        }
    }

    /// Number of frames for a record of `n` samples.
    pub fn frame_count(&self, n: usize) -> usize {
        (n + self.length - self.hop).div_ceil(self.hop)
    }

    /// First sample (possibly negative) under frame `m`.
    pub fn frame_start(&self, m: usize) -> i64 {
        (m * self.hop) as i64 - (self.length - self.hop) as i64
    }
}

/// Complex time-frequency matrix, bins by frames, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StftGrid {
    data: Vec<Complex64>,
    window: WindowSpec,
    original_length: usize,
}

/// A real matrix with the grid's shape: one of the split real/imaginary
/// planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Plane {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn same_shape(&self, other: &Plane) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

impl StftGrid {
    pub fn from_data(data: Vec<Complex64>, window: WindowSpec, original_length: usize) -> Result<Self> {
        let expected = window.fft_size * window.frame_count(original_length);
        if original_length == 0 || data.len() != expected {
            return Err(Error::Shape(format!(
                "grid holds {} cells; window and length {original_length} need {expected}",
                data.len()
            )));
        }
        Ok(StftGrid {
            data,
            window,
            original_length,
        })
    }

    pub fn zeros(window: WindowSpec, original_length: usize) -> Self {
        let n = window.fft_size * window.frame_count(original_length);
        StftGrid {
            data: vec![Complex64::new(0.0, 0.0); n],
            window,
            original_length,
        }
    }

    pub fn bins(&self) -> usize {
        self.window.fft_size
    }

    pub fn frames(&self) -> usize {
        self.window.frame_count(self.original_length)
    }

    pub fn window(&self) -> &WindowSpec {
        &self.window
    }

    pub fn original_length(&self) -> usize {
        self.original_length
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn at(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[bin * self.frames() + frame]
    }

    /// Elementwise sum; both grids must share window and length.
    pub fn add(&self, other: &StftGrid) -> Result<StftGrid> {
        if self.window != other.window || self.original_length != other.original_length {
            return Err(Error::Shape("cannot add grids with different layouts".into()));
        }
        Ok(StftGrid {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
            ..self.clone()
        })
    }
}

/// Per-bin phase factor `exp(sign * j 2 pi k s / K)` for a frame start `s`.
fn frame_phase(k: usize, start: i64, fft_size: usize, sign: f64) -> Complex64 {
    let r = (k as i64 * start).rem_euclid(fft_size as i64) as f64;
    Complex64::from_polar(1.0, sign * 2.0 * PI * r / fft_size as f64)
}

pub fn stft(samples: &[f64], window: &WindowSpec) -> Result<StftGrid> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::Config("cannot transform an empty signal".into()));
    }
    let k_len = window.fft_size;
    let frames = window.frame_count(n);
    let w = window.window();
    let fft = FftPlanner::new().plan_fft_forward(k_len);
    let mut data = vec![Complex64::new(0.0, 0.0); k_len * frames];
    let mut buf = vec![Complex64::new(0.0, 0.0); k_len];
    for m in 0..frames {
        let start = window.frame_start(m);
        buf.fill(Complex64::new(0.0, 0.0));
        for (j, &wj) in w.iter().enumerate() {
            let idx = start + j as i64;
            if (0..n as i64).contains(&idx) {
                buf[j] = Complex64::new(samples[idx as usize] * wj, 0.0);
            }
        }
        fft.process(&mut buf);
        for (k, v) in buf.iter().enumerate() {
            data[k * frames + m] = v * frame_phase(k, start, k_len, -1.0);
        }
    }
    Ok(StftGrid {
        data,
        window: *window,
        original_length: n,
    })
}

/// Overlap-add inverse. Complex in general: a perturbed grid need not be
/// conjugate symmetric.
pub fn istft(grid: &StftGrid) -> Vec<Complex64> {
    let window = grid.window;
    let n = grid.original_length;
    let k_len = window.fft_size;
    let frames = grid.frames();
    let w = window.window();
    let ifft = FftPlanner::new().plan_fft_inverse(k_len);
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    let mut weight = vec![0.0f64; n];
    let mut buf = vec![Complex64::new(0.0, 0.0); k_len];
    let scale = 1.0 / k_len as f64;
    for m in 0..frames {
        let start = window.frame_start(m);
        for (k, b) in buf.iter_mut().enumerate() {
            *b = grid.data[k * frames + m] * frame_phase(k, start, k_len, 1.0);
        }
        ifft.process(&mut buf);
        for (j, &wj) in w.iter().enumerate() {
            let idx = start + j as i64;
            if (0..n as i64).contains(&idx) {
                out[idx as usize] += buf[j] * (wj * scale);
                weight[idx as usize] += wj * wj;
            }
        }
    }
    for (o, &wt) in out.iter_mut().zip(&weight) {
        *o /= wt;
    }
    out
}

pub fn split_complex(grid: &StftGrid) -> (Plane, Plane) {
    let (rows, cols) = (grid.bins(), grid.frames());
    let re = Plane {
        rows,
        cols,
        data: grid.data.iter().map(|c| c.re).collect(),
    };
    let im = Plane {
        rows,
        cols,
        data: grid.data.iter().map(|c| c.im).collect(),
    };
    (re, im)
}

pub fn join_complex(re: &Plane, im: &Plane, window: &WindowSpec, original_length: usize) -> Result<StftGrid> {
    if !re.same_shape(im) || re.data.len() != re.rows * re.cols || im.data.len() != im.rows * im.cols {
        return Err(Error::Shape(format!(
            "real plane {}x{} and imaginary plane {}x{} differ",
            re.rows, re.cols, im.rows, im.cols
        )));
    }
    if re.rows != window.fft_size || re.cols != window.frame_count(original_length) {
        return Err(Error::Shape(format!(
            "planes are {}x{}, window and length {original_length} need {}x{}",
            re.rows,
            re.cols,
            window.fft_size,
            window.frame_count(original_length)
        )));
    }
    let data = re.data.iter().zip(&im.data).map(|(&r, &i)| Complex64::new(r, i)).collect();
    StftGrid::from_data(data, *window, original_length)
}

pub const GRID_MAGIC: &[u8; 8] = b"TFGRD001";
const GRID_HEADER_LEN: usize = 36;

/// `TFGRD001` layout: magic, bins u32, frames u32, window kind u8 + 3 pad
/// bytes, window length u32, hop u32, fft_size u32, original length u32, then
/// interleaved `(re, im)` `f32` pairs in row-major order. Little-endian.
pub fn encode_grid(grid: &StftGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(GRID_HEADER_LEN + 8 * grid.data.len());
    out.extend_from_slice(GRID_MAGIC);
    for v in [grid.bins(), grid.frames()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&[grid.window.kind.id(), 0, 0, 0]);
    for v in [grid.window.length, grid.window.hop, grid.window.fft_size, grid.original_length] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for c in &grid.data {
        out.extend_from_slice(&(c.re as f32).to_le_bytes());
        out.extend_from_slice(&(c.im as f32).to_le_bytes());
    }
    out
}

pub fn decode_grid(bytes: &[u8]) -> Result<StftGrid> {
    let fmt_err = |m: String| Error::Format(format!("grid: {m}"));
    if bytes.len() < GRID_HEADER_LEN {
        return Err(fmt_err(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..8] != GRID_MAGIC {
        return Err(fmt_err("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize;
    let (bins, frames) = (u32_at(8), u32_at(12));
    let kind = WindowKind::from_id(bytes[16]).ok_or_else(|| fmt_err(format!("unknown window kind {}", bytes[16])))?;
    // Each bin needs at least one stored cell; checking this first keeps a
    // corrupt header from sizing the window.
    if u32_at(28) > (bytes.len() - GRID_HEADER_LEN) / 8 {
        return Err(fmt_err(format!("fft size {} exceeds the payload", u32_at(28))));
    }
    let window = WindowSpec::new(kind, u32_at(20), u32_at(24), u32_at(28))
        .map_err(|e| fmt_err(format!("invalid window: {e}")))?;
    let original_length = u32_at(32);
    if original_length == 0 || bins != window.fft_size || frames != window.frame_count(original_length) {
        return Err(fmt_err(format!("shape {bins}x{frames} inconsistent with window and length {original_length}")));
    }
    let cells = bins
        .checked_mul(frames)
        .ok_or_else(|| fmt_err("shape overflows".into()))?;
    if (bytes.len() - GRID_HEADER_LEN) as u128 != cells as u128 * 8 {
        return Err(fmt_err(format!("payload is {} bytes, expected {}", bytes.len() - GRID_HEADER_LEN, cells as u128 * 8)));
    }
    let data = bytes[GRID_HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]) as f64;
            if re.is_finite() && im.is_finite() {
                Ok(Complex64::new(re, im))
            } else {
                Err(fmt_err("non-finite cell".into()))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    StftGrid::from_data(data, window, original_length)
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_signal(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Direct evaluation of the analysis sum, independent of the FFT path.
    fn naive_cell(x: &[f64], w: &WindowSpec, k: usize, m: usize) -> Complex64 {
        let h = w.window();
        let start = w.frame_start(m);
        let mut acc = Complex64::new(0.0, 0.0);
        for (n, &xn) in x.iter().enumerate() {
            let j = n as i64 - start;
            if (0..h.len() as i64).contains(&j) {
                let ang = -2.0 * PI * (k * n) as f64 / w.fft_size() as f64;
                acc += Complex64::from_polar(xn * h[j as usize], ang);
            }
        }
        acc
    }

    #[test]
    fn default_window_layout() {
        let w = WindowSpec::default();
        assert_eq!(w.frame_count(1024), 35);
        assert_eq!(w.frame_start(0), -96);
        let g = stft(&vec![0.0; 1024], &w).unwrap();
        assert_eq!((g.bins(), g.frames()), (128, 35));
        assert!(g.data().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn cola_violations_are_rejected() {
        assert!(WindowSpec::new(WindowKind::Hann, 128, 128, 128).is_err());
        assert!(WindowSpec::new(WindowKind::Hann, 128, 48, 128).is_err());
        assert!(WindowSpec::new(WindowKind::Hann, 128, 32, 64).is_err());
        assert!(WindowSpec::new(WindowKind::Hann, 128, 64, 256).is_ok());
        assert!(WindowSpec::new(WindowKind::Rectangular, 64, 64, 64).is_ok());
    }

    #[test]
    fn fft_path_matches_direct_sum() {
        let x = random_signal(3, 300);
        let w = WindowSpec::new(WindowKind::Hann, 64, 16, 128).unwrap();
        let g = stft(&x, &w).unwrap();
        for &(k, m) in &[(0, 0), (5, 3), (17, 10), (127, 21), (64, 7)] {
            let d = g.at(k, m) - naive_cell(&x, &w, k, m);
            assert!(d.norm() < 1e-10, "cell ({k},{m}) off by {}", d.norm());
        }
    }

    #[test]
    fn tone_peaks_at_its_bin() {
        let w = WindowSpec::new(WindowKind::Rectangular, 128, 128, 128).unwrap();
        let k0 = 19;
        let x: Vec<f64> = (0..1024).map(|n| (2.0 * PI * (k0 * n) as f64 / 128.0).cos()).collect();
        let g = stft(&x, &w).unwrap();
        for m in 0..g.frames() {
            // One frame's spectrum via a plain DFT over its samples.
            let start = w.frame_start(m);
            let frame: Vec<f64> = (0..128)
                .map(|j| {
                    let i = start + j;
                    if (0..1024).contains(&i) { x[i as usize] } else { 0.0 }
                })
                .collect();
            if frame.iter().all(|&v| v == 0.0) {
                continue;
            }
            let oracle_peak = (0..64)
                .max_by(|&a, &b| dft_mag(&frame, a).total_cmp(&dft_mag(&frame, b)))
                .unwrap();
            assert_eq!(oracle_peak, k0);
            let grid_peak = (0..64)
                .max_by(|&a, &b| g.at(a, m).norm().total_cmp(&g.at(b, m).norm()))
                .unwrap();
            assert_eq!(grid_peak, k0, "frame {m}");
        }
    }

    fn dft_mag(x: &[f64], k: usize) -> f64 {
        x.iter()
            .enumerate()
            .map(|(n, &v)| Complex64::from_polar(v, -2.0 * PI * (k * n) as f64 / x.len() as f64))
            .sum::<Complex64>()
            .norm()
    }

    #[test]
    fn real_input_frames_are_conjugate_symmetric() {
        let x = random_signal(9, 1024);
        let g = stft(&x, &WindowSpec::default()).unwrap();
        for m in 0..g.frames() {
            for k in 1..128 {
                let d = g.at(k, m) - g.at(128 - k, m).conj();
                assert!(d.norm() < 1e-9);
            }
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let w = WindowSpec::default();
        for seed in 0..10 {
            let x = random_signal(seed, 1024);
            let y = istft(&stft(&x, &w).unwrap());
            let err: f64 = x.iter().zip(&y).map(|(a, b)| (b - a).norm_sqr()).sum::<f64>().sqrt();
            let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(err / norm < 1e-12, "relative error {}", err / norm);
        }
    }

    #[test]
    fn zero_grid_inverts_to_zero() {
        let y = istft(&StftGrid::zeros(WindowSpec::default(), 1000));
        assert_eq!(y.len(), 1000);
        assert!(y.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn inverse_is_linear() {
        let w = WindowSpec::default();
        let (x, y) = (random_signal(1, 1024), random_signal(2, 1024));
        let gx = stft(&x, &w).unwrap();
        let gy = stft(&y, &w).unwrap();
        let sum = istft(&gx.add(&gy).unwrap());
        for i in 0..1024 {
            assert!((sum[i] - Complex64::new(x[i] + y[i], 0.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn energy_matches_window_weighted_signal_energy() {
        // sum |X|^2 = K * sum_n x[n]^2 * sum_m h^2[n - s_m]
        let w = WindowSpec::default();
        let x = random_signal(4, 1024);
        let g = stft(&x, &w).unwrap();
        let h = w.window();
        let lhs: f64 = g.data().iter().map(|c| c.norm_sqr()).sum();
        let rhs: f64 = x
            .iter()
            .enumerate()
            .map(|(n, &v)| {
                let cover: f64 = (0..g.frames())
                    .filter_map(|m| {
                        let j = n as i64 - w.frame_start(m);
                        (0..128).contains(&j).then(|| h[j as usize].powi(2))
                    })
                    .sum();
                v * v * cover
            })
            .sum::<f64>()
            * 128.0;
        assert!((lhs - rhs).abs() / rhs < 1e-6);
    }

    #[test]
    fn split_join_round_trip() {
        let x = random_signal(5, 1024);
        let w = WindowSpec::default();
        let g = stft(&x, &w).unwrap();
        let (re, im) = split_complex(&g);
        assert_eq!(join_complex(&re, &im, &w, 1024).unwrap(), g);
        for (i, c) in g.data().iter().enumerate() {
            assert_eq!(c.norm(), re.data[i].hypot(im.data[i]));
        }
        let bad = Plane::zeros(re.rows, re.cols - 1);
        assert!(matches!(join_complex(&re, &bad, &w, 1024), Err(Error::Shape(_))));
    }

    #[test]
    fn real_grid_has_zero_imaginary_plane() {
        let w = WindowSpec::default();
        let cells = 128 * w.frame_count(64);
        let data = (0..cells).map(|i| Complex64::new(i as f64, 0.0)).collect();
        let (_, im) = split_complex(&StftGrid::from_data(data, w, 64).unwrap());
        assert!(im.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grid_encoding_rejects_corruption() {
        let g = stft(&random_signal(6, 200), &WindowSpec::default()).unwrap();
        let bytes = encode_grid(&g);
        let back = decode_grid(&bytes).unwrap();
        assert_eq!((back.bins(), back.frames()), (g.bins(), g.frames()));
        assert!(decode_grid(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong_shape = bytes.clone();
        wrong_shape[12] ^= 1;
        assert!(decode_grid(&wrong_shape).is_err());
        let mut wrong_hop = bytes;
        wrong_hop[24] = 48;
        assert!(decode_grid(&wrong_hop).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn round_trip_for_any_valid_window(
            seed in any::<u64>(),
            len in 1usize..600,
            log_len in 3u32..8,
            overlap in 0u32..3,
            pad in 0u32..2,
        ) {
            let length = 1usize << log_len;
            let hop = (length >> overlap).max(1);
            let kind = if overlap == 0 { WindowKind::Rectangular } else { WindowKind::Hann };
            let w = WindowSpec::new(kind, length, hop, length << pad).unwrap();
            let x = random_signal(seed, len);
            let g = stft(&x, &w).unwrap();
            let encoded = decode_grid(&encode_grid(&g)).unwrap();
            prop_assert_eq!(encoded.window(), g.window());
            let y = istft(&g);
            let err: f64 = x.iter().zip(&y).map(|(a, b)| (b - a).norm_sqr()).sum::<f64>().sqrt();
            let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(err <= 1e-9 * norm.max(1e-300));
        }
    }
}
