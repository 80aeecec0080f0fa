//! Time-frequency image rendering: STFT magnitude, per-image min-max
//! normalization, parula colormap and bilinear resize, with an analytic
//! vector-Jacobian product back to the real and imaginary STFT planes.
//!
//! The backward pass treats the per-image minimum and maximum as constants.

mod export;
mod resize;

pub use export::{encode_png, encode_ppm, quantize, write_image, ImageFormat};
pub use resize::Resampler;

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tfa::Plane;

/// Default classifier input side.
pub const IMAGE_SIDE: usize = 64;

const PARULA_CSV: &str = include_str!("../../assets/parula.csv");

/// Colormap lookup table with piecewise-linear interpolation between
/// equally spaced entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorLut {
    entries: Vec<[f64; 3]>,
}

impl ColorLut {
    pub fn new(entries: Vec<[f64; 3]>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::Config(format!("colormap needs at least 2 entries, got {}", entries.len())));
        }
        if let Some(bad) = entries
            .iter()
            .flatten()
            .find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(Error::Config(format!("colormap entry {bad} outside [0, 1]")));
        }
        Ok(ColorLut { entries })
    }

    /// The 64-entry parula table.
    pub fn parula() -> Self {
        static PARULA: OnceLock<ColorLut> = OnceLock::new();
        PARULA
            .get_or_init(|| ColorLut::from_csv(PARULA_CSV).expect("embedded parula table parses"))
            .clone()
    }

    /// Parses one `r,g,b` row per line; blank lines are skipped.
    pub fn from_csv(text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, line)| {
                let fields: Vec<&str> = line.split(',').map(str::trim).collect();
                if fields.len() != 3 {
                    return Err(Error::Format(format!("colormap line {}: expected r,g,b", i + 1)));
                }
                let mut rgb = [0.0; 3];
                for (slot, f) in rgb.iter_mut().zip(&fields) {
                    *slot = f
                        .parse()
                        .map_err(|_| Error::Format(format!("colormap line {}: `{f}` is not a number", i + 1)))?;
                }
                Ok(rgb)
            })
            .collect::<Result<Vec<_>>>()?;
        ColorLut::new(entries).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_csv(&self) -> String {
        self.entries
            .iter()
            .map(|[r, g, b]| format!("{r},{g},{b}\n"))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[[f64; 3]] {
        &self.entries
    }

    /// Segment index and position within it for `u` in `[0, 1]`.
    fn locate(&self, u: f64) -> (usize, f64) {
        let last = (self.entries.len() - 1) as f64;
        let pos = u.clamp(0.0, 1.0) * last;
        let seg = (pos.floor() as usize).min(self.entries.len() - 2);
        (seg, pos - seg as f64)
    }

    pub fn map(&self, u: f64) -> [f64; 3] {
        let (seg, t) = self.locate(u);
        let (a, b) = (self.entries[seg], self.entries[seg + 1]);
        [0, 1, 2].map(|c| a[c] * (1.0 - t) + b[c] * t)
    }

    /// Derivative of each channel with respect to `u` on the active segment.
    pub fn slope(&self, u: f64) -> [f64; 3] {
        let (seg, _) = self.locate(u);
        let (a, b) = (self.entries[seg], self.entries[seg + 1]);
        let last = (self.entries.len() - 1) as f64;
        [0, 1, 2].map(|c| (b[c] - a[c]) * last)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub min_mag: f64,
    pub max_mag: f64,
}

/// Magnitude scale applied before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MagnitudeScale {
    #[default]
    Linear,
    /// `20 log10(max(m, 1e-12))`.
    Decibel,
}

const DB_FLOOR: f64 = 1e-12;

/// Classifier input: an RGB image with every channel value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TFImage {
    pub pixels: Image,
    pub norm: NormalizationRecord,
    /// `(bins, frames)` of the grid it was rendered from.
    pub source_shape: (usize, usize),
}

impl TFImage {
    /// Wraps pixels that did not come from a grid (e.g. an adversarial
    /// image), keeping the provenance of `like`.
    pub fn with_pixels(like: &TFImage, pixels: Image) -> Self {
        TFImage {
            pixels,
            norm: like.norm,
            source_shape: like.source_shape,
        }
    }
}

/// Rendering pipeline: colormap, output size and magnitude scale.
#[derive(Debug, Clone)]
pub struct Renderer {
    pub lut: ColorLut,
    pub height: usize,
    pub width: usize,
    pub scale: MagnitudeScale,
}

impl Default for Renderer {
    fn default() -> Self {
        Renderer::new(ColorLut::parula(), (IMAGE_SIDE, IMAGE_SIDE))
    }
}

/// Forward intermediates kept for [`Renderer::backward`].
#[derive(Debug, Clone)]
pub struct RenderTrace {
    magnitude: Vec<f64>,
    scaled: Vec<f64>,
    norm: NormalizationRecord,
    resampler: Resampler,
}

impl Renderer {
    pub fn new(lut: ColorLut, out_size: (usize, usize)) -> Self {
        Renderer {
            lut,
            height: out_size.0,
            width: out_size.1,
            scale: MagnitudeScale::Linear,
        }
    }

    pub fn with_scale(mut self, scale: MagnitudeScale) -> Self {
        self.scale = scale;
        self
    }

    pub fn render(&self, re: &Plane, im: &Plane) -> Result<TFImage> {
        self.render_traced(re, im).map(|(img, _)| img)
    }

    pub fn render_traced(&self, re: &Plane, im: &Plane) -> Result<(TFImage, RenderTrace)> {
        check_planes(re, im)?;
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("render output size must be positive".into()));
        }
        let magnitude: Vec<f64> = re.data.iter().zip(&im.data).map(|(r, i)| r.hypot(*i)).collect();
        if magnitude.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("STFT planes contain non-finite values".into()));
        }
        let scaled: Vec<f64> = match self.scale {
            MagnitudeScale::Linear => magnitude.clone(),
            MagnitudeScale::Decibel => magnitude.iter().map(|m| 20.0 * m.max(DB_FLOOR).log10()).collect(),
        };
        let (min_mag, max_mag) = scaled
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if !(max_mag > min_mag) {
            return Err(Error::Degenerate("constant magnitude field cannot be normalized".into()));
        }
        let range = max_mag - min_mag;
        let cells = re.rows * re.cols;
        let mut colored = vec![0.0; 3 * cells];
        for (i, &v) in scaled.iter().enumerate() {
            let rgb = self.lut.map((v - min_mag) / range);
            for c in 0..3 {
                colored[c * cells + i] = rgb[c];
            }
        }
        let resampler = Resampler::new(re.rows, re.cols, self.height, self.width);
        let mut pixels = Image::zeros(3, self.height, self.width);
        for c in 0..3 {
            resampler.forward(&colored[c * cells..(c + 1) * cells], pixels.channel_mut(c));
        }
        for v in &mut pixels.data {
            *v = v.clamp(0.0, 1.0);
        }
        let norm = NormalizationRecord { min_mag, max_mag };
        let image = TFImage {
            pixels,
            norm,
            source_shape: (re.rows, re.cols),
        };
        Ok((
            image,
            RenderTrace {
                magnitude,
                scaled,
                norm,
                resampler,
            },
        ))
    }

    /// Vector-Jacobian product: gradients of a loss with respect to the real
    /// and imaginary planes given its gradient with respect to the pixels.
    /// Cells with zero magnitude receive zero gradient.
    pub fn backward(&self, re: &Plane, im: &Plane, trace: &RenderTrace, grad_pixels: &Image) -> Result<(Plane, Plane)> {
        check_planes(re, im)?;
        let (rows, cols) = trace.resampler.input_shape();
        if (re.rows, re.cols) != (rows, cols) {
            return Err(Error::Shape("planes do not match the render trace".into()));
        }
        if grad_pixels.shape() != (3, self.height, self.width) {
            return Err(Error::Shape(format!(
                "pixel gradient {:?} does not match a 3x{}x{} image",
                grad_pixels.shape(),
                self.height,
                self.width
            )));
        }
        let cells = rows * cols;
        let mut grad_color = vec![0.0; 3 * cells];
        for c in 0..3 {
            trace
                .resampler
                .backward(grad_pixels.channel(c), &mut grad_color[c * cells..(c + 1) * cells]);
        }
        let range = trace.norm.max_mag - trace.norm.min_mag;
        let mut d_re = Plane::zeros(rows, cols);
        let mut d_im = Plane::zeros(rows, cols);
        for i in 0..cells {
            let m = trace.magnitude[i];
            if m == 0.0 {
                continue;
            }
            let u = (trace.scaled[i] - trace.norm.min_mag) / range;
            let slope = self.lut.slope(u);
            let d_u: f64 = (0..3).map(|c| grad_color[c * cells + i] * slope[c]).sum();
            let d_scaled = d_u / range;
            let d_mag = match self.scale {
                MagnitudeScale::Linear => d_scaled,
                MagnitudeScale::Decibel if m > DB_FLOOR => d_scaled * 20.0 / (std::f64::consts::LN_10 * m),
                MagnitudeScale::Decibel => 0.0,
            };
            d_re.data[i] = d_mag * re.data[i] / m;
            d_im.data[i] = d_mag * im.data[i] / m;
        }
        Ok((d_re, d_im))
    }
}

fn check_planes(re: &Plane, im: &Plane) -> Result<()> {
    if !re.same_shape(im) || re.data.len() != re.rows * re.cols || im.data.len() != re.data.len() {
        return Err(Error::Shape("real and imaginary planes differ in shape".into()));
    }
    if re.rows == 0 || re.cols == 0 {
        return Err(Error::Shape("empty planes".into()));
    }
    Ok(())
}

/// Renders planes to an RGB image with linear magnitude scaling.
pub fn render_image(re: &Plane, im: &Plane, lut: &ColorLut, out_size: (usize, usize)) -> Result<TFImage> {
    Renderer::new(lut.clone(), out_size).render(re, im)
}

/// Gradient of a loss with respect to the planes, given its gradient with
/// respect to the rendered pixels.
pub fn render_backward(
    re: &Plane,
    im: &Plane,
    lut: &ColorLut,
    out_size: (usize, usize),
    grad_pixels: &Image,
) -> Result<(Plane, Plane)> {
    let renderer = Renderer::new(lut.clone(), out_size);
    let (_, trace) = renderer.render_traced(re, im)?;
    renderer.backward(re, im, &trace, grad_pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn random_planes(seed: u64, rows: usize, cols: usize) -> (Plane, Plane) {
        let mut rng = rng_from_seed(seed);
        let mut gen = || Plane {
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        };
        (gen(), gen())
    }

    /// Per-pixel scalar evaluation of the pipeline written out longhand.
    fn scalar_pixel(re: &Plane, im: &Plane, lut: &[[f64; 3]], out: (usize, usize), c: usize, y: usize, x: usize) -> f64 {
        let mags: Vec<f64> = (0..re.data.len())
            .map(|i| (re.data[i] * re.data[i] + im.data[i] * im.data[i]).sqrt())
            .collect();
        let lo = mags.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = mags.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let color = |r: usize, k: usize| {
            let u = (mags[r * re.cols + k] - lo) / (hi - lo);
            let pos = u * (lut.len() - 1) as f64;
            let i = (pos as usize).min(lut.len() - 2);
            let t = pos - i as f64;
            lut[i][c] + t * (lut[i + 1][c] - lut[i][c])
        };
        let coord = |o: usize, n_in: usize, n_out: usize| {
            let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0).min((n_in - 1) as f64);
            let a = s.floor() as usize;
            (a, (a + 1).min(n_in - 1), s - a as f64)
        };
        let (r0, r1, fy) = coord(y, re.rows, out.0);
        let (k0, k1, fx) = coord(x, re.cols, out.1);
        (1.0 - fy) * ((1.0 - fx) * color(r0, k0) + fx * color(r0, k1)) + fy * ((1.0 - fx) * color(r1, k0) + fx * color(r1, k1))
    }

    #[test]
    fn parula_asset() {
        let lut = ColorLut::parula();
        assert_eq!(lut.len(), 64);
        assert_eq!(lut.entries()[0], [0.2081, 0.1663, 0.5292]);
        assert_eq!(lut.entries()[63], [0.9763, 0.9831, 0.0538]);
        assert_eq!(ColorLut::from_csv(&lut.to_csv()).unwrap(), lut);
    }

    #[test]
    fn lut_csv_errors() {
        assert!(ColorLut::from_csv("0,0,0\n").is_err());
        assert!(ColorLut::from_csv("0,0,0\n1,1\n").is_err());
        assert!(ColorLut::from_csv("0,0,0\n1,1,x\n").is_err());
        assert!(ColorLut::from_csv("0,0,0\n1,1,1.5\n").is_err());
        assert!(ColorLut::from_csv("0,0,0\n\n1,1,1\n").is_ok());
    }

    #[test]
    fn constant_field_is_degenerate() {
        let re = Plane {
            rows: 4,
            cols: 4,
            data: vec![2.0; 16],
        };
        let im = re.clone();
        let err = render_image(&re, &im, &ColorLut::parula(), (64, 64)).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn maximum_cell_takes_last_entry() {
        let (re, im) = random_planes(1, 16, 9);
        let lut = ColorLut::parula();
        let img = render_image(&re, &im, &lut, (16, 9)).unwrap();
        let argmax = (0..re.data.len())
            .max_by(|&a, &b| re.data[a].hypot(im.data[a]).total_cmp(&re.data[b].hypot(im.data[b])))
            .unwrap();
        let (y, x) = (argmax / 9, argmax % 9);
        for c in 0..3 {
            assert_eq!(img.pixels.at(c, y, x), lut.entries()[63][c]);
        }
    }

    #[test]
    fn matches_scalar_oracle() {
        let (re, im) = random_planes(2, 128, 35);
        let lut = ColorLut::parula();
        let img = render_image(&re, &im, &lut, (64, 64)).unwrap();
        for (c, y, x) in [(0, 0, 0), (1, 63, 63), (2, 10, 41), (0, 33, 7), (1, 5, 62), (2, 50, 20)] {
            let expected = scalar_pixel(&re, &im, lut.entries(), (64, 64), c, y, x);
            assert!((img.pixels.at(c, y, x) - expected).abs() < 1e-6);
        }
        assert!(img.pixels.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(img.source_shape, (128, 35));
    }

    #[test]
    fn scale_invariant() {
        let (re, im) = random_planes(3, 128, 35);
        let lut = ColorLut::parula();
        let a = render_image(&re, &im, &lut, (64, 64)).unwrap();
        let scale = |p: &Plane| Plane {
            data: p.data.iter().map(|v| v * 7.5).collect(),
            ..p.clone()
        };
        let b = render_image(&scale(&re), &scale(&im), &lut, (64, 64)).unwrap();
        for (x, y) in a.pixels.data.iter().zip(&b.pixels.data) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let (re, im) = random_planes(4, 128, 35);
        let (dr, di) = render_backward(&re, &im, &ColorLut::parula(), (64, 64), &Image::zeros(3, 64, 64)).unwrap();
        assert!(dr.data.iter().chain(&di.data).all(|&v| v == 0.0));
    }

    #[test]
    fn zero_magnitude_cell_gets_zero_gradient() {
        let (mut re, mut im) = random_planes(5, 16, 16);
        re.data[37] = 0.0;
        im.data[37] = 0.0;
        let mut rng = rng_from_seed(6);
        let g = Image::from_data(3, 16, 16, (0..768).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let (dr, di) = render_backward(&re, &im, &ColorLut::parula(), (16, 16), &g).unwrap();
        assert_eq!((dr.data[37], di.data[37]), (0.0, 0.0));
        assert!(dr.data.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn backward_shape_errors() {
        let (re, im) = random_planes(7, 8, 8);
        let lut = ColorLut::parula();
        assert!(matches!(
            render_backward(&re, &im, &lut, (64, 64), &Image::zeros(3, 32, 32)),
            Err(Error::Shape(_))
        ));
        let short = Plane::zeros(8, 7);
        assert!(matches!(render_image(&re, &short, &lut, (64, 64)), Err(Error::Shape(_))));
    }

    fn fd_check(scale: MagnitudeScale, seed: u64) {
        let (re, im) = random_planes(seed, 128, 35);
        let renderer = Renderer::default().with_scale(scale);
        let mut rng = rng_from_seed(seed + 100);
        let upstream = Image::from_data(3, 64, 64, (0..3 * 64 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let (base, trace) = renderer.render_traced(&re, &im).unwrap();
        let (dr, di) = renderer.backward(&re, &im, &trace, &upstream).unwrap();
        let loss = |r: &Plane, i: &Plane| -> f64 {
            let img = renderer.render(r, i).unwrap();
            img.pixels.data.iter().zip(&upstream.data).map(|(a, b)| a * b).sum()
        };
        let h = 1e-4;
        let mut checked = 0;
        while checked < 20 {
            let cell = rng.gen_range(0..re.data.len());
            let imag = rng.gen::<bool>();
            // Skip the cells that set the normalization and cells sitting
            // within a step of a LUT knot.
            let u = (trace.scaled[cell] - base.norm.min_mag) / (base.norm.max_mag - base.norm.min_mag);
            let knot_dist = (u * 63.0 - (u * 63.0).round()).abs();
            if u < 1e-3 || u > 1.0 - 1e-3 || knot_dist < 1e-3 {
                continue;
            }
            let (mut rp, mut ip) = (re.clone(), im.clone());
            let (mut rm, mut im_m) = (re.clone(), im.clone());
            if imag {
                ip.data[cell] += h;
                im_m.data[cell] -= h;
            } else {
                rp.data[cell] += h;
                rm.data[cell] -= h;
            }
            let fd = (loss(&rp, &ip) - loss(&rm, &im_m)) / (2.0 * h);
            let analytic = if imag { di.data[cell] } else { dr.data[cell] };
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-8);
            assert!(rel < 1e-4, "cell {cell} imag={imag}: fd {fd} vs analytic {analytic}");
            checked += 1;
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        fd_check(MagnitudeScale::Linear, 8);
    }

    #[test]
    fn decibel_gradient_matches_finite_differences() {
        fd_check(MagnitudeScale::Decibel, 9);
    }
}
