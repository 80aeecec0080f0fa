//! Input diversity (random resize and pad) and translation-invariant
//! gradient smoothing.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::render::Resampler;
use crate::rng::Rng;

/// Smallest side length the input-diversity transform resizes to, for the
/// default 64-pixel images (roughly 90% of the side).
pub const DI_MIN_SIDE: usize = 58;

/// One draw of the input-diversity transform: resize to `side`×`side`, then
/// zero-pad back to the original size with the resized image at
/// `(top, left)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiDraw {
    pub side: usize,
    pub top: usize,
    pub left: usize,
}

impl DiDraw {
    /// With probability `p` draws a side in `[min_side, full]` and a uniform
    /// offset; otherwise `None` (identity).
    pub fn sample(p: f64, min_side: usize, full: usize, rng: &mut Rng) -> Option<DiDraw> {
        if !(rng.gen::<f64>() < p) {
            return None;
        }
        let side = rng.gen_range(min_side.min(full)..=full);
        let top = rng.gen_range(0..=full - side);
        let left = rng.gen_range(0..=full - side);
        Some(DiDraw { side, top, left })
    }

    fn is_identity(&self, full: usize) -> bool {
        self.side == full
    }

    pub fn apply(&self, img: &Image) -> Image {
        if self.is_identity(img.width) {
            return img.clone();
        }
        let rs = Resampler::new(img.height, img.width, self.side, self.side);
        let mut out = Image::zeros(img.channels, img.height, img.width);
        let mut small = vec![0.0; self.side * self.side];
        for c in 0..img.channels {
            rs.forward(img.channel(c), &mut small);
            let dst = out.channel_mut(c);
            for (y, row) in small.chunks_exact(self.side).enumerate() {
                let start = (self.top + y) * img.width + self.left;
                dst[start..start + self.side].copy_from_slice(row);
            }
        }
        out
    }

    /// Gradient with respect to the untransformed image given the gradient
    /// at the transformed one.
    pub fn backward(&self, grad: &Image) -> Image {
        if self.is_identity(grad.width) {
            return grad.clone();
        }
        let rs = Resampler::new(grad.height, grad.width, self.side, self.side);
        let mut out = Image::zeros(grad.channels, grad.height, grad.width);
        let mut small = vec![0.0; self.side * self.side];
        for c in 0..grad.channels {
            let src = grad.channel(c);
            for (y, row) in small.chunks_exact_mut(self.side).enumerate() {
                let start = (self.top + y) * grad.width + self.left;
                row.copy_from_slice(&src[start..start + self.side]);
            }
            rs.backward(&small, out.channel_mut(c));
        }
        out
    }
}

/// Applies the input-diversity transform with probability `p`.
pub fn di_transform(img: &Image, p: f64, rng: &mut Rng) -> Image {
    match DiDraw::sample(p, DI_MIN_SIDE, img.width, rng) {
        Some(draw) => draw.apply(img),
        None => img.clone(),
    }
}

/// A square, odd-sized smoothing kernel stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size % 2 == 0 || weights.len() != size * size {
            return Err(Error::Config(format!("kernel must be odd-sized and square, got size {size} with {} weights", weights.len())));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("kernel weights".into()));
        }
        Ok(Kernel { size, weights })
    }

    pub fn delta() -> Self {
        Kernel {
            size: 1,
            weights: vec![1.0],
        }
    }

    /// Sampled Gaussian normalized to sum 1.
    pub fn gaussian(size: usize, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("kernel sigma must be positive, got {sigma}")));
        }
        let r = (size / 2) as f64;
        let mut weights: Vec<f64> = (0..size * size)
            .map(|i| {
                let (y, x) = ((i / size) as f64 - r, (i % size) as f64 - r);
                (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Kernel::new(size, weights)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn at(&self, dy: usize, dx: usize) -> f64 {
        self.weights[dy * self.size + dx]
    }
}

/// Channel-wise 2-D convolution with `kernel`, same output size, zero
/// padding. Near the border the kernel mass falling outside is lost, so a
/// constant field is attenuated there.
pub fn ti_smooth(grad: &Image, kernel: &Kernel) -> Image {
    let (h, w) = (grad.height as isize, grad.width as isize);
    let r = (kernel.size / 2) as isize;
    let mut out = Image::zeros(grad.channels, grad.height, grad.width);
    for c in 0..grad.channels {
        let src = grad.channel(c);
        let dst = out.channel_mut(c);
        for ky in 0..kernel.size {
            // out[y][x] += k[ky][kx] * g[y - (ky - r)][x - (kx - r)]
            let dy = ky as isize - r;
            for kx in 0..kernel.size {
                let dx = kx as isize - r;
                let k = kernel.at(ky, kx);
                let (x0, x1) = (dx.max(0), (w + dx).min(w));
                if x0 >= x1 {
                    continue;
                }
                for y in dy.max(0)..(h + dy).min(h) {
                    let row_out = &mut dst[(y * w) as usize..((y + 1) * w) as usize];
                    let row_in = &src[((y - dy) * w) as usize..((y - dy + 1) * w) as usize];
                    for (o, &g) in row_out[x0 as usize..x1 as usize].iter_mut().zip(&row_in[(x0 - dx) as usize..]) {
                        *o += k * g;
                    }
                }
            }
        }
    }
    out
}
