//! Bilinear resampling with half-pixel centers and edge clamping, plus its
//! exact transpose for backpropagation.

#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            Tap {
                lo,
                hi: (lo + 1).min(input - 1),
                frac: src - lo as f64,
            }
        })
        .collect()
}

/// Precomputed sampling positions for one `(in_h, in_w) -> (out_h, out_w)`
/// resize of a single channel.
#[derive(Debug, Clone)]
pub struct Resampler {
    in_h: usize,
    in_w: usize,
    rows: Vec<Tap>,
    cols: Vec<Tap>,
}

impl Resampler {
    pub fn new(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Self {
        assert!(in_h > 0 && in_w > 0 && out_h > 0 && out_w > 0, "empty resize");
        Resampler {
            in_h,
            in_w,
            rows: taps(in_h, out_h),
            cols: taps(in_w, out_w),
        }
    }

    pub fn input_shape(&self) -> (usize, usize) {
        (self.in_h, self.in_w)
    }

    pub fn output_shape(&self) -> (usize, usize) {
        (self.rows.len(), self.cols.len())
    }

    pub fn forward(&self, src: &[f64], dst: &mut [f64]) {
        debug_assert_eq!(src.len(), self.in_h * self.in_w);
        let out_w = self.cols.len();
        debug_assert_eq!(dst.len(), self.rows.len() * out_w);
        for (y, r) in self.rows.iter().enumerate() {
            let top = &src[r.lo * self.in_w..(r.lo + 1) * self.in_w];
            let bottom = &src[r.hi * self.in_w..(r.hi + 1) * self.in_w];
            for (x, c) in self.cols.iter().enumerate() {
                let t = top[c.lo] * (1.0 - c.frac) + top[c.hi] * c.frac;
                let b = bottom[c.lo] * (1.0 - c.frac) + bottom[c.hi] * c.frac;
                dst[y * out_w + x] = t * (1.0 - r.frac) + b * r.frac;
            }
        }
    }

    /// Accumulates the transpose of [`Resampler::forward`] applied to
    /// `grad_out` into `grad_in`.
    pub fn backward(&self, grad_out: &[f64], grad_in: &mut [f64]) {
        let out_w = self.cols.len();
        for (y, r) in self.rows.iter().enumerate() {
            for (x, c) in self.cols.iter().enumerate() {
                let g = grad_out[y * out_w + x];
                if g == 0.0 {
                    continue;
                }
                let gt = g * (1.0 - r.frac);
                let gb = g * r.frac;
                grad_in[r.lo * self.in_w + c.lo] += gt * (1.0 - c.frac);
                grad_in[r.lo * self.in_w + c.hi] += gt * c.frac;
                grad_in[r.hi * self.in_w + c.lo] += gb * (1.0 - c.frac);
                grad_in[r.hi * self.in_w + c.hi] += gb * c.frac;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    #[test]
    fn same_size_is_identity() {
        let mut rng = rng_from_seed(1);
        let src: Vec<f64> = (0..64 * 64).map(|_| rng.gen()).collect();
        let mut dst = vec![0.0; src.len()];
        Resampler::new(64, 64, 64, 64).forward(&src, &mut dst);
        assert_eq!(src, dst);
    }

    #[test]
    fn halving_averages_pairs() {
        let src: Vec<f64> = (0..8).map(|v| v as f64).collect();
        let mut dst = vec![0.0; 4];
        Resampler::new(8, 1, 4, 1).forward(&src, &mut dst);
        assert_eq!(dst, vec![0.5, 2.5, 4.5, 6.5]);
    }

    #[test]
    fn backward_is_the_transpose() {
        // <R x, y> == <x, R^T y> for random x, y.
        let mut rng = rng_from_seed(2);
        let r = Resampler::new(128, 35, 64, 64);
        let x: Vec<f64> = (0..128 * 35).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..64 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut rx = vec![0.0; 64 * 64];
        r.forward(&x, &mut rx);
        let mut rty = vec![0.0; 128 * 35];
        r.backward(&y, &mut rty);
        let lhs: f64 = rx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&rty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }
}
