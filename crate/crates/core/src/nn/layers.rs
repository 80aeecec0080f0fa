//! Forward and backward kernels on channel-major activations.

pub(crate) struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    fn pad(&self) -> usize {
        self.kernel / 2
    }

    fn taps(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output positions `o` along one axis whose input `o*stride + k - pad`
    /// is in range, for kernel offset `k`.
    fn valid(&self, k: usize, in_len: usize, out_len: usize) -> std::ops::Range<usize> {
        let pad = self.pad();
        let s = self.stride;
        let lo = if k >= pad { 0 } else { (pad - k).div_ceil(s) };
        let hi = if in_len + pad > k {
            ((in_len + pad - k - 1) / s + 1).min(out_len)
        } else {
            0
        };
        lo..hi.max(lo)
    }

    /// Visits every kernel tap and output row with the in-range output
    /// columns; output column `ox` reads input `base + ox*stride - pad`.
    fn for_each_row(&self, mut f: impl FnMut(usize, usize, usize, std::ops::Range<usize>)) {
        let (pad, s) = (self.pad(), self.stride);
        let k = self.kernel;
        for ic in 0..self.in_ch {
            for ky in 0..k {
                let ys = self.valid(ky, self.in_h, self.out_h);
                for kx in 0..k {
                    let xs = self.valid(kx, self.in_w, self.out_w);
                    let tap = (ic * k + ky) * k + kx;
                    for oy in ys.clone() {
                        let iy = oy * s + ky - pad;
                        let in_row = (ic * self.in_h + iy) * self.in_w;
                        f(tap, oy * self.out_w, in_row + kx, xs.clone());
                    }
                }
            }
        }
    }

    /// Column matrix: row `tap` holds the input value each output position
    /// sees through that kernel tap (zero where it falls in the padding).
    fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let p = self.out_plane();
        let (pad, s) = (self.pad(), self.stride);
        let mut cols = vec![0.0; self.taps() * p];
        self.for_each_row(|tap, out_row, in_base, xs| {
            let dst = &mut cols[tap * p + out_row..tap * p + out_row + self.out_w];
            for ox in xs {
                dst[ox] = input[in_base + ox * s - pad];
            }
        });
        cols
    }

    pub fn forward(&self, weights: &[f64], bias: &[f64], input: &[f64], out: &mut [f64]) {
        let p = self.out_plane();
        let taps = self.taps();
        let cols = self.im2col(input);
        for oc in 0..self.out_ch {
            let o = &mut out[oc * p..(oc + 1) * p];
            o.fill(bias[oc]);
            for (tap, &w) in weights[oc * taps..(oc + 1) * taps].iter().enumerate() {
                axpy(w, &cols[tap * p..(tap + 1) * p], o);
            }
        }
    }

    /// Accumulates input gradients into `grad_in` and, when given, weight and
    /// bias gradients.
    pub fn backward(
        &self,
        weights: &[f64],
        input: &[f64],
        grad_out: &[f64],
        grad_in: Option<&mut [f64]>,
        grad_params: Option<(&mut [f64], &mut [f64])>,
    ) {
        let p = self.out_plane();
        let taps = self.taps();
        if let Some((gw, gb)) = grad_params {
            let cols = self.im2col(input);
            for oc in 0..self.out_ch {
                let g = &grad_out[oc * p..(oc + 1) * p];
                gb[oc] += g.iter().sum::<f64>();
                for tap in 0..taps {
                    gw[oc * taps + tap] += dot(g, &cols[tap * p..(tap + 1) * p]);
                }
            }
        }
        if let Some(grad_in) = grad_in {
            let mut gcols = vec![0.0; taps * p];
            for oc in 0..self.out_ch {
                let g = &grad_out[oc * p..(oc + 1) * p];
                for (tap, &w) in weights[oc * taps..(oc + 1) * taps].iter().enumerate() {
                    axpy(w, g, &mut gcols[tap * p..(tap + 1) * p]);
                }
            }
            let (pad, s) = (self.pad(), self.stride);
            self.for_each_row(|tap, out_row, in_base, xs| {
                let src = &gcols[tap * p + out_row..tap * p + out_row + self.out_w];
                for ox in xs {
                    grad_in[in_base + ox * s - pad] += src[ox];
                }
            });
        }
    }
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with four interleaved partial sums so the loop vectorizes;
/// the summation order is fixed, so results are deterministic.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn relu_forward(input: &[f64], out: &mut [f64]) {
    for (o, &v) in out.iter_mut().zip(input) {
        *o = v.max(0.0);
    }
}

pub(crate) fn relu_backward(input: &[f64], grad_out: &[f64], grad_in: &mut [f64]) {
    for ((gi, &g), &v) in grad_in.iter_mut().zip(grad_out).zip(input) {
        *gi = if v > 0.0 { g } else { 0.0 };
    }
}

/// Non-overlapping max pooling; records the flat input index of each
/// window's maximum (first one on ties).
pub(crate) fn maxpool_forward(
    input: &[f64],
    (c, h, w): (usize, usize, usize),
    size: usize,
    out: &mut [f64],
    argmax: &mut [usize],
) {
    let (oh, ow) = (h / size, w / size);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for dy in 0..size {
                    let row = (ch * h + oy * size + dy) * w + ox * size;
                    for (dx, &v) in input[row..row + size].iter().enumerate() {
                        if v > best {
                            best = v;
                            best_idx = row + dx;
                        }
                    }
                }
                let o = (ch * oh + oy) * ow + ox;
                out[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
}

pub(crate) fn maxpool_backward(argmax: &[usize], grad_out: &[f64], grad_in: &mut [f64]) {
    grad_in.fill(0.0);
    for (&i, &g) in argmax.iter().zip(grad_out) {
        grad_in[i] += g;
    }
}

pub(crate) fn gap_forward(input: &[f64], channels: usize, out: &mut [f64]) {
    let plane = input.len() / channels;
    for (c, o) in out.iter_mut().enumerate() {
        *o = input[c * plane..(c + 1) * plane].iter().sum::<f64>() / plane as f64;
    }
}

pub(crate) fn gap_backward(grad_out: &[f64], grad_in: &mut [f64]) {
    let plane = grad_in.len() / grad_out.len();
    for (c, &g) in grad_out.iter().enumerate() {
        grad_in[c * plane..(c + 1) * plane].fill(g / plane as f64);
    }
}

pub(crate) fn dense_forward(weights: &[f64], bias: &[f64], input: &[f64], out: &mut [f64]) {
    let n = input.len();
    for (o, (dst, &b)) in out.iter_mut().zip(bias).enumerate() {
        *dst = b + weights[o * n..(o + 1) * n].iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
    }
}

pub(crate) fn dense_backward(
    weights: &[f64],
    input: &[f64],
    grad_out: &[f64],
    grad_in: Option<&mut [f64]>,
    grad_params: Option<(&mut [f64], &mut [f64])>,
) {
    let n = input.len();
    if let Some(gi) = grad_in {
        gi.fill(0.0);
        for (o, &g) in grad_out.iter().enumerate() {
            for (dst, &w) in gi.iter_mut().zip(&weights[o * n..(o + 1) * n]) {
                *dst += g * w;
            }
        }
    }
    if let Some((gw, gb)) = grad_params {
        for (o, &g) in grad_out.iter().enumerate() {
            gb[o] += g;
            for (dst, &x) in gw[o * n..(o + 1) * n].iter_mut().zip(input) {
                *dst += g * x;
            }
        }
    }
}
