//! STFT-based time-domain signal attack: gradient ascent on the real and
//! imaginary STFT planes through the differentiable renderer, inverted back
//! to a transmittable waveform.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Classifier, NUM_CLASSES};
use crate::render::{Renderer, TFImage};
use crate::tfa::{istft, join_complex, split_complex, stft, Plane, StftGrid, WindowSpec};

/// How the plane gradient is turned into an update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepRule {
    /// `input += lr * g`.
    Raw,
    /// `input += lr * S * g / rms(g)`, with `S` the clean image's largest
    /// magnitude: `lr` is the root-mean-square per-cell change relative to
    /// the grid's own scale, independent of the loss magnitude.
    #[default]
    Scaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StdsConfig {
    pub lr: f64,
    pub iterations: usize,
    /// Stop at the first replay-verified misclassification.
    pub early_stop: bool,
    /// Iterations between early-stop replay checks.
    pub check_every: usize,
    /// Upper bound on `||x_noise|| / ||x||`; the plane perturbation is
    /// scaled back whenever the realized noise exceeds it.
    pub max_noise_l2: Option<f64>,
    pub step: StepRule,
}

impl Default for StdsConfig {
    fn default() -> Self {
        StdsConfig {
            lr: 0.001,
            iterations: 200,
            early_stop: true,
            check_every: 10,
            max_noise_l2: None,
            step: StepRule::Scaled,
        }
    }
}

impl StdsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.iterations == 0 || self.check_every == 0 {
            return Err(Error::Config("iters and the check interval must be at least 1".into()));
        }
        if let Some(b) = self.max_noise_l2 {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::Config(format!("noise budget must be finite and >= 0, got {b}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StdsOutcome {
    pub adv_signal: Vec<f64>,
    pub noise_signal: Vec<f64>,
    pub adv_grid: StftGrid,
    pub tf_image_clean: TFImage,
    /// Rendered from `adv_grid`, the optimized planes themselves.
    pub tf_image_adv: TFImage,
    /// Pixel-unit distance between the clean image and the image the
    /// receiver derives from `adv_signal`.
    pub l2_image: f64,
    /// `||noise_signal|| / ||signal||`.
    pub l2_signal: f64,
    pub label_clean: usize,
    /// Receiver's prediction for `adv_signal`.
    pub label_replay: usize,
    pub success_replay: bool,
    pub iterations_used: usize,
}

/// Real waveform the receiver sees for a (possibly non-symmetric) grid.
fn realize(grid: &StftGrid) -> Vec<f64> {
    istft(grid).into_iter().map(|c| c.re).collect()
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Full reception pipeline on a waveform: fresh STFT, fresh normalization,
/// forward pass. Returns the prediction and whether it differs from
/// `clean_label`.
pub fn replay_verify(
    m: &impl Classifier,
    adv_signal: &[f64],
    clean_label: usize,
    w: &WindowSpec,
    renderer: &Renderer,
) -> Result<(usize, bool)> {
    let image = receive(adv_signal, w, renderer)?;
    let pred = m.classify(&image.pixels)?;
    Ok((pred, pred != clean_label))
}

fn receive(signal: &[f64], w: &WindowSpec, renderer: &Renderer) -> Result<TFImage> {
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("waveform samples".into()));
    }
    let (re, im) = split_complex(&stft(signal, w)?);
    renderer.render(&re, &im)
}

/// Flat Euclidean distance between two images in pixel units (x255).
pub fn image_l2(clean: &TFImage, adv: &TFImage) -> Result<f64> {
    Ok(adv.pixels.sub(&clean.pixels)?.l2() * 255.0)
}

/// Loss and its gradient with respect to both planes.
pub fn plane_gradient(
    m: &impl Classifier,
    re: &Plane,
    im: &Plane,
    label: usize,
    renderer: &Renderer,
) -> Result<(f64, Plane, Plane)> {
    let (image, trace) = renderer.render_traced(re, im)?;
    let lg = m.loss_grad(&image.pixels, label)?;
    let (gr, gi) = renderer.backward(re, im, &trace, &lg.grad_input)?;
    Ok((lg.loss, gr, gi))
}

/// Runs the attack on `signal` with true label `label`.
pub fn stds_attack(
    m: &impl Classifier,
    signal: &[f64],
    label: usize,
    cfg: &StdsConfig,
    w: &WindowSpec,
    renderer: &Renderer,
) -> Result<StdsOutcome> {
    cfg.validate()?;
    if label >= NUM_CLASSES {
        return Err(Error::Config(format!("label {label} is not a class id")));
    }
    let n = signal.len();
    let grid = stft(signal, w)?;
    let (re0, im0) = split_complex(&grid);
    let tf_image_clean = renderer.render(&re0, &im0)?;
    let label_clean = m.classify(&tf_image_clean.pixels)?;
    let scale = tf_image_clean.norm.max_mag;
    let signal_norm = l2(signal);
    let (mut re, mut im) = (re0.clone(), im0.clone());
    let mut used = 0;
    for t in 1..=cfg.iterations {
        let (_, gr, gi) = plane_gradient(m, &re, &im, label, renderer)?;
        let factor = match cfg.step {
            StepRule::Raw => cfg.lr,
            StepRule::Scaled => {
                let sq: f64 = gr.data.iter().chain(&gi.data).map(|g| g * g).sum();
                let rms = (sq / (2 * gr.data.len()) as f64).sqrt();
                if rms > 0.0 { cfg.lr * scale / rms } else { 0.0 }
            }
        };
        if factor == 0.0 {
            break;
        }
        for (p, g) in re.data.iter_mut().zip(&gr.data).chain(im.data.iter_mut().zip(&gi.data)) {
            *p += factor * g;
        }
        used = t;
        if let Some(budget) = cfg.max_noise_l2 {
            project_to_budget(&mut re, &mut im, &re0, &im0, w, n, budget * signal_norm)?;
        }
        if cfg.early_stop && t % cfg.check_every == 0 && t < cfg.iterations {
            let adv = realize(&join_complex(&re, &im, w, n)?);
            if replay_verify(m, &adv, label, w, renderer)?.1 {
                break;
            }
        }
    }
    let adv_grid = join_complex(&re, &im, w, n)?;
    let adv_signal = realize(&adv_grid);
    let noise_signal: Vec<f64> = adv_signal.iter().zip(signal).map(|(a, x)| a - x).collect();
    let received = receive(&adv_signal, w, renderer)?;
    let label_replay = m.classify(&received.pixels)?;
    Ok(StdsOutcome {
        l2_image: image_l2(&tf_image_clean, &received)?,
        l2_signal: if signal_norm > 0.0 { l2(&noise_signal) / signal_norm } else { 0.0 },
        tf_image_adv: renderer.render(&re, &im)?,
        adv_signal,
        noise_signal,
        adv_grid,
        tf_image_clean,
        label_clean,
        label_replay,
        success_replay: label_replay != label,
        iterations_used: used,
    })
}

/// Shrinks the plane perturbation so the realized time-domain noise has norm
/// at most `limit`. The map from planes to noise is linear, so scaling the
/// perturbation scales the noise.
fn project_to_budget(re: &mut Plane, im: &mut Plane, re0: &Plane, im0: &Plane, w: &WindowSpec, n: usize, limit: f64) -> Result<()> {
    let delta_re = Plane {
        data: re.data.iter().zip(&re0.data).map(|(a, b)| a - b).collect(),
        ..re0.clone()
    };
    let delta_im = Plane {
        data: im.data.iter().zip(&im0.data).map(|(a, b)| a - b).collect(),
        ..im0.clone()
    };
    let noise = l2(&realize(&join_complex(&delta_re, &delta_im, w, n)?));
    if noise > limit {
        let s = limit / noise;
        for (p, (&p0, &d)) in re.data.iter_mut().zip(re0.data.iter().zip(&delta_re.data)) {
            *p = p0 + s * d;
        }
        for (p, (&p0, &d)) in im.data.iter_mut().zip(im0.data.iter().zip(&delta_im.data)) {
            *p = p0 + s * d;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::nn::{ArchId, Model};
    use crate::render::NormalizationRecord;
    use crate::rng::rng_from_seed;
    use crate::waveforms::{generate, SignalClass, WaveformConfig};
    use rand::Rng as _;

    fn setup(seed: u64) -> (Model, Vec<f64>, WindowSpec, Renderer) {
        let sig = generate(SignalClass::ALL[seed as usize % 3], &WaveformConfig::default(), seed).unwrap();
        (Model::init(ArchId::TinyA, seed), sig.samples, WindowSpec::default(), Renderer::default())
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (m, x, w, r) = setup(1);
        for step in [StepRule::Raw, StepRule::Scaled] {
            let cfg = StdsConfig { lr: 0.0, step, ..Default::default() };
            let out = stds_attack(&m, &x, 0, &cfg, &w, &r).unwrap();
            assert!(out.noise_signal.iter().all(|v| v.abs() < 1e-9));
            assert!(out.adv_signal.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-9));
            assert_eq!(out.iterations_used, 0);
            assert!(out.l2_image < 1e-6);
            assert_eq!(out.label_replay, out.label_clean);
        }
    }

    #[test]
    fn plane_gradient_matches_finite_differences() {
        let (m, x, w, r) = setup(2);
        let (re, im) = split_complex(&stft(&x, &w).unwrap());
        let label = 1;
        let (loss, gr, gi) = plane_gradient(&m, &re, &im, label, &r).unwrap();
        let mag: Vec<f64> = re.data.iter().zip(&im.data).map(|(a, b)| a.hypot(*b)).collect();
        let lo = mag.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = mag.iter().cloned().fold(0.0, f64::max);
        let mut rng = rng_from_seed(3);
        let h = 1e-4;
        let mut checked = 0;
        while checked < 10 {
            let cell = rng.gen_range(0..re.data.len());
            // The normalization constants are treated as constants, so the
            // cells that set them are excluded.
            if mag[cell] == lo || mag[cell] == hi {
                continue;
            }
            let imag = rng.gen_bool(0.5);
            let eval = |d: f64| {
                let (mut r2, mut i2) = (re.clone(), im.clone());
                if imag {
                    i2.data[cell] += d;
                } else {
                    r2.data[cell] += d;
                }
                plane_gradient(&m, &r2, &i2, label, &r).unwrap().0
            };
            let (lp, lm) = (eval(h), eval(-h));
            let fd = (lp - lm) / (2.0 * h);
            let analytic = if imag { gi.data[cell] } else { gr.data[cell] };
            let scale = fd.abs().max(analytic.abs());
            // Skip cells whose output pixels feed nothing, and differences
            // that straddle a colormap knot or a ReLU switch.
            if scale < 1e-12 || ((lp - loss) - (loss - lm)).abs() / h > 1e-2 * scale {
                continue;
            }
            assert!((fd - analytic).abs() / scale < 1e-3, "cell {cell}: fd {fd} vs {analytic}");
            checked += 1;
        }
    }

    #[test]
    fn image_l2_in_pixel_units() {
        let mk = |v: f64| TFImage {
            pixels: {
                let mut img = Image::zeros(3, 4, 4);
                img.data[7] = v;
                img
            },
            norm: NormalizationRecord { min_mag: 0.0, max_mag: 1.0 },
            source_shape: (4, 4),
        };
        assert_eq!(image_l2(&mk(0.5), &mk(0.5)).unwrap(), 0.0);
        assert!((image_l2(&mk(0.0), &mk(10.0 / 255.0)).unwrap() - 10.0).abs() < 1e-12);
        let other = TFImage { pixels: Image::zeros(3, 4, 5), ..mk(0.0) };
        assert!(matches!(image_l2(&mk(0.0), &other), Err(Error::Shape(_))));
    }

    #[test]
    fn replay_agrees_with_the_recorded_outcome() {
        let (m, x, w, r) = setup(4);
        let (pred, success) = replay_verify(&m, &x, 2, &w, &r).unwrap();
        let (re, im) = split_complex(&stft(&x, &w).unwrap());
        assert_eq!(pred, m.predict(&r.render(&re, &im).unwrap()).unwrap());
        assert_eq!(success, pred != 2);
        let cfg = StdsConfig { iterations: 20, lr: 0.01, ..Default::default() };
        let out = stds_attack(&m, &x, 0, &cfg, &w, &r).unwrap();
        assert_eq!(replay_verify(&m, &out.adv_signal, 0, &w, &r).unwrap(), (out.label_replay, out.success_replay));
        assert_eq!(out.adv_signal.len(), x.len());
        assert!(out.adv_signal.iter().all(|v| v.is_finite()));
        assert!(out.iterations_used <= 20);
    }

    #[test]
    fn noise_budget_is_enforced() {
        let (m, x, w, r) = setup(5);
        let cfg = StdsConfig {
            iterations: 30,
            lr: 0.01,
            early_stop: false,
            max_noise_l2: Some(0.01),
            ..Default::default()
        };
        let out = stds_attack(&m, &x, 1, &cfg, &w, &r).unwrap();
        assert!(out.l2_signal <= 0.01 + 1e-9, "{}", out.l2_signal);
        assert!(out.l2_signal > 0.0);
        assert_eq!(out.iterations_used, 30);
    }

    #[test]
    fn config_validation() {
        assert!(StdsConfig::default().validate().is_ok());
        for cfg in [
            StdsConfig { lr: -1.0, ..Default::default() },
            StdsConfig { iterations: 0, ..Default::default() },
            StdsConfig { max_noise_l2: Some(f64::NAN), ..Default::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn rejects_non_finite_waveforms() {
        let (m, mut x, w, r) = setup(6);
        x[3] = f64::NAN;
        assert!(replay_verify(&m, &x, 0, &w, &r).is_err());
    }
}
