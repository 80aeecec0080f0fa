//! Image-domain adversarial attacks: FGSM, PGD, a fixed-constant
//! Carlini-Wagner variant and DITIMI-FGSM (momentum iterative FGSM with
//! input diversity and translation-invariant smoothing).
//!
//! Perturbation budgets are in pixel units out of 255; images live in
//! `[0, 1]`.

mod cw;
mod transform;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::Classifier;
use crate::render::TFImage;
use crate::rng::rng_from_seed;

pub use cw::cw;
pub use transform::{di_transform, ti_smooth, DiDraw, Kernel, DI_MIN_SIDE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Fgsm,
    Pgd,
    Cw,
    Ditimi,
    /// The time-domain signal attack (see [`crate::stds`]).
    Stds,
}

impl AttackMethod {
    pub const ALL: [AttackMethod; 5] = [
        AttackMethod::Fgsm,
        AttackMethod::Pgd,
        AttackMethod::Cw,
        AttackMethod::Ditimi,
        AttackMethod::Stds,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackMethod::Fgsm => "fgsm",
            AttackMethod::Pgd => "pgd",
            AttackMethod::Cw => "cw",
            AttackMethod::Ditimi => "ditimi",
            AttackMethod::Stds => "stds",
        }
    }
}

impl fmt::Display for AttackMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackMethod::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let valid: Vec<_> = AttackMethod::ALL.iter().map(|m| m.name()).collect();
            Error::Config(format!("unknown attack method `{s}`; valid methods: {}", valid.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiKernelConfig {
    pub size: usize,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CwConfig {
    /// Weight of the margin term against the squared distance.
    pub c: f64,
    pub steps: usize,
    /// Adam learning rate in the tanh-reparameterized space.
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Budget in pixel units out of 255.
    pub epsilon: f64,
    /// Step size as a fraction of the pixel range.
    pub alpha: f64,
    pub iterations: usize,
    /// Momentum decay.
    pub mu: f64,
    pub di_probability: f64,
    pub ti_kernel: TiKernelConfig,
    pub cw: CwConfig,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 10.0,
            alpha: 1.0 / 255.0,
            iterations: 10,
            mu: 1.0,
            di_probability: 0.5,
            ti_kernel: TiKernelConfig { size: 7, sigma: 3.0 },
            cw: CwConfig {
                c: 1.0,
                steps: 100,
                lr: 0.01,
            },
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("eps must be finite and >= 0, got {}", self.epsilon));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if self.iterations == 0 {
            return bad("iters must be at least 1".into());
        }
        if !self.mu.is_finite() {
            return bad(format!("mu must be finite, got {}", self.mu));
        }
        if !(0.0..=1.0).contains(&self.di_probability) {
            return bad(format!("p must lie in [0, 1], got {}", self.di_probability));
        }
        if self.ti_kernel.size % 2 == 0 {
            return bad(format!("TI kernel size must be odd, got {}", self.ti_kernel.size));
        }
        if !(self.ti_kernel.sigma > 0.0 && self.ti_kernel.sigma.is_finite()) {
            return bad(format!("TI kernel sigma must be positive, got {}", self.ti_kernel.sigma));
        }
        if !(self.cw.c >= 0.0 && self.cw.c.is_finite() && self.cw.lr > 0.0 && self.cw.lr.is_finite()) {
            return bad("CW needs c >= 0 and lr > 0".into());
        }
        Ok(())
    }

    /// Budget as a fraction of the pixel range.
    pub fn eps_fraction(&self) -> f64 {
        self.epsilon / 255.0
    }

    pub fn kernel(&self) -> Result<Kernel> {
        Kernel::gaussian(self.ti_kernel.size, self.ti_kernel.sigma)
    }
}

/// Accumulated gradient of the momentum attack.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    pub g: Image,
}

impl MomentumState {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        MomentumState {
            g: Image::zeros(channels, height, width),
        }
    }

    /// `g <- mu*g + s/||s||_1`; when `s` is all zero only the decay applies.
    pub fn accumulate(&mut self, mu: f64, s: &Image) {
        let norm = s.l1();
        for (g, &v) in self.g.data.iter_mut().zip(&s.data) {
            *g = if norm > 0.0 { mu * *g + v / norm } else { mu * *g };
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub adv_image: TFImage,
    /// `adv - clean`.
    pub noise_image: Image,
    /// Largest absolute pixel change, as a fraction of the pixel range.
    pub linf: f64,
    /// Euclidean norm of the noise, as a fraction of the pixel range.
    pub l2: f64,
    /// The model's prediction on the clean image.
    pub label_clean: usize,
    pub label_adv: usize,
    /// The adversarial image is not classified as the true label.
    pub success: bool,
    pub iterations_used: usize,
}

impl AttackOutcome {
    pub(crate) fn new(
        m: &impl Classifier,
        clean: &TFImage,
        adv: Image,
        label: usize,
        label_clean: usize,
        iterations_used: usize,
    ) -> Result<Self> {
        let noise_image = adv.sub(&clean.pixels)?;
        let label_adv = m.classify(&adv)?;
        Ok(AttackOutcome {
            linf: noise_image.linf(),
            l2: noise_image.l2(),
            noise_image,
            adv_image: TFImage::with_pixels(clean, adv),
            label_clean,
            label_adv,
            success: label_adv != label,
            iterations_used,
        })
    }
}

/// Sign with `sign(0) = 0`.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One projected sign step: `x_adv + alpha*sign(dir)`, clipped to the
/// `eps`-ball around `x` and to `[0, 1]`.
fn sign_step(x_adv: &mut Image, x: &Image, dir: &Image, alpha: f64, eps: f64) {
    for ((a, &x0), &d) in x_adv.data.iter_mut().zip(&x.data).zip(&dir.data) {
        let v = *a + alpha * sign(d);
        *a = v.clamp(x0 - eps, x0 + eps).clamp(0.0, 1.0);
    }
}

fn prepare(m: &impl Classifier, img: &TFImage, label: usize, cfg: &AttackConfig) -> Result<usize> {
    cfg.validate()?;
    if label >= crate::nn::NUM_CLASSES {
        return Err(Error::Config(format!("label {label} is not a class id")));
    }
    m.classify(&img.pixels)
}

/// Single-step attack: `clip01(x + eps*sign(grad))`.
pub fn fgsm(m: &impl Classifier, img: &TFImage, label: usize, cfg: &AttackConfig) -> Result<AttackOutcome> {
    let label_clean = prepare(m, img, label, cfg)?;
    let x = &img.pixels;
    let grad = m.loss_grad(x, label)?.grad_input;
    let eps = cfg.eps_fraction();
    let mut adv = x.clone();
    for (a, &g) in adv.data.iter_mut().zip(&grad.data) {
        *a = (*a + eps * sign(g)).clamp(0.0, 1.0);
    }
    AttackOutcome::new(m, img, adv, label, label_clean, 1)
}

/// Iterative sign attack from the clean image (no random start), projected
/// onto the budget and the pixel range after every step.
pub fn pgd(m: &impl Classifier, img: &TFImage, label: usize, cfg: &AttackConfig) -> Result<AttackOutcome> {
    let label_clean = prepare(m, img, label, cfg)?;
    let x = &img.pixels;
    let eps = cfg.eps_fraction();
    let mut adv = x.clone();
    for _ in 0..cfg.iterations {
        let grad = m.loss_grad(&adv, label)?.grad_input;
        sign_step(&mut adv, x, &grad, cfg.alpha, eps);
    }
    AttackOutcome::new(m, img, adv, label, label_clean, cfg.iterations)
}

/// DITIMI-FGSM. Each iteration draws an input-diversity transform, takes the
/// loss gradient at the transformed image (propagated back through the
/// transform), smooths it with the Gaussian kernel, accumulates it into the
/// L1-normalized momentum and takes a projected sign step.
///
/// The returned image is `x_adv^(T-1)`, the iterate after `T - 1` updates;
/// the final update would be discarded, so it is not computed.
pub fn ditimi_fgsm(m: &impl Classifier, img: &TFImage, label: usize, cfg: &AttackConfig) -> Result<AttackOutcome> {
    ditimi_with_kernel(m, img, label, cfg, &cfg.kernel()?)
}

/// [`ditimi_fgsm`] with an explicit smoothing kernel.
pub fn ditimi_with_kernel(
    m: &impl Classifier,
    img: &TFImage,
    label: usize,
    cfg: &AttackConfig,
    kernel: &Kernel,
) -> Result<AttackOutcome> {
    let label_clean = prepare(m, img, label, cfg)?;
    let x = &img.pixels;
    let eps = cfg.eps_fraction();
    let mut rng = rng_from_seed(cfg.seed);
    let mut momentum = MomentumState::new(x.channels, x.height, x.width);
    let mut adv = x.clone();
    let updates = cfg.iterations - 1;
    for _ in 0..updates {
        let draw = DiDraw::sample(cfg.di_probability, DI_MIN_SIDE, x.width, &mut rng);
        let grad = match draw {
            Some(d) => d.backward(&m.loss_grad(&d.apply(&adv), label)?.grad_input),
            None => m.loss_grad(&adv, label)?.grad_input,
        };
        momentum.accumulate(cfg.mu, &ti_smooth(&grad, kernel));
        sign_step(&mut adv, x, &momentum.g, cfg.alpha, eps);
    }
    AttackOutcome::new(m, img, adv, label, label_clean, updates)
}

/// Runs `method` (any image-domain method) with `cfg`.
pub fn run_image_attack(
    method: AttackMethod,
    m: &impl Classifier,
    img: &TFImage,
    label: usize,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    match method {
        AttackMethod::Fgsm => fgsm(m, img, label, cfg),
        AttackMethod::Pgd => pgd(m, img, label, cfg),
        AttackMethod::Cw => cw(m, img, label, cfg),
        AttackMethod::Ditimi => ditimi_fgsm(m, img, label, cfg),
        AttackMethod::Stds => Err(Error::Config("stds attacks waveforms, not images".into())),
    }
}
