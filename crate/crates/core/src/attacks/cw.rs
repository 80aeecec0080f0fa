use super::{prepare, AttackConfig, AttackOutcome};
use crate::error::Result;
use crate::image::Image;
use crate::nn::{argmax, Classifier, NUM_CLASSES};
use crate::render::TFImage;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Keeps `atanh` finite for pixels at exactly 0 or 1.
const TANH_LIMIT: f64 = 1.0 - 1e-6;

/// Carlini-Wagner L2 with a fixed trade-off constant and zero confidence
/// margin: minimizes `||delta||^2 + c*max(z_y - max_{j != y} z_j, 0)` with
/// Adam over `w`, where `x_adv = (tanh(w) + 1) / 2`. Returns the misclassified
/// iterate with the smallest perturbation, or the last iterate when none was
/// found. An input that is already misclassified is returned unchanged.
pub fn cw(m: &impl Classifier, img: &TFImage, label: usize, cfg: &AttackConfig) -> Result<AttackOutcome> {
    let label_clean = prepare(m, img, label, cfg)?;
    let x = &img.pixels;
    if label_clean != label {
        return AttackOutcome::new(m, img, x.clone(), label, label_clean, 0);
    }
    let mut w: Vec<f64> = x.data.iter().map(|&v| (2.0 * v - 1.0).clamp(-TANH_LIMIT, TANH_LIMIT).atanh()).collect();
    let mut first = vec![0.0; w.len()];
    let mut second = vec![0.0; w.len()];
    let mut best: Option<(f64, Image, usize)> = None;
    let mut last = x.clone();
    for step in 1..=cfg.cw.steps {
        let adv = Image::from_data(x.channels, x.height, x.width, w.iter().map(|v| (v.tanh() + 1.0) / 2.0).collect())?;
        let mut misclassified = false;
        let (_, grad_margin) = m.vjp(&adv, &mut |z| {
            let other = (0..NUM_CLASSES)
                .filter(|&j| j != label)
                .max_by(|&a, &b| z[a].total_cmp(&z[b]).then(b.cmp(&a)))
                .unwrap();
            let mut up = [0.0; NUM_CLASSES];
            misclassified = argmax(z) != label;
            if z[label] - z[other] > 0.0 {
                up[label] = cfg.cw.c;
                up[other] = -cfg.cw.c;
            }
            up
        })?;
        let dist: f64 = adv.data.iter().zip(&x.data).map(|(a, b)| (a - b) * (a - b)).sum();
        if misclassified && best.as_ref().is_none_or(|(d, _, _)| dist < *d) {
            best = Some((dist, adv.clone(), step - 1));
        }
        let (bc1, bc2) = (1.0 - BETA1.powi(step as i32), 1.0 - BETA2.powi(step as i32));
        for i in 0..w.len() {
            let t = w[i].tanh();
            let g = (2.0 * (adv.data[i] - x.data[i]) + grad_margin.data[i]) * (1.0 - t * t) / 2.0;
            first[i] = BETA1 * first[i] + (1.0 - BETA1) * g;
            second[i] = BETA2 * second[i] + (1.0 - BETA2) * g * g;
            w[i] -= cfg.cw.lr * (first[i] / bc1) / ((second[i] / bc2).sqrt() + ADAM_EPS);
        }
        last = adv;
    }
    let (adv, used) = match best {
        Some((_, adv, step)) => (adv, step),
        None => (last, cfg.cw.steps),
    };
    AttackOutcome::new(m, img, adv, label, label_clean, used)
}
