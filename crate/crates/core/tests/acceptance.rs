//! End-to-end acceptance checks. Runs as a plain binary so that each check
//! prints exactly one PASS/FAIL line; exits non-zero if any check fails.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng as _;
use rand_distr::StandardNormal;

use tfadv::attacks::{ditimi_with_kernel, fgsm, pgd, AttackConfig, AttackMethod, Kernel};
use tfadv::eval::{load_dataset, render_dataset, run_plan, ExperimentPlan, PlanOutput, Split, DATASET_DIR, MODELS_DIR};
use tfadv::nn::{self, ArchId, Classifier, Model};
use tfadv::render::{Renderer, TFImage};
use tfadv::rng::rng_from_seed;
use tfadv::stds::{plane_gradient, stds_attack, StdsConfig};
use tfadv::tfa::{istft, split_complex, stft, WindowSpec};

struct Check {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

fn stft_round_trip() -> Check {
    let start = Instant::now();
    let w = WindowSpec::default();
    let mut rng = rng_from_seed(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x: Vec<f64> = (0..1024).map(|_| rng.sample(StandardNormal)).collect();
        let y = istft(&stft(&x, &w).unwrap());
        let err = norm(y.iter().zip(&x).map(|(a, b)| (a.re - b).hypot(a.im)));
        worst = worst.max(err / norm(x.iter().copied()));
    }
    let t = start.elapsed();
    Check {
        id: 1,
        name: "STFT round trip",
        pass: worst < 1e-6 && t < Duration::from_secs(5),
        detail: format!("worst relative error {worst:.2e} over 100 signals (< 1e-6), {} (< 5s)", secs(t)),
    }
}

/// Central differences at `n` random coordinates whose two one-sided
/// differences agree (a disagreement means the step crossed a ReLU, max-pool
/// or colormap switch, where the derivative is not defined). Returns the
/// worst relative error and the number of skipped coordinates.
fn fd_check(
    n: usize,
    len: usize,
    seed: u64,
    h: f64,
    analytic: &dyn Fn(usize) -> f64,
    loss_at: &dyn Fn(usize, f64) -> f64,
    allowed: &dyn Fn(usize) -> bool,
) -> (f64, usize) {
    let mut rng = rng_from_seed(seed);
    let l0 = loss_at(0, 0.0);
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    while checked < n {
        let i = rng.gen_range(0..len);
        if !allowed(i) {
            continue;
        }
        let (lp, lm) = (loss_at(i, h), loss_at(i, -h));
        let fd = (lp - lm) / (2.0 * h);
        let a = analytic(i);
        let scale = fd.abs().max(a.abs());
        if scale < 1e-10 || ((lp - l0) - (l0 - lm)).abs() / h > 1e-2 * scale {
            skipped += 1;
            continue;
        }
        worst = worst.max((fd - a).abs() / scale);
        checked += 1;
    }
    (worst, skipped)
}

fn gradient_fidelity(model: &Model, image: &TFImage, signal: &[f64], label: usize) -> Check {
    let start = Instant::now();
    let x = &image.pixels;
    let g = model.loss_grad(x, label).unwrap().grad_input;
    let loss_px = |i: usize, d: f64| {
        let mut xp = x.clone();
        xp.data[i] += d;
        model.loss_grad(&xp, label).unwrap().loss
    };
    let (cnn_err, cnn_skip) = fd_check(25, x.data.len(), 21, 1e-4, &|i| g.data[i], &loss_px, &|_| true);

    let w = WindowSpec::default();
    let r = Renderer::default();
    let (re, im) = split_complex(&stft(signal, &w).unwrap());
    let (_, gr, gi) = plane_gradient(model, &re, &im, label, &r).unwrap();
    let cells = re.data.len();
    let mag: Vec<f64> = re.data.iter().zip(&im.data).map(|(a, b)| a.hypot(*b)).collect();
    let lo = mag.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = mag.iter().cloned().fold(0.0, f64::max);
    let loss_plane = |i: usize, d: f64| {
        let (mut r2, mut i2) = (re.clone(), im.clone());
        if i < cells {
            r2.data[i] += d;
        } else {
            i2.data[i - cells] += d;
        }
        plane_gradient(model, &r2, &i2, label, &r).unwrap().0
    };
    let analytic = |i: usize| if i < cells { gr.data[i] } else { gi.data[i - cells] };
    // The normalization range is held constant in the gradient, so the
    // cells that define it are not compared.
    let free = |i: usize| mag[i % cells] != lo && mag[i % cells] != hi;
    let (pipe_err, pipe_skip) = fd_check(25, 2 * cells, 22, 1e-4, &analytic, &loss_plane, &free);
    let t = start.elapsed();
    Check {
        id: 2,
        name: "gradient fidelity",
        pass: cnn_err < 1e-4 && pipe_err < 1e-3 && t < Duration::from_secs(30),
        detail: format!(
            "CNN worst rel err {cnn_err:.2e} (< 1e-4, 25 coords, {cnn_skip} kink steps skipped), \
             render+CNN {pipe_err:.2e} (< 1e-3, 25 coords, {pipe_skip} skipped), {}",
            secs(t)
        ),
    }
}

fn clean_accuracy(out: &PlanOutput) -> Check {
    let a = out.models.iter().find(|m| m.arch == ArchId::TinyA).unwrap();
    let others: Vec<String> = out
        .models
        .iter()
        .filter(|m| m.arch != ArchId::TinyA)
        .map(|m| format!("{} {:.2}%", m.arch.name(), 100.0 * m.test_accuracy))
        .collect();
    Check {
        id: 3,
        name: "clean-task competence",
        pass: a.test_accuracy >= 0.95 && a.history.epochs.len() <= 20 && a.train_time < Duration::from_secs(600),
        detail: format!(
            "tinyA {:.2}% test accuracy (>= 95%) after {} epochs in {} (< 10 min); {}",
            100.0 * a.test_accuracy,
            a.history.epochs.len(),
            secs(a.train_time),
            others.join(", ")
        ),
    }
}

struct Fixture {
    model: Model,
    images: Vec<TFImage>,
    signals: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

fn fixture(dir: &Path) -> Fixture {
    let ds = load_dataset(&dir.join(DATASET_DIR)).unwrap();
    let model = nn::load(&dir.join(MODELS_DIR).join("tinyA.tfadv")).unwrap();
    let all = render_dataset(&ds, &WindowSpec::default(), &Renderer::default()).unwrap();
    let mut f = Fixture {
        model,
        images: Vec::new(),
        signals: Vec::new(),
        labels: Vec::new(),
    };
    for (s, img) in ds.samples.iter().zip(all) {
        if s.split == Split::Test {
            f.images.push(img);
            f.signals.push(s.samples.clone());
            f.labels.push(s.label.id() as usize);
        }
    }
    f
}

fn white_box(out: &PlanOutput, f: &Fixture) -> Check {
    // Timed rerun of the three white-box attacks on tinyA's test set.
    let start = Instant::now();
    let cfg = AttackConfig::default();
    for (k, (img, &label)) in f.images.iter().zip(&f.labels).enumerate() {
        let c = AttackConfig { seed: k as u64, ..cfg };
        fgsm(&f.model, img, label, &c).unwrap();
        pgd(&f.model, img, label, &c).unwrap();
        tfadv::attacks::ditimi_fgsm(&f.model, img, label, &c).unwrap();
    }
    let t = start.elapsed();
    let a = ArchId::TinyA;
    let rate = |m| out.matrix.rate(m, a, a).unwrap_or(f64::NAN);
    let (fg, pg, di) = (rate(AttackMethod::Fgsm), rate(AttackMethod::Pgd), rate(AttackMethod::Ditimi));
    Check {
        id: 4,
        name: "white-box attacks",
        pass: pg >= 95.0 && di >= 95.0 && fg < pg && t < Duration::from_secs(300),
        detail: format!(
            "tinyA self-attack PGD {pg:.2}%, DITIMI {di:.2}% (>= 95%), FGSM {fg:.2}% (< PGD), {} for {} samples (< 5 min)",
            secs(t),
            f.images.len()
        ),
    }
}

fn transfer_ordering(out: &PlanOutput) -> Check {
    let avg = |m| {
        [ArchId::TinyB, ArchId::TinyC]
            .iter()
            .map(|&v| out.matrix.rate(m, ArchId::TinyA, v).unwrap_or(f64::NAN))
            .sum::<f64>()
            / 2.0
    };
    let (fg, pg, di) = (avg(AttackMethod::Fgsm), avg(AttackMethod::Pgd), avg(AttackMethod::Ditimi));
    Check {
        id: 5,
        name: "transferability ordering",
        pass: di > fg && di > pg,
        detail: format!(
            "tinyA -> {{tinyB, tinyC}} mean: DITIMI {di:.2}% vs FGSM {fg:.2}%, PGD {pg:.2}%; DITIMI >= 40%: {}",
            if di >= 40.0 { "yes" } else { "no" }
        ),
    }
}

struct StdsRun {
    eligible: usize,
    successes: usize,
    l2_image: Vec<f64>,
    l2_signal: Vec<f64>,
    mean_noise_image: Vec<f64>,
    time: Duration,
}

fn run_stds(f: &Fixture) -> StdsRun {
    let start = Instant::now();
    let (w, r) = (WindowSpec::default(), Renderer::default());
    let mut run = StdsRun {
        eligible: 0,
        successes: 0,
        l2_image: Vec::new(),
        l2_signal: Vec::new(),
        mean_noise_image: vec![0.0; f.images[0].pixels.data.len()],
        time: Duration::ZERO,
    };
    for (k, (x, &label)) in f.signals.iter().zip(&f.labels).enumerate() {
        let o = stds_attack(&f.model, x, label, &StdsConfig::default(), &w, &r).unwrap();
        if o.label_clean != label {
            continue;
        }
        run.eligible += 1;
        if o.success_replay {
            run.successes += 1;
            run.l2_image.push(o.l2_image);
            run.l2_signal.push(o.l2_signal);
            let (re, im) = split_complex(&stft(&o.adv_signal, &w).unwrap());
            let received = r.render(&re, &im).unwrap();
            for (m, (a, c)) in run
                .mean_noise_image
                .iter_mut()
                .zip(received.pixels.data.iter().zip(&f.images[k].pixels.data))
            {
                *m += a - c;
            }
        }
    }
    let n = run.successes.max(1) as f64;
    run.mean_noise_image.iter_mut().for_each(|m| *m /= n);
    run.time = start.elapsed();
    run
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn stds_replay(out: &PlanOutput, s: &StdsRun) -> Check {
    let rate = 100.0 * s.successes as f64 / s.eligible.max(1) as f64;
    let cell = out.matrix.get(AttackMethod::Stds, ArchId::TinyA, ArchId::TinyA).unwrap();
    Check {
        id: 6,
        name: "STDS white-box replay",
        pass: rate >= 80.0 && cell.successes == s.successes && s.time < Duration::from_secs(900),
        detail: format!(
            "{}/{} eligible tinyA test samples misclassified after fresh reception ({rate:.2}%, >= 80%), {} (< 15 min)",
            s.successes,
            s.eligible,
            secs(s.time)
        ),
    }
}

fn concealment(s: &StdsRun) -> Check {
    let l2 = mean(&s.l2_image);
    let sig = mean(&s.l2_signal);
    let of_mean = norm(s.mean_noise_image.iter().copied()) * 255.0;
    Check {
        id: 7,
        name: "concealment metric",
        pass: !s.l2_image.is_empty() && (0.1..=50.0).contains(&l2) && sig < 0.5,
        detail: format!(
            "mean image l2 {l2:.3} pixel units (band 0.1..50, reference 2.286), mean ||x_noise||/||x|| {sig:.4} (< 0.5); \
             l2 of the mean perturbation {of_mean:.3}"
        ),
    }
}

/// Every file under `dir` with a `.csv` extension, relative path and bytes.
fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism(first: &Path, second: &Path, t: Duration) -> Check {
    let (a, b) = (csvs(&first.join("results")), csvs(&second.join("results")));
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    Check {
        id: 8,
        name: "determinism",
        pass: a.len() == b.len() && !a.is_empty() && differing.is_empty(),
        detail: format!(
            "{} result CSVs compared across two full runs ({} each), {} differ",
            a.len(),
            secs(t),
            if a.len() == b.len() { differing.len() } else { a.len().max(b.len()) }
        ),
    }
}

fn reductions(f: &Fixture) -> Check {
    let mut compared = 0;
    let mut equal = 0;
    for (k, (img, &label)) in f.images.iter().zip(&f.labels).enumerate().step_by(15) {
        for t in [1, 2, 5, 10] {
            let plain = AttackConfig {
                iterations: t,
                seed: k as u64,
                ..Default::default()
            };
            let reduced = AttackConfig {
                mu: 0.0,
                di_probability: 0.0,
                iterations: t + 1,
                ..plain
            };
            let a = ditimi_with_kernel(&f.model, img, label, &reduced, &Kernel::delta()).unwrap();
            let b = pgd(&f.model, img, label, &plain).unwrap();
            compared += 1;
            equal += (a.adv_image.pixels.data == b.adv_image.pixels.data) as usize;
        }
        let one = AttackConfig {
            iterations: 1,
            alpha: 10.0 / 255.0,
            ..Default::default()
        };
        let a = pgd(&f.model, img, label, &one).unwrap();
        let b = fgsm(&f.model, img, label, &one).unwrap();
        compared += 1;
        equal += (a.adv_image.pixels.data == b.adv_image.pixels.data) as usize;
    }
    Check {
        id: 9,
        name: "reductions",
        pass: compared > 0 && equal == compared,
        detail: format!(
            "{equal}/{compared} bitwise equal (DITIMI with mu=0, p=0, delta kernel vs iterative FGSM with the same \
             number of updates; PGD T=1, alpha=eps vs FGSM)"
        ),
    }
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().unwrap();
    let (first, second) = (tmp.path().join("run1"), tmp.path().join("run2"));
    let mut checks = vec![stft_round_trip()];
    report(checks.last().unwrap());

    let start = Instant::now();
    let out = run_plan(&ExperimentPlan {
        output_dir: first.clone(),
        ..Default::default()
    })
    .unwrap();
    let plan_time = start.elapsed();
    eprintln!("default plan finished in {}", secs(plan_time));
    let f = fixture(&first);

    let k = 0;
    let next = |c: Check, checks: &mut Vec<Check>| {
        report(&c);
        checks.push(c);
    };
    next(gradient_fidelity(&f.model, &f.images[k], &f.signals[k], f.labels[k]), &mut checks);
    next(clean_accuracy(&out), &mut checks);
    next(white_box(&out, &f), &mut checks);
    next(transfer_ordering(&out), &mut checks);
    let stds = run_stds(&f);
    next(stds_replay(&out, &stds), &mut checks);
    next(concealment(&stds), &mut checks);

    let start = Instant::now();
    run_plan(&ExperimentPlan {
        output_dir: second.clone(),
        ..Default::default()
    })
    .unwrap();
    next(determinism(&first, &second, start.elapsed()), &mut checks);
    next(reductions(&f), &mut checks);

    eprintln!("\nmatrix:\n{}", out.matrix.report());
    let failed: Vec<u32> = checks.iter().filter(|c| !c.pass).map(|c| c.id).collect();
    println!(
        "acceptance: {}/{} criteria passed{}",
        checks.len() - failed.len(),
        checks.len(),
        if failed.is_empty() { String::new() } else { format!("; failed: {failed:?}") }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn report(c: &Check) {
    println!(
        "criterion {} {} {}: {}",
        c.id,
        if c.pass { "PASS" } else { "FAIL" },
        c.name,
        c.detail
    );
}
