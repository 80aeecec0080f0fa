use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tfadv::attacks::{AttackConfig, AttackMethod};
use tfadv::eval::{
    examples, generate_dataset, load_dataset, render_dataset, run_plan, save_dataset, train_arch, DatasetConfig,
    DatasetSource, ExperimentPlan, ModelSource, Split, TransferMatrix, MATRIX_PATH,
};
use tfadv::nn::{self, accuracy, ArchId, TrainConfig};
use tfadv::render::{ImageFormat, MagnitudeScale, Renderer};
use tfadv::stds::StdsConfig;
use tfadv::tfa::WindowSpec;
use tfadv::waveforms::{Interval, SignalClass, WaveformConfig};
use tfadv::{Error, Result};

#[derive(Parser)]
#[command(name = "tfadv", version, about = "Adversarial attacks on radar time-frequency image classifiers")]
struct Cli {
    /// Worker threads (defaults to the available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled waveform dataset.
    Gen(GenArgs),
    /// Train one classifier on a dataset.
    Train(TrainArgs),
    /// White-box attack: adversarial examples scored on their own source model.
    Attack(AttackArgs),
    /// Attack from source models and score on victim models.
    Transfer(TransferArgs),
    /// Format a result matrix as text tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_delimiter = ',', default_value = "barker,costas,lfm")]
    classes: Vec<SignalClass>,
    #[arg(long, default_value_t = 400)]
    per_class: usize,
    /// SNR range in dB as lo:hi.
    #[arg(long, default_value = "-10:10", allow_hyphen_values = true)]
    snr: Interval,
    /// Share of each class held out for testing.
    #[arg(long, default_value_t = 0.25)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    arch: ArchId,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Magnitude scale of the rendered images: linear or db.
    #[arg(long, default_value = "linear", value_parser = parse_scale)]
    scale: MagnitudeScale,
    /// Output weight file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct AttackOptions {
    /// Comma-separated methods: fgsm, pgd, cw, ditimi, stds (or `all`).
    #[arg(long, value_delimiter = ',', required = true)]
    method: Vec<String>,
    #[arg(long)]
    data: PathBuf,
    /// Budget in pixel units out of 255.
    #[arg(long, default_value_t = 10.0)]
    eps: f64,
    /// Step size as a fraction of the pixel range; `a/b` is accepted.
    #[arg(long, default_value = "1/255", value_parser = parse_fraction)]
    alpha: f64,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    /// Momentum decay.
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    /// Input diversity probability.
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    /// Signal attack learning rate.
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Signal attack iteration cap.
    #[arg(long, default_value_t = 200)]
    stds_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Attack only the first N test samples (interleaved by class).
    #[arg(long)]
    limit: Option<usize>,
    /// Triptych figures per method and source.
    #[arg(long, default_value_t = 2)]
    figures: usize,
    #[arg(long, default_value = "ppm")]
    format: ImageFormat,
    #[arg(long, default_value = "linear", value_parser = parse_scale)]
    scale: MagnitudeScale,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    opts: AttackOptions,
}

#[derive(Args)]
struct TransferArgs {
    /// Source model weight files.
    #[arg(long, value_delimiter = ',', required = true)]
    source: Vec<PathBuf>,
    /// Victim model weight files; sources may be repeated here.
    #[arg(long, value_delimiter = ',', required = true)]
    victims: Vec<PathBuf>,
    #[command(flatten)]
    opts: AttackOptions,
}

#[derive(Args)]
struct ReportArgs {
    /// A run directory or its `results/` directory.
    #[arg(long)]
    results: PathBuf,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_scale(s: &str) -> std::result::Result<MagnitudeScale, String> {
    match s.to_ascii_lowercase().as_str() {
        "linear" => Ok(MagnitudeScale::Linear),
        "db" => Ok(MagnitudeScale::Decibel),
        _ => Err(format!("unknown scale `{s}` (expected linear or db)")),
    }
}

fn parse_fraction(s: &str) -> std::result::Result<f64, String> {
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
            a / b
        }
        None => s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

fn scale_name(s: MagnitudeScale) -> &'static str {
    match s {
        MagnitudeScale::Linear => "linear",
        MagnitudeScale::Decibel => "db",
    }
}

fn paths(ps: &[PathBuf]) -> String {
    ps.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(4);
        }
    }
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Attack(a) => attack(a),
        Command::Transfer(a) => transfer(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let cfg = DatasetConfig {
        waveform: WaveformConfig {
            snr_range_db: a.snr,
            ..Default::default()
        },
        classes: a.classes,
        per_class: a.per_class,
        test_fraction: a.test_fraction,
        seed: a.seed,
    };
    cfg.validate()?;
    let classes: Vec<&str> = cfg.classes.iter().map(|c| c.name()).collect();
    println!(
        "effective config: tfadv gen --classes {} --per-class {} --snr {} --test-fraction {} --seed {} --out {}",
        classes.join(","),
        cfg.per_class,
        a.snr,
        cfg.test_fraction,
        cfg.seed,
        a.out.display()
    );
    let ds = generate_dataset(&cfg)?;
    save_dataset(&ds, &a.out)?;
    println!(
        "wrote {} records ({} train, {} test) to {}",
        ds.samples.len(),
        ds.count(Split::Train),
        ds.count(Split::Test),
        a.out.display()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    if cfg.batch_size == 0 || !(cfg.lr.is_finite() && cfg.lr >= 0.0) {
        return Err(Error::Config("--batch-size must be positive and --lr finite and >= 0".into()));
    }
    println!(
        "effective config: tfadv train --arch {} --data {} --epochs {} --lr {} --batch-size {} --seed {} --scale {} --out {}",
        a.arch.name(),
        a.data.display(),
        cfg.epochs,
        cfg.lr,
        cfg.batch_size,
        cfg.seed,
        scale_name(a.scale),
        a.out.display()
    );
    let ds = load_dataset(&a.data)?;
    let images = render_dataset(&ds, &WindowSpec::default(), &Renderer::default().with_scale(a.scale))?;
    let train_set = examples(&ds, &images, Split::Train);
    let test_set = examples(&ds, &images, Split::Test);
    let (model, history) = if cfg.epochs == 0 {
        (nn::Model::init(a.arch, cfg.seed), Default::default())
    } else {
        train_arch(a.arch, &train_set, &[], &cfg)?
    };
    for e in &history.epochs {
        eprintln!("epoch {:>3}  loss {:.4}  train accuracy {:.2}%", e.epoch, e.train_loss, 100.0 * e.train_accuracy);
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    nn::save(&model, &a.out)?;
    if test_set.is_empty() {
        println!("{}: no test samples; weights saved to {}", a.arch.name(), a.out.display());
    } else {
        println!(
            "{}: test accuracy {:.2}% on {} samples; weights saved to {}",
            a.arch.name(),
            100.0 * accuracy(&model, &test_set)?,
            test_set.len(),
            a.out.display()
        );
    }
    Ok(())
}

fn methods(names: &[String]) -> Result<Vec<AttackMethod>> {
    if names.iter().any(|n| n == "all") {
        return Ok(AttackMethod::ALL.to_vec());
    }
    let mut out: Vec<AttackMethod> = Vec::new();
    for n in names {
        let m: AttackMethod = n.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    Ok(out)
}

fn model_arch(path: &Path) -> Result<ArchId> {
    Ok(nn::load(path)?.id())
}

/// Builds and validates the plan, echoes it, runs it and prints one summary
/// line per matrix cell.
fn run_attacks(cmd: &str, models: &str, opts: &AttackOptions, model_files: Vec<PathBuf>, pairs: Vec<(ArchId, ArchId)>) -> Result<()> {
    let attacks = methods(&opts.method)?;
    let plan = ExperimentPlan {
        dataset: DatasetSource::Load(opts.data.clone()),
        window: WindowSpec::default(),
        scale: opts.scale,
        models: ModelSource::Load(model_files),
        attacks: attacks.clone(),
        attack: AttackConfig {
            epsilon: opts.eps,
            alpha: opts.alpha,
            iterations: opts.iters,
            mu: opts.mu,
            di_probability: opts.p,
            seed: opts.seed,
            ..Default::default()
        },
        stds: StdsConfig {
            lr: opts.lr,
            iterations: opts.stds_iters,
            ..Default::default()
        },
        pairs,
        seed: opts.seed,
        test_limit: opts.limit,
        image_format: opts.format,
        figures: opts.figures,
        output_dir: opts.out.clone(),
    };
    plan.validate()?;
    let names: Vec<&str> = attacks.iter().map(|m| m.name()).collect();
    let limit = opts.limit.map(|n| format!(" --limit {n}")).unwrap_or_default();
    println!(
        "effective config: tfadv {cmd} {models} --method {} --data {} --eps {} --alpha {} --iters {} --mu {} --p {} --lr {} --stds-iters {} --seed {}{limit} --figures {} --format {} --scale {} --out {}",
        names.join(","),
        opts.data.display(),
        opts.eps,
        opts.alpha,
        opts.iters,
        opts.mu,
        opts.p,
        opts.lr,
        opts.stds_iters,
        opts.seed,
        opts.figures,
        opts.format.extension(),
        scale_name(opts.scale),
        opts.out.display()
    );
    let out = run_plan(&plan)?;
    for e in &out.matrix.entries {
        let rate = e.rate().map(|r| format!("{r:.2}%")).unwrap_or_else(|| "n/a".into());
        let kind = if e.source == e.victim { "white-box" } else { "transfer" };
        println!(
            "{} {} -> {} ({kind}): success {rate} ({}/{} eligible)",
            e.attack,
            e.source.name(),
            e.victim.name(),
            e.successes,
            e.eligible
        );
    }
    println!("results written to {}", opts.out.join(MATRIX_PATH).display());
    Ok(())
}

fn attack(a: AttackArgs) -> Result<()> {
    let arch = model_arch(&a.model)?;
    let models = format!("--model {}", a.model.display());
    run_attacks("attack", &models, &a.opts, vec![a.model], vec![(arch, arch)])
}

fn transfer(a: TransferArgs) -> Result<()> {
    let mut files: Vec<(ArchId, PathBuf)> = Vec::new();
    let mut pick = |p: &PathBuf| -> Result<ArchId> {
        let arch = model_arch(p)?;
        match files.iter().find(|(a, _)| *a == arch) {
            Some((_, q)) if q != p => Err(Error::Config(format!(
                "{} and {} both hold a {} model",
                q.display(),
                p.display(),
                arch.name()
            ))),
            Some(_) => Ok(arch),
            None => {
                files.push((arch, p.clone()));
                Ok(arch)
            }
        }
    };
    let sources = a.source.iter().map(&mut pick).collect::<Result<Vec<_>>>()?;
    let victims = a.victims.iter().map(&mut pick).collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::new();
    for &s in &sources {
        for &v in &victims {
            if !pairs.contains(&(s, v)) {
                pairs.push((s, v));
            }
        }
    }
    let models = format!("--source {} --victims {}", paths(&a.source), paths(&a.victims));
    run_attacks("transfer", &models, &a.opts, files.into_iter().map(|(_, p)| p).collect(), pairs)
}

fn report(a: ReportArgs) -> Result<()> {
    let direct = a.results.join("matrix.csv");
    let path = if direct.exists() { direct } else { a.results.join(MATRIX_PATH) };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let matrix = TransferMatrix::from_csv(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let table = matrix.report();
    print!("{table}");
    if let Some(out) = &a.out {
        fs::write(out, &table).map_err(|e| Error::io(out, e))?;
    }
    Ok(())
}
