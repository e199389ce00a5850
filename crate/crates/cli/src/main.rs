use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cit_core::checkpoint::Checkpoint;
use cit_core::data::{self, ExposurePairSpec};
use cit_core::gradcheck::{check_model, GradcheckConfig};
use cit_core::metrics::{MetricReport, SsimMode};
use cit_core::model::parse_kv;
use cit_core::train::{TrainConfig, Trainer};
use cit_core::{CitConfig, CitModel32, Error};

#[derive(Parser)]
#[command(name = "cit", version, about = "CNN-injected transformer for exposure correction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render incorrectly exposed inputs for a directory of well-exposed images.
    SynthData(SynthArgs),
    /// Train and write checkpoints plus loss.csv.
    Train(TrainArgs),
    /// Correct every image in a directory with a checkpoint.
    Infer(InferArgs),
    /// PSNR/SSIM of predictions against ground truth.
    Eval(EvalArgs),
    /// Finite-difference check of every parameter gradient (f64).
    Gradcheck(GradcheckArgs),
    /// Print the resolved config and the layer table.
    Describe(ConfigArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Toy,
    Full,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// key=value file; overrides the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value setting; overrides the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Seeds model init and crop sampling.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory of well-exposed images. Without it, procedural images are used.
    #[arg(long)]
    src: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Number of procedural images when --src is absent.
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-1.5,-1,0,1,1.5")]
    ev: Vec<f64>,
    #[arg(long, default_value_t = 0.9)]
    gamma_lo: f64,
    #[arg(long, default_value_t = 1.1)]
    gamma_hi: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Pair tree written by synth-data.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SsimArg {
    Rgb,
    Luma,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_enum, default_value = "rgb")]
    ssim: SsimArg,
    /// Also write the report here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 4)]
    samples: usize,
}

/// Model and training settings after applying defaults, preset, file and flags.
struct Resolved {
    model: CitConfig,
    train: TrainConfig,
}

impl Resolved {
    fn set(&mut self, key: &str, value: &str) -> Result<(), Error> {
        if self.model.set(key, value)? || self.train.set(key, value)? {
            return Ok(());
        }
        Err(Error::Config(format!("unknown key {key}")))
    }

    fn print(&self) {
        println!("# resolved config");
        for (k, v) in self.model.to_pairs().into_iter().chain(self.train.to_pairs()) {
            println!("{k}={v}");
        }
    }
}

fn preset(p: Preset) -> Resolved {
    match p {
        Preset::Toy => Resolved {
            model: CitConfig::toy(),
            train: TrainConfig { steps: 500, batch: 4, crop: 64, lr: 1e-3, ..TrainConfig::default() },
        },
        Preset::Full => Resolved {
            model: CitConfig::full(),
            train: TrainConfig { batch: 32, crop: 256, lr: 1e-4, ..TrainConfig::default() },
        },
    }
}

fn resolve(args: &ConfigArgs) -> Result<Resolved, Error> {
    let mut r = match args.preset {
        Some(p) => preset(p),
        None => Resolved { model: CitConfig::default(), train: TrainConfig::default() },
    };
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
        for (k, v) in parse_kv(&text)? {
            r.set(&k, &v)?;
        }
    }
    for s in &args.sets {
        let (k, v) = s.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        r.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = args.seed {
        r.model.seed = seed;
        r.train.sample_seed = seed;
    }
    r.model.validate()?;
    r.train.validate()?;
    Ok(r)
}

fn synth(a: &SynthArgs) -> Result<(), Error> {
    let spec = ExposurePairSpec { ev_offsets: a.ev.clone(), gamma_jitter: (a.gamma_lo, a.gamma_hi), seed: a.seed };
    spec.validate()?;
    println!("# resolved config");
    println!("ev_offsets={}", a.ev.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(","));
    println!("gamma_lo={}\ngamma_hi={}\nseed={}", a.gamma_lo, a.gamma_hi, a.seed);
    let tmp;
    let src = match &a.src {
        Some(s) => s.as_path(),
        None => {
            println!("procedural_count={}\nprocedural_size={}", a.count, a.size);
            tmp = a.out.join("source");
            data::write_procedural(&tmp, a.count, a.size, a.seed)?;
            tmp.as_path()
        }
    };
    let n = data::synth_directory(src, &a.out, &spec)?;
    println!("wrote {n} pairs to {}", a.out.display());
    Ok(())
}

fn train(a: &TrainArgs) -> Result<(), Error> {
    let mut r = resolve(&a.cfg)?;
    if let Some(v) = a.steps {
        r.train.steps = v;
    }
    if let Some(v) = a.batch {
        r.train.batch = v;
    }
    if let Some(v) = a.crop {
        r.train.crop = v;
    }
    if let Some(v) = a.lr {
        r.train.lr = v;
    }
    r.train.validate()?;
    let pairs = data::load_pair_tree(&a.data)?;
    let mut trainer = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::<f32>::load(path)?;
            r.model = ck.config.clone();
            Trainer::resume(ck, pairs, r.train.clone())?
        }
        None => Trainer::new(CitModel32::new(r.model.clone())?, pairs, r.train.clone())?,
    };
    r.print();
    let every = r.train.log_every.max(1);
    trainer.run(Some(&a.out), |rec| {
        if rec.step % every == 0 {
            println!("{}", rec.csv_row());
        }
    })?;
    println!("checkpoint {}", a.out.join("last.ckpt").display());
    Ok(())
}

fn infer(a: &InferArgs) -> Result<(), Error> {
    let ck = Checkpoint::<f32>::load(&a.checkpoint)?;
    println!("# resolved config\n{}", ck.config);
    let model = CitModel32::with_params(ck.config, ck.params)?;
    let files = data::list_images(&a.input)?;
    if files.is_empty() {
        return Err(Error::Config(format!("no images under {}", a.input.display())));
    }
    for path in files {
        let img = data::load_image(&path)?;
        let y = model.infer(&data::to_tensor(&[&img])?)?;
        let out = &data::from_tensor(&y)?[0];
        let rel = path.strip_prefix(&a.input).unwrap_or(&path);
        let dest = a.output.join(rel).with_extension("png");
        data::save_image(out, &dest)?;
        println!("{} -> {}", path.display(), dest.display());
    }
    Ok(())
}

/// Ground-truth file for a prediction: same relative path, or the same
/// path with an exposure suffix stripped, under any supported extension.
fn find_gt(gt_root: &Path, rel: &Path) -> Option<PathBuf> {
    let stem = rel.file_stem()?.to_str()?;
    let mut stems = vec![stem.to_string()];
    if let Some(pos) = stem.rfind("_ev") {
        stems.push(stem[..pos].to_string());
    }
    for s in stems {
        for ext in ["png", "jpg", "jpeg", "bmp"] {
            let p = gt_root.join(rel).with_file_name(format!("{s}.{ext}"));
            if p.is_file() {
                return Some(p);
            }
        }
    }
    None
}

fn eval(a: &EvalArgs) -> Result<(), Error> {
    let mode = match a.ssim {
        SsimArg::Rgb => SsimMode::RgbMean,
        SsimArg::Luma => SsimMode::Luma,
    };
    println!("# resolved config\nssim={}", if matches!(mode, SsimMode::Luma) { "luma" } else { "rgb" });
    let mut report = MetricReport::default();
    for path in data::list_images(&a.pred)? {
        let rel = path.strip_prefix(&a.pred).unwrap_or(&path).to_path_buf();
        let gt = find_gt(&a.gt, &rel).ok_or_else(|| Error::Config(format!("no ground truth for {}", rel.display())))?;
        report.push(rel, &data::load_image(&path)?, &data::load_image(&gt)?, mode)?;
    }
    if report.rows.is_empty() {
        return Err(Error::Config(format!("no images under {}", a.pred.display())));
    }
    let csv = report.to_csv();
    print!("{csv}");
    if let Some(p) = &a.csv {
        std::fs::write(p, &csv).map_err(|e| Error::Io { path: p.clone(), source: e })?;
    }
    Ok(())
}

fn gradcheck(a: &GradcheckArgs) -> Result<bool, Error> {
    let args = ConfigArgs { preset: Some(a.cfg.preset.unwrap_or(Preset::Toy)), ..a.cfg.clone() };
    let r = resolve(&args)?;
    r.print();
    let cfg = GradcheckConfig { tol: a.tol, samples: a.samples, seed: r.model.seed, ..GradcheckConfig::default() };
    let report = check_model(&r.model, a.size, &cfg)?;
    println!("{report}");
    Ok(report.passed())
}

fn describe(a: &ConfigArgs) -> Result<(), Error> {
    let r = resolve(a)?;
    r.print();
    if a.preset.is_none() && a.config.is_none() && a.sets.is_empty() {
        for (name, p) in [("toy", Preset::Toy), ("full", Preset::Full)] {
            let pr = preset(p);
            println!("# preset {name}");
            for (k, v) in pr.model.to_pairs().into_iter().chain(pr.train.to_pairs()) {
                println!("{k}={v}");
            }
        }
    }
    let model = CitModel32::new(r.model)?;
    print!("{}", model.describe());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::SynthData(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Describe(a) => describe(a),
        Command::Gradcheck(a) => match gradcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => {
                eprintln!("error[GradcheckFailed]: gradient check exceeded tolerance {}", a.tol);
                return ExitCode::from(1);
            }
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(1)
        }
    }
}
