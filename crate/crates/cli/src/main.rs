//! `cdfkd` command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cdfkd::corrupt::{apply_corruption, CorruptionKind};
use cdfkd::detector::{DetectorModel, Role};
use cdfkd::eval::{evaluate_domains, export_feature_heatmap, heat_in_boxes_ratio};
use cdfkd::harness::{
    run_ablation, run_distillation, train_teacher, write_eval_report, Benchmark, RunConfig,
    TEACHER_CHECKPOINT,
};
use cdfkd::scenes::{generate_scene, DomainVariant};
use cdfkd::seed::derive_seed;
use cdfkd::Image;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "cdfkd", version, about = "Cross-domain feature distillation for robust object detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` run configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root (overrides `data_dir`).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.data {
            cfg.data_dir = d.clone();
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the training split and the five evaluation domains into
    /// `--data` (or `--out` when `--data` is absent).
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain the teacher on clean source scenes.
    TrainTeacher {
        #[command(flatten)]
        common: Common,
    },
    /// Distill a student from a frozen teacher checkpoint.
    Distill {
        #[command(flatten)]
        common: Common,
        /// Teacher checkpoint (default: `<out>/teacher.ckpt`).
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the evaluation domains.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Domain to evaluate; repeat for several (default: all five).
        #[arg(long = "variant")]
        variants: Vec<String>,
    },
    /// Run the component, loss-balance and scale ablations.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Teacher checkpoint (default: `<out>/teacher.ckpt`).
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Write corrupted versions of one image for visual inspection.
    CorruptPreview {
        #[arg(long)]
        out: PathBuf,
        /// Source image (PPM or PNG); a generated scene when absent.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corruption kind (default: all fifteen). With `--severity` and a
        /// `.ppm`/`.png` `--out`, the single corrupted image is written there;
        /// otherwise `--out` is a directory.
        #[arg(long)]
        kind: Option<String>,
        /// Severity 1-5 (default: all five).
        #[arg(long)]
        severity: Option<u8>,
    },
    /// Write the backbone activation heatmap of one image as a PGM.
    Heatmap {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Source image; a generated scene when absent.
        #[arg(long)]
        image: Option<PathBuf>,
        /// Seed of the generated scene.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Domain rendering of the generated scene.
        #[arg(long, default_value = "source-clean")]
        variant: String,
    },
}

fn teacher_path(cfg: &RunConfig, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| cfg.out_dir.join(TEACHER_CHECKPOINT))
}

fn is_image_path(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "ppm" || e == "png")
}

fn preview(out: &Path, image: &Option<PathBuf>, seed: u64, kind: &Option<String>, severity: Option<u8>) -> Result<()> {
    let img = match image {
        Some(p) => Image::load(p)?,
        None => generate_scene(seed, &Default::default())?.image,
    };
    let corrupt = |k: CorruptionKind, s: u8| -> Result<Image> {
        let i = CorruptionKind::ALL.iter().position(|&x| x == k).unwrap_or(0);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, (i * 8 + s as usize) as u64));
        Ok(apply_corruption(&img, k, s, &mut rng)?)
    };
    if is_image_path(out) {
        let (Some(k), Some(s)) = (kind, severity) else {
            bail!("an image --out path needs both --kind and --severity");
        };
        let k = k.parse::<CorruptionKind>()?;
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        corrupt(k, s)?.save(out)?;
        println!("{}\t{}", out.display(), k.describe(s)?);
        return Ok(());
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    img.save(&out.join("clean.ppm"))?;
    let kinds = match kind {
        Some(k) => vec![k.parse::<CorruptionKind>()?],
        None => CorruptionKind::ALL.to_vec(),
    };
    let severities: Vec<u8> = match severity {
        Some(s) => vec![s],
        None => (1..=5).collect(),
    };
    for &k in &kinds {
        for &s in &severities {
            let name = format!("{}-s{s}.ppm", k.id());
            corrupt(k, s)?.save(&out.join(&name))?;
            println!("{name}\t{}", k.describe(s)?);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let mut cfg = common.resolve()?;
            if let (None, Some(o)) = (&common.data, &common.out) {
                cfg.data_dir = o.clone();
            }
            let bench = Benchmark::generate(&cfg)?;
            bench.write(&cfg.data_dir)?;
            println!(
                "wrote {} training scenes and {} domains x {} test scenes to {}",
                bench.train.scenes.len(),
                bench.domains.len(),
                cfg.test_count,
                cfg.data_dir.display()
            );
        }
        Command::TrainTeacher { common } => {
            let cfg = common.resolve()?;
            let run = train_teacher(&cfg)?;
            let last = run.log.last().map_or(f32::NAN, |r| r.l_det);
            println!(
                "teacher: {} steps, final l_det {last}, checkpoint {}",
                run.log.len(),
                cfg.out_dir.join(TEACHER_CHECKPOINT).display()
            );
        }
        Command::Distill { common, teacher } => {
            let cfg = common.resolve()?;
            let run = run_distillation(&cfg, &teacher_path(&cfg, &teacher))?;
            print!("{}", run.report.to_markdown());
        }
        Command::Eval {
            common,
            checkpoint,
            variants,
        } => {
            let cfg = common.resolve()?;
            let variants = if variants.is_empty() {
                DomainVariant::ALL.to_vec()
            } else {
                variants
                    .iter()
                    .map(|v| v.parse::<DomainVariant>())
                    .collect::<Result<Vec<_>, _>>()?
            };
            let model = DetectorModel::load(&checkpoint, Role::Teacher)?;
            let report = evaluate_domains(&model, &cfg.data_dir, &variants)?;
            if common.out.is_some() {
                std::fs::create_dir_all(&cfg.out_dir)?;
                write_eval_report(&cfg.out_dir, &report)?;
            }
            print!("{}", report.to_markdown());
        }
        Command::Ablate { common, teacher } => {
            let cfg = common.resolve()?;
            let report = run_ablation(&cfg, &teacher_path(&cfg, &teacher))?;
            print!("{}", report.to_markdown());
        }
        Command::CorruptPreview {
            out,
            image,
            seed,
            kind,
            severity,
        } => preview(&out, &image, seed, &kind, severity)?,
        Command::Heatmap {
            checkpoint,
            out,
            image,
            seed,
            variant,
        } => {
            let model = DetectorModel::load(&checkpoint, Role::Teacher)?;
            let variant: DomainVariant = variant.parse()?;
            let (img, boxes) = match image {
                Some(p) => (Image::load(&p)?, Vec::new()),
                None => {
                    let scene = cdfkd::scenes::render_domain_variant(&generate_scene(seed, &Default::default())?, variant);
                    let boxes = scene.annotations.iter().map(|a| a.bbox).collect();
                    (scene.image, boxes)
                }
            };
            if out.extension().is_none_or(|e| e != "pgm") {
                bail!("heatmap output must be a .pgm file");
            }
            let heat = export_feature_heatmap(&model, &img, &out)?;
            match heat_in_boxes_ratio(&heat, &boxes) {
                Some(r) => println!("{}\tin-box ratio {r:.4}", out.display()),
                None => println!("{}", out.display()),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
