//! Run orchestration: benchmark generation, teacher pretraining, frozen
//! teacher distillation, the ablation grid, and report files.
//!
//! Every stochastic choice derives from the config's root seed, so a run
//! repeated from its resolved-config dump reproduces its logs and reports.

mod config;
mod report;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::detector::{assign_targets, detection_loss, prepare_input, DetectorModel, Role};
use crate::distill::{distill_step_with_features, mean_of, DistillSample};
use crate::error::{Error, Result};
use crate::eval::{evaluate_scenes, EvalReport};
use crate::optim::sgd_step;
use crate::scenes::{
    generate_scenes, read_dataset, render_domain_variant, write_dataset, Dataset, DomainVariant, Manifest, Scene,
};
use crate::seed::{derive_named, derive_seed};
use crate::tensor::Tensor;

pub use config::{RunConfig, LR_DROP_FACTOR};
pub use report::{emit_report, AblationReport, AblationRow};

pub const TEACHER_CHECKPOINT: &str = "teacher.ckpt";
pub const STUDENT_CHECKPOINT: &str = "student.ckpt";
pub const RESOLVED_CONFIG: &str = "resolved_config.txt";
pub const TRAIN_SPLIT: &str = "train";

/// Source training scenes plus one test set per domain variant.
#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub train: Dataset,
    pub domains: Vec<(DomainVariant, Dataset)>,
}

impl Benchmark {
    /// Train scenes from `derive_named(seed, "train")`; every domain renders
    /// the same test layouts from `derive_named(seed, "test")`.
    pub fn generate(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let sc = cfg.scene_config();
        let classes = sc.class_names();
        let manifest = |seed, count, w, h| Manifest {
            seed,
            count,
            width: w,
            height: h,
            classes: classes.clone(),
        };
        let train_seed = derive_named(cfg.seed, "train");
        let train = Dataset {
            manifest: manifest(train_seed, cfg.train_count, sc.width, sc.height),
            scenes: generate_scenes(train_seed, cfg.train_count, &sc)?,
        };
        let test_seed = derive_named(cfg.seed, "test");
        let test = generate_scenes(test_seed, cfg.test_count, &sc)?;
        let domains = DomainVariant::ALL
            .iter()
            .map(|&v| {
                let scenes: Vec<Scene> = test.iter().map(|s| render_domain_variant(s, v)).collect();
                let (w, h) = (scenes[0].image.width(), scenes[0].image.height());
                (
                    v,
                    Dataset {
                        manifest: manifest(test_seed, cfg.test_count, w, h),
                        scenes,
                    },
                )
            })
            .collect();
        Ok(Benchmark { train, domains })
    }

    /// Writes `<dir>/train` and `<dir>/<variant>` for each domain.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_dataset(&dir.join(TRAIN_SPLIT), &self.train)?;
        for (v, d) in &self.domains {
            write_dataset(&dir.join(v.name()), d)?;
        }
        Ok(())
    }

    /// Reads the training split and all five domains.
    pub fn load(dir: &Path) -> Result<Self> {
        let train_dir = dir.join(TRAIN_SPLIT);
        if !train_dir.join("manifest.json").exists() {
            return Err(Error::invalid(
                "load benchmark",
                format!("no training split at {}; run gen-data first", train_dir.display()),
            ));
        }
        let train = read_dataset(&train_dir)?;
        let mut domains = Vec::new();
        for &v in &DomainVariant::ALL {
            let d = dir.join(v.name());
            if !d.join("manifest.json").exists() {
                return Err(Error::MissingVariant(format!("{} (looked in {})", v.name(), d.display())));
            }
            domains.push((v, read_dataset(&d)?));
        }
        Ok(Benchmark { train, domains })
    }

    pub fn class_names(&self) -> Vec<String> {
        self.train.manifest.classes.clone()
    }

    pub fn domain(&self, v: DomainVariant) -> Option<&Dataset> {
        self.domains.iter().find(|(d, _)| *d == v).map(|(_, d)| d)
    }
}

/// Scores `model` on every domain of the benchmark.
pub fn evaluate_benchmark(model: &DetectorModel, bench: &Benchmark) -> Result<EvalReport> {
    let domains = bench
        .domains
        .iter()
        .map(|(v, d)| evaluate_scenes(model, v.name(), &d.scenes))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_domains(bench.class_names(), domains))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TeacherStep {
    pub step: usize,
    pub epoch: usize,
    pub l_det: f32,
    pub objectness: f32,
    pub class: f32,
    pub boxes: f32,
    pub lr: f32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistillStep {
    pub step: usize,
    pub l_det: f32,
    pub l_global: f32,
    pub l_instance: f32,
    pub l_total: f32,
    pub skipped_instances: usize,
    pub lr: f32,
}

pub fn teacher_log_csv(log: &[TeacherStep]) -> String {
    let mut s = String::from("step,epoch,l_det,objectness,class,boxes,lr\n");
    for r in log {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.step, r.epoch, r.l_det, r.objectness, r.class, r.boxes, r.lr
        );
    }
    s
}

pub fn distill_log_csv(log: &[DistillStep]) -> String {
    let mut s = String::from("step,l_det,l_global,l_instance,l_total,skipped_instances,lr\n");
    for r in log {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.step, r.l_det, r.l_global, r.l_instance, r.l_total, r.skipped_instances, r.lr
        );
    }
    s
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64)));
    order
}

pub struct TeacherRun {
    /// Trained model with the teacher role (frozen).
    pub model: DetectorModel,
    pub log: Vec<TeacherStep>,
}

/// Pretrains a detector on clean source scenes with the detection loss.
pub fn train_teacher_on(cfg: &RunConfig, train: &[Scene], classes: usize) -> Result<TeacherRun> {
    cfg.validate()?;
    let mut model = DetectorModel::new(classes, Role::Student, derive_named(cfg.seed, "teacher-init"))?;
    let order_seed = derive_named(cfg.seed, "teacher-order");
    let mut log = Vec::new();
    for epoch in 0..cfg.teacher_epochs {
        let sgd = cfg.sgd(epoch, cfg.teacher_epochs);
        let order = epoch_order(order_seed, epoch, train.len());
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true);
            let mut terms = Vec::with_capacity(batch.len());
            let mut parts = [0.0f64; 3];
            for &i in batch {
                let s = &train[i];
                let fm = model.forward_backbone_on(&mut tape, &bound, prepare_input(&s.image)?)?;
                let head = model.forward_head_on(&mut tape, &bound, fm.var)?;
                let shape = tape.shape(fm.var).to_vec();
                let targets = assign_targets(&s.annotations, shape[1], shape[2], fm.stride);
                let l = detection_loss(&mut tape, &head, &targets)?;
                parts[0] += l.breakdown.objectness as f64;
                parts[1] += l.breakdown.class as f64;
                parts[2] += l.breakdown.boxes as f64;
                terms.push(l.total);
            }
            let total = mean_of(&mut tape, &terms)?.expect("chunks are non-empty");
            let grads = tape.backward(total)?.into_params();
            sgd_step(model.params_mut(), &grads, &sgd)?;
            let n = batch.len() as f64;
            log.push(TeacherStep {
                step: log.len(),
                epoch,
                l_det: tape.value(total).item()?,
                objectness: (parts[0] / n) as f32,
                class: (parts[1] / n) as f32,
                boxes: (parts[2] / n) as f32,
                lr: sgd.lr,
            });
        }
        if let Some(last) = log.last() {
            log::info!("teacher epoch {}: l_det {:.4}", epoch + 1, last.l_det);
        }
    }
    Ok(TeacherRun {
        model: model.with_role(Role::Teacher),
        log,
    })
}

fn prepare_out_dir(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    cfg.write_dump(&cfg.out_dir.join(RESOLVED_CONFIG))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `report.json` and `report.md` under `dir`.
pub fn write_eval_report(dir: &Path, report: &EvalReport) -> Result<()> {
    write_text(&dir.join("report.json"), &(serde_json::to_string_pretty(report)? + "\n"))?;
    write_text(&dir.join("report.md"), &report.to_markdown())
}

/// Trains the teacher from `<data_dir>/train` and writes the checkpoint,
/// loss log and resolved config under `out_dir`.
pub fn train_teacher(cfg: &RunConfig) -> Result<TeacherRun> {
    let train_dir = cfg.data_dir.join(TRAIN_SPLIT);
    if !train_dir.join("manifest.json").exists() {
        return Err(Error::invalid(
            "train-teacher",
            format!("no training split at {}; run gen-data first", train_dir.display()),
        ));
    }
    let train = read_dataset(&train_dir)?;
    prepare_out_dir(cfg)?;
    let run = train_teacher_on(cfg, &train.scenes, train.manifest.classes.len())?;
    run.model.save(&cfg.out_dir.join(TEACHER_CHECKPOINT))?;
    write_text(&cfg.out_dir.join("teacher_log.csv"), &teacher_log_csv(&run.log))?;
    Ok(run)
}

/// Frozen teacher features of every clean training image, computed once
/// and shared by all epochs and ablation rows.
pub fn teacher_feature_cache(teacher: &DetectorModel, train: &[Scene]) -> Result<Vec<Tensor>> {
    if teacher.role() != Role::Teacher || teacher.any_trainable() {
        return Err(Error::TrainableTeacher("teacher must be frozen before caching features".into()));
    }
    train.iter().map(|s| teacher.forward_backbone(&s.image)).collect()
}

pub struct DistillRun {
    pub student: DetectorModel,
    pub log: Vec<DistillStep>,
    pub report: EvalReport,
}

/// Distills a student initialized from `teacher`. Diversification draws
/// depend only on the seed, epoch and image index, so rows that differ
/// only in loss flags see identical student inputs.
pub fn run_distillation_on(
    cfg: &RunConfig,
    teacher: &DetectorModel,
    bench: &Benchmark,
    cache: &[Tensor],
) -> Result<DistillRun> {
    cfg.validate()?;
    let train = &bench.train.scenes;
    if cache.len() != train.len() {
        return Err(Error::invalid("distill", "teacher feature cache does not match the training split"));
    }
    let dcfg = cfg.distill();
    dcfg.validate()?;
    let diversify = cfg.diversify();
    let mut student = teacher.with_role(Role::Student);
    let order_seed = derive_named(cfg.seed, "distill-order");
    let draw_seed = derive_named(cfg.seed, "diversify");
    let mut log = Vec::new();
    for epoch in 0..cfg.distill_epochs {
        let order = epoch_order(order_seed, epoch, train.len());
        let epoch_seed = derive_seed(draw_seed, epoch as u64);
        let sgd = cfg.sgd(epoch, cfg.distill_epochs);
        for batch in order.chunks(cfg.batch_size) {
            let mut samples = Vec::with_capacity(batch.len());
            let mut feats = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = &train[i];
                let sample = match &diversify {
                    Some(d) => {
                        let draw = d.draw(&mut ChaCha8Rng::seed_from_u64(derive_seed(epoch_seed, i as u64)));
                        DistillSample::new(s.image.clone(), s.annotations.clone(), d, draw)?
                    }
                    None => DistillSample::identity(s.image.clone(), s.annotations.clone()),
                };
                samples.push(sample);
                feats.push(cache[i].clone());
            }
            let b = distill_step_with_features(teacher, &mut student, &samples, &feats, &dcfg, &sgd)?;
            log.push(DistillStep {
                step: log.len(),
                l_det: b.l_det,
                l_global: b.l_global,
                l_instance: b.l_instance,
                l_total: b.l_total,
                skipped_instances: b.skipped_instances,
                lr: sgd.lr,
            });
        }
        if let Some(last) = log.last() {
            log::info!(
                "distill epoch {}: l_det {:.4} l_global {:.4} l_instance {:.4}",
                epoch + 1,
                last.l_det,
                last.l_global,
                last.l_instance
            );
        }
    }
    let report = evaluate_benchmark(&student, bench)?;
    Ok(DistillRun { student, log, report })
}

/// Distills from a teacher checkpoint and writes the student checkpoint,
/// per-step CSV, evaluation report and resolved config under `out_dir`.
pub fn run_distillation(cfg: &RunConfig, teacher_checkpoint: &Path) -> Result<DistillRun> {
    let bench = Benchmark::load(&cfg.data_dir)?;
    let teacher = DetectorModel::load(teacher_checkpoint, Role::Teacher)?;
    if teacher.classes() != bench.class_names().len() {
        return Err(Error::ManifestMismatch(format!(
            "teacher has {} classes, dataset {}",
            teacher.classes(),
            bench.class_names().len()
        )));
    }
    prepare_out_dir(cfg)?;
    let cache = teacher_feature_cache(&teacher, &bench.train.scenes)?;
    let run = run_distillation_on(cfg, &teacher, &bench, &cache)?;
    run.student.save(&cfg.out_dir.join(STUDENT_CHECKPOINT))?;
    write_text(&cfg.out_dir.join("distill_log.csv"), &distill_log_csv(&run.log))?;
    write_eval_report(&cfg.out_dir, &run.report)?;
    Ok(run)
}

/// Component rows of the ablation grid: name and config.
pub fn component_configs(base: &RunConfig) -> Vec<(&'static str, RunConfig)> {
    let with = |cd, g, i| RunConfig {
        corrupt_down: cd,
        l_global: g,
        l_instance: i,
        ..base.clone()
    };
    vec![
        ("baseline", with(false, false, false)),
        ("+Corrupt&Down", with(true, false, false)),
        ("+L_glo", with(true, true, false)),
        ("+L_ins", with(true, false, true)),
        ("+both", with(true, true, true)),
    ]
}

/// Loss-balance rows `(alpha, beta)` with every component enabled.
pub const BALANCE_GRID: [(f32, f32); 3] = [(0.5, 1.5), (1.0, 1.0), (1.5, 0.5)];

pub fn balance_configs(base: &RunConfig) -> Vec<RunConfig> {
    BALANCE_GRID
        .iter()
        .map(|&(alpha, beta)| RunConfig {
            alpha,
            beta,
            corrupt_down: true,
            l_global: true,
            l_instance: true,
            ..base.clone()
        })
        .collect()
}

/// Full objective with corruption only (no downscaling).
pub fn corrupt_only_config(base: &RunConfig) -> RunConfig {
    RunConfig {
        corrupt_down: true,
        l_global: true,
        l_instance: true,
        scale_min: 1.0,
        ..base.clone()
    }
}

fn row(name: &str, cfg: &RunConfig, report: EvalReport) -> AblationRow {
    AblationRow {
        name: name.to_string(),
        alpha: cfg.alpha,
        beta: cfg.beta,
        corrupt_down: cfg.corrupt_down,
        l_global: cfg.l_global,
        l_instance: cfg.l_instance,
        scale_min: cfg.scale_min,
        report,
    }
}

/// Runs every ablation row against one teacher and benchmark. Rows with a
/// config identical to an earlier row reuse its result.
pub fn run_ablation_on(cfg: &RunConfig, teacher: &DetectorModel, bench: &Benchmark) -> Result<AblationReport> {
    let cache = teacher_feature_cache(teacher, &bench.train.scenes)?;
    let mut done: Vec<(RunConfig, EvalReport)> = Vec::new();
    let mut run = |c: &RunConfig| -> Result<EvalReport> {
        if let Some((_, r)) = done.iter().find(|(d, _)| d == c) {
            return Ok(r.clone());
        }
        let r = run_distillation_on(c, teacher, bench, &cache)?.report;
        done.push((c.clone(), r.clone()));
        Ok(r)
    };
    let mut components = Vec::new();
    for (name, c) in component_configs(cfg) {
        log::info!("ablation row {name}");
        components.push(row(name, &c, run(&c)?));
    }
    let mut balance = Vec::new();
    for c in balance_configs(cfg) {
        let name = format!("alpha={} beta={}", c.alpha, c.beta);
        log::info!("ablation row {name}");
        balance.push(row(&name, &c, run(&c)?));
    }
    let full = RunConfig {
        corrupt_down: true,
        l_global: true,
        l_instance: true,
        ..cfg.clone()
    };
    let corrupt_only = corrupt_only_config(cfg);
    log::info!("ablation row Corrupt-only");
    let scale = vec![
        row("Corrupt-only", &corrupt_only, run(&corrupt_only)?),
        row("Corrupt&Down", &full, run(&full)?),
    ];
    Ok(AblationReport {
        seed: cfg.seed,
        teacher: evaluate_benchmark(teacher, bench)?,
        components,
        balance,
        scale,
    })
}

/// Loads the benchmark and teacher, runs the grid, and writes
/// `ablation.md` and `ablation.json` under `out_dir`.
pub fn run_ablation(cfg: &RunConfig, teacher_checkpoint: &Path) -> Result<AblationReport> {
    let bench = Benchmark::load(&cfg.data_dir)?;
    let teacher = DetectorModel::load(teacher_checkpoint, Role::Teacher)?;
    prepare_out_dir(cfg)?;
    let report = run_ablation_on(cfg, &teacher, &bench)?;
    emit_report(&report, &cfg.out_dir)?;
    Ok(report)
}
