//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::corrupt::DiversifyConfig;
use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::optim::SgdConfig;
use crate::scenes::SceneConfig;

pub const LR_DROP_FACTOR: f32 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub image_size: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub teacher_epochs: usize,
    pub distill_epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    /// Fraction of each phase's epochs after which the learning rate is
    /// multiplied by [`LR_DROP_FACTOR`]; `1.0` keeps it constant.
    pub lr_drop: f32,
    pub alpha: f32,
    pub beta: f32,
    pub corrupt_down: bool,
    pub l_global: bool,
    pub l_instance: bool,
    /// Lower bound of the downscale ratio; `1.0` disables downscaling.
    pub scale_min: f32,
    pub roi_out: usize,
    pub roi_samples: usize,
    pub min_feature_box: f32,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
            image_size: 96,
            train_count: 1500,
            test_count: 300,
            teacher_epochs: 20,
            distill_epochs: 30,
            batch_size: 4,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_drop: 0.75,
            alpha: 1.0,
            beta: 1.0,
            corrupt_down: true,
            l_global: true,
            l_instance: true,
            scale_min: 0.6,
            roi_out: 7,
            roi_samples: 2,
            min_feature_box: 0.25,
        }
    }
}

fn parse<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| Error::Config {
        line,
        msg: format!("{key}: cannot parse {value:?}: {e}"),
    })
}

impl RunConfig {
    /// Parses config text over the defaults. Unknown keys, duplicate keys
    /// and malformed lines are errors carrying their 1-based line number.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Config {
                    line,
                    msg: format!("expected `key = value`, got {content:?}"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config {
                    line,
                    msg: format!("duplicate key {key}"),
                });
            }
            seen.push(key.to_string());
            match key {
                "seed" => c.seed = parse(line, key, value)?,
                "data_dir" => c.data_dir = PathBuf::from(value),
                "out_dir" => c.out_dir = PathBuf::from(value),
                "image_size" => c.image_size = parse(line, key, value)?,
                "train_count" => c.train_count = parse(line, key, value)?,
                "test_count" => c.test_count = parse(line, key, value)?,
                "teacher_epochs" => c.teacher_epochs = parse(line, key, value)?,
                "distill_epochs" => c.distill_epochs = parse(line, key, value)?,
                "batch_size" => c.batch_size = parse(line, key, value)?,
                "lr" => c.lr = parse(line, key, value)?,
                "momentum" => c.momentum = parse(line, key, value)?,
                "weight_decay" => c.weight_decay = parse(line, key, value)?,
                "lr_drop" => c.lr_drop = parse(line, key, value)?,
                "alpha" => c.alpha = parse(line, key, value)?,
                "beta" => c.beta = parse(line, key, value)?,
                "corrupt_down" => c.corrupt_down = parse(line, key, value)?,
                "l_global" => c.l_global = parse(line, key, value)?,
                "l_instance" => c.l_instance = parse(line, key, value)?,
                "scale_min" => c.scale_min = parse(line, key, value)?,
                "roi_out" => c.roi_out = parse(line, key, value)?,
                "roi_samples" => c.roi_samples = parse(line, key, value)?,
                "min_feature_box" => c.min_feature_box = parse(line, key, value)?,
                _ => {
                    return Err(Error::Config {
                        line,
                        msg: format!("unknown key {key:?}"),
                    })
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("config", msg));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be non-negative, got {}", self.beta));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("momentum must be in [0, 1) and weight_decay non-negative".into());
        }
        if !(self.lr_drop > 0.0 && self.lr_drop <= 1.0) {
            return bad(format!("lr_drop must be in (0, 1], got {}", self.lr_drop));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= 1.0) {
            return bad(format!("scale_min must be in (0, 1], got {}", self.scale_min));
        }
        if self.roi_out == 0 || self.roi_samples == 0 {
            return bad("roi_out and roi_samples must be at least 1".into());
        }
        if self.train_count == 0 || self.test_count == 0 {
            return bad("train_count and test_count must be at least 1".into());
        }
        self.scene_config().validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    /// Every key with its resolved value; parses back to `self`.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("data_dir", self.data_dir.display().to_string());
        kv("out_dir", self.out_dir.display().to_string());
        kv("image_size", self.image_size.to_string());
        kv("train_count", self.train_count.to_string());
        kv("test_count", self.test_count.to_string());
        kv("teacher_epochs", self.teacher_epochs.to_string());
        kv("distill_epochs", self.distill_epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("lr", self.lr.to_string());
        kv("momentum", self.momentum.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("lr_drop", self.lr_drop.to_string());
        kv("alpha", self.alpha.to_string());
        kv("beta", self.beta.to_string());
        kv("corrupt_down", self.corrupt_down.to_string());
        kv("l_global", self.l_global.to_string());
        kv("l_instance", self.l_instance.to_string());
        kv("scale_min", self.scale_min.to_string());
        kv("roi_out", self.roi_out.to_string());
        kv("roi_samples", self.roi_samples.to_string());
        kv("min_feature_box", self.min_feature_box.to_string());
        s
    }

    pub fn write_dump(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.dump()).map_err(|e| Error::io(path, e))
    }

    pub fn scene_config(&self) -> SceneConfig {
        SceneConfig {
            width: self.image_size,
            height: self.image_size,
            ..SceneConfig::default()
        }
    }

    /// Optimizer settings for `epoch` of a phase lasting `epochs`.
    pub fn sgd(&self, epoch: usize, epochs: usize) -> SgdConfig {
        let drop_at = (self.lr_drop as f64 * epochs as f64).ceil() as usize;
        let lr = if self.lr_drop < 1.0 && epoch >= drop_at {
            self.lr * LR_DROP_FACTOR
        } else {
            self.lr
        };
        SgdConfig {
            lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn distill(&self) -> DistillConfig {
        DistillConfig {
            alpha: self.alpha,
            beta: self.beta,
            roi_out: self.roi_out,
            roi_samples: self.roi_samples,
            min_feature_box: self.min_feature_box,
            global: self.l_global,
            instance: self.l_instance,
        }
    }

    /// Diversification for the student input; `None` feeds clean images.
    pub fn diversify(&self) -> Option<DiversifyConfig> {
        self.corrupt_down.then_some(DiversifyConfig {
            corrupt: true,
            scale_min: self.scale_min,
        })
    }
}
