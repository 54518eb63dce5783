//! Ablation report tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::scenes::DomainVariant;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub alpha: f32,
    pub beta: f32,
    pub corrupt_down: bool,
    pub l_global: bool,
    pub l_instance: bool,
    pub scale_min: f32,
    pub report: EvalReport,
}

impl AblationRow {
    pub fn target_average(&self) -> f64 {
        self.report.target_average.unwrap_or(0.0)
    }

    pub fn source_map(&self) -> f64 {
        self.report
            .domain(DomainVariant::SourceClean.name())
            .map_or(0.0, |d| d.map)
    }

    /// Source-clean AP on the smallest GT-area tercile.
    pub fn small_ap(&self) -> Option<f64> {
        self.report
            .domain(DomainVariant::SourceClean.name())
            .and_then(|d| d.size.as_ref())
            .map(|s| s.small)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub teacher: EvalReport,
    /// baseline, +Corrupt&Down, +L_glo, +L_ins, +both.
    pub components: Vec<AblationRow>,
    /// One row per `(alpha, beta)` pair of the balance grid.
    pub balance: Vec<AblationRow>,
    /// Corrupt-only and Corrupt&Down, both with the full objective.
    pub scale: Vec<AblationRow>,
}

fn pct(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

fn check(b: bool) -> &'static str {
    if b {
        "x"
    } else {
        ""
    }
}

fn domain_cells(report: &EvalReport) -> String {
    let mut s = String::new();
    for v in DomainVariant::ALL {
        let m = report.domain(v.name()).map_or("-".to_string(), |d| pct(d.map));
        let _ = write!(s, " {m} |");
    }
    let _ = write!(s, " **{}** |", report.target_average.map_or("-".to_string(), pct));
    s
}

fn domain_header() -> String {
    let mut s = String::new();
    for v in DomainVariant::ALL {
        let _ = write!(s, " {} |", v.name());
    }
    s.push_str(" target avg |");
    s
}

impl AblationReport {
    /// Markdown with the component, balance and scale tables (mAP@0.5 in %).
    pub fn to_markdown(&self) -> String {
        let cols = DomainVariant::ALL.len() + 1;
        let mut s = format!("# Ablation (seed {})\n\n", self.seed);
        let _ = writeln!(s, "Teacher:{}\n", domain_cells(&self.teacher));

        s.push_str("## Components\n\n| row | Corrupt&Down | L_glo | L_ins |");
        s.push_str(&domain_header());
        s.push_str("\n|---|:-:|:-:|:-:|");
        s.push_str(&"---:|".repeat(cols));
        s.push('\n');
        for r in &self.components {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} |{}",
                r.name,
                check(r.corrupt_down),
                check(r.l_global),
                check(r.l_instance),
                domain_cells(&r.report)
            );
        }

        s.push_str("\n## Loss balance\n\n| alpha | beta |");
        s.push_str(&domain_header());
        s.push_str("\n|---:|---:|");
        s.push_str(&"---:|".repeat(cols));
        s.push('\n');
        for r in &self.balance {
            let _ = writeln!(s, "| {} | {} |{}", r.alpha, r.beta, domain_cells(&r.report));
        }

        s.push_str("\n## Scale (source-clean AP by GT-area tercile)\n\n");
        s.push_str("| setting | small | medium | large | target avg |\n|---|---:|---:|---:|---:|\n");
        for r in &self.scale {
            let size = r
                .report
                .domain(DomainVariant::SourceClean.name())
                .and_then(|d| d.size.clone());
            let cell = |f: fn(&crate::eval::SizeReport) -> f64| size.as_ref().map_or("-".to_string(), |z| pct(f(z)));
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} |",
                r.name,
                cell(|z| z.small),
                cell(|z| z.medium),
                cell(|z| z.large),
                pct(r.target_average())
            );
        }
        s.push_str("\nClasses without ground truth in a domain are left out of that domain's mAP.\n");
        s
    }
}

/// Writes `ablation.md` and `ablation.json` under `dir`.
pub fn emit_report(report: &AblationReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let md = dir.join("ablation.md");
    fs::write(&md, report.to_markdown()).map_err(|e| Error::io(&md, e))?;
    let js = dir.join("ablation.json");
    fs::write(&js, serde_json::to_string_pretty(report)? + "\n").map_err(|e| Error::io(&js, e))
}
