use std::fmt::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use fairvec::metrics::report::{build_audit_report, AuditReport};
use fairvec::metrics::{confusion, score_pairs, DetPoint, DEFAULT_FAR_TARGETS};
use fairvec::pairing::PairList;
use fairvec::ScoredPairs;
use serde::Serialize;

use crate::files::{cell, create_dir, load_set, read_json, require, write};
use crate::manifest::ManifestBuilder;
use crate::svg::{line_chart, Series};
use crate::GlobalArgs;

#[derive(Debug, Clone, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Pair file written by `pairs`.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Comma-separated FAR targets.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_FAR_TARGETS)]
    pub far_targets: Vec<f64>,
    /// Points kept per DET curve; 0 keeps the full staircase.
    #[arg(long, default_value_t = 500)]
    pub det_points: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct AuditConfig<'a> {
    far_targets: &'a [f64],
    det_points: usize,
}

pub const FAR_AUDIT_HEADER: &str = "far_target,subgroup,global_threshold,imposters,false_accepts,actual_far,\
percent_difference,tar,subgroup_threshold,subgroup_far,subgroup_percent_difference,subgroup_tar";

/// One row per FAR target and subgroup: the shared threshold, then the
/// subgroup's own threshold. Cells are empty where a target is unreachable.
pub fn far_audit_csv(report: &AuditReport) -> String {
    let mut out = format!("{FAR_AUDIT_HEADER}\n");
    for t in &report.far_targets {
        for label in report.pair_counts.keys() {
            let global = t.global_threshold.as_ref();
            let row = global.and_then(|g| g.per_subgroup.get(label));
            let own = t.subgroup_thresholds.as_ref().and_then(|m| m.get(label));
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                t.target_far,
                label,
                cell(global.map(|g| g.threshold)),
                row.map_or_else(String::new, |r| r.imposters.to_string()),
                row.map_or_else(String::new, |r| r.false_accepts.to_string()),
                cell(row.map(|r| r.actual_far)),
                cell(row.map(|r| r.percent_difference)),
                cell(row.and_then(|r| r.tar)),
                cell(own.map(|o| o.threshold)),
                cell(own.map(|o| o.achieved_far)),
                cell(own.map(|o| o.percent_difference)),
                cell(own.map(|o| o.tar)),
            );
        }
    }
    out
}

pub fn thresholds_csv(report: &AuditReport) -> String {
    let table = &report.thresholds;
    let mut out = String::from("subgroup,global_threshold,accuracy_global,optimal_threshold,accuracy_optimal\n");
    for (label, a) in &table.per_subgroup {
        let _ = writeln!(
            out,
            "{label},{},{},{},{}",
            table.global_threshold, a.accuracy_global, a.optimal_threshold, a.accuracy_optimal
        );
    }
    let _ = writeln!(
        out,
        "all,{},{},,{}",
        table.global_threshold, table.accuracy_global, table.accuracy_optimal
    );
    out
}

pub fn det_csv(points: &[DetPoint]) -> String {
    let mut out = String::from("threshold,far,fnr\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.threshold, p.far, p.fnr);
    }
    out
}

/// Recounts false accepts at every per-subgroup threshold on that
/// subgroup's pairs and rejects any that exceed the target.
fn verify_subgroup_thresholds(report: &AuditReport, scored: &ScoredPairs, pairs: &PairList) -> anyhow::Result<()> {
    let by_subgroup = pairs.indices_by_subgroup();
    for t in &report.far_targets {
        let Some(own) = &t.subgroup_thresholds else { continue };
        for (label, op) in own {
            let sub = scored.select(&by_subgroup[label]);
            let c = confusion(&sub, op.threshold);
            let far = c.fp as f64 / c.negatives() as f64;
            if far > t.target_far {
                bail!(
                    "subgroup {label} threshold {} gives FAR {far} above target {}",
                    op.threshold,
                    t.target_far
                );
            }
        }
    }
    Ok(())
}

pub fn det_svg(title: &str, curves: &[(String, &[DetPoint])]) -> String {
    let series: Vec<Series> = curves
        .iter()
        .map(|(name, pts)| Series {
            name: name.clone(),
            points: pts.iter().map(|p| (p.far, p.fnr)).collect(),
        })
        .collect();
    line_chart(title, "false accept rate", "false reject rate", true, &series)
}

pub fn run(args: &AuditArgs, global: &GlobalArgs) -> anyhow::Result<()> {
    let config = AuditConfig {
        far_targets: &args.far_targets,
        det_points: args.det_points,
    };
    let mut manifest = ManifestBuilder::start("audit", &config, global.seed_or(0), global.threads)?;
    manifest.input("embeddings", &args.embeddings);
    manifest.input("pairs", &args.pairs);

    let set = load_set(&args.embeddings, "embedding file")?;
    let pairs = PairList::load(&set, require(&args.pairs, "pair file")?).context("loading pair file")?;
    let scored = score_pairs(&set, &pairs)?;
    let report = build_audit_report(&scored, &pairs, &args.far_targets, args.det_points)?;
    verify_subgroup_thresholds(&report, &scored, &pairs)?;
    for t in &report.far_targets {
        for note in &t.notes {
            log::warn!("FAR {}: {note}", t.target_far);
        }
    }

    let dir = &args.out_dir;
    create_dir(&dir.join("det"))?;
    let mut out = |role: &str, name: &str, contents: String| -> anyhow::Result<()> {
        let path = dir.join(name);
        write(&path, contents)?;
        manifest.output(role, &path);
        Ok(())
    };
    out("audit", "audit.json", {
        let mut s = serde_json::to_string_pretty(&report)?;
        s.push('\n');
        s
    })?;
    out("far_audit", "far_audit.csv", far_audit_csv(&report))?;
    out("thresholds", "thresholds.csv", thresholds_csv(&report))?;
    for (name, points) in &report.det {
        out("det", &format!("det/{name}.csv"), det_csv(points))?;
    }
    let curves: Vec<(String, &[DetPoint])> = report.det.iter().map(|(k, v)| (k.clone(), v.as_slice())).collect();
    out("det_svg", "det.svg", det_svg("DET by subgroup", &curves))?;
    manifest.finish(dir)?;
    Ok(())
}

/// Loads `audit.json`, or `dir/audit.json` when given a directory.
pub fn load_report(path: &Path, what: &'static str) -> anyhow::Result<AuditReport> {
    let file = if path.is_dir() { path.join("audit.json") } else { path.to_path_buf() };
    read_json(&file, what)
}
