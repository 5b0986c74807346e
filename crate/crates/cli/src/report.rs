//! Baseline against debiased runs: TAR per subgroup and method at each FAR
//! target, and probe precision/recall/F1 per subgroup.

use std::fmt::Write;
use std::path::PathBuf;

use clap::Args;
use fairvec::embedding::SubgroupLabel;
use fairvec::metrics::report::{AuditReport, FarTargetReport, SubgroupSpread};
use fairvec::probe::{privacy_gap, PrivacyGap, ProbeReport};
use serde::{Deserialize, Serialize};

use crate::audit::det_svg;
use crate::files::{cell, create_dir, write};
use crate::manifest::ManifestBuilder;
use crate::svg::bar_chart;
use crate::{GlobalArgs, InputError};

pub const AVERAGE_ROW: &str = "Avg.";

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Baseline `audit.json` or the directory holding it.
    #[arg(long)]
    pub audit_baseline: PathBuf,
    /// Audit of the debiased features.
    #[arg(long)]
    pub audit_debiased: PathBuf,
    /// Baseline `probe.json` or the directory holding it.
    #[arg(long)]
    pub probe_baseline: PathBuf,
    /// Probe of the debiased features.
    #[arg(long)]
    pub probe_debiased: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Baseline features, one pooled threshold.
    Baseline,
    /// Debiased features, one pooled threshold.
    Debiased,
    /// Baseline features, each subgroup calibrated on its own pairs.
    SubgroupThreshold,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Baseline, Method::Debiased, Method::SubgroupThreshold];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Debiased => "debiased",
            Method::SubgroupThreshold => "subgroup_threshold",
        }
    }
}

/// TAR of one subgroup (or the average) under one method, one entry per FAR target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TarRow {
    pub subgroup: String,
    pub method: Method,
    pub tar: Vec<Option<f64>>,
}

/// A per-method statistic, one entry per FAR target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSeries {
    pub method: Method,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrfRow {
    pub subgroup: String,
    pub baseline: Prf,
    pub debiased: Prf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeAccuracy {
    pub baseline: f64,
    pub debiased: f64,
}

/// Contents of `report.json`. Holds no paths or timings, so reruns on the
/// same inputs produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparativeReport {
    pub far_targets: Vec<f64>,
    /// Subgroups in order, then the average, three methods each.
    pub table3: Vec<TarRow>,
    /// Population standard deviation of subgroup TARs.
    pub tar_std: Vec<MethodSeries>,
    /// Max minus min subgroup percent difference from the target FAR.
    pub percent_difference_range: Vec<MethodSeries>,
    pub probe_accuracy: ProbeAccuracy,
    /// Subgroups in order, then the macro average.
    pub table4: Vec<PrfRow>,
    pub privacy_gap: PrivacyGap,
}

struct Target<'a> {
    baseline: &'a FarTargetReport,
    debiased: &'a FarTargetReport,
}

impl Target<'_> {
    fn tar(&self, method: Method, label: &SubgroupLabel) -> Option<f64> {
        let global = |t: &FarTargetReport| {
            t.global_threshold
                .as_ref()
                .and_then(|g| g.per_subgroup.get(label))
                .and_then(|s| s.tar)
        };
        match method {
            Method::Baseline => global(self.baseline),
            Method::Debiased => global(self.debiased),
            Method::SubgroupThreshold => self
                .baseline
                .subgroup_thresholds
                .as_ref()
                .and_then(|m| m.get(label))
                .map(|s| s.tar),
        }
    }

    fn own_spread<F: Fn(&fairvec::metrics::SubgroupThresholdFar) -> f64>(&self, f: F) -> Option<SubgroupSpread> {
        let own = self.baseline.subgroup_thresholds.as_ref()?;
        SubgroupSpread::of(&own.values().map(f).collect::<Vec<_>>())
    }

    fn tar_spread(&self, method: Method) -> Option<SubgroupSpread> {
        match method {
            Method::Baseline => self.baseline.tar_spread,
            Method::Debiased => self.debiased.tar_spread,
            Method::SubgroupThreshold => self.own_spread(|s| s.tar),
        }
    }

    fn percent_difference_range(&self, method: Method) -> Option<f64> {
        match method {
            Method::Baseline => self.baseline.percent_difference_spread.map(|s| s.range()),
            Method::Debiased => self.debiased.percent_difference_spread.map(|s| s.range()),
            Method::SubgroupThreshold => self.own_spread(|s| s.percent_difference).map(|s| s.range()),
        }
    }
}

fn prf(p: f64, r: f64, f1: f64) -> Prf {
    Prf {
        precision: p,
        recall: r,
        f1,
    }
}

pub fn build_report(
    audit_baseline: &AuditReport,
    audit_debiased: &AuditReport,
    probe_baseline: &ProbeReport,
    probe_debiased: &ProbeReport,
) -> anyhow::Result<ComparativeReport> {
    let far_targets: Vec<f64> = audit_baseline.far_targets.iter().map(|t| t.target_far).collect();
    let mut targets = Vec::new();
    for t in &audit_baseline.far_targets {
        let debiased = audit_debiased.target(t.target_far).ok_or_else(|| {
            InputError::Usage(format!("debiased audit lacks FAR target {}", t.target_far))
        })?;
        targets.push(Target {
            baseline: t,
            debiased,
        });
    }
    let subgroups: Vec<SubgroupLabel> = audit_baseline.pair_counts.keys().copied().collect();
    if audit_debiased.pair_counts.keys().ne(subgroups.iter()) {
        return Err(InputError::Usage("the two audits cover different subgroups".into()).into());
    }

    let mut table3 = Vec::new();
    for label in &subgroups {
        for method in Method::ALL {
            table3.push(TarRow {
                subgroup: label.to_string(),
                method,
                tar: targets.iter().map(|t| t.tar(method, label)).collect(),
            });
        }
    }
    for method in Method::ALL {
        table3.push(TarRow {
            subgroup: AVERAGE_ROW.into(),
            method,
            tar: targets.iter().map(|t| t.tar_spread(method).map(|s| s.mean)).collect(),
        });
    }
    let series = |f: &dyn Fn(&Target, Method) -> Option<f64>| -> Vec<MethodSeries> {
        Method::ALL
            .iter()
            .map(|&method| MethodSeries {
                method,
                values: targets.iter().map(|t| f(t, method)).collect(),
            })
            .collect()
    };
    let tar_std = series(&|t, m| t.tar_spread(m).map(|s| s.std));
    let percent_difference_range = series(&|t, m| t.percent_difference_range(m));

    let gap = privacy_gap(probe_baseline, probe_debiased)?;
    let mut table4: Vec<PrfRow> = probe_baseline
        .per_subgroup
        .iter()
        .zip(&probe_debiased.per_subgroup)
        .map(|(b, d)| PrfRow {
            subgroup: b.subgroup.to_string(),
            baseline: prf(b.precision, b.recall, b.f1),
            debiased: prf(d.precision, d.recall, d.f1),
        })
        .collect();
    let (b, d) = (probe_baseline.average, probe_debiased.average);
    table4.push(PrfRow {
        subgroup: AVERAGE_ROW.into(),
        baseline: prf(b.precision, b.recall, b.f1),
        debiased: prf(d.precision, d.recall, d.f1),
    });

    Ok(ComparativeReport {
        far_targets,
        table3,
        tar_std,
        percent_difference_range,
        probe_accuracy: ProbeAccuracy {
            baseline: probe_baseline.accuracy,
            debiased: probe_debiased.accuracy,
        },
        table4,
        privacy_gap: gap,
    })
}

pub fn table3_csv(report: &ComparativeReport) -> String {
    let mut out = String::from("subgroup,method");
    for far in &report.far_targets {
        let _ = write!(out, ",tar@{far}");
    }
    out.push('\n');
    for row in &report.table3 {
        let _ = write!(out, "{},{}", row.subgroup, row.method.name());
        for v in &row.tar {
            let _ = write!(out, ",{}", cell(*v));
        }
        out.push('\n');
    }
    out
}

pub const TABLE4_HEADER: &str =
    "subgroup,baseline_precision,baseline_recall,baseline_f1,debiased_precision,debiased_recall,debiased_f1";

pub fn table4_csv(report: &ComparativeReport) -> String {
    let mut out = format!("{TABLE4_HEADER}\n");
    for r in &report.table4 {
        let (b, d) = (r.baseline, r.debiased);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.subgroup, b.precision, b.recall, b.f1, d.precision, d.recall, d.f1
        );
    }
    out
}

/// TAR bars at the FAR target closest to 0.1.
fn tar_bars(report: &ComparativeReport) -> String {
    let Some(col) = (0..report.far_targets.len()).min_by(|&a, &b| {
        let d = |i: usize| (report.far_targets[i].log10() + 1.0).abs();
        d(a).total_cmp(&d(b))
    }) else {
        return bar_chart("TAR", "TAR", &[], &[]);
    };
    let categories: Vec<String> = report
        .table3
        .iter()
        .filter(|r| r.method == Method::Baseline)
        .map(|r| r.subgroup.clone())
        .collect();
    let series: Vec<(String, Vec<Option<f64>>)> = Method::ALL
        .iter()
        .map(|&m| {
            let vals = report
                .table3
                .iter()
                .filter(|r| r.method == m)
                .map(|r| r.tar[col])
                .collect();
            (m.name().to_string(), vals)
        })
        .collect();
    bar_chart(&format!("TAR at FAR {}", report.far_targets[col]), "TAR", &categories, &series)
}

/// Baseline percent difference from each FAR target per subgroup.
fn percent_difference_bars(audit: &AuditReport) -> String {
    let categories: Vec<String> = audit.pair_counts.keys().map(|l| l.to_string()).collect();
    let series: Vec<(String, Vec<Option<f64>>)> = audit
        .far_targets
        .iter()
        .map(|t| {
            let vals = audit
                .pair_counts
                .keys()
                .map(|l| {
                    t.global_threshold
                        .as_ref()
                        .and_then(|g| g.per_subgroup.get(l))
                        .map(|s| s.percent_difference)
                })
                .collect();
            (format!("FAR {}", t.target_far), vals)
        })
        .collect();
    bar_chart("Percent difference from the pooled FAR", "percent", &categories, &series)
}

pub fn run(args: &ReportArgs, global: &GlobalArgs) -> anyhow::Result<()> {
    let mut manifest = ManifestBuilder::start("report", &serde_json::json!({}), global.seed_or(0), global.threads)?;
    let ab = crate::audit::load_report(&args.audit_baseline, "baseline audit")?;
    let ad = crate::audit::load_report(&args.audit_debiased, "debiased audit")?;
    let pb = crate::probe::load_report(&args.probe_baseline, "baseline probe")?;
    let pd = crate::probe::load_report(&args.probe_debiased, "debiased probe")?;
    for (role, p, file) in [
        ("audit_baseline", &args.audit_baseline, "audit.json"),
        ("audit_debiased", &args.audit_debiased, "audit.json"),
        ("probe_baseline", &args.probe_baseline, "probe.json"),
        ("probe_debiased", &args.probe_debiased, "probe.json"),
    ] {
        manifest.input(role, &if p.is_dir() { p.join(file) } else { p.clone() });
    }
    let report = build_report(&ab, &ad, &pb, &pd)?;

    let dir = &args.out_dir;
    create_dir(dir)?;
    let mut out = |role: &str, name: &str, contents: String| -> anyhow::Result<()> {
        let path = dir.join(name);
        write(&path, contents)?;
        manifest.output(role, &path);
        Ok(())
    };
    out("report", "report.json", serde_json::to_string_pretty(&report)? + "\n")?;
    out("table3", "table3.csv", table3_csv(&report))?;
    out("table4", "table4.csv", table4_csv(&report))?;
    out("tar_bars", "tar_bars.svg", tar_bars(&report))?;
    out("percent_difference", "percent_difference.svg", percent_difference_bars(&ab))?;
    fn pooled(a: &AuditReport) -> &[fairvec::metrics::DetPoint] {
        a.det.get("pooled").map(Vec::as_slice).unwrap_or_default()
    }
    let curves = [("baseline".to_string(), pooled(&ab)), ("debiased".to_string(), pooled(&ad))];
    out("det_svg", "det.svg", det_svg("Pooled DET", &curves))?;
    manifest.finish(dir)?;
    Ok(())
}
