use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::{RunRecord, RunStatus};
use crate::error::{ensure, Error, Result};
use crate::stats::{fmt_sig, summarize_by, write_decision_table, GroupSummary, Verdict, Z_95};

/// Mean H1 effect size of one regime with a normal-approximation interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeTrend {
    pub regime: String,
    pub h1_count: usize,
    pub mean: Option<f64>,
    pub ci95: Option<(f64, f64)>,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportBundle {
    pub files: Vec<PathBuf>,
    pub summary: Vec<GroupSummary<(String, String)>>,
    pub trends: Vec<RegimeTrend>,
    pub digest: String,
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| fmt_sig(v, 6))
}

/// Effect-size decisions of every completed record, keyed by
/// `(regime, maml order)`.
pub fn grouped_summary(records: &[RunRecord]) -> Vec<GroupSummary<(String, String)>> {
    summarize_by(records.iter().filter(|r| r.is_completed()).flat_map(|r| {
        let regime = r.regime();
        r.decisions.iter().map(move |d| {
            (
                (regime.clone(), d.order.as_str().to_string()),
                d.effect_size.verdict,
                d.effect_size.effect_size,
            )
        })
    }))
}

/// Mean H1 effect size per regime over every completed record.
pub fn regime_trends(records: &[RunRecord]) -> Vec<RegimeTrend> {
    let mut regimes: Vec<String> = records
        .iter()
        .filter(|r| r.is_completed())
        .map(|r| r.regime())
        .collect();
    regimes.sort();
    regimes.dedup();
    regimes
        .into_iter()
        .map(|regime| {
            let runs: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.is_completed() && r.regime() == regime)
                .collect();
            let es: Vec<f64> = runs
                .iter()
                .flat_map(|r| &r.decisions)
                .filter(|d| d.effect_size.verdict != Verdict::H0NoDiff)
                .map(|d| d.effect_size.effect_size)
                .collect();
            let n = es.len();
            let mean = (n > 0).then(|| es.iter().sum::<f64>() / n as f64);
            let ci95 = mean.filter(|_| n >= 2).map(|m| {
                let sd = (es.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
                let hw = Z_95 * sd / (n as f64).sqrt();
                (m - hw, m + hw)
            });
            let mut seeds: Vec<u64> = runs.iter().map(|r| r.config.seeds.init).collect();
            seeds.sort_unstable();
            seeds.dedup();
            RegimeTrend {
                regime,
                h1_count: n,
                mean,
                ci95,
                seeds,
            }
        })
        .collect()
}

fn summary_csv(summary: &[GroupSummary<(String, String)>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "regime",
        "order",
        "n_h0",
        "n_h1_pt",
        "n_h1_maml",
        "mean_es_h0",
        "mean_es_h1_pt",
        "mean_es_h1_maml",
        "mean_es_h1",
    ])?;
    for g in summary {
        let s = &g.summary;
        w.write_record([
            g.key.0.clone(),
            g.key.1.clone(),
            s.count(Verdict::H0NoDiff).to_string(),
            s.count(Verdict::H1Pt).to_string(),
            s.count(Verdict::H1Maml).to_string(),
            opt(s.mean(Verdict::H0NoDiff)),
            opt(s.mean(Verdict::H1Pt)),
            opt(s.mean(Verdict::H1Maml)),
            opt(s.h1_mean_effect),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Table(e.to_string()))
}

fn digest(
    records: &[RunRecord],
    summary: &[GroupSummary<(String, String)>],
    trends: &[RegimeTrend],
) -> String {
    let mut d = String::new();
    let completed = records.iter().filter(|r| r.is_completed()).count();
    let _ = writeln!(d, "PT vs MAML digest");
    let _ = writeln!(d, "runs: {} ({completed} completed)", records.len());
    for r in records {
        let _ = writeln!(d);
        match &r.status {
            RunStatus::Completed => {
                let _ = writeln!(
                    d,
                    "run {} [{}] seed {}",
                    r.name,
                    r.regime(),
                    r.config.seeds.init
                );
            }
            RunStatus::Failed { stage, message } => {
                let _ = writeln!(d, "run {} FAILED at {stage}: {message}", r.name);
                continue;
            }
        }
        if let Some(div) = &r.diversity {
            let _ = writeln!(
                d,
                "  diversity {} ± {} ({} tasks, {} pairs)",
                fmt_sig(div.coefficient, 6),
                fmt_sig(div.ci95_halfwidth, 6),
                div.num_tasks,
                div.num_pairs
            );
        }
        for m in r.pt.iter().chain(&r.maml) {
            let _ = write!(
                d,
                "  {} l2 norm {}, {} epochs;",
                m.method.as_str(),
                fmt_sig(m.l2_norm, 6),
                m.epochs
            );
            for e in &m.evals {
                let label = e
                    .steps
                    .map_or_else(|| "head refit".to_string(), |s| format!("{s} steps"));
                let _ = write!(
                    d,
                    " {label} acc {} ± {}",
                    fmt_sig(e.result.mean, 6),
                    fmt_sig(e.result.ci95_halfwidth, 6)
                );
            }
            let _ = writeln!(d);
        }
        for dec in &r.decisions {
            let _ = writeln!(
                d,
                "  {}: ES {} (delta {}) -> {}; CI -> {}; CI 1% -> {}",
                dec.label(),
                fmt_sig(dec.effect_size.effect_size, 6),
                fmt_sig(dec.effect_size.delta, 6),
                dec.effect_size.verdict,
                dec.ci.verdict,
                dec.ci_1pct.verdict
            );
        }
    }
    let _ = writeln!(d);
    let _ = writeln!(
        d,
        "decision counts and mean effect size by regime and order"
    );
    for g in summary {
        let s = &g.summary;
        let _ = writeln!(
            d,
            "  {} / {}: H0 {} ({}), H1_pt {} ({}), H1_maml {} ({})",
            g.key.0,
            g.key.1,
            s.count(Verdict::H0NoDiff),
            opt(s.mean(Verdict::H0NoDiff)),
            s.count(Verdict::H1Pt),
            opt(s.mean(Verdict::H1Pt)),
            s.count(Verdict::H1Maml),
            opt(s.mean(Verdict::H1Maml)),
        );
    }
    let _ = writeln!(d);
    let _ = writeln!(d, "mean H1 effect size by regime (positive favours PT)");
    for t in trends {
        let seeds: Vec<String> = t.seeds.iter().map(u64::to_string).collect();
        match (t.mean, t.ci95) {
            (Some(m), Some((lo, hi))) => {
                let _ = writeln!(
                    d,
                    "  {}: {} [{}, {}] over {} H1 decisions, seeds {}",
                    t.regime,
                    fmt_sig(m, 6),
                    fmt_sig(lo, 6),
                    fmt_sig(hi, 6),
                    t.h1_count,
                    seeds.join(",")
                );
            }
            (Some(m), None) => {
                let _ = writeln!(
                    d,
                    "  {}: {} over 1 H1 decision, seeds {}",
                    t.regime,
                    fmt_sig(m, 6),
                    seeds.join(",")
                );
            }
            _ => {
                let _ = writeln!(
                    d,
                    "  {}: no H1 decisions, seeds {}",
                    t.regime,
                    seeds.join(",")
                );
            }
        }
    }
    d
}

/// Write decision tables, the grouped summary, histogram tables and a
/// digest into `out`. Output depends only on the records. The digest is
/// written last, in one step, after every other file succeeded.
pub fn emit_report(records: &[RunRecord], out: &Path) -> Result<ReportBundle> {
    ensure(!records.is_empty(), || "nothing to report".into())?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut files = Vec::new();
    let mut write = |rel: PathBuf, bytes: &[u8]| -> Result<()> {
        let path = out.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        files.push(path);
        Ok(())
    };

    for r in records.iter().filter(|r| r.is_completed()) {
        let mut buf = Vec::new();
        write_decision_table(&mut buf, &r.decision_rows())?;
        write(
            PathBuf::from("decisions").join(format!("{}.csv", sanitize(&r.name))),
            &buf,
        )?;
        if let Some(h) = &r.histogram {
            for p in &h.partitions {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(["bin_center", "count"])?;
                for (c, n) in h.rows(p) {
                    w.write_record([fmt_sig(c, 6), n.to_string()])?;
                }
                let bytes = w.into_inner().map_err(|e| Error::Table(e.to_string()))?;
                let name = format!("{}__{}.csv", sanitize(&r.name), sanitize(&p.name));
                write(PathBuf::from("histograms").join(name), &bytes)?;
            }
        }
    }
    let summary = grouped_summary(records);
    write(PathBuf::from("summary.csv"), &summary_csv(&summary)?)?;
    let trends = regime_trends(records);
    write(
        PathBuf::from("trends.json"),
        serde_json::to_string_pretty(&trends)?.as_bytes(),
    )?;

    let text = digest(records, &summary, &trends);
    let tmp = out.join(".digest.txt.tmp");
    let final_path = out.join("digest.txt");
    fs::write(&tmp, &text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &final_path).map_err(|e| Error::io(&final_path, e))?;
    files.push(final_path);

    Ok(ReportBundle {
        files,
        summary,
        trends,
        digest: text,
    })
}
