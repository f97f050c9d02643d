//! Re-derive printed verdicts from printed effect sizes and thresholds.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{
    cohens_d_from_stats, decide_from_es, fmt_sig, summarize_by, GroupSummary, SampleStats, Verdict,
};

/// One row of an effect-size table: `dataset,variant,es,printed_verdict`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EsRow {
    pub dataset: String,
    pub variant: String,
    pub es: f64,
    pub printed_verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
struct RawEsRow {
    dataset: String,
    variant: String,
    es: f64,
    printed_verdict: String,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
struct DeltaRow {
    dataset: String,
    variant: String,
    delta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReproStatus {
    Match,
    Mismatch,
    /// No threshold for this row; nothing was decided.
    Unverifiable,
}

impl ReproStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ReproStatus::Match => "match",
            ReproStatus::Mismatch => "mismatch",
            ReproStatus::Unverifiable => "unverifiable",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproRow {
    pub dataset: String,
    pub variant: String,
    pub es: f64,
    pub delta: Option<f64>,
    pub verdict: Option<Verdict>,
    pub printed_verdict: Verdict,
    pub status: ReproStatus,
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input)
}

pub fn read_es_table<R: Read>(input: R) -> Result<Vec<EsRow>> {
    let mut out = Vec::new();
    for rec in reader(input).deserialize::<RawEsRow>() {
        let r = rec?;
        out.push(EsRow {
            printed_verdict: r.printed_verdict.parse()?,
            dataset: r.dataset,
            variant: r.variant,
            es: r.es,
        });
    }
    Ok(out)
}

/// Thresholds keyed by `(dataset, variant)`; a repeated key is an error.
pub fn read_delta_table<R: Read>(input: R) -> Result<BTreeMap<(String, String), f64>> {
    let mut out = BTreeMap::new();
    for rec in reader(input).deserialize::<DeltaRow>() {
        let r = rec?;
        let key = (r.dataset, r.variant);
        if out.insert(key.clone(), r.delta).is_some() {
            return Err(Error::Table(format!(
                "duplicate threshold for {}/{}",
                key.0, key.1
            )));
        }
    }
    Ok(out)
}

/// Apply the effect-size rule row by row.
pub fn reproduce_decisions(
    es: &[EsRow],
    deltas: &BTreeMap<(String, String), f64>,
) -> Result<Vec<ReproRow>> {
    es.iter()
        .map(|row| {
            let delta = deltas
                .get(&(row.dataset.clone(), row.variant.clone()))
                .copied();
            let verdict = delta.map(|d| decide_from_es(row.es, d)).transpose()?;
            let status = match verdict {
                None => ReproStatus::Unverifiable,
                Some(v) if v == row.printed_verdict => ReproStatus::Match,
                Some(_) => ReproStatus::Mismatch,
            };
            Ok(ReproRow {
                dataset: row.dataset.clone(),
                variant: row.variant.clone(),
                es: row.es,
                delta,
                verdict,
                printed_verdict: row.printed_verdict,
                status,
            })
        })
        .collect()
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

/// File front end of [`reproduce_decisions`].
pub fn reproduce_table_decisions(es_table: &Path, delta_table: &Path) -> Result<Vec<ReproRow>> {
    let es = read_es_table(open(es_table)?)?;
    let deltas = read_delta_table(open(delta_table)?)?;
    reproduce_decisions(&es, &deltas)
}

pub fn write_repro_table<W: Write>(out: W, rows: &[ReproRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "dataset",
        "variant",
        "es",
        "delta",
        "verdict",
        "printed_verdict",
        "status",
    ])?;
    for r in rows {
        w.write_record([
            r.dataset.as_str(),
            r.variant.as_str(),
            &fmt_sig(r.es, 6),
            &r.delta.map_or_else(String::new, |d| fmt_sig(d, 6)),
            r.verdict.map_or("", Verdict::as_str),
            r.printed_verdict.as_str(),
            r.status.as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::Table(e.to_string()))?;
    Ok(())
}

/// Accuracy table row: mean and CI halfwidth of PT, MAML5 and MAML10.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub dataset: String,
    pub pt_mean: f64,
    pub pt_halfwidth: f64,
    pub maml5_mean: f64,
    pub maml5_halfwidth: f64,
    pub maml10_mean: f64,
    pub maml10_halfwidth: f64,
}

pub fn read_accuracy_table<R: Read>(input: R) -> Result<Vec<AccuracyRow>> {
    Ok(reader(input)
        .deserialize()
        .collect::<std::result::Result<_, _>>()?)
}

/// Verdict counts and bucket means of labelled effect-size rows, using
/// the verdicts printed alongside them. Rows sharing a label are pooled.
pub fn summarize_settings<'a, I>(rows: I) -> Vec<GroupSummary<String>>
where
    I: IntoIterator<Item = (&'a str, &'a EsRow)>,
{
    summarize_by(
        rows.into_iter()
            .map(|(label, r)| (label.to_string(), r.printed_verdict, r.es)),
    )
}

pub fn write_summary_table<W: Write>(out: W, groups: &[GroupSummary<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "setting",
        "h0_count",
        "h1_pt_count",
        "h1_maml_count",
        "h0_mean",
        "h1_pt_mean",
        "h1_maml_mean",
        "h1_mean",
    ])?;
    let opt = |x: Option<f64>| x.map_or_else(String::new, |v| fmt_sig(v, 6));
    for g in groups {
        let s = &g.summary;
        let mut rec = vec![g.key.clone()];
        rec.extend(Verdict::ALL.iter().map(|&v| s.count(v).to_string()));
        rec.extend(Verdict::ALL.iter().map(|&v| opt(s.mean(v))));
        rec.push(opt(s.h1_mean_effect));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Table(e.to_string()))?;
    Ok(())
}

/// Effect sizes rebuilt from means and 95% CI halfwidths over `n` tasks,
/// one `(dataset, variant, es)` per MAML variant.
pub fn reconstruct_effect_sizes(
    rows: &[AccuracyRow],
    n: usize,
) -> Result<Vec<(String, String, f64)>> {
    let mut out = Vec::with_capacity(2 * rows.len());
    for r in rows {
        let pt = SampleStats::from_ci(r.pt_mean, r.pt_halfwidth, n);
        for (variant, mean, hw) in [
            ("maml5", r.maml5_mean, r.maml5_halfwidth),
            ("maml10", r.maml10_mean, r.maml10_halfwidth),
        ] {
            let es = cohens_d_from_stats(&pt, &SampleStats::from_ci(mean, hw, n))?;
            out.push((r.dataset.clone(), variant.to_string(), es));
        }
    }
    Ok(out)
}
