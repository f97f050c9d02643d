use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use metadiv::harness::{
    emit_report, load_record, persist_record, read_es_table, reproduce_table_decisions,
    run_comparison, summarize_settings, write_repro_table, write_summary_table, ExperimentConfig,
    ReproStatus, RunRecord,
};
use metadiv::task2vec::{distance_histogram, diversity_coefficient, probe_from_config};
use metadiv::Error;

#[derive(Parser)]
#[command(
    name = "metadiv",
    version,
    about = "Union pre-training vs MAML on synthetic few-shot benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Default)]
struct Overrides {
    /// Use this seed for the benchmark, initialisation, tasks and diversity;
    /// the run name gets a `-seed<N>` suffix.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (runs) or file (tables).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of meta-test tasks.
    #[arg(long)]
    meta_batch: Option<usize>,
    /// Comma-separated MAML adaptation steps evaluated at meta-test.
    #[arg(long, value_delimiter = ',')]
    eval_steps: Option<Vec<usize>>,
}

impl Overrides {
    fn apply(&self, mut c: ExperimentConfig) -> ExperimentConfig {
        if let Some(s) = self.seed {
            // keep run directories distinct per seed
            let old = format!("-seed{}", c.seeds.init);
            let stem = c.name.strip_suffix(&old).unwrap_or(&c.name).to_string();
            c.name = format!("{stem}-seed{s}");
            c = c.with_seed(s);
        }
        if let Some(o) = &self.out {
            c.out_dir = o.clone();
        }
        if let Some(m) = self.meta_batch {
            c.eval.meta_batch = m;
        }
        if let Some(steps) = &self.eval_steps {
            c.eval.eval_steps = steps.clone();
        }
        c
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Low,
    High,
}

#[derive(Subcommand)]
enum Command {
    /// Run one comparison from a TOML config and persist its record.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run every *.toml in a directory, then report over all of them.
    Suite {
        dir: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Apply the effect-size rule to an ES table with a threshold table.
    ReproduceTables {
        es_table: PathBuf,
        delta_table: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verdict counts and bucket means of ES tables. Each table is given as
    /// `label=path`; tables sharing a label are pooled.
    Summarize {
        #[arg(required = true, value_parser = parse_labelled)]
        tables: Vec<(String, PathBuf)>,
    },
    /// Emit tables and a digest from persisted records (record.json files
    /// or directories containing them).
    Report {
        #[arg(required = true)]
        records: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Diversity coefficient (and histogram, if enabled) of a config's benchmark.
    Diversity {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print a preset config as TOML.
    Preset {
        #[arg(value_enum)]
        kind: Preset,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_labelled(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((label, path)) if !label.is_empty() && !path.is_empty() => {
            Ok((label.to_string(), PathBuf::from(path)))
        }
        _ => Err(format!("expected label=path, got {s:?}")),
    }
}

fn fail(e: &Error) -> ExitCode {
    match e.stage() {
        Some(stage) => eprintln!("error in stage {stage}: {e}"),
        None => eprintln!("error: {e}"),
    }
    ExitCode::FAILURE
}

fn finish_run(record: &RunRecord) -> Result<(), Error> {
    let path = persist_record(record, &record.config.run_dir())?;
    eprintln!("wrote {}", path.display());
    match &record.status {
        metadiv::harness::RunStatus::Completed => Ok(()),
        metadiv::harness::RunStatus::Failed { stage, message } => Err(Error::Stage {
            stage: stage.clone(),
            source: Box::new(Error::InvalidArgument(message.clone())),
        }),
    }
}

fn collect_records(paths: &[PathBuf]) -> Result<Vec<RunRecord>, Error> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let direct = p.join("record.json");
            if direct.exists() {
                files.push(direct);
                continue;
            }
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::Io {
                    path: p.clone(),
                    source: e,
                })?
                .filter_map(|e| e.ok().map(|e| e.path().join("record.json")))
                .filter(|f| f.exists())
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    files.iter().map(|f| load_record(f)).collect()
}

fn toml_files(dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    out.sort();
    Ok(out)
}

fn real_main(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, overrides } => {
            let c = overrides.apply(ExperimentConfig::load(&config)?);
            c.validate()?;
            finish_run(&run_comparison(&c))
        }
        Command::Suite { dir, overrides } => {
            let configs = toml_files(&dir)?
                .iter()
                .map(|p| ExperimentConfig::load(p).map(|c| overrides.apply(c)))
                .collect::<Result<Vec<_>, _>>()?;
            for c in &configs {
                c.validate()?;
            }
            let records: Vec<RunRecord> = configs.par_iter().map(run_comparison).collect();
            let mut first_err = None;
            for r in &records {
                if let Err(e) = finish_run(r) {
                    eprintln!("run {} failed: {e}", r.name);
                    first_err.get_or_insert(e);
                }
            }
            let report_dir = overrides
                .out
                .clone()
                .unwrap_or_else(|| {
                    configs
                        .first()
                        .map(|c| c.out_dir.clone())
                        .unwrap_or_default()
                })
                .join("report");
            let bundle = emit_report(&records, &report_dir)?;
            print!("{}", bundle.digest);
            first_err.map_or(Ok(()), Err)
        }
        Command::ReproduceTables {
            es_table,
            delta_table,
            out,
        } => {
            let rows = reproduce_table_decisions(&es_table, &delta_table)?;
            match out {
                Some(path) => {
                    let f = std::fs::File::create(&path).map_err(|e| Error::Io {
                        path: path.clone(),
                        source: e,
                    })?;
                    write_repro_table(f, &rows)?;
                }
                None => write_repro_table(std::io::stdout().lock(), &rows)?,
            }
            let count = |s| rows.iter().filter(|r| r.status == s).count();
            eprintln!(
                "{} rows: {} match, {} mismatch, {} unverifiable",
                rows.len(),
                count(ReproStatus::Match),
                count(ReproStatus::Mismatch),
                count(ReproStatus::Unverifiable)
            );
            Ok(())
        }
        Command::Summarize { tables } => {
            let mut labelled = Vec::new();
            for (label, path) in &tables {
                let f = std::fs::File::open(path).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                for row in read_es_table(f)? {
                    labelled.push((label.clone(), row));
                }
            }
            let groups = summarize_settings(labelled.iter().map(|(l, r)| (l.as_str(), r)));
            write_summary_table(std::io::stdout().lock(), &groups)?;
            Ok(())
        }
        Command::Report { records, out } => {
            let recs = collect_records(&records)?;
            let bundle = emit_report(&recs, &out)?;
            print!("{}", bundle.digest);
            Ok(())
        }
        Command::Diversity { config, overrides } => {
            let c = overrides.apply(ExperimentConfig::load(&config)?);
            let bench = c.benchmark.build().map_err(|e| e.at("benchmark"))?;
            let probe = probe_from_config(&c.probe).map_err(|e| e.at("probe"))?;
            let report = diversity_coefficient(
                &probe,
                &bench,
                &c.diversity.sampling,
                c.diversity.num_tasks,
                c.seeds.diversity,
            )
            .map_err(|e| e.at("diversity"))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if c.diversity.histogram {
                let h = distance_histogram(
                    &probe,
                    &bench,
                    &c.diversity.sampling,
                    c.diversity.histogram_tasks,
                    c.diversity.bins,
                    c.seeds.diversity,
                )
                .map_err(|e| e.at("histogram"))?;
                println!("{}", serde_json::to_string_pretty(&h)?);
            }
            Ok(())
        }
        Command::Preset { kind, seed } => {
            let c = match kind {
                Preset::Low => ExperimentConfig::low_diversity(seed),
                Preset::High => ExperimentConfig::high_diversity(seed),
            };
            print!("{}", c.to_toml_string()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match real_main(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
