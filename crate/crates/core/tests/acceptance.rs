//! Acceptance suite. Prints one PASS/FAIL line per criterion, writes the
//! CLI-style artefacts it checks under the cargo target tmpdir, and exits
//! non-zero when a hard criterion fails. The desk-scale trend is reported
//! with its own line but never affects the exit status.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use metadiv::harness::{
    emit_report, read_accuracy_table, read_es_table, reconstruct_effect_sizes, run_comparison,
    ExperimentConfig, RunRecord,
};
use metadiv::learners::{
    episodic_vs_union_loss, meta_test, EvalMethod, HeadFitOptions, Method, Model,
};
use metadiv::rng::{child_seed, rng_from_seed};
use metadiv::stats::delta_from_pooled;
use metadiv::task2vec::{
    distance_histogram, diversity_coefficient, embed_task, fim_diagonal, probe_from_config,
    random_probe, ProbeConfig, TaskSampling,
};
use metadiv::tasks::{make_source, sample_task, Benchmark, BenchmarkSpec, Split};
use metadiv::tensor::{
    accuracy, finite_diff_grad, forward, forward_on_tape, grad, grad_through_updates, softmax_rows,
    tape_cross_entropy, NetSpec, ParamVector, Segment, Tape, Var,
};

const BIN: &str = env!("CARGO_BIN_EXE_metadiv");

struct Outcome {
    pass: bool,
    detail: String,
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn out_dir() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).expect("acceptance output dir");
    dir
}

fn cli(args: &[&str]) -> (bool, String, String) {
    let out = Command::new(BIN).args(args).output().expect("run metadiv");
    (
        out.status.success(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn csv_rows(text: &str) -> Vec<BTreeMap<String, String>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().expect("header").clone();
    rdr.records()
        .map(|r| {
            let r = r.expect("csv row");
            header
                .iter()
                .zip(r.iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect()
        })
        .collect()
}

fn within_budget(elapsed: Duration, budget: Duration) -> (bool, String) {
    (
        elapsed <= budget,
        format!(
            "{:.2}s of {:.0}s",
            elapsed.as_secs_f64(),
            budget.as_secs_f64()
        ),
    )
}

fn decision_tables(out: &Path) -> Outcome {
    let t0 = Instant::now();
    let f = fixtures();
    let pairs = [
        ("table1_es.csv", "table21_delta.csv", "repro_low_fo.csv"),
        ("table3_es.csv", "table23_delta.csv", "repro_high.csv"),
    ];
    let mut problems = Vec::new();
    let mut matched = 0;
    let mut unverifiable = Vec::new();
    for (es, delta, name) in pairs {
        let target = out.join(name);
        let (ok, _, err) = cli(&[
            "reproduce-tables",
            f.join(es).to_str().unwrap(),
            f.join(delta).to_str().unwrap(),
            "--out",
            target.to_str().unwrap(),
        ]);
        if !ok {
            problems.push(format!("{es}: {err}"));
            continue;
        }
        for row in csv_rows(&fs::read_to_string(&target).unwrap()) {
            let key = format!("{}/{}", row["dataset"], row["variant"]);
            let hdb = row["dataset"].starts_with("hdb");
            match row["status"].as_str() {
                "match" => matched += 1,
                "unverifiable" if es == "table3_es.csv" && hdb => unverifiable.push(key),
                // rows of the second table without a threshold are not in scope
                "unverifiable" if es == "table3_es.csv" => {}
                other => problems.push(format!("{key}: {other}")),
            }
        }
    }
    let boundary_ok = ["hdb7-afto,maml5", "hdb9-cavdo,maml10"].iter().all(|k| {
        fs::read_to_string(out.join("repro_high.csv"))
            .unwrap_or_default()
            .lines()
            .any(|l| l.starts_with(k) && l.contains(",H1_pt,H1_pt,match"))
    });
    if !boundary_ok {
        problems.push("boundary rows 0.0528/0.0552 not reproduced as H1_pt".into());
    }
    let (fast, timing) = within_budget(t0.elapsed(), Duration::from_secs(1));
    if !fast {
        problems.push(format!("too slow: {timing}"));
    }
    Outcome {
        pass: problems.is_empty(),
        detail: format!(
            "{matched} verdicts match; hdb rows without a threshold: {}; {timing}{}",
            unverifiable.join(" "),
            if problems.is_empty() {
                String::new()
            } else {
                format!("; problems: {}", problems.join("; "))
            }
        ),
    }
}

fn summary_reproduction(out: &Path) -> Outcome {
    let t0 = Instant::now();
    let f = fixtures();
    let t = |n: &str| f.join(n).to_str().unwrap().to_string();
    let args: Vec<String> = vec![
        "summarize".into(),
        format!("low-fo={}", t("table1_es.csv")),
        format!("low-ho={}", t("table2_es.csv")),
        format!("high-all={}", t("table3_es.csv")),
        format!("high-5cnn={}", t("table4_es.csv")),
        format!("low-pooled={}", t("table1_es.csv")),
        format!("low-pooled={}", t("table2_es.csv")),
        format!("high-pooled={}", t("table3_es.csv")),
        format!("high-pooled={}", t("table4_es.csv")),
    ];
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    let (ok, stdout, stderr) = cli(&argv);
    if !ok {
        return Outcome {
            pass: false,
            detail: format!("summarize failed: {stderr}"),
        };
    }
    fs::write(out.join("summary_tables.csv"), &stdout).unwrap();
    let rows: BTreeMap<String, BTreeMap<String, String>> = csv_rows(&stdout)
        .into_iter()
        .map(|r| (r["setting"].clone(), r))
        .collect();

    let counts = [
        ("low-fo", [1, 11, 10]),
        ("low-ho", [0, 9, 9]),
        ("high-all", [14, 3, 9]),
        ("high-5cnn", [4, 3, 9]),
    ];
    // (setting, column, printed value, tolerance)
    let means: [(&str, &str, Option<f64>, f64); 18] = [
        ("low-fo", "h0_mean", Some(0.029), 0.001),
        ("low-fo", "h1_pt_mean", Some(0.778), 0.001),
        ("low-fo", "h1_maml_mean", Some(-0.411), 0.001),
        ("low-ho", "h0_mean", None, 0.001),
        ("low-ho", "h1_pt_mean", Some(0.669), 0.001),
        ("low-ho", "h1_maml_mean", Some(-0.717), 0.001),
        ("high-all", "h0_mean", Some(0.0721), 0.001),
        ("high-all", "h1_pt_mean", Some(0.0638), 0.001),
        ("high-all", "h1_maml_mean", Some(-0.155), 0.001),
        ("high-5cnn", "h0_mean", Some(0.00922), 0.001),
        ("high-5cnn", "h1_pt_mean", Some(0.0795), 0.001),
        ("high-5cnn", "h1_maml_mean", Some(-0.192), 0.001),
        ("low-pooled", "h0_mean", Some(0.029), 0.002),
        ("low-pooled", "h1_pt_mean", Some(0.727), 0.002),
        ("low-pooled", "h1_maml_mean", Some(-0.581), 0.002),
        ("high-pooled", "h0_mean", Some(0.0581), 0.002),
        ("high-pooled", "h1_pt_mean", Some(0.0717), 0.002),
        ("high-pooled", "h1_maml_mean", Some(-0.167), 0.002),
    ];
    let mut misses = Vec::new();
    for (setting, want) in counts {
        let r = &rows[setting];
        let got = [
            r["h0_count"].parse::<usize>().unwrap(),
            r["h1_pt_count"].parse().unwrap(),
            r["h1_maml_count"].parse().unwrap(),
        ];
        if got != want {
            misses.push(format!("{setting} counts {got:?} vs {want:?}"));
        }
    }
    for (setting, col, want, tol) in means {
        let cell = &rows[setting][col];
        let got = (!cell.is_empty()).then(|| cell.parse::<f64>().unwrap());
        let fine = match (got, want) {
            (None, None) => true,
            (Some(g), Some(w)) => (g - w).abs() <= tol,
            _ => false,
        };
        if !fine {
            misses.push(format!("{setting} {col} {cell} vs {want:?} (tol {tol})"));
        }
    }
    // the overall H1 means quoted in the text are shown for reference only
    let overall: Vec<String> = [("low-pooled", 0.0909), ("high-pooled", -0.105)]
        .iter()
        .map(|(setting, printed)| {
            format!(
                "{setting} H1 mean {} (text {printed})",
                rows[*setting]["h1_mean"]
            )
        })
        .collect();
    let (fast, timing) = within_budget(t0.elapsed(), Duration::from_secs(1));
    if !fast {
        misses.push(format!("too slow: {timing}"));
    }
    Outcome {
        pass: misses.is_empty(),
        detail: if misses.is_empty() {
            format!(
                "all counts and means within tolerance; {}; {timing}",
                overall.join(", ")
            )
        } else {
            format!(
                "{} mismatches: {}; {}; {timing}",
                misses.len(),
                misses.join("; "),
                overall.join(", ")
            )
        },
    }
}

fn effect_size_reconstruction() -> Outcome {
    let f = fixtures();
    let acc = read_accuracy_table(fs::File::open(f.join("table8_acc.csv")).unwrap()).unwrap();
    let es = read_es_table(fs::File::open(f.join("table1_es.csv")).unwrap()).unwrap();
    let printed: BTreeMap<(String, String), f64> = es
        .into_iter()
        .map(|r| ((r.dataset, r.variant), r.es))
        .collect();
    let rebuilt = reconstruct_effect_sizes(&acc, 300).unwrap();
    let mut misses = Vec::new();
    let mut worst: f64 = 0.0;
    for (dataset, variant, d) in &rebuilt {
        let p = printed[&(dataset.clone(), variant.clone())];
        let err = (d - p).abs();
        worst = worst.max(err);
        if err > 0.05 {
            misses.push(format!("{dataset}/{variant} {d:.3} vs {p}"));
        }
    }
    Outcome {
        pass: misses.is_empty(),
        detail: format!(
            "{} rows rebuilt, {} outside 0.05 (worst {worst:.3}){}",
            rebuilt.len(),
            misses.len(),
            if misses.is_empty() {
                String::new()
            } else {
                format!(": {}", misses.join(", "))
            }
        ),
    }
}

fn delta_sanity() -> Outcome {
    let d = delta_from_pooled(0.167).unwrap();
    Outcome {
        pass: (d - 0.06).abs() <= 0.001,
        detail: format!("delta(0.167) = {d:.5}"),
    }
}

fn row(values: Vec<f64>) -> Array2<f64> {
    let n = values.len();
    Array2::from_shape_vec((1, n), values).unwrap()
}

fn gradient_correctness() -> Outcome {
    let t0 = Instant::now();
    let mut rng = rng_from_seed(2024);
    let mut worst_fd: f64 = 0.0;
    for k in 0..60u64 {
        let input = rng.random_range(2..6);
        let hidden: Vec<usize> = (0..rng.random_range(0..3))
            .map(|_| rng.random_range(2..6))
            .collect();
        let classes = rng.random_range(2..5);
        let spec = NetSpec::new(input, hidden, classes).unwrap();
        // every parameter random, biases included, so no unit sits exactly on a kink
        let init = Model::init(spec.clone(), k).unwrap().params;
        let values = (0..init.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let params = init.with_values(values).unwrap();
        let n = rng.random_range(3..9);
        let x = Array2::from_shape_simple_fn((n, input), || StandardNormal.sample(&mut rng));
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let loss = |t: &mut Tape, p: Var| {
            let xv = t.constant(x.clone());
            let logits = forward_on_tape(t, &spec, p, xv)?;
            tape_cross_entropy(t, logits, &y)
        };
        let g = grad(loss, &params).unwrap();
        let fd = finite_diff_grad(loss, &params, 1e-6).unwrap();
        let diff: f64 = g
            .values()
            .iter()
            .zip(fd.values())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        worst_fd = worst_fd.max(diff / fd.norm().max(1e-12));
    }

    // quadratic toys: L_in = ½ Σ h_i (p_i − a_i)², L_out = ½ Σ g_i (p_i − b_i)²
    let mut worst_ho: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(1..6);
        let draw = |rng: &mut metadiv::rng::Rng, lo: f64, hi: f64| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(lo..hi)).collect()
        };
        let h = draw(&mut rng, 0.1, 3.0);
        let g = draw(&mut rng, 0.1, 3.0);
        let a = draw(&mut rng, -2.0, 2.0);
        let b = draw(&mut rng, -2.0, 2.0);
        let p0 = draw(&mut rng, -2.0, 2.0);
        let steps = rng.random_range(0..6);
        let lr = rng.random_range(0.01..0.3);
        let quad = |curv: Vec<f64>, centre: Vec<f64>| {
            move |t: &mut Tape, p: Var| {
                let c = t.constant(row(centre.clone()));
                let w = t.constant(row(curv.clone()));
                let d = t.sub(p, c);
                let sq = t.mul(d, d);
                let wsq = t.mul(sq, w);
                let s = t.sum_all(wsq);
                Ok(t.scale(s, 0.5))
            }
        };
        let params = ParamVector::new(p0.clone(), vec![Segment::new("p", 1, n)]).unwrap();
        let got = grad_through_updates(
            quad(h.clone(), a.clone()),
            quad(g.clone(), b.clone()),
            &params,
            steps,
            lr,
        )
        .unwrap();
        let mut p = p0.clone();
        for _ in 0..steps {
            for i in 0..n {
                p[i] -= lr * h[i] * (p[i] - a[i]);
            }
        }
        for i in 0..n {
            let want = (1.0 - lr * h[i]).powi(steps as i32) * g[i] * (p[i] - b[i]);
            worst_ho = worst_ho.max((got.values()[i] - want).abs() / want.abs().max(1.0));
        }
    }
    let (fast, timing) = within_budget(t0.elapsed(), Duration::from_secs(30));
    Outcome {
        pass: worst_fd <= 1e-4 && worst_ho <= 1e-8 && fast,
        detail: format!(
            "60 nets, worst relative FD error {worst_fd:.2e}; 50 quadratic toys, worst closed-form error {worst_ho:.2e}; {timing}"
        ),
    }
}

fn fim_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    for k in 0..24u64 {
        let bench = BenchmarkSpec {
            sources: 1 + (k as usize % 3),
            classes_per_source: 12,
            input_dim: 6,
            seed: 100 + k,
            ..BenchmarkSpec::default()
        }
        .build()
        .unwrap();
        let spec = NetSpec::new(6, vec![7, 5], bench.total_classes()).unwrap();
        let probe = random_probe(spec, k).unwrap();
        let task = sample_task(
            &bench,
            Split::Train,
            3 + (k as usize % 3),
            2,
            3,
            child_seed(k, 7),
        )
        .unwrap();
        let emb = embed_task(&probe, &task).unwrap();

        let data = task.all_examples();
        let (model, _) = metadiv::learners::fit_head_with(
            &probe.model,
            &data,
            task.n_way,
            None,
            &HeadFitOptions::default(),
        )
        .unwrap();
        let probs = softmax_rows(&forward(&model.spec, &model.params, &data.inputs).unwrap());
        let mut oracle = vec![0.0; model.params.len()];
        for i in 0..data.len() {
            let x = data.inputs.row(i).insert_axis(ndarray::Axis(0)).to_owned();
            for y in 0..task.n_way {
                let spec = model.spec.clone();
                let x = x.clone();
                let g = grad(
                    move |t: &mut Tape, p: Var| {
                        let xv = t.constant(x.clone());
                        let logits = forward_on_tape(t, &spec, p, xv)?;
                        tape_cross_entropy(t, logits, &[y])
                    },
                    &model.params,
                )
                .unwrap();
                for (o, gi) in oracle.iter_mut().zip(g.values()) {
                    *o += probs[[i, y]] * gi * gi / data.len() as f64;
                }
            }
        }
        oracle.truncate(model.head_boundary);
        let num: f64 = emb
            .fim_diag
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let den: f64 = oracle.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(num / den.max(1e-300));
        // the full-parameter diagonal agrees too
        let full = fim_diagonal(&model, &data).unwrap();
        assert_eq!(&full[..model.head_boundary], &emb.fim_diag[..]);
    }
    let (fast, timing) = within_budget(t0.elapsed(), Duration::from_secs(30));
    Outcome {
        pass: worst <= 1e-10 && fast,
        detail: format!("24 tasks, worst relative error {worst:.2e}; {timing}"),
    }
}

fn diversity_behaviour(out: &Path) -> Outcome {
    let t0 = Instant::now();
    let spec = BenchmarkSpec {
        sources: 2,
        classes_per_source: 40,
        seed: 11,
        ..BenchmarkSpec::default()
    };
    let union = spec.build().unwrap();
    let parts: Vec<Benchmark> = (0..2)
        .map(|s| {
            let mut shift = vec![0.0; spec.input_dim];
            shift[s] = spec.translation;
            let src = make_source(
                child_seed(spec.seed, s as u64),
                spec.classes_per_source,
                spec.input_dim,
                spec.mean_scale,
                spec.spread,
            )
            .unwrap()
            .translated(&shift)
            .unwrap()
            .named(format!("src{s}"));
            Benchmark::with_split(src, spec.splits).unwrap()
        })
        .collect();
    let probe = probe_from_config(&ProbeConfig::default()).unwrap();
    let sampling = TaskSampling::default();
    let tasks = 500;
    let u = diversity_coefficient(&probe, &union, &sampling, tasks, 5).unwrap();
    let mut lines = vec![format!(
        "union {:.4} ± {:.4}",
        u.coefficient, u.ci95_halfwidth
    )];
    let mut pass = true;
    for (s, part) in parts.iter().enumerate() {
        let d = diversity_coefficient(&probe, part, &sampling, tasks, 5).unwrap();
        lines.push(format!(
            "src{s} {:.4} ± {:.4}",
            d.coefficient, d.ci95_halfwidth
        ));
        pass &= u.coefficient - u.ci95_halfwidth > d.coefficient + d.ci95_halfwidth;
    }
    let hist = distance_histogram(&probe, &union, &sampling, tasks, 30, 5).unwrap();
    let cross = hist
        .partition("cross")
        .and_then(|p| p.mean)
        .unwrap_or(f64::NAN);
    for name in ["within:src0", "within:src1"] {
        let m = hist
            .partition(name)
            .and_then(|p| p.mean)
            .unwrap_or(f64::NAN);
        lines.push(format!("{name} mean {m:.4}"));
        pass &= cross > m;
    }
    lines.push(format!("cross mean {cross:.4}"));
    let mut w = csv::Writer::from_path(out.join("histogram.csv")).unwrap();
    w.write_record(["partition", "bin_center", "count"])
        .unwrap();
    for p in &hist.partitions {
        for (c, n) in hist.rows(p) {
            w.write_record([p.name.clone(), format!("{c:.6}"), n.to_string()])
                .unwrap();
        }
    }
    w.flush().unwrap();
    let (fast, timing) = within_budget(t0.elapsed(), Duration::from_secs(300));
    Outcome {
        pass: pass && fast,
        detail: format!("{} tasks each; {}; {timing}", tasks, lines.join(", ")),
    }
}

fn bound_inequality() -> Outcome {
    let t0 = Instant::now();
    let mut worst_gap = f64::NEG_INFINITY;
    let mut violations = 0;
    for k in 0..24u64 {
        let bench = BenchmarkSpec {
            sources: 1 + (k as usize % 3),
            classes_per_source: 10 + (k as usize % 4) * 3,
            input_dim: 8,
            seed: 500 + k,
            ..BenchmarkSpec::default()
        }
        .build()
        .unwrap();
        let spec = NetSpec::new(8, vec![6 + (k as usize % 5)], 5).unwrap();
        let model = Model::init(spec, 900 + k).unwrap();
        let tasks: Vec<_> = (0..6)
            .map(|i| sample_task(&bench, Split::Train, 5, 3, 6, child_seed(k, i)).unwrap())
            .collect();
        let (episodic, union) = episodic_vs_union_loss(&model, &bench, &tasks).unwrap();
        let gap = episodic - union;
        worst_gap = worst_gap.max(gap);
        if gap > 1e-9 {
            violations += 1;
        }
    }
    let (fast, timing) = within_budget(t0.elapsed(), Duration::from_secs(120));
    Outcome {
        pass: violations == 0 && fast,
        detail: format!("24 bodies, {violations} violations, largest episodic - union {worst_gap:.3e}; {timing}"),
    }
}

fn zero_step_identity() -> Outcome {
    let bench = BenchmarkSpec::high_diversity(3, 2).build().unwrap();
    let tasks: Vec<_> = (0..40)
        .map(|i| sample_task(&bench, Split::Test, 5, 5, 15, child_seed(77, i)).unwrap())
        .collect();
    let mut all_equal = true;
    for seed in 0..3 {
        let model = Model::init(NetSpec::new(16, vec![12, 8], 5).unwrap(), seed).unwrap();
        let direct: Vec<f64> = tasks
            .iter()
            .map(|t| {
                accuracy(
                    &forward(&model.spec, &model.params, &t.query.inputs).unwrap(),
                    &t.query.labels,
                )
            })
            .collect();
        for lr in [0.0, 0.1, 5.0] {
            let r = meta_test(&model, EvalMethod::MamlAdapt { steps: 0, lr }, &tasks).unwrap();
            let same = r.per_task_accuracy.len() == direct.len()
                && r.per_task_accuracy
                    .iter()
                    .zip(&direct)
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            all_equal &= same;
        }
    }
    Outcome {
        pass: all_equal,
        detail: "3 models x 3 rates x 40 tasks compared bit for bit".into(),
    }
}

fn trend(out: &Path) -> Outcome {
    let t0 = Instant::now();
    let mut records: Vec<RunRecord> = Vec::new();
    for seed in 0..5 {
        for mut cfg in [
            ExperimentConfig::low_diversity(seed),
            ExperimentConfig::high_diversity(seed),
        ] {
            cfg.maml_orders = vec![Method::FoMaml, Method::HoMaml];
            records.push(run_comparison(&cfg));
        }
    }
    let bundle = emit_report(&records, &out.join("report")).unwrap();
    print!("{}", bundle.digest);
    let failed: Vec<&str> = records
        .iter()
        .filter(|r| !r.is_completed())
        .map(|r| r.name.as_str())
        .collect();
    let mean = |regime: &str| {
        bundle
            .trends
            .iter()
            .find(|t| t.regime == regime)
            .and_then(|t| t.mean)
    };
    let (lo, hi) = (mean("low"), mean("high"));
    let signs = matches!((lo, hi), (Some(l), Some(h)) if l >= 0.0 && h <= 0.0);
    let (fast, timing) = within_budget(t0.elapsed(), Duration::from_secs(1800));
    Outcome {
        pass: signs && fast && failed.is_empty(),
        detail: format!(
            "mean H1 effect size low {} high {} (expected low >= 0, high <= 0); failed runs: {:?}; {timing}",
            lo.map_or("none".into(), |v| format!("{v:.4}")),
            hi.map_or("none".into(), |v| format!("{v:.4}")),
            failed
        ),
    }
}

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let out = out_dir();
    type Check<'a> = (&'a str, bool, Box<dyn Fn() -> Outcome + 'a>);
    let checks: Vec<Check> = vec![
        (
            "decision-table reproduction",
            true,
            Box::new(|| decision_tables(&out)),
        ),
        (
            "summary reproduction",
            true,
            Box::new(|| summary_reproduction(&out)),
        ),
        (
            "effect-size reconstruction",
            true,
            Box::new(effect_size_reconstruction),
        ),
        ("delta sanity", true, Box::new(delta_sanity)),
        ("gradient correctness", true, Box::new(gradient_correctness)),
        ("fisher oracle equivalence", true, Box::new(fim_oracle)),
        (
            "diversity behaviour",
            true,
            Box::new(|| diversity_behaviour(&out)),
        ),
        (
            "episodic vs union inequality",
            true,
            Box::new(bound_inequality),
        ),
        ("zero-step identity", true, Box::new(zero_step_identity)),
        (
            "desk-scale trend (reported)",
            false,
            Box::new(|| trend(&out)),
        ),
    ];
    let mut hard_failures = 0;
    for (i, (name, hard, check)) in checks.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|f| f == &n.to_string() || name.contains(f.as_str()))
        {
            continue;
        }
        let o = check();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n} {tag} {name}: {}", o.detail);
        if !o.pass && *hard {
            hard_failures += 1;
        }
    }
    println!("artefacts in {}", out.display());
    if hard_failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{hard_failures} hard criteria failed");
        ExitCode::FAILURE
    }
}
