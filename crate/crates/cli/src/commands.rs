use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use pairprobe::bank::EmbeddingBank;
use pairprobe::boundary::{evaluate_probe, train_probe, LinearProbe, ProbeTarget, TrainConfig};
use pairprobe::corpus::read_examples;
use pairprobe::metric::{
    aggregate, score_all_layers, CurveTarget, Diagnostics, LayerPoint, MetricError, MissingPolicy,
};
use pairprobe::probe::{
    build_probes, read_probe_file, write_probe_file, ProbeRecord, SynonymLexicon,
};
use pairprobe::report::{
    chart_spec, compare_curves, long_form_rows, write_long_form, ComparisonReport,
    ComparisonSummary,
};
use pairprobe::{
    BoundaryExample, DenominatorMode, ExampleScore, LayerRankingCurve, ProbeExample, Scorer, Task,
};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{BuildArgs, CompareArgs, ReportArgs, ScoreArgs, TrainBoundaryArgs};
use crate::error::CliError;

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.write_all(b"\n"))
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

pub fn load_bank(path: &Path) -> Result<EmbeddingBank, CliError> {
    Ok(EmbeddingBank::read_from(open(path)?)?)
}

pub fn load_probe_records(path: &Path) -> Result<Vec<ProbeRecord>, CliError> {
    Ok(read_probe_file(open(path)?)?)
}

pub fn load_curve(path: &Path) -> Result<LayerRankingCurve, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    LayerRankingCurve::from_json(&text)
        .map_err(|e| CliError::data("malformed_curve", format!("{}: {e}", path.display())))
}

fn mixed(path: &Path, expected: &str) -> CliError {
    CliError::data(
        "mixed_tasks",
        format!("{}: expected only {expected} records", path.display()),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct BuildSummary {
    pub command: &'static str,
    pub task: Task,
    pub input: PathBuf,
    pub output: PathBuf,
    pub read: usize,
    pub kept: usize,
    pub dropped_cross_sentence: usize,
    pub built: usize,
    pub skipped: BTreeMap<String, usize>,
}

pub fn cmd_build(args: &BuildArgs) -> Result<BuildSummary, CliError> {
    if args.task == Task::Synonyms && args.lexicon.is_none() {
        return Err(CliError::usage(
            "usage",
            "--task synonyms requires --lexicon",
        ));
    }
    let lexicon = match &args.lexicon {
        Some(path) => Some(SynonymLexicon::from_reader(open(path)?)?),
        None => None,
    };
    let (examples, stats) = read_examples(open(&args.input)?)?;
    let out = build_probes(args.task, &examples, lexicon.as_ref())?;
    write_probe_file(create(&args.out)?, &out.records)?;
    info!(
        "built {} {} probes from {} examples",
        out.built, args.task, stats.kept
    );
    Ok(BuildSummary {
        command: "build",
        task: args.task,
        input: args.input.clone(),
        output: args.out.clone(),
        read: stats.read,
        kept: stats.kept,
        dropped_cross_sentence: stats.dropped_cross_sentence,
        built: out.built,
        skipped: out.skipped,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreSummary {
    pub command: &'static str,
    pub model_tag: String,
    pub task: Task,
    pub scorer: Scorer,
    pub mode: DenominatorMode,
    pub has_layer0: bool,
    pub output: PathBuf,
    pub percentages: BTreeMap<usize, f64>,
    pub diagnostics: Diagnostics,
}

pub fn cmd_score(args: &ScoreArgs) -> Result<ScoreSummary, CliError> {
    let probes: Vec<ProbeExample> = load_probe_records(&args.probes)?
        .into_iter()
        .map(|r| match r {
            ProbeRecord::Pair(p) => Ok(p),
            ProbeRecord::Boundary(_) => Err(mixed(&args.probes, "pair-probe")),
        })
        .collect::<Result<_, _>>()?;
    let bank = load_bank(&args.bank)?;
    let policy = if args.strict {
        MissingPolicy::Abort
    } else {
        MissingPolicy::Skip
    };
    let curve = score_all_layers(&probes, &bank, args.scorer, args.mode, policy)?;
    if !curve.diagnostics.missing_ids.is_empty() {
        warn!(
            "{} probe example(s) missing from the bank were skipped",
            curve.diagnostics.missing_ids.len()
        );
    }
    write_text(&args.out, &curve.to_json())?;
    Ok(ScoreSummary {
        command: "score",
        model_tag: curve.model_tag.clone(),
        task: curve.task,
        scorer: curve.scorer,
        mode: curve.mode,
        has_layer0: curve.has_layer0,
        output: args.out.clone(),
        percentages: curve
            .layers
            .iter()
            .map(|p| (p.layer, p.percentage))
            .collect(),
        diagnostics: curve.diagnostics,
    })
}

/// Keeps `limit` items chosen uniformly at random, in their original order.
pub fn sample<T>(items: Vec<T>, limit: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    if items.len() <= limit {
        return items;
    }
    let mut keep = index::sample(rng, items.len(), limit).into_vec();
    keep.sort_unstable();
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    keep.into_iter().map(|i| slots[i].take().unwrap()).collect()
}

fn boundary_split(
    path: &Path,
    bank: &EmbeddingBank,
    strict: bool,
) -> Result<(Vec<BoundaryExample>, Vec<String>), CliError> {
    let records = load_probe_records(path)?;
    let mut kept = Vec::with_capacity(records.len());
    let mut missing = Vec::new();
    for r in records {
        let ProbeRecord::Boundary(b) = r else {
            return Err(mixed(path, "boundary"));
        };
        if !bank.contains(&b.example_id) {
            missing.push(b.example_id);
            continue;
        }
        let entry = bank.entry(&b.example_id)?;
        if entry.paragraph_len != b.paragraph_words.len() {
            return Err(MetricError::WordCountMismatch {
                id: b.example_id.clone(),
                side: pairprobe::Side::Paragraph,
                bank: entry.paragraph_len,
                probe: b.paragraph_words.len(),
            }
            .into());
        }
        kept.push(b);
    }
    if strict && !missing.is_empty() {
        return Err(MetricError::IdMismatch(missing).into());
    }
    if !missing.is_empty() {
        warn!(
            "{}: {} example(s) missing from the bank were skipped",
            path.display(),
            missing.len()
        );
    }
    Ok((kept, missing))
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitCounts {
    pub available: usize,
    pub used: usize,
    pub missing_from_bank: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeRun {
    pub layer: usize,
    pub target: ProbeTarget,
    pub checkpoint: PathBuf,
    pub epochs_run: usize,
    pub final_loss: f64,
    pub test_percentage: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub command: &'static str,
    pub model_tag: String,
    pub seed: u64,
    pub trained_probe: bool,
    pub mode: DenominatorMode,
    pub has_layer0: bool,
    pub config: TrainConfig,
    pub train: SplitCounts,
    pub test: SplitCounts,
    pub probes: Vec<ProbeRun>,
    pub start: BTreeMap<usize, f64>,
    pub end: BTreeMap<usize, f64>,
    pub mean: BTreeMap<usize, f64>,
    pub out_dir: PathBuf,
}

fn point(
    layer: usize,
    scores: &[ExampleScore],
    mode: DenominatorMode,
) -> Result<LayerPoint, CliError> {
    let agg = aggregate(scores, mode)?;
    Ok(LayerPoint {
        layer,
        count: agg.count,
        denominator: agg.denominator,
        percentage: agg.percentage,
    })
}

pub fn cmd_train_boundary(args: &TrainBoundaryArgs) -> Result<TrainSummary, CliError> {
    let bank = load_bank(&args.bank)?;
    let (train_all, train_missing) = boundary_split(&args.train, &bank, args.strict)?;
    if train_all.is_empty() {
        return Err(CliError::usage(
            "empty_input",
            format!("{}: no boundary examples to train on", args.train.display()),
        ));
    }
    let (test_all, test_missing) = boundary_split(&args.test, &bank, args.strict)?;
    if test_all.is_empty() {
        return Err(CliError::usage(
            "empty_input",
            format!("{}: no boundary examples to evaluate", args.test.display()),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (train_available, test_available) = (train_all.len(), test_all.len());
    let train = sample(train_all, args.train_size, &mut rng);
    let test = sample(test_all, args.test_size, &mut rng);
    info!(
        "using {} of {} training and {} of {} test examples (seed {})",
        train.len(),
        train_available,
        test.len(),
        test_available,
        args.seed
    );

    let config = TrainConfig {
        learning_rate: args.learning_rate,
        batch_size: args.batch_size,
        max_epochs: args.max_epochs,
        min_improvement: args.min_improvement,
        seed: args.seed,
        dim: None,
    };
    let jobs: Vec<(usize, ProbeTarget)> = bank
        .layers()
        .flat_map(|l| [(l, ProbeTarget::Start), (l, ProbeTarget::End)])
        .collect();
    let results: Vec<(LinearProbe, Vec<ExampleScore>)> = jobs
        .par_iter()
        .map(|&(layer, target)| {
            let probe = train_probe(&train, &bank, layer, target, &config)?;
            let scores = evaluate_probe(&probe, &bank, &test)?;
            Ok((probe, scores))
        })
        .collect::<Result<_, CliError>>()?;

    let checkpoints = args.out_dir.join("checkpoints");
    fs::create_dir_all(&checkpoints).map_err(|e| CliError::io(&checkpoints, e))?;
    let mut runs = Vec::with_capacity(results.len());
    let mut start_points = Vec::new();
    let mut end_points = Vec::new();
    let mut mean_points = Vec::new();
    for pair in results.chunks(2) {
        let [(start, start_scores), (end, end_scores)] = pair else {
            unreachable!("jobs come in start/end pairs")
        };
        let layer = start.layer;
        for (probe, scores) in [(start, start_scores), (end, end_scores)] {
            let path = checkpoints.join(format!("layer{:02}_{}.probe", probe.layer, probe.target));
            probe.save(&path).map_err(|e| match e {
                pairprobe::boundary::BoundaryError::Io(io) => CliError::io(&path, io),
                other => other.into(),
            })?;
            let meta = probe
                .training
                .as_ref()
                .expect("trained probes carry metadata");
            runs.push(ProbeRun {
                layer,
                target: probe.target,
                checkpoint: path,
                epochs_run: meta.epochs_run,
                final_loss: meta.final_loss,
                test_percentage: point(layer, scores, args.mode)?.percentage,
            });
        }
        start_points.push(point(layer, start_scores, args.mode)?);
        end_points.push(point(layer, end_scores, args.mode)?);
        let both: Vec<ExampleScore> = start_scores.iter().chain(end_scores).cloned().collect();
        mean_points.push(point(layer, &both, args.mode)?);
    }

    let degenerate = test.iter().filter(|e| e.width() < 2).count() as u64;
    let mut missing_ids = train_missing.clone();
    missing_ids.extend(test_missing.iter().cloned());
    let curve = |target, layers| LayerRankingCurve {
        model_tag: bank.model_tag.clone(),
        task: Task::Boundary,
        scorer: Scorer::Logit,
        mode: args.mode,
        has_layer0: bank.has_layer0(),
        target: Some(target),
        trained_probe: true,
        seed: Some(args.seed),
        layers,
        diagnostics: Diagnostics {
            skipped_pairs: 0,
            skipped_examples: degenerate,
            missing_ids: missing_ids.clone(),
        },
    };
    let as_map = |points: &[LayerPoint]| points.iter().map(|p| (p.layer, p.percentage)).collect();
    let summary = TrainSummary {
        command: "train-boundary",
        model_tag: bank.model_tag.clone(),
        seed: args.seed,
        trained_probe: true,
        mode: args.mode,
        has_layer0: bank.has_layer0(),
        config,
        train: SplitCounts {
            available: train_available,
            used: train.len(),
            missing_from_bank: train_missing.len(),
        },
        test: SplitCounts {
            available: test_available,
            used: test.len(),
            missing_from_bank: test_missing.len(),
        },
        probes: runs,
        start: as_map(&start_points),
        end: as_map(&end_points),
        mean: as_map(&mean_points),
        out_dir: args.out_dir.clone(),
    };
    for (name, target, points) in [
        ("boundary_start.json", CurveTarget::Start, start_points),
        ("boundary_end.json", CurveTarget::End, end_points),
        ("boundary.json", CurveTarget::Mean, mean_points),
    ] {
        write_text(&args.out_dir.join(name), &curve(target, points).to_json())?;
    }
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_text(&args.out_dir.join("summary.json"), &text)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareOutput {
    #[serde(skip)]
    pub report: ComparisonReport,
    #[serde(flatten)]
    pub summary: ComparisonSummary,
    pub output: PathBuf,
}

pub fn cmd_compare(args: &CompareArgs) -> Result<CompareOutput, CliError> {
    let a = load_curve(&args.a)?;
    let b = load_curve(&args.b)?;
    let report = compare_curves(&a, &b)?;
    let mut w = create(&args.out)?;
    report.write_csv(&mut w)?;
    w.flush().map_err(|e| CliError::io(&args.out, e))?;
    let out = CompareOutput {
        summary: report.summary(),
        report,
        output: args.out.clone(),
    };
    if let Some(path) = &args.summary {
        write_text(
            path,
            &serde_json::to_string_pretty(&out).expect("summary serializes"),
        )?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportSummary {
    pub command: &'static str,
    pub curves: usize,
    pub rows: usize,
    pub mode: DenominatorMode,
    pub csv: PathBuf,
    pub chart: PathBuf,
}

pub fn cmd_report(args: &ReportArgs) -> Result<ReportSummary, CliError> {
    let curves: Vec<LayerRankingCurve> = args
        .curves
        .iter()
        .map(|p| load_curve(p))
        .collect::<Result<_, _>>()?;
    let mode = curves[0].mode;
    if let Some(other) = curves.iter().find(|c| c.mode != mode) {
        return Err(CliError::data(
            "curve_mismatch",
            format!("curves mix denominator modes {mode} and {}", other.mode),
        ));
    }
    let rows = long_form_rows(&curves);
    let csv = args.out_dir.join("curves.csv");
    let mut w = create(&csv)?;
    write_long_form(&mut w, &rows)?;
    w.flush().map_err(|e| CliError::io(&csv, e))?;
    let chart = args.out_dir.join("chart.vl.json");
    let spec =
        serde_json::to_string_pretty(&chart_spec("curves.csv", mode)).expect("spec serializes");
    write_text(&chart, &spec)?;
    Ok(ReportSummary {
        command: "report",
        curves: curves.len(),
        rows: rows.len(),
        mode,
        csv,
        chart,
    })
}
