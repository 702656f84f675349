use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::{bail, Context, Result};
use psmscan::action_log::{log_stats, parse_action_log, parse_time, ActionLog, CascadeSet, LogFormat, Timestamp};
use psmscan::causal::{causality_vectors, read_vectors_csv, write_vectors_csv, CausalityVector};
use psmscan::classify::{read_predictions, write_predictions, Classifier, FeatureRow, GroundTruth};
use psmscan::community::{cohesion_test, louvain, CoPostGraph, CommunityPartition};
use psmscan::decay::decay_vectors;
use psmscan::eval::{cross_validate, score, timeliness};
use psmscan::features::labeled_users;
use psmscan::synth::generate;
use serde::Serialize;

use crate::config::{ClassifierKind, PipelineConfig};
use crate::output::Sink;
use crate::{Command, IntervalArgs, LogArgs};

pub fn execute(command: &Command, cfg: &PipelineConfig, mut sink: Sink) -> Result<()> {
    match command {
        Command::Ingest { log, .. } => {
            let log = read_log(log, cfg)?;
            let cascades = CascadeSet::extract(&log, cfg.cascade)?;
            sink.primary("log.csv", &bytes(|w| log.write_csv(w))?)?;
            sink.secondary("cascades.jsonl", &bytes(|w| cascades.write_jsonl(w))?)?;
        }
        Command::Stats { log, .. } => {
            let log = read_log(log, cfg)?;
            let cascades = CascadeSet::extract(&log, cfg.cascade)?;
            sink.primary("stats.json", &json(&log_stats(&log, &cascades))?)?;
        }
        Command::Metrics { log, interval, .. } => {
            let log = read_log(log, cfg)?;
            let interval = explicit_interval(interval, &log)?;
            let vectors = causality_vectors(&log, interval, cfg.cascade, cfg.causal)?;
            sink.primary(
                "vectors.csv",
                &bytes(|w| write_vectors_csv(&vectors, log.vocab(), "", w))?,
            )?;
        }
        Command::Decay { log, interval, .. } => {
            let log = read_log(log, cfg)?;
            let interval = full_interval(interval, &log)?;
            let vectors = decay_vectors(&log, interval, cfg.cascade, cfg.causal, &cfg.decay)?;
            let undefined = vectors.iter().filter(|v| v.is_fully_undefined()).count();
            log::info!(
                "interval {interval:?}: {undefined} of {} users have no defined score",
                vectors.len()
            );
            sink.primary(
                "decay_vectors.csv",
                &bytes(|w| write_vectors_csv(&vectors, log.vocab(), "xi_", w))?,
            )?;
        }
        Command::Graph { log } => {
            let log = read_log(log, cfg)?;
            let graph = CoPostGraph::build(&log);
            let mut out = Vec::new();
            graph.write_edge_list(&mut out)?;
            sink.primary("graph.txt", &out)?;
        }
        Command::Communities { log, .. } => {
            let log = read_log(log, cfg)?;
            let partition = louvain(&CoPostGraph::build(&log), cfg.louvain);
            log::info!("{} communities, modularity {:.4}", partition.k, partition.modularity);
            sink.primary("partition.csv", &bytes(|w| partition.write_csv(log.vocab(), w))?)?;
            sink.secondary("communities.json", &json(&CommunitySummary::of(&partition))?)?;
        }
        Command::Classify {
            kind,
            log,
            vectors,
            labels,
            ..
        } => {
            let log = read_log(log, cfg)?;
            let vectors = read_vectors(vectors, &log)?;
            let truth = labels.as_deref().map(|p| read_labels(p, &log)).transpose()?;
            let (predictions, report) = classify(*kind, cfg, &log, &vectors, truth.as_ref())?;
            sink.primary(
                "predictions.csv",
                &bytes(|w| write_predictions(log.vocab(), &predictions, w))?,
            )?;
            if let Some(report) = report {
                log::info!("out-of-fold F1 {:.4}", report.report.f1);
                sink.secondary("cv_report.json", &json(&report)?)?;
            }
        }
        Command::Evaluate {
            log,
            predictions,
            labels,
        } => {
            let log = read_log(log, cfg)?;
            let truth = read_labels(labels, &log)?;
            let predictions = read_predictions(log.vocab(), open(predictions)?)
                .with_context(|| format!("reading {}", predictions.display()))?;
            let report = score(&predictions, &truth)?;
            log::info!(
                "precision {:.4} recall {:.4} F1 {:.4}",
                report.precision,
                report.recall,
                report.f1
            );
            sink.primary("report.json", &json(&report)?)?;
        }
        Command::Timeline {
            log,
            labels,
            classifier,
            ..
        } => {
            let log = read_log(log, cfg)?;
            let truth = read_labels(labels, &log)?;
            let features = cfg.features(cfg.classify.features);
            let report = timeliness(
                &log,
                None,
                &truth,
                &features,
                &cfg.classifier(*classifier),
                &cfg.timeline,
            )?;
            log::info!("{} cohort PSMs, {} never flagged", report.cohort_psm, report.remaining);
            sink.primary("timeliness.csv", &bytes(|w| report.write_csv(w))?)?;
            sink.secondary("timeliness.json", &json(&report)?)?;
        }
        Command::Synth { format, .. } => {
            let data = generate(&cfg.synth)?;
            log::info!(
                "{} actions by {} users ({} PSM), viral threshold {}",
                data.log.len(),
                data.log.n_users(),
                data.truth.iter().filter(|(_, l)| l.is_psm()).count(),
                data.theta
            );
            let (name, log_bytes) = match format {
                LogFormat::Csv => ("log.csv", bytes(|w| data.log.write_csv(w))?),
                LogFormat::Jsonl => ("log.jsonl", bytes(|w| data.log.write_jsonl(w))?),
            };
            sink.primary(name, &log_bytes)?;
            sink.secondary("labels.csv", &bytes(|w| data.truth.write_csv(data.log.vocab(), w))?)?;
            // A config for the downstream commands, with the threshold that
            // makes the planted share of cascades viral.
            let mut downstream = cfg.clone();
            downstream.cascade = data.cascade_params();
            sink.secondary("pipeline.toml", downstream.to_toml().as_bytes())?;
        }
        Command::Ttest { log, vectors, .. } => {
            let log = read_log(log, cfg)?;
            let vectors = read_vectors(vectors, &log)?;
            let partition = louvain(&CoPostGraph::build(&log), cfg.louvain);
            let features: Vec<[f64; 4]> = partition
                .vertices
                .iter()
                .map(|&u| vectors[u as usize].imputed())
                .collect();
            let result = cohesion_test(&partition, &features, cfg.ttest.seed, cfg.ttest.alpha)?;
            log::info!(
                "t = {:.3}, p = {:.3e}: H0 {}",
                result.t_statistic,
                result.p_value,
                if result.rejected { "rejected" } else { "not rejected" }
            );
            sink.primary("ttest.json", &json(&result)?)?;
        }
    }
    sink.finish(command.name(), cfg, seeds(cfg))
}

fn seeds(cfg: &PipelineConfig) -> BTreeMap<&'static str, u64> {
    BTreeMap::from([
        ("synth", cfg.synth.seed),
        ("louvain", cfg.louvain.seed),
        ("folds", cfg.evaluate.seed),
        ("timeline", cfg.timeline.seed),
        ("ttest", cfg.ttest.seed),
    ])
}

fn classify(
    kind: ClassifierKind,
    cfg: &PipelineConfig,
    log: &ActionLog,
    vectors: &[CausalityVector],
    truth: Option<&GroundTruth>,
) -> Result<(
    Vec<psmscan::classify::Prediction>,
    Option<psmscan::eval::CrossValidationReport>,
)> {
    let spec = cfg.classifier(kind);
    let graph = matches!(kind, ClassifierKind::C2dc).then(|| CoPostGraph::build(log));
    let classifier = spec.build(graph.as_ref())?;
    if let Classifier::C2dc { model, .. } = &classifier {
        log::info!("{} communities", model.partition().k);
    }
    let active: Vec<&CausalityVector> = vectors.iter().filter(|v| log.user_action_count(v.user) > 0).collect();

    let Some(truth) = truth else {
        if kind != ClassifierKind::Threshold {
            bail!("{} needs --labels to train on", spec.name());
        }
        let rows: Vec<FeatureRow> = active.iter().map(|&v| FeatureRow::from(v)).collect();
        let predictions = classifier
            .predict(&rows, &[])
            .into_iter()
            .collect::<psmscan::Result<_>>()?;
        return Ok((predictions, None));
    };

    let samples = labeled_users(log, vectors, truth);
    let report = cross_validate(
        &samples,
        &classifier,
        &spec.name(),
        cfg.evaluate.folds,
        cfg.evaluate.seed,
    )?;
    let unlabeled: Vec<FeatureRow> = active
        .iter()
        .filter(|v| truth.get(v.user).is_none())
        .map(|&v| FeatureRow::from(v))
        .collect();
    let mut predictions = report.predictions.clone();
    if !unlabeled.is_empty() {
        log::info!(
            "scoring {} unlabeled users against all {} labeled ones",
            unlabeled.len(),
            samples.len()
        );
        for p in classifier.predict(&unlabeled, &samples) {
            predictions.push(p?);
        }
        predictions.sort_by_key(|p| p.user);
    }
    Ok((predictions, Some(report)))
}

#[derive(Serialize)]
struct CommunitySummary<'a> {
    k: usize,
    modularity: f64,
    level_modularity: &'a [f64],
    sizes: Vec<usize>,
}

impl<'a> CommunitySummary<'a> {
    fn of(p: &'a CommunityPartition) -> Self {
        CommunitySummary {
            k: p.k,
            modularity: p.modularity,
            level_modularity: &p.level_modularity,
            sizes: p.sizes(),
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn read_log(args: &LogArgs, cfg: &PipelineConfig) -> Result<ActionLog> {
    let format = args
        .format
        .unwrap_or_else(|| match args.input.extension().and_then(|e| e.to_str()) {
            Some(ext) => ext.parse().unwrap_or(LogFormat::Csv),
            None => LogFormat::Csv,
        });
    let log = parse_action_log(open(&args.input)?, format, cfg.input.dedup)
        .with_context(|| format!("reading {}", args.input.display()))?;
    log::info!(
        "{}: {} actions, {} users",
        args.input.display(),
        log.len(),
        log.n_users()
    );
    Ok(log)
}

fn read_vectors(path: &Path, log: &ActionLog) -> Result<Vec<CausalityVector>> {
    read_vectors_csv(log.vocab(), open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn read_labels(path: &Path, log: &ActionLog) -> Result<GroundTruth> {
    GroundTruth::read_csv(log.vocab(), open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn time_arg(raw: &Option<String>, what: &str) -> Result<Option<Timestamp>> {
    raw.as_deref()
        .map(|s| parse_time(s).with_context(|| format!("bad {what} time `{s}`")))
        .transpose()
}

/// `None` (the whole log) unless a bound was given.
fn explicit_interval(args: &IntervalArgs, log: &ActionLog) -> Result<Option<(Timestamp, Timestamp)>> {
    if args.start.is_none() && args.end.is_none() {
        return Ok(None);
    }
    full_interval(args, log).map(Some)
}

fn full_interval(args: &IntervalArgs, log: &ActionLog) -> Result<(Timestamp, Timestamp)> {
    let span = log.time_span().context("the log has no actions")?;
    let start = time_arg(&args.start, "start")?.unwrap_or(span.0);
    let end = time_arg(&args.end, "end")?.unwrap_or(span.1);
    if start > end {
        bail!("interval start {start} is after its end {end}");
    }
    Ok((start, end))
}

fn bytes(write: impl FnOnce(&mut Vec<u8>) -> psmscan::Result<()>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write(&mut out)?;
    Ok(out)
}

fn json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}
