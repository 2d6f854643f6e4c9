use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use super::config::{hex, ExperimentConfig};
use super::evaluate::{cases_hash, evaluate_sampler, test_cases};
use super::results::{
    emit_plotdata, plot_rows, read_jsonl, write_jsonl, write_summary_csv, PlotRow, ResultLine, RunRecord,
};
use crate::baselines::{build_baseline, map_optimize_with, xavier_theta, PosteriorSampler, PriorSampler};
use crate::datagen::{embed_variable_dim, read_csv_table, CsvTarget, SourceConfig};
use crate::diffcore::{Checkpoint, Tensor};
use crate::error::{Error, Result};
use crate::metrics::{default_metric, MetricReport};
use crate::models::{Family, ModelSpec};
use crate::objectives::{train_range, PosteriorEstimator, TraceRecord};
use crate::rng::StreamKey;

/// SHA-256 over `"blob <len>\0" ++ bytes`, the git object layout.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

pub struct TrainOutcome {
    pub estimator: PosteriorEstimator,
    pub checkpoint: PathBuf,
    pub checkpoint_hash: String,
    pub trace: Vec<TraceRecord>,
    pub trace_path: PathBuf,
}

fn save_checkpoint(est: &PosteriorEstimator, cfg: &ExperimentConfig, path: &Path) -> Result<String> {
    let bytes = est.checkpoint(&cfg.hash()).to_bytes();
    std::fs::write(path, &bytes)?;
    Ok(content_hash(&bytes))
}

/// Trains from the `init` stream of the seed, writing `trace.jsonl`,
/// periodic `checkpoint_<iter>.ckpt` files, the final `checkpoint.ckpt`,
/// the resolved `config.toml` and `run.json` under `out`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml_string())?;
    let mut est = PosteriorEstimator::new(&cfg.model, &cfg.estimator_config(), cfg.seed)?;
    let tcfg = cfg.train_config();
    let trace_path = out.join("trace.jsonl");
    let mut sink = std::io::BufWriter::new(std::fs::File::create(&trace_path)?);
    let chunk = if cfg.checkpoint_every == 0 { tcfg.iterations.max(1) } else { cfg.checkpoint_every };
    let mut trace = Vec::with_capacity(tcfg.iterations);
    let mut begin = 0;
    while begin < tcfg.iterations {
        let end = (begin + chunk).min(tcfg.iterations);
        let part = train_range(&mut est, &cfg.generator, &tcfg, begin..end, Some(&mut sink));
        sink.flush()?;
        trace.extend(part?);
        if cfg.checkpoint_every > 0 {
            save_checkpoint(&est, cfg, &out.join(format!("checkpoint_{end:08}.ckpt")))?;
        }
        begin = end;
    }
    let checkpoint = out.join("checkpoint.ckpt");
    let checkpoint_hash = save_checkpoint(&est, cfg, &checkpoint)?;
    let record = RunRecord {
        command: "train".into(),
        config_hash: cfg.hash(),
        checkpoint_hash: Some(checkpoint_hash.clone()),
        results: Vec::new(),
        skipped: Vec::new(),
        wall_clock_s: start.elapsed().as_secs_f64(),
        trace_path: Some(trace_path.display().to_string()),
    };
    write_run_record(out, &record)?;
    Ok(TrainOutcome { estimator: est, checkpoint, checkpoint_hash, trace, trace_path })
}

/// Rebuilds the estimator described by `cfg` and loads `path` into it.
pub fn load_estimator(cfg: &ExperimentConfig, path: &Path) -> Result<(PosteriorEstimator, String)> {
    let bytes = std::fs::read(path)?;
    let ck = Checkpoint::from_bytes(&bytes)?;
    let mut est = PosteriorEstimator::new(&cfg.model, &cfg.estimator_config(), cfg.seed)?;
    est.restore(&ck)?;
    Ok((est, content_hash(&bytes)))
}

fn write_run_record(out: &Path, record: &RunRecord) -> Result<()> {
    let text = serde_json::to_string_pretty(record).map_err(|e| Error::Io(e.into()))?;
    std::fs::write(out.join("run.json"), text)?;
    Ok(())
}

/// Writes `results.jsonl`, `summary.csv` and `run.json`.
fn finish(out: &Path, command: &str, cfg: &ExperimentConfig, outcome: &EvalOutcome, started: Instant) -> Result<()> {
    std::fs::create_dir_all(out)?;
    write_jsonl(&out.join("results.jsonl"), &outcome.lines)?;
    write_summary_csv(&out.join("summary.csv"), &outcome.lines)?;
    let record = RunRecord {
        command: command.into(),
        config_hash: cfg.hash(),
        checkpoint_hash: outcome.lines.iter().find_map(|l| l.checkpoint_hash.clone()),
        results: outcome.lines.clone(),
        skipped: outcome.skipped.clone(),
        wall_clock_s: started.elapsed().as_secs_f64(),
        trace_path: None,
    };
    write_run_record(out, &record)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub lines: Vec<ResultLine>,
    pub skipped: Vec<String>,
    pub test_hash: String,
}

impl EvalOutcome {
    pub fn reports(&self) -> Vec<&MetricReport> {
        self.lines.iter().map(|l| &l.report).collect()
    }

    pub fn report(&self, metric: &str) -> Option<&MetricReport> {
        self.lines.iter().map(|l| &l.report).find(|r| r.metric == metric)
    }
}

/// Provenance shared by the result lines of one evaluation.
struct Provenance<'a> {
    command: &'a str,
    method: &'a str,
    train_source: Option<String>,
    checkpoint_hash: Option<String>,
}

fn evaluate_on(
    sampler: &dyn PosteriorSampler,
    cfg: &ExperimentConfig,
    source: &SourceConfig,
    prov: &Provenance,
) -> Result<EvalOutcome> {
    let cases = test_cases(&cfg.model, &cfg.generator, source, cfg.eval.t, cfg.seed)?;
    let test_hash = cases_hash(&cases);
    let (reports, skipped) = evaluate_sampler(sampler, cfg, &cases)?;
    let lines = reports
        .into_iter()
        .map(|report| ResultLine {
            experiment: cfg.name.clone(),
            command: prov.command.into(),
            method: prov.method.into(),
            train_source: prov.train_source.clone(),
            dataset: source.label(),
            fold: None,
            config_hash: cfg.hash(),
            checkpoint_hash: prov.checkpoint_hash.clone(),
            test_hash: test_hash.clone(),
            report,
        })
        .collect();
    Ok(EvalOutcome { lines, skipped, test_hash })
}

/// Evaluates a trained estimator on the fixed test stream of its own generator.
pub fn eval_estimator(cfg: &ExperimentConfig, est: &PosteriorEstimator, checkpoint_hash: Option<String>) -> Result<EvalOutcome> {
    let prov = Provenance {
        command: "eval",
        method: "amortized",
        train_source: Some(cfg.generator.source.label()),
        checkpoint_hash,
    };
    evaluate_on(est, cfg, &cfg.generator.source, &prov)
}

pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<EvalOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let (est, hash) = load_estimator(cfg, checkpoint)?;
    let outcome = eval_estimator(cfg, &est, Some(hash))?;
    finish(out, "eval", cfg, &outcome, started)?;
    Ok(outcome)
}

/// Baselines see the same test stream as `cmd_eval`. A MAP baseline
/// without a configured rate tunes it on the test contexts.
pub fn run_baseline(kind: &str, cfg: &ExperimentConfig) -> Result<EvalOutcome> {
    cfg.validate()?;
    let tuning: Vec<_> = if kind == "map" && cfg.baseline.map.lr.is_none() {
        test_cases(&cfg.model, &cfg.generator, &cfg.generator.source, cfg.eval.t, cfg.seed)?
            .into_iter()
            .map(|c| c.context)
            .collect()
    } else {
        Vec::new()
    };
    let sampler = build_baseline(kind, &cfg.model, &cfg.baseline, &tuning, &StreamKey::root(cfg.seed).tag("baseline"))?;
    let prov = Provenance { command: "baseline", method: kind, train_source: None, checkpoint_hash: None };
    evaluate_on(sampler.as_ref(), cfg, &cfg.generator.source, &prov)
}

pub fn cmd_baseline(kind: &str, cfg: &ExperimentConfig, out: &Path) -> Result<EvalOutcome> {
    let started = Instant::now();
    let outcome = run_baseline(kind, cfg)?;
    finish(out, "baseline", cfg, &outcome, started)?;
    Ok(outcome)
}

/// Estimators trained on one source and evaluated on several.
#[derive(Debug, Clone, PartialEq)]
pub struct MisspecOutcome {
    /// Train-variant labels.
    pub rows: Vec<String>,
    /// Evaluation-source labels.
    pub cols: Vec<String>,
    /// `cells[row][col]`, reports in `eval.metrics` order.
    pub cells: Vec<Vec<Vec<MetricReport>>>,
    pub lines: Vec<ResultLine>,
}

pub const SWITCHED_ROW: &str = "+ switched data";

fn sanitize(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect()
}

/// Row 0 trains `cfg.train` on `cfg.misspec.train_source`. When some
/// evaluation source differs from the training source, a second row
/// trains reverse KL directly on each evaluation source.
pub fn cmd_misspec(cfg: &ExperimentConfig, out: &Path) -> Result<MisspecOutcome> {
    let started = Instant::now();
    let ms = &cfg.misspec;
    let eval_sources = if ms.eval_sources.is_empty() { vec![ms.train_source.clone()] } else { ms.eval_sources.clone() };
    let variant = |source: &SourceConfig, objective: &str| -> Result<ExperimentConfig> {
        let mut c = cfg.clone();
        c.generator.source = source.clone();
        c.train.objective = objective.into();
        c.validate()?;
        Ok(c)
    };
    let main_cfg = variant(&ms.train_source, &cfg.train.objective)?;
    for s in &eval_sources {
        variant(s, "reverse_kl")?;
    }
    let main_label = format!("{}:{}", cfg.train.objective, ms.train_source.label());
    let trained = cmd_train(&main_cfg, &out.join(format!("train_{}", sanitize(&main_label))))?;
    let mut rows = vec![main_label];
    let mut cells = vec![Vec::new()];
    let mut lines = Vec::new();
    let mut eval_row = |est: &PosteriorEstimator, ckpt: &str, train_label: &str, source: &SourceConfig, command: &str| {
        let prov = Provenance {
            command,
            method: "amortized",
            train_source: Some(train_label.to_string()),
            checkpoint_hash: Some(ckpt.to_string()),
        };
        let o = evaluate_on(est, cfg, source, &prov)?;
        lines.extend(o.lines.iter().cloned());
        Ok::<_, Error>(o.lines.into_iter().map(|l| l.report).collect::<Vec<_>>())
    };
    for s in &eval_sources {
        cells[0].push(eval_row(&trained.estimator, &trained.checkpoint_hash, &rows[0], s, "misspec")?);
    }
    if eval_sources.iter().any(|s| *s != ms.train_source) {
        rows.push(SWITCHED_ROW.into());
        let mut row = Vec::new();
        for s in &eval_sources {
            let reports = if *s == ms.train_source && cfg.train.objective == "reverse_kl" {
                eval_row(&trained.estimator, &trained.checkpoint_hash, SWITCHED_ROW, s, "misspec")?
            } else {
                let c = variant(s, "reverse_kl")?;
                let t = cmd_train(&c, &out.join(format!("train_switched_{}", sanitize(&s.label()))))?;
                eval_row(&t.estimator, &t.checkpoint_hash, SWITCHED_ROW, s, "misspec")?
            };
            row.push(reports);
        }
        cells.push(row);
    }
    let outcome = EvalOutcome { lines: lines.clone(), skipped: Vec::new(), test_hash: String::new() };
    finish(out, "misspec", cfg, &outcome, started)?;
    Ok(MisspecOutcome { rows, cols: eval_sources.iter().map(|s| s.label()).collect(), cells, lines })
}

/// Finetuning runs of one initialization scheme on one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmResult {
    pub method: String,
    /// Train-fold log-joint per init, at iterations `0..=finetune_iters`.
    pub objective: Vec<Vec<f64>>,
    /// `(iter, test metric averaged over inits)`.
    pub test_metric: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub dataset: String,
    pub fold: usize,
    /// `(method, test metric averaged over draws)`.
    pub zero_shot: Vec<(String, f64)>,
    pub arms: Vec<ArmResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularOutcome {
    pub folds: Vec<FoldResult>,
    /// `(path, reason)` for every CSV that was not usable.
    pub rejected: Vec<(String, String)>,
    pub lines: Vec<ResultLine>,
}

fn csv_target(spec: &ModelSpec) -> Result<CsvTarget> {
    match spec.family {
        Family::Lr | Family::Nlr => Ok(CsvTarget::Regression),
        Family::Lc | Family::Nlc if spec.n_classes == 2 => Ok(CsvTarget::BinaryClassification),
        other => Err(Error::InvalidSpec(format!("tabular transfer needs a regression or binary model, got `{}`", other.name()))),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Zero-shot and finetuned evaluation of `est` on k-fold splits of each CSV.
pub fn run_tabular(cfg: &ExperimentConfig, est: &PosteriorEstimator, csv_paths: &[PathBuf]) -> Result<TabularOutcome> {
    cfg.validate()?;
    let spec = &cfg.model;
    let kind = csv_target(spec)?;
    let tab = &cfg.tabular;
    let metric = default_metric(spec.family);
    let prior = PriorSampler { spec: spec.clone() };
    let root = StreamKey::root(cfg.seed).tag("tabular");
    let mut folds = Vec::new();
    let mut rejected = Vec::new();
    for (f, path) in csv_paths.iter().enumerate() {
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| format!("csv{f}"));
        let table = match read_csv_table(path, kind) {
            Ok(t) if t.features() > spec.d_max => {
                rejected.push((path.display().to_string(), format!("{} features exceed the model's {}", t.features(), spec.d_max)));
                continue;
            }
            Ok(t) => t,
            Err(e) => {
                rejected.push((path.display().to_string(), e.to_string()));
                continue;
            }
        };
        for (k, (train, test)) in table.kfold(tab.folds, cfg.seed)?.into_iter().enumerate() {
            let train = embed_variable_dim(&train, spec.d_max)?;
            let test = embed_variable_dim(&test, spec.d_max)?;
            let key = root.index(f as u64).index(k as u64);
            let score = |theta: &[f64]| metric.score(spec, &test, theta);
            let starts: [(&str, Tensor); 2] = [
                ("amortized", PosteriorSampler::sample(est, &train, tab.inits, &key.tag("amortized"))?),
                ("prior", prior.sample(&train, tab.inits, &key.tag("prior"))?),
            ];
            let mut zero_shot = Vec::new();
            for (method, draws) in &starts {
                let v: Vec<f64> = (0..draws.rows()).map(|r| score(draws.row(r))).collect::<Result<_>>()?;
                zero_shot.push((method.to_string(), mean(&v)));
            }
            let xavier = {
                let mut t = Tensor::zeros(tab.inits, spec.theta_dim());
                for r in 0..tab.inits {
                    t.row_mut(r).copy_from_slice(&xavier_theta(spec, &mut key.tag("xavier").index(r as u64).rng()));
                }
                t
            };
            let mut arms = Vec::new();
            for (method, inits) in starts.iter().map(|(m, t)| (*m, t)).chain([("xavier", &xavier)]) {
                let mut objective = Vec::with_capacity(tab.inits);
                let checkpoints: Vec<usize> = (0..=tab.finetune_iters)
                    .filter(|i| i % tab.curve_every == 0 || *i == tab.finetune_iters)
                    .collect();
                let mut test_sum = vec![0.0; checkpoints.len()];
                for r in 0..inits.rows() {
                    let mut failure = None;
                    let mut slot = 0;
                    let traj = map_optimize_with(spec, &train, inits.row(r).to_vec(), tab.finetune_lr, tab.finetune_iters, |it, th, _| {
                        if slot < checkpoints.len() && checkpoints[slot] == it {
                            match score(th) {
                                Ok(v) => test_sum[slot] += v,
                                Err(e) => failure = Some(e),
                            }
                            slot += 1;
                        }
                    })?;
                    if let Some(e) = failure {
                        return Err(e);
                    }
                    objective.push(traj.objective);
                }
                let n = inits.rows() as f64;
                let test_metric = checkpoints.iter().zip(&test_sum).map(|(&i, s)| (i, s / n)).collect();
                arms.push(ArmResult { method: method.into(), objective, test_metric });
            }
            folds.push(FoldResult { dataset: name.clone(), fold: k, zero_shot, arms });
        }
    }
    if folds.is_empty() && !csv_paths.is_empty() {
        let reasons: Vec<String> = rejected.iter().map(|(p, r)| format!("{p}: {r}")).collect();
        return Err(Error::InvalidSpec(format!("no usable CSV: {}", reasons.join("; "))));
    }
    let lines = tabular_lines(cfg, metric.name(), &folds);
    Ok(TabularOutcome { folds, rejected, lines })
}

fn tabular_lines(cfg: &ExperimentConfig, metric: &str, folds: &[FoldResult]) -> Vec<ResultLine> {
    let line = |method: &str, dataset: &str, fold: Option<usize>, values: Vec<f64>| ResultLine {
        experiment: cfg.name.clone(),
        command: "tabular".into(),
        method: method.into(),
        train_source: None,
        dataset: dataset.into(),
        fold,
        config_hash: cfg.hash(),
        checkpoint_hash: None,
        test_hash: String::new(),
        report: MetricReport::from_values(metric, values, cfg.tabular.inits),
    };
    let mut out = Vec::new();
    let mut datasets: Vec<&str> = folds.iter().map(|f| f.dataset.as_str()).collect();
    datasets.dedup();
    for ds in datasets {
        let mine: Vec<&FoldResult> = folds.iter().filter(|f| f.dataset == ds).collect();
        let mut methods: Vec<(String, Box<dyn Fn(&FoldResult) -> f64>)> = Vec::new();
        for (m, _) in &mine[0].zero_shot {
            let m2 = m.clone();
            methods.push((format!("{m}_zero_shot"), Box::new(move |f: &FoldResult| f.zero_shot.iter().find(|z| z.0 == m2).unwrap().1)));
        }
        for a in &mine[0].arms {
            let m2 = a.method.clone();
            methods.push((
                format!("{}_finetuned", a.method),
                Box::new(move |f: &FoldResult| f.arms.iter().find(|x| x.method == m2).unwrap().test_metric.last().unwrap().1),
            ));
        }
        for (method, get) in &methods {
            for f in &mine {
                out.push(line(method, ds, Some(f.fold), vec![get(f)]));
            }
            out.push(line(method, ds, None, mine.iter().map(|f| get(f)).collect()));
        }
    }
    out
}

/// Learning curves as plot rows: mean objective at every iteration and the
/// test metric at every recorded iteration, per arm and fold.
pub fn tabular_curves(cfg: &ExperimentConfig, metric: &str, folds: &[FoldResult]) -> Vec<PlotRow> {
    let mut rows = Vec::new();
    for f in folds {
        for a in &f.arms {
            let iters = a.objective.first().map_or(0, Vec::len);
            for i in 0..iters {
                let v: Vec<f64> = a.objective.iter().map(|o| o[i]).collect();
                rows.push(PlotRow {
                    experiment: cfg.name.clone(),
                    method: a.method.clone(),
                    dataset: f.dataset.clone(),
                    fold: Some(f.fold),
                    iter: Some(i),
                    metric: "objective".into(),
                    value: mean(&v),
                });
            }
            for &(i, v) in &a.test_metric {
                rows.push(PlotRow {
                    experiment: cfg.name.clone(),
                    method: a.method.clone(),
                    dataset: f.dataset.clone(),
                    fold: Some(f.fold),
                    iter: Some(i),
                    metric: format!("test_{metric}"),
                    value: v,
                });
            }
        }
    }
    rows
}

/// First iteration whose objective reaches `target`, if any.
pub fn iterations_to_reach(objective: &[f64], target: f64) -> Option<usize> {
    objective.iter().position(|&v| v >= target)
}

pub fn cmd_tabular(cfg: &ExperimentConfig, checkpoint: &Path, csv_paths: &[PathBuf], out: &Path) -> Result<TabularOutcome> {
    let started = Instant::now();
    let (est, hash) = load_estimator(cfg, checkpoint)?;
    let mut outcome = run_tabular(cfg, &est, csv_paths)?;
    for l in &mut outcome.lines {
        l.checkpoint_hash = Some(hash.clone());
    }
    std::fs::create_dir_all(out)?;
    emit_plotdata(&tabular_curves(cfg, default_metric(cfg.model.family).name(), &outcome.folds), &out.join("curves.csv"))?;
    let skipped = outcome.rejected.iter().map(|(p, r)| format!("{p}: {r}")).collect();
    finish(out, "tabular", cfg, &EvalOutcome { lines: outcome.lines.clone(), skipped, test_hash: String::new() }, started)?;
    Ok(outcome)
}

/// Collects result lines from `results.jsonl` files (or directories holding
/// one) into a tidy CSV. Returns the number of rows written.
pub fn cmd_plotdata(inputs: &[PathBuf], output: &Path) -> Result<usize> {
    let mut lines: Vec<ResultLine> = Vec::new();
    for p in inputs {
        let file = if p.is_dir() { p.join("results.jsonl") } else { p.clone() };
        lines.extend(read_jsonl::<ResultLine>(&file)?);
    }
    let rows = plot_rows(&lines);
    emit_plotdata(&rows, output)?;
    Ok(rows.len())
}
