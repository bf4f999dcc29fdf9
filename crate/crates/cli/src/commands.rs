use std::path::{Path, PathBuf};
use std::sync::Arc;

use dcis::evals::{
    passkey_suite, perplexity, ppl_curve, EvalEntry, EvalReport, ModelDecoder, PasskeyOptions,
    ReportFormat,
};
use dcis::model::{finetune_with_factors, train as train_model, StepLoss, TrainingMeta};
use dcis::search::{
    evo_budget, search_budget, sweep as run_sweep, SweepParam, SweepRow, ToyPerplexity,
};
use dcis::{
    dcis_search, write_atomic, Checkpoint, FactorsDocument, ModelError, ScalingFactors,
    SearchConfig, SearchError, ToyModel,
};
use serde::Serialize;

use crate::config::{Metric, RunConfig, Scheme};
use crate::exit::{self, fail, WithCode};
use crate::{
    BudgetArgs, EvalArgs, FinetuneArgs, SearchArgs, SearchFlags, SweepArgs, SweepParamArg,
    TrainArgs, THREADS_ENV,
};

pub fn init_threads() -> exit::Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = match raw.trim().parse() {
        Ok(n) if n > 0 => n,
        _ => {
            return fail(
                exit::CONFIG,
                format!("{THREADS_ENV} must be a positive integer, got {raw:?}"),
            )
        }
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .code(exit::CONFIG)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_file(path: &Path, bytes: &[u8], code: i32) -> exit::Result<()> {
    write_atomic(path, bytes)
        .map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))
        .code(code)
}

fn training_code(e: &ModelError) -> i32 {
    match e {
        ModelError::Diverged { .. } => exit::DIVERGED,
        _ => exit::CONFIG,
    }
}

fn write_log(path: &Path, log: &[StepLoss]) -> exit::Result<()> {
    let mut text = String::new();
    for record in log {
        text.push_str(&serde_json::to_string(record).expect("step serializes"));
        text.push('\n');
    }
    write_file(path, text.as_bytes(), exit::CONFIG)
}

fn load_checkpoint(path: &Path, cfg: &RunConfig) -> exit::Result<Checkpoint> {
    let ck = Checkpoint::load(path).code(exit::CONFIG)?;
    if ck.model.config() != &cfg.model {
        return fail(
            exit::CONFIG,
            format!(
                "checkpoint {} was built with a different model config than the one given",
                path.display()
            ),
        );
    }
    Ok(ck)
}

/// Held-out windows of `len` tokens.
fn samples(
    cfg: &RunConfig,
    count: usize,
    len: usize,
    seed: u64,
    code: i32,
) -> exit::Result<Vec<Vec<u32>>> {
    // shortages take the caller's code; load errors stay config errors
    cfg.heldout(count, len, seed).map_err(|f| match f.code {
        exit::EVAL => exit::Failure { code, ..f },
        _ => f,
    })
}

pub fn train(a: TrainArgs) -> exit::Result<()> {
    let mut cfg = RunConfig::load(a.config.config.as_deref())?;
    let t = &mut cfg.training;
    t.steps = a.steps.unwrap_or(t.steps);
    t.learning_rate = a.lr.unwrap_or(t.learning_rate);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.seed = a.seed.unwrap_or(t.seed);
    let cfg = cfg.resolve()?;

    let corpus = cfg.training_corpus(cfg.train_options().context_len)?;
    let mut model = ToyModel::<f32>::init(cfg.model.clone()).code(exit::CONFIG)?;
    let opts = cfg.train_options();
    let every = (opts.steps / 20).max(1);
    let log = train_model(&mut model, &corpus, &opts, |s| {
        if (s.step + 1) % every == 0 {
            eprintln!("step {:>6}  loss {:.4}", s.step + 1, s.loss);
        }
    })
    .map_err(|e| (training_code(&e), e))
    .map_err(|(code, e)| exit::Failure {
        code,
        error: e.into(),
    })?;

    let ctx = opts.context_len;
    let heldout = samples(
        &cfg,
        cfg.eval.samples,
        ctx,
        cfg.eval.sample_seed,
        exit::CONFIG,
    )?;
    let ppl = perplexity(
        &model,
        &ScalingFactors::ones(cfg.model.num_pairs()),
        &heldout,
        ctx,
    )
    .code(exit::EVAL)?;

    let meta = TrainingMeta {
        steps: log.len(),
        final_loss: log.last().map(|s| s.loss),
        corpus_fingerprint: corpus.fingerprint(),
        seed: cfg.training.seed,
        factors_provenance: None,
        config: Some(cfg.echo()),
    };
    Checkpoint::new(model, meta)
        .save(&a.out)
        .code(exit::CONFIG)?;
    write_log(
        &a.log.unwrap_or_else(|| sibling(&a.out, ".log.jsonl")),
        &log,
    )?;
    println!("steps {}", log.len());
    if let Some(last) = log.last() {
        println!("final_loss {:.6}", last.loss);
    }
    println!("heldout_ppl@{ctx} {ppl:.6}");
    Ok(())
}

pub fn finetune(a: FinetuneArgs) -> exit::Result<()> {
    let mut cfg = RunConfig::load(a.config.config.as_deref())?;
    let t = &mut cfg.training;
    t.finetune_steps = a.steps.unwrap_or(t.finetune_steps);
    t.finetune_learning_rate = a.lr.unwrap_or(t.finetune_learning_rate);
    t.seed = a.seed.unwrap_or(t.seed);
    if a.context_len.is_some() {
        t.context_len = a.context_len;
    }
    let cfg = cfg.resolve()?;

    let mut ck = load_checkpoint(&a.checkpoint, &cfg)?;
    let doc = FactorsDocument::load(&a.factors).code(exit::CONFIG)?;
    let factors = doc.factors().code(exit::CONFIG)?;
    let mut opts = cfg.train_options();
    let corpus = cfg.training_corpus(opts.context_len)?;
    opts.steps = cfg.training.finetune_steps;
    opts.learning_rate = cfg.training.finetune_learning_rate;
    let log =
        finetune_with_factors(&mut ck.model, &factors, &corpus, &opts, |_| {}).map_err(|e| {
            exit::Failure {
                code: training_code(&e),
                error: e.into(),
            }
        })?;

    ck.meta.steps += log.len();
    ck.meta.final_loss = log.last().map(|s| s.loss).or(ck.meta.final_loss);
    ck.meta.factors_provenance = Some(doc.provenance.clone());
    ck.meta.config = Some(cfg.echo());
    ck.save(&a.out).code(exit::CONFIG)?;
    write_log(
        &a.log.unwrap_or_else(|| sibling(&a.out, ".log.jsonl")),
        &log,
    )?;
    println!("steps {}", log.len());
    if let Some(last) = log.last() {
        println!("final_loss {:.6}", last.loss);
    }
    Ok(())
}

fn apply_search_flags(cfg: &mut RunConfig, f: &SearchFlags) {
    let s = &mut cfg.search;
    if let Some(r) = &f.range {
        s.range = (r[0], r[1]);
    }
    s.increments = f.increments.unwrap_or(s.increments);
    s.threshold = f.threshold.unwrap_or(s.threshold);
    s.init = f.init.unwrap_or(s.init);
    s.samples = f.samples.unwrap_or(s.samples);
    if f.target_length.is_some() {
        s.target_length = f.target_length;
    }
    if f.scale.is_some() {
        s.scale = f.scale;
    }
}

/// Objective and base search config for a checkpoint.
fn search_setup(cfg: &RunConfig, checkpoint: &Path) -> exit::Result<(ToyPerplexity, SearchConfig)> {
    let ck = load_checkpoint(checkpoint, cfg)?;
    let target = cfg.target_length();
    let windows = samples(
        cfg,
        cfg.search.samples,
        target,
        cfg.search.sample_seed,
        exit::CONFIG,
    )?;
    let objective = ToyPerplexity::new(Arc::new(ck.model), windows, target);
    let mut sc = SearchConfig::new(cfg.scheme_factors(cfg.search.init)?, target);
    sc.initial_range = cfg.search.range;
    sc.increments_per_segment = cfg.search.increments;
    sc.discard_threshold = cfg.search.threshold;
    sc.objective_id = "toy_ppl".into();
    sc.random_seed = cfg.search.sample_seed;
    Ok((objective, sc))
}

fn search_code(e: &SearchError) -> i32 {
    match e {
        SearchError::Objective { .. } | SearchError::Aborted { .. } => exit::SEARCH,
        _ => exit::CONFIG,
    }
}

pub fn search(a: SearchArgs) -> exit::Result<()> {
    let mut cfg = RunConfig::load(a.config.config.as_deref())?;
    apply_search_flags(&mut cfg, &a.flags);
    let cfg = cfg.resolve()?;
    let (objective, sc) = search_setup(&cfg, &a.checkpoint)?;
    let trace_path = a.trace.unwrap_or_else(|| sibling(&a.out, ".trace.jsonl"));

    let (factors, trace) = match dcis_search(&objective, &sc) {
        Ok(found) => found,
        Err(e) => {
            if let SearchError::Aborted { trace, .. } = &e {
                write_file(&trace_path, trace.to_jsonl().as_bytes(), exit::SEARCH)?;
            }
            return Err(exit::Failure {
                code: search_code(&e),
                error: e.into(),
            });
        }
    };
    let mut doc = FactorsDocument::new(&factors, "dcis");
    doc.config = Some(cfg.echo());
    doc.save(&a.out).code(exit::SEARCH)?;
    write_file(&trace_path, trace.to_jsonl().as_bytes(), exit::SEARCH)?;
    match trace.final_objective() {
        Some(v) => println!("final_objective {v:.6}"),
        None => println!("final_objective none (every evaluation discarded)"),
    }
    println!("total_evaluations {}", trace.total_evaluations);
    Ok(())
}

pub fn eval(a: EvalArgs) -> exit::Result<()> {
    let mut cfg = RunConfig::load(a.config.config.as_deref())?;
    let e = &mut cfg.eval;
    e.metric = a.metric.unwrap_or(e.metric);
    if let Some(l) = a.lengths {
        e.lengths = l;
    }
    e.trials = a.trials.unwrap_or(e.trials);
    e.samples = a.samples.unwrap_or(e.samples);
    e.partial_credit |= a.partial_credit;
    if a.scale.is_some() {
        cfg.search.scale = a.scale;
    }
    let cfg = cfg.resolve()?;
    let ev = &cfg.eval;

    let ck = load_checkpoint(&a.checkpoint, &cfg)?;
    let (factors, provenance) = match &a.factors {
        Some(path) => {
            let doc = FactorsDocument::load(path).code(exit::CONFIG)?;
            (doc.factors().code(exit::CONFIG)?, doc.provenance)
        }
        None => {
            let scheme = a.scheme.unwrap_or(Scheme::Ones);
            (cfg.scheme_factors(scheme)?, scheme.name().to_string())
        }
    };
    if factors.len() != cfg.model.num_pairs() {
        return fail(
            exit::CONFIG,
            format!(
                "factors have {} entries, the model needs {}",
                factors.len(),
                cfg.model.num_pairs()
            ),
        );
    }

    let model = &ck.model;
    let mut lengths = ev.lengths.clone();
    let entries = match ev.metric {
        Metric::Ppl | Metric::Curve => {
            if ev.metric == Metric::Ppl {
                lengths.sort_unstable();
            }
            let longest = lengths.iter().copied().max().unwrap_or(0);
            let windows = samples(&cfg, ev.samples, longest, ev.sample_seed, exit::EVAL)?;
            ppl_curve(model, &factors, &windows, &lengths).code(exit::EVAL)?
        }
        Metric::Passkey => {
            let grammar = cfg.grammar()?;
            let mut out = Vec::with_capacity(lengths.len());
            for &length in &lengths {
                let decoder = ModelDecoder::new(model, &factors, length).code(exit::EVAL)?;
                let opts = PasskeyOptions {
                    context_length: length,
                    n_trials: ev.trials,
                    key_length: ev.key_length,
                    seed: ev.seed,
                    partial_credit: ev.partial_credit,
                };
                let r = passkey_suite(&decoder, &grammar, &opts).code(exit::EVAL)?;
                out.push(EvalEntry::Recall {
                    length,
                    recall_rate: r.recall_rate,
                    n_trials: r.n_trials,
                });
            }
            out
        }
    };
    for entry in &entries {
        match entry {
            EvalEntry::Ppl { length, ppl } => println!("ppl@{length} {ppl:.6}"),
            EvalEntry::Recall {
                length,
                recall_rate,
                n_trials,
            } => println!("recall@{length} {recall_rate:.4} ({n_trials} trials)"),
        }
    }
    let seed = match ev.metric {
        Metric::Passkey => ev.seed,
        _ => ev.sample_seed,
    };
    let mut report = EvalReport::from_curve(entries, model, provenance, seed);
    report.config = Some(cfg.echo());
    report
        .emit(ReportFormat::from_path(&a.out), &a.out)
        .code(exit::EVAL)
}

pub fn budget(a: BudgetArgs) -> exit::Result<()> {
    let dcis = search_budget(a.head_dim, a.increments);
    println!(
        "head_dim {}  increments {}  dcis_evaluations {dcis}",
        a.head_dim, a.increments
    );
    if let Some(evo) = a.evo {
        let (t, p) = (evo[0], evo[1]);
        let e = evo_budget(t, p);
        println!("evo_iterations {t}  population {p}  evo_evaluations {e}");
        if dcis > 0 {
            println!("ratio {:.2}", e as f64 / dcis as f64);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepReport<'a> {
    param: SweepParam,
    rows: &'a [SweepRow],
    config: serde_json::Value,
}

fn sweep_csv(param: SweepParam, rows: &[SweepRow]) -> String {
    let name = match param {
        SweepParam::Range => "range",
        SweepParam::Increments => "C",
    };
    let mut out = String::from(
        "param,value,range_low,range_high,increments,final_objective,total_evaluations\n",
    );
    for r in rows {
        let obj = r.final_objective.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{name},{},{},{},{},{obj},{}\n",
            r.value, r.range.0, r.range.1, r.increments, r.total_evaluations
        ));
    }
    out
}

pub fn sweep(a: SweepArgs) -> exit::Result<()> {
    if a.values.is_empty() {
        return fail(exit::CONFIG, "--values needs at least one value");
    }
    let param = match a.param {
        SweepParamArg::Range => SweepParam::Range,
        SweepParamArg::C => SweepParam::Increments,
    };
    for &v in &a.values {
        let ok = match param {
            SweepParam::Range => v > 0.0 && v.is_finite(),
            SweepParam::Increments => v >= 3.0 && v.fract() == 0.0,
        };
        if !ok {
            return fail(exit::CONFIG, format!("invalid sweep value {v}"));
        }
    }
    let mut cfg = RunConfig::load(a.config.config.as_deref())?;
    apply_search_flags(&mut cfg, &a.flags);
    let cfg = cfg.resolve()?;
    let (objective, sc) = search_setup(&cfg, &a.checkpoint)?;
    let rows = run_sweep(&objective, &sc, param, &a.values).map_err(|e| exit::Failure {
        code: search_code(&e),
        error: e.into(),
    })?;
    for r in &rows {
        let obj = r
            .final_objective
            .map_or_else(|| "none".to_string(), |v| format!("{v:.6}"));
        println!(
            "value {}  range [{}, {}]  C {}  final_objective {obj}  evaluations {}",
            r.value, r.range.0, r.range.1, r.increments, r.total_evaluations
        );
    }
    let text = match ReportFormat::from_path(&a.out) {
        ReportFormat::Csv => sweep_csv(param, &rows),
        ReportFormat::Json => {
            let report = SweepReport {
                param,
                rows: &rows,
                config: cfg.echo(),
            };
            serde_json::to_string_pretty(&report).expect("sweep serializes") + "\n"
        }
    };
    write_file(&a.out, text.as_bytes(), exit::SEARCH)
}
