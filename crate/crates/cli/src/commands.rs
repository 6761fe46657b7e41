use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use rlvr_core::client::{ModelClient, ResponseCache};
use rlvr_core::data::{read_items, write_jsonl};
use rlvr_core::eval::{
    build_comparison, emit_report, evaluate, EvalResult, ItemOutcome, PolicyAnswerer,
    ReportDocument, ReportFormat,
};
use rlvr_core::filter::{
    filter_pool, select_training_set, FixtureResponder, PolicyResponder, Responder,
};
use rlvr_core::policy::{Checkpoint, DEFAULT_FEATURE_DIM};
use rlvr_core::train::{TrainSummary, Trainer};
use rlvr_core::{synthetic, Error, GrpoConfig, McqItem, PolicyParams};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::exit::CliError;
use crate::{Context, EvalArgs, FilterArgs, ReportArgs, ResponderKind, SynthArgs, TrainArgs};

impl Context {
    fn event(&self, value: Value) {
        if self.verbose {
            println!("{value}");
        }
    }

    fn run_id(&self) -> &str {
        self.config
            .run_id
            .as_deref()
            .expect("run id resolved at startup")
    }
}

fn dataset_path(flag: Option<PathBuf>, ctx: &Context, flag_name: &str) -> anyhow::Result<PathBuf> {
    flag.or_else(|| ctx.config.paths.dataset.clone())
        .ok_or_else(|| {
            CliError::usage(format!("no dataset: pass {flag_name} or set paths.dataset")).into()
        })
}

fn require_file(path: &Path, what: &str) -> anyhow::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{what} {} does not exist", path.display())).into())
    }
}

fn load_checkpoint(path: &Path) -> anyhow::Result<PolicyParams> {
    if !path.is_file() {
        return Err(CliError::missing_checkpoint(format!(
            "checkpoint {} not found",
            path.display()
        ))
        .into());
    }
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let checkpoint: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
        location: path.display().to_string(),
        detail: e.to_string(),
    })?;
    Ok(checkpoint.into_params()?)
}

fn write_checkpoint(path: &Path, policy: &PolicyParams, seed: u64) -> anyhow::Result<()> {
    let mut text = serde_json::to_string(&Checkpoint::from_params(policy, seed))?;
    text.push('\n');
    write_file(path, &text)
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, &text)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unnamed".into())
}

#[derive(Deserialize)]
struct CannedResponse {
    id: String,
    response: String,
}

fn read_canned(path: &Path) -> anyhow::Result<HashMap<String, String>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = HashMap::new();
    for (n, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let canned: CannedResponse = serde_json::from_str(line).map_err(|e| Error::Parse {
            location: format!("{}:{}", path.display(), n + 1),
            detail: e.to_string(),
        })?;
        out.insert(canned.id, canned.response);
    }
    Ok(out)
}

pub fn filter(ctx: Context, args: FilterArgs) -> anyhow::Result<()> {
    let pool_path = dataset_path(args.pool, &ctx, "--pool")?;
    require_file(&pool_path, "pool")?;
    let responder: Box<dyn Responder> = match args.responder {
        ResponderKind::Internal => match &args.checkpoint {
            Some(path) => Box::new(PolicyResponder::new(
                load_checkpoint(path)?,
                format!("policy:{}", stem(path)),
            )),
            None => Box::new(PolicyResponder::new(
                PolicyParams::zeros(DEFAULT_FEATURE_DIM, 10)?,
                "policy:zero",
            )),
        },
        ResponderKind::Endpoint => {
            let endpoint = ctx.config.endpoint.clone().ok_or_else(|| {
                CliError::usage("--responder endpoint needs an \"endpoint\" section in the config")
            })?;
            let cache = ResponseCache::new(&ctx.config.paths.cache_dir);
            Box::new(
                ModelClient::new(endpoint)
                    .map_err(Error::from)?
                    .with_cache(cache),
            )
        }
        ResponderKind::Fixture => {
            let path = args
                .responses
                .as_deref()
                .ok_or_else(|| CliError::usage("--responder fixture needs --responses FILE"))?;
            require_file(path, "responses file")?;
            Box::new(FixtureResponder::new(
                format!("fixture:{}", stem(path)),
                read_canned(path)?,
            ))
        }
    };
    let max_parallel = args
        .max_parallel
        .or_else(|| ctx.config.endpoint.as_ref().map(|e| e.max_parallel))
        .unwrap_or(4);
    if max_parallel == 0 {
        return Err(CliError::usage("--max-parallel must be positive").into());
    }

    let items = read_items(&pool_path)?;
    let run = filter_pool(&items, responder.as_ref(), max_parallel)?;
    let dir = ctx.config.run_dir()?;
    let verdicts_path = dir.join("verdicts.jsonl");
    let summary_path = dir.join("filter_summary.json");
    write_jsonl(&verdicts_path, &run.verdicts)?;
    write_json_pretty(&summary_path, &run.summary)?;
    ctx.event(
        json!({"event": "filtered", "counts": run.summary.counts, "verdicts": verdicts_path}),
    );

    if args.responder == ResponderKind::Endpoint && run.summary.counts.unobtainable == items.len() {
        let detail = run
            .verdicts
            .iter()
            .find_map(|v| v.error.clone())
            .unwrap_or_default();
        return Err(CliError {
            code: crate::exit::ENDPOINT,
            kind: "endpoint",
            message: detail,
        }
        .into());
    }
    let selected = select_training_set(&run.verdicts, &items, &ctx.config.selection)?;
    let out = args.out.unwrap_or_else(|| dir.join("selected.jsonl"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_jsonl(&out, &selected)?;
    println!(
        "{}",
        json!({
            "run_id": ctx.run_id(),
            "counts": run.summary.counts,
            "selected": selected.len(),
            "selected_path": out,
            "verdicts_path": verdicts_path,
            "summary_path": summary_path,
        })
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainReport<'a> {
    run_id: &'a str,
    #[serde(flatten)]
    summary: TrainSummary,
    seed: u64,
    checkpoint: &'a Path,
}

pub fn train(ctx: Context, args: TrainArgs) -> anyhow::Result<()> {
    let data = dataset_path(args.data, &ctx, "--data")?;
    require_file(&data, "training set")?;
    let steps = args
        .steps
        .or_else(|| ctx.config.grpo.as_ref().map(|g| g.total_steps))
        .ok_or_else(|| CliError::usage("no step count: pass --steps or set grpo.total_steps"))?;
    if steps == 0 {
        return Err(CliError::usage("--steps must be positive").into());
    }
    let mut grpo = ctx
        .config
        .grpo
        .clone()
        .unwrap_or_else(|| GrpoConfig::with_total_steps(steps));
    grpo.total_steps = steps;
    if let Some(lr) = args.lr {
        grpo.lr_initial = lr;
    }
    if let Some(seed) = ctx.seed {
        grpo.seed = seed;
    }
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| ctx.config.paths.checkpoint.clone());

    let items: Vec<McqItem> = read_items(&data)?;
    let policy = match &args.init {
        Some(path) => load_checkpoint(path)?,
        None => {
            let max_options = items
                .iter()
                .map(McqItem::num_options)
                .max()
                .expect("read_items is non-empty");
            PolicyParams::zeros(DEFAULT_FEATURE_DIM, max_options)?
        }
    };
    let seed = grpo.seed;
    let mut trainer = Trainer::new(&items, policy, grpo, ctx.config.rewards)?;
    let stdout = std::io::stdout();
    let mut write_error = None;
    let outcome = trainer.run(|log| {
        let mut lock = stdout.lock();
        if let Err(e) = serde_json::to_writer(&mut lock, log)
            .map_err(std::io::Error::from)
            .and_then(|_| writeln!(lock))
        {
            write_error.get_or_insert(e);
        }
    });
    if let Some(e) = write_error {
        return Err(anyhow::Error::from(e).context("writing step log"));
    }
    match outcome {
        Ok(summary) => {
            write_checkpoint(&out, trainer.policy(), seed)?;
            let path = ctx.config.run_dir()?.join("train_summary.json");
            write_json_pretty(
                &path,
                &TrainReport {
                    run_id: ctx.run_id(),
                    summary,
                    seed,
                    checkpoint: &out,
                },
            )?;
            ctx.event(json!({"event": "trained", "checkpoint": out, "summary": path}));
            Ok(())
        }
        Err(e @ Error::NumericalFailure { .. }) => {
            // The trainer still holds the weights of the last completed step.
            write_checkpoint(&out, trainer.policy(), seed)?;
            Err(e.into())
        }
        Err(e) => Err(e.into()),
    }
}

/// Evaluation results from a JSONL file, or from the `results` of a JSON report.
fn read_results(path: &Path) -> anyhow::Result<Vec<EvalResult>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(doc) = serde_json::from_str::<ReportDocument>(&text) {
        return Ok(doc.results);
    }
    let mut out = Vec::new();
    for (n, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        out.push(serde_json::from_str(line).map_err(|e| Error::Parse {
            location: format!("{}:{}", path.display(), n + 1),
            detail: e.to_string(),
        })?);
    }
    Ok(out)
}

fn resolve_baseline(results: &[EvalResult], flag: Option<String>) -> anyhow::Result<String> {
    let first = results
        .first()
        .ok_or_else(|| CliError::usage("no results to report"))?;
    let baseline = flag.unwrap_or_else(|| first.model_label.clone());
    if results.iter().any(|r| r.model_label == baseline) {
        Ok(baseline)
    } else {
        Err(CliError::unknown_baseline(format!(
            "baseline {baseline:?} is not among the result labels"
        ))
        .into())
    }
}

#[derive(Serialize)]
struct ItemRecord<'a> {
    dataset: &'a str,
    model: &'a str,
    #[serde(flatten)]
    outcome: &'a ItemOutcome,
}

pub fn eval(ctx: Context, args: EvalArgs) -> anyhow::Result<()> {
    if args.data.is_empty() && args.from_results.is_empty() {
        return Err(
            CliError::usage("nothing to evaluate: pass --data and/or --from-results").into(),
        );
    }
    for path in args.data.iter().chain(&args.from_results) {
        require_file(path, "input")?;
    }
    let mut results = Vec::new();
    for path in &args.from_results {
        results.extend(read_results(path)?);
    }
    let mut outcomes = Vec::new();
    if !args.data.is_empty() {
        let checkpoint = args
            .checkpoint
            .clone()
            .unwrap_or_else(|| ctx.config.paths.checkpoint.clone());
        let policy = load_checkpoint(&checkpoint)?;
        let label = args.label.clone().unwrap_or_else(|| stem(&checkpoint));
        let datasets = args
            .data
            .iter()
            .map(|p| Ok((stem(p), read_items(p)?)))
            .collect::<anyhow::Result<Vec<_>>>()?;
        for (name, items) in &datasets {
            let (result, items_out) = evaluate(items, &PolicyAnswerer::new(&policy), name, &label)?;
            ctx.event(
                json!({"event": "evaluated", "dataset": name, "accuracy": result.overall_accuracy}),
            );
            results.push(result);
            outcomes.push((name.clone(), label.clone(), items_out));
        }
    }
    let baseline = resolve_baseline(&results, args.baseline)?;
    let table = build_comparison(&results, &baseline)?;

    let dir = ctx.config.run_dir()?;
    for format in [
        ReportFormat::Markdown,
        ReportFormat::Csv,
        ReportFormat::Json,
    ] {
        let path = dir.join(format!("report.{}", format.extension()));
        write_file(&path, &emit_report(&table, &results, format)?)?;
    }
    write_jsonl(&dir.join("results.jsonl"), &results)?;
    let records: Vec<ItemRecord> = outcomes
        .iter()
        .flat_map(|(dataset, model, items)| {
            items.iter().map(move |o| ItemRecord {
                dataset,
                model,
                outcome: o,
            })
        })
        .collect();
    write_jsonl(&dir.join("items.jsonl"), &records)?;
    print!("{}", emit_report(&table, &results, args.format.into())?);
    Ok(())
}

pub fn report(ctx: Context, args: ReportArgs) -> anyhow::Result<()> {
    let mut results = Vec::new();
    for path in &args.results {
        require_file(path, "results file")?;
        results.extend(read_results(path)?);
    }
    let baseline = resolve_baseline(&results, args.baseline)?;
    let table = build_comparison(&results, &baseline)?;
    let text = emit_report(&table, &results, args.format.into())?;
    if let Some(out) = &args.out {
        write_file(out, &text)?;
        ctx.event(json!({"event": "wrote", "path": out}));
    }
    print!("{text}");
    Ok(())
}

pub fn synth(ctx: Context, args: SynthArgs) -> anyhow::Result<()> {
    let items = synthetic::generate(args.n, args.options, ctx.seed.unwrap_or(0))?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_jsonl(&args.out, &items)?;
    println!("{}", json!({"items": items.len(), "path": args.out}));
    Ok(())
}
