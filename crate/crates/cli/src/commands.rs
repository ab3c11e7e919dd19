use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use graphfuse::corpus::{self, DialectTag, Sample};
use graphfuse::expander::{self, ChatClient, PromptTemplate};
use graphfuse::graph::{self, GraphRecord};
use graphfuse::model::{self, FusionModel, TextEncoderConfig, Vocab};
use graphfuse::train::{self, EvalReport, ReportFormat};
use graphfuse::verify;
use graphfuse::Error;
use serde_json::Value;

use crate::config::RunConfig;
use crate::{exit_code, Cli, CliError, CliResult, Command};

pub fn dispatch(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Prepare { pairs, out } => prepare(cli, pairs, out),
        Command::Expand { samples, out, records } => expand(cli, samples, out, records.as_deref()),
        Command::Spotcheck { samples, out, n } => spotcheck(cli, samples, out, *n),
        Command::BuildGraphs { samples, out } => build_graphs(cli, samples, out),
        Command::Train { data, out_dir } => train_cmd(cli, data, out_dir),
        Command::Eval {
            checkpoint,
            data,
            out_dir,
        } => eval(cli, checkpoint, data, out_dir),
        Command::Gradcheck { seeds } => gradcheck(cli, *seeds),
        Command::Report { eval, samples } => report(eval.as_deref(), samples),
    }
}

/// `<path>.config.json`, the config echo for formats without room for one.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".config.json");
    path.with_file_name(name)
}

fn write_echo(path: &Path, echo: &Value) -> CliResult {
    let text = serde_json::to_string_pretty(echo).map_err(Error::from)? + "\n";
    std::fs::write(sidecar_path(path), text).map_err(Error::from)?;
    Ok(())
}

fn with_path(path: &Path) -> impl Fn(Error) -> CliError + '_ {
    move |e| CliError::new(exit_code(&e), format!("{}: {e}", path.display()))
}

fn load_samples(paths: &[PathBuf]) -> CliResult<Vec<Sample>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(corpus::read_samples(p).map_err(with_path(p))?);
    }
    Ok(out)
}

fn prepare(cli: &Cli, paths: &[PathBuf], out: &Path) -> CliResult {
    let (cfg, _) = RunConfig::from_flags(&cli.overrides)?;
    let mut pairs = Vec::new();
    for p in paths {
        pairs.extend(corpus::read_pairs(p).map_err(with_path(p))?);
    }
    if pairs.is_empty() {
        return Err(CliError::new(2, "no sentence pairs in the input"));
    }
    let samples = corpus::decouple_pairs(&pairs)?;
    let (kept, conflicts) = corpus::dedup(&samples);
    if !conflicts.is_empty() {
        eprintln!("warning: {} duplicate texts disagreed on their label; first occurrence kept", conflicts.len());
    }
    corpus::write_samples(&kept, out)?;
    write_echo(out, &cfg.echo())?;
    println!("{}", corpus::tally(&kept));
    println!(
        "{} pairs -> {} samples ({} duplicates dropped)",
        pairs.len(),
        kept.len(),
        samples.len() - kept.len()
    );
    Ok(())
}

fn expand(cli: &Cli, input: &Path, out: &Path, records: Option<&Path>) -> CliResult {
    let (cfg, _) = RunConfig::from_flags(&cli.overrides)?;
    let samples = corpus::read_samples(input).map_err(with_path(input))?;
    let tpl = match &cfg.prompt_template {
        Some(t) => PromptTemplate::new(t).map_err(|e| CliError::new(1, format!("prompt_template: {e}")))?,
        None => PromptTemplate::default(),
    };
    let client = ChatClient::from_env(cfg.endpoint.clone())?;
    let exp = expander::expand_dataset(&samples, &cfg.dialects, &client, &tpl, cfg.endpoint.max_in_flight)?;
    let records_path = records.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".records.jsonl");
        out.with_file_name(name)
    });
    let echo = cfg.echo();
    corpus::write_samples(&exp.samples, out)?;
    write_echo(out, &echo)?;
    expander::write_records(&exp.records, &records_path)?;
    write_echo(&records_path, &echo)?;
    let (ok, failed) = (exp.ok_count(), exp.failed_count());
    println!("{} requests: {ok} ok, {failed} failed", exp.records.len());
    if failed > 0 {
        return Err(CliError::new(
            3,
            format!("{failed} translation requests failed; see {}", records_path.display()),
        ));
    }
    Ok(())
}

fn spotcheck(cli: &Cli, paths: &[PathBuf], out: &Path, n: Option<usize>) -> CliResult {
    let (mut cfg, _) = RunConfig::from_flags(&cli.overrides)?;
    if let Some(n) = n {
        cfg.spotcheck_n = n;
    }
    let samples = load_samples(paths)?;
    let rows = expander::spot_check_sample(&samples, cfg.spotcheck_n, cfg.seed);
    let mut w = BufWriter::new(File::create(out).map_err(Error::from)?);
    expander::write_review_sheet(&rows, &mut w)?;
    w.flush().map_err(Error::from)?;
    write_echo(out, &cfg.echo())?;
    let mut per: BTreeMap<DialectTag, usize> = BTreeMap::new();
    for r in &rows {
        *per.entry(r.dialect).or_default() += 1;
    }
    for (d, k) in per {
        println!("{:<4} {k}", d.code());
    }
    Ok(())
}

fn build_graphs(cli: &Cli, paths: &[PathBuf], out: &Path) -> CliResult {
    let (cfg, _) = RunConfig::from_flags(&cli.overrides)?;
    let samples = load_samples(paths)?;
    let mut records = Vec::with_capacity(samples.len());
    for s in &samples {
        let g = graph::graph_for_text(&s.text, &cfg.graph)
            .map_err(|e| CliError::new(exit_code(&e), format!("sample {:?}: {e}", s.id)))?;
        records.push(GraphRecord::new(&s.id, &g));
    }
    let mut w = BufWriter::new(File::create(out).map_err(Error::from)?);
    graph::write_graph_dump(&records, &mut w)?;
    w.flush().map_err(Error::from)?;
    write_echo(out, &cfg.echo())?;
    println!("{} graphs written to {}", records.len(), out.display());
    Ok(())
}

fn train_cmd(cli: &Cli, data: &[PathBuf], out_dir: &Path) -> CliResult {
    let (cfg, emb) = RunConfig::from_flags(&cli.overrides)?;
    let samples = load_samples(data)?;
    let split = corpus::split(&samples, cfg.split_ratios(), cfg.seed)?;
    std::fs::create_dir_all(out_dir).map_err(Error::from)?;
    let echo = cfg.echo();
    for (name, part) in ["train", "validation", "test"].into_iter().zip(split.parts()) {
        let p = out_dir.join(format!("{name}.jsonl"));
        corpus::write_samples(part, &p)?;
        write_echo(&p, &echo)?;
    }

    let vocab = match cfg.model.text {
        TextEncoderConfig::ToyTransformer(_) => Some(Vocab::build(&split.train)),
        TextEncoderConfig::Precomputed { .. } => None,
    };
    let mut model = FusionModel::<f32>::new(cfg.model, vocab, cfg.seed)?;
    let train_set = model.prepare_all(&split.train, &cfg.graph, emb.as_ref())?;
    let validation = model.prepare_all(&split.validation, &cfg.graph, emb.as_ref())?;
    let outcome = train::train(&mut model, &train_set, &validation, &cfg.train)?;

    model::save_checkpoint(&model, &echo, out_dir.join("final.ckpt"))?;
    let history = out_dir.join("history.csv");
    train::write_history(&outcome.history, &history)?;
    write_echo(&history, &echo)?;
    let last = outcome.history.last().expect("at least one epoch");
    println!(
        "{} steps; final epoch task_loss {:.4} task_acc {:.4}",
        outcome.steps, last.task_loss, last.task_acc
    );
    let chosen = match outcome.best {
        Some(b) => {
            println!("best validation accuracy {:.4} at epoch {}", b.val_acc, b.epoch);
            let best = model.with_params(b.params)?;
            model::save_checkpoint(&best, &echo, out_dir.join("best.ckpt"))?;
            best
        }
        None => model,
    };
    if !split.test.is_empty() {
        let test = chosen.prepare_all(&split.test, &cfg.graph, emb.as_ref())?;
        let mut report = train::evaluate(&chosen, &test)?;
        report.config = Some(echo.clone());
        write_report(&report, out_dir, "test_report")?;
        println!("test accuracy {:.4} on {} samples", report.overall_accuracy, report.n_samples);
    }
    Ok(())
}

fn write_report(report: &EvalReport, dir: &Path, stem: &str) -> CliResult {
    train::export_report(report, dir.join(format!("{stem}.json")), ReportFormat::Json)?;
    let csv = dir.join(format!("{stem}.csv"));
    train::export_report(report, &csv, ReportFormat::Csv)?;
    if let Some(echo) = &report.config {
        write_echo(&csv, echo)?;
    }
    Ok(())
}

fn print_report(report: &EvalReport) {
    println!("{:<8} {:>9} {:>7}", "dialect", "accuracy", "n");
    for (d, c) in &report.per_dialect_confusion {
        println!("{:<8} {:>9.4} {:>7}", d.code(), c.accuracy(), c.total());
    }
    println!("{:<8} {:>9.4} {:>7}", "overall", report.overall_accuracy, report.n_samples);
}

fn eval(cli: &Cli, checkpoint: &Path, data: &[PathBuf], out_dir: &Path) -> CliResult {
    let ck = model::load_checkpoint(checkpoint).map_err(with_path(checkpoint))?;
    let trained = ck.header.model;
    let mut base = match &ck.header.config {
        Value::Object(_) => ck.header.config.clone(),
        _ => serde_json::to_value(RunConfig::default()).map_err(Error::from)?,
    };
    base["model"] = serde_json::to_value(trained).map_err(Error::from)?;
    let (cfg, emb) = RunConfig::resolve(base, &cli.overrides)?;
    let mismatched = cfg.model.dim_mismatches(&trained);
    if !mismatched.is_empty() {
        return Err(CliError::new(
            1,
            format!(
                "checkpoint {} does not match the configured model in: {}",
                checkpoint.display(),
                mismatched.join(", ")
            ),
        ));
    }
    let samples = load_samples(data)?;
    let examples = ck.model.prepare_all(&samples, &cfg.graph, emb.as_ref())?;
    let mut report = train::evaluate(&ck.model, &examples)?;
    report.config = Some(cfg.echo());
    std::fs::create_dir_all(out_dir).map_err(Error::from)?;
    write_report(&report, out_dir, "report")?;
    print_report(&report);
    Ok(())
}

fn gradcheck(cli: &Cli, seeds: u64) -> CliResult {
    let (cfg, _) = RunConfig::from_flags(&cli.overrides)?;
    if seeds == 0 {
        return Err(CliError::new(1, "--seeds must be at least 1"));
    }
    // name -> (worst relative error, all passed)
    let mut worst: Vec<(String, f64, bool)> = Vec::new();
    for seed in cfg.seed..cfg.seed + seeds {
        for (i, c) in verify::verification_suite(seed)?.into_iter().enumerate() {
            if i == worst.len() {
                worst.push((c.name.clone(), 0.0, true));
            }
            let w = &mut worst[i];
            w.1 = w.1.max(c.report.max_rel_err);
            w.2 &= c.report.passed;
        }
    }
    println!("{:<44} {:>12}  (tolerance {:.0e}, {seeds} seeds)", "check", "max rel err", verify::TOLERANCE);
    for (name, err, ok) in &worst {
        println!("{name:<44} {err:>12.3e}  {}", if *ok { "ok" } else { "FAIL" });
    }
    let failed = worst.iter().filter(|w| !w.2).count();
    if failed > 0 {
        return Err(CliError::new(3, format!("{failed} gradient checks failed")));
    }
    Ok(())
}

fn report(eval: Option<&Path>, samples: &[PathBuf]) -> CliResult {
    match eval {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| with_path(p)(e.into()))?;
            let report: EvalReport = serde_json::from_str(&text).map_err(|e| with_path(p)(e.into()))?;
            print_report(&report);
        }
        None if samples.is_empty() => return Err(CliError::new(1, "report needs --eval or --samples")),
        None => {
            let all = load_samples(samples)?;
            let t = corpus::tally(&all);
            println!("{t}");
            for d in DialectTag::ALL {
                println!("{:<4} {}", d.code(), t.by_dialect(d));
            }
        }
    }
    Ok(())
}
