use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use sgks::bench::{bench_latency, BenchOptions};
use sgks::calibrate::{calibrate_full, split_holdout, CalibrateOptions, CalibrationSet};
use sgks::diag::{all_layer_diagnostics, parse_window, summarize, write_csv, DiagRecord, TraceSummary};
use sgks::gate::{classify, ChainPolicy, EpisodeResult, FixtureStore, JsonlAudit, KillSwitch, Question, Thresholds};
use sgks::stats::{contrast_report, BootstrapOptions};
use sgks::sweeps::{cutoff_sweep, default_windows, variant_compare, window_shift, SweepOptions, DEFAULT_C_GRID};
use sgks::synth::{synth_dataset, DatasetSpec, SYNTH_MODEL_ID};
use sgks::trace::{read_trace_file, write_batch, ActivationTrace, Manifest};

use crate::args::{
    resolve, Axis, BenchArgs, CalibrateArgs, ChainMode, Cli, Command, DiagArgs, Format, GateArgs, Resolved,
    StatsArgs, SweepArgs, SynthArgs, VerifyArgs,
};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    let ctx = resolve(&cli.common)?;
    let pool = match ctx.workers {
        Some(0) => return Err(CliError::Usage("--workers must be at least 1".into())),
        Some(n) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(format!("worker pool: {e}")))?,
        ),
        None => None,
    };
    let go = || match cli.command {
        Command::Synth(a) => synth(&ctx, a),
        Command::Diag(a) => diag(&ctx, a),
        Command::Calibrate(a) => calibrate(&ctx, a),
        Command::Verify(a) => verify(&ctx, a),
        Command::Gate(a) => gate(&ctx, a),
        Command::Sweep(a) => sweep(&ctx, a),
        Command::Stats(a) => stats(&ctx, a),
        Command::Bench(a) => bench(&ctx, a),
    };
    match pool {
        Some(p) => p.install(go),
        None => go(),
    }
}

/// Writes to `--out` when given, stdout otherwise.
fn output(ctx: &Resolved) -> Result<Box<dyn Write>> {
    Ok(match &ctx.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn emit<T: Serialize>(ctx: &Resolved, rows: &[T]) -> Result<()> {
    let mut out = output(ctx)?;
    match ctx.format {
        Format::Csv => write_csv(rows, &mut out)?,
        Format::Json => emit_json_to(&mut out, &rows)?,
    }
    out.flush()?;
    Ok(())
}

fn emit_json<T: Serialize>(ctx: &Resolved, value: &T) -> Result<()> {
    let mut out = output(ctx)?;
    emit_json_to(&mut out, value)?;
    out.flush()?;
    Ok(())
}

fn emit_json_to<T: Serialize + ?Sized>(out: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value).map_err(sgks::Error::from)?;
    writeln!(out)?;
    Ok(())
}

/// A manifest, a directory holding `manifest.json`, or one `.sgkt` file.
fn load_traces(input: &Path) -> Result<Vec<ActivationTrace>> {
    let manifest_path = if input.is_dir() {
        input.join("manifest.json")
    } else if input.extension().is_some_and(|e| e == "json") {
        input.to_path_buf()
    } else {
        let mut trace = read_trace_file(input)?;
        if trace.prompt_id.is_empty() {
            trace.prompt_id = input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
        }
        return Ok(vec![trace]);
    };
    let manifest = Manifest::load(&manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let traces = manifest
        .files
        .par_iter()
        .map(|e| manifest.load_entry(base, e))
        .collect::<sgks::Result<Vec<_>>>()?;
    Ok(traces)
}

fn synth(ctx: &Resolved, a: SynthArgs) -> Result<()> {
    let Some(dir) = &ctx.out else {
        return Err(CliError::Usage("synth needs --out DIR".into()));
    };
    let spec = DatasetSpec {
        tokens: a.tokens,
        heads: a.heads,
        n_layers: a.layers,
        hidden_dim: a.hidden_dim,
        base_seed: ctx.seed,
        ..DatasetSpec::default()
    };
    let traces = synth_dataset(a.n_per_class, &spec)?;
    let manifest = write_batch(dir, SYNTH_MODEL_ID, &traces)?;
    log::info!("wrote {} traces to {}", manifest.files.len(), dir.display());
    Ok(())
}

fn diag(ctx: &Resolved, a: DiagArgs) -> Result<()> {
    let traces = load_traces(&a.input)?;
    if a.per_layer {
        let per_trace = traces
            .par_iter()
            .map(|t| {
                all_layer_diagnostics(t, &ctx.diag).map(|ds| {
                    ds.iter()
                        .map(|d| DiagRecord::from_diagnostics(&t.prompt_id, d))
                        .collect::<Vec<_>>()
                })
            })
            .collect::<sgks::Result<Vec<_>>>()?;
        let rows: Vec<DiagRecord> = per_trace.into_iter().flatten().collect();
        emit(ctx, &rows)
    } else {
        let rows = traces
            .par_iter()
            .map(|t| summarize(t, &ctx.diag).map(|s| TraceSummary::new(t, &s)))
            .collect::<sgks::Result<Vec<_>>>()?;
        emit(ctx, &rows)
    }
}

fn load_scores(path: &Path, model_id: &str) -> Result<CalibrationSet> {
    let rows: Vec<TraceSummary> = if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(sgks::Error::from)?
    } else {
        let mut reader = csv::Reader::from_path(path).map_err(sgks::Error::from)?;
        reader
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .map_err(sgks::Error::from)?
    };
    let mut pairs = Vec::with_capacity(rows.len());
    for r in rows {
        match r.label {
            Some(l @ (0 | 1)) => pairs.push((r.hfer_mean, l == 1)),
            Some(l) => {
                return Err(sgks::Error::Validation(format!("'{}' has label {l}", r.prompt_id)).into())
            }
            None => {
                return Err(sgks::Error::Validation(format!("'{}' has no label", r.prompt_id)).into())
            }
        }
    }
    Ok(CalibrationSet::new(pairs, model_id)?)
}

fn calibrate(ctx: &Resolved, a: CalibrateArgs) -> Result<()> {
    let set = load_scores(&a.scores, &a.model_id)?;
    let (train, hold) = match &a.holdout {
        Some(p) => (set, load_scores(p, &a.model_id)?),
        None => split_holdout(&set, 0.5, ctx.seed)?,
    };
    let options = CalibrateOptions {
        q: a.q,
        ece_target: a.ece_target,
        ..CalibrateOptions::default()
    };
    let result = calibrate_full(&train, &hold, &options)?;
    emit_json(ctx, &result)
}

fn thresholds(ctx: &Resolved, flag: Option<PathBuf>, command: &str) -> Result<Thresholds> {
    let path = flag
        .or_else(|| ctx.thresholds.clone())
        .ok_or_else(|| CliError::Usage(format!("{command} needs --thresholds PATH")))?;
    Ok(Thresholds::load(path)?)
}

fn verify(ctx: &Resolved, a: VerifyArgs) -> Result<()> {
    let t = thresholds(ctx, a.thresholds, "verify")?;
    let trace = read_trace_file(&a.trace)?;
    let h = summarize(&trace, &ctx.diag)?.hfer_mean;
    let v = classify(h, &t)?;
    let mut out = output(ctx)?;
    writeln!(out, "{} h={:.6}", v.support, v.h)?;
    out.flush()?;
    Ok(())
}

fn describe(result: &EpisodeResult) -> String {
    match result {
        EpisodeResult::Abstain => "ABSTAIN".into(),
        EpisodeResult::Answer {
            kept, uncertain_only, ..
        } => {
            if *uncertain_only {
                "ANSWER uncertain".into()
            } else {
                format!("ANSWER kept={}", kept.join(","))
            }
        }
    }
}

fn gate(ctx: &Resolved, a: GateArgs) -> Result<()> {
    let t = thresholds(ctx, a.thresholds, "gate")?;
    let store = FixtureStore::load(&a.manifest)?;
    let ids = if a.questions.is_empty() {
        store.question_ids()
    } else {
        a.questions
    };
    if ids.is_empty() {
        return Err(sgks::Error::Input("manifest has no question_id entries".into()).into());
    }
    let audit = Arc::new(JsonlAudit::open(&a.audit)?);
    let ks = KillSwitch::new(&store, &store, t, ctx.diag.clone(), audit);
    let questions: Vec<Question> = ids.iter().map(|id| Question::new(id.clone(), id.clone())).collect();
    let mut out = output(ctx)?;
    match a.chain {
        None => {
            for q in &questions {
                let (result, _) = ks.run_episode(q)?;
                writeln!(out, "{} {}", q.id, describe(&result))?;
            }
        }
        Some(mode) => {
            let policy = match mode {
                ChainMode::Halt => ChainPolicy::Halt,
                ChainMode::Backtrack => ChainPolicy::Backtrack,
            };
            let report = ks.run_chain(&questions, policy)?;
            for s in &report.steps {
                let tag = if s.backtracked { " (backtracked)" } else { "" };
                writeln!(out, "{} {}{tag}", s.question_id, describe(&s.result))?;
            }
            let status = match report.halted_at {
                None => "completed".to_string(),
                Some(i) => format!("halted at step {i}"),
            };
            writeln!(
                out,
                "chain {status}: answers={} kills={} backtracks={}",
                report.answers, report.kills, report.backtracks
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

fn sweep(ctx: &Resolved, a: SweepArgs) -> Result<()> {
    let traces = load_traces(&a.input)?;
    let options = SweepOptions {
        config: ctx.diag.clone(),
        bootstrap: BootstrapOptions {
            n_resamples: a.resamples,
            ..BootstrapOptions::default().with_seed(ctx.seed)
        },
    };
    let reports = match a.axis {
        Axis::Cutoff => {
            let grid = a.grid.unwrap_or_else(|| DEFAULT_C_GRID.to_vec());
            vec![cutoff_sweep(&traces, &grid, &options)?]
        }
        Axis::Window => {
            let windows = match &a.windows {
                Some(s) => s
                    .split(';')
                    .map(|w| parse_window(w.trim()))
                    .collect::<sgks::Result<Vec<_>>>()?,
                None => default_windows(),
            };
            vec![window_shift(&traces, &windows, &options)?]
        }
        Axis::Variant => {
            let v = variant_compare(&traces, &options)?;
            if ctx.format == Format::Json {
                return emit_json(ctx, &v);
            }
            vec![v.laplacian, v.aggregation]
        }
    };
    match ctx.format {
        Format::Json => emit_json(ctx, &reports[0]),
        Format::Csv => {
            let rows: Vec<_> = reports.iter().flat_map(|r| r.rows()).collect();
            emit(ctx, &rows)
        }
    }
}

#[derive(Debug, Deserialize)]
struct ContrastPair {
    contrast: String,
    a: f64,
    b: f64,
}

fn stats(ctx: &Resolved, a: StatsArgs) -> Result<()> {
    let mut reader = csv::Reader::from_path(&a.input).map_err(sgks::Error::from)?;
    let mut groups: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for row in reader.deserialize::<ContrastPair>() {
        let row = row.map_err(sgks::Error::from)?;
        match groups.iter_mut().find(|g| g.0 == row.contrast) {
            Some(g) => {
                g.1.push(row.a);
                g.2.push(row.b);
            }
            None => groups.push((row.contrast, vec![row.a], vec![row.b])),
        }
    }
    if groups.is_empty() {
        return Err(sgks::Error::Input(format!("{} has no contrast rows", a.input.display())).into());
    }
    let options = BootstrapOptions {
        n_resamples: a.resamples,
        ..BootstrapOptions::default().with_seed(ctx.seed)
    };
    let rows = contrast_report(&groups, &options, a.shuffles, a.fdr)?;
    emit(ctx, &rows)
}

fn bench(ctx: &Resolved, a: BenchArgs) -> Result<()> {
    let options = BenchOptions {
        t_grid: a.t_grid,
        heads: a.heads,
        n_layers: a.layers,
        repeats: a.repeats,
        post_repeats: a.post_repeats,
        seed: ctx.seed,
    };
    let rows = bench_latency(&options, &ctx.diag)?;
    emit(ctx, &rows)
}
