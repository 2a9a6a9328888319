use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use dxtext::amplification::write_jsonl;
use dxtext::analysis::{attack_accuracy, deniability_stats, uniform_prior, verify_metric_dp};
use dxtext::embedding::LoadOptions;
use dxtext::pipeline::run_protocol_with_messages;
use dxtext::randomizers::{build_transition_matrix, MatrixMechanism};
use dxtext::samplers::streams;
use dxtext::sensitivity::build_profile;
use dxtext::{
    EmbeddingStore, Randomizer, RngStream, TransitionMatrix, WordId, WordMechanism, SCHEMA_VERSION,
};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::args::*;
use crate::config::{resolve_mechanism, resolve_protocol};
use crate::failure::Failure;
use crate::output::{emit, open};

struct Ctx {
    embeddings: Option<PathBuf>,
    seed: Option<u64>,
    format: Option<Format>,
    quiet: bool,
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn format(&self, default: Format) -> Format {
        self.format.unwrap_or(default)
    }

    fn store(&self) -> Result<EmbeddingStore, Failure> {
        let path = self
            .embeddings
            .as_ref()
            .ok_or_else(|| Failure::config("--embeddings is required for this subcommand"))?;
        EmbeddingStore::load(path, LoadOptions::default()).map_err(|e| match e {
            dxtext::Error::Io(io) => Failure::io(path, io),
            other => Failure::config(format!("{}: {other}", path.display())),
        })
    }

    fn info(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    /// Resolved settings echoed into every output.
    fn metadata(&self, store: &EmbeddingStore, command: &str, fields: Value) -> Value {
        let mut m = json!({
            "schema_version": SCHEMA_VERSION,
            "command": command,
            "seed": self.seed(),
            "embeddings": {
                "path": self.embeddings.as_ref().map(|p| p.display().to_string()),
                "words": store.len(),
                "dim": store.dim(),
                "fingerprint": format!("{:016x}", store.fingerprint()),
            },
        });
        if let (Value::Object(m), Value::Object(f)) = (&mut m, fields) {
            m.extend(f);
        }
        m
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::config(format!("--threads: {e}")))?;
    }
    let ctx = Ctx {
        embeddings: cli.global.embeddings,
        seed: cli.global.seed,
        format: cli.global.format,
        quiet: cli.global.quiet,
    };
    match cli.command {
        Command::Perturb(a) => perturb(&ctx, a),
        Command::Matrix(a) => matrix(&ctx, a),
        Command::Stats(a) => stats(&ctx, a),
        Command::VerifyDp(a) => verify_dp(&ctx, a),
        Command::Attack(a) => attack(&ctx, a),
        Command::Sensitivity(a) => sensitivity(&ctx, a),
        Command::Pipeline(a) => pipeline(&ctx, a),
        Command::Ingest(a) => ingest(&ctx, a),
    }
}

fn read_matrix(store: &EmbeddingStore, path: &Path) -> Result<TransitionMatrix, Failure> {
    TransitionMatrix::read_tsv(store, BufReader::new(open(path)?)).map_err(|e| match e {
        dxtext::Error::Io(io) => Failure::io(path, io),
        other => Failure::config(format!("{}: {other}", path.display())),
    })
}

fn write_json(out: &mut dyn Write, v: &Value) -> Result<(), Failure> {
    serde_json::to_writer_pretty(&mut *out, v).map_err(|e| Failure::from(io::Error::from(e)))?;
    writeln!(out)?;
    Ok(())
}

fn write_tsv_header(out: &mut dyn Write, meta: &Value) -> Result<(), Failure> {
    writeln!(out, "# schema_version {SCHEMA_VERSION}")?;
    writeln!(out, "# config {meta}")?;
    Ok(())
}

/// JSON has no infinity; non-finite values are written as strings.
fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(x.to_string())
    }
}

fn perturb(ctx: &Ctx, a: PerturbArgs) -> Result<(), Failure> {
    let store = ctx.store()?;
    let text = match &a.input {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Failure::io(p, e))?,
        None => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s)?;
            s
        }
    };
    let mut lines: Vec<Vec<(&str, Option<WordId>)>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut toks = Vec::new();
        for tok in line.split_whitespace() {
            match store.id(tok) {
                Some(id) => toks.push((tok, Some(id))),
                None if a.skip_oov => toks.push((tok, None)),
                None => {
                    return Err(Failure::config(format!(
                        "line {}: unknown word {tok:?}",
                        i + 1
                    )))
                }
            }
        }
        lines.push(toks);
    }

    let loaded;
    let randomizer;
    let (mech, mech_meta): (&dyn WordMechanism, Value) = match &a.matrix {
        Some(path) => {
            loaded = read_matrix(&store, path)?;
            (
                &MatrixMechanism(&loaded),
                json!({ "matrix": path.display().to_string() }),
            )
        }
        None => {
            randomizer = Randomizer::new(&store, &resolve_mechanism(&a.mech)?)?;
            (&randomizer, json!({ "mechanism": randomizer.config() }))
        }
    };
    let meta = ctx.metadata(
        &store,
        "perturb",
        json!({ "source": mech_meta, "skip_oov": a.skip_oov }),
    );

    let root = RngStream::new(ctx.seed(), 0);
    let output: Vec<String> = lines
        .par_iter()
        .enumerate()
        .map(|(i, toks)| {
            let mut rng = root.fork2(streams::LOCAL, i as u64);
            let words = toks
                .iter()
                .map(|&(tok, id)| match id {
                    Some(w) => Ok(store.word(mech.perturb(&mut rng, w)?)),
                    None => Ok(tok),
                })
                .collect::<dxtext::Result<Vec<&str>>>()?;
            Ok(words.join(" "))
        })
        .collect::<dxtext::Result<_>>()?;

    match ctx.format(Format::Text) {
        Format::Json => emit(a.output.as_deref(), |out| {
            write_json(out, &json!({ "metadata": meta, "lines": output }))
        }),
        _ => {
            ctx.info(format!("config: {meta}"));
            emit(a.output.as_deref(), |out| {
                for line in &output {
                    writeln!(out, "{line}")?;
                }
                Ok(())
            })
        }
    }
}

fn matrix(ctx: &Ctx, a: MatrixArgs) -> Result<(), Failure> {
    let store = ctx.store()?;
    let mech = Randomizer::new(&store, &resolve_mechanism(&a.mech)?)?;
    let m = build_transition_matrix(&store, &RngStream::new(ctx.seed(), 0), &mech, a.samples)?;
    let meta = ctx.metadata(
        &store,
        "matrix",
        json!({ "mechanism": mech.config(), "samples_per_word": a.samples }),
    );
    match ctx.format(Format::Tsv) {
        Format::Json => emit(a.output.as_deref(), |out| {
            write_json(
                out,
                &json!({ "metadata": meta, "words": store.words(), "rows": m.rows() }),
            )
        }),
        _ => emit(a.output.as_deref(), |out| {
            writeln!(out, "# schema_version {SCHEMA_VERSION}")?;
            Ok(m.write_tsv(&store, out, Some(&meta))?)
        }),
    }
}

fn stats(ctx: &Ctx, a: StatsArgs) -> Result<(), Failure> {
    let store = ctx.store()?;
    let config = resolve_mechanism(&a.mech)?;
    let mech = Randomizer::new(&store, &config)?;
    let words: Vec<WordId> = if a.words.is_empty() {
        store.ids().collect()
    } else {
        a.words
            .iter()
            .map(|w| store.lookup(w.trim()))
            .collect::<dxtext::Result<_>>()?
    };
    let root = RngStream::new(ctx.seed(), 0);
    let results = words
        .par_iter()
        .map(|&w| {
            deniability_stats(
                &store,
                &mut root.fork2(streams::TRIALS, w.0 as u64),
                &mech,
                w,
                a.trials,
            )
        })
        .collect::<dxtext::Result<Vec<_>>>()?;
    let meta = ctx.metadata(
        &store,
        "stats",
        json!({ "mechanism": mech.config(), "trials": a.trials }),
    );
    match ctx.format(Format::Tsv) {
        Format::Json => {
            let rows: Vec<Value> = results
                .iter()
                .map(|s| {
                    json!({
                        "word": store.word(s.word),
                        "n_trials": s.n_trials,
                        "p_unchanged": s.p_unchanged,
                        "support_size": s.support_size,
                        "entropy": s.entropy,
                    })
                })
                .collect();
            emit(a.output.as_deref(), |out| {
                write_json(out, &json!({ "metadata": meta, "stats": rows }))
            })
        }
        Format::Tsv => emit(a.output.as_deref(), |out| {
            write_tsv_header(out, &meta)?;
            writeln!(out, "word\tp_unchanged\tsupport_size\tentropy")?;
            for s in &results {
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}",
                    store.word(s.word),
                    s.p_unchanged,
                    s.support_size,
                    s.entropy
                )?;
            }
            Ok(())
        }),
        Format::Text => emit(a.output.as_deref(), |out| {
            for s in &results {
                writeln!(
                    out,
                    "{}: p_unchanged {:.4}, support {}, entropy {:.4} nats",
                    store.word(s.word),
                    s.p_unchanged,
                    s.support_size,
                    s.entropy
                )?;
            }
            Ok(())
        }),
    }
}

fn triple_names(store: &EmbeddingStore, t: Option<(WordId, WordId, WordId)>) -> Value {
    match t {
        Some((a, b, y)) => json!([store.word(a), store.word(b), store.word(y)]),
        None => Value::Null,
    }
}

fn verify_dp(ctx: &Ctx, a: VerifyArgs) -> Result<(), Failure> {
    let store = ctx.store()?;
    let config = resolve_mechanism(&a.mech)?;
    let (m, source) = match &a.matrix {
        Some(path) => (
            read_matrix(&store, path)?,
            json!({ "matrix": path.display().to_string() }),
        ),
        None => {
            let mech = Randomizer::new(&store, &config)?;
            let m =
                build_transition_matrix(&store, &RngStream::new(ctx.seed(), 0), &mech, a.samples)?;
            (
                m,
                json!({ "mechanism": mech.config(), "samples_per_word": a.samples }),
            )
        }
    };
    let r = verify_metric_dp(&m, &store, config.epsilon())?;
    let meta = ctx.metadata(
        &store,
        "verify-dp",
        json!({ "epsilon": config.epsilon(), "source": source }),
    );
    let report = json!({
        "epsilon": r.epsilon,
        "max_violation": num(r.max_violation),
        "worst_triple": triple_names(&store, r.worst_triple),
        "max_excess": num(r.max_excess),
        "worst_excess_triple": triple_names(&store, r.worst_excess_triple),
        "slack_at_worst": num(r.slack_at_worst),
        "slack_sigmas": r.slack_sigmas,
        "sample_count": r.sample_count,
        "private": r.private,
    });
    match ctx.format(Format::Json) {
        Format::Text => emit(a.output.as_deref(), |out| {
            writeln!(out, "epsilon {}", r.epsilon)?;
            writeln!(
                out,
                "max violation {} at {}",
                r.max_violation,
                triple_names(&store, r.worst_triple)
            )?;
            writeln!(out, "max excess over slack {}", r.max_excess)?;
            writeln!(
                out,
                "{}",
                if r.private {
                    "within bound"
                } else {
                    "VIOLATED"
                }
            )?;
            Ok(())
        }),
        _ => emit(a.output.as_deref(), |out| {
            write_json(out, &json!({ "metadata": meta, "report": report }))
        }),
    }
}

fn read_prior(store: &EmbeddingStore, path: &Path) -> Result<Vec<f64>, Failure> {
    let mut prior = vec![0.0; store.len()];
    for (i, line) in BufReader::new(open(path)?).lines().enumerate() {
        let line = line.map_err(|e| Failure::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || {
            Failure::config(format!(
                "{}: line {}: expected word<TAB>weight",
                path.display(),
                i + 1
            ))
        };
        let (word, weight) = line.split_once('\t').ok_or_else(bad)?;
        let weight: f64 = weight.trim().parse().map_err(|_| bad())?;
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(bad());
        }
        let w = store.id(word).ok_or_else(|| {
            Failure::config(format!(
                "{}: line {}: unknown word {word:?}",
                path.display(),
                i + 1
            ))
        })?;
        prior[w.index()] += weight;
    }
    let total: f64 = prior.iter().sum();
    if total <= 0.0 {
        return Err(Failure::config(format!(
            "{}: prior has no mass",
            path.display()
        )));
    }
    prior.iter_mut().for_each(|p| *p /= total);
    Ok(prior)
}

fn attack(ctx: &Ctx, a: AttackArgs) -> Result<(), Failure> {
    let store = ctx.store()?;
    let root = RngStream::new(ctx.seed(), 0);
    let prior = match &a.prior {
        Some(p) => read_prior(&store, p)?,
        None => uniform_prior(store.len()),
    };
    let randomizer = if a.mech.is_empty() && a.matrix.is_some() {
        None
    } else {
        Some(Randomizer::new(&store, &resolve_mechanism(&a.mech)?)?)
    };
    let model = match (&a.matrix, &randomizer) {
        (Some(path), _) => read_matrix(&store, path)?,
        (None, Some(r)) => build_transition_matrix(&store, &root, r, a.samples)?,
        (None, None) => unreachable!("mechanism is resolved when no matrix is given"),
    };
    let report = match &randomizer {
        Some(r) => attack_accuracy(&store, &root, r, &model, &prior, a.trials)?,
        None => attack_accuracy(
            &store,
            &root,
            &MatrixMechanism(&model),
            &model,
            &prior,
            a.trials,
        )?,
    };
    let meta = ctx.metadata(
        &store,
        "attack",
        json!({
            "mechanism": randomizer.as_ref().map(|r| r.config()),
            "attacker_matrix": a.matrix.as_ref().map(|p| p.display().to_string()),
            "samples_per_word": if a.matrix.is_none() { Some(a.samples) } else { None },
            "trials": a.trials,
            "prior": a.prior.as_ref().map_or("uniform".to_owned(), |p| p.display().to_string()),
        }),
    );
    match ctx.format(Format::Json) {
        Format::Text => emit(a.output.as_deref(), |out| {
            writeln!(
                out,
                "accuracy {:.4} ({} / {})",
                report.accuracy, report.correct, report.n_trials
            )?;
            writeln!(
                out,
                "unreachable observations {}",
                report.unreachable_observations
            )?;
            Ok(())
        }),
        _ => emit(a.output.as_deref(), |out| {
            write_json(out, &json!({ "metadata": meta, "report": report }))
        }),
    }
}

fn sensitivity(ctx: &Ctx, a: SensitivityArgs) -> Result<(), Failure> {
    let store = ctx.store()?;
    let profile = build_profile(&store, a.beta)?;
    let meta = ctx.metadata(&store, "sensitivity", json!({ "beta": a.beta }));
    match ctx.format(Format::Tsv) {
        Format::Json => {
            let rows: Vec<Value> = store
                .ids()
                .map(|w| json!({ "word": store.word(w), "local": profile.local(w), "smooth": profile.smooth(w) }))
                .collect();
            emit(a.output.as_deref(), |out| {
                write_json(
                    out,
                    &json!({ "metadata": meta, "global": profile.global, "words": rows }),
                )
            })
        }
        _ => emit(a.output.as_deref(), |out| {
            write_tsv_header(out, &meta)?;
            Ok(profile.write_tsv(&store, out)?)
        }),
    }
}

fn pipeline(ctx: &Ctx, a: PipelineArgs) -> Result<(), Failure> {
    let store = ctx.store()?;
    let config = resolve_protocol(
        &a.config,
        &a.mech.as_mechanism_args(),
        a.n_users,
        a.m_per_user,
        ctx.seed,
    )?;
    let (report, messages) = run_protocol_with_messages(&store, &config)?;
    if let Some(path) = &a.dump_messages {
        emit(Some(path), |out| Ok(write_jsonl(&store, &messages, out)?))?;
    }
    match ctx.format(Format::Json) {
        Format::Text => emit(a.output.as_deref(), |out| {
            for s in &report.metadata.stages {
                writeln!(out, "{}: {} messages", s.stage, s.messages)?;
            }
            writeln!(out, "utility_l1 {}", report.utility_l1)?;
            writeln!(out, "utility_tv {}", report.utility_tv)?;
            writeln!(
                out,
                "unchanged_fraction {}",
                report.metadata.unchanged_fraction
            )?;
            if let Some(e) = report.metadata.amplified_epsilon {
                writeln!(out, "amplified epsilon ~ {}", e.value)?;
            }
            Ok(())
        }),
        _ => {
            let text = report.to_json_pretty()?;
            emit(a.output.as_deref(), |out| {
                writeln!(out, "{text}")?;
                Ok(())
            })
        }
    }
}

fn ingest(ctx: &Ctx, a: IngestArgs) -> Result<(), Failure> {
    let opts = LoadOptions {
        expected_dim: a.dim,
        normalize: a.normalize,
    };
    let store = EmbeddingStore::load(&a.input, opts).map_err(|e| match e {
        dxtext::Error::Io(io) => Failure::io(&a.input, io),
        other => Failure::config(format!("{}: {other}", a.input.display())),
    })?;
    emit(Some(&a.output), |out| Ok(store.write_cache(out)?))?;
    ctx.info(format!(
        "{} words, dimension {}, fingerprint {:016x}",
        store.len(),
        store.dim(),
        store.fingerprint()
    ));
    Ok(())
}
