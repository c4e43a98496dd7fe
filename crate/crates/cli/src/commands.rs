use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use lattice_lm::lattice::{build_ngram_chain, build_sync_split, export_dot, Lattice, LatticeSpec};
use lattice_lm::persist::{ModelFile, Provenance, TaskInfo};
use lattice_lm::tasks::{ngram, pp, sync, synth};
use lattice_lm::{
    ingest, CombineMode, ConditionalQuery, CountTable, EmOptions, HeldOutSet, Model64, ModelConfig, Observation,
    Term,
};
use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::failure::{read_file, Failure};
use crate::{EvalArgs, ExportArgs, GenSynthArgs, Mode, QueryArgs, SynthTask, TaskKind, TrainArgs};

type CmdResult = Result<(), Failure>;

fn io(e: std::io::Error) -> Failure {
    Failure::data(format!("write failed: {e}"))
}

/// Splits off the last `fraction` of `items` as held-out data, keeping at
/// least one training item.
fn split_tail<T>(mut items: Vec<T>, fraction: f64) -> (Vec<T>, Vec<T>) {
    let n = items.len();
    let h = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
    let held = items.split_off(n - h);
    (items, held)
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

fn sha256(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn file_key(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Training and held-out units of one task, parsed with file context.
fn load_units<T>(
    cfg: &TrainConfig,
    corpus: &Path,
    corpus_text: &str,
    heldout_text: Option<&str>,
    parse: impl Fn(&str) -> lattice_lm::Result<Vec<T>>,
) -> Result<(Vec<T>, Vec<T>), Failure> {
    let train = parse(corpus_text).map_err(|e| Failure::from(e).in_file(corpus))?;
    if train.is_empty() {
        eprintln!(
            "latlm: warning: {} is empty; the model is uniform over the declared vocabulary",
            corpus.display()
        );
    }
    match heldout_text {
        Some(text) => {
            let held = parse(text)
                .map_err(|e| Failure::from(e).in_file(cfg.heldout.as_deref().unwrap_or(Path::new("heldout"))))?;
            Ok((train, held))
        }
        None => Ok(split_tail(train, cfg.heldout_fraction.unwrap_or(0.0))),
    }
}

fn node_label(lattice: &Lattice, node: usize) -> String {
    let n = lattice.node(node);
    let s = lattice.schema();
    format!("{} | {}", s.describe(n.outcome), s.describe(n.context))
}

fn custom_observations(lattice: &Lattice, text: &str) -> lattice_lm::Result<Vec<Observation>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let q = ConditionalQuery::parse(lattice.schema().clone(), line).map_err(|e| lattice_lm::Error::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(Observation::new(q));
    }
    Ok(out)
}

fn load_spec(path: &Path) -> Result<Lattice, Failure> {
    let spec: LatticeSpec = serde_json::from_str(&read_file(path)?)
        .map_err(|e| Failure::data(format!("bad lattice spec: {e}")).in_file(path))?;
    spec.to_lattice().map_err(|e| Failure::from(e).in_file(path))
}

pub fn train(args: TrainArgs, out: &mut impl Write) -> CmdResult {
    let cfg = TrainConfig::resolve(&args)?;
    let task = cfg.task.ok_or_else(|| Failure::usage("no task given (--task or \"task\" in the config)"))?;
    let corpus = cfg
        .corpus
        .clone()
        .ok_or_else(|| Failure::usage("no corpus given (--corpus or \"corpus\" in the config)"))?;
    if let Some(h) = &cfg.heldout {
        if same_file(h, &corpus) {
            return Err(Failure::data(format!(
                "held-out file {} is the training corpus; held-out data must not overlap training data",
                h.display()
            )));
        }
    }
    let out_path = cfg.out.clone().unwrap_or_else(|| PathBuf::from("model.json"));
    let corpus_text = read_file(&corpus)?;
    let heldout_text = cfg.heldout.as_deref().map(read_file).transpose()?;
    let mut config = ModelConfig::default();
    if let Some(k) = cfg.k {
        config.k = k;
    }
    config.node_k = cfg.node_k.clone();
    if let Some(u) = cfg.uniform_fallback {
        config.uniform_fallback = u;
    }

    let (mut model, heldout, info): (Model64, Vec<Observation>, TaskInfo) = match task {
        TaskKind::Ngram => {
            let order = cfg.order.unwrap_or(3);
            if order == 0 {
                return Err(Failure::usage("order must be at least 1"));
            }
            let (tr, held) = load_units(&cfg, &corpus, &corpus_text, heldout_text.as_deref(), |t| {
                ngram::read_sentences(t.as_bytes())
            })?;
            let extra = cfg
                .vocab
                .iter()
                .map(|w| Term::new(w.as_str()))
                .collect::<lattice_lm::Result<Vec<_>>>()?;
            let model = ngram::build_model(&tr, order, config, &extra)?;
            let schema = model.lattice().schema().clone();
            let mut obs = Vec::new();
            for s in &held {
                obs.extend(ngram::sentence_observations(&schema, s, order)?);
            }
            (model, obs, TaskInfo::Ngram { order })
        }
        TaskKind::Ppattach => {
            let (tr, held) = load_units(&cfg, &corpus, &corpus_text, heldout_text.as_deref(), |t| {
                pp::read_records(t.as_bytes())
            })?;
            let model = pp::build_model(pp::lattice(), &tr, config)?;
            let obs = pp::observations(model.lattice().schema(), &held)?;
            (model, obs, TaskInfo::Ppattach)
        }
        TaskKind::Syncdep => {
            let (tr, held) = load_units(&cfg, &corpus, &corpus_text, heldout_text.as_deref(), |t| {
                sync::read_pairs(t.as_bytes())
            })?;
            let model = sync::build_model(&tr, config)?;
            let obs = sync::observations(model.lattice().schema(), &held)?;
            (model, obs, TaskInfo::Syncdep)
        }
        TaskKind::Custom => {
            let spec = cfg
                .lattice
                .as_deref()
                .ok_or_else(|| Failure::usage("custom task needs a lattice spec (--lattice)"))?;
            let lattice = load_spec(spec)?;
            let (tr, held) = load_units(&cfg, &corpus, &corpus_text, heldout_text.as_deref(), |t| {
                custom_observations(&lattice, t)
            })?;
            let mut counts: Vec<CountTable> = ingest(&tr, &lattice)?;
            for o in &cfg.count_overrides {
                if o.node >= lattice.nodes().len() {
                    return Err(Failure::data(format!("count override names missing node {}", o.node)));
                }
                let n = lattice.node(o.node);
                let text = read_file(&o.path)?;
                counts[o.node] =
                    CountTable::read_override(text.as_bytes(), lattice.schema(), o.node, n.outcome, n.context)
                        .map_err(|e| Failure::from(e).in_file(&o.path))?;
            }
            let schema = lattice.schema().clone();
            let mut model = Model64::new(lattice, counts, config)?;
            let declared = cfg
                .vocab
                .iter()
                .map(|v| Ok(ConditionalQuery::parse(schema.clone(), &format!("{v} |"))?.outcome))
                .collect::<lattice_lm::Result<Vec<_>>>()?;
            model.declare_outcomes(&declared)?;
            (model, held, TaskInfo::Custom)
        }
    };

    let needs_em = model.lattice().nodes().iter().any(|n| model.lattice().out_edges(n.id).len() > 1);
    if needs_em && !heldout.is_empty() {
        let opts = EmOptions {
            max_iters: cfg.em.max_iters,
            tol: cfg.em.tol,
        };
        let report = model.train_weights(&HeldOutSet::new(heldout.clone()), &opts)?;
        writeln!(out, "held-out log-likelihood ({} items)", heldout.len()).map_err(io)?;
        for r in &report {
            let trace: Vec<String> = r.fit.log_likelihood.iter().map(|v| format!("{v:.6}")).collect();
            let status = if r.fit.flagged {
                "flagged: no positive item, priors kept"
            } else if r.fit.converged {
                "converged"
            } else {
                "iteration limit"
            };
            writeln!(
                out,
                "  node {} [{}] {} iterations, {status}: {}",
                r.node,
                node_label(model.lattice(), r.node),
                r.fit.iterations,
                trace.join(" ")
            )
            .map_err(io)?;
        }
    } else if needs_em {
        writeln!(out, "no held-out data; edge weights keep their priors").map_err(io)?;
    }

    writeln!(out, "edge weights").map_err(io)?;
    let lattice = model.lattice();
    for node in lattice.nodes() {
        let edges = lattice.out_edges(node.id);
        if edges.is_empty() {
            continue;
        }
        let ws: Vec<String> = edges
            .iter()
            .map(|&e| format!("e{e}={}", model.weights().get(e)))
            .collect();
        writeln!(out, "  node {} [{}]: {}", node.id, node_label(lattice, node.id), ws.join(" ")).map_err(io)?;
    }

    let mut hashes = BTreeMap::new();
    hashes.insert(file_key(&corpus), sha256(&corpus_text));
    if let (Some(p), Some(t)) = (&cfg.heldout, &heldout_text) {
        hashes.insert(file_key(p), sha256(t));
    }
    let provenance = Provenance {
        corpus_hashes: hashes,
        k: model.config().k,
        seed: cfg.seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    ModelFile::from_model(&model, info, provenance)
        .save(&out_path)
        .map_err(|e| Failure::from(e).in_file(&out_path))?;
    writeln!(out, "wrote {}", out_path.display()).map_err(io)?;
    Ok(())
}

fn load_model(path: &Path) -> Result<(ModelFile, Model64), Failure> {
    let file = ModelFile::load(path).map_err(|e| Failure::from(e).in_file(path))?;
    let model = file.to_model().map_err(|e| Failure::from(e).in_file(path))?;
    Ok((file, model))
}

pub fn query(args: QueryArgs, out: &mut impl Write) -> CmdResult {
    let (_, model) = load_model(&args.model)?;
    let lattice = model.lattice();
    let q = ConditionalQuery::parse(lattice.schema().clone(), &args.query)
        .map_err(|e| Failure::data(format!("malformed query: {e}")))?;
    let node = args.node.unwrap_or(model.root());
    if node >= lattice.nodes().len() {
        return Err(Failure::data(format!("model has no node {node}")));
    }
    let n = lattice.node(node);
    let q = if q.outcome.assigned() == n.outcome && q.context.assigned() == n.context {
        q
    } else {
        model.query_at(node, &q)?
    };
    let mode = match args.mode {
        Mode::Mixture => CombineMode::Mixture,
        Mode::MaxPath => CombineMode::MaxPath,
    };
    let trace = model.explain(mode, node, &q)?;
    writeln!(out, "p = {}", trace.value).map_err(io)?;
    write!(out, "{trace}").map_err(io)?;
    Ok(())
}

fn task_of(info: &TaskInfo) -> TaskKind {
    match info {
        TaskInfo::Ngram { .. } => TaskKind::Ngram,
        TaskInfo::Ppattach => TaskKind::Ppattach,
        TaskInfo::Syncdep => TaskKind::Syncdep,
        TaskInfo::Custom => TaskKind::Custom,
    }
}

pub fn eval(args: EvalArgs, out: &mut impl Write) -> CmdResult {
    let (file, model) = load_model(&args.model)?;
    let trained = task_of(&file.task);
    let task = args.task.unwrap_or(trained);
    if task != trained {
        return Err(Failure::data(format!(
            "model was trained for {trained:?}, not {task:?}"
        )));
    }
    let text = read_file(&args.test)?;
    let in_test = |e: lattice_lm::Error| Failure::from(e).in_file(&args.test);
    match &file.task {
        TaskInfo::Ngram { order } => {
            let sents = ngram::read_sentences(text.as_bytes()).map_err(in_test)?;
            let p = ngram::perplexity(&model, &sents, *order).map_err(in_test)?;
            writeln!(out, "positions {}", p.positions).map_err(io)?;
            writeln!(out, "oov {}", p.oov).map_err(io)?;
            writeln!(out, "log-prob {}", p.log_prob).map_err(io)?;
            writeln!(out, "perplexity {}", p.perplexity).map_err(io)?;
        }
        TaskInfo::Ppattach => {
            let recs = pp::read_records(text.as_bytes()).map_err(in_test)?;
            let r = pp::evaluate_pp(&model, &recs).map_err(in_test)?;
            writeln!(out, "records {}", r.records).map_err(io)?;
            writeln!(out, "{:<10} {:<10} {:<16} {:<10} {:<10}", "mixture", "max-path", "collins-brooks", "mle-only", "majority")
                .map_err(io)?;
            writeln!(
                out,
                "{:<10.4} {:<10.4} {:<16.4} {:<10.4} {:<10.4}",
                r.mixture, r.max_path, r.collins_brooks, r.mle_only, r.majority
            )
            .map_err(io)?;
        }
        TaskInfo::Syncdep => {
            let pairs = sync::read_pairs(text.as_bytes()).map_err(in_test)?;
            let r = sync::evaluate_sync(&model, &pairs).map_err(in_test)?;
            writeln!(out, "pairs {}", r.pairs).map_err(io)?;
            writeln!(out, "oov {}", r.oov).map_err(io)?;
            writeln!(out, "mean-log-prob {}", r.mean_log_prob).map_err(io)?;
        }
        TaskInfo::Custom => {
            let obs = custom_observations(model.lattice(), &text).map_err(in_test)?;
            if obs.is_empty() {
                return Err(in_test(lattice_lm::Error::EmptyInput("no queries to evaluate".into())));
            }
            let mut total = 0.0;
            for (i, o) in obs.iter().enumerate() {
                let p = model.prob(model.root(), &o.query)?;
                if p <= 0.0 {
                    return Err(in_test(lattice_lm::Error::ZeroProbability { position: i }));
                }
                total += p.ln();
            }
            writeln!(out, "queries {}", obs.len()).map_err(io)?;
            writeln!(out, "mean-log-prob {}", total / obs.len() as f64).map_err(io)?;
        }
    }
    Ok(())
}

fn builtin(name: &str) -> Result<Lattice, Failure> {
    let bad = || Failure::usage(format!("unknown builder {name:?}; use chain:N, ppattach or sync:RxC"));
    if name == "ppattach" {
        return Ok(pp::lattice());
    }
    if let Some(n) = name.strip_prefix("chain:") {
        return Ok(build_ngram_chain(n.parse().map_err(|_| bad())?)?);
    }
    if let Some(d) = name.strip_prefix("sync:") {
        let (r, c) = d.split_once('x').ok_or_else(bad)?;
        return Ok(build_sync_split(r.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?)?);
    }
    Err(bad())
}

pub fn export(args: ExportArgs, out: &mut impl Write) -> CmdResult {
    let lattice = match (&args.model, &args.spec, &args.builder) {
        (Some(m), None, None) => load_model(m)?.1.lattice().clone(),
        (None, Some(s), None) => load_spec(s)?,
        (None, None, Some(b)) => builtin(b)?,
        _ => return Err(Failure::usage("give exactly one of --model, --spec or --builder")),
    };
    if args.dot {
        write!(out, "{}", export_dot(&lattice)).map_err(io)?;
    } else {
        let json = serde_json::to_string_pretty(&LatticeSpec::from_lattice(&lattice))
            .map_err(|e| Failure::Internal(e.to_string()))?;
        writeln!(out, "{json}").map_err(io)?;
    }
    Ok(())
}

pub fn gen_synth(args: GenSynthArgs, out: &mut impl Write) -> CmdResult {
    let lines: Vec<String> = match args.task {
        SynthTask::Ppattach => synth::generate_pp(args.seed, args.size).iter().map(|r| r.to_line()).collect(),
        SynthTask::Syncdep => synth::generate_sync(args.seed, args.size).iter().map(|p| p.to_line()).collect(),
    };
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    match &args.out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::data(format!("cannot write {}: {e}", p.display())))?,
        None => out.write_all(text.as_bytes()).map_err(io)?,
    }
    Ok(())
}
