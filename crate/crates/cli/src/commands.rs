use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use glhg_core::corpus::{self, load_corpus, LabelSet};
use glhg_core::encoders::ProviderKind;
use glhg_core::metrics::{evaluate, EvalReport};
use glhg_core::model::{Network, Prepared};
use glhg_core::numerics::{
    grad_check, Coordinates, GradCheckOptions, GradCheckReport, ParamStore, Tape,
};
use glhg_core::training::{
    example_loss, load_dataset, load_labels, Checkpoint, Dataset, StepLog, TrainConfig, Trainer,
};
use glhg_core::Error;

use crate::manifest::{content_hash, ensure_absent, sha256_hex, write_new, RunManifest};
use crate::{CliError, Overrides};

/// Offset added to analytic gradients by `gradcheck --corrupt`.
pub const CORRUPTION: f64 = 0.1;

fn manifest_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn build_vocab(
    corpus: &Path,
    labels: Option<&Path>,
    min_freq: usize,
    out: &Path,
    force: bool,
) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("build-vocab");
    ensure_absent(out, force)?;
    let labels = match labels {
        Some(p) => {
            manifest.inputs.push(p.to_path_buf());
            LabelSet::load(p)?
        }
        None => LabelSet::esconv(),
    };
    let dialogues = load_corpus(corpus, &labels)?;
    let vocab = corpus::build_vocab(&dialogues, min_freq)?;
    write_new(out, vocab.to_tsv().as_bytes(), force)?;
    log::info!(
        "{} tokens ({} reserved) written to {}",
        vocab.len(),
        glhg_core::corpus::NUM_RESERVED,
        out.display()
    );
    manifest.inputs.insert(0, corpus.to_path_buf());
    manifest.outputs.push(out.to_path_buf());
    manifest.finish(&manifest_path(out), force)
}

fn load_config(path: &Path, overrides: &Overrides) -> Result<(TrainConfig, String), CliError> {
    let hash = sha256_hex(&read(path)?);
    let mut config = TrainConfig::load(path)?;
    overrides.apply(&mut config);
    config.validate()?;
    Ok((config, hash))
}

pub fn train(
    config_path: &Path,
    overrides: &Overrides,
    out: &Path,
    force: bool,
) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("train");
    let (config, config_hash) = load_config(config_path, overrides)?;
    log::info!("seed {}", config.seed);
    if out.exists()
        && !force
        && std::fs::read_dir(out)
            .map_err(|e| CliError::io(out, e))?
            .next()
            .is_some()
    {
        return Err(CliError::OutputExists(out.to_path_buf()));
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;

    let labels = load_labels(&config)?;
    let data = load_dataset(&config, labels, None)?;
    log::info!(
        "{} dialogues, {} examples, vocabulary {}",
        data.dialogues.len(),
        data.examples.len(),
        data.vocab.len()
    );
    let mut trainer = Trainer::new(
        config.clone(),
        &data.vocab,
        data.labels.len(),
        &data.examples,
    )?;
    log::info!(
        "{} parameters in {} tensors",
        trainer.store.num_scalars(),
        trainer.store.len()
    );

    let snapshot = out.join("config.toml");
    write_new(&snapshot, config.to_toml().as_bytes(), force)?;
    let vocab_path = out.join("vocab.tsv");
    write_new(&vocab_path, data.vocab.to_tsv().as_bytes(), force)?;
    let log_path = out.join("train_log.tsv");
    ensure_absent(&log_path, force)?;
    let mut log_file =
        BufWriter::new(File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?);
    writeln!(log_file, "{}", StepLog::HEADER).map_err(|e| CliError::io(&log_path, e))?;

    let mut checkpoints = Vec::new();
    let mut last_bytes = Vec::new();
    {
        let log_path = log_path.clone();
        let mut on_step = |s: &StepLog| -> glhg_core::Result<()> {
            writeln!(log_file, "{}", s.line()).map_err(|e| Error::Io {
                path: log_path.clone(),
                source: e,
            })?;
            if s.step == 1 || s.step.is_multiple_of(50) {
                log::info!(
                    "step {} L1 {:.4} L2 {:.4} L {:.4} lr {:.3e}",
                    s.step,
                    s.l1,
                    s.l2,
                    s.loss,
                    s.lr
                );
            }
            Ok(())
        };
        let labels = &data.labels;
        let vocab = &data.vocab;
        let mut on_epoch = |t: &Trainer| -> glhg_core::Result<()> {
            let ckpt = t.checkpoint(labels, vocab);
            let path = out.join(format!("epoch-{:04}.ckpt", t.epoch));
            if path.exists() && !force {
                return Err(Error::Validation(format!(
                    "refusing to overwrite {}",
                    path.display()
                )));
            }
            ckpt.save(&path)?;
            last_bytes = ckpt.to_bytes();
            log::info!("epoch {} checkpoint {}", t.epoch, path.display());
            checkpoints.push(path);
            Ok(())
        };
        trainer.fit(&mut on_step, &mut on_epoch)?;
    }
    log_file.flush().map_err(|e| CliError::io(&log_path, e))?;
    let final_path = out.join("final.ckpt");
    write_new(&final_path, &last_bytes, force)?;

    manifest.config_path = Some(config_path.to_path_buf());
    manifest.config_hash = Some(config_hash);
    manifest.seed = Some(config.seed);
    manifest.inputs = [
        &config.corpus,
        &config.labels,
        &config.vocab,
        &config.intentions,
    ]
    .into_iter()
    .filter(|p| !p.as_os_str().is_empty())
    .cloned()
    .collect();
    manifest.outputs = [snapshot, vocab_path, log_path]
        .into_iter()
        .chain(checkpoints)
        .chain([final_path])
        .collect();
    manifest.checkpoint_hash = Some(content_hash(&last_bytes));
    manifest.finish(&out.join("manifest.json"), force)
}

struct Loaded {
    checkpoint: Checkpoint,
    checkpoint_hash: String,
    net: Network,
    store: ParamStore,
    data: Dataset,
    prepared: Vec<Prepared>,
}

impl Loaded {
    fn references(&self) -> Vec<String> {
        self.data
            .examples
            .iter()
            .map(|e| {
                self.data.dialogues[e.dialogue_index].turns[e.target_turn]
                    .text
                    .clone()
            })
            .collect()
    }

    fn config_hash(&self) -> String {
        sha256_hex(self.checkpoint.config.to_toml().as_bytes())
    }
}

fn load_for_inference(
    checkpoint: &Path,
    corpus: &Path,
    provider: Option<ProviderKind>,
) -> Result<Loaded, CliError> {
    let bytes = read(checkpoint)?;
    let ckpt = Checkpoint::from_bytes(&bytes)?;
    let (net, store, _) = ckpt.restore()?;
    let mut config = ckpt.config.clone();
    config.corpus = corpus.to_path_buf();
    if let Some(p) = provider {
        config.provider = p;
    }
    config.validate()?;
    let data = load_dataset(&config, ckpt.label_set()?, Some(ckpt.vocab.clone()))?;
    if data.examples.is_empty() {
        return Err(Error::Validation(format!("{} yields no examples", corpus.display())).into());
    }
    let prepared = data
        .examples
        .iter()
        .map(|e| net.prepare(e, &data.vocab))
        .collect::<glhg_core::Result<Vec<_>>>()?;
    Ok(Loaded {
        checkpoint_hash: content_hash(&bytes),
        checkpoint: ckpt,
        net,
        store,
        data,
        prepared,
    })
}

#[derive(Serialize)]
struct EvalFile<'a> {
    #[serde(flatten)]
    report: &'a EvalReport,
    checkpoint: &'a Path,
    checkpoint_hash: &'a str,
    config_hash: String,
    corpus: &'a Path,
    max_decode: usize,
}

pub fn eval(
    checkpoint: &Path,
    corpus: &Path,
    provider: Option<ProviderKind>,
    out: &Path,
    force: bool,
) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("eval");
    ensure_absent(out, force)?;
    let l = load_for_inference(checkpoint, corpus, provider)?;
    let max_decode = l.checkpoint.config.max_decode;
    let (report, _) = evaluate(
        &l.net,
        &l.store,
        &l.data.vocab,
        &l.prepared,
        &l.references(),
        max_decode,
    )?;
    let file = EvalFile {
        report: &report,
        checkpoint,
        checkpoint_hash: &l.checkpoint_hash,
        config_hash: l.config_hash(),
        corpus,
        max_decode,
    };
    let text = serde_json::to_string_pretty(&file).expect("report serializes");
    write_new(out, text.as_bytes(), force)?;
    println!(
        "examples {}  ppl {:.4}  B-1 {:.4}  B-2 {:.4}  R-L {:.4}  token acc {:.4}  class acc {:.4}",
        report.examples,
        report.ppl,
        report.bleu[0],
        report.bleu[1],
        report.rouge_l,
        report.token_accuracy,
        report.class_accuracy
    );
    manifest.config_hash = Some(l.config_hash());
    manifest.seed = Some(l.checkpoint.config.seed);
    manifest.inputs = vec![checkpoint.to_path_buf(), corpus.to_path_buf()];
    manifest.outputs = vec![out.to_path_buf()];
    manifest.checkpoint_hash = Some(l.checkpoint_hash.clone());
    manifest.finish(&manifest_path(out), force)
}

pub fn generate(
    checkpoint: &Path,
    corpus: &Path,
    provider: Option<ProviderKind>,
    out: &Path,
    force: bool,
) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("generate");
    ensure_absent(out, force)?;
    let l = load_for_inference(checkpoint, corpus, provider)?;
    let mut text = String::new();
    for ex in &l.prepared {
        let ids = l
            .net
            .respond(&l.store, ex, l.checkpoint.config.max_decode)?;
        text.push_str(&l.data.vocab.detokenize(&ids));
        text.push('\n');
    }
    write_new(out, text.as_bytes(), force)?;
    log::info!(
        "{} responses written to {}",
        l.prepared.len(),
        out.display()
    );
    manifest.config_hash = Some(l.config_hash());
    manifest.seed = Some(l.checkpoint.config.seed);
    manifest.inputs = vec![checkpoint.to_path_buf(), corpus.to_path_buf()];
    manifest.outputs = vec![out.to_path_buf()];
    manifest.checkpoint_hash = Some(l.checkpoint_hash.clone());
    manifest.finish(&manifest_path(out), force)
}

pub struct GradcheckArgs {
    pub eps: f64,
    pub samples: usize,
    pub examples: usize,
    pub tolerance: f64,
    pub corrupt: bool,
}

#[derive(Serialize)]
struct GradcheckFile<'a> {
    passed: bool,
    tolerance: f64,
    corrupted: bool,
    seconds: f64,
    parameters: usize,
    scalars: usize,
    vocab_size: usize,
    config_hash: &'a str,
    #[serde(flatten)]
    report: &'a GradCheckReport,
}

pub fn gradcheck(
    config_path: &Path,
    overrides: &Overrides,
    args: GradcheckArgs,
    out: Option<&Path>,
    force: bool,
) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("gradcheck");
    if let Some(out) = out {
        ensure_absent(out, force)?;
    }
    let (config, config_hash) = load_config(config_path, overrides)?;
    if args.examples == 0 {
        return Err(CliError::Usage("--examples must be at least 1".into()));
    }
    let labels = load_labels(&config)?;
    let data = load_dataset(&config, labels, None)?;
    let (net, store) = Network::new(
        config.model_config(data.vocab.len(), data.labels.len()),
        config.seed,
    )?;
    let prepared = data
        .examples
        .iter()
        .take(args.examples)
        .map(|e| net.prepare(e, &data.vocab))
        .collect::<glhg_core::Result<Vec<_>>>()?;
    if prepared.is_empty() {
        return Err(Error::Validation("corpus yields no examples".into()).into());
    }
    let lambda2 = config.effective_lambda2();
    let objective = |params: &ParamStore, tape: &mut Tape| {
        let mut total = None;
        for ex in &prepared {
            let parts = example_loss(
                &net,
                tape,
                params,
                ex,
                config.lambda1,
                lambda2,
                config.loss_reduction,
            )?;
            total = Some(match total {
                None => parts.total,
                Some(t) => tape.add(t, parts.total)?,
            });
        }
        Ok(tape.scale(
            total.expect("at least one example"),
            1.0 / prepared.len() as f64,
        ))
    };
    let options = GradCheckOptions {
        eps: args.eps,
        coordinates: match args.samples {
            0 => Coordinates::All,
            max => Coordinates::Sample {
                max,
                seed: config.seed,
            },
        },
        corruption: if args.corrupt { CORRUPTION } else { 0.0 },
    };
    let started = Instant::now();
    let report = grad_check(&store, objective, options)?;
    let seconds = started.elapsed().as_secs_f64();
    let passed = report.passes(args.tolerance);
    println!(
        "{}  max relative error {:.3e}  worst `{}`[{}]  {} coordinates in {} tensors  {:.1}s",
        if passed { "PASS" } else { "FAIL" },
        report.max_rel_error,
        report.worst_param,
        report.worst_index,
        report.coords_checked,
        report.per_param.len(),
        seconds
    );
    println!(
        "      max absolute error {:.3e}  objective {:.6}  roundoff floor ulp(f)/(2 eps) {:.3e}",
        report.max_abs_error,
        report.objective,
        report.roundoff_floor()
    );
    if let Some(out) = out {
        let file = GradcheckFile {
            passed,
            tolerance: args.tolerance,
            corrupted: args.corrupt,
            seconds,
            parameters: store.len(),
            scalars: store.num_scalars(),
            vocab_size: data.vocab.len(),
            config_hash: &config_hash,
            report: &report,
        };
        write_new(
            out,
            serde_json::to_string_pretty(&file)
                .expect("serializes")
                .as_bytes(),
            force,
        )?;
        manifest.config_path = Some(config_path.to_path_buf());
        manifest.config_hash = Some(config_hash.clone());
        manifest.seed = Some(config.seed);
        manifest.inputs = vec![config.corpus.clone()];
        manifest.outputs = vec![out.to_path_buf()];
        manifest.finish(&manifest_path(out), force)?;
    }
    if passed {
        Ok(())
    } else {
        Err(CliError::GradCheckFailed {
            max_rel_error: report.max_rel_error,
            param: report.worst_param,
            tolerance: args.tolerance,
        })
    }
}

fn rows(t: &glhg_core::numerics::Tensor) -> Vec<&[f64]> {
    (0..t.rows()).map(|r| t.row(r)).collect()
}

pub fn inspect_graph(
    checkpoint: &Path,
    corpus: &Path,
    example: usize,
    out: &Path,
    force: bool,
) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("inspect-graph");
    ensure_absent(out, force)?;
    let l = load_for_inference(checkpoint, corpus, None)?;
    let ex = l.prepared.get(example).ok_or_else(|| {
        CliError::Usage(format!(
            "example {example} out of range ({} examples)",
            l.prepared.len()
        ))
    })?;
    let mut tape = Tape::new();
    let src = l.net.encode(&mut tape, &l.store, ex)?;
    let view = l.net.reason(&mut tape, &l.store, ex, &src)?;
    let Some(adj) = &view.adjacency else {
        return Err(
            Error::Validation("this checkpoint has no graph (reasoner ablated)".into()).into(),
        );
    };
    let nodes: Vec<_> = (0..adj.len())
        .map(|i| json!({"index": i, "role": adj.role(i), "is_pad": !adj.is_live(i)}))
        .collect();
    // features after each layer, recomputed layer by layer
    let mut layers = Vec::new();
    let mut v = view.initial.expect("graph view has initial features");
    for (k, p) in l.net.graph.iter().enumerate() {
        let o = glhg_core::reasoner::gat_layer(
            &mut tape,
            &l.store,
            v,
            adj,
            p,
            l.net.config.activation,
        )?;
        debug_assert_eq!(tape.value(o.attention), tape.value(view.attention[k]));
        layers.push(json!({
            "layer": k + 1,
            "attention": rows(tape.value(o.attention)),
            "features": rows(tape.value(o.features)),
        }));
        v = o.features;
    }
    let dump = json!({
        "example": example,
        "max_len": l.net.config.max_len,
        "valid_len": ex.valid_len(),
        "last_seeker_span": [ex.span.start, ex.span.end],
        "window": l.net.config.window,
        "nodes": nodes,
        "edges": adj.edge_list(),
        "initial_features": rows(tape.value(view.initial.expect("present"))),
        "layers": layers,
    });
    write_new(
        out,
        serde_json::to_string_pretty(&dump)
            .expect("serializes")
            .as_bytes(),
        force,
    )?;
    manifest.config_hash = Some(l.config_hash());
    manifest.seed = Some(l.checkpoint.config.seed);
    manifest.inputs = vec![checkpoint.to_path_buf(), corpus.to_path_buf()];
    manifest.outputs = vec![out.to_path_buf()];
    manifest.checkpoint_hash = Some(l.checkpoint_hash.clone());
    manifest.finish(&manifest_path(out), force)
}
