// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use log::info;
use neurofunc::localization::{
    func_score_table_with, partition_similarity, prune_and_eval, random_baseline,
    summarize_scores, top_fraction_all, FuncScoreTable, ScoreOptions,
};
use neurofunc::model::{
    build_planted_model, corpus_loss, planted_corpus, corpus_manifest_rows, ModelConfig,
    PlantLayout, PlantSpec, ReferenceModel,
};
use neurofunc::sparsity::{
    default_cdf_grid, default_sweep_fractions, indicator_cdf, indicator_with_norms, mask_sweep,
    random_mask_sweep, CdfAccumulator, IndicatorCdf, IndicatorKind,
};
use neurofunc::trace::{
    ingest_manifest, instances_with, read_trace, write_manifest, write_trace, ActivationTrace,
    ByteTokenizer, Functionality, FunctionalityTaxonomy, IdTokenizer, IngestOptions,
    IngestReport, InstanceRecord, Tokenizer, TraceBuilder,
};
use serde_json::json;

use crate::args::*;
use crate::output::{columns, num, opt_num, parent_dir, sha256_file, RunRecorder, Table};

fn load_model(path: &Path) -> Result<ReferenceModel> {
    ReferenceModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn layout_path(model_out: &Path) -> std::path::PathBuf {
    model_out.with_extension("layout.json")
}

pub fn gen_model(args: &GenModelArgs) -> Result<()> {
    let mut run = RunRecorder::new("gen-model", args, Some(args.seed))?;
    let mut config = ModelConfig::new(
        args.layers,
        args.d_model,
        args.d_ff,
        args.vocab,
        args.heads,
        args.variant.into(),
        args.seed,
    );
    if let Some(a) = args.activation {
        config = config.with_activation(a.into());
    }
    config.validate()?;
    let plant = match (&args.plant_file, args.plant_per_group) {
        (Some(path), _) => {
            run.input(path)?;
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let plant: PlantSpec = serde_json::from_reader(BufReader::new(file))
                .with_context(|| format!("parsing plant spec {}", path.display()))?;
            plant
        }
        (None, Some(n)) => PlantSpec::uniform(&config, &Functionality::ALL, n, args.plant_seed)?,
        (None, None) => PlantSpec::empty(),
    };
    let planted = build_planted_model(config, &plant, args.seed)?;
    ensure_dir(&parent_dir(&args.out))?;
    planted.model.save(&args.out)?;
    run.output(&args.out);
    if let Some(layout) = &planted.layout {
        let path = layout_path(&args.out);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        serde_json::to_writer_pretty(BufWriter::new(file), layout)?;
        run.output(&path);
    }
    run.results(json!({ "model_sha256": sha256_file(&args.out)? }))?;
    run.write(&parent_dir(&args.out), "gen-model")?;
    info!("wrote {}", args.out.display());
    Ok(())
}

pub fn gen_corpus(args: &GenCorpusArgs) -> Result<()> {
    let mut run = RunRecorder::new("gen-corpus", args, Some(args.seed))?;
    run.input(&args.layout)?;
    let file = File::open(&args.layout).with_context(|| format!("opening {}", args.layout.display()))?;
    let layout: PlantLayout = serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("parsing layout {}", args.layout.display()))?;
    let corpus = planted_corpus(&layout, args.per_functionality, args.seed);
    ensure_dir(&parent_dir(&args.out))?;
    let out = File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_manifest(BufWriter::new(out), &corpus_manifest_rows(&corpus))?;
    run.output(&args.out);
    run.results(json!({ "instances": corpus.len() }))?;
    run.write(&parent_dir(&args.out), "gen-corpus")?;
    Ok(())
}

struct Loaded {
    model: ReferenceModel,
    corpus: Vec<InstanceRecord>,
    report: IngestReport,
    taxonomy: FunctionalityTaxonomy,
}

fn load_corpus(args: &CorpusArgs, run: &mut RunRecorder) -> Result<Loaded> {
    run.input(&args.model)?;
    let model = load_model(&args.model)?;
    let corpus_file =
        File::open(&args.manifest).with_context(|| format!("opening {}", args.manifest.display()))?;
    run.input(&args.manifest)?;
    let taxonomy = FunctionalityTaxonomy::standard();
    let tokenizer: Box<dyn Tokenizer> = match args.tokenizer {
        TokenizerArg::Ids => Box::new(IdTokenizer),
        TokenizerArg::Bytes => Box::new(ByteTokenizer {
            vocab_size: model.config().vocab_size,
        }),
    };
    let options = IngestOptions::new(args.cap, args.seed);
    let (corpus, report) =
        ingest_manifest(BufReader::new(corpus_file), &taxonomy, &options, tokenizer.as_ref())
            .with_context(|| format!("ingesting {}", args.manifest.display()))?;
    info!(
        "ingested {} rows: {} retained, {} malformed, {} multi-label, {} unmapped",
        report.rows,
        corpus.len(),
        report.malformed,
        report.dropped_multi_label,
        report.dropped_unmapped
    );
    Ok(Loaded {
        model,
        corpus,
        report,
        taxonomy,
    })
}

fn capture_trace(loaded: &Loaded, args: &CorpusArgs, per_token: bool) -> Result<ActivationTrace> {
    let cfg = loaded.model.config();
    let provenance = format!(
        "model sha256:{} manifest sha256:{} taxonomy:{} cap:{} seed:{}",
        sha256_file(&args.model)?,
        sha256_file(&args.manifest)?,
        loaded.taxonomy.version(),
        args.cap,
        args.seed
    );
    let mut builder = TraceBuilder::new(cfg.n_layers, cfg.d_ff, provenance, per_token);
    for inst in &loaded.corpus {
        let acts = loaded
            .model
            .capture(&inst.prompt_tokens)
            .with_context(|| format!("forward pass for instance `{}`", inst.id))?;
        builder.push(inst, &acts)?;
    }
    Ok(builder.finish()?)
}

pub fn trace(args: &TraceArgs) -> Result<()> {
    let mut run = RunRecorder::new("trace", args, Some(args.corpus.seed))?;
    let loaded = load_corpus(&args.corpus, &mut run)?;
    let trace = capture_trace(&loaded, &args.corpus, args.per_token)?;
    ensure_dir(&parent_dir(&args.out))?;
    write_trace(&trace, &args.out)?;
    // re-read to validate what was written
    read_trace(&args.out).with_context(|| format!("re-reading {}", args.out.display()))?;
    run.output(&args.out);
    run.results(json!({
        "instances": trace.len(),
        "label_counts": trace.label_counts(),
        "ingest": loaded.report,
    }))?;
    run.write(&parent_dir(&args.out), "trace")?;
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let mut run = RunRecorder::new("eval", args, Some(args.corpus.seed))?;
    let loaded = load_corpus(&args.corpus, &mut run)?;
    let loss = corpus_loss(&loaded.model, &loaded.corpus, None)?;
    ensure_dir(&parent_dir(&args.out))?;
    let mut table = Table::create(
        &args.out,
        "eval",
        &columns(["functionality", "instances", "tokens", "loss", "ppl"]),
    )?;
    for f in Functionality::ALL {
        let s = loss.functionality(f);
        let n = loaded.corpus.iter().filter(|i| i.functionality() == Some(f)).count();
        table.row(&[
            f.name().into(),
            n.to_string(),
            s.tokens.to_string(),
            opt_num(s.mean()),
            opt_num(s.perplexity()),
        ])?;
    }
    table.row(&[
        "overall".into(),
        loaded.corpus.len().to_string(),
        loss.overall.tokens.to_string(),
        opt_num(loss.overall.mean()),
        opt_num(loss.overall.perplexity()),
    ])?;
    run.output(&table.finish()?);
    let mean = loss.mean().expect("nonempty corpus");
    println!("loss\t{}\nppl\t{}", num(mean), num(mean.exp()));
    run.results(json!({ "loss": mean, "ppl": mean.exp() }))?;
    run.write(&parent_dir(&args.out), "eval")?;
    Ok(())
}

fn write_cdf(path: &Path, cdf: &IndicatorCdf) -> Result<()> {
    let mut header = columns(["threshold", "overall"]);
    header.extend((0..cdf.per_layer.len()).map(|l| format!("layer_{l}")));
    let mut table = Table::create(path, "cdf", &header)?;
    for (i, g) in cdf.overall.grid.iter().enumerate() {
        let mut row = vec![num(*g), num(cdf.overall.cumulative_fraction[i])];
        row.extend(cdf.per_layer.iter().map(|c| num(c.cumulative_fraction[i])));
        table.row(&row)?;
    }
    table.finish()?;
    Ok(())
}

fn cdf_from_trace(
    trace: &ActivationTrace,
    model: Option<&ReferenceModel>,
    kind: IndicatorKind,
    grid: &[f64],
) -> Result<IndicatorCdf> {
    ensure!(trace.has_per_token(), "trace has no per-token blocks; re-run `trace --per-token`");
    let mut acc = CdfAccumulator::new(grid, trace.n_layers())?;
    let ones = vec![1.0f32; trace.d_ff()];
    if let Some(m) = model {
        ensure!(
            m.config().n_layers == trace.n_layers() && m.config().d_ff == trace.d_ff(),
            "model shape does not match the trace"
        );
    }
    for (i, inst) in trace.instances().iter().enumerate() {
        for t in 0..inst.n_prompt_tokens {
            for layer in 0..trace.n_layers() {
                let acts = trace.per_token(i, t, layer).expect("per-token block present");
                let norms = match (kind, model) {
                    (IndicatorKind::Activation, _) => ones.as_slice(),
                    (IndicatorKind::OutputMagnitude, Some(m)) => m.output_column_norms(layer),
                    (IndicatorKind::OutputMagnitude, None) => {
                        bail!("output_magnitude CDF from a trace needs --model for column norms")
                    }
                };
                acc.add_token(layer, &indicator_with_norms(acts, norms, IndicatorKind::OutputMagnitude))?;
            }
        }
    }
    Ok(acc.finish(kind)?)
}

pub fn sparsity(args: &SparsityArgs) -> Result<()> {
    let mut run = RunRecorder::new("sparsity", args, Some(args.seed))?;
    ensure_dir(&args.out)?;
    let corpus_args = || -> Result<CorpusArgs> {
        match (&args.model, &args.manifest) {
            (Some(model), Some(manifest)) => Ok(CorpusArgs {
                model: model.clone(),
                manifest: manifest.clone(),
                cap: args.cap,
                seed: args.seed,
                tokenizer: args.tokenizer,
            }),
            _ => bail!("--model and --manifest are required unless --trace is given"),
        }
    };
    let mut results = serde_json::Map::new();
    match args.mode {
        SparsityMode::Cdf => {
            let grid = args.fractions.clone().unwrap_or_else(default_cdf_grid);
            let from_trace = args.trace.as_ref().map(|p| -> Result<_> {
                run.input(p)?;
                read_trace(p).with_context(|| format!("reading {}", p.display()))
            });
            let (trace, loaded) = match from_trace {
                Some(t) => {
                    let model = args.model.as_ref().map(|p| -> Result<_> {
                        run.input(p)?;
                        load_model(p)
                    });
                    (Some((t?, model.transpose()?)), None)
                }
                None => (None, Some(load_corpus(&corpus_args()?, &mut run)?)),
            };
            for kind in args.kind.kinds() {
                let cdf = match (&trace, &loaded) {
                    (Some((t, m)), _) => cdf_from_trace(t, m.as_ref(), kind, &grid)?,
                    (None, Some(l)) => indicator_cdf(&l.model, &l.corpus, kind, &grid)?,
                    (None, None) => unreachable!("one source is always loaded"),
                };
                let path = args.out.join(format!("cdf.{kind}.tsv"));
                write_cdf(&path, &cdf)?;
                run.output(&path);
                let below = cdf.overall.grid.iter().position(|g| *g >= 0.2 - 1e-12);
                results.insert(
                    kind.to_string(),
                    json!({ "fraction_at_or_below_0.2": below.map(|i| cdf.overall.cumulative_fraction[i]) }),
                );
            }
            run.results(results)?;
            run.write(&args.out, "sparsity-cdf")?;
        }
        SparsityMode::Sweep => {
            ensure!(args.trace.is_none(), "sweep mode needs --model and --manifest, not --trace");
            let loaded = load_corpus(&corpus_args()?, &mut run)?;
            let fractions = args.fractions.clone().unwrap_or_else(default_sweep_fractions);
            let seeds: Vec<u64> = (0..args.random_seeds).map(|s| args.seed.wrapping_add(s)).collect();
            let random = if seeds.is_empty() {
                None
            } else {
                Some(random_mask_sweep(&loaded.model, &loaded.corpus, &fractions, &seeds)?)
            };
            for kind in args.kind.kinds() {
                let sweep = mask_sweep(&loaded.model, &loaded.corpus, kind, &fractions)?;
                let mut header = columns(["fraction", "loss", "ppl"]);
                header.extend(Functionality::ALL.iter().map(|f| format!("loss_{f}")));
                if random.is_some() {
                    header.push("random_loss".into());
                }
                let path = args.out.join(format!("sweep.{kind}.tsv"));
                let mut table = Table::create(&path, "sweep", &header)?;
                for (i, f) in sweep.fractions.iter().enumerate() {
                    let mut row = vec![num(*f), num(sweep.loss[i]), num(sweep.loss[i].exp())];
                    row.extend(sweep.per_functionality[i].iter().map(|v| opt_num(*v)));
                    if let Some(r) = &random {
                        row.push(num(r[i]));
                    }
                    table.row(&row)?;
                }
                run.output(&table.finish()?);
                let tolerated = sweep.tolerated_fraction(args.tolerance);
                println!("{kind}\tno_degradation_fraction\t{tolerated}");
                results.insert(
                    kind.to_string(),
                    json!({ "no_degradation_fraction": tolerated, "tolerance": args.tolerance }),
                );
            }
            run.results(results)?;
            run.write(&args.out, "sparsity-sweep")?;
        }
    }
    Ok(())
}

fn score_table(common: &LocalizeCommon, run: &mut RunRecorder) -> Result<(ActivationTrace, FuncScoreTable)> {
    run.input(&common.trace)?;
    let trace = read_trace(&common.trace).with_context(|| format!("reading {}", common.trace.display()))?;
    let options = ScoreOptions {
        allow_missing: common.allow_missing,
    };
    let table = func_score_table_with(&trace, &FunctionalityTaxonomy::standard(), options)?;
    for f in &table.undefined {
        log::warn!("no instances of `{f}` in the trace; its scores are undefined");
    }
    Ok((trace, table))
}

pub fn localize(args: &LocalizeArgs) -> Result<()> {
    match &args.action {
        LocalizeAction::Scores { common, seed } => {
            let mut run = RunRecorder::new("localize-scores", args, Some(*seed))?;
            ensure_dir(&common.out)?;
            let (trace, table) = score_table(common, &mut run)?;
            let mut header = columns(["layer", "neuron"]);
            header.extend(Functionality::ALL.iter().map(|f| f.name().to_string()));
            let path = common.out.join("scores.tsv");
            let mut t = Table::create(&path, "scores", &header)?;
            for layer in 0..table.n_layers() {
                for neuron in 0..table.d_ff() {
                    let mut row = vec![layer.to_string(), neuron.to_string()];
                    row.extend(Functionality::ALL.iter().map(|&f| num(table.get(layer, neuron, f))));
                    t.row(&row)?;
                }
            }
            run.output(&t.finish()?);
            let path = common.out.join("score_summary.tsv");
            let mut t = Table::create(
                &path,
                "score_summary",
                &columns(["layer", "functionality", "best", "best_5_permille", "mean", "random_baseline"]),
            )?;
            for s in summarize_scores(&table, &trace, *seed) {
                t.row(&[
                    s.layer.to_string(),
                    s.functionality.name().into(),
                    num(s.best),
                    num(s.best_5_permille),
                    num(s.mean),
                    opt_num(s.random_baseline),
                ])?;
            }
            run.output(&t.finish()?);
            let sets = top_fraction_all(&table, common.fraction)?;
            let path = common.out.join("selection.json");
            let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            serde_json::to_writer_pretty(BufWriter::new(file), &sets)?;
            run.output(&path);
            run.write(&common.out, "localize-scores")?;
        }
        LocalizeAction::Prune { common, corpus } => {
            let mut run = RunRecorder::new("localize-prune", args, Some(corpus.seed))?;
            ensure_dir(&common.out)?;
            let (_, table) = score_table(common, &mut run)?;
            let sets = top_fraction_all(&table, common.fraction)?;
            let loaded = load_corpus(corpus, &mut run)?;
            let matrix = prune_and_eval(&loaded.model, &sets, &loaded.corpus)?;
            let mut header = columns(["pruned"]);
            header.extend(Functionality::ALL.iter().map(|f| f.name().to_string()));
            let path = common.out.join("perturbation.tsv");
            let mut t = Table::create(&path, "perturbation", &header)?;
            let mut origin = vec!["origin_ppl".to_string()];
            origin.extend(matrix.origin_ppl.iter().map(|v| num(*v)));
            t.row(&origin)?;
            for f in Functionality::ALL {
                let mut row = vec![f.name().to_string()];
                row.extend(Functionality::ALL.iter().map(|&g| num(matrix.percent(f, g))));
                t.row(&row)?;
            }
            run.output(&t.finish()?);
            let diagonal = Functionality::ALL.iter().filter(|&&f| matrix.row_argmax(f) == f).count();
            run.results(json!({ "diagonal_row_maxima": diagonal, "values_unit": "percent" }))?;
            run.write(&common.out, "localize-prune")?;
        }
        LocalizeAction::Partition {
            common,
            baseline,
            baseline_trials,
            seed,
        } => {
            let mut run = RunRecorder::new("localize-partition", args, Some(*seed))?;
            ensure_dir(&common.out)?;
            let (trace, table) = score_table(common, &mut run)?;
            let sets = top_fraction_all(&table, common.fraction)?;
            let sim = partition_similarity(&sets)?;
            let mut header = columns(["functionality"]);
            header.extend(Functionality::ALL.iter().map(|f| f.name().to_string()));
            let path = common.out.join("partition.tsv");
            let mut t = Table::create(&path, "partition", &header)?;
            for f in Functionality::ALL {
                let mut row = vec![f.name().to_string()];
                row.extend(Functionality::ALL.iter().map(|&g| num(sim.get(f.index(), g.index()))));
                t.row(&row)?;
            }
            run.output(&t.finish()?);
            let mut results = json!({ "max_off_diagonal": sim.max_off_diagonal() });
            if *baseline {
                let b = random_baseline(trace.d_ff(), common.fraction, *baseline_trials, *seed)?;
                let path = common.out.join("partition_baseline.tsv");
                let mut t = Table::create(
                    &path,
                    "partition_baseline",
                    &columns(["fraction", "d_ff", "k", "trials", "mean", "std", "expected"]),
                )?;
                t.row(&[
                    num(common.fraction),
                    trace.d_ff().to_string(),
                    b.k.to_string(),
                    b.trials.to_string(),
                    num(b.mean),
                    num(b.std),
                    num(b.expected),
                ])?;
                run.output(&t.finish()?);
                println!("random baseline\tmean {:.4}\texpected {:.4}", b.mean, b.expected);
                results["random_baseline"] = json!({ "mean": b.mean, "std": b.std, "expected": b.expected });
            }
            for f in Functionality::ALL {
                if instances_with(&trace, f) == 0 {
                    log::warn!("`{f}` has no instances in the trace");
                }
            }
            run.results(results)?;
            run.write(&common.out, "localize-partition")?;
        }
    }
    Ok(())
}
