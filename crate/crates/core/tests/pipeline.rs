// SPDX-License-Identifier: MIT OR Apache-2.0

use neurofunc::localization::{func_score_table, prune_and_eval, top_fraction_all};
use neurofunc::model::{
    build_planted_model, corpus_manifest_rows, planted_corpus, FfnVariant, ModelConfig, PlantSpec,
};
use neurofunc::sparsity::{mask_sweep, random_mask_sweep, IndicatorKind};
use neurofunc::trace::{
    ingest_manifest, read_trace, write_manifest, write_trace, Functionality,
    FunctionalityTaxonomy, IdTokenizer, IngestOptions, TraceBuilder,
};

fn small(variant: FfnVariant) -> ModelConfig {
    ModelConfig::new(2, 32, 96, 64, 2, variant, 0)
}

#[test]
fn manifest_round_trip_reproduces_the_corpus() {
    let cfg = small(FfnVariant::Gated);
    let plant = PlantSpec::uniform(&cfg, &Functionality::ALL, 4, 0).unwrap();
    let pm = build_planted_model(cfg, &plant, 1).unwrap();
    let corpus = planted_corpus(pm.layout.as_ref().unwrap(), 4, 2);
    let mut buf = Vec::new();
    write_manifest(&mut buf, &corpus_manifest_rows(&corpus)).unwrap();
    let (back, report) = ingest_manifest(
        buf.as_slice(),
        &FunctionalityTaxonomy::standard(),
        &IngestOptions::new(100, 0),
        &IdTokenizer,
    )
    .unwrap();
    assert_eq!(back, corpus);
    assert_eq!(report.retained, [4; 7]);
}

#[test]
fn vanilla_relu_pipeline_localizes_planted_groups() {
    let cfg = small(FfnVariant::Vanilla);
    let plant = PlantSpec::uniform(&cfg, &Functionality::ALL, 4, 3).unwrap();
    let pm = build_planted_model(cfg, &plant, 4).unwrap();
    let corpus = planted_corpus(pm.layout.as_ref().unwrap(), 12, 5);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.ntrc");
    let mut builder = TraceBuilder::new(2, 96, "pipeline test", true);
    for inst in &corpus {
        builder.push(inst, &pm.model.capture(&inst.prompt_tokens).unwrap()).unwrap();
    }
    write_trace(&builder.finish().unwrap(), &path).unwrap();
    let trace = read_trace(&path).unwrap();
    assert_eq!(trace.len(), 84);

    let table = func_score_table(&trace, &FunctionalityTaxonomy::standard()).unwrap();
    let sets = top_fraction_all(&table, 4.0 / 96.0).unwrap();
    for (f, set) in Functionality::ALL.iter().zip(&sets) {
        assert_eq!(set.layers(), plant.group(*f).unwrap().neurons.as_slice(), "{f}");
    }
    let matrix = prune_and_eval(&pm.model, &sets, &corpus).unwrap();
    for f in Functionality::ALL {
        assert_eq!(matrix.row_argmax(f), f);
    }
}

#[test]
fn guided_masking_beats_random_at_half() {
    let cfg = small(FfnVariant::Gated);
    let plant = PlantSpec::uniform(&cfg, &Functionality::ALL, 4, 6).unwrap();
    let pm = build_planted_model(cfg, &plant, 7).unwrap();
    let corpus = planted_corpus(pm.layout.as_ref().unwrap(), 4, 8);
    let seeds: Vec<u64> = (0..20).collect();
    let random = random_mask_sweep(&pm.model, &corpus, &[0.5], &seeds).unwrap()[0];
    for kind in IndicatorKind::ALL {
        let guided = mask_sweep(&pm.model, &corpus, kind, &[0.0, 0.5]).unwrap();
        assert!(guided.loss[1] < random, "{kind}: {} vs {random}", guided.loss[1]);
    }
}
