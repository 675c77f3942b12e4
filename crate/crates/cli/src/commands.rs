use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use serde::Serialize;
use serde_json::json;
use structdist::structeval::{self, kmeans_purity_with, nn_outcome, probe_fewshot, Representation};
use structdist::synthgen::generate_synthetic;
use structdist::trainer::{self, checkpoint_name, training_samples, FINAL_MAP_FILE};
use structdist::vecstore::{
    load_dataset, load_dataset_dir, read_vectors, validate, write_dataset_dir, write_vectors, META_FILE, VECTORS_FILE,
};
use structdist::{Dataset, LinearMap, VectorStore};

use crate::config::{write_json, Manifest, RunConfig, MANIFEST_FILE};
use crate::{Common, EvalArgs, Transform};

/// Loads and resolves the config and prepares the output directory.
fn setup(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.resolve_seed(common.seed);
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    Ok(cfg)
}

fn finish<T: Serialize>(
    common: &Common,
    command: &str,
    seed: u64,
    cfg: &RunConfig,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
    details: T,
) -> Result<()> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config: cfg,
        inputs,
        outputs,
        details,
    };
    write_json(&common.out.join(MANIFEST_FILE), &manifest)?;
    info!("{command}: outputs in {}", common.out.display());
    Ok(())
}

fn load(dir: &Path) -> Result<Dataset> {
    load_dataset_dir(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn load_transform(t: &Transform) -> Result<Option<LinearMap>> {
    match (&t.model, t.baseline) {
        (Some(p), _) => Ok(Some(
            LinearMap::read(p).with_context(|| format!("loading model {}", p.display()))?,
        )),
        (None, true) => Ok(None),
        (None, false) => bail!("pass --model PATH or --baseline"),
    }
}

fn inputs(dataset: &Path, t: &Transform) -> Vec<PathBuf> {
    std::iter::once(dataset.to_path_buf()).chain(t.model.clone()).collect()
}

pub fn synth(common: &Common) -> Result<()> {
    let cfg = setup(common)?;
    let d = generate_synthetic(&cfg.synth)?;
    write_dataset_dir(&d, &common.out)?;
    let details = json!({"tokens": d.tokens.len(), "groups": d.groups.len(), "dim": d.dim()});
    finish(
        common,
        "synth",
        cfg.synth.seed,
        &cfg,
        vec![],
        vec![VECTORS_FILE.into(), META_FILE.into()],
        details,
    )
}

pub fn ingest(common: &Common, vectors: &Path, meta: &Path) -> Result<()> {
    let cfg = setup(common)?;
    let d = load_dataset(vectors, meta).with_context(|| format!("ingesting {} + {}", vectors.display(), meta.display()))?;
    let warnings: Vec<String> = validate(&d).iter().map(|v| v.to_string()).collect();
    for w in &warnings {
        log::warn!("{w}");
    }
    write_dataset_dir(&d, &common.out)?;
    let details = json!({"tokens": d.tokens.len(), "groups": d.groups.len(), "dim": d.dim(), "warnings": warnings});
    finish(
        common,
        "ingest",
        cfg.seed.unwrap_or_default(),
        &cfg,
        vec![vectors.to_path_buf(), meta.to_path_buf()],
        vec![VECTORS_FILE.into(), META_FILE.into()],
        details,
    )
}

pub fn sample_pairs(common: &Common, dataset: &Path) -> Result<()> {
    let cfg = setup(common)?;
    let d = load(dataset)?;
    let samples = training_samples(&d, &cfg.train)?;
    let name = "pairs.jsonl";
    let mut w = BufWriter::new(File::create(common.out.join(name))?);
    for s in &samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let details = json!({"samples": samples.len()});
    finish(common, "sample-pairs", cfg.train.seed, &cfg, vec![dataset.into()], vec![name.into()], details)
}

pub fn train(common: &Common, dataset: &Path) -> Result<()> {
    let cfg = setup(common)?;
    let d = load(dataset)?;
    let (_, report) = trainer::train_to(&d, &cfg.train, Some(&common.out))?;
    let mut outputs: Vec<String> = (1..=cfg.train.epochs)
        .filter(|e| cfg.train.checkpoint_every > 0 && e % cfg.train.checkpoint_every == 0)
        .map(checkpoint_name)
        .collect();
    outputs.push(FINAL_MAP_FILE.into());
    finish(common, "train", cfg.train.seed, &cfg, vec![dataset.into()], outputs, report)
}

/// Resolves the eval section with flag overrides.
fn eval_setup(args: &EvalArgs) -> Result<RunConfig> {
    let mut cfg = setup(&args.common)?;
    let e = &mut cfg.eval;
    if let Some(q) = args.queries {
        e.n_queries = q;
    }
    if let Some(x) = args.exclusion {
        e.exclusion = x;
    }
    if let Some(h) = args.hard {
        e.hard_top_pos = h;
    }
    if let Some(ks) = &args.purity {
        e.kmeans_ks = ks.clone();
    }
    Ok(cfg)
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let cfg = eval_setup(args)?;
    let d = load(&args.dataset)?;
    let f = load_transform(&args.transform)?;
    let report = structeval::evaluate(&d, f.as_ref(), &cfg.eval)?;
    let name = "report.json";
    write_json(&args.common.out.join(name), &report)?;
    let ins = inputs(&args.dataset, &args.transform);
    finish(&args.common, "eval", cfg.eval.seed, &cfg, ins, vec![name.into()], json!({}))
}

pub fn eval_nn(args: &EvalArgs) -> Result<()> {
    let cfg = eval_setup(args)?;
    let d = load(&args.dataset)?;
    let f = load_transform(&args.transform)?;
    let outcome = nn_outcome(&d, f.as_ref(), &cfg.eval)?;
    let (report, results) = ("report.json", "nn_results.jsonl");
    write_json(&args.common.out.join(report), &outcome.report)?;
    let mut w = BufWriter::new(File::create(args.common.out.join(results))?);
    for r in &outcome.results {
        let q = &d.tokens[r.query];
        let v = r.value.map(|v| &d.tokens[v]);
        let line = json!({
            "query": r.query,
            "value": r.value,
            "distance": r.value.map(|_| r.distance),
            "query_form": q.form,
            "value_form": v.map(|t| &t.form),
            "query_dep": q.dep,
            "value_dep": v.map(|t| &t.dep),
        });
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let ins = inputs(&args.dataset, &args.transform);
    finish(
        &args.common,
        "eval-nn",
        cfg.eval.seed,
        &cfg,
        ins,
        vec![report.into(), results.into()],
        json!({}),
    )
}

pub fn eval_purity(args: &EvalArgs, vectors: Option<&Path>) -> Result<()> {
    let cfg = eval_setup(args)?;
    let d = load(&args.dataset)?;
    let mut ins = inputs(&args.dataset, &args.transform);
    let rep = match vectors {
        Some(p) => {
            let store = read_vectors(p).with_context(|| format!("reading {}", p.display()))?;
            ins.push(p.to_path_buf());
            Representation::from_flat(store.dim(), store.as_slice().iter().map(|&v| v as f64).collect())
        }
        None => Representation::of(&d, load_transform(&args.transform)?.as_ref())?,
    };
    let purity = kmeans_purity_with(&d, &rep, &cfg.eval)?;
    let name = "purity.json";
    write_json(&args.common.out.join(name), &purity)?;
    finish(&args.common, "eval-purity", cfg.eval.seed, &cfg, ins, vec![name.into()], json!({}))
}

pub fn probe(args: &EvalArgs) -> Result<()> {
    let cfg = eval_setup(args)?;
    let d = load(&args.dataset)?;
    let f = load_transform(&args.transform)?;
    let report = probe_fewshot(&d, f.as_ref(), &cfg.eval.probe_sizes, cfg.eval.seed, &cfg.eval.probe)?;
    let name = "probe.json";
    write_json(&args.common.out.join(name), &report)?;
    let ins = inputs(&args.dataset, &args.transform);
    finish(&args.common, "probe", cfg.eval.seed, &cfg, ins, vec![name.into()], json!({}))
}

fn tsv_field(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

pub fn export(common: &Common, dataset: &Path, transform: &Transform) -> Result<()> {
    let cfg = setup(common)?;
    let d = load(dataset)?;
    let f = load_transform(transform)?;
    let rep = Representation::of(&d, f.as_ref())?;
    let data: Vec<f32> = (0..rep.len()).flat_map(|r| rep.row(r).iter().map(|&v| v as f32)).collect();
    let (vectors, labels) = ("export.svec", "labels.tsv");
    write_vectors(&VectorStore::new(rep.dim(), data)?, &common.out.join(vectors))?;

    let mut w = BufWriter::new(File::create(common.out.join(labels))?);
    writeln!(w, "row\tgroup_id\tsent_id\ttok_idx\tform\tpos\tdep\thead_dep\tdepth\tis_function")?;
    for t in &d.tokens {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            t.row,
            t.group_id,
            t.sent_id,
            t.tok_idx,
            tsv_field(&t.form),
            tsv_field(&t.pos),
            tsv_field(&t.dep),
            tsv_field(&t.head_dep),
            t.depth,
            t.is_function
        )?;
    }
    w.flush()?;
    finish(
        common,
        "export",
        cfg.seed.unwrap_or_default(),
        &cfg,
        inputs(dataset, transform),
        vec![vectors.into(), labels.into()],
        json!({"dim": rep.dim(), "rows": rep.len()}),
    )
}
