use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use chrono::{DateTime, NaiveDate, Utc};
use cloze_bench::builder::{self, pubmed, BuildOptions, EntityLexicon, FilterPolicy};
use cloze_bench::domain::{build_candidate_pool, load_dataset, write_dataset, DatasetManifest, ProbeRecord};
use cloze_bench::eval::{evaluate, write_run};
use cloze_bench::jsonl;
use cloze_bench::pll::{dataset_perplexities, summarize, PromptTextMode};
use cloze_bench::prompts::{build_parallel_pairs, default_templates, load_templates, load_triples};
use serde::Serialize;

use crate::config::{self, make_scorer, provenance, ConfigFile, RunConfig};
use crate::{BuildArgs, ConvertArgs, EvalArgs, PolicyArg, PplArgs, PromptArgs, UsageError};

pub const REPORT_SUFFIX: &str = "report.json";
pub const PPL_FILE: &str = "ppl.json";
pub const POOL_FILE: &str = "pool.txt";
pub const CONFIG_FILE: &str = "config.json";

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn policy(arg: &PolicyArg, case_insensitive: bool) -> anyhow::Result<FilterPolicy> {
    let p = match arg {
        PolicyArg::Default => FilterPolicy::default(),
        PolicyArg::None => FilterPolicy::disabled(),
        PolicyArg::File(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading policy {}", path.display()))?;
            FilterPolicy {
                forbidden_substrings: text.lines().filter(|l| !l.is_empty()).map(String::from).collect(),
                ..FilterPolicy::default()
            }
        }
    };
    Ok(if case_insensitive { p.case_insensitive() } else { p })
}

#[derive(Serialize)]
struct BuildSettings<'a> {
    command: &'static str,
    cutoff: NaiveDate,
    label: &'a str,
    policy: &'a FilterPolicy,
    min_tokens: usize,
    name: &'a str,
}

pub fn build_dataset(args: &BuildArgs) -> anyhow::Result<()> {
    let lexicon = EntityLexicon::load(&args.lexicon, &args.label)?;
    let policy = policy(&args.policy, args.case_insensitive)?;
    let name = args.name.clone().unwrap_or_else(|| cloze_bench::domain::dataset_name(&args.out));
    let opts = BuildOptions {
        name: name.clone(),
        min_tokens: args.min_tokens,
        concurrency: args.concurrency,
        created_at: None,
    };
    let out = builder::build(&args.corpus, &lexicon, &policy, args.cutoff, &opts)?;
    if out.records.is_empty() {
        bail!("no prompts survived the pipeline: {:?}", out.report);
    }
    let settings = BuildSettings {
        command: "build-dataset",
        cutoff: args.cutoff,
        label: &args.label,
        policy: &policy,
        min_tokens: args.min_tokens,
        name: &name,
    };
    let mut inputs = corpus_inputs(&args.corpus)?;
    inputs.push(args.lexicon.clone());
    let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let mut manifest = out.manifest;
    manifest.provenance = Some(provenance(&settings, &refs)?);

    ensure_parent(&args.out)?;
    write_dataset(&args.out, &manifest, &out.records)?;
    jsonl::write_json(&sibling(&args.out, REPORT_SUFFIX), &out.report)?;
    let r = &out.report;
    eprintln!(
        "{}: {} prompts from {} documents ({} before cutoff); rejected: {} no entity, {} multiple, {} keyword, {} degenerate",
        args.out.display(),
        r.emitted,
        r.documents,
        r.excluded_by_date,
        r.no_entity,
        r.multi_entity,
        r.keyword_filtered,
        r.degenerate
    );
    Ok(())
}

/// Files read by the builder, in its own order, for hashing.
fn corpus_inputs(source: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if source.is_file() {
        return Ok(vec![source.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(source)
        .with_context(|| format!("reading {}", source.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn convert_pubmed(args: &ConvertArgs) -> anyhow::Result<()> {
    ensure_parent(&args.out)?;
    let conv = pubmed::convert_file(&args.input, &args.out)?;
    eprintln!(
        "{}: {} documents, {} articles skipped",
        args.out.display(),
        conv.documents.len(),
        conv.skipped
    );
    Ok(())
}

/// `created_at` for generated datasets: the input's modification time, so
/// reruns on the same file give the same manifest.
fn input_time(path: &Path) -> DateTime<Utc> {
    std::fs::metadata(path)
        .and_then(|m| m.modified())
        .map(DateTime::<Utc>::from)
        .unwrap_or_default()
}

fn write_generated(path: &Path, records: &[ProbeRecord], created_at: DateTime<Utc>, prov: &cloze_bench::domain::Provenance) -> anyhow::Result<()> {
    let mut manifest = DatasetManifest::from_records(cloze_bench::domain::dataset_name(path), records, created_at, None);
    manifest.provenance = Some(prov.clone());
    write_dataset(path, &manifest, records)?;
    Ok(())
}

pub fn gen_prompts(args: &PromptArgs) -> anyhow::Result<()> {
    let templates = match &args.templates {
        Some(p) => load_templates(p)?,
        None => default_templates(),
    };
    for t in &templates {
        t.validate().map_err(|e| UsageError(e.to_string()))?;
    }
    let triples = load_triples(&args.triples)?;
    let report = build_parallel_pairs(&templates, &triples);
    if report.pairs.is_empty() {
        bail!("no triple produced a prompt pair ({} rejected)", report.rejections.len());
    }
    let mut inputs = vec![args.triples.as_path()];
    if let Some(t) = &args.templates {
        inputs.push(t);
    }
    let prov = provenance(&("gen-prompts", &templates), &inputs)?;
    let created_at = input_time(&args.triples);

    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let tb: Vec<ProbeRecord> = report.pairs.iter().map(|p| p.template_based.clone()).collect();
    let tf: Vec<ProbeRecord> = report.pairs.iter().map(|p| p.template_free.clone()).collect();
    write_generated(&args.out_dir.join("template_based.jsonl"), &tb, created_at, &prov)?;
    write_generated(&args.out_dir.join("template_free.jsonl"), &tf, created_at, &prov)?;
    jsonl::write(&args.out_dir.join("rejections.jsonl"), &report.rejections)?;
    eprintln!(
        "{}: {} pairs, {} triples rejected",
        args.out_dir.display(),
        report.pairs.len(),
        report.rejections.len()
    );
    Ok(())
}

fn run_config(args: &EvalArgs) -> anyhow::Result<RunConfig> {
    let file = match &args.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let mut scorer = args.scorer.to_section();
    if let Some(p) = &args.scorer_config {
        scorer = ConfigFile::load_scorer(p)?.merge(scorer);
    }
    let flags = ConfigFile {
        dataset_path: args.dataset.clone(),
        output_dir: args.out.clone(),
        seed: args.seed,
        scorer,
        eval: config::EvalSection {
            k_values: args.k.clone(),
            top_k_stored: args.top_k_stored,
            concurrency_limit: args.concurrency,
            pool: args.pool.clone(),
        },
    };
    config::resolve(file, flags, true)
}

fn hashed_inputs(cfg: &RunConfig) -> Vec<&Path> {
    let mut inputs = vec![cfg.dataset_path.as_path()];
    if let config::ScorerConfig::Reference { corpus, .. } = &cfg.scorer {
        inputs.push(corpus);
    }
    if let Some(p) = &cfg.pool {
        inputs.push(p);
    }
    inputs
}

/// Returns the process exit code: 1 when the run is not comparable.
pub fn evaluate_cmd(args: &EvalArgs) -> anyhow::Result<u8> {
    let cfg = run_config(args)?;
    let eval_cfg = cfg.eval_config()?;
    let (manifest, records) = load_dataset(&cfg.dataset_path)?;
    let pool = build_candidate_pool(&records)?;
    let scorer = make_scorer(&cfg.scorer)?;
    let prov = provenance(&cfg, &hashed_inputs(&cfg))?;

    let result = evaluate(&manifest.name, &records, &pool, &scorer, &eval_cfg)?;
    write_run(&cfg.output_dir, &result, Some(prov))?;
    let used = eval_cfg.pool_override.as_ref().unwrap_or(&pool);
    std::fs::write(cfg.output_dir.join(POOL_FILE), used.entities().join("\n") + "\n")?;
    jsonl::write_json(&cfg.output_dir.join(CONFIG_FILE), &cfg)?;

    let acc: Vec<String> = result.acc_at_k.iter().map(|(k, v)| format!("Acc@{k} {v:.4}")).collect();
    eprintln!(
        "{} on {}: {} ({} evaluated, {} failed) -> {}",
        result.model_id,
        result.dataset,
        acc.join(", "),
        result.evaluated(),
        result.failures.len(),
        cfg.output_dir.display()
    );
    if !result.is_comparable() {
        eprintln!(
            "error: failure rate {:.2}% exceeds 1%; the run is not comparable",
            100.0 * result.failure_rate()
        );
        return Ok(1);
    }
    Ok(0)
}

pub fn ppl_cmd(args: &PplArgs) -> anyhow::Result<u8> {
    let cfg = run_config(&args.run)?;
    let (manifest, records) = load_dataset(&cfg.dataset_path)?;
    let scorer = make_scorer(&cfg.scorer)?;
    let mode = if args.placeholder {
        PromptTextMode::Placeholder
    } else {
        PromptTextMode::GoldSubstituted
    };
    let model_id = scorer.info()?.model_id;
    let (values, failures) = dataset_perplexities(&records, &scorer, mode, cfg.concurrency_limit);
    if values.is_empty() {
        bail!("every text failed; first: {:?}", failures.first());
    }
    let mut summary = summarize(&model_id, &manifest.name, &values, args.outlier_threshold)?;
    summary.failures = failures;
    std::fs::create_dir_all(&cfg.output_dir)?;
    #[derive(Serialize)]
    struct Out<'a> {
        #[serde(flatten)]
        summary: &'a cloze_bench::pll::PplSummary,
        mode: PromptTextMode,
        provenance: cloze_bench::domain::Provenance,
    }
    let prov = provenance(&(&cfg, mode, args.outlier_threshold), &hashed_inputs(&cfg))?;
    jsonl::write_json(
        &cfg.output_dir.join(PPL_FILE),
        &Out {
            summary: &summary,
            mode,
            provenance: prov,
        },
    )?;
    eprintln!(
        "{} on {}: mean PPL {:.3} over {} texts ({} above threshold, {} failed)",
        model_id,
        manifest.name,
        summary.mean_ppl,
        summary.n,
        summary.excluded.len(),
        summary.failures.len()
    );
    let rate = summary.failures.len() as f64 / records.len() as f64;
    Ok(if rate > cloze_bench::domain::MAX_FAILURE_RATE { 1 } else { 0 })
}
