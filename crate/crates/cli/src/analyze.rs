use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use cloze_bench::analysis::{
    correlate_acc_ppl, correlation_points, overconfidence, parallel_score_report, rank_deltas, rank_models,
    render, Correlation, CorrelationPoint, OverconfidenceProfile, ParallelReport, PointGrouping, PplPoint,
    RankDelta, RankTable,
};
use cloze_bench::domain::{Provenance, RunResult, Style};
use cloze_bench::eval::{find_runs, read_run, SUMMARY_FILE};
use cloze_bench::jsonl;
use cloze_bench::pll::PplSummary;
use cloze_bench::published::Published;
use serde::{Deserialize, Serialize};

use crate::commands::{POOL_FILE, PPL_FILE};
use crate::config::{load_pool, provenance};
use crate::{AnalyzeArgs, ReportArgs, UsageError};

pub const ANALYSIS_FILE: &str = "analysis.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankMismatch {
    pub dataset: String,
    pub model_id: String,
    pub computed: usize,
    pub printed: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaSet {
    pub a: String,
    pub b: String,
    pub deltas: Vec<RankDelta>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub label: String,
    pub grouping: PointGrouping,
    pub points: Vec<CorrelationPoint>,
    /// `None` with fewer than three points or no variance.
    pub correlation: Option<Correlation>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Analysis {
    pub provenance: Provenance,
    pub outlier_threshold: Option<f64>,
    pub rank_tables: Vec<RankTable>,
    #[serde(default)]
    pub printed_rank_mismatches: Vec<RankMismatch>,
    pub rank_deltas: Vec<DeltaSet>,
    pub parallel: Vec<ParallelReport>,
    pub overconfidence: Vec<OverconfidenceProfile>,
    pub correlations: Vec<CorrelationResult>,
}

fn parse_pair(s: &str) -> anyhow::Result<(String, String)> {
    s.split_once('=')
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .ok_or_else(|| UsageError(format!("expected TEMPLATE_FREE=TEMPLATE_BASED, got {s:?}")).into())
}

fn correlate(label: String, grouping: PointGrouping, runs: &[RunResult], ppl: &[PplPoint], threshold: Option<f64>) -> CorrelationResult {
    let points = correlation_points(runs, ppl, grouping, threshold);
    let correlation = match correlate_acc_ppl(&points) {
        Ok(c) => Some(c),
        Err(e) => {
            log::warn!("{label}: no correlation ({e})");
            None
        }
    };
    CorrelationResult {
        label,
        grouping,
        points,
        correlation,
    }
}

fn by_dataset(runs: &[RunResult]) -> BTreeMap<String, Vec<RunResult>> {
    let mut out: BTreeMap<String, Vec<RunResult>> = BTreeMap::new();
    for r in runs {
        out.entry(r.dataset.clone()).or_default().push(r.clone());
    }
    out
}

fn published_analysis(args: &AnalyzeArgs, prov: Provenance) -> anyhow::Result<Analysis> {
    let p = Published::bundled()?;
    let mut out = Analysis {
        provenance: prov,
        outlier_threshold: args.outlier_threshold,
        rank_tables: Vec::new(),
        printed_rank_mismatches: Vec::new(),
        rank_deltas: Vec::new(),
        parallel: Vec::new(),
        overconfidence: Vec::new(),
        correlations: Vec::new(),
    };
    for style in [Style::TemplateBased, Style::TemplateFree] {
        for (dataset, runs) in p.runs(style) {
            let mut table = rank_models(&runs)?;
            table.dataset = format!("{style}/{dataset}");
            for (model, printed) in p.printed_ranks(style, &dataset) {
                let computed = table.rank_of(&model).unwrap_or(0);
                if computed != printed {
                    out.printed_rank_mismatches.push(RankMismatch {
                        dataset: table.dataset.clone(),
                        model_id: model,
                        computed,
                        printed,
                    });
                }
            }
            out.rank_tables.push(table);
        }
        let runs: Vec<RunResult> = p.runs(style).into_values().flatten().collect();
        out.correlations.push(correlate(
            style.to_string(),
            args.grouping,
            &runs,
            &p.ppl_points(style),
            args.outlier_threshold,
        ));
    }
    let tf = p.runs(Style::TemplateFree);
    let tb = p.runs(Style::TemplateBased);
    for dataset in tf.keys().filter(|d| tb.contains_key(*d)) {
        let mut rep = parallel_score_report(&tf[dataset], &tb[dataset])?;
        rep.dataset = dataset.clone();
        out.parallel.push(rep);
        out.rank_deltas.push(DeltaSet {
            a: format!("template_free/{dataset}"),
            b: format!("template_based/{dataset}"),
            deltas: rank_deltas(&rank_models(&tf[dataset])?, &rank_models(&tb[dataset])?)?,
        });
    }
    Ok(out)
}

fn find_files(root: &Path, name: &str) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let candidate = dir.join(name);
        if candidate.is_file() {
            out.push(candidate);
        }
        for entry in std::fs::read_dir(&dir).with_context(|| format!("reading {}", dir.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn directory_analysis(args: &AnalyzeArgs) -> anyhow::Result<Analysis> {
    let mut run_dirs = Vec::new();
    let mut ppl_files = Vec::new();
    for input in &args.inputs {
        if !input.is_dir() {
            bail!("{} is not a directory", input.display());
        }
        run_dirs.extend(find_runs(input)?);
        ppl_files.extend(find_files(input, PPL_FILE)?);
    }
    run_dirs.sort();
    run_dirs.dedup();
    ppl_files.sort();
    ppl_files.dedup();
    if run_dirs.is_empty() {
        bail!("no runs ({SUMMARY_FILE}) found under the given directories");
    }

    let mut runs = Vec::new();
    let mut overconf = Vec::new();
    for dir in &run_dirs {
        let run = read_run(dir)?;
        if !run.is_comparable() {
            log::warn!("{}: failure rate above 1%, excluded", dir.display());
            continue;
        }
        let pool_path = dir.join(POOL_FILE);
        if pool_path.is_file() && !run.per_record.is_empty() {
            match overconfidence(&run, &load_pool(&pool_path)?) {
                Ok(p) => overconf.push(p),
                Err(e) => log::warn!("{}: no overconfidence profile ({e})", dir.display()),
            }
        }
        runs.push(run);
    }
    let ppl: Vec<PplPoint> = ppl_files
        .iter()
        .map(|f| {
            let s: PplSummary = jsonl::read_json(f)?;
            Ok(PplPoint {
                model_id: s.model_id,
                dataset: s.dataset,
                mean_ppl: s.mean_ppl,
            })
        })
        .collect::<anyhow::Result<_>>()?;

    let summaries: Vec<PathBuf> = run_dirs.iter().map(|d| d.join(SUMMARY_FILE)).chain(ppl_files.iter().cloned()).collect();
    let refs: Vec<&Path> = summaries.iter().map(PathBuf::as_path).collect();
    let settings = ("analyze", args.grouping, args.outlier_threshold, &args.parallel);
    let grouped = by_dataset(&runs);
    let mut out = Analysis {
        provenance: provenance(&settings, &refs)?,
        outlier_threshold: args.outlier_threshold,
        rank_tables: grouped.values().map(|r| rank_models(r)).collect::<Result<_, _>>()?,
        printed_rank_mismatches: Vec::new(),
        rank_deltas: Vec::new(),
        parallel: Vec::new(),
        overconfidence: overconf,
        correlations: Vec::new(),
    };
    for pair in &args.parallel {
        let (tf, tb) = parse_pair(pair)?;
        let (Some(a), Some(b)) = (grouped.get(&tf), grouped.get(&tb)) else {
            bail!("--parallel {pair}: no runs for {tf:?} or {tb:?}");
        };
        let mut rep = parallel_score_report(a, b)?;
        rep.dataset = format!("{tf}={tb}");
        out.parallel.push(rep);
        out.rank_deltas.push(DeltaSet {
            a: tf,
            b: tb,
            deltas: rank_deltas(&rank_models(a)?, &rank_models(b)?)?,
        });
    }
    if !ppl.is_empty() {
        out.correlations
            .push(correlate("all".into(), args.grouping, &runs, &ppl, args.outlier_threshold));
    }
    Ok(out)
}

pub fn analyze(args: &AnalyzeArgs) -> anyhow::Result<()> {
    let analysis = if args.published {
        let prov = provenance(&("analyze --published", args.grouping, args.outlier_threshold), &[])?;
        published_analysis(args, prov)?
    } else {
        if args.inputs.is_empty() {
            return Err(UsageError("give run directories or --published".into()).into());
        }
        directory_analysis(args)?
    };
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    jsonl::write_json(&args.out.join(ANALYSIS_FILE), &analysis)?;
    eprintln!(
        "{}: {} rank tables, {} parallel reports, {} correlations, {} printed-rank mismatches",
        args.out.join(ANALYSIS_FILE).display(),
        analysis.rank_tables.len(),
        analysis.parallel.len(),
        analysis.correlations.len(),
        analysis.printed_rank_mismatches.len()
    );
    Ok(())
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

struct Emitter<'a> {
    dir: &'a Path,
    written: Vec<PathBuf>,
}

impl Emitter<'_> {
    fn write(&mut self, name: &str, body: &str) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(path);
        Ok(())
    }

    fn table(&mut self, stem: &str, title: &str, t: &render::Table) -> anyhow::Result<()> {
        self.write(&format!("{stem}.txt"), &format!("{title}\n\n{}", t.to_text()))?;
        self.write(&format!("{stem}.csv"), &t.to_csv())
    }

    fn spec(&mut self, stem: &str, v: &serde_json::Value) -> anyhow::Result<()> {
        self.write(&format!("{stem}.vl.json"), &(serde_json::to_string_pretty(v)? + "\n"))
    }
}

pub fn report(args: &ReportArgs) -> anyhow::Result<()> {
    let path = if args.analysis.is_dir() {
        args.analysis.join(ANALYSIS_FILE)
    } else {
        args.analysis.clone()
    };
    if !path.is_file() {
        bail!("no {ANALYSIS_FILE} at {}; run `analyze` first", path.display());
    }
    let a: Analysis = jsonl::read_json(&path)?;
    if a.rank_tables.is_empty() && a.parallel.is_empty() && a.correlations.is_empty() && a.overconfidence.is_empty() {
        bail!("{} holds no results", path.display());
    }
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut e = Emitter {
        dir: &args.out,
        written: Vec::new(),
    };
    for t in &a.rank_tables {
        e.table(&format!("rank_{}", slug(&t.dataset)), &format!("Ranking on {}", t.dataset), &render::rank_table(t))?;
    }
    if !a.printed_rank_mismatches.is_empty() {
        let mut t = render::Table::new(&["dataset", "model_id", "computed", "printed"]);
        for m in &a.printed_rank_mismatches {
            t.push(vec![m.dataset.as_str().into(), m.model_id.as_str().into(), m.computed.into(), m.printed.into()]);
        }
        e.table("rank_mismatches", "Computed ranks that differ from the printed ones", &t)?;
    }
    for d in &a.rank_deltas {
        e.table(
            &format!("rank_delta_{}", slug(&format!("{}_vs_{}", d.a, d.b))),
            &format!("Rank change from {} to {}", d.a, d.b),
            &render::rank_delta_table(&d.deltas),
        )?;
    }
    for p in &a.parallel {
        e.table(
            &format!("parallel_{}", slug(&p.dataset)),
            &format!("Template-free vs template-based on {} (* = largest Acc@1 drop)", p.dataset),
            &render::parallel_table(p),
        )?;
    }
    for p in &a.overconfidence {
        let stem = format!("overconfidence_{}_{}", slug(&p.model_id), slug(&p.dataset));
        let title = format!(
            "{} on {}: unique top-1 {:.3}, top-5 {:.3}, top-10 {:.3} of {} entities",
            p.model_id, p.dataset, p.unique_pct.top1, p.unique_pct.top5, p.unique_pct.top10, p.pool_size
        );
        e.table(&stem, &title, &render::overconfidence_table(p))?;
        e.spec(&stem, &render::overconfidence_spec(p))?;
    }
    for c in &a.correlations {
        let stem = format!("correlation_{}", slug(&c.label));
        let title = match &c.correlation {
            Some(r) => format!("{}: Pearson r = {:.3}, p = {:.3}, n = {}", c.label, r.pearson_r, r.p_value, r.n),
            None => format!("{}: not enough points for a correlation", c.label),
        };
        e.table(&stem, &title, &render::correlation_table(&c.points))?;
        e.spec(&stem, &render::scatter_spec(&c.label, &c.points, c.correlation.as_ref()))?;
    }
    for p in &e.written {
        println!("{}", p.display());
    }
    Ok(())
}
