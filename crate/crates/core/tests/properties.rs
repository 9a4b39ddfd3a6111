mod common;

use std::collections::BTreeMap;

use cloze_bench::analysis::{pearson, rank_deltas, rank_models};
use cloze_bench::builder::{mask_entity, select_single_entity, EntityLexicon};
use cloze_bench::domain::{Accuracy, CandidatePool, EntityStats, RunResult};
use cloze_bench::eval::{evaluate, expand_pool_and_reevaluate, EvalConfig};
use cloze_bench::pll::{dataset_perplexities, perplexity_from_loglikelihoods, summarize, PromptTextMode};
use cloze_bench::scorer::{CandidateScoreRequest, UniformScorer, UnigramScorer, Scorer};
use common::{oracle_acc, oracle_rank, random_fixture, HashScorer};
use proptest::prelude::*;

fn cfg() -> EvalConfig {
    EvalConfig {
        k_values: vec![1, 2, 3, 5, 10],
        ..EvalConfig::default()
    }
}

fn score_run(model: &str, acc: (f64, f64, f64)) -> RunResult {
    RunResult {
        model_id: model.into(),
        dataset: "d".into(),
        per_record: Vec::new(),
        acc: Accuracy {
            acc1: acc.0,
            acc5: acc.1,
            acc10: acc.2,
        },
        acc_at_k: BTreeMap::new(),
        failures: Vec::new(),
        pool_size: 0,
        top_k_stored: 0,
        ppl: None,
    }
}

/// Scores on a coarse grid so that ties at every level show up.
fn acc_triple() -> impl Strategy<Value = (f64, f64, f64)> {
    (0u8..4, 0u8..4, 0u8..4).prop_map(|(a, b, c)| {
        let a = a as f64 / 10.0;
        let b = a + b as f64 / 10.0;
        (a, b, b + c as f64 / 10.0)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn evaluation_matches_brute_force(seed in any::<u64>()) {
        let f = random_fixture(seed);
        let run = evaluate("fx", &f.records, &f.pool, &HashScorer::new(f.salt), &cfg()).unwrap();
        let want: Vec<usize> = f
            .records
            .iter()
            .map(|r| oracle_rank(f.salt, &r.masked_text, &r.gold_entity, f.pool.entities()))
            .collect();
        prop_assert_eq!(run.gold_ranks(), want.clone());
        for (k, v) in &run.acc_at_k {
            prop_assert_eq!(*v, oracle_acc(&want, *k));
        }
        for p in &run.per_record {
            prop_assert_eq!(p.ranked_entities.len(), f.pool.len().min(10));
        }
    }

    #[test]
    fn accuracy_is_monotone_in_k(seed in any::<u64>()) {
        let f = random_fixture(seed);
        let run = evaluate("fx", &f.records, &f.pool, &HashScorer::new(f.salt), &cfg()).unwrap();
        let v: Vec<f64> = run.acc_at_k.values().copied().collect();
        prop_assert!(v.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(run.acc.acc1 <= run.acc.acc5 && run.acc.acc5 <= run.acc.acc10);
        prop_assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
        if f.pool.len() <= 10 {
            prop_assert_eq!(run.acc.acc10, 1.0);
        }
    }

    #[test]
    fn growing_the_pool_never_helps(seed in any::<u64>(), extra in 1usize..15) {
        let f = random_fixture(seed);
        let more = CandidatePool::new("extra", (0..extra).map(|i| format!("zzextra{i}"))).unwrap();
        let scorer = HashScorer::new(f.salt);
        let exp = expand_pool_and_reevaluate("fx", &f.records, &f.pool, &more, &scorer, &cfg()).unwrap();
        for (a, b) in exp.before.per_record.iter().zip(&exp.after.per_record) {
            prop_assert!(b.gold_rank >= a.gold_rank);
        }
        prop_assert!(exp.delta.values().all(|d| *d <= 0.0));
        prop_assert_eq!(exp.after.pool_size, f.pool.len() + extra);
    }

    #[test]
    fn results_do_not_depend_on_scheduling(seed in any::<u64>(), threads in 2usize..6) {
        let f = random_fixture(seed);
        let scorer = HashScorer::new(f.salt);
        let seq = evaluate("fx", &f.records, &f.pool, &scorer, &cfg()).unwrap();
        let par_cfg = EvalConfig { concurrency_limit: threads, ..cfg() };
        let par = evaluate("fx", &f.records, &f.pool, &scorer, &par_cfg).unwrap();
        prop_assert_eq!(seq, par);
        let a = dataset_perplexities(&f.records, &scorer, PromptTextMode::GoldSubstituted, 1);
        let b = dataset_perplexities(&f.records, &scorer, PromptTextMode::GoldSubstituted, threads);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn failures_leave_the_denominator(seed in any::<u64>()) {
        let f = random_fixture(seed);
        let scorer = HashScorer { fail_marker: Some("says".into()), ..HashScorer::new(f.salt) };
        let run = evaluate("fx", &f.records, &f.pool, &scorer, &cfg()).unwrap();
        let ok: Vec<usize> = f
            .records
            .iter()
            .filter(|r| !r.masked_text.contains("says"))
            .map(|r| oracle_rank(f.salt, &r.masked_text, &r.gold_entity, f.pool.entities()))
            .collect();
        prop_assert_eq!(run.failures.len(), f.records.len() - ok.len());
        prop_assert_eq!(run.evaluated(), ok.len());
        if !ok.is_empty() {
            prop_assert_eq!(run.acc.acc1, oracle_acc(&ok, 1));
        }
        prop_assert_eq!(run.is_comparable(), run.failures.len() as f64 <= 0.01 * f.records.len() as f64);
    }

    #[test]
    fn mean_ppl_ignores_order(values in prop::collection::vec(1.0f64..1e4, 1..40), seed in any::<u64>()) {
        let labelled: Vec<(String, f64)> =
            values.iter().enumerate().map(|(i, v)| (format!("t{i}"), *v)).collect();
        let mut shuffled = labelled.clone();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        let a = summarize("m", "d", &labelled, Some(5000.0)).ok();
        let b = summarize("m", "d", &shuffled, Some(5000.0)).ok();
        match (a, b) {
            (Some(a), Some(b)) => {
                prop_assert!((a.mean_ppl - b.mean_ppl).abs() <= 1e-9 * a.mean_ppl);
                prop_assert_eq!(a.n, b.n);
                prop_assert_eq!(a.n + a.excluded.len(), values.len());
            }
            (None, None) => prop_assert!(values.iter().all(|v| *v > 5000.0)),
            _ => prop_assert!(false, "summaries disagree"),
        }
    }

    #[test]
    fn uniform_ppl_is_vocab_size(v in 1usize..100_000, words in 1usize..50) {
        let s = UniformScorer::new(v).unwrap();
        let text = vec!["w"; words].join(" ");
        let lls = s.pseudo_loglikelihoods(&cloze_bench::scorer::PllRequest::new(&text).unwrap()).unwrap();
        let ppl = perplexity_from_loglikelihoods(&lls).unwrap();
        prop_assert!((ppl - v as f64).abs() <= 1e-9 * v as f64);
    }

    #[test]
    fn unigram_probabilities_sum_to_one(corpus in prop::collection::vec("[a-e]{1,3}", 1..60)) {
        let s = UnigramScorer::from_corpus(&corpus.join(" "), 0.5).unwrap();
        let mut types: Vec<&String> = corpus.iter().collect();
        types.sort();
        types.dedup();
        let known: f64 = types.iter().map(|t| s.token_logprob(t).exp()).sum();
        let total = known + s.token_logprob("<never seen>").exp();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert_eq!(s.vocab_size(), types.len() + 1);
    }

    #[test]
    fn rank_table_ignores_input_order(
        accs in prop::collection::vec(acc_triple(), 1..16),
        seed in any::<u64>(),
    ) {
        let runs: Vec<RunResult> =
            accs.iter().enumerate().map(|(i, a)| score_run(&format!("m{i:02}"), *a)).collect();
        let mut shuffled = runs.clone();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        let a = rank_models(&runs).unwrap();
        let b = rank_models(&shuffled).unwrap();
        prop_assert_eq!(&a, &b);
        let ranks: Vec<usize> = a.rows.iter().map(|r| r.rank).collect();
        prop_assert_eq!(ranks, (1..=runs.len()).collect::<Vec<_>>());
        // Oracle: a model's rank is 1 + the number of models that beat it.
        for r in &runs {
            let key = |x: &RunResult| (x.acc.acc1, x.acc.acc5, x.acc.acc10);
            let beaten_by = runs
                .iter()
                .filter(|o| {
                    let (ko, kr) = (key(o), key(r));
                    ko.0 > kr.0
                        || (ko.0 == kr.0 && ko.1 > kr.1)
                        || (ko.0 == kr.0 && ko.1 == kr.1 && ko.2 > kr.2)
                        || (ko == kr && o.model_id < r.model_id)
                })
                .count();
            prop_assert_eq!(a.rank_of(&r.model_id), Some(beaten_by + 1));
        }
    }

    #[test]
    fn rank_deltas_sum_to_zero(
        accs in prop::collection::vec((acc_triple(), acc_triple()), 1..16),
    ) {
        let a: Vec<RunResult> =
            accs.iter().enumerate().map(|(i, (x, _))| score_run(&format!("m{i}"), *x)).collect();
        let b: Vec<RunResult> =
            accs.iter().enumerate().map(|(i, (_, y))| score_run(&format!("m{i}"), *y)).collect();
        let deltas = rank_deltas(&rank_models(&a).unwrap(), &rank_models(&b).unwrap()).unwrap();
        prop_assert_eq!(deltas.len(), accs.len());
        prop_assert_eq!(deltas.iter().map(|d| d.delta).sum::<i64>(), 0);
    }

    #[test]
    fn pearson_is_bounded_and_affine_invariant(
        xs in prop::collection::vec(-100.0f64..100.0, 3..30),
        scale in 0.1f64..10.0,
        shift in -50.0f64..50.0,
    ) {
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x * x - i as f64).collect();
        if let Ok(r) = pearson(&xs, &ys) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            let moved: Vec<f64> = xs.iter().map(|x| scale * x + shift).collect();
            if let Ok(r2) = pearson(&moved, &ys) {
                prop_assert!((r - r2).abs() < 1e-6);
            }
            let flipped: Vec<f64> = xs.iter().map(|x| -x).collect();
            if let Ok(r3) = pearson(&flipped, &ys) {
                prop_assert!((r + r3).abs() < 1e-9);
            }
            prop_assert!((pearson(&ys, &xs).unwrap() - r).abs() < 1e-12);
        }
    }

    #[test]
    fn masking_round_trips(
        before in "[a-z]{1,8}( [a-z]{1,8}){2,5}",
        after in "[a-z]{1,8}( [a-z]{1,8}){0,4}",
        which in 0usize..3,
    ) {
        let names = ["Heparin", "TP53", "Folic Acid"];
        let lex = EntityLexicon::new("chemical", names).unwrap();
        let sentence = format!("{before} {} {after}.", names[which]);
        let m = select_single_entity(&sentence, &lex).unwrap();
        prop_assert_eq!(m.entity.as_str(), names[which]);
        let rec = mask_entity(&sentence, m.span, "doc", 3).unwrap();
        prop_assert_eq!(rec.reconstruct(), sentence);
        prop_assert_eq!(rec.id, "doc:3");
        prop_assert_eq!(rec.masked_text.matches("[MASK]").count(), 1);
    }

    #[test]
    fn entity_stats_are_consistent(counts in prop::collection::vec(1u64..50, 1..30)) {
        let s = EntityStats::from_counts(counts.iter().copied());
        let total: u64 = counts.iter().sum();
        prop_assert!((s.mean * counts.len() as f64 - total as f64).abs() < 1e-9);
        prop_assert!(s.min as f64 <= s.mean && s.mean <= s.max as f64);
        prop_assert!(s.std >= 0.0 && s.std <= (s.max - s.min) as f64);
    }

    #[test]
    fn remote_style_requests_reject_duplicates(n in 1usize..10) {
        let mut c: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
        prop_assert!(CandidateScoreRequest::new("[MASK]", &c).is_ok());
        c.push("c0".into());
        prop_assert!(CandidateScoreRequest::new("[MASK]", &c).is_err());
    }
}
