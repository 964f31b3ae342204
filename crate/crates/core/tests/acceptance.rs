//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::time::Instant;

use cbrqa::experiments::{run_experiment, ExperimentConfig, ExperimentKind, ExperimentOutput, ExperimentResult, StructureCheck};
use cbrqa::lf::{parse, LogicalForm};
use cbrqa::memory::CaseMemory;
use cbrqa::pipeline::retrieval_recall;
use cbrqa::retriever::{train_retriever, Encoder, TrainItem};
use cbrqa::revise::ReviseMode;
use cbrqa::worldgen::{generate_dataset, generate_world, SplitKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { name, pass, detail }
}

fn executor_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut agree = 0;
    let mut limited = 0;
    let mut unorderable = 0;
    let mut nonempty = 0;
    let mut first_failure = None;
    let total = 1000;
    for i in 0..total {
        let kb = common::random_kb(&mut rng, 300);
        let lf = common::random_lf(&mut rng, &kb);
        let expected = common::oracle(&lf, &kb);
        let got = common::run_executor(&lf, &kb);
        match &expected {
            common::Expected::Limited { .. } => limited += 1,
            common::Expected::Unorderable => unorderable += 1,
            common::Expected::Exact(_) => {}
        }
        if matches!(&got, Ok(a) if !a.is_empty()) {
            nonempty += 1;
        }
        if expected.accepts(&got) {
            agree += 1;
        } else if first_failure.is_none() {
            first_failure = Some(format!("case {i}: {lf}"));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        "executor oracle equivalence",
        agree == total && secs < 60.0,
        format!(
            "{agree}/{total} agree ({nonempty} nonempty, {limited} tie-limited, {unorderable} unorderable), {secs:.1}s{}",
            first_failure.map(|f| format!(", first mismatch {f}")).unwrap_or_default()
        ),
    )
}

fn parser_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let total = 1000;
    let mut ok = 0;
    let mut with_order = 0;
    let mut first_failure = None;
    for i in 0..total {
        let kb = common::random_kb(&mut rng, 60);
        let lf = common::random_lf(&mut rng, &kb);
        with_order += usize::from(lf.order_limit.is_some());
        let text = common::with_filters(&lf.print(), &mut rng);
        let back: Option<LogicalForm> = parse(&text).ok();
        if back.as_ref() == Some(&lf) {
            ok += 1;
        } else if first_failure.is_none() {
            first_failure = Some(format!("case {i}: {text}"));
        }
    }
    outcome(
        "parser round-trip",
        ok == total,
        format!(
            "{ok}/{total} round-trip ({with_order} with ORDER BY/LIMIT){}",
            first_failure.map(|f| format!(", first mismatch {f}")).unwrap_or_default()
        ),
    )
}

fn gradient_checks() -> Outcome {
    let transe = (0..5).map(|s| common::transe_gradient_error(s, 8)).fold(0.0, f64::max);
    let retriever = (0..5).map(common::retriever_gradient_error).fold(0.0, f64::max);
    outcome(
        "gradient checks",
        transe < 1e-4 && retriever < 1e-4,
        format!("max relative error: transe {transe:.2e}, retriever {retriever:.2e}"),
    )
}

fn retriever_training() -> Outcome {
    let t0 = Instant::now();
    let cfg = ExperimentConfig::default();
    let run = || -> cbrqa::Result<(f64, f64)> {
        let world = generate_world(&cfg.world)?;
        let data = generate_dataset(&world, &cfg.templates, &SplitKind::Standard, cfg.dataset_seed)?;
        let cases = || data.train.iter().map(cbrqa::experiments::train_case).collect::<Vec<_>>();
        let untrained = Encoder::new(cfg.encoder.clone())?;
        let memory = CaseMemory::build(cases(), &untrained)?;
        let before = retrieval_recall(&memory, &untrained, &data.valid, 20)?;
        let mut trained = untrained.clone();
        let items: Vec<TrainItem> = data
            .train
            .iter()
            .map(|e| TrainItem {
                question: &e.question,
                mentions: &e.mentions,
                lf: &e.gold_lf,
            })
            .collect();
        train_retriever(&mut trained, &items, &cfg.retriever_training)?;
        let memory = CaseMemory::build(cases(), &trained)?;
        let after = retrieval_recall(&memory, &trained, &data.valid, 20)?;
        Ok((before, after))
    };
    match run() {
        Ok((before, after)) => {
            let secs = t0.elapsed().as_secs_f64();
            outcome(
                "retriever training effect",
                after - before >= 0.05 && secs < 300.0,
                format!(
                    "dev recall@20 untrained {before:.4}, trained {after:.4} (+{:.1} points), {secs:.1}s",
                    100.0 * (after - before)
                ),
            )
        }
        Err(e) => outcome("retriever training effect", false, format!("error: {e}")),
    }
}

fn case_utility(out: &ExperimentOutput, secs: f64) -> Outcome {
    let ExperimentResult::KAblation(r) = &out.report.result else {
        unreachable!()
    };
    let em = |k: usize| r.rows.iter().find(|row| row.k == k).map(|row| row.metrics.exact_match_accuracy);
    let (Some(e0), Some(e20)) = (em(0), em(20)) else {
        return outcome("case utility", false, "missing k=0 or k=20 row".into());
    };
    let table: Vec<String> = r.rows.iter().map(|row| format!("k={} {:.3}", row.k, row.metrics.exact_match_accuracy)).collect();
    outcome(
        "case utility",
        e20 > e0 && e20 >= 0.70 && secs < 600.0,
        format!("test EM {}, {secs:.1}s", table.join(", ")),
    )
}

fn heldout_injection(out: &ExperimentOutput) -> Outcome {
    let ExperimentResult::HeldoutInjection(r) = &out.report.result else {
        unreachable!()
    };
    let nf = &r.no_forgetting;
    let max_injected = r
        .relations
        .iter()
        .map(|rel| r.injected.iter().filter(|c| &c.relation == rel).count())
        .max()
        .unwrap_or(0);
    let pass = r.heldout_before.exact_match_accuracy == 0.0
        && r.remaining_after.exact_match_accuracy >= 0.50
        && max_injected <= 5
        && r.gradient_steps == 0
        && nf.unaffected_log_identical
        && nf.unaffected_metrics_identical;
    let per_relation: Vec<String> = r.per_relation_after.iter().map(|(k, m)| format!("{k} {:.2}", m.exact_match_accuracy)).collect();
    outcome(
        "held-out relation injection",
        pass,
        format!(
            "EM before {:.3}, after {:.3} ({}), {} cases injected, {} gradient steps; initial log: {}/{} lines byte-identical, all {} lines without an injected case among the retrieved are identical: {}",
            r.heldout_before.exact_match_accuracy,
            r.remaining_after.exact_match_accuracy,
            per_relation.join(", "),
            r.injected.len(),
            r.gradient_steps,
            nf.identical_log_lines,
            nf.initial_questions,
            nf.unaffected,
            nf.unaffected_log_identical
        ),
    )
}

fn revise_efficacy(out: &ExperimentOutput) -> Outcome {
    let ExperimentResult::ReviseAblation(r) = &out.report.result else {
        unreachable!()
    };
    let c = &r.corrupted;
    let rate = |m, b| c.rate(m, b).unwrap_or(f64::NAN);
    let transe = rate(ReviseMode::Transe, 5);
    let surface = rate(ReviseMode::Surface, 5);
    let off = rate(ReviseMode::Off, 5);
    let transe_greedy = rate(ReviseMode::Transe, 1);
    let surface_greedy = rate(ReviseMode::Surface, 1);
    let pass = c.items > 0
        && transe >= 0.70
        && transe >= surface
        && surface >= off
        && transe >= transe_greedy
        && surface >= surface_greedy;
    outcome(
        "revise efficacy and ordering",
        pass,
        format!(
            "{} corrupted LFs ({} single, {} double swaps): transe {transe:.3} (greedy {transe_greedy:.3}), surface {surface:.3} (greedy {surface_greedy:.3}), off {off:.3}",
            c.items, c.single_swaps, c.double_swaps
        ),
    )
}

fn structure_preservation(outs: &[&ExperimentOutput]) -> Outcome {
    let total = outs
        .iter()
        .fold(StructureCheck::default(), |acc, o| acc.merge(o.report.structure));
    outcome(
        "structure preservation",
        total.holds() && total.revisions > 0,
        format!("{}/{} revised LFs keep their skeleton", total.preserved, total.revisions),
    )
}

fn novel_combination(out: &ExperimentOutput) -> Outcome {
    let ExperimentResult::NovelCombination(r) = &out.report.result else {
        unreachable!()
    };
    let em = |k: usize| r.rows.iter().find(|row| row.k == k).map(|row| row.metrics.exact_match_accuracy);
    let (Some(e0), Some(e20)) = (em(0), em(20)) else {
        return outcome("novel combination", false, "missing k=0 or k=20 row".into());
    };
    let table: Vec<String> = r
        .correct_counts
        .iter()
        .map(|row| {
            let counts: Vec<String> = row.correct.iter().map(|(k, n)| format!("k={k}:{n}")).collect();
            format!("{:?} {} [{}]", row.kind, row.total, counts.join(" "))
        })
        .collect();
    outcome(
        "novel combination",
        e20 > e0 && !r.correct_counts.is_empty(),
        format!("EM k=0 {e0:.3}, k=20 {e20:.3}; correct counts {}", table.join("; ")),
    )
}

fn timed_experiment(kind: ExperimentKind, cfg: &ExperimentConfig) -> (cbrqa::Result<ExperimentOutput>, f64) {
    let t0 = Instant::now();
    let out = run_experiment(kind, cfg);
    (out, t0.elapsed().as_secs_f64())
}

fn main() {
    let mut outcomes = vec![executor_oracle(), parser_round_trip(), gradient_checks(), retriever_training()];

    let cfg = ExperimentConfig::default();
    let runs: Vec<(ExperimentKind, cbrqa::Result<ExperimentOutput>, f64)> = ExperimentKind::ALL
        .iter()
        .map(|&k| {
            let (out, secs) = timed_experiment(k, &cfg);
            (k, out, secs)
        })
        .collect();
    let mut ok: Vec<(ExperimentKind, &ExperimentOutput, f64)> = Vec::new();
    for (kind, out, secs) in &runs {
        match out {
            Ok(o) => ok.push((*kind, o, *secs)),
            Err(e) => outcomes.push(outcome(kind.as_str(), false, format!("experiment failed: {e}"))),
        }
    }
    let find = |k: ExperimentKind| ok.iter().find(|(kind, _, _)| *kind == k);
    if let Some((_, o, secs)) = find(ExperimentKind::KAblation) {
        outcomes.push(case_utility(o, *secs));
    }
    if let Some((_, o, _)) = find(ExperimentKind::HeldoutInjection) {
        outcomes.push(heldout_injection(o));
    }
    if let Some((_, o, _)) = find(ExperimentKind::ReviseAblation) {
        outcomes.push(revise_efficacy(o));
    }
    let all: Vec<&ExperimentOutput> = ok.iter().map(|(_, o, _)| *o).collect();
    outcomes.push(structure_preservation(&all));
    if let Some((_, o, _)) = find(ExperimentKind::NovelCombination) {
        outcomes.push(novel_combination(o));
    }

    let failed = outcomes.iter().filter(|o| !o.pass).count();
    for o in &outcomes {
        println!("{} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
