mod common;

use cbrqa::kb::KnowledgeBase;
use cbrqa::linker::{Mention, MentionSource};
use cbrqa::lf::{parse, LogicalForm, Skeleton};
use cbrqa::memory::{Case, Provenance};
use cbrqa::reuse::{Generator, GeneratorConfig};
use cbrqa::revise::{align, RelationSimilarity};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RELATIONS: [&str; 5] = [
    "people.person.nationality",
    "location.country.capital",
    "people.person.place_of_birth",
    "film.film.directed_by",
    "location.location.containedby",
];

fn random_case(i: usize, rng: &mut ChaCha8Rng) -> Case {
    let r1 = RELATIONS.choose(rng).unwrap();
    let r2 = RELATIONS.choose(rng).unwrap();
    let text = match rng.gen_range(0..3) {
        0 => format!("SELECT DISTINCT ?x WHERE {{ ns:m.c{i} ns:{r1} ?x . }}"),
        1 => format!("SELECT DISTINCT ?x WHERE {{ ns:m.c{i} ns:{r1} ?y . ?y ns:{r2} ?x . }}"),
        _ => format!("SELECT DISTINCT ?x WHERE {{ ns:m.c{i} ns:{r1} ?x . ns:m.d{i} ns:{r2} ?x . }}"),
    };
    let question = format!("what about case {i} and its {}", r1.replace(['.', '_'], " "));
    Case {
        id: format!("case-{i:02}"),
        mentions: vec![Mention::new(&question, (11, 15), &format!("m.c{i}"), MentionSource::Gold)],
        question,
        lf: parse(&text).unwrap(),
        provenance: Provenance::Train,
    }
}

fn query() -> (String, Vec<Mention>) {
    let q = "where was alpha born and what is the nationality of beta".to_string();
    let mentions = vec![
        Mention::new(&q, (10, 15), "m.alpha", MentionSource::Gold),
        Mention::new(&q, (52, 56), "m.beta", MentionSource::Gold),
    ];
    (q, mentions)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn beam_output_is_a_prefix_of_exhaustive_search(seed in any::<u64>(), beam in 1usize..6, global in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cases: Vec<Case> = (0..rng.gen_range(1..6)).map(|i| random_case(i, &mut rng)).collect();
        let sims: Vec<f64> = cases.iter().map(|_| rng.gen_range(0.0..1.0)).collect();
        let retrieved: Vec<(&Case, f64)> = cases.iter().zip(sims).collect();
        let (q, mentions) = query();
        let generator = Generator::new(&RELATIONS);
        let config = GeneratorConfig { beam, use_global_vocab: global, ..GeneratorConfig::default() };
        let top = generator.generate(&q, &mentions, &retrieved, &config).unwrap();
        let all = generator.enumerate(&q, &mentions, &retrieved, &config).unwrap();
        prop_assert_eq!(top.len(), beam.min(all.len()));
        for (a, b) in top.iter().zip(&all) {
            prop_assert!((a.score - b.score).abs() < 1e-9, "{} vs {}", a.score, b.score);
        }
        for w in all.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
    }

    #[test]
    fn alignment_preserves_structure_and_is_idempotent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kb = common::random_kb(&mut rng, 150);
        let lf = corrupt(&common::random_lf(&mut rng, &kb), &mut rng);
        let sim = RelationSimilarity::surface(&kb);
        for beam in [1, 5] {
            let r = align(&lf, &kb, &sim, beam).unwrap();
            prop_assert_eq!(Skeleton::of(&r.lf), Skeleton::of(&lf));
            if r.executed {
                prop_assert!(!r.answers.is_empty());
                let again = align(&r.lf, &kb, &sim, beam).unwrap();
                prop_assert!(!again.changed());
                prop_assert_eq!(again.lf, r.lf.clone());
            }
        }
    }

    #[test]
    fn wide_beam_finds_whatever_greedy_finds(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kb = common::random_kb(&mut rng, 150);
        let lf = corrupt(&common::random_lf(&mut rng, &kb), &mut rng);
        let sim = RelationSimilarity::surface(&kb);
        let greedy = align(&lf, &kb, &sim, 1).unwrap();
        let wide = align(&lf, &kb, &sim, 10_000).unwrap();
        prop_assert!(!greedy.executed || wide.executed);
    }
}

/// Renames some pattern relations so they no longer occur in the KB.
fn corrupt(lf: &LogicalForm, rng: &mut ChaCha8Rng) -> LogicalForm {
    let mut out = lf.clone();
    for p in &mut out.patterns {
        if rng.gen_bool(0.5) {
            p.relation = format!("{}_x", p.relation);
        }
    }
    out
}

#[test]
fn unknown_relation_on_empty_kb_stays_unexecuted() {
    let kb = KnowledgeBase::from_triples([]);
    let lf = parse("SELECT DISTINCT ?x WHERE { ns:m.a ns:r.s ?x . }").unwrap();
    let r = align(&lf, &kb, &RelationSimilarity::surface(&kb), 5).unwrap();
    assert!(!r.executed);
    assert_eq!(r.lf, lf);
}
