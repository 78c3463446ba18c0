use std::collections::{BTreeMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn small_spec(overlap: f64) -> SyntheticSpec {
    SyntheticSpec {
        labels: 15,
        examples_per_label: 20,
        overlap,
        ..SyntheticSpec::default()
    }
}

fn shape() -> EpisodeShape {
    EpisodeShape {
        way: 3,
        shot: 2,
        query: 4,
    }
}

#[test]
fn synthetic_corpus_is_seed_deterministic() {
    let a = generate_synthetic_corpus(&small_spec(0.5), 4).unwrap();
    let b = generate_synthetic_corpus(&small_spec(0.5), 4).unwrap();
    let c = generate_synthetic_corpus(&small_spec(0.5), 5).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.examples, c.examples);
    assert_eq!(a.examples.len(), 15 * 20);
    assert!(a.examples.iter().all(|e| (8..=14).contains(&e.tokens.len())));
}

#[test]
fn synthetic_spec_rejects_empty_topics() {
    let spec = SyntheticSpec {
        topic_words: 0,
        ..SyntheticSpec::default()
    };
    assert!(matches!(generate_synthetic_corpus(&spec, 0), Err(Error::Contract(_))));
}

fn bayes_accuracy(spec: &SyntheticSpec, corpus: &Corpus) -> f64 {
    let vocab = &corpus.vocab;
    let own: Vec<HashSet<usize>> = (0..spec.labels)
        .map(|l| {
            let mut s: HashSet<usize> = (0..spec.topic_words)
                .map(|j| vocab.id(&SyntheticSpec::topic_token(l, j)).unwrap())
                .collect();
            s.insert(vocab.id(&SyntheticSpec::name_token(l)).unwrap());
            s
        })
        .collect();
    let own_size = (spec.topic_words + 1) as f64;
    let pooled = own_size * spec.labels as f64;
    let bg_ids: HashSet<usize> = (0..spec.background_words)
        .map(|j| vocab.id(&SyntheticSpec::background_token(j)).unwrap())
        .collect();
    let anchor_ids: HashSet<usize> = ANCHOR_WORDS.iter().map(|w| vocab.id(w).unwrap()).collect();
    let content = 1.0 - spec.function_words;
    let word_prob = |w: usize, l: usize| -> f64 {
        if anchor_ids.contains(&w) {
            return spec.function_words / ANCHOR_WORDS.len() as f64;
        }
        if bg_ids.contains(&w) {
            return content * spec.background / spec.background_words as f64;
        }
        let in_own = if own[l].contains(&w) { 1.0 / own_size } else { 0.0 };
        content * (1.0 - spec.background) * (spec.overlap / pooled + (1.0 - spec.overlap) * in_own)
    };
    let mut correct = 0;
    for e in &corpus.examples {
        let mut best = (f64::NEG_INFINITY, 0);
        for l in 0..spec.labels {
            let ll: f64 = e.tokens.iter().map(|&w| word_prob(w, l).ln()).sum();
            if ll > best.0 {
                best = (ll, l);
            }
        }
        correct += usize::from(best.1 == e.label);
    }
    correct as f64 / corpus.examples.len() as f64
}

#[test]
fn bayes_oracle_tracks_overlap() {
    let spec = small_spec(0.0);
    let acc = bayes_accuracy(&spec, &generate_synthetic_corpus(&spec, 1).unwrap());
    assert!(acc >= 0.99, "overlap 0 accuracy {acc}");

    let spec = small_spec(1.0);
    let acc = bayes_accuracy(&spec, &generate_synthetic_corpus(&spec, 1).unwrap());
    assert!((acc - 1.0 / 15.0).abs() < 0.02, "overlap 1 accuracy {acc}");
}

#[test]
fn splits_are_disjoint_and_seeded() {
    let corpus = generate_synthetic_corpus(&small_spec(0.5), 0).unwrap();
    let req = SplitRequest::default();
    let a = make_splits(&corpus, &req, 7, 3).unwrap();
    let b = make_splits(&corpus, &req, 7, 3).unwrap();
    let c = make_splits(&corpus, &req, 8, 3).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
    all.sort();
    assert_eq!(all, (0..15).collect::<Vec<_>>());
    assert!(a.val.len() >= 3 && a.test.len() >= 3);
}

#[test]
fn split_errors() {
    let corpus = generate_synthetic_corpus(&small_spec(0.5), 0).unwrap();
    assert!(matches!(
        make_splits(&corpus, &SplitRequest::default(), 0, 6),
        Err(Error::Capacity(_))
    ));
    let overlapping = SplitRequest::Explicit {
        train: vec![0, 1, 2],
        val: vec![2, 3, 4],
        test: vec![5, 6, 7],
    };
    assert!(matches!(make_splits(&corpus, &overlapping, 0, 3), Err(Error::Contract(_))));
    let ok = SplitRequest::Explicit {
        train: vec![0, 1, 2, 9],
        val: vec![3, 4, 5],
        test: vec![6, 7, 8],
    };
    assert_eq!(make_splits(&corpus, &ok, 0, 3).unwrap().train, vec![0, 1, 2, 9]);
}

#[test]
fn episodes_have_the_requested_shape() {
    let corpus = generate_synthetic_corpus(&small_spec(0.5), 0).unwrap();
    let sampler = EpisodeSampler::new(&corpus, &[0, 1, 2, 3, 4], shape()).unwrap();
    let ep = sampler.sample(&mut ChaCha8Rng::seed_from_u64(3));
    assert_eq!(ep.palette.len(), 3);
    assert_eq!(ep.support.len(), 6);
    assert_eq!(ep.query.len(), 12);
    for local in 0..3 {
        assert_eq!(ep.support.iter().filter(|e| e.label == local).count(), 2);
        assert_eq!(ep.query.iter().filter(|e| e.label == local).count(), 4);
    }
    let unique: HashSet<usize> = ep.palette.iter().copied().collect();
    assert_eq!(unique.len(), 3);
    let verb = ep.verbalizer(&corpus).unwrap();
    assert_eq!(verb.answers(1), corpus.label_answers[ep.palette[1]].as_slice());
}

#[test]
fn support_and_query_draw_distinct_examples() {
    let spec = SyntheticSpec {
        labels: 6,
        examples_per_label: 6,
        ..SyntheticSpec::default()
    };
    let mut corpus = generate_synthetic_corpus(&spec, 0).unwrap();
    // Make every example distinguishable by its first token.
    for (i, e) in corpus.examples.iter_mut().enumerate() {
        e.tokens[0] = i % corpus.vocab.len();
    }
    let sampler = EpisodeSampler::new(&corpus, &[0, 1, 2, 3], shape()).unwrap();
    for ep in sampler.stream(1, 200) {
        let mut firsts: Vec<(usize, usize)> = ep
            .support
            .iter()
            .chain(&ep.query)
            .map(|e| (e.label, e.tokens[0]))
            .collect();
        let n = firsts.len();
        firsts.sort();
        firsts.dedup();
        assert_eq!(firsts.len(), n);
    }
}

#[test]
fn streams_are_deterministic() {
    let corpus = generate_synthetic_corpus(&small_spec(0.5), 0).unwrap();
    let sampler = EpisodeSampler::new(&corpus, &[0, 1, 2, 3, 4, 5], shape()).unwrap();
    assert_eq!(sampler.stream(11, 20), sampler.stream(11, 20));
    assert_ne!(sampler.stream(11, 20), sampler.stream(12, 20));
}

#[test]
fn train_and_test_episodes_never_share_labels() {
    let corpus = generate_synthetic_corpus(&small_spec(0.5), 0).unwrap();
    let split = make_splits(&corpus, &SplitRequest::default(), 2, 3).unwrap();
    let train = EpisodeSampler::new(&corpus, &split.train, shape()).unwrap();
    let test = EpisodeSampler::new(&corpus, &split.test, shape()).unwrap();
    let train_seen: HashSet<usize> = train.stream(1, 10_000).iter().flat_map(|e| e.palette.clone()).collect();
    let test_seen: HashSet<usize> = test.stream(2, 10_000).iter().flat_map(|e| e.palette.clone()).collect();
    assert!(train_seen.is_disjoint(&test_seen));
}

#[test]
fn label_pairs_are_uniform() {
    let corpus = generate_synthetic_corpus(&small_spec(0.5), 0).unwrap();
    let two_way = EpisodeShape {
        way: 2,
        shot: 1,
        query: 1,
    };
    let sampler = EpisodeSampler::new(&corpus, &[0, 1, 2, 3], two_way).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let draws = 100_000;
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for _ in 0..draws {
        let ep = sampler.sample(&mut rng);
        let (a, b) = (ep.palette[0].min(ep.palette[1]), ep.palette[0].max(ep.palette[1]));
        *counts.entry((a, b)).or_default() += 1;
    }
    assert_eq!(counts.len(), 6);
    for (pair, c) in counts {
        let f = c as f64 / draws as f64;
        assert!((f - 1.0 / 6.0).abs() < 0.01, "{pair:?} frequency {f}");
    }
}

#[test]
fn deficient_label_is_named() {
    let mut corpus = generate_synthetic_corpus(&small_spec(0.5), 0).unwrap();
    let keep: Vec<_> = corpus
        .examples
        .iter()
        .filter(|e| e.label != 4)
        .cloned()
        .chain(corpus.examples.iter().filter(|e| e.label == 4).take(3).cloned())
        .collect();
    corpus.examples = keep;
    let err = EpisodeSampler::new(&corpus, &[0, 1, 4], shape()).unwrap_err();
    match err {
        Error::Capacity(msg) => assert!(msg.contains("lab4"), "{msg}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("news.jsonl");
    std::fs::write(
        &path,
        "{\"text\": \"stocks fall on rates\", \"label\": \"business news\"}\n\
         \n\
         {\"text\": \"team wins cup\", \"label\": \"sports\"}\n\
         {\"text\": \"rates rise again\", \"label\": \"business news\"}\n",
    )
    .unwrap();
    let corpus = load_jsonl(&path, &VocabPolicy::default()).unwrap();
    assert_eq!(corpus.num_labels(), 2);
    assert_eq!(corpus.domain, "news");
    assert_eq!(corpus.label_names, vec!["business news", "sports"]);
    let answer = corpus.label_answers[0][0];
    assert_eq!(corpus.vocab.token(answer), Some("business_news"));
    assert_eq!(corpus.examples[2].label, 0);

    let out = dir.path().join("copy.jsonl");
    write_jsonl(&corpus, &out).unwrap();
    let back = load_jsonl(&out, &VocabPolicy::default()).unwrap();
    assert_eq!(back.examples, corpus.examples);
    assert_eq!(back.label_names, corpus.label_names);
}

#[test]
fn jsonl_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"text\": \"a b\", \"label\": \"x\"}\n{\"text\": 3}\n").unwrap();
    assert!(matches!(
        load_jsonl(&bad, &VocabPolicy::default()),
        Err(Error::Parse { line: 2, .. })
    ));
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "\n").unwrap();
    assert!(matches!(load_jsonl(&empty, &VocabPolicy::default()), Err(Error::Contract(_))));
}

#[test]
fn vocab_policy_caps_and_filters() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    std::fs::write(
        &path,
        "{\"text\": \"a a a b b c\", \"label\": \"x\"}\n{\"text\": \"a b d\", \"label\": \"y\"}\n",
    )
    .unwrap();
    let policy = VocabPolicy {
        max_words: Some(3),
        min_count: 2,
    };
    let corpus = load_jsonl(&path, &policy).unwrap();
    assert!(corpus.vocab.id("a").is_some() && corpus.vocab.id("b").is_some());
    assert!(corpus.vocab.id("c").is_none());
    assert_eq!(corpus.examples[1].tokens[2], crate::model::Vocab::UNK_ID);
}
