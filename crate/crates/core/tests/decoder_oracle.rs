mod common;

use common::*;
use glu_asr::criterion::LetterDict;
use glu_asr::decoder::{
    beam_search, DecodeResult, Decoder, DecoderError, DecoderParams, LabelSet, Lexicon, LexiconTrie, MergeMode,
    SmearMode, TRIE_ROOT,
};
use glu_asr::lm::{NGramLm, UnkPolicy};
use proptest::prelude::*;
use rand::Rng;

fn run(case: &TinyDecode, params: DecoderParams) -> Result<Vec<DecodeResult>, DecoderError> {
    let trie = LexiconTrie::build(&case.lexicon, &case.lm, params.smear).unwrap();
    beam_search(&case.emissions, case.transitions.as_ref(), &case.lm, &trie, params, case.labels)
}

/// True when some path was accepted.
fn check_against_oracle(case: &TinyDecode) -> bool {
    let oracle = decode_oracle(case);
    for merge in [MergeMode::Logadd, MergeMode::Max] {
        let params = DecoderParams { merge, ..case.params };
        match (run(case, params), &oracle) {
            (Ok(hyps), Some(o)) => {
                let want = if merge == MergeMode::Logadd { o.logadd_best } else { o.max_best };
                assert_close(hyps[0].score, want, 1e-8, &format!("{merge:?}"));
                if merge == MergeMode::Max {
                    assert_eq!(hyps[0].words, o.max_words);
                }
            }
            (Err(DecoderError::BeamCollapse), None) => {}
            (got, o) => panic!("decoder {:?} vs oracle {:?}", got.map(|h| h[0].score), o.as_ref().map(|o| o.max_best)),
        }
    }
    oracle.is_some()
}

#[test]
fn asg_matches_exhaustive_enumeration() {
    let mut rng = rng(51);
    let decoded = (0..30)
        .filter(|_| check_against_oracle(&random_tiny_decode(&mut rng, false, 7, 5)))
        .count();
    assert!(decoded >= 20, "only {decoded} decodable instances");
}

#[test]
fn ctc_matches_exhaustive_enumeration() {
    let mut rng = rng(52);
    let decoded = (0..30)
        .filter(|_| check_against_oracle(&random_tiny_decode(&mut rng, true, 7, 5)))
        .count();
    assert!(decoded >= 20, "only {decoded} decodable instances");
}

#[test]
fn logadd_never_below_max() {
    let mut rng = rng(53);
    for i in 0..40 {
        let case = random_tiny_decode(&mut rng, i % 2 == 0, 6, 5);
        let a = run(&case, DecoderParams { merge: MergeMode::Logadd, ..case.params });
        let m = run(&case, DecoderParams { merge: MergeMode::Max, ..case.params });
        if let (Ok(a), Ok(m)) = (a, m) {
            assert!(a[0].score >= m[0].score - 1e-12);
        }
    }
}

#[test]
fn bounded_beam_never_beats_unbounded() {
    let mut rng = rng(54);
    for i in 0..40 {
        let case = random_tiny_decode(&mut rng, i % 2 == 1, 7, 5);
        for merge in [MergeMode::Logadd, MergeMode::Max] {
            let full = run(&case, DecoderParams { merge, ..case.params });
            for beam_size in [1, 2, 4] {
                let params = DecoderParams {
                    merge,
                    beam_size,
                    beam_threshold: 3.0,
                    ..case.params
                };
                if let (Ok(full), Ok(narrow)) = (&full, run(&case, params)) {
                    assert!(narrow[0].score <= full[0].score + 1e-9);
                }
            }
        }
    }
}

#[test]
fn smearing_matches_subtree_scan() {
    let dict = LetterDict::english();
    let mut rng = rng(55);
    let mut words = random_words(&mut rng, 1000);
    words.sort();
    words.dedup();
    let mut arpa = format!("\\data\\\nngram 1={}\n\n\\1-grams:\n-99 <s>\n-1 </s>\n-5 <unk>\n", words.len() + 3);
    let probs: Vec<f64> = words.iter().map(|_| rng.gen_range(-6.0..-0.5)).collect();
    for (w, p) in words.iter().zip(&probs) {
        arpa += &format!("{p} {w}\n");
    }
    arpa += "\n\\end\\\n";
    let lm = NGramLm::parse_str(&arpa, UnkPolicy::Strict).unwrap();
    let lex = Lexicon::from_words(&words, &dict).unwrap();
    for mode in [SmearMode::Max, SmearMode::Logadd] {
        let trie = LexiconTrie::build(&lex, &lm, mode).unwrap();
        let spellings: Vec<Vec<usize>> = lex.entries().iter().map(|(_, s)| s.clone()).collect();
        for node_spelling in spellings.iter().flat_map(|s| (1..=s.len()).map(move |k| &s[..k])).take(3000) {
            let node = trie.find(node_spelling).unwrap();
            let below: Vec<f64> = spellings
                .iter()
                .zip(&probs)
                .filter(|(s, _)| s.starts_with(node_spelling))
                .map(|(_, &p)| p)
                .collect();
            let want = match mode {
                SmearMode::Max => below.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                SmearMode::Logadd => {
                    let m = below.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    m + below.iter().map(|p| 10f64.powf(p - m)).sum::<f64>().log10()
                }
            };
            assert!((trie.node(node).smear - want).abs() < 1e-9, "{mode:?}");
        }
        assert!(trie.node(TRIE_ROOT).children.len() <= 27);
    }
}

#[test]
fn spans_partition_the_utterance() {
    let mut rng = rng(56);
    let mut seen_multi = false;
    for i in 0..60 {
        let case = random_tiny_decode(&mut rng, i % 2 == 0, 8, 5);
        let Ok(hyps) = run(&case, case.params) else { continue };
        for h in &hyps {
            assert_eq!(h.spans.len(), h.words.len());
            if let (Some(first), Some(last)) = (h.spans.first(), h.spans.last()) {
                assert_eq!(first.start, 0);
                assert_eq!(last.end, case.emissions.rows());
            }
            for w in h.spans.windows(2) {
                assert_eq!(w[0].end, w[1].start);
                assert!(w[0].start < w[0].end);
            }
            seen_multi |= h.words.len() > 1;
        }
        for w in hyps.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
    }
    assert!(seen_multi);
}

#[test]
fn decoding_is_deterministic() {
    let mut rng = rng(57);
    for i in 0..10 {
        let case = random_tiny_decode(&mut rng, i % 2 == 0, 8, 6);
        let params = DecoderParams { beam_size: 3, ..case.params };
        let trie = LexiconTrie::build(&case.lexicon, &case.lm, params.smear).unwrap();
        let d = Decoder::new(&case.lm, &trie, params, case.labels).unwrap();
        let a = d.decode(&case.emissions, case.transitions.as_ref());
        let b = d.decode(&case.emissions, case.transitions.as_ref());
        match (a, b) {
            (Ok(a), Ok(b)) => {
                assert_eq!(a.len(), b.len());
                for (x, y) in a.iter().zip(&b) {
                    assert_eq!(x.words, y.words);
                    assert_eq!(x.score.to_bits(), y.score.to_bits());
                }
            }
            (Err(_), Err(_)) => {}
            _ => panic!("nondeterministic outcome"),
        }
    }
}

#[test]
fn label_mismatch_is_rejected() {
    let mut rng = rng(58);
    let case = random_tiny_decode(&mut rng, false, 4, 5);
    let labels = LabelSet {
        n_labels: case.labels.n_labels + 1,
        ..case.labels
    };
    let trie = LexiconTrie::build(&case.lexicon, &case.lm, SmearMode::Max).unwrap();
    let r = beam_search(&case.emissions, None, &case.lm, &trie, case.params, labels);
    assert!(matches!(r, Err(DecoderError::LabelMismatch { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn unbounded_beam_is_exact(seed in any::<u64>(), ctc in any::<bool>()) {
        let case = random_tiny_decode(&mut common::rng(seed), ctc, 5, 5);
        let _ = check_against_oracle(&case);
    }
}
