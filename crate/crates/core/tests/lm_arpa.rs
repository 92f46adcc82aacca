mod common;

use common::{malformed_arpa_cases, HAND_ARPA};

use std::io::Write;

use glu_asr::criterion::LetterDict;
use glu_asr::decoder::{beam_search, DecoderParams, LabelSet, Lexicon, LexiconTrie, SmearMode};
use glu_asr::lm::{LmError, NGramLm, UnkPolicy, LN_10};
use glu_asr::tensor::Matrix;

fn hand() -> NGramLm {
    NGramLm::parse_str(HAND_ARPA, UnkPolicy::Strict).unwrap()
}

#[test]
fn hand_computed_sentences() {
    let lm = hand();
    assert_eq!(lm.order(), 2);
    assert_eq!(lm.counts(), vec![6, 5]);
    // explicit bigrams all the way
    assert_eq!(lm.score_sentence(&["the", "cat", "sat"]), -0.25 + -0.5 + -0.75 + -0.125);
    // bo(<s>) + P(cat), bo(cat) + P(the), bo(the) + P(</s>)
    assert_eq!(lm.score_sentence(&["cat", "the"]), -1.75 + -1.25 + -1.75);
    // empty sentence: P(</s> | <s>) via back-off
    assert_eq!(lm.score_sentence::<&str>(&[]), -2.0);
    // unknown word maps to <unk>, which has no successors
    assert_eq!(lm.score_sentence(&["the", "dog"]), -0.25 + -3.25 + -1.5);
    assert_eq!(lm.score_sentence(&["sat", "sat"]), -1.5 + -1.125 + -0.125);
    assert_eq!(lm.score_sentence(&["The", "CAT", "sat"]), lm.score_sentence(&["the", "cat", "sat"]));
}

#[test]
fn stepwise_scores_sum_to_sentence() {
    let lm = hand();
    let words = ["cat", "sat", "the", "cat", "dog", "sat"];
    let mut state = lm.begin_state();
    let mut total = 0.0;
    for w in words {
        let (next, lp) = lm.score_word(state, w);
        assert!(next.len() <= 1);
        total += lp;
        state = next;
    }
    total += lm.score_end(state);
    assert_eq!(total, lm.score_sentence(&words));
}

#[test]
fn explicit_and_backed_off_lookups() {
    let lm = hand();
    let (s, _) = lm.score_word(lm.begin_state(), "the");
    assert_eq!(lm.score_word(s, "cat").1, -0.5);
    assert_eq!(lm.score_word(s, "sat").1, -0.25 + -1.0);
}

#[test]
fn decoder_boundary_converts_to_natural_log() {
    let dict = LetterDict::english();
    let lm = hand();
    let lex = Lexicon::from_words(&["cat"], &dict).unwrap();
    let trie = LexiconTrie::build(&lex, &lm, SmearMode::Max).unwrap();
    let mut e = Matrix::filled(3, dict.len(), -30.0);
    for (t, c) in "cat".chars().enumerate() {
        e.set(t, dict.index_of(c).unwrap(), 0.0);
    }
    let out = beam_search(&e, None, &lm, &trie, DecoderParams::default(), LabelSet::asg(&dict)).unwrap();
    assert_eq!(out[0].words, vec!["cat"]);
    let expected = lm.score_sentence(&["cat"]) * LN_10;
    assert!((out[0].score - expected).abs() < 1e-12);
}

#[test]
fn malformed_files_report_lines() {
    for (name, text, line) in malformed_arpa_cases() {
        match NGramLm::parse_str(&text, UnkPolicy::Strict) {
            Err(LmError::Parse { line: got, .. }) => assert_eq!(got, line, "{name}"),
            other => panic!("{name}: expected a parse error, got {other:?}"),
        }
    }
}

#[test]
fn missing_unk_policy() {
    let text = HAND_ARPA.replace("-3 <unk>\n", "").replace("ngram 1=6", "ngram 1=5");
    assert!(matches!(NGramLm::parse_str(&text, UnkPolicy::Strict), Err(LmError::MissingUnk)));
    let lm = NGramLm::parse_str(&text, UnkPolicy::Floor(-7.0)).unwrap();
    let (state, lp) = lm.score_word(lm.begin_state(), "zebra");
    assert_eq!(lp, -7.0);
    assert!(state.is_empty());
}

#[test]
fn round_trip_through_text() {
    let lm = hand();
    let again = NGramLm::parse_str(&lm.to_arpa(), UnkPolicy::Strict).unwrap();
    assert_eq!(lm, again);
    let mut r = common::rng(41);
    let random = common::random_bigram_arpa(&mut r, &["x", "y", "z"]);
    let lm = NGramLm::parse_str(&random, UnkPolicy::Strict).unwrap();
    assert_eq!(lm, NGramLm::parse_str(&lm.to_arpa(), UnkPolicy::Strict).unwrap());
}

#[test]
fn loads_plain_and_gzip_files() {
    let dir = tempfile::tempdir().unwrap();
    let plain = dir.path().join("lm.arpa");
    std::fs::write(&plain, HAND_ARPA).unwrap();
    let gz = dir.path().join("lm.arpa.gz");
    let mut enc = flate2::write::GzEncoder::new(std::fs::File::create(&gz).unwrap(), flate2::Compression::default());
    enc.write_all(HAND_ARPA.as_bytes()).unwrap();
    enc.finish().unwrap();
    let a = NGramLm::load(&plain, UnkPolicy::Strict).unwrap();
    let b = NGramLm::load(&gz, UnkPolicy::Strict).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, hand());
}
