use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use glu_asr::model::ArchSpec;
use glu_asr::synth::{generate, ToyCorpusConfig};

fn glu_asr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glu-asr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = glu_asr(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const ARPA: &str = "\\data\\\nngram 1=5\nngram 2=2\n\n\\1-grams:\n-99 <s> -0.5\n-1 </s>\n-3 <unk>\n-0.5 the -0.25\n-1 cat\n\n\\2-grams:\n-0.25 <s> the\n-0.5 the cat\n\n\\end\\\n";

#[test]
fn eval_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("t.txt");
    fs::write(&f, "the cat sat\nhello world\n").unwrap();
    let out = ok(&["eval", "--ref", p(&f), "--hyp", p(&f)]);
    assert_eq!(out, "WER 0.00%\nLER 0.00%\n");
}

#[test]
fn eval_counts_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (r, h) = (dir.path().join("r"), dir.path().join("h"));
    fs::write(&r, "a\tthe cat sat\n").unwrap();
    fs::write(&h, "a\t-1.0\tthe bat sat\n").unwrap();
    let out = ok(&["eval", "--ref", p(&r), "--hyp", p(&h)]);
    assert!(out.starts_with("WER 33.33%\n"), "{out}");
}

#[test]
fn exit_codes() {
    assert_eq!(glu_asr(&["--no-such-flag"]).status.code(), Some(1));
    assert_eq!(glu_asr(&["train", "--ckpt-out", "/tmp/x"]).status.code(), Some(1));
    let missing = glu_asr(&["features", "--manifest", "/nonexistent/m.tsv", "--out", "/tmp/never"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error: "));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.arpa");
    fs::write(&bad, ARPA.replace("-1 cat", "1 cat")).unwrap();
    let text = dir.path().join("t.txt");
    fs::write(&text, "the cat\n").unwrap();
    assert_eq!(glu_asr(&["lm", "score", "--arpa", p(&bad), "--text", p(&text)]).status.code(), Some(2));
}

#[test]
fn config_dump_round_trips() {
    let out = ok(&["config", "dump", "wsj-low-dropout"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["arch"]["n_conv_layers"], 17);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(&path, &out).unwrap();
    let described = ok(&["model", "describe", "--arch", p(&path)]);
    assert_eq!(described, ok(&["model", "describe", "--arch", "wsj-low-dropout"]));
}

#[test]
fn model_describe_counts_parameters() {
    let arch = ArchSpec::wsj_low_dropout();
    let out = ok(&["model", "describe", "--arch", "wsj-low-dropout"]);
    let total = out.lines().find(|l| l.starts_with("total")).unwrap();
    assert_eq!(total.split('\t').next_back().unwrap(), arch.param_count().to_string());
    assert_eq!(out.lines().count(), arch.n_conv_layers + 5);
}

#[test]
fn lm_score_sentences() {
    let dir = tempfile::tempdir().unwrap();
    let arpa = dir.path().join("lm.arpa");
    let text = dir.path().join("t.txt");
    fs::write(&arpa, ARPA).unwrap();
    fs::write(&text, "The cat\n\ncat\n").unwrap();
    let out = ok(&["lm", "score", "--arpa", p(&arpa), "--text", p(&text)]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3);
    // -0.25 - 0.5 + (-1) and -0.5 - 1 + (-1)
    assert_eq!(lines[0], "-1.750000\tthe cat");
    assert_eq!(lines[1], "-2.500000\tcat");
    let ppl: f64 = lines[2].split('\t').nth(1).unwrap().parse().unwrap();
    assert!((ppl - 10f64.powf(4.25 / 5.0)).abs() < 1e-3);
}

#[test]
fn toy_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = ToyCorpusConfig {
        n_utterances: 4,
        max_words: 2,
        ..ToyCorpusConfig::default()
    };
    let corpus = generate(&config);
    let mut manifest = String::new();
    for u in &corpus {
        u.wave.write_wav(root.join(format!("{}.wav", u.id))).unwrap();
        manifest += &format!("{}\t{}.wav\t{}\n", u.id, u.id, u.text);
    }
    fs::write(root.join("wav.tsv"), manifest).unwrap();

    let feats = root.join("feats");
    let listing = ok(&["features", "--manifest", p(&root.join("wav.tsv")), "--out", p(&feats), "--jobs", "2"]);
    assert_eq!(listing.lines().count(), corpus.len());
    let feat_manifest = feats.join("manifest.tsv");

    let arch = ArchSpec {
        n_conv_layers: 2,
        dropout_first: 0.9,
        dropout_last: 0.9,
        hu_first: 8,
        hu_last: 8,
        kw_first: 3,
        kw_last: 3,
        fc_size: 16,
        n_labels: 30,
        input_dim: 40,
    };
    let arch_path = root.join("arch.json");
    fs::write(&arch_path, serde_json::to_string(&arch).unwrap()).unwrap();
    let train = |ckpt: &Path, log: &Path| {
        ok(&[
            "train",
            "--manifest",
            p(&feat_manifest),
            "--arch",
            p(&arch_path),
            "--criterion",
            "asg",
            "--epochs",
            "2",
            "--seed",
            "3",
            "--jobs",
            "2",
            "--ckpt-out",
            p(ckpt),
            "--log",
            p(log),
        ])
    };
    let (ckpt, log) = (root.join("m.ckpt"), root.join("train.jsonl"));
    let stdout = train(&ckpt, &log);
    assert_eq!(stdout.lines().count(), 2);
    assert_eq!(fs::read_to_string(&log).unwrap(), stdout);
    let (again, log2) = (root.join("m2.ckpt"), root.join("train2.jsonl"));
    let without_time = |log: &str| -> Vec<serde_json::Value> {
        log.lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("wall_time_s");
                v
            })
            .collect()
    };
    assert_eq!(without_time(&train(&again, &log2)), without_time(&stdout));
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(&again).unwrap());

    let described = ok(&["model", "describe", "--ckpt", p(&ckpt)]);
    assert!(described.contains("transitions"));

    let aligned = ok(&["align", "--ckpt", p(&ckpt), "--manifest", p(&feat_manifest)]);
    let first = aligned.lines().next().unwrap();
    assert_eq!(first.split('\t').count(), 4);
    assert!(first.starts_with(&corpus[0].id));

    let words: Vec<&str> = config.words.iter().map(String::as_str).collect();
    let lexicon = root.join("lexicon.txt");
    fs::write(&lexicon, words.join("\n")).unwrap();
    let lp = -((words.len() + 1) as f64).log10();
    let mut arpa = format!("\\data\\\nngram 1={}\n\n\\1-grams:\n-99 <s>\n{lp} </s>\n-10 <unk>\n", words.len() + 3);
    for w in &words {
        arpa += &format!("{lp} {w}\n");
    }
    arpa += "\n\\end\\\n";
    let arpa_path = root.join("lm.arpa");
    fs::write(&arpa_path, arpa).unwrap();
    let hyp = root.join("hyp.tsv");
    let out = glu_asr(&[
        "decode",
        "--ckpt",
        p(&ckpt),
        "--manifest",
        p(&feat_manifest),
        "--arpa",
        p(&arpa_path),
        "--lexicon",
        p(&lexicon),
        "--beam-size",
        "20",
        "--out",
        p(&hyp),
    ]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(out.status.success(), "{stderr}");
    assert!(stderr.contains("WER"), "{stderr}");
    let hyps = fs::read_to_string(&hyp).unwrap();
    assert_eq!(hyps.lines().count(), corpus.len());
    for line in hyps.lines() {
        let text = line.split('\t').nth(2).unwrap();
        assert!(text.split_whitespace().all(|w| words.contains(&w)), "{line}");
    }
    let scored = ok(&["eval", "--ref", p(&feat_manifest), "--hyp", p(&hyp)]);
    assert!(scored.starts_with("WER "));

    let svg = ok(&["plot", "--log", p(&log)]);
    assert!(svg.trim_start().starts_with("<svg"), "{svg}");
    assert!(svg.trim_end().ends_with("</svg>"));
}
