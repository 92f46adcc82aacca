//! Command-line front end. [`run`] parses arguments, dispatches the
//! subcommand and maps failures to exit codes: 1 for usage errors, 2 for
//! data or parse errors, 3 for numeric failures such as a NaN loss.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use glu_asr::config::{load_config, Config};
use glu_asr::criterion::{viterbi_align, Criterion, LetterDict};
use glu_asr::decoder::{Decoder, LabelSet, Lexicon, LexiconTrie, MergeMode, SmearMode};
use glu_asr::features::{read_feature_file, write_feature_file, Mfsc, MfscConfig};
use glu_asr::lm::{perplexity, NGramLm, UnkPolicy};
use glu_asr::model::{AcousticModel, ArchSpec, Checkpoint, Mode};
use glu_asr::tensor::{log_softmax_rows, Matrix};
use glu_asr::train::{
    load_features, load_utterances, render_svg, ClipMode, EpochStats, ErrorCounts, Manifest, TrainError,
    Trainer, Utterance,
};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Data(_) => EXIT_DATA,
            Self::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) | Self::Data(m) | Self::Numeric(m) => f.write_str(m),
        }
    }
}

fn data<E: Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn train_err(e: TrainError) -> CliError {
    match e {
        TrainError::NonFinite(_) => CliError::Numeric(e.to_string()),
        e => data(e),
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "glu-asr", version, about = "Letter-based speech recognition with gated ConvNets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute log-mel filterbank features for every manifest entry.
    Features(FeaturesArgs),
    /// Train an acoustic model.
    Train(TrainArgs),
    /// Forced alignment of transcriptions with a trained model.
    Align(AlignArgs),
    /// Lexicon and language-model constrained beam-search decoding.
    Decode(DecodeArgs),
    /// Word and letter error rates of hypotheses against references.
    Eval(EvalArgs),
    /// Language model utilities.
    #[command(subcommand)]
    Lm(LmCommand),
    /// Model utilities.
    #[command(subcommand)]
    Model(ModelCommand),
    /// Render a training log as an SVG chart.
    Plot(PlotArgs),
    /// Configuration utilities.
    #[command(subcommand)]
    Config(ConfigCommand),
}

#[derive(Args, Debug)]
struct FeaturesArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Preset name or JSON architecture file.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    criterion: Option<Criterion>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    clip_eps: Option<f64>,
    /// Clip to a maximum norm, or apply `max(|g|, eps) g / |g|` literally.
    #[arg(long, value_parser = parse_clip_mode)]
    clip_mode: Option<ClipMode>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Resume from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    ckpt_out: PathBuf,
    /// Also append the JSON-lines log to this file.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AlignArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Do not add `#` around each transcription.
    #[arg(long)]
    no_surround_silence: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trained model; with `--manifest` its emissions are decoded.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Directory of precomputed `<id>.emis` emission files.
    #[arg(long, conflicts_with = "manifest")]
    emissions: Option<PathBuf>,
    /// Criterion of precomputed emissions (default: the checkpoint's).
    #[arg(long)]
    criterion: Option<Criterion>,
    #[arg(long)]
    arpa: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    beam_size: Option<usize>,
    #[arg(long)]
    beam_threshold: Option<f64>,
    #[arg(long, value_parser = parse_merge)]
    merge: Option<MergeMode>,
    #[arg(long, value_parser = parse_smear)]
    smear: Option<SmearMode>,
    #[arg(long, default_value_t = 1)]
    nbest: usize,
    /// log10 probability for words outside an LM that has no `<unk>`.
    #[arg(long, allow_negative_numbers = true)]
    unk_floor: Option<f64>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    hyp: PathBuf,
}

#[derive(Subcommand, Debug)]
enum LmCommand {
    /// Per-sentence log10 scores and perplexity.
    Score {
        #[arg(long)]
        arpa: PathBuf,
        #[arg(long)]
        text: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        unk_floor: Option<f64>,
    },
}

#[derive(Subcommand, Debug)]
enum ModelCommand {
    /// Per-layer shapes and parameter counts.
    Describe {
        #[arg(long, conflicts_with = "arch")]
        ckpt: Option<PathBuf>,
        /// Preset name or JSON architecture file.
        #[arg(long)]
        arch: Option<String>,
    },
}

#[derive(Args, Debug)]
struct PlotArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum ConfigCommand {
    /// Print a built-in preset as JSON.
    Dump { preset: String },
}

fn parse_clip_mode(s: &str) -> std::result::Result<ClipMode, String> {
    match s {
        "max-norm" => Ok(ClipMode::MaxNorm),
        "literal" => Ok(ClipMode::Literal),
        "off" => Ok(ClipMode::Off),
        _ => Err("expected max-norm, literal or off".into()),
    }
}

fn parse_merge(s: &str) -> std::result::Result<MergeMode, String> {
    s.parse()
}

fn parse_smear(s: &str) -> std::result::Result<SmearMode, String> {
    match s {
        "max" => Ok(SmearMode::Max),
        "logadd" => Ok(SmearMode::Logadd),
        _ => Err("expected max or logadd".into()),
    }
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Features(a) => features(a),
        Command::Train(a) => train(a),
        Command::Align(a) => align(a),
        Command::Decode(a) => decode(a),
        Command::Eval(a) => eval(a),
        Command::Lm(LmCommand::Score { arpa, text, unk_floor }) => lm_score(&arpa, &text, unk_floor),
        Command::Model(ModelCommand::Describe { ckpt, arch }) => describe(ckpt, arch),
        Command::Plot(a) => plot(a),
        Command::Config(ConfigCommand::Dump { preset }) => {
            let c = Config::preset(&preset).map_err(|e| CliError::Usage(e.to_string()))?;
            println!("{}", c.to_json());
            Ok(())
        }
    }
}

/// Output sink: a file when `path` is given, stdout otherwise.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p).map_err(|e| data(format!("{}: {e}", p.display())))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Order-preserving map over `items` on up to `jobs` threads.
fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(f).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

fn features(a: FeaturesArgs) -> Result<()> {
    let manifest = Manifest::load(&a.manifest).map_err(data)?;
    fs::create_dir_all(&a.out).map_err(data)?;
    let mfsc = Mfsc::new(MfscConfig::default()).map_err(data)?;
    let results = par_map(&manifest.entries, a.jobs, |e| {
        let feats = load_features(&e.path, &mfsc).map_err(|err| data(format!("{}: {err}", e.id)))?;
        let path = a.out.join(format!("{}.feat", e.id));
        write_feature_file(&path, &feats).map_err(data)?;
        Ok::<_, CliError>((path, feats.rows()))
    });
    let mut out = sink(None)?;
    let mut listing = String::new();
    for (e, r) in manifest.entries.iter().zip(results) {
        let (path, frames) = r?;
        writeln!(out, "{}\t{}\t{frames}", e.id, path.display()).map_err(data)?;
        listing.push_str(&format!("{}\t{}.feat\t{}\n", e.id, e.id, e.text));
    }
    fs::write(a.out.join("manifest.tsv"), listing).map_err(data)?;
    eprintln!("features: wrote {} utterances to {}", manifest.len(), a.out.display());
    Ok(())
}

/// A preset name, a JSON architecture, or a JSON config holding one.
fn load_arch(spec: &str) -> Result<ArchSpec> {
    if let Ok(c) = Config::preset(spec) {
        return Ok(c.arch);
    }
    let text = fs::read_to_string(spec).map_err(|e| data(format!("arch {spec}: {e}")))?;
    let arch: ArchSpec = match serde_json::from_str(&text) {
        Ok(a) => a,
        Err(first) => match Config::from_json(&text) {
            Ok(c) => c.arch,
            Err(_) => return Err(data(format!("arch {spec}: {first}"))),
        },
    };
    arch.validate().map_err(data)?;
    Ok(arch)
}

fn train(a: TrainArgs) -> Result<()> {
    let mut config = match (&a.config, &a.arch) {
        (Some(path), _) => load_config(path).map_err(data)?,
        (None, Some(_)) => Config::with_arch(ArchSpec::wsj_low_dropout()),
        (None, None) => return Err(CliError::Usage("train needs --arch or --config".into())),
    };
    if let Some(spec) = &a.arch {
        config.arch = load_arch(spec)?;
    }
    let t = &mut config.train;
    if let Some(c) = a.criterion {
        t.criterion = c;
    }
    if let Some(v) = a.lr {
        t.learning_rate = v;
    }
    if let Some(v) = a.momentum {
        t.momentum = v;
    }
    if let Some(v) = a.clip_eps {
        t.clip_eps = v;
    }
    if let Some(v) = a.clip_mode {
        t.clip_mode = v;
    }
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.jobs {
        t.jobs = v;
    }
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let manifest_path = a
        .manifest
        .clone()
        .or(config.paths.manifest.clone())
        .ok_or_else(|| CliError::Usage("train needs --manifest (or paths.manifest in the config)".into()))?;

    let dict = LetterDict::english();
    let manifest = Manifest::load(&manifest_path).map_err(data)?;
    let data_set = load_utterances(&manifest, &dict, config.train.surround_silence).map_err(data)?;
    let n_out = config.train.criterion.n_outputs(&dict);
    if config.arch.n_labels != n_out {
        eprintln!(
            "train: using {n_out} output labels for {} (architecture said {})",
            config.train.criterion, config.arch.n_labels
        );
        config.arch.n_labels = n_out;
    }
    let mut trainer = match &a.init {
        Some(path) => {
            let ckpt = Checkpoint::load(path).map_err(data)?;
            Trainer::from_checkpoint(ckpt, config.train.clone(), dict).map_err(train_err)?
        }
        None => {
            let model = AcousticModel::new(config.arch.clone(), config.train.seed).map_err(data)?;
            Trainer::new(model, config.train.clone(), dict).map_err(train_err)?
        }
    };
    eprintln!(
        "train: {} utterances, {} parameters, criterion {}",
        data_set.len(),
        trainer.model.params.num_params(),
        config.train.criterion
    );
    let mut log_file = match &a.log {
        Some(p) => Some(fs::File::create(p).map_err(|e| data(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let mut out = sink(None)?;
    for _ in 0..config.train.epochs {
        let stats = trainer.train_epoch(&data_set).map_err(train_err)?;
        if !stats.loss.is_finite() && stats.utterances > 0 {
            return Err(CliError::Numeric(format!("non-finite loss at epoch {}", stats.epoch)));
        }
        let line = serde_json::to_string(&stats).map_err(data)?;
        writeln!(out, "{line}").map_err(data)?;
        out.flush().map_err(data)?;
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{line}").map_err(data)?;
        }
        if stats.skipped > 0 {
            eprintln!("train: epoch {}: skipped {} infeasible utterances", stats.epoch, stats.skipped);
        }
        trainer.checkpoint().save(&a.ckpt_out).map_err(data)?;
    }
    trainer.checkpoint().save(&a.ckpt_out).map_err(data)?;
    Ok(())
}

fn model_emissions(ckpt: &Checkpoint, features: &Matrix) -> Result<Matrix> {
    Ok(ckpt.model.forward_unpadded(features, Mode::Eval, 0).map_err(data)?.emissions)
}

fn align(a: AlignArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt).map_err(data)?;
    let dict = LetterDict::english();
    let manifest = Manifest::load(&a.manifest).map_err(data)?;
    let utts = load_utterances(&manifest, &dict, !a.no_surround_silence).map_err(data)?;
    let mut out = sink(a.out.as_deref())?;
    for u in &utts {
        let e = model_emissions(&ckpt, &u.features)?;
        let al = viterbi_align(&e, ckpt.transitions.as_ref(), &u.target, ckpt.criterion)
            .map_err(|err| data(format!("{}: {err}", u.id)))?;
        for (t, (&l, s)) in al.labels.iter().zip(&al.cumulative).enumerate() {
            writeln!(out, "{}\t{t}\t{}\t{s:.6}", u.id, dict.symbol(l)).map_err(data)?;
        }
    }
    out.flush().map_err(data)
}

struct DecodeInput {
    id: String,
    emissions: Matrix,
    reference: Option<String>,
}

fn decode(a: DecodeArgs) -> Result<()> {
    let config = match &a.config {
        Some(p) => Some(load_config(p).map_err(data)?),
        None => None,
    };
    let mut params = config.as_ref().map(|c| c.decoder).unwrap_or_default();
    if let Some(v) = a.alpha {
        params.alpha = v;
    }
    if let Some(v) = a.beta {
        params.beta = v;
    }
    if let Some(v) = a.gamma {
        params.gamma = v;
    }
    if let Some(v) = a.beam_size {
        params.beam_size = v;
    }
    if let Some(v) = a.beam_threshold {
        params.beam_threshold = v;
    }
    if let Some(v) = a.merge {
        params.merge = v;
    }
    if let Some(v) = a.smear {
        params.smear = v;
    }
    params.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if a.nbest == 0 {
        return Err(CliError::Usage("--nbest must be >= 1".into()));
    }
    let paths = config.as_ref().map(|c| c.paths.clone()).unwrap_or_default();
    let arpa = a
        .arpa
        .clone()
        .or(paths.arpa)
        .ok_or_else(|| CliError::Usage("decode needs --arpa".into()))?;
    let lexicon = a
        .lexicon
        .clone()
        .or(paths.lexicon)
        .ok_or_else(|| CliError::Usage("decode needs --lexicon".into()))?;

    let dict = LetterDict::english();
    let policy = a.unk_floor.map_or(UnkPolicy::Strict, UnkPolicy::Floor);
    let lm = NGramLm::load(&arpa, policy).map_err(|e| data(format!("{}: {e}", arpa.display())))?;
    let lex = Lexicon::load(&lexicon, &dict).map_err(|e| data(format!("{}: {e}", lexicon.display())))?;
    let trie = LexiconTrie::build(&lex, &lm, params.smear).map_err(data)?;

    let ckpt = match &a.ckpt {
        Some(p) => Some(Checkpoint::load(p).map_err(data)?),
        None => None,
    };
    let criterion = a
        .criterion
        .or(ckpt.as_ref().map(|c| c.criterion))
        .ok_or_else(|| CliError::Usage("decode needs --ckpt or --criterion".into()))?;
    let inputs: Vec<DecodeInput> = match (&a.emissions, &a.manifest, &ckpt) {
        (Some(dir), _, _) => read_emission_dir(dir)?,
        (None, Some(manifest), Some(ckpt)) => {
            let manifest_path = manifest.clone();
            let manifest = Manifest::load(&manifest_path).map_err(data)?;
            let utts = load_utterances(&manifest, &dict, false).map_err(data)?;
            let computed = par_map(&utts, a.jobs, |u: &Utterance| {
                let e = model_emissions(ckpt, &u.features)?;
                Ok::<_, CliError>(DecodeInput {
                    id: u.id.clone(),
                    emissions: match criterion {
                        Criterion::Ctc => log_softmax_rows(&e),
                        Criterion::Asg => e,
                    },
                    reference: Some(u.text.clone()),
                })
            });
            computed.into_iter().collect::<Result<_>>()?
        }
        (None, Some(_), None) => return Err(CliError::Usage("--manifest needs --ckpt".into())),
        (None, None, _) => return Err(CliError::Usage("decode needs --emissions or --manifest".into())),
    };
    let labels = match criterion {
        Criterion::Asg => LabelSet::asg(&dict),
        Criterion::Ctc => LabelSet::ctc(&dict),
    };
    let tr = match criterion {
        Criterion::Asg => ckpt.as_ref().and_then(|c| c.transitions.clone()),
        Criterion::Ctc => None,
    };
    let decoder = Decoder::new(&lm, &trie, params, labels).map_err(data)?;
    let results = par_map(&inputs, a.jobs, |inp| {
        decoder
            .decode(&inp.emissions, tr.as_ref())
            .map_err(|e| data(format!("{}: {e}", inp.id)))
    });

    let mut out = sink(a.out.as_deref())?;
    let mut counts = ErrorCounts::default();
    let mut scored = false;
    for (inp, r) in inputs.iter().zip(results) {
        let hyps = r?;
        for h in hyps.iter().take(a.nbest) {
            writeln!(out, "{}\t{:.6}\t{}", inp.id, h.score, h.transcription()).map_err(data)?;
        }
        if let (Some(reference), Some(best)) = (&inp.reference, hyps.first()) {
            if !reference.is_empty() {
                counts.add(reference, &best.transcription());
                scored = true;
            }
        }
    }
    out.flush().map_err(data)?;
    if scored {
        eprintln!(
            "decode: WER {:.2}% LER {:.2}% over {} utterances",
            100.0 * counts.wer(),
            100.0 * counts.ler(),
            inputs.len()
        );
    }
    Ok(())
}

fn read_emission_dir(dir: &Path) -> Result<Vec<DecodeInput>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| data(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "emis"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(data(format!("{}: no .emis files", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            Ok(DecodeInput {
                id: p.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
                emissions: read_feature_file(p).map_err(|e| data(format!("{}: {e}", p.display())))?,
                reference: None,
            })
        })
        .collect()
}

/// Transcription lines, keyed by id when every line has tab-separated
/// fields (the id first, the text last), by position otherwise.
fn read_transcripts(path: &Path) -> Result<(bool, Vec<(String, String)>)> {
    let text = fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let keyed = !lines.is_empty() && lines.iter().all(|l| l.contains('\t'));
    let normalize = |s: &str| glu_asr::criterion::normalize_transcript(s).0;
    let rows = lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if keyed {
                let fields: Vec<&str> = l.split('\t').collect();
                (fields[0].trim().to_string(), normalize(fields[fields.len() - 1]))
            } else {
                (i.to_string(), normalize(l))
            }
        })
        .collect();
    Ok((keyed, rows))
}

fn eval(a: EvalArgs) -> Result<()> {
    let (ref_keyed, refs) = read_transcripts(&a.reference)?;
    let (hyp_keyed, hyps) = read_transcripts(&a.hyp)?;
    let mut counts = ErrorCounts::default();
    if ref_keyed && hyp_keyed {
        let mut by_id: HashMap<&str, &str> = HashMap::new();
        for (id, text) in &hyps {
            by_id.entry(id.as_str()).or_insert(text.as_str());
        }
        for (id, text) in &refs {
            counts.add(text, by_id.get(id.as_str()).copied().unwrap_or(""));
        }
    } else {
        if refs.len() != hyps.len() {
            return Err(data(format!(
                "{} reference lines but {} hypothesis lines",
                refs.len(),
                hyps.len()
            )));
        }
        for ((_, r), (_, h)) in refs.iter().zip(&hyps) {
            counts.add(r, h);
        }
    }
    println!("WER {:.2}%", 100.0 * counts.wer());
    println!("LER {:.2}%", 100.0 * counts.ler());
    Ok(())
}

fn lm_score(arpa: &Path, text: &Path, unk_floor: Option<f64>) -> Result<()> {
    let policy = unk_floor.map_or(UnkPolicy::Strict, UnkPolicy::Floor);
    let lm = NGramLm::load(arpa, policy).map_err(|e| data(format!("{}: {e}", arpa.display())))?;
    let body = fs::read_to_string(text).map_err(|e| data(format!("{}: {e}", text.display())))?;
    let mut out = sink(None)?;
    let mut total = 0.0;
    let mut tokens = 0;
    for line in body.lines() {
        let words: Vec<String> = line.split_whitespace().map(str::to_lowercase).collect();
        if words.is_empty() {
            continue;
        }
        let score = lm.score_sentence(&words);
        total += score;
        tokens += words.len() + 1;
        writeln!(out, "{score:.6}\t{}", words.join(" ")).map_err(data)?;
    }
    writeln!(out, "perplexity\t{:.4}", perplexity(total, tokens)).map_err(data)?;
    out.flush().map_err(data)
}

fn describe(ckpt: Option<PathBuf>, arch: Option<String>) -> Result<()> {
    let (arch, extra) = match (ckpt, arch) {
        (Some(p), _) => {
            let c = Checkpoint::load(&p).map_err(data)?;
            let extra = c
                .transitions
                .as_ref()
                .map_or(0, |t| t.trans.as_slice().len() + t.start.len());
            eprintln!("model: criterion {}", c.criterion);
            (c.model.arch, extra)
        }
        (None, Some(spec)) => (load_arch(&spec)?, 0),
        (None, None) => return Err(CliError::Usage("model describe needs --ckpt or --arch".into())),
    };
    let mut out = sink(None)?;
    let w = |out: &mut Box<dyn Write>, s: String| writeln!(out, "{s}").map_err(data);
    w(&mut out, "layer\ttype\tin\tout\tkw\tdropout\tparams".into())?;
    let glu = |d_in: usize, d_out: usize, kw: usize| 2 * (d_out * d_in * kw + 2 * d_out);
    let mut d_in = arch.input_dim;
    for (i, l) in arch.expand().iter().enumerate() {
        w(
            &mut out,
            format!("{i}\tglu-conv\t{d_in}\t{}\t{}\t{:.3}\t{}", l.hu, l.kw, l.dropout, glu(d_in, l.hu, l.kw)),
        )?;
        d_in = l.hu;
    }
    let n = arch.n_conv_layers;
    w(
        &mut out,
        format!(
            "{n}\tglu-fc\t{d_in}\t{}\t1\t{:.3}\t{}",
            arch.fc_size,
            arch.dropout_last,
            glu(d_in, arch.fc_size, 1)
        ),
    )?;
    w(
        &mut out,
        format!(
            "{}\tlinear\t{}\t{}\t1\t-\t{}",
            n + 1,
            arch.fc_size,
            arch.n_labels,
            arch.n_labels * arch.fc_size + 2 * arch.n_labels
        ),
    )?;
    if extra > 0 {
        w(&mut out, format!("-\ttransitions\t-\t-\t-\t-\t{extra}"))?;
    }
    w(&mut out, format!("total\t\t\t\t\t\t{}", arch.param_count() + extra))?;
    w(&mut out, format!("padding\t\t\t\t\t\t{}", arch.total_pad()))?;
    out.flush().map_err(data)
}

fn plot(a: PlotArgs) -> Result<()> {
    let text = fs::read_to_string(&a.log).map_err(|e| data(format!("{}: {e}", a.log.display())))?;
    let stats = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<EpochStats>(l).map_err(|e| data(format!("{} line {}: {e}", a.log.display(), i + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    let svg = render_svg(&stats);
    let mut out = sink(a.out.as_deref())?;
    out.write_all(svg.as_bytes()).map_err(data)?;
    out.flush().map_err(data)
}
