use std::fs;
use std::path::{Path, PathBuf};

use super::TrainError;
use crate::criterion::{normalize_transcript, LetterDict};
use crate::features::{normalize, read_feature_file, Mfsc, MfscConfig, Waveform};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    /// WAV audio (`.wav`) or a binary feature file (anything else).
    pub path: PathBuf,
    /// Normalized transcription: lowercase, alphabet-only, single spaces.
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Parses `id<TAB>path<TAB>transcription` lines. Relative paths are
    /// resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, TrainError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.splitn(3, '\t');
            let (Some(id), Some(path)) = (fields.next(), fields.next()) else {
                return Err(TrainError::Manifest(format!(
                    "line {}: expected id<TAB>path<TAB>transcription",
                    i + 1
                )));
            };
            let raw = fields.next().unwrap_or("");
            let (text, _) = normalize_transcript(raw);
            entries.push(ManifestEntry {
                id: id.trim().to_string(),
                path: base.join(path.trim()),
                text,
            });
        }
        if entries.is_empty() {
            return Err(TrainError::Manifest("no entries".into()));
        }
        Ok(Self { entries })
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, TrainError> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(TrainError::Manifest("file not found".into()));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&fs::read_to_string(path)?, base)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A training example: normalized (unpadded) features and grapheme target.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub features: Matrix,
    pub text: String,
    pub target: Vec<usize>,
}

impl Utterance {
    pub fn new(
        id: &str,
        features: Matrix,
        text: &str,
        dict: &LetterDict,
        surround_silence: bool,
    ) -> Result<Self, TrainError> {
        let target = dict.encode_transcript(text, surround_silence)?;
        Ok(Self {
            id: id.to_string(),
            features: normalize(&features),
            text: text.to_string(),
            target,
        })
    }
}

/// Raw (unnormalized) features for a manifest entry.
pub fn load_features(path: &Path, mfsc: &Mfsc) -> Result<Matrix, TrainError> {
    let is_wav = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    if is_wav {
        Ok(mfsc.compute(&Waveform::read_wav(path)?)?)
    } else {
        Ok(read_feature_file(path)?)
    }
}

pub fn load_utterances(
    manifest: &Manifest,
    dict: &LetterDict,
    surround_silence: bool,
) -> Result<Vec<Utterance>, TrainError> {
    let mfsc = Mfsc::new(MfscConfig::default())?;
    manifest
        .entries
        .iter()
        .map(|e| {
            let feats = load_features(&e.path, &mfsc)
                .map_err(|err| TrainError::Manifest(format!("{}: {err}", e.id)))?;
            Utterance::new(&e.id, feats, &e.text, dict, surround_silence)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_lowercases() {
        let m = Manifest::parse("u1\ta.wav\tHello, World\n\nu2\tb.feat\tok\n", Path::new("/d")).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.entries[0].text, "hello world");
        assert_eq!(m.entries[0].path, PathBuf::from("/d/a.wav"));
    }

    #[test]
    fn missing_file_message() {
        let err = Manifest::load("/nonexistent/manifest.tsv").unwrap_err();
        assert_eq!(err.to_string(), "manifest: file not found");
    }

    #[test]
    fn malformed_line() {
        assert!(Manifest::parse("only-an-id\n", Path::new(".")).is_err());
        assert!(Manifest::parse("", Path::new(".")).is_err());
    }
}
