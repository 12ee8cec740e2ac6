//! Text file formats for corpora, vocabularies, and boundary labels.
//!
//! All formats are line-oriented UTF-8 so third-party front ends (e.g. an
//! external k-means quantizer) can produce them directly:
//!
//! - unit corpus: one sequence per line, space-separated decimal ids
//! - phoneme corpus: one sequence per line, space-separated symbols
//! - vocab: one symbol per line, line order = id order
//! - boundaries: one sequence per line, comma-separated `flag:confidence`
//!   pairs aligned 1:1 with the unit-corpus lines

use super::{
    BoundaryLabels, CorpusError, EvalItem, EvalSet, PhonemeCorpus, PhonemeSequence, UnitCorpus,
    UnitSequence, Vocab,
};
use std::fmt::Write as _;
use std::path::Path;

fn read_file(path: &Path) -> Result<String, CorpusError> {
    std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CorpusError> {
    std::fs::write(path, contents).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Non-empty lines with their 1-based line numbers.
fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn load_unit_corpus(path: &Path) -> Result<UnitCorpus, CorpusError> {
    let text = read_file(path)?;
    let mut sequences = Vec::new();
    for (line, content) in numbered_lines(&text) {
        let mut units = Vec::new();
        for tok in content.split_whitespace() {
            let id: usize = tok.parse().map_err(|_| CorpusError::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected non-negative integer, got {tok:?}"),
            })?;
            units.push(id);
        }
        sequences.push(UnitSequence::new(units).expect("line is non-empty"));
    }
    if sequences.is_empty() {
        return Err(CorpusError::EmptyCorpus {
            path: path.to_path_buf(),
        });
    }
    UnitCorpus::new(sequences)
}

pub fn save_unit_corpus(path: &Path, corpus: &UnitCorpus) -> Result<(), CorpusError> {
    let mut out = String::new();
    for seq in corpus.sequences() {
        let line: Vec<String> = seq.units().iter().map(|u| u.to_string()).collect();
        writeln!(out, "{}", line.join(" ")).expect("string write");
    }
    write_file(path, &out)
}

pub fn load_phoneme_corpus(path: &Path, vocab: &Vocab) -> Result<PhonemeCorpus, CorpusError> {
    let text = read_file(path)?;
    let mut sequences = Vec::new();
    for (line, content) in numbered_lines(&text) {
        let mut labels = Vec::new();
        for (token, sym) in content.split_whitespace().enumerate() {
            match vocab.id(sym) {
                Some(id) => labels.push(id),
                None => {
                    return Err(CorpusError::UnknownSymbol {
                        path: path.to_path_buf(),
                        line,
                        token: token + 1,
                        symbol: sym.to_string(),
                    })
                }
            }
        }
        sequences.push(PhonemeSequence::new(labels, vocab.size()).expect("line is non-empty"));
    }
    if sequences.is_empty() {
        return Err(CorpusError::EmptyCorpus {
            path: path.to_path_buf(),
        });
    }
    PhonemeCorpus::new(sequences)
}

pub fn save_phoneme_corpus(
    path: &Path,
    corpus: &PhonemeCorpus,
    vocab: &Vocab,
) -> Result<(), CorpusError> {
    let mut out = String::new();
    for seq in corpus.sequences() {
        let line: Vec<&str> = seq.labels().iter().map(|&l| vocab.symbol(l)).collect();
        writeln!(out, "{}", line.join(" ")).expect("string write");
    }
    write_file(path, &out)
}

pub fn load_boundary_labels(path: &Path) -> Result<Vec<BoundaryLabels>, CorpusError> {
    let text = read_file(path)?;
    let mut all = Vec::new();
    for (line, content) in numbered_lines(&text) {
        let mut flags = Vec::new();
        let mut confidence = Vec::new();
        for pair in content.split(',') {
            let pair = pair.trim();
            let (f, c) = pair.split_once(':').ok_or_else(|| CorpusError::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected flag:confidence pair, got {pair:?}"),
            })?;
            let flag = match f.trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(CorpusError::Parse {
                        path: path.to_path_buf(),
                        line,
                        msg: format!("boundary flag must be 0 or 1, got {other:?}"),
                    })
                }
            };
            let conf: f64 = c.trim().parse().map_err(|_| CorpusError::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("bad confidence value {c:?}"),
            })?;
            if !(0.0..=1.0).contains(&conf) {
                return Err(CorpusError::Range {
                    path: path.to_path_buf(),
                    line,
                    value: conf,
                });
            }
            flags.push(flag);
            confidence.push(conf);
        }
        all.push(BoundaryLabels::new(flags, confidence).expect("validated above"));
    }
    Ok(all)
}

pub fn save_boundary_labels(path: &Path, labels: &[BoundaryLabels]) -> Result<(), CorpusError> {
    let mut out = String::new();
    for lab in labels {
        let pairs: Vec<String> = lab
            .flags()
            .iter()
            .zip(lab.confidence())
            .map(|(&f, &c)| format!("{}:{}", u8::from(f), c))
            .collect();
        writeln!(out, "{}", pairs.join(",")).expect("string write");
    }
    write_file(path, &out)
}

impl Vocab {
    /// One symbol per line; line order defines the ids.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = read_file(path)?;
        let symbols: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        Self::new(symbols)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = String::new();
        for sym in self.symbols() {
            writeln!(out, "{sym}").expect("string write");
        }
        write_file(path, &out)
    }
}

/// Assemble a paired evaluation set from its three aligned files.
pub fn load_eval_set(
    units_path: &Path,
    text_path: &Path,
    bounds_path: &Path,
    vocab: &Vocab,
) -> Result<EvalSet, CorpusError> {
    let units = load_unit_corpus(units_path)?;
    let phonemes = load_phoneme_corpus(text_path, vocab)?;
    let bounds = load_boundary_labels(bounds_path)?;
    if units.len() != phonemes.len() || units.len() != bounds.len() {
        return Err(CorpusError::BoundaryMismatch(format!(
            "eval files disagree: {} unit sequences, {} transcripts, {} boundary rows",
            units.len(),
            phonemes.len(),
            bounds.len()
        )));
    }
    let items = units
        .sequences()
        .iter()
        .zip(phonemes.sequences())
        .zip(bounds)
        .map(|((u, p), b)| EvalItem {
            units: u.clone(),
            phonemes: p.clone(),
            boundaries: b,
        })
        .collect();
    EvalSet::new(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn tmp(name: &str, contents: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("espum-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        std::fs::write(&path, contents).unwrap();
        path
    }

    #[test]
    fn unit_corpus_parses_lines() {
        let path = tmp("units_ok.txt", "3 3 7\n1\n");
        let corpus = load_unit_corpus(&path).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.sequences()[0].units(), &[3, 3, 7]);
        assert_eq!(corpus.sequences()[1].units(), &[1]);
    }

    #[test]
    fn unit_corpus_rejects_empty_file() {
        let path = tmp("units_empty.txt", "");
        assert!(matches!(
            load_unit_corpus(&path),
            Err(CorpusError::EmptyCorpus { .. })
        ));
    }

    #[test]
    fn unit_corpus_reports_parse_line() {
        let path = tmp("units_bad.txt", "3 x\n");
        match load_unit_corpus(&path) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn phoneme_corpus_maps_symbols() {
        let vocab = Vocab::new(vec!["ah".into(), "b".into()]).unwrap();
        let path = tmp("text_ok.txt", "ah b\n");
        let corpus = load_phoneme_corpus(&path, &vocab).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.sequences()[0].labels(), &[0, 1]);
    }

    #[test]
    fn phoneme_corpus_rejects_unknown_symbol() {
        let vocab = Vocab::new(vec!["ah".into(), "b".into()]).unwrap();
        let path = tmp("text_bad.txt", "zz\n");
        match load_phoneme_corpus(&path, &vocab) {
            Err(CorpusError::UnknownSymbol { line, token, symbol, .. }) => {
                assert_eq!((line, token), (1, 1));
                assert_eq!(symbol, "zz");
            }
            other => panic!("expected unknown symbol, got {other:?}"),
        }
    }

    #[test]
    fn phoneme_corpus_counts_lines() {
        let vocab = Vocab::new(vec!["ah".into(), "b".into()]).unwrap();
        let path = tmp("text_two.txt", "ah\nb ah\n");
        let corpus = load_phoneme_corpus(&path, &vocab).unwrap();
        assert_eq!(corpus.len(), 2);
    }

    #[test]
    fn boundaries_parse_pairs() {
        let path = tmp("bounds_ok.txt", "1:0.9,0:0.8\n");
        let labels = load_boundary_labels(&path).unwrap();
        assert_eq!(labels.len(), 1);
        assert_eq!(labels[0].flags(), &[true, false]);
        assert_eq!(labels[0].confidence(), &[0.9, 0.8]);
    }

    #[test]
    fn boundaries_reject_out_of_range_confidence() {
        let path = tmp("bounds_range.txt", "1:1.5\n");
        assert!(matches!(
            load_boundary_labels(&path),
            Err(CorpusError::Range { value, .. }) if value == 1.5
        ));
    }

    #[test]
    fn boundaries_parse_length_three() {
        let path = tmp("bounds_three.txt", "0:0.5,0:0.5,1:0.7\n");
        let labels = load_boundary_labels(&path).unwrap();
        assert_eq!(labels[0].len(), 3);
    }

    #[test]
    fn boundaries_reject_malformed_pair() {
        let path = tmp("bounds_bad.txt", "1;0.9\n");
        assert!(matches!(
            load_boundary_labels(&path),
            Err(CorpusError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn vocab_round_trip() {
        let vocab = Vocab::new(vec!["ah".into(), "b".into(), "k".into()]).unwrap();
        let path = tmp("vocab.txt", "");
        vocab.save(&path).unwrap();
        let back = Vocab::load(&path).unwrap();
        assert_eq!(back.symbols(), vocab.symbols());
        assert_eq!(back.id("k"), Some(2));
    }
}
