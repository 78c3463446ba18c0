//! JSONL corpora: one `{"text": ..., "label": ...}` object per line.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::corpus::{Corpus, Example};
use crate::error::{Error, Result};
use crate::model::Vocab;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabPolicy {
    /// Cap on non-special, non-label tokens; the most frequent words are kept.
    pub max_words: Option<usize>,
    pub min_count: usize,
}

impl Default for VocabPolicy {
    fn default() -> Self {
        VocabPolicy {
            max_words: Some(20_000),
            min_count: 1,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    text: String,
    label: String,
}

/// Answer token for a label name.
pub fn label_token(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join("_")
}

pub fn load_jsonl(path: &Path, policy: &VocabPolicy) -> Result<Corpus> {
    let raw = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            detail: e.to_string(),
        })?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::contract(format!("{} contains no records", path.display())));
    }

    let mut label_ids: HashMap<String, usize> = HashMap::new();
    let mut label_names = Vec::new();
    for r in &records {
        if !label_ids.contains_key(&r.label) {
            label_ids.insert(r.label.clone(), label_names.len());
            label_names.push(r.label.clone());
        }
    }

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &records {
        for w in r.text.split_whitespace() {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut words: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= policy.min_count)
        .collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    if let Some(cap) = policy.max_words {
        words.truncate(cap);
    }

    let mut vocab = Vocab::new();
    for (w, _) in &words {
        vocab.insert(w);
    }
    let label_answers: Vec<Vec<usize>> = label_names
        .iter()
        .map(|n| vec![vocab.insert(&label_token(n))])
        .collect();

    let examples = records
        .iter()
        .map(|r| Example {
            tokens: vocab.encode(&r.text),
            label: label_ids[&r.label],
        })
        .collect();
    let domain = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Corpus::new(examples, label_names, label_answers, vocab, domain)
}

pub fn write_jsonl(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for e in &corpus.examples {
        let text: Vec<&str> = e
            .tokens
            .iter()
            .map(|&t| corpus.vocab.token(t).unwrap_or("[UNK]"))
            .collect();
        let rec = Record {
            text: text.join(" "),
            label: corpus.label_names[e.label].clone(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
