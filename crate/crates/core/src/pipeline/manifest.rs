//! Tab-separated dataset listing: `path<TAB>speaker<TAB>split` per line.
//! Blank lines and lines starting with `#` are ignored; relative paths are
//! resolved against the manifest's directory.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pipeline::load_wav;
use crate::training::{Dataset, Utterance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("split must be train or test, got {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub speaker: String,
    pub split: Split,
}

/// Entries plus the speaker table; speaker `k` is `speakers[k]`, in sorted
/// order of their ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub speakers: Vec<String>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.path.clone()) {
                return Err(Error::Data(format!("duplicate path {} in manifest", e.path.display())));
            }
            if e.speaker.is_empty() {
                return Err(Error::Data(format!("empty speaker id for {}", e.path.display())));
            }
        }
        let speakers: BTreeSet<&str> = entries.iter().map(|e| e.speaker.as_str()).collect();
        let speakers = speakers.into_iter().map(str::to_string).collect();
        Ok(DatasetManifest { entries, speakers })
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::Format(format!(
                    "manifest line {}: expected path, speaker and split separated by tabs",
                    n + 1
                )));
            }
            let path = PathBuf::from(cols[0]);
            let path = if path.is_absolute() { path } else { base.join(path) };
            let split = cols[2]
                .trim()
                .parse()
                .map_err(|e: Error| Error::Format(format!("manifest line {}: {e}", n + 1)))?;
            entries.push(ManifestEntry {
                path,
                speaker: cols[1].trim().to_string(),
                split,
            });
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Inverse of [`DatasetManifest::parse`] with paths written as stored.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\n", e.path.display(), e.speaker, e.split))
            .collect()
    }

    pub fn n_speakers(&self) -> usize {
        self.speakers.len()
    }

    pub fn speaker_index(&self, id: &str) -> Option<usize> {
        self.speakers.binary_search_by(|s| s.as_str().cmp(id)).ok()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Both splits must be nonempty for training.
    pub fn require_splits(&self) -> Result<()> {
        for s in [Split::Train, Split::Test] {
            if self.split(s).next().is_none() {
                return Err(Error::Data(format!("manifest has no {s} entries")));
            }
        }
        Ok(())
    }

    /// Load every file of `split`, labelled with dense speaker indices.
    pub fn load_split(&self, split: Split) -> Result<Dataset> {
        let utterances = self
            .split(split)
            .map(|e| {
                Ok(Utterance {
                    samples: load_wav(&e.path)?.samples,
                    speaker: self.speaker_index(&e.speaker).expect("speaker table covers entries"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(utterances, self.n_speakers())
    }
}
