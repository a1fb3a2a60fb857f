use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::FeatureSequence;
use crate::error::{Error, Result};
use crate::textcodec::{Emotion, Provenance, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub id: String,
    pub dataset: String,
    pub split: Split,
    /// Source task. Inferred from which label is present when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    pub text: String,
    #[serde(default)]
    pub prev: Vec<String>,
    #[serde(default)]
    pub next: Vec<String>,
    pub acoustic: String,
    pub visual: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion: Option<Emotion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity_source: Option<Provenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion_source: Option<Provenance>,
}

impl RecordMeta {
    pub fn source_task(&self) -> Option<Task> {
        self.task.or(match (self.intensity, self.emotion) {
            (Some(_), None) => Some(Task::Msa),
            (None, Some(_)) => Some(Task::Erc),
            _ => None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub meta: RecordMeta,
    pub acoustic: FeatureSequence,
    pub visual: FeatureSequence,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.meta.split == split)
    }

    /// Every utterance text, context turns included, for vocabulary building.
    pub fn corpus(&self) -> Vec<String> {
        self.records
            .iter()
            .flat_map(|r| {
                std::iter::once(&r.meta.text)
                    .chain(&r.meta.prev)
                    .chain(&r.meta.next)
                    .cloned()
            })
            .collect()
    }

    /// Checks id uniqueness, context bounds and per-dataset feature dims.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut problems = Vec::new();
        let mut seen = HashSet::new();
        let mut dims: BTreeMap<&str, (usize, usize, &str)> = BTreeMap::new();
        for r in &self.records {
            let m = &r.meta;
            if !seen.insert(m.id.as_str()) {
                problems.push(format!("{}: duplicate id", m.id));
            }
            if m.prev.len() > 2 || m.next.len() > 2 {
                problems.push(format!("{}: at most two context turns on each side", m.id));
            }
            if m.source_task().is_none() {
                problems.push(format!("{}: cannot determine source task", m.id));
            }
            if let Some(v) = m.intensity {
                if !(-3.0..=3.0).contains(&v) {
                    problems.push(format!("{}: intensity {v} outside [-3, 3]", m.id));
                }
            }
            let d = (r.acoustic.dim(), r.visual.dim());
            match dims.get(m.dataset.as_str()) {
                Some(&(a, v, first)) if (a, v) != d => problems.push(format!(
                    "{}: feature dims {}x{} differ from {a}x{v} of {first} in dataset {}",
                    m.id, d.0, d.1, m.dataset
                )),
                Some(_) => {}
                None => {
                    dims.insert(&m.dataset, (d.0, d.1, &m.id));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }
}

/// Reads a JSON-lines manifest and every feature file it references.
/// Feature paths resolve relative to the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let merr = |msg: String| Error::Manifest {
        path: path.to_path_buf(),
        msg,
    };

    let mut metas = Vec::new();
    let mut problems = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RecordMeta>(line) {
            Ok(m) => metas.push(m),
            Err(e) => problems.push(format!("line {}: {e}", n + 1)),
        }
    }
    if metas.is_empty() && problems.is_empty() {
        return Err(merr("no records".into()));
    }

    let loaded: Vec<std::result::Result<Record, String>> = metas
        .into_par_iter()
        .map(|meta| {
            let read = |rel: &str| {
                FeatureSequence::read(&dir.join(rel)).map_err(|e| format!("{}: {e}", meta.id))
            };
            let acoustic = read(&meta.acoustic)?;
            let visual = read(&meta.visual)?;
            Ok(Record {
                meta,
                acoustic,
                visual,
            })
        })
        .collect();
    let mut records = Vec::with_capacity(loaded.len());
    for r in loaded {
        match r {
            Ok(r) => records.push(r),
            Err(e) => problems.push(e),
        }
    }
    let manifest = Manifest { records };
    if let Err(p) = manifest.validate() {
        problems.extend(p);
    }
    if problems.is_empty() {
        Ok(manifest)
    } else {
        Err(merr(problems.join("; ")))
    }
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes the manifest and its feature files. Feature paths are rewritten
/// to `features/<id>.{a,v}.umse` under the manifest's directory.
pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for r in &manifest.records {
        let mut meta = r.meta.clone();
        let stem = file_stem(&meta.id);
        meta.acoustic = format!("features/{stem}.a.umse");
        meta.visual = format!("features/{stem}.v.umse");
        r.acoustic.write(&dir.join(&meta.acoustic))?;
        r.visual.write(&dir.join(&meta.visual))?;
        serde_json::to_writer(&mut out, &meta).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}
