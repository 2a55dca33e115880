//! Labeled code samples: loading, validation, statistics and batching.

mod batching;
mod ingest;
mod stats;
pub mod synthetic;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use batching::{balanced_batches, balanced_plan, shuffled_batches, shuffled_plan, BatchPlan};
pub use ingest::{convert_hub_layout, ingest_augmentation};
pub use stats::{reference_counts, verify_stats, ClassCounts, Stats, StatsWarning};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Java,
    Python,
    Cpp,
    Other,
}

impl Language {
    pub fn from_extension(ext: &str) -> Language {
        match ext.to_ascii_lowercase().as_str() {
            "java" => Language::Java,
            "py" | "pyw" => Language::Python,
            "cpp" | "cc" | "cxx" | "c++" | "hpp" | "hh" | "hxx" | "h" => Language::Cpp,
            _ => Language::Other,
        }
    }

    /// Keyword-count guess for snippets submitted without a language.
    pub fn guess(source: &str) -> Language {
        const CUES: [(Language, &[&str]); 3] = [
            (Language::Java, &["public class", "System.out", "import java.", "private ", "String[] args", "@Override", "new "]),
            (Language::Python, &["def ", "import ", "self.", "elif ", "print(", "__name__", "None", "lambda "]),
            (Language::Cpp, &["#include", "std::", "cout", "::", "template<", "nullptr", "->", "int main("]),
        ];
        let mut best = (Language::Other, 0);
        for (lang, cues) in CUES {
            let score: usize = cues.iter().map(|c| source.matches(c).count()).sum();
            if score > best.1 {
                best = (lang, score);
            }
        }
        best.0
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Language::Java => "java",
            Language::Python => "python",
            Language::Cpp => "cpp",
            Language::Other => "other",
        }
    }
}

impl FromStr for Language {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "java" => Ok(Language::Java),
            "python" | "py" | "python3" => Ok(Language::Python),
            "cpp" | "c++" | "cxx" => Ok(Language::Cpp),
            "other" | "c" | "" => Ok(Language::Other),
            other => Err(Error::InvalidArgument(format!("unknown language {other:?}"))),
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Authorship label: 0 = human-written, 1 = LLM-generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Human,
    Ai,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Human, Label::Ai];

    pub fn index(self) -> usize {
        match self {
            Label::Human => 0,
            Label::Ai => 1,
        }
    }

    pub fn from_index(i: u64) -> Option<Label> {
        match i {
            0 => Some(Label::Human),
            1 => Some(Label::Ai),
            _ => None,
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Human => Label::Ai,
            Label::Ai => Label::Human,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Human => "human",
            Label::Ai => "ai",
        }
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.index() as u8)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = u64::deserialize(d)?;
        Label::from_index(v).ok_or_else(|| serde::de::Error::custom(format!("unknown label {v}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" | "training" => Ok(Split::Train),
            "test" | "testing" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    GptSniffer,
    Whodunit,
    Augmentation,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::GptSniffer => "gptsniffer",
            DatasetKind::Whodunit => "whodunit",
            DatasetKind::Augmentation => "augmentation",
        }
    }

    /// Hub identifier of the published copy of the dataset.
    pub fn hub_id(self) -> Option<&'static str> {
        match self {
            DatasetKind::GptSniffer => Some("mahirlabibdihan/GPTSniffer"),
            DatasetKind::Whodunit => Some("mahirlabibdihan/Whodunit"),
            DatasetKind::Augmentation => None,
        }
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gptsniffer" | "mahirlabibdihan/gptsniffer" => Ok(DatasetKind::GptSniffer),
            "whodunit" | "mahirlabibdihan/whodunit" => Ok(DatasetKind::Whodunit),
            "augmentation" => Ok(DatasetKind::Augmentation),
            other => Err(Error::InvalidArgument(format!("unknown dataset {other:?}"))),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSample {
    pub id: String,
    pub source: String,
    pub language: Language,
    pub label: Label,
    pub split: Split,
    #[serde(skip_serializing, default = "default_dataset")]
    pub dataset: DatasetKind,
}

fn default_dataset() -> DatasetKind {
    DatasetKind::Augmentation
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset: DatasetKind,
    pub version: String,
}

/// An ordered collection of samples with unique ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSet {
    samples: Vec<CodeSample>,
    pub provenance: Provenance,
}

impl SampleSet {
    pub fn new(samples: Vec<CodeSample>, provenance: Provenance) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
        }
        Ok(SampleSet {
            samples,
            provenance,
        })
    }

    pub fn samples(&self) -> &[CodeSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<CodeSample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &CodeSample> {
        self.samples.iter()
    }

    pub fn get(&self, id: &str) -> Option<&CodeSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn count(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    fn filtered(&self, keep: impl Fn(&CodeSample) -> bool) -> SampleSet {
        SampleSet {
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn split(&self, split: Split) -> SampleSet {
        self.filtered(|s| s.split == split)
    }

    /// Keeps the samples whose ids are listed, in the listed order.
    pub fn select(&self, ids: &[String]) -> Result<SampleSet> {
        let index: std::collections::HashMap<&str, &CodeSample> =
            self.samples.iter().map(|s| (s.id.as_str(), s)).collect();
        let samples = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|s| (*s).clone())
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown sample id {id:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        SampleSet::new(samples, self.provenance.clone())
    }

    /// Class-stratified subsample of at most `per_class` samples per label.
    pub fn stratified_subsample(&self, per_class: usize, seed: u64) -> SampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = HashSet::new();
        for label in Label::ALL {
            let mut ids: Vec<&str> = self
                .samples
                .iter()
                .filter(|s| s.label == label)
                .map(|s| s.id.as_str())
                .collect();
            ids.shuffle(&mut rng);
            keep.extend(ids.into_iter().take(per_class).map(str::to_owned));
        }
        self.filtered(|s| keep.contains(&s.id))
    }

    /// Concatenates two sets, failing on id collisions.
    pub fn merged(&self, other: &SampleSet) -> Result<SampleSet> {
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().cloned());
        SampleSet::new(samples, self.provenance.clone())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for s in &self.samples {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

impl<'a> IntoIterator for &'a SampleSet {
    type Item = &'a CodeSample;
    type IntoIter = std::slice::Iter<'a, CodeSample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

/// Directory consulted for hub identifiers and dataset names.
pub fn default_data_root() -> PathBuf {
    std::env::var_os("CODEORIGIN_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Resolves a locator to a JSONL file.
///
/// Accepted forms: an existing file, a directory containing `<kind>.jsonl`,
/// a dataset name (`gptsniffer`) or a hub id (`mahirlabibdihan/GPTSniffer`).
/// Names and hub ids are looked up as `<data_root>/<kind>.jsonl`, which is
/// where `ingest` writes converted datasets.
pub fn resolve_locator(locator: &str, kind: DatasetKind, data_root: &Path) -> Result<PathBuf> {
    let direct = Path::new(locator);
    if direct.is_file() {
        return Ok(direct.to_path_buf());
    }
    let file_name = format!("{}.jsonl", kind.as_str());
    if direct.is_dir() {
        let candidate = direct.join(&file_name);
        if candidate.is_file() {
            return Ok(candidate);
        }
        return Err(Error::DatasetNotFound(format!(
            "{} has no {file_name}",
            direct.display()
        )));
    }
    let named = locator.parse::<DatasetKind>().ok();
    let is_hub = kind
        .hub_id()
        .is_some_and(|id| id.eq_ignore_ascii_case(locator));
    if named == Some(kind) || is_hub {
        let candidate = data_root.join(&file_name);
        if candidate.is_file() {
            return Ok(candidate);
        }
        return Err(Error::DatasetNotFound(format!(
            "{locator}: expected {} (run `ingest` first)",
            candidate.display()
        )));
    }
    Err(Error::DatasetNotFound(locator.to_owned()))
}

/// Loads a dataset given a locator (see [`resolve_locator`]).
pub fn load_dataset(locator: &str, kind: DatasetKind) -> Result<SampleSet> {
    let path = resolve_locator(locator, kind, &default_data_root())?;
    load_jsonl(&path, kind)
}

/// Parses a canonical JSONL file: one `{id, source, language, label, split}`
/// object per line. Unknown extra fields are ignored.
pub fn load_jsonl(path: &Path, kind: DatasetKind) -> Result<SampleSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let version = format!("sha256:{}", &hex::encode(Sha256::digest(&bytes))[..16]);
    let reader = BufReader::new(bytes.as_slice());
    let mut samples = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let index = samples.len();
        samples.push(parse_record(&line, index, kind, path)?);
    }
    if samples.is_empty() {
        return Err(Error::NoRecords(path.to_path_buf()));
    }
    SampleSet::new(
        samples,
        Provenance {
            dataset: kind,
            version,
        },
    )
}

fn parse_record(line: &str, index: usize, kind: DatasetKind, path: &Path) -> Result<CodeSample> {
    let malformed = |reason: String| Error::MalformedRecord {
        path: path.to_path_buf(),
        index,
        reason,
    };
    let value: Value = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| malformed("record is not a JSON object".into()))?;
    let field = |name: &str| {
        obj.get(name)
            .ok_or_else(|| malformed(format!("missing field {name:?}")))
    };
    let string = |name: &str| -> Result<String> {
        field(name)?
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| malformed(format!("field {name:?} is not a string")))
    };

    let id = match field("id")? {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        _ => return Err(malformed("field \"id\" is not a string".into())),
    };
    let source = string("source")?;
    if source.trim().is_empty() {
        return Err(malformed("empty source".into()));
    }
    let language = string("language")?
        .parse::<Language>()
        .map_err(|e| malformed(e.to_string()))?;
    let label_value = field("label")?;
    let label = label_value
        .as_u64()
        .and_then(Label::from_index)
        .ok_or_else(|| Error::UnknownLabel {
            index,
            value: label_value.to_string(),
        })?;
    let split = string("split")?
        .parse::<Split>()
        .map_err(|e| malformed(e.to_string()))?;
    Ok(CodeSample {
        id,
        source,
        language,
        label,
        split,
        dataset: kind,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn guesses_language() {
        assert_eq!(Language::guess("public class A { void f() { System.out.println(1); } }"), Language::Java);
        assert_eq!(Language::guess("def f(x):\n    return x\n"), Language::Python);
        assert_eq!(Language::guess("#include <iostream>\nint main() { std::cout << 1; }"), Language::Cpp);
        assert_eq!(Language::guess("1 + 1"), Language::Other);
    }

    #[test]
    fn empty_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.jsonl", "\n\n");
        assert!(matches!(
            load_jsonl(&p, DatasetKind::Whodunit),
            Err(Error::NoRecords(_))
        ));
    }

    #[test]
    fn malformed_record_reports_index() {
        let dir = tempfile::tempdir().unwrap();
        let good = r#"{"id":"a","source":"x=1","language":"python","label":0,"split":"train"}"#;
        let p = write(dir.path(), "m.jsonl", &format!("{good}\n{{not json\n"));
        match load_jsonl(&p, DatasetKind::Whodunit) {
            Err(Error::MalformedRecord { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_label_fails() {
        let dir = tempfile::tempdir().unwrap();
        let rec = r#"{"id":"a","source":"x=1","language":"python","label":2,"split":"train"}"#;
        let p = write(dir.path(), "l.jsonl", rec);
        assert!(matches!(
            load_jsonl(&p, DatasetKind::Whodunit),
            Err(Error::UnknownLabel { index: 0, .. })
        ));
    }

    #[test]
    fn blank_source_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let rec = r#"{"id":"a","source":"  \n ","language":"java","label":0,"split":"test"}"#;
        let p = write(dir.path(), "b.jsonl", rec);
        assert!(matches!(
            load_jsonl(&p, DatasetKind::GptSniffer),
            Err(Error::MalformedRecord { .. })
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let rec = r#"{"id":"a","source":"x","language":"java","label":0,"split":"test"}"#;
        let p = write(dir.path(), "d.jsonl", &format!("{rec}\n{rec}\n"));
        assert!(matches!(
            load_jsonl(&p, DatasetKind::GptSniffer),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn locator_forms() {
        let dir = tempfile::tempdir().unwrap();
        let rec = r#"{"id":"a","source":"x","language":"java","label":1,"split":"test"}"#;
        let p = write(dir.path(), "gptsniffer.jsonl", rec);
        let root = dir.path();
        let k = DatasetKind::GptSniffer;
        assert_eq!(resolve_locator(p.to_str().unwrap(), k, root).unwrap(), p);
        assert_eq!(resolve_locator(root.to_str().unwrap(), k, root).unwrap(), p);
        assert_eq!(resolve_locator("gptsniffer", k, root).unwrap(), p);
        assert_eq!(
            resolve_locator("mahirlabibdihan/GPTSniffer", k, root).unwrap(),
            p
        );
        assert!(resolve_locator("whodunit", k, root).is_err());
    }
}
