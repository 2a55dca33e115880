//! Conversion of external dataset layouts into canonical samples.

use std::fs;
use std::path::Path;

use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use super::{CodeSample, DatasetKind, Label, Language, Provenance, SampleSet, Split};
use crate::error::{Error, Result};

const SOURCE_EXTENSIONS: &[&str] = &[
    "java", "py", "pyw", "cpp", "cc", "cxx", "c++", "hpp", "hh", "hxx", "h", "c", "js", "ts", "go",
    "rb", "cs", "php", "rs", "kt", "swift", "scala",
];
const CODE_FIELDS: &[&str] = &[
    "source",
    "code",
    "content",
    "func_code_string",
    "original_string",
    "text",
];
const LABEL_FIELDS: &[&str] = &["label", "target", "is_ai", "is_gpt", "generated"];

/// Builds a human-labeled augmentation set from a directory of source files
/// or from a JSONL export (one object per line with a code field).
///
/// Languages are inferred from file extensions, or from a `language` field
/// in JSONL exports.
pub fn ingest_augmentation(path: &Path) -> Result<SampleSet> {
    let mut samples = Vec::new();
    if path.is_dir() {
        let mut files: Vec<_> = WalkDir::new(path)
            .sort_by_file_name()
            .into_iter()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().is_file())
            .filter(|e| {
                e.path()
                    .extension()
                    .and_then(|x| x.to_str())
                    .is_some_and(|x| SOURCE_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()))
            })
            .map(|e| e.into_path())
            .collect();
        files.sort();
        for file in files {
            let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
            let Ok(source) = String::from_utf8(bytes) else {
                log::warn!("skipping non-UTF-8 file {}", file.display());
                continue;
            };
            if source.trim().is_empty() {
                continue;
            }
            let rel = file.strip_prefix(path).unwrap_or(&file);
            let ext = file.extension().and_then(|x| x.to_str()).unwrap_or("");
            samples.push(augmentation_sample(
                format!("aug:{}", rel.display()),
                source,
                Language::from_extension(ext),
            ));
        }
    } else if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (index, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let obj = parse_object(line, index, path)?;
            let source = find_string(&obj, CODE_FIELDS).ok_or_else(|| Error::MalformedRecord {
                path: path.to_path_buf(),
                index,
                reason: "no code field".into(),
            })?;
            let language = obj
                .get("language")
                .and_then(Value::as_str)
                .map(|l| l.parse().unwrap_or(Language::Other))
                .unwrap_or(Language::Other);
            if source.trim().is_empty() {
                continue;
            }
            samples.push(augmentation_sample(
                format!("aug:{index}"),
                source,
                language,
            ));
        }
    } else {
        return Err(Error::DatasetNotFound(path.display().to_string()));
    }
    if samples.is_empty() {
        return Err(Error::NoRecords(path.to_path_buf()));
    }
    SampleSet::new(
        samples,
        Provenance {
            dataset: DatasetKind::Augmentation,
            version: content_version(path),
        },
    )
}

fn augmentation_sample(id: String, source: String, language: Language) -> CodeSample {
    CodeSample {
        id,
        source,
        language,
        label: Label::Human,
        split: Split::Train,
        dataset: DatasetKind::Augmentation,
    }
}

/// Converts a downloaded hub dataset into canonical samples.
///
/// Supported layouts:
/// - `train.{jsonl,json,csv}` / `test.{jsonl,json,csv}` files (split from the
///   file name unless a `split` column is present);
/// - a single `.jsonl`/`.json`/`.csv` file with a `split` column;
/// - directory trees `<split>/<class>/**/<file>`, where `<class>` is one of
///   `human`, `0`, `ai`, `gpt`, `chatgpt`, `machine`, `1`.
pub fn convert_hub_layout(root: &Path, kind: DatasetKind, language: Language) -> Result<SampleSet> {
    let mut samples = Vec::new();
    if root.is_file() {
        read_table(root, None, kind, language, &mut samples)?;
    } else if root.is_dir() {
        for split in [Split::Train, Split::Test] {
            let mut found = false;
            for ext in ["jsonl", "json", "csv"] {
                let file = root.join(format!("{}.{ext}", split.as_str()));
                if file.is_file() {
                    read_table(&file, Some(split), kind, language, &mut samples)?;
                    found = true;
                    break;
                }
            }
            let dir = root.join(split.as_str());
            if !found && dir.is_dir() {
                read_class_dirs(&dir, split, kind, &mut samples)?;
            }
        }
    } else {
        return Err(Error::DatasetNotFound(root.display().to_string()));
    }
    if samples.is_empty() {
        return Err(Error::NoRecords(root.to_path_buf()));
    }
    SampleSet::new(
        samples,
        Provenance {
            dataset: kind,
            version: content_version(root),
        },
    )
}

fn read_table(
    file: &Path,
    split: Option<Split>,
    kind: DatasetKind,
    language: Language,
    out: &mut Vec<CodeSample>,
) -> Result<()> {
    let ext = file
        .extension()
        .and_then(|x| x.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let rows: Vec<Map<String, Value>> = match ext.as_str() {
        "csv" => {
            let mut reader = csv::Reader::from_path(file)?;
            let headers = reader.headers()?.clone();
            let mut rows = Vec::new();
            for record in reader.records() {
                let record = record?;
                rows.push(
                    headers
                        .iter()
                        .zip(record.iter())
                        .map(|(h, v)| (h.to_owned(), Value::String(v.to_owned())))
                        .collect(),
                );
            }
            rows
        }
        "json" => {
            let text = fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
            let value: Value = serde_json::from_str(&text)?;
            let items = match value {
                Value::Array(items) => items,
                Value::Object(mut obj) => match obj.remove("data") {
                    Some(Value::Array(items)) => items,
                    _ => vec![Value::Object(obj)],
                },
                _ => Vec::new(),
            };
            items
                .into_iter()
                .enumerate()
                .map(|(index, v)| match v {
                    Value::Object(o) => Ok(o),
                    _ => Err(Error::MalformedRecord {
                        path: file.to_path_buf(),
                        index,
                        reason: "not an object".into(),
                    }),
                })
                .collect::<Result<_>>()?
        }
        _ => {
            let text = fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
            text.lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(index, l)| parse_object(l, index, file))
                .collect::<Result<_>>()?
        }
    };
    for (index, row) in rows.into_iter().enumerate() {
        let malformed = |reason: &str| Error::MalformedRecord {
            path: file.to_path_buf(),
            index,
            reason: reason.into(),
        };
        let source = find_string(&row, CODE_FIELDS).ok_or_else(|| malformed("no code field"))?;
        let label_value = LABEL_FIELDS
            .iter()
            .find_map(|f| row.get(*f))
            .ok_or_else(|| malformed("no label field"))?;
        let label = parse_label(label_value).ok_or_else(|| Error::UnknownLabel {
            index,
            value: label_value.to_string(),
        })?;
        let row_split = match row.get("split").and_then(Value::as_str) {
            Some(s) => s.parse::<Split>()?,
            None => split.ok_or_else(|| malformed("no split column and no split file name"))?,
        };
        let lang = row
            .get("language")
            .and_then(Value::as_str)
            .and_then(|l| l.parse().ok())
            .unwrap_or(language);
        let id = match row.get("id") {
            Some(Value::String(s)) if !s.is_empty() => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => format!("{}-{}-{index}", kind.as_str(), row_split.as_str()),
        };
        if source.trim().is_empty() {
            return Err(malformed("empty source"));
        }
        out.push(CodeSample {
            id,
            source,
            language: lang,
            label,
            split: row_split,
            dataset: kind,
        });
    }
    Ok(())
}

fn read_class_dirs(
    dir: &Path,
    split: Split,
    kind: DatasetKind,
    out: &mut Vec<CodeSample>,
) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for class_dir in entries {
        let name = class_dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("")
            .to_owned();
        let Some(label) = parse_label(&Value::String(name.clone())) else {
            log::warn!("ignoring directory {}", class_dir.display());
            continue;
        };
        let mut files: Vec<_> = WalkDir::new(&class_dir)
            .into_iter()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().is_file())
            .map(|e| e.into_path())
            .collect();
        files.sort();
        for file in files {
            let source = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
            if source.trim().is_empty() {
                continue;
            }
            let ext = file.extension().and_then(|x| x.to_str()).unwrap_or("");
            let rel = file.strip_prefix(dir).unwrap_or(&file);
            out.push(CodeSample {
                id: format!("{}/{}", split.as_str(), rel.display()),
                source,
                language: Language::from_extension(ext),
                label,
                split,
                dataset: kind,
            });
        }
    }
    Ok(())
}

fn parse_object(line: &str, index: usize, path: &Path) -> Result<Map<String, Value>> {
    match serde_json::from_str::<Value>(line) {
        Ok(Value::Object(o)) => Ok(o),
        Ok(_) => Err(Error::MalformedRecord {
            path: path.to_path_buf(),
            index,
            reason: "not an object".into(),
        }),
        Err(e) => Err(Error::MalformedRecord {
            path: path.to_path_buf(),
            index,
            reason: e.to_string(),
        }),
    }
}

fn find_string(obj: &Map<String, Value>, fields: &[&str]) -> Option<String> {
    fields
        .iter()
        .find_map(|f| obj.get(*f).and_then(Value::as_str).map(str::to_owned))
}

fn parse_label(value: &Value) -> Option<Label> {
    match value {
        Value::Number(n) => n.as_u64().and_then(Label::from_index),
        Value::Bool(b) => Some(if *b { Label::Ai } else { Label::Human }),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "0" | "human" | "human-written" | "human_written" | "false" => Some(Label::Human),
            "1" | "ai" | "gpt" | "chatgpt" | "machine" | "llm" | "ai-generated" | "generated"
            | "true" => Some(Label::Ai),
            _ => None,
        },
        _ => None,
    }
}

fn content_version(path: &Path) -> String {
    let mut hasher = Sha256::new();
    let mut files: Vec<_> = WalkDir::new(path)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .collect();
    files.sort();
    for f in files {
        hasher.update(f.strip_prefix(path).unwrap_or(&f).to_string_lossy().as_bytes());
        if let Ok(bytes) = fs::read(&f) {
            hasher.update(&bytes);
        }
    }
    format!("sha256:{}", &hex::encode(hasher.finalize())[..16])
}
