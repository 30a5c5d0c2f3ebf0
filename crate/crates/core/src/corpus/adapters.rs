//! Per-dataset source adapters and the canonical JSON Lines format.
//!
//! Source layouts (UTF-8):
//!
//! * **DFKI** `dfki.tsv`: tab-separated, header `id<TAB>function<TAB>sentiment<TAB>context`.
//! * **UMICH** `umich.csv`: RFC 4180 CSV, header `id,citing,cited,sentiment,function,text`.
//! * **TKDE** `tkde.tsv`: tab-separated, no header, `label<TAB>context`; ids are
//!   `tkde-<line>`.
//!
//! Raw labels are matched against the published label names ignoring case
//! and punctuation. Citation markers inside the text pass through verbatim.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{normalize_whitespace, CitationContext, Corpus, CorpusError, Dataset, LabelScheme, Result, Task};

/// The on-disk layout an adapter reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceLayout {
    DfkiTsv,
    UmichCsv,
    TkdeTsv,
}

impl SourceLayout {
    pub fn for_dataset(dataset: Dataset) -> Self {
        match dataset {
            Dataset::Dfki => SourceLayout::DfkiTsv,
            Dataset::Umich => SourceLayout::UmichCsv,
            Dataset::Tkde => SourceLayout::TkdeTsv,
        }
    }

    /// File name looked up when `ingest` is given a directory.
    pub fn default_file_name(self) -> &'static str {
        match self {
            SourceLayout::DfkiTsv => "dfki.tsv",
            SourceLayout::UmichCsv => "umich.csv",
            SourceLayout::TkdeTsv => "tkde.tsv",
        }
    }
}

fn resolve(layout: SourceLayout, path: &Path) -> Result<PathBuf> {
    let file = if path.is_dir() {
        path.join(layout.default_file_name())
    } else {
        path.to_path_buf()
    };
    if !file.is_file() {
        return Err(CorpusError::MissingFile(file.display().to_string()));
    }
    Ok(file)
}

struct Labeler {
    function: Option<LabelScheme>,
    sentiment: Option<LabelScheme>,
}

impl Labeler {
    fn new(dataset: Dataset) -> Result<Self> {
        let get = |t: Task| -> Result<Option<LabelScheme>> {
            if dataset.tasks().contains(&t) {
                LabelScheme::published(dataset, t).map(Some)
            } else {
                Ok(None)
            }
        };
        Ok(Self {
            function: get(Task::Function)?,
            sentiment: get(Task::Sentiment)?,
        })
    }

    fn map(&self, task: Task, raw: &str, record: &str) -> Result<Option<String>> {
        let raw = raw.trim();
        if raw.is_empty() {
            return Ok(None);
        }
        let scheme = match task {
            Task::Function => self.function.as_ref(),
            Task::Sentiment => self.sentiment.as_ref(),
        };
        scheme
            .and_then(|s| s.canonicalize(raw))
            .map(|l| Some(l.to_string()))
            .ok_or_else(|| CorpusError::UnknownLabel {
                label: raw.to_string(),
                record: record.to_string(),
            })
    }
}

fn meta(source: &Path, line: usize) -> BTreeMap<String, String> {
    let name = source
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    BTreeMap::from([("source".to_string(), name), ("line".to_string(), line.to_string())])
}

fn text_field(raw: &str, line: usize) -> Result<String> {
    let text = normalize_whitespace(raw);
    if text.is_empty() {
        return Err(CorpusError::MalformedRecord {
            line,
            reason: "empty citation context".into(),
        });
    }
    Ok(text)
}

fn empty_file(path: &Path) -> CorpusError {
    CorpusError::MalformedRecord {
        line: 0,
        reason: format!("{} contains no records", path.display()),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        lines.push(line.trim_end_matches('\r').to_string());
    }
    Ok(lines)
}

fn ingest_dfki(path: &Path) -> Result<Vec<CitationContext>> {
    let labeler = Labeler::new(Dataset::Dfki)?;
    let lines = read_lines(path)?;
    let mut rows = lines.iter().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = rows.next() else {
        return Err(empty_file(path));
    };
    let expected = ["id", "function", "sentiment", "context"];
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    if cols != expected {
        return Err(CorpusError::MalformedRecord {
            line: 1,
            reason: format!("expected header {expected:?}, found {cols:?}"),
        });
    }
    let mut records = Vec::new();
    for (i, line) in rows {
        let n = i + 1;
        let fields: Vec<&str> = line.splitn(4, '\t').collect();
        if fields.len() != 4 {
            return Err(CorpusError::MalformedRecord {
                line: n,
                reason: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let id = fields[0].trim().to_string();
        if id.is_empty() {
            return Err(CorpusError::MalformedRecord {
                line: n,
                reason: "empty id".into(),
            });
        }
        records.push(CitationContext {
            function_label: labeler.map(Task::Function, fields[1], &id)?,
            sentiment_label: labeler.map(Task::Sentiment, fields[2], &id)?,
            text: text_field(fields[3], n)?,
            dataset: Dataset::Dfki,
            meta: meta(path, n),
            id,
        });
    }
    if records.is_empty() {
        return Err(empty_file(path));
    }
    Ok(records)
}

fn ingest_umich(path: &Path) -> Result<Vec<CitationContext>> {
    let labeler = Labeler::new(Dataset::Umich)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CorpusError::MalformedRecord {
            line: 0,
            reason: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::MalformedRecord {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    if headers.is_empty() {
        return Err(empty_file(path));
    }
    let expected = ["id", "citing", "cited", "sentiment", "function", "text"];
    if headers.iter().map(str::trim).collect::<Vec<_>>() != expected {
        return Err(CorpusError::MalformedRecord {
            line: 1,
            reason: format!("expected header {expected:?}"),
        });
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| CorpusError::MalformedRecord {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let n = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let id = row[0].trim().to_string();
        if id.is_empty() {
            return Err(CorpusError::MalformedRecord {
                line: n,
                reason: "empty id".into(),
            });
        }
        let mut m = meta(path, n);
        m.insert("citing".into(), row[1].trim().to_string());
        m.insert("cited".into(), row[2].trim().to_string());
        records.push(CitationContext {
            sentiment_label: labeler.map(Task::Sentiment, &row[3], &id)?,
            function_label: labeler.map(Task::Function, &row[4], &id)?,
            text: text_field(&row[5], n)?,
            dataset: Dataset::Umich,
            meta: m,
            id,
        });
    }
    if records.is_empty() {
        return Err(empty_file(path));
    }
    Ok(records)
}

fn ingest_tkde(path: &Path) -> Result<Vec<CitationContext>> {
    let labeler = Labeler::new(Dataset::Tkde)?;
    let mut records = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 1;
        let Some((label, text)) = line.split_once('\t') else {
            return Err(CorpusError::MalformedRecord {
                line: n,
                reason: "expected label<TAB>context".into(),
            });
        };
        let id = format!("tkde-{n}");
        records.push(CitationContext {
            function_label: labeler.map(Task::Function, label, &id)?,
            sentiment_label: None,
            text: text_field(text, n)?,
            dataset: Dataset::Tkde,
            meta: meta(path, n),
            id,
        });
    }
    if records.is_empty() {
        return Err(empty_file(path));
    }
    Ok(records)
}

/// Reads a dataset in its source layout. `path` may be the file itself or a
/// directory holding [`SourceLayout::default_file_name`].
pub fn ingest(dataset: Dataset, path: &Path) -> Result<Corpus> {
    let layout = SourceLayout::for_dataset(dataset);
    let file = resolve(layout, path)?;
    let records = match layout {
        SourceLayout::DfkiTsv => ingest_dfki(&file)?,
        SourceLayout::UmichCsv => ingest_umich(&file)?,
        SourceLayout::TkdeTsv => ingest_tkde(&file)?,
    };
    Corpus::new(dataset, records)
}

/// Reads a canonical JSON Lines corpus. All records must share one dataset.
pub fn read_jsonl(path: &Path) -> Result<Corpus> {
    if !path.is_file() {
        return Err(CorpusError::MissingFile(path.display().to_string()));
    }
    let mut records: Vec<CitationContext> = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: CitationContext = serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        rec.text = text_field(&rec.text, i + 1)?;
        if let Some(first) = records.first() {
            if first.dataset != rec.dataset {
                return Err(CorpusError::MalformedRecord {
                    line: i + 1,
                    reason: format!("mixed datasets {} and {}", first.dataset, rec.dataset),
                });
            }
        }
        records.push(rec);
    }
    let Some(first) = records.first() else {
        return Err(empty_file(path));
    };
    Corpus::new(first.dataset, records)
}

/// Writes one JSON object per record with keys
/// `id, text, dataset, function_label, sentiment_label, meta`.
pub fn write_jsonl(corpus: &Corpus, out: impl Write) -> Result<()> {
    let mut out = BufWriter::new(out);
    for r in corpus.records() {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn dfki_rows_are_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "dfki.tsv",
            "id\tfunction\tsentiment\tcontext\nd1\tgrelated\tneutral\t  We  follow\t[3].  \n",
        );
        let c = ingest(Dataset::Dfki, &p).unwrap();
        assert_eq!(c.len(), 1);
        let r = &c.records()[0];
        assert_eq!(r.text, "We follow [3].");
        assert_eq!(r.function_label.as_deref(), Some("GRelated"));
        assert_eq!(r.sentiment_label.as_deref(), Some("Neutral"));
        assert_eq!(r.meta["line"], "2");
    }

    #[test]
    fn empty_dfki_file_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "dfki.tsv", "");
        assert!(matches!(ingest(Dataset::Dfki, &p), Err(CorpusError::MalformedRecord { .. })));
        let p = write(dir.path(), "header_only.tsv", "id\tfunction\tsentiment\tcontext\n");
        assert!(matches!(ingest(Dataset::Dfki, &p), Err(CorpusError::MalformedRecord { .. })));
    }

    #[test]
    fn unknown_label_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "tkde.tsv", "Use\tfine\nWhatever\tbad\n");
        match ingest(Dataset::Tkde, &p) {
            Err(CorpusError::UnknownLabel { label, record }) => {
                assert_eq!(label, "Whatever");
                assert_eq!(record, "tkde-2");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            ingest(Dataset::Umich, Path::new("/nonexistent/umich.csv")),
            Err(CorpusError::MissingFile(_))
        ));
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "umich.csv",
            "id,citing,cited,sentiment,function,text\nu1,A,B,positive,use,\"We use, with care, [1].\"\nu2,A,C,,,Plain text\n",
        );
        let c = ingest(Dataset::Umich, &p).unwrap();
        assert_eq!(c.records()[0].text, "We use, with care, [1].");
        assert_eq!(c.records()[1].sentiment_label, None);
        let mut buf = Vec::new();
        write_jsonl(&c, &mut buf).unwrap();
        let first = String::from_utf8(buf.clone()).unwrap();
        assert!(first.starts_with("{\"id\":\"u1\",\"text\""));
        assert!(first.contains("\"function_label\":null"));
        let j = write(dir.path(), "c.jsonl", &first);
        assert_eq!(read_jsonl(&j).unwrap(), c);
    }
}
