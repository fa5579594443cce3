//! Reading inputs and writing CSV/JSON artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gbmds::cmds::Configuration;
use gbmds::dissimilarity::{DataMatrix, DissimilarityMatrix, Metric};
use serde::Serialize;

/// Optional header and numeric rows.
pub type NumericTable = (Option<Vec<String>>, Vec<Vec<f64>>);

/// Numeric rows of a CSV file. A first row that does not parse as numbers
/// is taken as a header and returned separately.
pub fn read_numeric_csv(path: &Path) -> Result<NumericTable> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_numeric_csv(&text).with_context(|| format!("in {}", path.display()))
}

pub fn parse_numeric_csv(text: &str) -> Result<NumericTable> {
    let mut header = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = content.split(',').map(|f| f.trim().trim_matches('"')).collect();
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(values) => {
                if let Some(first) = rows.first() {
                    if values.len() != first.len() {
                        bail!("line {line}: expected {} fields, found {}", first.len(), values.len());
                    }
                }
                if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
                    bail!("line {line}: non-finite value {bad}");
                }
                rows.push(values);
            }
            Err(_) if rows.is_empty() && header.is_none() => {
                header = Some(fields.iter().map(|f| f.to_string()).collect());
            }
            Err(_) => {
                let field = fields.iter().find(|f| f.parse::<f64>().is_err()).unwrap_or(&"");
                bail!("line {line}: cannot parse '{field}' as a number");
            }
        }
    }
    if rows.is_empty() {
        bail!(gbmds::GbmdsError::InvalidInput("no observations".into()));
    }
    Ok((header, rows))
}

/// Observation rows for the Euclidean or cosine metric.
pub fn read_data(path: &Path) -> Result<DataMatrix> {
    let (_, rows) = read_numeric_csv(path)?;
    Ok(DataMatrix::from_rows(&rows)?)
}

/// One document per non-blank line.
pub fn read_documents(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let docs: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if docs.is_empty() {
        bail!(gbmds::GbmdsError::InvalidInput("no observations".into()));
    }
    Ok(docs)
}

/// A square dissimilarity matrix as written by `dissim`.
pub fn read_matrix(path: &Path, metric: Metric) -> Result<DissimilarityMatrix> {
    let (_, rows) = read_numeric_csv(path)?;
    let n = rows.len();
    if rows[0].len() != n {
        bail!("{}: matrix has {n} rows but {} columns", path.display(), rows[0].len());
    }
    let values = rows.into_iter().flatten().collect();
    DissimilarityMatrix::from_full(n, values, metric, metric.default_upper_bound())
        .with_context(|| format!("in {}", path.display()))
}

/// Collects the paths written by a command.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("cannot create {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    fn path(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.root.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        self.written.push(name.to_string());
        Ok(p)
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name)?;
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&p, text).with_context(|| format!("cannot write {}", p.display()))
    }

    /// Rows of plain numbers under an optional header.
    pub fn csv_rows<I, R>(&mut self, name: &str, header: Option<&[String]>, rows: I) -> Result<()>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let p = self.path(name)?;
        let mut w = csv::Writer::from_path(&p).with_context(|| format!("cannot write {}", p.display()))?;
        if let Some(h) = header {
            w.write_record(h)?;
        }
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Serializable records with a header derived from their fields.
    pub fn csv_records<T: Serialize>(&mut self, name: &str, records: &[T]) -> Result<()> {
        let p = self.path(name)?;
        let mut w = csv::Writer::from_path(&p).with_context(|| format!("cannot write {}", p.display()))?;
        for r in records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn matrix(&mut self, name: &str, d: &DissimilarityMatrix) -> Result<()> {
        let n = d.n();
        self.csv_rows(
            name,
            None,
            (0..n).map(|i| (0..n).map(move |j| fmt(d.get(i, j)))),
        )
    }

    pub fn configuration(&mut self, name: &str, x: &Configuration) -> Result<()> {
        let header: Vec<String> = (1..=x.p()).map(|k| format!("x{k}")).collect();
        self.csv_rows(name, Some(&header), x.rows().map(|r| r.iter().map(|v| fmt(*v)).collect::<Vec<_>>()))
    }

    /// Long-format archive: one line per (sample, object).
    pub fn samples(&mut self, name: &str, samples: &[Configuration]) -> Result<()> {
        let p = samples.first().map_or(0, |s| s.p());
        let mut header = vec!["sample".to_string(), "object".to_string()];
        header.extend((1..=p).map(|k| format!("x{k}")));
        let rows = samples.iter().enumerate().flat_map(|(s, x)| {
            x.rows().enumerate().map(move |(i, r)| {
                let mut v = vec![s.to_string(), i.to_string()];
                v.extend(r.iter().map(|c| fmt(*c)));
                v
            })
        });
        self.csv_rows(name, Some(&header), rows)
    }
}

/// Shortest round-tripping decimal form.
pub fn fmt(v: f64) -> String {
    format!("{v}")
}
