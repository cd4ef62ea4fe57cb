//! Result tables (CSV, markdown) and long-form plot data.
//!
//! Tables go through an intermediate [`TextTable`] of already formatted
//! strings, so CSV parsing and re-emission reproduce the same bytes. CSV uses
//! CRLF record terminators and minimal quoting.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{AblationGrid, RunResult};
use crate::error::{Error, Result};

/// Marker for cells that were deliberately not evaluated.
pub const ABSENT: &str = "-";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Fraction,
    Percent,
}

impl Scale {
    pub fn default_decimals(self) -> usize {
        match self {
            Scale::Fraction => 3,
            Scale::Percent => 1,
        }
    }

    pub fn format(self, value: f64, decimals: usize) -> String {
        let v = match self {
            Scale::Fraction => value,
            Scale::Percent => value * 100.0,
        };
        format!("{v:.decimals$}")
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fraction" => Ok(Scale::Fraction),
            "percent" => Ok(Scale::Percent),
            _ => Err(Error::InvalidArgument(format!("unknown scale {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKey {
    #[default]
    Dataset,
    Method,
}

impl FromStr for RowKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dataset" => Ok(RowKey::Dataset),
            "method" => Ok(RowKey::Method),
            _ => Err(Error::InvalidArgument(format!("unknown row key {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Similarity,
    Map,
    MapMacro,
    Top1,
    Adherence,
    /// Filled in by the caller, never taken from a run result.
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub header: String,
    pub encoder: Option<String>,
    pub metric: Metric,
}

impl Column {
    pub fn new(header: impl Into<String>, encoder: Option<&str>, metric: Metric) -> Self {
        Column {
            header: header.into(),
            encoder: encoder.map(String::from),
            metric,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub row_key: RowKey,
    pub row_header: String,
    pub columns: Vec<Column>,
    pub scale: Scale,
    pub decimals: usize,
}

impl TableSchema {
    pub fn new(row_key: RowKey, columns: Vec<Column>, scale: Scale) -> Self {
        TableSchema {
            row_header: match row_key {
                RowKey::Dataset => "Dataset".into(),
                RowKey::Method => "Method".into(),
            },
            row_key,
            columns,
            scale,
            decimals: scale.default_decimals(),
        }
    }

    /// `<encoder> Sim` for every encoder, then `<encoder> mAP` for every encoder.
    pub fn similarity_then_map(row_key: RowKey, encoders: &[&str], scale: Scale) -> Self {
        let sims = encoders.iter().map(|e| Column::new(format!("{e} Sim"), Some(e), Metric::Similarity));
        let maps = encoders.iter().map(|e| Column::new(format!("{e} mAP"), Some(e), Metric::Map));
        TableSchema::new(row_key, sims.chain(maps).collect(), scale)
    }

    /// Default schema for a result list: per encoder Sim and mAP, then top-1
    /// accuracy, then adherence when any result carries it.
    pub fn for_results(results: &[RunResult], row_key: RowKey, scale: Scale) -> Self {
        let mut encoders: Vec<&str> = Vec::new();
        for r in results {
            if !encoders.contains(&r.encoder.as_str()) {
                encoders.push(&r.encoder);
            }
        }
        let mut schema = TableSchema::similarity_then_map(row_key, &encoders, scale);
        for e in &encoders {
            schema.columns.push(Column::new(format!("{e} Top-1"), Some(e), Metric::Top1));
        }
        if results.iter().any(|r| r.text_adherence.is_some()) {
            for e in &encoders {
                schema.columns.push(Column::new(format!("{e} Adherence"), Some(e), Metric::Adherence));
            }
        }
        schema
    }

    pub fn headers(&self) -> Vec<String> {
        std::iter::once(self.row_header.clone())
            .chain(self.columns.iter().map(|c| c.header.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Value(f64),
    Absent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub key: String,
    /// Keyed by column header.
    pub cells: BTreeMap<String, Cell>,
}

impl TableRow {
    pub fn new(key: impl Into<String>) -> Self {
        TableRow {
            key: key.into(),
            cells: BTreeMap::new(),
        }
    }

    pub fn with(mut self, header: &str, cell: Cell) -> Self {
        self.cells.insert(header.to_string(), cell);
        self
    }
}

/// One row per distinct row key, in order of first appearance. A column whose
/// encoder has no result for the row is marked absent.
pub fn rows_from_results(results: &[RunResult], schema: &TableSchema) -> Result<Vec<TableRow>> {
    let key_of = |r: &RunResult| match schema.row_key {
        RowKey::Dataset => r.dataset.clone(),
        RowKey::Method => r.method.clone(),
    };
    let mut keys: Vec<String> = Vec::new();
    for r in results {
        let k = key_of(r);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|key| {
            let mut row = TableRow::new(key.clone());
            for col in &schema.columns {
                let matching: Vec<&RunResult> = results
                    .iter()
                    .filter(|r| key_of(r) == key && col.encoder.as_deref().is_none_or(|e| e == r.encoder))
                    .collect();
                let cell = match (col.metric.clone(), matching.as_slice()) {
                    (Metric::External, _) | (_, []) => Cell::Absent,
                    (metric, [r]) => match metric {
                        Metric::Similarity => Cell::Value(r.similarity()),
                        Metric::Map => Cell::Value(r.map_per_query),
                        Metric::MapMacro => Cell::Value(r.map_per_subject),
                        Metric::Top1 => Cell::Value(r.top1_accuracy),
                        Metric::Adherence => r.text_adherence.map_or(Cell::Absent, Cell::Value),
                        Metric::External => unreachable!(),
                    },
                    (_, many) => {
                        return Err(Error::Report(format!(
                            "row {key}, column {}: {} results match; filter by variant/method first",
                            col.header,
                            many.len()
                        )))
                    }
                };
                row.cells.insert(col.header.clone(), cell);
            }
            Ok(row)
        })
        .collect()
}

/// Formatted cells, ready for CSV or markdown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl TextTable {
    pub fn render(rows: &[TableRow], schema: &TableSchema) -> Result<TextTable> {
        let body = rows
            .iter()
            .map(|row| {
                let mut line = vec![row.key.clone()];
                for col in &schema.columns {
                    let cell = row.cells.get(&col.header).ok_or_else(|| {
                        Error::Report(format!("row {} has no cell for column {}", row.key, col.header))
                    })?;
                    line.push(match cell {
                        Cell::Value(v) => schema.scale.format(*v, schema.decimals),
                        Cell::Absent => ABSENT.to_string(),
                    });
                }
                Ok(line)
            })
            .collect::<Result<_>>()?;
        Ok(TextTable {
            header: schema.headers(),
            rows: body,
        })
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Report(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Report(e.to_string()))
    }

    pub fn parse_csv(text: &str) -> Result<TextTable> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = rd.headers()?.iter().map(String::from).collect();
        let rows = rd
            .records()
            .map(|r| r.map(|rec| rec.iter().map(String::from).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(TextTable { header, rows })
    }

    pub fn to_markdown(&self) -> String {
        let line = |cells: &[String]| {
            let escaped: Vec<String> = cells.iter().map(|c| c.replace('|', "\\|")).collect();
            format!("| {} |\n", escaped.join(" | "))
        };
        let mut out = line(&self.header);
        out.push_str(&line(&vec!["---".to_string(); self.header.len()]));
        for row in &self.rows {
            out.push_str(&line(row));
        }
        out
    }
}

pub fn emit_csv(rows: &[TableRow], schema: &TableSchema) -> Result<String> {
    TextTable::render(rows, schema)?.to_csv()
}

pub fn emit_markdown(rows: &[TableRow], schema: &TableSchema) -> Result<String> {
    Ok(TextTable::render(rows, schema)?.to_markdown())
}

pub const PLOT_METRICS: [&str; 2] = ["map", "similarity"];

/// Long-form CSV (`axis_value,seed,metric,value`), metrics averaged over the
/// methods of each cell.
pub fn emit_plotdata(grid: &AblationGrid) -> Result<String> {
    if grid.cells.is_empty() {
        return Err(Error::Report("empty ablation grid".into()));
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    w.write_record(["axis_value", "seed", "metric", "value"])?;
    for cell in &grid.cells {
        if cell.results.is_empty() {
            return Err(Error::Report(format!("cell {} has no results", cell.value)));
        }
        let values = [cell.mean_map(grid.map_aggregation), cell.mean_similarity()];
        for (metric, value) in PLOT_METRICS.iter().zip(values) {
            w.write_record([cell.value.to_string(), cell.seed.to_string(), metric.to_string(), value.to_string()])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Report(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Report(e.to_string()))
}

/// Provenance written next to every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub tool: String,
    pub version: String,
    pub config_fingerprint: String,
    pub seed: u64,
}

impl Sidecar {
    pub fn new(config_fingerprint: impl Into<String>, seed: u64) -> Self {
        Sidecar {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_fingerprint: config_fingerprint.into(),
            seed,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("sidecar serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_decimal_formatting() {
        assert_eq!(Scale::Fraction.format(0.8, 3), "0.800");
        assert_eq!(Scale::Percent.format(0.798, 1), "79.8");
    }

    #[test]
    fn empty_results_give_header_only() {
        let schema = TableSchema::similarity_then_map(RowKey::Dataset, &["CLIP"], Scale::Fraction);
        let csv = emit_csv(&[], &schema).unwrap();
        assert_eq!(csv, "Dataset,CLIP Sim,CLIP mAP\r\n");
    }

    #[test]
    fn markdown_one_row_two_columns() {
        let schema = TableSchema::new(
            RowKey::Method,
            vec![Column::new("A", None, Metric::External), Column::new("B", None, Metric::External)],
            Scale::Fraction,
        );
        let row = TableRow::new("m").with("A", Cell::Value(0.5)).with("B", Cell::Absent);
        let md = emit_markdown(&[row], &schema).unwrap();
        assert_eq!(md, "| Method | A | B |\n| --- | --- | --- |\n| m | 0.500 | - |\n");
        assert_eq!(md.lines().count(), 3);
    }

    #[test]
    fn missing_cell_is_an_error() {
        let schema = TableSchema::new(RowKey::Method, vec![Column::new("A", None, Metric::External)], Scale::Fraction);
        assert!(matches!(emit_csv(&[TableRow::new("m")], &schema), Err(Error::Report(_))));
    }

    #[test]
    fn csv_quotes_awkward_keys() {
        let schema = TableSchema::new(RowKey::Method, vec![Column::new("A", None, Metric::External)], Scale::Fraction);
        let row = TableRow::new("ip-adapter, \"plus\"").with("A", Cell::Value(1.0));
        let csv = emit_csv(&[row], &schema).unwrap();
        assert_eq!(csv, "Method,A\r\n\"ip-adapter, \"\"plus\"\"\",1.000\r\n");
        let parsed = TextTable::parse_csv(&csv).unwrap();
        assert_eq!(parsed.rows[0][0], "ip-adapter, \"plus\"");
        assert_eq!(parsed.to_csv().unwrap(), csv);
    }
}
