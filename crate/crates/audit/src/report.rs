//! Report writers. JSON reports hold `config`, `summary` and `records`; CSV reports
//! start with a `# config: {...}` comment line followed by one row per record.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// CSV for a `.csv` extension, JSON otherwise.
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

#[derive(Serialize)]
struct JsonReport<'a, C, S, R> {
    config: &'a C,
    summary: &'a S,
    records: &'a [R],
}

/// Renders a report. Field order follows the struct definitions, so the
/// output is a deterministic function of its inputs.
pub fn render_report<C: Serialize, S: Serialize, R: Serialize>(
    config: &C,
    summary: &S,
    records: &[R],
    format: ReportFormat,
) -> AppResult<Vec<u8>> {
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(&JsonReport {
                config,
                summary,
                records,
            })
            .map_err(|e| AppError::Usage(format!("cannot encode report: {e}")))?;
            out.push(b'\n');
            Ok(out)
        }
        ReportFormat::Csv => {
            let mut out = b"# config: ".to_vec();
            serde_json::to_writer(&mut out, config)
                .map_err(|e| AppError::Usage(format!("cannot encode config: {e}")))?;
            out.push(b'\n');
            let mut w = csv::Writer::from_writer(out);
            for r in records {
                w.serialize(r)
                    .map_err(|e| AppError::Usage(format!("cannot encode record: {e}")))?;
            }
            w.into_inner()
                .map_err(|e| AppError::Usage(format!("cannot encode records: {e}")))
        }
    }
}

pub fn write_report<C: Serialize, S: Serialize, R: Serialize>(
    path: &Path,
    config: &C,
    summary: &S,
    records: &[R],
) -> AppResult<()> {
    let bytes = render_report(config, summary, records, ReportFormat::for_path(path))?;
    fs::write(path, bytes).map_err(|e| AppError::io(format!("cannot write {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        item: &'static str,
        value: f64,
    }

    #[test]
    fn empty_records_make_valid_files() {
        let json = render_report(&"cfg", &0, &[] as &[Row], ReportFormat::Json).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&json).unwrap();
        assert_eq!(v["records"].as_array().unwrap().len(), 0);
        let csv = render_report(&"cfg", &0, &[] as &[Row], ReportFormat::Csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "# config: \"cfg\"\n");
    }

    #[test]
    fn csv_rows() {
        let rows = [Row { item: "a", value: 1.5 }, Row { item: "b", value: 2.0 }];
        let csv = String::from_utf8(render_report(&1, &0, &rows, ReportFormat::Csv).unwrap()).unwrap();
        assert_eq!(csv, "# config: 1\nitem,value\na,1.5\nb,2.0\n");
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(ReportFormat::for_path(Path::new("x.CSV")), ReportFormat::Csv);
        assert_eq!(ReportFormat::for_path(Path::new("x.json")), ReportFormat::Json);
        assert_eq!(ReportFormat::for_path(Path::new("x")), ReportFormat::Json);
    }
}
