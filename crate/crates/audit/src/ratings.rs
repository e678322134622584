//! Ratings file parsers.
//!
//! Three layouts are accepted: MovieLens-style `user::item::rating[::timestamp]`,
//! tab-separated `user<TAB>item<TAB>rating[<TAB>timestamp]`, and comma-separated
//! files with a header naming the user, item and rating columns.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use reach_core::data::RatingsTable;
use serde::Serialize;

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RatingsFormat {
    /// `user::item::rating[::timestamp]`
    Mlens,
    /// `user<TAB>item<TAB>rating[<TAB>timestamp]`
    Tsv,
    /// Comma-separated with a header row.
    Csv,
}

const USER_COLUMNS: &[&str] = &["user", "userid", "user_id"];
const ITEM_COLUMNS: &[&str] = &[
    "item",
    "itemid",
    "item_id",
    "movieid",
    "movie_id",
    "artist",
    "artistid",
    "artist_id",
];
const RATING_COLUMNS: &[&str] = &["rating", "value", "count", "listens", "plays", "weight"];
const TIME_COLUMNS: &[&str] = &["timestamp", "time", "ts"];

struct Sink<'a> {
    table: RatingsTable,
    range: Option<(f64, f64)>,
    name: &'a str,
}

impl Sink<'_> {
    fn error(&self, line: u64, message: impl Into<String>) -> AppError {
        AppError::Parse {
            source_name: self.name.to_string(),
            line,
            message: message.into(),
        }
    }

    fn add(&mut self, line: u64, user: &str, item: &str, rating: &str, ts: Option<&str>) -> AppResult<()> {
        let (user, item, rating) = (user.trim(), item.trim(), rating.trim());
        if user.is_empty() || item.is_empty() {
            return Err(self.error(line, "empty user or item id"));
        }
        let value: f64 = rating
            .parse()
            .map_err(|_| self.error(line, format!("rating {rating:?} is not a number")))?;
        if !value.is_finite() {
            return Err(self.error(line, format!("rating {rating:?} is not finite")));
        }
        if let Some((lo, hi)) = self.range {
            if !(lo..=hi).contains(&value) {
                return Err(self.error(line, format!("rating {value} outside declared range [{lo}, {hi}]")));
            }
        }
        let timestamp = match ts.map(str::trim).filter(|t| !t.is_empty()) {
            None => None,
            Some(t) => Some(
                t.parse::<i64>()
                    .map_err(|_| self.error(line, format!("timestamp {t:?} is not an integer")))?,
            ),
        };
        self.table
            .push(user, item, value, timestamp)
            .map_err(|e| self.error(line, e.to_string()))
    }
}

/// Parses ratings from a file. `range` rejects (never clips) out-of-range values.
pub fn parse_ratings(path: &Path, format: RatingsFormat, range: Option<(f64, f64)>) -> AppResult<RatingsTable> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => AppError::Usage(format!("ratings file not found: {}", path.display())),
        _ => AppError::io(format!("cannot open {}", path.display()), e),
    })?;
    parse_ratings_from(file, &path.display().to_string(), format, range)
}

/// Parses ratings from any reader; `name` labels error messages.
pub fn parse_ratings_from<R: Read>(
    reader: R,
    name: &str,
    format: RatingsFormat,
    range: Option<(f64, f64)>,
) -> AppResult<RatingsTable> {
    let mut sink = Sink {
        table: RatingsTable::new(),
        range,
        name,
    };
    match format {
        RatingsFormat::Mlens => parse_delimited(reader, &mut sink, "::")?,
        RatingsFormat::Tsv => parse_delimited(reader, &mut sink, "\t")?,
        RatingsFormat::Csv => parse_csv(reader, &mut sink)?,
    }
    Ok(sink.table)
}

fn parse_delimited<R: Read>(reader: R, sink: &mut Sink<'_>, sep: &str) -> AppResult<()> {
    for (k, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = k as u64 + 1;
        let line = line.map_err(|e| sink.error(line_no, e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(sep).collect();
        match fields.as_slice() {
            [u, i, r] => sink.add(line_no, u, i, r, None)?,
            [u, i, r, t] => sink.add(line_no, u, i, r, Some(t))?,
            _ => {
                let want = if sep == "::" {
                    "user::item::rating[::timestamp]"
                } else {
                    "user<TAB>item<TAB>rating[<TAB>timestamp]"
                };
                return Err(sink.error(line_no, format!("expected {want}, found {} fields", fields.len())));
            }
        }
    }
    Ok(())
}

fn find_column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers
        .iter()
        .position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
}

fn parse_csv<R: Read>(reader: R, sink: &mut Sink<'_>) -> AppResult<()> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| sink.error(1, e.to_string()))?.clone();
    let need = |names: &[&str], what: &str| {
        find_column(&headers, names).ok_or_else(|| sink.error(1, format!("header has no {what} column")))
    };
    let (cu, ci, cr) = (
        need(USER_COLUMNS, "user")?,
        need(ITEM_COLUMNS, "item")?,
        need(RATING_COLUMNS, "rating")?,
    );
    let ct = find_column(&headers, TIME_COLUMNS);
    let mut record = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut record).map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            sink.error(line, e.to_string())
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        let field = |c: usize| record.get(c).unwrap_or("");
        sink.add(line, field(cu), field(ci), field(cr), ct.map(field))?;
    }
    Ok(())
}
