//! CSV ingestion for the public hate-speech benchmark layout.
//!
//! Required columns: `labels` and one of `text` / `description`. Optional:
//! `id` (defaults to `row-<n>`), `name`, `keywords`. List-valued cells are
//! either JSON arrays or `;`-separated.

use std::collections::HashSet;
use std::io::Read;

use super::dataset::{SampleRecord, Taxonomy};
use super::Sample;
use crate::error::{Error, Result};

fn split_list(cell: &str) -> Result<Vec<String>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(Vec::new());
    }
    if cell.starts_with('[') {
        return Ok(serde_json::from_str(cell)?);
    }
    Ok(cell
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect())
}

pub fn parse_csv(reader: impl Read, taxonomy: &Taxonomy) -> Result<Vec<Sample>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let labels_col = col("labels").ok_or_else(|| Error::Parse {
        line: 1,
        msg: "missing `labels` column".into(),
    })?;
    let text_col = col("text").or_else(|| col("description")).ok_or_else(|| Error::Parse {
        line: 1,
        msg: "missing `text` or `description` column".into(),
    })?;
    let (id_col, name_col, kw_col) = (col("id"), col("name"), col("keywords"));

    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in rdr.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let get = |c: Option<usize>| c.and_then(|c| row.get(c)).unwrap_or("").to_owned();
        let id = match id_col {
            Some(_) => get(id_col),
            None => format!("row-{}", i + 1),
        };
        let rec = SampleRecord {
            id,
            name: get(name_col),
            keywords: split_list(&get(kw_col)).map_err(|e| Error::Parse { line, msg: e.to_string() })?,
            description: get(Some(text_col)),
            labels: split_list(&get(Some(labels_col))).map_err(|e| Error::Parse { line, msg: e.to_string() })?,
        };
        let s = rec.resolve(taxonomy)?;
        if !seen.insert(s.id.clone()) {
            return Err(Error::Data(format!("duplicate sample id `{}`", s.id)));
        }
        out.push(s);
    }
    if out.is_empty() {
        return Err(Error::Data("no samples".into()));
    }
    Ok(out)
}
