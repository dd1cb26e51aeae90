//! Line-oriented text files: embeddings, rankings, evaluation reports and
//! loss histories. Reals are printed in shortest round-trip form, so every
//! file reads back to the exact values that were written.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use pabr_core::evaluation::{EvalReport, REPORT_RANKS};
use pabr_core::matching::RankedResult;
use pabr_core::model::{Embedding, Layout};
use pabr_core::training::LossRecord;

use crate::error::{Error, Result};

fn write_text(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

/// `sample_id <TAB> layout <TAB> space-separated values`, one embedding per line.
pub fn embeddings_to_text(items: &[(String, Embedding)]) -> String {
    let mut out = String::from("# sample_id\tlayout\tvalues\n");
    for (id, e) in items {
        let values: Vec<String> = e.values().iter().map(|v| v.to_string()).collect();
        writeln!(out, "{id}\t{}\t{}", e.layout(), values.join(" ")).expect("writing to a String");
    }
    out
}

pub fn parse_embeddings(text: &str, name: &str) -> Result<Vec<(String, Embedding)>> {
    let mut out = Vec::new();
    for (line, l) in data_lines(text) {
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(name, line, format!("expected 3 tab-separated fields, got {}", fields.len())));
        }
        let layout: Layout = fields[1].parse().map_err(|e: pabr_core::Error| Error::parse(name, line, e.to_string()))?;
        let values = fields[2]
            .split(' ')
            .map(|v| v.parse::<f64>().map_err(|e| Error::parse(name, line, format!("value {v:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::parse(name, line, format!("non-finite value {v}")));
        }
        let e = Embedding::new(values, layout).map_err(|e| Error::parse(name, line, e.to_string()))?;
        out.push((fields[0].to_string(), e));
    }
    Ok(out)
}

pub fn write_embeddings(items: &[(String, Embedding)], path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), embeddings_to_text(items))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Vec<(String, Embedding)>> {
    let path = path.as_ref();
    parse_embeddings(&read_text(path)?, &path.display().to_string())
}

/// `query_id <TAB> rank <TAB> gallery_id <TAB> similarity`, ranks from 1.
pub fn rankings_to_text(rankings: &[RankedResult]) -> String {
    let mut out = String::from("# query_id\trank\tgallery_id\tsimilarity\n");
    for r in rankings {
        for (i, (id, s)) in r.iter().enumerate() {
            writeln!(out, "{}\t{}\t{id}\t{s}", r.query_id, i + 1).expect("writing to a String");
        }
    }
    out
}

/// Rebuilds rankings; lines of one query must be contiguous and in rank order.
pub fn parse_rankings(text: &str, name: &str) -> Result<Vec<RankedResult>> {
    let mut out: Vec<RankedResult> = Vec::new();
    for (line, l) in data_lines(text) {
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::parse(name, line, format!("expected 4 tab-separated fields, got {}", fields.len())));
        }
        let rank: usize = fields[1].parse().map_err(|e| Error::parse(name, line, format!("rank {:?}: {e}", fields[1])))?;
        let sim: f64 =
            fields[3].parse().map_err(|e| Error::parse(name, line, format!("similarity {:?}: {e}", fields[3])))?;
        if sim.is_nan() {
            return Err(Error::parse(name, line, "similarity is NaN"));
        }
        let continues = out.last().is_some_and(|r| r.query_id == fields[0]);
        if !continues {
            if out.iter().any(|r| r.query_id == fields[0]) {
                return Err(Error::parse(name, line, format!("query {} is not contiguous", fields[0])));
            }
            out.push(RankedResult { query_id: fields[0].to_string(), ordering: Vec::new(), similarities: Vec::new() });
        }
        let r = out.last_mut().expect("pushed above");
        if rank != r.ordering.len() + 1 {
            return Err(Error::parse(name, line, format!("expected rank {}, got {rank}", r.ordering.len() + 1)));
        }
        r.ordering.push(fields[2].to_string());
        r.similarities.push(sim);
    }
    Ok(out)
}

pub fn write_rankings(rankings: &[RankedResult], path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), rankings_to_text(rankings))
}

pub fn read_rankings(path: impl AsRef<Path>) -> Result<Vec<RankedResult>> {
    let path = path.as_ref();
    parse_rankings(&read_text(path)?, &path.display().to_string())
}

/// `key <TAB> value` lines: query counts, `rank1` … `rank20`, then `mAP`.
/// Ranks beyond the computed curve are omitted.
pub fn report_to_text(report: &EvalReport) -> String {
    let mut out = String::new();
    writeln!(out, "queries\t{}", report.num_queries).expect("writing to a String");
    writeln!(out, "valid_queries\t{}", report.num_valid_queries).expect("writing to a String");
    for k in REPORT_RANKS {
        if let Some(v) = report.cmc_at(k) {
            writeln!(out, "rank{k}\t{v}").expect("writing to a String");
        }
    }
    writeln!(out, "mAP\t{}", report.map).expect("writing to a String");
    out
}

pub fn parse_report(text: &str) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (line, l) in data_lines(text) {
        let (k, v) = l.split_once('\t').ok_or_else(|| Error::parse("report", line, "missing tab"))?;
        let v = v.parse::<f64>().map_err(|e| Error::parse("report", line, e.to_string()))?;
        out.insert(k.to_string(), v);
    }
    Ok(out)
}

pub fn write_report(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), report_to_text(report))
}

pub fn history_to_csv(history: &[LossRecord]) -> String {
    let mut out = String::from("iteration,loss,lr\n");
    for r in history {
        writeln!(out, "{},{},{}", r.iteration, r.loss, r.learning_rate).expect("writing to a String");
    }
    out
}

pub fn write_history(history: &[LossRecord], path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), history_to_csv(history))
}
