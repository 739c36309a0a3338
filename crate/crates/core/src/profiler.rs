//! Row-name frequency profiling and substring discovery.
//!
//! Memory grows with the number of distinct row names (and distinct
//! name/template/group triples when contexts are collected), never with the
//! number of rows. Discovery queries fold case by default; mapping lookups
//! never do.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::{self, Write};

use crate::flow_model::FlowsheetRecord;
use crate::ingest::{IngestError, Ingested};
use crate::tsv;

/// (template_name, group_name)
pub type Context = (String, String);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrequencyReport {
    pub counts: HashMap<String, u64>,
    pub total: u64,
    pub contexts: Option<HashMap<String, HashMap<Context, u64>>>,
    /// Rows the stream rejected; not part of `total`.
    pub rejected: u64,
}

impl FrequencyReport {
    pub fn new(collect_contexts: bool) -> Self {
        FrequencyReport { contexts: collect_contexts.then(HashMap::new), ..Default::default() }
    }

    /// Builds a report straight from published counts, without contexts.
    pub fn from_counts<'a, I>(counts: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, u64)>,
    {
        let mut report = FrequencyReport::default();
        for (name, n) in counts {
            *report.counts.entry(name.to_owned()).or_default() += n;
            report.total += n;
        }
        report
    }

    pub fn add(&mut self, r: &FlowsheetRecord) {
        self.total += 1;
        bump(&mut self.counts, &r.row_name);
        if let Some(ctx) = self.contexts.as_mut() {
            let per_name = match ctx.get_mut(&r.row_name) {
                Some(m) => m,
                None => ctx.entry(r.row_name.clone()).or_default(),
            };
            let key = (r.template_name.clone(), r.group_name.clone());
            *per_name.entry(key).or_default() += 1;
        }
    }

    /// Associative, commutative merge of two partial reports.
    pub fn merge(&mut self, other: FrequencyReport) {
        self.total += other.total;
        self.rejected += other.rejected;
        for (name, n) in other.counts {
            *self.counts.entry(name).or_default() += n;
        }
        match (self.contexts.as_mut(), other.contexts) {
            (Some(mine), Some(theirs)) => {
                for (name, pairs) in theirs {
                    let slot = mine.entry(name).or_default();
                    for (pair, n) in pairs {
                        *slot.entry(pair).or_default() += n;
                    }
                }
            }
            (None, Some(theirs)) => self.contexts = Some(theirs),
            _ => {}
        }
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }
}

fn bump(map: &mut HashMap<String, u64>, key: &str) {
    match map.get_mut(key) {
        Some(n) => *n += 1,
        None => {
            map.insert(key.to_owned(), 1);
        }
    }
}

/// One pass over a record stream.
pub fn count_row_names<I>(stream: I, collect_contexts: bool) -> Result<FrequencyReport, IngestError>
where
    I: IntoIterator<Item = Result<Ingested, IngestError>>,
{
    let mut report = FrequencyReport::new(collect_contexts);
    for item in stream {
        match item? {
            Ingested::Record(r) => report.add(&r),
            Ingested::Rejected(_) => report.rejected += 1,
        }
    }
    Ok(report)
}

/// Count descending, then byte-order name ascending.
fn rank(a: &(String, u64), b: &(String, u64)) -> Ordering {
    b.1.cmp(&a.1).then_with(|| a.0.as_bytes().cmp(b.0.as_bytes()))
}

fn ranked<'a, I>(pairs: I) -> Vec<(String, u64)>
where
    I: IntoIterator<Item = (&'a String, &'a u64)>,
{
    let mut v: Vec<(String, u64)> = pairs.into_iter().map(|(k, n)| (k.clone(), *n)).collect();
    v.sort_by(rank);
    v
}

/// The `n` most frequent names. `n` larger than the distinct count returns all.
pub fn top_n(report: &FrequencyReport, n: usize) -> Vec<(String, u64)> {
    let mut v = ranked(&report.counts);
    v.truncate(n);
    v
}

/// Names containing `include` and none of `exclude`, ranked as [`top_n`].
/// With `case_fold` both sides are lower-cased before the containment test.
pub fn substring_query(report: &FrequencyReport, include: &str, exclude: &[String], case_fold: bool) -> Vec<(String, u64)> {
    let fold = |s: &str| if case_fold { s.to_lowercase() } else { s.to_owned() };
    let include = fold(include);
    let exclude: Vec<String> = exclude.iter().map(|e| fold(e)).collect();
    ranked(report.counts.iter().filter(|(name, _)| {
        let name = fold(name);
        name.contains(&include) && !exclude.iter().any(|e| name.contains(e.as_str()))
    }))
}

/// Where a row name was documented: (template, group, count), most frequent first.
/// Empty when the name is unknown or contexts were not collected.
pub fn context_report(report: &FrequencyReport, row_name: &str) -> Vec<(String, String, u64)> {
    let Some(pairs) = report.contexts.as_ref().and_then(|c| c.get(row_name)) else {
        return Vec::new();
    };
    let mut v: Vec<(String, String, u64)> = pairs.iter().map(|((t, g), n)| (t.clone(), g.clone(), *n)).collect();
    v.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| (&a.0, &a.1).cmp(&(&b.0, &b.1))));
    v
}

/// Tab-delimited `row_name  count` listing, optionally followed by a
/// `row_name  template_name  group_name  count` context section.
pub fn write_report<W: Write>(mut out: W, rows: &[(String, u64)], report: &FrequencyReport, with_contexts: bool) -> io::Result<()> {
    out.write_all(tsv::encode_line(["row_name", "count"]).as_bytes())?;
    for (name, n) in rows {
        out.write_all(tsv::encode_line([name.as_str(), &n.to_string()]).as_bytes())?;
    }
    if with_contexts {
        out.write_all(b"\n")?;
        out.write_all(tsv::encode_line(["row_name", "template_name", "group_name", "count"]).as_bytes())?;
        for (name, _) in rows {
            for (t, g, n) in context_report(report, name) {
                out.write_all(tsv::encode_line([name.as_str(), &t, &g, &n.to_string()]).as_bytes())?;
            }
        }
    }
    out.flush()
}
