//! Tab-separated exports of training logs and histograms, for plotting.

use std::path::Path;

use crate::container::{parse_field, read_file, write_file};
use crate::curation::Histogram;
use crate::error::{Error, Result};
use crate::training::LossReport;

pub const LOSS_HEADER: &str = "step\tl_simple\tl_vel\tl_foot\tl_total";
pub const HISTOGRAM_HEADER: &str = "bin_lo\tbin_hi\tcount";
const KIND: &str = "tsv export";

/// One row per step, numbered from 0.
pub fn loss_log_tsv(log: &[LossReport]) -> String {
    let mut out = format!("{LOSS_HEADER}\n");
    for (i, r) in log.iter().enumerate() {
        out.push_str(&format!("{i}\t{}\t{}\t{}\t{}\n", r.l_simple, r.l_vel, r.l_foot, r.l_total));
    }
    out
}

pub fn histogram_tsv(h: &Histogram) -> String {
    let mut out = format!("{HISTOGRAM_HEADER}\n");
    for (i, c) in h.counts.iter().enumerate() {
        out.push_str(&format!("{}\t{}\t{c}\n", h.edges[i], h.edges[i + 1]));
    }
    out
}

fn rows<'a>(text: &'a str, header: &str) -> Result<Vec<Vec<&'a str>>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == header => {}
        other => return Err(Error::format(KIND, format!("expected header {header:?}, found {other:?}"))),
    }
    let width = header.split('\t').count();
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let cells: Vec<&str> = l.split('\t').collect();
            if cells.len() == width {
                Ok(cells)
            } else {
                Err(Error::format(KIND, format!("row {l:?} has {} cells, expected {width}", cells.len())))
            }
        })
        .collect()
}

pub fn parse_loss_log(text: &str) -> Result<Vec<LossReport>> {
    rows(text, LOSS_HEADER)?
        .into_iter()
        .map(|c| {
            Ok(LossReport::compose(
                parse_field(KIND, "l_simple", c[1])?,
                parse_field(KIND, "l_vel", c[2])?,
                parse_field(KIND, "l_foot", c[3])?,
            ))
        })
        .collect()
}

pub fn parse_histogram(text: &str) -> Result<Histogram> {
    let rows = rows(text, HISTOGRAM_HEADER)?;
    if rows.is_empty() {
        return Err(Error::format(KIND, "histogram without bins"));
    }
    let mut edges = Vec::with_capacity(rows.len() + 1);
    let mut counts = Vec::with_capacity(rows.len());
    for (i, c) in rows.iter().enumerate() {
        let lo: f64 = parse_field(KIND, "bin_lo", c[0])?;
        if i == 0 {
            edges.push(lo);
        } else if lo != edges[i] {
            return Err(Error::format(KIND, format!("bin {i} does not start where bin {} ends", i - 1)));
        }
        edges.push(parse_field(KIND, "bin_hi", c[1])?);
        counts.push(parse_field(KIND, "count", c[2])?);
    }
    Ok(Histogram { edges, counts })
}

pub fn write_loss_log(path: &Path, log: &[LossReport]) -> Result<()> {
    write_file(path, loss_log_tsv(log).as_bytes())
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LossReport>> {
    let bytes = read_file(path)?;
    parse_loss_log(std::str::from_utf8(&bytes).map_err(|_| Error::format(KIND, "not UTF-8"))?)
}

pub fn write_histogram(path: &Path, h: &Histogram) -> Result<()> {
    write_file(path, histogram_tsv(h).as_bytes())
}

pub fn read_histogram(path: &Path) -> Result<Histogram> {
    let bytes = read_file(path)?;
    parse_histogram(std::str::from_utf8(&bytes).map_err(|_| Error::format(KIND, "not UTF-8"))?)
}

/// The motion-degree histogram recorded in a curation report.
pub fn histogram_from_curation_report(path: &Path) -> Result<Histogram> {
    let bytes = read_file(path)?;
    let v: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| Error::format("curation report", e.to_string()))?;
    let h = v
        .get("motion_degree")
        .and_then(|m| m.get("histogram"))
        .ok_or_else(|| Error::EmptyResult(format!("{} holds no motion-degree histogram", path.display())))?;
    serde_json::from_value(h.clone()).map_err(|e| Error::format("curation report", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_log_has_one_row_per_step() {
        let log: Vec<LossReport> = (0..7).map(|i| LossReport::compose(i as f64, 0.5, 0.25)).collect();
        let text = loss_log_tsv(&log);
        assert_eq!(text.lines().count(), 8);
        assert_eq!(text.lines().nth(3).unwrap(), "2\t2\t0.5\t0.25\t20.75");
        assert_eq!(parse_loss_log(&text).unwrap(), log);
    }

    #[test]
    fn empty_log_is_header_only() {
        assert_eq!(loss_log_tsv(&[]), format!("{LOSS_HEADER}\n"));
        assert!(parse_loss_log(&loss_log_tsv(&[])).unwrap().is_empty());
    }

    #[test]
    fn histogram_round_trips_through_a_file() {
        let h = Histogram::new(&[0.1, 0.2, 0.35, 0.9, 1.0], 4, 0.0, 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.tsv");
        write_histogram(&path, &h).unwrap();
        assert_eq!(read_histogram(&path).unwrap(), h);
    }

    #[test]
    fn malformed_tables_are_rejected() {
        assert!(parse_loss_log("step\tloss\n").is_err());
        assert!(parse_histogram(&format!("{HISTOGRAM_HEADER}\n0\t1\n")).is_err());
        assert!(parse_histogram(&format!("{HISTOGRAM_HEADER}\n0\t1\t2\n2\t3\t1\n")).is_err());
        assert!(parse_histogram(&format!("{HISTOGRAM_HEADER}\n")).is_err());
    }
}
