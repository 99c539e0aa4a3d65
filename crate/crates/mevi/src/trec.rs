//! TREC-format retrieval artifacts: run files and qrels.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{MeviError, Result};

/// Binary relevance judgments: query id to the set of relevant doc ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    map: BTreeMap<String, BTreeSet<String>>,
}

impl Qrels {
    pub fn add(&mut self, query: &str, doc: &str) {
        self.map
            .entry(query.to_string())
            .or_default()
            .insert(doc.to_string());
    }

    /// Registers a judged query even when nothing is relevant, so zero-
    /// relevance queries can be reported as skipped.
    pub fn touch(&mut self, query: &str) {
        self.map.entry(query.to_string()).or_default();
    }

    pub fn relevant(&self, query: &str) -> Option<&BTreeSet<String>> {
        self.map.get(query)
    }

    pub fn queries(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// A ranked run: per query, doc ids with scores in rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrecRun {
    pub tag: String,
    pub rankings: BTreeMap<String, Vec<(String, f64)>>,
}

impl TrecRun {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            rankings: BTreeMap::new(),
        }
    }
}

/// `<query_id> 0 <doc_id> <relevance>`, whitespace separated. Relevance > 0
/// marks the document relevant; 0 lines still register the query.
pub fn read_qrels<R: Read>(reader: R, label: &str) -> Result<Qrels> {
    let mut qrels = Qrels::default();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(MeviError::ParseError {
                file: label.to_string(),
                line: lineno + 1,
                reason: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let rel: i64 = fields[3].parse().map_err(|_| MeviError::ParseError {
            file: label.to_string(),
            line: lineno + 1,
            reason: format!("bad relevance {:?}", fields[3]),
        })?;
        if rel > 0 {
            qrels.add(fields[0], fields[2]);
        } else {
            qrels.touch(fields[0]);
        }
    }
    Ok(qrels)
}

pub fn write_qrels<W: Write>(mut writer: W, qrels: &Qrels) -> Result<()> {
    for qid in qrels.queries() {
        for doc in qrels.relevant(qid).into_iter().flatten() {
            writeln!(writer, "{qid} 0 {doc} 1")?;
        }
    }
    Ok(())
}

/// `<query_id> Q0 <doc_id> <rank> <score> <tag>` with 1-based ranks and
/// six-decimal scores.
pub fn write_run<W: Write>(mut writer: W, run: &TrecRun) -> Result<()> {
    for (qid, ranking) in &run.rankings {
        for (rank, (doc, score)) in ranking.iter().enumerate() {
            writeln!(
                writer,
                "{qid} Q0 {doc} {} {score:.6} {tag}",
                rank + 1,
                tag = run.tag
            )?;
        }
    }
    Ok(())
}

pub fn read_run<R: Read>(reader: R, label: &str) -> Result<TrecRun> {
    let mut run = TrecRun::new("loaded");
    let mut expected_rank: BTreeMap<String, usize> = BTreeMap::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |reason: String| MeviError::ParseError {
            file: label.to_string(),
            line: lineno + 1,
            reason,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(parse(format!("expected 6 fields, got {}", fields.len())));
        }
        let rank: usize = fields[3]
            .parse()
            .map_err(|_| parse(format!("bad rank {:?}", fields[3])))?;
        let score: f64 = fields[4]
            .parse()
            .map_err(|_| parse(format!("bad score {:?}", fields[4])))?;
        let next = expected_rank.entry(fields[0].to_string()).or_insert(1);
        if rank != *next {
            return Err(parse(format!("rank {rank} out of order (expected {next})")));
        }
        *next += 1;
        run.tag = fields[5].to_string();
        run.rankings
            .entry(fields[0].to_string())
            .or_default()
            .push((fields[2].to_string(), score));
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qrels_round_trip() {
        let text = "q1 0 d1 1\nq1 0 d2 0\nq2 0 d7 2\n";
        let qrels = read_qrels(text.as_bytes(), "t").unwrap();
        assert_eq!(
            qrels.relevant("q1").unwrap().iter().collect::<Vec<_>>(),
            vec!["d1"]
        );
        assert!(qrels.relevant("q2").unwrap().contains("d7"));

        let mut buf = Vec::new();
        write_qrels(&mut buf, &qrels).unwrap();
        let again = read_qrels(&buf[..], "t").unwrap();
        assert_eq!(again.relevant("q2"), qrels.relevant("q2"));
    }

    #[test]
    fn run_round_trip_preserves_order_and_scores() {
        let mut run = TrecRun::new("testtag");
        run.rankings.insert(
            "q1".into(),
            vec![("d3".into(), 0.75), ("d1".into(), 0.5)],
        );
        let mut buf = Vec::new();
        write_run(&mut buf, &run).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "q1 Q0 d3 1 0.750000 testtag\nq1 Q0 d1 2 0.500000 testtag\n");
        let again = read_run(&buf[..], "t").unwrap();
        assert_eq!(again.tag, "testtag");
        assert_eq!(again.rankings["q1"][0].0, "d3");
    }

    #[test]
    fn malformed_lines_report_position() {
        let err = read_qrels("q1 0 d1\n".as_bytes(), "qrels").unwrap_err();
        assert!(matches!(err, MeviError::ParseError { line: 1, .. }));
        let err = read_run("q1 Q0 d1 2 0.5 tag\n".as_bytes(), "run").unwrap_err();
        assert!(matches!(err, MeviError::ParseError { line: 1, .. }));
    }
}
