use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::LabeledReport;
use crate::error::{Error, Result};

pub fn write_corpus<W: Write>(corpus: &[LabeledReport], mut out: W) -> std::io::Result<()> {
    for report in corpus {
        serde_json::to_writer(&mut out, report)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Reads JSONL; blank lines are skipped, anything else must parse.
pub fn read_corpus<R: Read>(input: R, origin: &Path) -> Result<Vec<LabeledReport>> {
    let mut corpus = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let report: LabeledReport = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        corpus.push(report);
    }
    Ok(corpus)
}

pub fn save_corpus(corpus: &[LabeledReport], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_corpus(corpus, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_corpus(path: &Path) -> Result<Vec<LabeledReport>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(file, path)
}
