//! `participants.csv` / `events.csv` reading and writing.
//!
//! participants: `id, group, pair_id, prior_start, index_time, end_time`
//! followed by any covariate columns. events: `id, time`. Lines starting with
//! `#` are comments. Times are decimal days.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CohortDataset, Covariate, Group, Participant};

const FIXED: [&str; 6] = ["id", "group", "pair_id", "prior_start", "index_time", "end_time"];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: missing required column '{column}'")]
    MissingColumn { path: String, column: String },

    #[error("{path}, line {line}, column '{column}': {message}")]
    Parse { path: String, line: u64, column: String, message: String },
}

/// Declares how a pair of cohort files should be interpreted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSidecar {
    pub matched: bool,
    pub participants: usize,
    pub events: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keys: Option<Vec<String>>,
}

fn reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(source)
}

fn open(path: &Path) -> Result<File, IoError> {
    File::open(path).map_err(|source| IoError::Io { path: path.display().to_string(), source })
}

fn column(headers: &csv::StringRecord, name: &str, path: &str) -> Result<usize, IoError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| IoError::MissingColumn { path: path.to_string(), column: name.to_string() })
}

fn parse_time(text: &str, path: &str, line: u64, column: &str) -> Result<f64, IoError> {
    text.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| IoError::Parse {
            path: path.to_string(),
            line,
            column: column.to_string(),
            message: format!("expected a finite number of days, got '{text}'"),
        })
}

/// Parses participants; `name` labels diagnostics.
pub fn read_participants<R: Read>(source: R, name: &str) -> Result<Vec<Participant>, IoError> {
    let csv_err = |source| IoError::Csv { path: name.to_string(), source };
    let mut rdr = reader(source);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let idx: Vec<usize> = FIXED.iter().map(|c| column(&headers, c, name)).collect::<Result<_, _>>()?;
    let covariates: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !FIXED.contains(h))
        .map(|(i, h)| (i, h.to_string()))
        .collect();

    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let group = field(idx[1]).parse::<Group>().map_err(|message| IoError::Parse {
            path: name.to_string(),
            line,
            column: "group".into(),
            message,
        })?;
        let id = field(idx[0]).to_string();
        if id.is_empty() {
            return Err(IoError::Parse { path: name.into(), line, column: "id".into(), message: "empty id".into() });
        }
        let pair_id = Some(field(idx[2]).to_string()).filter(|s| !s.is_empty());
        let prior_start = parse_time(field(idx[3]), name, line, "prior_start")?;
        let index_time = parse_time(field(idx[4]), name, line, "index_time")?;
        let end_time = parse_time(field(idx[5]), name, line, "end_time")?;
        let covariates = covariates
            .iter()
            .filter(|(i, _)| !field(*i).is_empty())
            .map(|(i, h)| (h.clone(), Covariate::parse(field(*i))))
            .collect();
        out.push(Participant {
            id,
            group,
            pair_id,
            prior_start,
            index_time,
            end_time,
            covariates,
            event_times: Vec::new(),
        });
    }
    Ok(out)
}

/// Parses `(id, time)` event records.
pub fn read_events<R: Read>(source: R, name: &str) -> Result<Vec<(String, f64, u64)>, IoError> {
    let csv_err = |source| IoError::Csv { path: name.to_string(), source };
    let mut rdr = reader(source);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let id_col = column(&headers, "id", name)?;
    let time_col = column(&headers, "time", name)?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record.get(id_col).unwrap_or("").to_string();
        let time = parse_time(record.get(time_col).unwrap_or(""), name, line, "time")?;
        out.push((id, time, line));
    }
    Ok(out)
}

/// Attaches events to participants, sorting each participant's event times.
pub fn attach_events(
    participants: &mut [Participant],
    events: Vec<(String, f64, u64)>,
    name: &str,
) -> Result<(), IoError> {
    let index: HashMap<String, usize> = participants.iter().enumerate().map(|(i, p)| (p.id.clone(), i)).collect();
    for (id, time, line) in events {
        let &i = index.get(&id).ok_or_else(|| IoError::Parse {
            path: name.to_string(),
            line,
            column: "id".into(),
            message: format!("unknown participant '{id}'"),
        })?;
        participants[i].event_times.push(time);
    }
    for p in participants.iter_mut() {
        p.event_times.sort_by(f64::total_cmp);
    }
    Ok(())
}

/// Reads a cohort from the two CSV files.
pub fn read_cohort(participants: &Path, events: &Path, matched: bool) -> Result<CohortDataset, IoError> {
    let mut people = read_participants(open(participants)?, &participants.display().to_string())?;
    let ev_name = events.display().to_string();
    let ev = read_events(open(events)?, &ev_name)?;
    attach_events(&mut people, ev, &ev_name)?;
    Ok(CohortDataset::new(people, matched))
}

fn covariate_columns(dataset: &CohortDataset) -> Vec<String> {
    let names: BTreeSet<&String> = dataset.participants.iter().flat_map(|p| p.covariates.keys()).collect();
    names.into_iter().cloned().collect()
}

/// Writes `participants.csv`; `preamble` lines are emitted as `#` comments.
pub fn write_participants<W: Write>(dataset: &CohortDataset, preamble: &[String], mut sink: W) -> std::io::Result<()> {
    for line in preamble {
        writeln!(sink, "# {line}")?;
    }
    let covs = covariate_columns(dataset);
    let mut w = csv::Writer::from_writer(sink);
    let mut header: Vec<&str> = FIXED.to_vec();
    header.extend(covs.iter().map(String::as_str));
    w.write_record(&header)?;
    for p in &dataset.participants {
        let mut rec = vec![
            p.id.clone(),
            p.group.to_string(),
            p.pair_id.clone().unwrap_or_default(),
            p.prior_start.to_string(),
            p.index_time.to_string(),
            p.end_time.to_string(),
        ];
        rec.extend(covs.iter().map(|c| p.covariates.get(c).map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()
}

/// Writes `events.csv` in participant order.
pub fn write_events<W: Write>(dataset: &CohortDataset, preamble: &[String], mut sink: W) -> std::io::Result<()> {
    for line in preamble {
        writeln!(sink, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["id", "time"])?;
    for p in &dataset.participants {
        for t in &p.event_times {
            w.write_record([p.id.as_str(), &t.to_string()])?;
        }
    }
    w.flush()
}

/// Writes both files plus the `cohort.json` sidecar into `dir`.
pub fn write_cohort(
    dataset: &CohortDataset,
    dir: &Path,
    preamble: &[String],
    keys: Option<Vec<String>>,
) -> Result<(PathBuf, PathBuf, PathBuf), IoError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| IoError::Io { path, source }
    };
    let p_path = dir.join("participants.csv");
    let e_path = dir.join("events.csv");
    let s_path = dir.join("cohort.json");
    write_participants(dataset, preamble, File::create(&p_path).map_err(io(&p_path))?).map_err(io(&p_path))?;
    write_events(dataset, preamble, File::create(&e_path).map_err(io(&e_path))?).map_err(io(&e_path))?;
    let sidecar = CohortSidecar {
        matched: dataset.matched,
        participants: dataset.len(),
        events: dataset.n_events(),
        keys,
    };
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(&s_path, text + "\n").map_err(io(&s_path))?;
    Ok((p_path, e_path, s_path))
}

/// Reads a `cohort.json` sidecar if present.
pub fn read_sidecar(path: &Path) -> Result<Option<CohortSidecar>, IoError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Io { path: path.display().to_string(), source })?;
    serde_json::from_str(&text).map(Some).map_err(|e| IoError::Parse {
        path: path.display().to_string(),
        line: e.line() as u64,
        column: format!("char {}", e.column()),
        message: e.to_string(),
    })
}

/// Per-key counts of a covariate, handy for reports.
pub fn covariate_counts(dataset: &CohortDataset, key: &str) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for p in &dataset.participants {
        if let Some(v) = p.covariates.get(key) {
            *out.entry(v.to_string()).or_insert(0) += 1;
        }
    }
    out
}
