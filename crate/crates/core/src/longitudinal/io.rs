//! Long-format CSV: `subject_id,kind,time,v1[,v2,...]`.
//!
//! `kind` is `response` or `covariate`. Response rows fill `v1` only and leave
//! the remaining value columns empty; covariate rows fill all `p` of them.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{AsyncDataset, SubjectSeries};
use crate::error::{Error, Result};

#[derive(Default)]
struct Pending {
    id: String,
    t: Vec<f64>,
    y: Vec<f64>,
    s: Vec<f64>,
    x: Vec<Vec<f64>>,
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<AsyncDataset> {
    read_csv(BufReader::new(File::open(path)?))
}

pub fn read_csv(reader: impl Read) -> Result<AsyncDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let p = parse_header(&header)?;

    let mut order: Vec<Pending> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|pos| pos.line()).unwrap_or(0);
        let fail = |message: String| Error::Parse { line, message };
        if record.len() < 4 || record.len() > 3 + p {
            return Err(fail(format!(
                "expected between 4 and {} fields, found {}",
                3 + p,
                record.len()
            )));
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(fail("empty subject_id".into()));
        }
        let time = parse_number(&record[2]).map_err(|m| fail(format!("time: {m}")))?;
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            order.push(Pending {
                id: id.clone(),
                ..Pending::default()
            });
            order.len() - 1
        });
        let pending = &mut order[slot];
        match &record[1] {
            "response" => {
                if (4..record.len()).any(|i| !record[i].is_empty()) {
                    return Err(fail("response rows carry a single value in v1".into()));
                }
                let y = parse_number(&record[3]).map_err(|m| fail(format!("v1: {m}")))?;
                if pending.t.last().is_some_and(|&prev| time <= prev) {
                    return Err(fail(format!(
                        "response times for subject {id} must be strictly increasing"
                    )));
                }
                pending.t.push(time);
                pending.y.push(y);
            }
            "covariate" => {
                if record.len() != 3 + p {
                    return Err(fail(format!("covariate rows need {p} values")));
                }
                let values = (3..3 + p)
                    .map(|i| parse_number(&record[i]).map_err(|m| fail(format!("v{}: {m}", i - 2))))
                    .collect::<Result<Vec<f64>>>()?;
                if pending.s.last().is_some_and(|&prev| time <= prev) {
                    return Err(fail(format!(
                        "covariate times for subject {id} must be strictly increasing"
                    )));
                }
                pending.s.push(time);
                pending.x.push(values);
            }
            other => return Err(fail(format!("unknown kind {other:?}"))),
        }
    }

    let subjects = order
        .into_iter()
        .map(|p| SubjectSeries::new(p.id, p.t, p.y, p.s, p.x))
        .collect::<Result<Vec<_>>>()?;
    AsyncDataset::new(subjects)
}

fn parse_header(header: &csv::StringRecord) -> Result<usize> {
    let fail = |message: String| Error::Parse { line: 1, message };
    let fields: Vec<&str> = header.iter().collect();
    if fields.len() < 4 || fields[..3] != ["subject_id", "kind", "time"] {
        return Err(fail(format!(
            "header must start with subject_id,kind,time,v1; found {}",
            fields.join(",")
        )));
    }
    for (i, name) in fields[3..].iter().enumerate() {
        if *name != format!("v{}", i + 1) {
            return Err(fail(format!("unknown column {name:?}")));
        }
    }
    Ok(fields.len() - 3)
}

fn parse_number(field: &str) -> std::result::Result<f64, String> {
    let v: f64 = field
        .parse()
        .map_err(|_| format!("cannot parse {field:?} as a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite value {field:?}"))
    }
}

pub fn save_csv(dataset: &AsyncDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    write_csv(dataset, &mut file)?;
    file.flush()?;
    Ok(())
}

pub fn write_csv(dataset: &AsyncDataset, writer: impl Write) -> Result<()> {
    let p = dataset.covariate_dim();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["subject_id".to_string(), "kind".into(), "time".into()];
    header.extend((1..=p).map(|i| format!("v{i}")));
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(3 + p);
    for s in dataset.subjects() {
        for (t, y) in s.response_times().iter().zip(s.response_values()) {
            row.clear();
            row.extend([s.id().to_string(), "response".into(), t.to_string(), y.to_string()]);
            row.extend(std::iter::repeat_n(String::new(), p - 1));
            w.write_record(&row)?;
        }
        for (t, x) in s.covariate_times().iter().zip(s.covariate_values()) {
            row.clear();
            row.extend([s.id().to_string(), "covariate".into(), t.to_string()]);
            row.extend(x.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
