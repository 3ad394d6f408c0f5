//! CSV dataset files and dataset directories.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::record::{Domain, Record, RecordLayout};
use super::schema::FeatureSchema;
use super::FeatureError;

pub const SCHEMA_FILE: &str = "schema.txt";

pub fn header(schema: &FeatureSchema) -> String {
    let mut h = String::from("domain,period,user_id,item_id");
    for name in schema.extra_fields() {
        h.push(',');
        h.push_str(&name);
    }
    h.push_str(",seq,label");
    h
}

fn write_record(out: &mut String, r: &Record) {
    let _ = write!(out, "{},{},{},{}", r.domain.code(), r.period, r.user_id, r.item_id);
    for c in &r.cats {
        let _ = write!(out, ",{c}");
    }
    out.push(',');
    for (i, j) in r.seq.iter().enumerate() {
        if i > 0 {
            out.push('|');
        }
        let _ = write!(out, "{j}");
    }
    let _ = writeln!(out, ",{}", r.label);
}

pub fn write_dataset(records: &[Record], schema: &FeatureSchema, path: &Path) -> Result<(), FeatureError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{}", header(schema))?;
    let mut line = String::with_capacity(256);
    for r in records {
        r.validate(schema)?;
        line.clear();
        write_record(&mut line, r);
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn parse_line(line: &str, line_no: usize, schema: &FeatureSchema, n_extra: usize) -> Result<Record, FeatureError> {
    let err = |message: String| FeatureError::Parse { line: line_no, message };
    let cols: Vec<&str> = line.split(',').collect();
    let expected = 4 + n_extra + 2;
    if cols.len() != expected {
        return Err(err(format!("expected {expected} columns, found {}", cols.len())));
    }
    let num = |s: &str, what: &str| -> Result<u32, FeatureError> {
        s.parse::<u32>().map_err(|_| err(format!("invalid {what} `{s}`")))
    };
    let domain = Domain::from_code(cols[0]).ok_or_else(|| err(format!("invalid domain `{}`", cols[0])))?;
    let cats = cols[4..4 + n_extra]
        .iter()
        .map(|c| num(c, "categorical id"))
        .collect::<Result<Vec<_>, _>>()?;
    let seq_col = cols[4 + n_extra];
    let seq = if seq_col.is_empty() {
        Vec::new()
    } else {
        seq_col
            .split('|')
            .map(|s| num(s, "sequence id"))
            .collect::<Result<Vec<_>, _>>()?
    };
    let label = match cols[5 + n_extra] {
        "0" => 0,
        "1" => 1,
        other => return Err(err(format!("invalid label `{other}`"))),
    };
    let record = Record {
        domain,
        period: num(cols[1], "period")?,
        user_id: num(cols[2], "user_id")?,
        item_id: num(cols[3], "item_id")?,
        cats,
        seq,
        label,
    };
    record.validate(schema).map_err(|e| err(e.to_string()))?;
    Ok(record)
}

pub fn read_dataset(path: &Path, schema: &FeatureSchema) -> Result<Vec<Record>, FeatureError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let n_extra = RecordLayout::from_schema(schema).extra.len();
    let want_header = header(schema);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line != want_header {
                return Err(FeatureError::Parse {
                    line: 1,
                    message: format!("header `{line}` does not match schema `{want_header}`"),
                });
            }
            continue;
        }
        records.push(parse_line(&line, i + 1, schema, n_extra)?);
    }
    if records.is_empty() && std::fs::metadata(path)?.len() == 0 {
        return Err(FeatureError::Parse {
            line: 1,
            message: "missing header".into(),
        });
    }
    Ok(records)
}

/// Both domains' records for one period, each in generation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PeriodData {
    pub source: Vec<Record>,
    pub target: Vec<Record>,
}

pub fn period_file(dir: &Path, period: usize) -> PathBuf {
    dir.join(format!("period_{period:03}.csv"))
}

/// Writes `schema.txt` plus one CSV per period (source rows first, then target rows).
pub fn write_dataset_dir(dir: &Path, schema: &FeatureSchema, periods: &[PeriodData]) -> Result<(), FeatureError> {
    std::fs::create_dir_all(dir)?;
    schema.write_file(&dir.join(SCHEMA_FILE))?;
    for (p, data) in periods.iter().enumerate() {
        let all: Vec<Record> = data.source.iter().chain(&data.target).cloned().collect();
        write_dataset(&all, schema, &period_file(dir, p))?;
    }
    Ok(())
}

pub fn read_dataset_dir(dir: &Path) -> Result<(FeatureSchema, Vec<PeriodData>), FeatureError> {
    let schema = FeatureSchema::read_file(&dir.join(SCHEMA_FILE))?;
    let mut periods = Vec::with_capacity(schema.num_periods);
    for p in 0..schema.num_periods {
        let records = read_dataset(&period_file(dir, p), &schema)?;
        let mut data = PeriodData::default();
        for r in records {
            if r.period as usize != p {
                return Err(FeatureError::Invalid(format!("record of period {} in file for period {p}", r.period)));
            }
            match r.domain {
                Domain::Source => data.source.push(r),
                Domain::Target => data.target.push(r),
            }
        }
        periods.push(data);
    }
    Ok((schema, periods))
}
