//! Reading and writing datasets as long CSV, wide CSV and JSON lines.
//!
//! Long CSV files start with a directive block:
//!
//! ```text
//! #includes_undetected=true
//! #tau,A,1,0,1
//! #tau,A,2,1,2
//! class_id,individual_id,interval_index,delta,z1,from_class,to_class
//! A,7,1,1,0.5,B,A
//! A,7,2,0,0.5,B,A
//! ```
//!
//! `#tau` rows give `class,k,lower,upper` for each interval (one-based `k`);
//! they may instead come from a sidecar CSV with header
//! `class_id,k,tau_lower,tau_upper`. Covariate columns `z1..zd` hold the value
//! in force on the row's interval, and the transition columns are optional.
//! Every individual needs exactly one row per interval of its class.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClassId, ClassTransition, CovariatePath, Dataset, DetectionRecord, IntervalPartition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    /// Wide CSV, one row per individual with columns `d1..dK`.
    WideCsv,
    Jsonl,
}

impl Format {
    /// Guesses the format from the file extension; `.jsonl` and `.json` are
    /// JSON lines, anything else long CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "json") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

pub fn load_dataset(path: &Path, format: Format, sidecar: Option<&Path>) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let side = sidecar.map(fs::read_to_string).transpose()?;
    match format {
        Format::Csv => read_csv_str(&text, side.as_deref()),
        Format::WideCsv => read_wide_csv_str(&text, side.as_deref()),
        Format::Jsonl => read_jsonl_str(&text),
    }
}

pub fn save_dataset(data: &Dataset, path: &Path, format: Format) -> Result<()> {
    let text = match format {
        Format::Csv => write_csv_string(data)?,
        Format::WideCsv => write_wide_csv_string(data)?,
        Format::Jsonl => write_jsonl_string(data)?,
    };
    fs::write(path, text)?;
    Ok(())
}

fn parse_err(line: u64, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

fn csv_err(e: csv::Error, offset: u64) -> Error {
    let line = e.position().map_or(0, |p| p.line()) + offset;
    match e.kind() {
        csv::ErrorKind::Io(io) => Error::Io(io.to_string()),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            parse_err(line, *len as usize, format!("expected {expected_len} fields, found {len}"))
        }
        _ => parse_err(line, 0, e.to_string()),
    }
}

/// Splits the leading `#` directive lines off `text`.
struct Header {
    includes_undetected: Option<bool>,
    tau_rows: Vec<(u64, String)>,
    body_offset: u64,
}

fn split_header(text: &str) -> Result<(Header, &str)> {
    let mut header = Header {
        includes_undetected: None,
        tau_rows: Vec::new(),
        body_offset: 0,
    };
    let mut rest = text;
    let mut line_no = 0u64;
    while rest.starts_with('#') {
        line_no += 1;
        let (line, tail) = rest.split_once('\n').unwrap_or((rest, ""));
        let line = line.trim_end_matches('\r');
        if let Some(v) = line.strip_prefix("#includes_undetected=") {
            header.includes_undetected = Some(match v.trim() {
                "true" => true,
                "false" => false,
                other => {
                    return Err(parse_err(line_no, 22, format!("expected true or false, found {other:?}")));
                }
            });
        } else if let Some(v) = line.strip_prefix("#tau,") {
            header.tau_rows.push((line_no, v.to_string()));
        } else if let Some(v) = line.strip_prefix("#covariate_dim=") {
            // informational: the dimension is also implied by the z columns
            v.trim()
                .parse::<usize>()
                .map_err(|_| parse_err(line_no, 16, "covariate_dim must be a nonnegative integer"))?;
        } else if !line.starts_with("##") {
            return Err(Error::SchemaMismatch(format!("unknown directive {line:?}")));
        }
        rest = tail;
    }
    header.body_offset = line_no;
    Ok((header, rest))
}

fn parse_f64(s: &str, line: u64, column: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| parse_err(line, column, format!("expected a finite number, found {s:?}")))
}

fn parse_usize(s: &str, line: u64, column: usize) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| parse_err(line, column, format!("expected a nonnegative integer, found {s:?}")))
}

fn parse_delta(s: &str, line: u64, column: usize) -> Result<bool> {
    match s.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(parse_err(line, column, format!("delta must be 0 or 1, found {other:?}"))),
    }
}

/// Collects `(line, [class, k, lower, upper])` rows into partitions.
fn build_partitions(rows: Vec<(u64, Vec<String>)>) -> Result<Vec<IntervalPartition>> {
    let mut by_class: BTreeMap<String, BTreeMap<usize, (u64, f64, f64)>> = BTreeMap::new();
    for (line, f) in rows {
        if f.len() != 4 {
            return Err(parse_err(line, f.len(), "partition rows need class, k, lower, upper"));
        }
        let k = parse_usize(&f[1], line, 2)?;
        let lo = parse_f64(&f[2], line, 3)?;
        let hi = parse_f64(&f[3], line, 4)?;
        if k == 0 || by_class.entry(f[0].clone()).or_default().insert(k, (line, lo, hi)).is_some() {
            return Err(Error::SchemaMismatch(format!("class {} lists interval {k} twice or as zero", f[0])));
        }
    }
    if by_class.is_empty() {
        return Err(Error::SchemaMismatch("no interval end points given".into()));
    }
    by_class
        .into_iter()
        .map(|(class, ivs)| {
            let mut ends = Vec::with_capacity(ivs.len() + 1);
            for (i, (k, (_, lo, hi))) in ivs.iter().enumerate() {
                if *k != i + 1 {
                    return Err(Error::SchemaMismatch(format!("class {class} is missing interval {}", i + 1)));
                }
                match ends.last() {
                    None => ends.push(*lo),
                    Some(prev) if prev == lo => {}
                    Some(_) => {
                        return Err(Error::SchemaMismatch(format!(
                            "class {class}: interval {k} does not start where interval {} ends",
                            k - 1
                        )))
                    }
                }
                ends.push(*hi);
            }
            IntervalPartition::new(class, ends)
        })
        .collect()
}

fn partitions_from(header: &Header, sidecar: Option<&str>) -> Result<Vec<IntervalPartition>> {
    match (header.tau_rows.is_empty(), sidecar) {
        (false, None) => {
            let rows = header
                .tau_rows
                .iter()
                .map(|(line, s)| {
                    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(s.as_bytes());
                    let rec = rdr
                        .records()
                        .next()
                        .ok_or_else(|| parse_err(*line, 1, "empty partition row"))?
                        .map_err(|e| csv_err(e, *line - 1))?;
                    Ok((*line, rec.iter().map(str::to_string).collect()))
                })
                .collect::<Result<Vec<_>>>()?;
            build_partitions(rows)
        }
        (true, Some(text)) => {
            let mut rdr = csv::Reader::from_reader(text.as_bytes());
            let head = rdr.headers().map_err(|e| csv_err(e, 0))?.clone();
            if head.iter().collect::<Vec<_>>() != ["class_id", "k", "tau_lower", "tau_upper"] {
                return Err(Error::SchemaMismatch(
                    "partition file header must be class_id,k,tau_lower,tau_upper".into(),
                ));
            }
            let rows = rdr
                .records()
                .map(|r| {
                    let r = r.map_err(|e| csv_err(e, 0))?;
                    let line = r.position().map_or(0, |p| p.line());
                    Ok((line, r.iter().map(str::to_string).collect()))
                })
                .collect::<Result<Vec<_>>>()?;
            build_partitions(rows)
        }
        (false, Some(_)) => Err(Error::SchemaMismatch(
            "interval end points given both in the header and in a partition file".into(),
        )),
        (true, None) => Err(Error::SchemaMismatch("no interval end points: add #tau rows or a partition file".into())),
    }
}

struct Pending {
    class: ClassId,
    cells: Vec<Option<(bool, Vec<f64>)>>,
    transition: Option<Option<ClassTransition>>,
}

/// Parses a long-format CSV dataset; `sidecar` holds the partition file when
/// the end points are not in the header.
pub fn read_csv_str(text: &str, sidecar: Option<&str>) -> Result<Dataset> {
    let (header, body) = split_header(text)?;
    let includes_undetected = header
        .includes_undetected
        .ok_or_else(|| Error::SchemaMismatch("missing #includes_undetected directive".into()))?;
    let partitions = partitions_from(&header, sidecar)?;
    let by_class: BTreeMap<&ClassId, &IntervalPartition> = partitions.iter().map(|p| (p.class_id(), p)).collect();
    let offset = header.body_offset;

    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let cols: Vec<String> = rdr.headers().map_err(|e| csv_err(e, offset))?.iter().map(str::to_string).collect();
    if cols.len() < 4 || cols[..4] != ["class_id", "individual_id", "interval_index", "delta"] {
        return Err(Error::SchemaMismatch(
            "columns must start with class_id,individual_id,interval_index,delta".into(),
        ));
    }
    let mut d = 0;
    while cols.get(4 + d).is_some_and(|c| *c == format!("z{}", d + 1)) {
        d += 1;
    }
    let has_transition = match &cols[4 + d..] {
        [] => false,
        [a, b] if a == "from_class" && b == "to_class" => true,
        other => return Err(Error::SchemaMismatch(format!("unexpected columns {other:?}"))),
    };

    let mut order: Vec<String> = Vec::new();
    let mut pending: HashMap<String, Pending> = HashMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_err(e, offset))?;
        let line = row.position().map_or(0, |p| p.line()) + offset;
        let class = ClassId::new(&row[0]);
        let part = by_class.get(&class).ok_or_else(|| Error::UnknownClass(class.to_string()))?;
        let k = part.k();
        let idx = parse_usize(&row[2], line, 3)?;
        if idx == 0 || idx > k {
            return Err(Error::SchemaMismatch(format!(
                "line {line}: interval_index {idx} outside 1..={k} for class {class}"
            )));
        }
        let delta = parse_delta(&row[3], line, 4)?;
        let z = (0..d).map(|j| parse_f64(&row[4 + j], line, 5 + j)).collect::<Result<Vec<_>>>()?;
        let transition = if has_transition {
            let (from, to) = (&row[4 + d], &row[5 + d]);
            match (from.is_empty(), to.is_empty()) {
                (true, true) => None,
                (false, false) => Some(ClassTransition {
                    from: ClassId::new(from),
                    to: ClassId::new(to),
                }),
                _ => return Err(parse_err(line, 5 + d, "from_class and to_class must both be set or both empty")),
            }
        } else {
            None
        };

        let id = row[1].to_string();
        let entry = pending.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Pending {
                class: class.clone(),
                cells: vec![None; k],
                transition: None,
            }
        });
        if entry.class != class {
            return Err(Error::SchemaMismatch(format!(
                "line {line}: individual {id} appears in classes {} and {class}",
                entry.class
            )));
        }
        if entry.cells[idx - 1].is_some() {
            return Err(Error::DuplicateCell {
                individual: id,
                interval: idx,
            });
        }
        entry.cells[idx - 1] = Some((delta, z));
        match &entry.transition {
            None => entry.transition = Some(transition),
            Some(t) if *t == transition => {}
            Some(_) => {
                return Err(Error::SchemaMismatch(format!(
                    "line {line}: individual {id} has conflicting transition labels"
                )))
            }
        }
    }

    let mut records = Vec::with_capacity(order.len());
    for id in order {
        let p = pending.remove(&id).expect("every ordered id is pending");
        let part = by_class[&p.class];
        let mut deltas = Vec::with_capacity(part.k());
        let mut levels = Vec::with_capacity(part.k());
        for (k, cell) in p.cells.into_iter().enumerate() {
            let (delta, z) = cell.ok_or_else(|| {
                Error::SchemaMismatch(format!("individual {id} has no row for interval {}", k + 1))
            })?;
            deltas.push(delta);
            levels.push(z);
        }
        let mut rec = DetectionRecord::new(id, p.class, deltas);
        if d > 0 {
            rec = rec.with_covariates(CovariatePath::from_interval_levels(part.endpoints(), levels)?);
        }
        rec.transition = p.transition.flatten();
        records.push(rec);
    }
    Dataset::new(partitions, records, includes_undetected)
}

fn write_header(out: &mut String, data: &Dataset) -> Result<()> {
    out.push_str(&format!("#includes_undetected={}\n", data.includes_undetected()));
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for p in data.partitions().values() {
        for k in 0..p.k() {
            let (lo, hi) = p.interval(k);
            w.write_record([p.class_id().as_str(), &(k + 1).to_string(), &lo.to_string(), &hi.to_string()])
                .map_err(|e| Error::Io(e.to_string()))?;
        }
    }
    let block = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.to_string()))?).expect("csv output is utf-8");
    for line in block.lines() {
        out.push_str("#tau,");
        out.push_str(line);
        out.push('\n');
    }
    Ok(())
}

/// Canonical long-format CSV. Covariates are written as the value in force
/// on each interval, which is all the estimators read.
pub fn write_csv_string(data: &Dataset) -> Result<String> {
    let mut out = String::new();
    write_header(&mut out, data)?;
    let d = data.covariate_dim().unwrap_or(0);
    let has_transition = data.records().iter().any(|r| r.transition.is_some());
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let mut head = vec!["class_id".to_string(), "individual_id".into(), "interval_index".into(), "delta".into()];
    head.extend((1..=d).map(|j| format!("z{j}")));
    if has_transition {
        head.extend(["from_class".into(), "to_class".into()]);
    }
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(&head).map_err(io)?;
    for r in data.records() {
        let part = data.partition(&r.class_id)?;
        for (k, &delta) in r.deltas.iter().enumerate() {
            let mut row = vec![
                r.class_id.to_string(),
                r.individual_id.clone(),
                (k + 1).to_string(),
                (delta as u8).to_string(),
            ];
            if let Some(path) = &r.covariates {
                row.extend(path.value_at(part.endpoints()[k + 1]).iter().map(f64::to_string));
            }
            if has_transition {
                match &r.transition {
                    Some(t) => row.extend([t.from.to_string(), t.to.to_string()]),
                    None => row.extend([String::new(), String::new()]),
                }
            }
            w.write_record(&row).map_err(io)?;
        }
    }
    out.push_str(std::str::from_utf8(&w.into_inner().map_err(|e| Error::Io(e.to_string()))?).expect("csv output is utf-8"));
    Ok(out)
}

/// Parses a wide CSV: the same directive block as the long format, then
/// columns `class_id,individual_id,d1..dK` with one row per individual.
pub fn read_wide_csv_str(text: &str, sidecar: Option<&str>) -> Result<Dataset> {
    let (header, body) = split_header(text)?;
    let includes_undetected = header
        .includes_undetected
        .ok_or_else(|| Error::SchemaMismatch("missing #includes_undetected directive".into()))?;
    let partitions = partitions_from(&header, sidecar)?;
    let by_class: BTreeMap<&ClassId, &IntervalPartition> = partitions.iter().map(|p| (p.class_id(), p)).collect();
    let offset = header.body_offset;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(body.as_bytes());
    let cols: Vec<String> = rdr.headers().map_err(|e| csv_err(e, offset))?.iter().map(str::to_string).collect();
    let ok = cols.len() >= 3
        && cols[0] == "class_id"
        && cols[1] == "individual_id"
        && cols[2..].iter().enumerate().all(|(i, c)| *c == format!("d{}", i + 1));
    if !ok {
        return Err(Error::SchemaMismatch("wide columns must be class_id,individual_id,d1..dK".into()));
    }
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_err(e, offset))?;
        let line = row.position().map_or(0, |p| p.line()) + offset;
        let class = ClassId::new(&row[0]);
        let part = by_class.get(&class).ok_or_else(|| Error::UnknownClass(class.to_string()))?;
        let fields: Vec<&str> = row.iter().skip(2).collect();
        // trailing columns beyond the class's K must be empty
        if fields.len() < part.k() || fields[part.k()..].iter().any(|f| !f.is_empty()) {
            return Err(Error::SchemaMismatch(format!(
                "line {line}: class {class} needs exactly {} detection columns",
                part.k()
            )));
        }
        let deltas = fields[..part.k()]
            .iter()
            .enumerate()
            .map(|(j, f)| parse_delta(f, line, 3 + j))
            .collect::<Result<Vec<_>>>()?;
        records.push(DetectionRecord::new(&row[1], class, deltas));
    }
    Dataset::new(partitions, records, includes_undetected)
}

pub fn write_wide_csv_string(data: &Dataset) -> Result<String> {
    let mut out = String::new();
    write_header(&mut out, data)?;
    let k = data.partitions().values().map(IntervalPartition::k).max().unwrap_or(0);
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let mut head = vec!["class_id".to_string(), "individual_id".into()];
    head.extend((1..=k).map(|j| format!("d{j}")));
    w.write_record(&head).map_err(io)?;
    for r in data.records() {
        let mut row = vec![r.class_id.to_string(), r.individual_id.clone()];
        row.extend(r.deltas.iter().map(|&d| (d as u8).to_string()));
        row.resize(k + 2, String::new());
        w.write_record(&row).map_err(io)?;
    }
    out.push_str(std::str::from_utf8(&w.into_inner().map_err(|e| Error::Io(e.to_string()))?).expect("csv output is utf-8"));
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct JsonPartition {
    class_id: ClassId,
    endpoints: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct JsonMeta {
    includes_undetected: bool,
    partitions: Vec<JsonPartition>,
}

#[derive(Serialize, Deserialize)]
struct JsonHeader {
    meta: JsonMeta,
}

#[derive(Serialize, Deserialize)]
struct JsonPath {
    breakpoints: Vec<f64>,
    levels: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    individual_id: String,
    class_id: ClassId,
    deltas: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    covariates: Option<JsonPath>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    transition: Option<ClassTransition>,
}

fn json_err(e: serde_json::Error, line: u64) -> Error {
    parse_err(line, e.column(), e.to_string())
}

/// Parses JSON lines: a `{"meta": …}` line, then one record per line.
pub fn read_jsonl_str(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (i, first) = lines.next().ok_or_else(|| Error::SchemaMismatch("empty file".into()))?;
    let header: JsonHeader = serde_json::from_str(first).map_err(|e| json_err(e, i as u64 + 1))?;
    let partitions = header
        .meta
        .partitions
        .into_iter()
        .map(|p| IntervalPartition::new(p.class_id, p.endpoints))
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::new();
    for (i, line) in lines {
        let line_no = i as u64 + 1;
        let r: JsonRecord = serde_json::from_str(line).map_err(|e| json_err(e, line_no))?;
        let deltas = r
            .deltas
            .iter()
            .map(|&d| match d {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(parse_err(line_no, 0, format!("delta must be 0 or 1, found {d}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rec = DetectionRecord::new(r.individual_id, r.class_id, deltas);
        if let Some(p) = r.covariates {
            rec = rec.with_covariates(CovariatePath::new(p.breakpoints, p.levels)?);
        }
        rec.transition = r.transition;
        records.push(rec);
    }
    Dataset::new(partitions, records, header.meta.includes_undetected)
}

pub fn write_jsonl_string(data: &Dataset) -> Result<String> {
    let header = JsonHeader {
        meta: JsonMeta {
            includes_undetected: data.includes_undetected(),
            partitions: data
                .partitions()
                .values()
                .map(|p| JsonPartition {
                    class_id: p.class_id().clone(),
                    endpoints: p.endpoints().to_vec(),
                })
                .collect(),
        },
    };
    let ser = |e: serde_json::Error| Error::Io(e.to_string());
    let mut out = serde_json::to_string(&header).map_err(ser)?;
    out.push('\n');
    for r in data.records() {
        let rec = JsonRecord {
            individual_id: r.individual_id.clone(),
            class_id: r.class_id.clone(),
            deltas: r.deltas.iter().map(|&d| d as u8).collect(),
            covariates: r.covariates.as_ref().map(|p| JsonPath {
                breakpoints: p.breakpoints().to_vec(),
                levels: p.levels().to_vec(),
            }),
            transition: r.transition.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).map_err(ser)?);
        out.push('\n');
    }
    Ok(out)
}
