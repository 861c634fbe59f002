//! CSV and JSON interchange files.
//!
//! Floats are written in the shortest form that parses back to the same
//! value, so every file round-trips exactly.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    validate_dataset, AllocationPlan, BudgetSpec, Dataset, ItemId, ItemRecord, ItemScore,
    ProviderId, ValidationError, PROB_TOLERANCE,
};
use crate::eval::UpliftReport;
use crate::ser::PatternCurve;
use crate::simulate::{RctLog, RctRecord};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}, line {line}: {message}")]
    Format {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: {source}")]
    Invalid {
        path: PathBuf,
        #[source]
        source: ValidationError,
    },
}

impl IoError {
    /// True for malformed or invalid content, false for file-system failures.
    pub fn is_content_error(&self) -> bool {
        !matches!(self, IoError::Io { .. })
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn csv(path: &Path, source: csv::Error) -> Self {
        if source.is_io_error() {
            match source.into_kind() {
                csv::ErrorKind::Io(e) => return IoError::io(path, e),
                _ => unreachable!(),
            }
        }
        IoError::Csv {
            path: path.to_path_buf(),
            source,
        }
    }

    fn json(path: &Path, source: serde_json::Error) -> Self {
        if source.is_io() {
            return IoError::io(path, source.into());
        }
        IoError::Json {
            path: path.to_path_buf(),
            source,
        }
    }

    fn format(path: &Path, line: u64, message: impl Into<String>) -> Self {
        IoError::Format {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| IoError::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, IoError> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>, IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    Ok(csv::Reader::from_reader(file))
}

fn finish<W: Write>(path: &Path, mut w: csv::Writer<W>) -> Result<(), IoError> {
    w.flush().map_err(|e| IoError::io(path, e))
}

/// Reads data rows with a line number for error messages.
fn rows(
    path: &Path,
    reader: &mut csv::Reader<File>,
) -> Result<Vec<(u64, csv::StringRecord)>, IoError> {
    reader
        .records()
        .map(|r| {
            let r = r.map_err(|e| IoError::csv(path, e))?;
            let line = r.position().map_or(0, |p| p.line());
            Ok((line, r))
        })
        .collect()
}

fn check_header(
    path: &Path,
    reader: &mut csv::Reader<File>,
    expected: &[&str],
) -> Result<(), IoError> {
    let header = reader.headers().map_err(|e| IoError::csv(path, e))?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(IoError::format(
            path,
            1,
            format!(
                "expected header {:?}, found {:?}",
                expected,
                header.iter().collect::<Vec<_>>()
            ),
        ));
    }
    Ok(())
}

fn parse<T: FromStr>(path: &Path, line: u64, column: &str, field: &str) -> Result<T, IoError> {
    field.trim().parse().map_err(|_| {
        IoError::format(
            path,
            line,
            format!("column {column}: cannot parse {field:?}"),
        )
    })
}

fn parse_flag(path: &Path, line: u64, column: &str, field: &str) -> Result<bool, IoError> {
    match field.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(IoError::format(
            path,
            line,
            format!("column {column}: expected 0 or 1, found {other:?}"),
        )),
    }
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn float(x: f64) -> String {
    x.to_string()
}

fn opt_float(x: Option<f64>) -> String {
    x.map(float).unwrap_or_default()
}

/// `item_id, provider_id, x0.., true_p0, true_p1`; missing rates are empty.
pub fn write_items(path: &Path, dataset: &Dataset) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    let k = dataset.feature_count();
    let mut header = vec!["item_id".to_string(), "provider_id".to_string()];
    header.extend((0..k).map(|j| format!("x{j}")));
    header.extend(["true_p0".to_string(), "true_p1".to_string()]);
    w.write_record(&header).map_err(|e| IoError::csv(path, e))?;
    for item in dataset.items() {
        let mut row = vec![item.item_id.to_string(), item.provider_id.to_string()];
        row.extend(item.features.iter().map(|&x| float(x)));
        row.push(opt_float(item.true_p0));
        row.push(opt_float(item.true_p1));
        w.write_record(&row).map_err(|e| IoError::csv(path, e))?;
    }
    finish(path, w)
}

pub fn read_items(path: &Path) -> Result<Dataset, IoError> {
    let mut r = csv_reader(path)?;
    let header = r.headers().map_err(|e| IoError::csv(path, e))?.clone();
    let n = header.len();
    let ok = n >= 4
        && &header[0] == "item_id"
        && &header[1] == "provider_id"
        && &header[n - 2] == "true_p0"
        && &header[n - 1] == "true_p1"
        && (2..n - 2).all(|j| header[j] == format!("x{}", j - 2));
    if !ok {
        return Err(IoError::format(
            path,
            1,
            "expected header item_id,provider_id,x0..,true_p0,true_p1",
        ));
    }
    let mut items = Vec::new();
    for (line, row) in rows(path, &mut r)? {
        let opt = |col: usize| -> Result<Option<f64>, IoError> {
            if row[col].trim().is_empty() {
                Ok(None)
            } else {
                parse(path, line, &header[col], &row[col]).map(Some)
            }
        };
        let features = (2..n - 2)
            .map(|j| parse(path, line, &header[j], &row[j]))
            .collect::<Result<Vec<f64>, _>>()?;
        items.push(ItemRecord {
            item_id: ItemId(parse(path, line, "item_id", &row[0])?),
            provider_id: ProviderId(parse(path, line, "provider_id", &row[1])?),
            features,
            true_p0: opt(n - 2)?,
            true_p1: opt(n - 1)?,
        });
    }
    validate_dataset(items).map_err(|source| IoError::Invalid {
        path: path.to_path_buf(),
        source,
    })
}

const RCT_HEADER: [&str; 3] = ["item_id", "assignment", "sold"];

pub fn write_rct(path: &Path, log: &RctLog) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record(RCT_HEADER)
        .map_err(|e| IoError::csv(path, e))?;
    for r in &log.records {
        w.write_record([
            r.item_id.to_string().as_str(),
            flag(r.assignment),
            flag(r.sold),
        ])
        .map_err(|e| IoError::csv(path, e))?;
    }
    finish(path, w)
}

pub fn read_rct(path: &Path) -> Result<RctLog, IoError> {
    let mut r = csv_reader(path)?;
    check_header(path, &mut r, &RCT_HEADER)?;
    let records = rows(path, &mut r)?
        .into_iter()
        .map(|(line, row)| {
            Ok(RctRecord {
                item_id: ItemId(parse(path, line, "item_id", &row[0])?),
                assignment: parse_flag(path, line, "assignment", &row[1])?,
                sold: parse_flag(path, line, "sold", &row[2])?,
            })
        })
        .collect::<Result<_, IoError>>()?;
    Ok(RctLog::new(records))
}

const SCORES_HEADER: [&str; 4] = ["item_id", "f0", "f1", "pi"];

pub fn write_scores(path: &Path, scores: &[ItemScore]) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record(SCORES_HEADER)
        .map_err(|e| IoError::csv(path, e))?;
    for s in scores {
        w.write_record([
            s.item_id().to_string(),
            float(s.f0()),
            float(s.f1()),
            float(s.pi()),
        ])
        .map_err(|e| IoError::csv(path, e))?;
    }
    finish(path, w)
}

/// Reads scores, rejecting rates outside `[0, 1]`, a `pi` column that
/// disagrees with `f1 - f0`, and duplicate ids.
pub fn read_scores(path: &Path) -> Result<Vec<ItemScore>, IoError> {
    let mut r = csv_reader(path)?;
    check_header(path, &mut r, &SCORES_HEADER)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, row) in rows(path, &mut r)? {
        let id = ItemId(parse(path, line, "item_id", &row[0])?);
        let f0: f64 = parse(path, line, "f0", &row[1])?;
        let f1: f64 = parse(path, line, "f1", &row[2])?;
        let pi: f64 = parse(path, line, "pi", &row[3])?;
        let score =
            ItemScore::new(id, f0, f1).map_err(|e| IoError::format(path, line, e.to_string()))?;
        if (score.pi() - pi).abs() > PROB_TOLERANCE {
            return Err(IoError::format(
                path,
                line,
                format!("pi {pi} differs from f1 - f0"),
            ));
        }
        if !seen.insert(id) {
            return Err(IoError::format(
                path,
                line,
                format!("duplicate item id {id}"),
            ));
        }
        out.push(score);
    }
    Ok(out)
}

const PLAN_HEADER: [&str; 2] = ["item_id", "coupon_flag"];

pub fn write_plan_csv(path: &Path, plan: &AllocationPlan) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record(PLAN_HEADER)
        .map_err(|e| IoError::csv(path, e))?;
    for (id, &f) in plan.decisions() {
        w.write_record([id.to_string().as_str(), flag(f)])
            .map_err(|e| IoError::csv(path, e))?;
    }
    finish(path, w)
}

/// The CSV carries flags only; the budget is taken to be the number set.
pub fn read_plan_csv(path: &Path, strategy_name: &str) -> Result<AllocationPlan, IoError> {
    let mut r = csv_reader(path)?;
    check_header(path, &mut r, &PLAN_HEADER)?;
    let mut seen = BTreeSet::new();
    let mut flags = Vec::new();
    for (line, row) in rows(path, &mut r)? {
        let id = ItemId(parse(path, line, "item_id", &row[0])?);
        if !seen.insert(id) {
            return Err(IoError::format(
                path,
                line,
                format!("duplicate item id {id}"),
            ));
        }
        flags.push((id, parse_flag(path, line, "coupon_flag", &row[1])?));
    }
    Ok(AllocationPlan::from_flags(strategy_name, flags))
}

#[derive(Serialize, Deserialize)]
struct PlanDecision {
    item_id: ItemId,
    coupon_flag: u8,
}

#[derive(Serialize, Deserialize)]
struct PlanFile {
    strategy_name: String,
    budget: BudgetSpec,
    objective_value: Option<f64>,
    infeasible: bool,
    decisions: Vec<PlanDecision>,
}

pub fn write_plan_json(path: &Path, plan: &AllocationPlan) -> Result<(), IoError> {
    let file = PlanFile {
        strategy_name: plan.strategy_name.clone(),
        budget: plan.budget,
        objective_value: plan.objective_value,
        infeasible: plan.infeasible,
        decisions: plan
            .decisions()
            .iter()
            .map(|(&item_id, &f)| PlanDecision {
                item_id,
                coupon_flag: f as u8,
            })
            .collect(),
    };
    write_json(path, &file)
}

/// The `infeasible` mark is recomputed from the flags and the stored budget.
pub fn read_plan_json(path: &Path) -> Result<AllocationPlan, IoError> {
    let file: PlanFile = read_json(path)?;
    let mut population = Vec::with_capacity(file.decisions.len());
    let mut selected = Vec::new();
    let mut seen = BTreeSet::new();
    for d in &file.decisions {
        if !seen.insert(d.item_id) {
            return Err(IoError::format(
                path,
                0,
                format!("duplicate item id {}", d.item_id),
            ));
        }
        if d.coupon_flag > 1 {
            return Err(IoError::format(path, 0, "coupon_flag must be 0 or 1"));
        }
        population.push(d.item_id);
        if d.coupon_flag == 1 {
            selected.push(d.item_id);
        }
    }
    let mut plan =
        AllocationPlan::from_selection(file.strategy_name, file.budget, population, &selected);
    plan.objective_value = file.objective_value;
    Ok(plan)
}

pub fn write_reports_csv(path: &Path, reports: &[UpliftReport]) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    if reports.is_empty() {
        // serde only emits the header alongside the first row.
        w.write_record(REPORT_HEADER)
            .map_err(|e| IoError::csv(path, e))?;
    }
    for r in reports {
        w.serialize(r).map_err(|e| IoError::csv(path, e))?;
    }
    finish(path, w)
}

const REPORT_HEADER: [&str; 10] = [
    "strategy_name",
    "n_coupons",
    "uplift_items_sold",
    "uplift_successful_providers",
    "n_treated_providers",
    "ser_lift",
    "n_consistent_treat",
    "n_consistent_control",
    "n_mixed_excluded",
    "scaling",
];

pub fn read_reports_csv(path: &Path) -> Result<Vec<UpliftReport>, IoError> {
    let mut r = csv_reader(path)?;
    check_header(path, &mut r, &REPORT_HEADER)?;
    r.deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| IoError::csv(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| IoError::json(path, e))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| IoError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| IoError::json(path, e))
}

/// One JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, values: &[T]) -> Result<(), IoError> {
    let mut w = create(path)?;
    for v in values {
        serde_json::to_writer(&mut w, v).map_err(|e| IoError::json(path, e))?;
        writeln!(w).map_err(|e| IoError::io(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| IoError::json(path, e))?);
    }
    Ok(out)
}

pub fn write_curves(path: &Path, curves: &[PatternCurve]) -> Result<(), IoError> {
    write_jsonl(path, curves)
}
