//! CSV ingestion.
//!
//! One header row of variable names, then one row per time point. A first
//! column named `time`, `date`, `timestamp`, `t` or `index` is kept as the
//! time label. When every data header has the form `name@lag` the file is
//! read as pre-lagged panel data instead (one row per realization, lags
//! `0..=k` for every variable).

use std::collections::BTreeMap;
use std::path::Path;

use kcc_core::embedding::{Block, LaggedPanel, TimeSeriesTable};
use kcc_core::{DesignSource, Matrix};

use crate::error::CliError;

const TIME_HEADERS: [&str; 5] = ["time", "date", "timestamp", "t", "index"];

/// Ingested data: ordinary time series or pre-lagged panel rows.
#[derive(Debug, Clone)]
pub enum Dataset {
    Series(TimeSeriesTable),
    Panel(LaggedPanel),
}

impl Dataset {
    pub fn source(&self) -> &dyn DesignSource {
        match self {
            Dataset::Series(t) => t,
            Dataset::Panel(p) => p,
        }
    }

    pub fn standardize(&self) -> Result<Self, CliError> {
        Ok(match self {
            Dataset::Series(t) => Dataset::Series(t.standardize()?),
            Dataset::Panel(p) => Dataset::Panel(p.standardize()?),
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Dataset::Series(_) => "series",
            Dataset::Panel(_) => "panel",
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            Dataset::Series(t) => t.len(),
            Dataset::Panel(p) => p.rows(),
        }
    }

    pub fn blocks(&self) -> Vec<Block> {
        match self {
            Dataset::Series(t) => t.blocks().to_vec(),
            Dataset::Panel(p) => p.block_specs().to_vec(),
        }
    }

    /// Largest usable lag for panel data.
    pub fn max_lag(&self) -> Option<usize> {
        match self {
            Dataset::Series(_) => None,
            Dataset::Panel(p) => Some(p.max_lag()),
        }
    }
}

/// Parse `"A=a1,a2;B=b*"`. A trailing `*` matches any variable with that
/// prefix.
pub fn parse_block_spec(spec: &str, variables: &[String]) -> Result<Vec<Block>, CliError> {
    let mut blocks = Vec::new();
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, members) = part
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("block definition `{part}` lacks `=`")))?;
        let name = name.trim();
        if name.is_empty() {
            return Err(CliError::Config(format!(
                "block definition `{part}` has no name"
            )));
        }
        let mut vars = Vec::new();
        for m in members.split(',').map(str::trim).filter(|m| !m.is_empty()) {
            if let Some(prefix) = m.strip_suffix('*') {
                let matched: Vec<_> = variables
                    .iter()
                    .filter(|v| v.starts_with(prefix))
                    .cloned()
                    .collect();
                if matched.is_empty() {
                    return Err(CliError::UnknownVariable(m.to_string()));
                }
                vars.extend(matched);
            } else if variables.iter().any(|v| v == m) {
                vars.push(m.to_string());
            } else {
                return Err(CliError::UnknownVariable(m.to_string()));
            }
        }
        blocks.push(Block {
            name: name.to_string(),
            variables: vars,
        });
    }
    if blocks.is_empty() {
        return Err(CliError::Config("empty block specification".into()));
    }
    Ok(blocks)
}

/// One block per variable.
fn singleton_blocks(variables: &[String]) -> Vec<Block> {
    variables
        .iter()
        .map(|v| Block {
            name: v.clone(),
            variables: vec![v.clone()],
        })
        .collect()
}

struct RawTable {
    headers: Vec<String>,
    time: Option<Vec<String>>,
    /// Row-major numeric cells.
    cells: Vec<f64>,
    rows: usize,
}

fn read_raw(path: &Path) -> Result<RawTable, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_error(e, 1))?,
        None => {
            return Err(CliError::Parse {
                line: 1,
                col: 1,
                message: "empty file".into(),
            })
        }
    };
    let mut headers: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();
    let has_time = headers
        .first()
        .is_some_and(|h| TIME_HEADERS.contains(&h.to_ascii_lowercase().as_str()));
    if has_time {
        headers.remove(0);
    }
    if headers.is_empty() {
        return Err(CliError::Parse {
            line: 1,
            col: 1,
            message: "no variable columns".into(),
        });
    }
    if let Some(i) = headers.iter().position(|h| h.is_empty()) {
        return Err(CliError::Parse {
            line: 1,
            col: i + 1 + has_time as usize,
            message: "empty header".into(),
        });
    }
    let width = headers.len() + has_time as usize;
    let mut time = has_time.then(Vec::new);
    let mut cells = Vec::new();
    let mut rows = 0;
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_error(e, line))?;
        if rec.len() == 1 && rec.get(0).is_some_and(|c| c.trim().is_empty()) {
            continue;
        }
        if rec.len() != width {
            return Err(CliError::Parse {
                line,
                col: rec.len().min(width) + 1,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            if has_time && j == 0 {
                time.as_mut()
                    .expect("time column")
                    .push(cell.trim().to_string());
                continue;
            }
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| CliError::NonNumericCell { line, col: j + 1 })?;
            if !v.is_finite() {
                return Err(CliError::NonNumericCell { line, col: j + 1 });
            }
            cells.push(v);
        }
        rows += 1;
    }
    Ok(RawTable {
        headers,
        time,
        cells,
        rows,
    })
}

fn csv_error(e: csv::Error, line: usize) -> CliError {
    CliError::Parse {
        line: e.position().map_or(line, |p| p.line() as usize),
        col: 1,
        message: e.to_string(),
    }
}

fn split_lag(header: &str) -> Option<(&str, usize)> {
    let (name, lag) = header.rsplit_once('@')?;
    Some((name, lag.parse().ok()?))
}

/// Read a CSV file and group its columns into blocks. Without a block
/// specification every variable forms its own block.
pub fn ingest_csv(path: &Path, blocks: Option<&str>) -> Result<Dataset, CliError> {
    let raw = read_raw(path)?;
    let lagged: Vec<_> = raw.headers.iter().map(|h| split_lag(h)).collect();
    if lagged.iter().all(Option::is_some) {
        return panel_from_raw(
            &raw,
            lagged.into_iter().map(Option::unwrap).collect(),
            blocks,
        );
    }
    if let Some(i) = lagged.iter().position(Option::is_some) {
        return Err(CliError::Parse {
            line: 1,
            col: i + 1 + raw.time.is_some() as usize,
            message: "mixes `name@lag` headers with plain headers".into(),
        });
    }
    let blocks = match blocks {
        Some(spec) => parse_block_spec(spec, &raw.headers)?,
        None => singleton_blocks(&raw.headers),
    };
    let data = Matrix::from_row_slice(raw.rows, raw.headers.len(), &raw.cells);
    Ok(Dataset::Series(TimeSeriesTable::new(
        raw.headers.clone(),
        data,
        blocks,
        raw.time.clone(),
    )?))
}

fn panel_from_raw(
    raw: &RawTable,
    keys: Vec<(&str, usize)>,
    blocks: Option<&str>,
) -> Result<Dataset, CliError> {
    // variable -> lag -> column index
    let mut columns: BTreeMap<&str, BTreeMap<usize, usize>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (j, (name, lag)) in keys.iter().enumerate() {
        let entry = columns.entry(name).or_default();
        if entry.is_empty() {
            order.push(name.to_string());
        }
        if entry.insert(*lag, j).is_some() {
            return Err(CliError::Parse {
                line: 1,
                col: j + 1 + raw.time.is_some() as usize,
                message: format!("duplicate column `{name}@{lag}`"),
            });
        }
    }
    let max_lag = columns.values().next().map_or(0, |m| m.len() - 1);
    for (name, lags) in &columns {
        if lags.len() != max_lag + 1 || lags.keys().enumerate().any(|(i, &l)| i != l) {
            return Err(CliError::Config(format!(
                "variable `{name}` must have lags 0..={max_lag}"
            )));
        }
    }
    let blocks = match blocks {
        Some(spec) => parse_block_spec(spec, &order)?,
        None => singleton_blocks(&order),
    };
    let assigned: usize = blocks.iter().map(|b| b.variables.len()).sum();
    if assigned != order.len() {
        return Err(CliError::Config(
            "blocks must partition the variables".into(),
        ));
    }
    let width = raw.headers.len();
    let panel_blocks = blocks
        .iter()
        .map(|b| {
            let mats = (0..=max_lag)
                .map(|l| {
                    let cols: Vec<usize> = b
                        .variables
                        .iter()
                        .map(|v| columns[v.as_str()][&l])
                        .collect();
                    Matrix::from_fn(raw.rows, cols.len(), |i, c| raw.cells[i * width + cols[c]])
                })
                .collect();
            (b.name.clone(), b.variables.clone(), mats)
        })
        .collect();
    Ok(Dataset::Panel(LaggedPanel::with_variables(panel_blocks)?))
}
