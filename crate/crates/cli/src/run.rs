//! Scan runs and their output documents.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use kcc_core::causality::{
    causal_scan, causal_test, CausalResult, Method, PermScheme, PermutationConfig, TestConfig,
};
use kcc_core::embedding::{Block, DesignSource};
use kcc_core::{Execution, KernelSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::ingest::{ingest_csv, Dataset};

pub const NETWORK_FORMAT: &str = "kcc-network/1";

/// Which hypotheses to test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Selection {
    /// Every ordered block pair.
    ScanAll,
    /// One source → target pair. `condition = None` conditions on every
    /// other block.
    Pair {
        target: String,
        source: String,
        condition: Option<Vec<String>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: PathBuf,
    pub blocks: Option<String>,
    pub selection: Selection,
    pub lags: usize,
    pub method: Method,
    pub kernel: KernelSpec,
    /// Zero disables permutation testing.
    pub permutations: usize,
    pub perm_scheme: PermScheme,
    pub early_stop: Option<usize>,
    pub alpha: f64,
    pub seed: u64,
    /// Applied to the linear methods; the kernel method always standardizes.
    pub standardize: bool,
    pub out: Option<PathBuf>,
    pub graph_out: Option<PathBuf>,
    pub density_out: Option<PathBuf>,
    #[serde(skip)]
    pub exec: Execution,
}

impl RunConfig {
    /// Defaults: k = 4, σ = 1, ζ = 1e−7, τ = 1e−6, α = 0.001, 1000
    /// permutations.
    pub fn new(input: impl Into<PathBuf>, method: Method) -> Self {
        Self {
            input: input.into(),
            blocks: None,
            selection: Selection::ScanAll,
            lags: 4,
            method,
            kernel: KernelSpec::recommended(),
            permutations: 1000,
            perm_scheme: PermScheme::Iid,
            early_stop: None,
            alpha: 0.001,
            seed: 0,
            standardize: true,
            out: None,
            graph_out: None,
            density_out: None,
            exec: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.lags == 0 {
            return Err(CliError::Config("lags must be at least 1".into()));
        }
        if self.permutations != 0 && self.permutations < 19 {
            return Err(CliError::Config(format!(
                "use 0 or at least 19 permutations, got {}",
                self.permutations
            )));
        }
        if self.early_stop == Some(0) {
            return Err(CliError::Config("early stop must be at least 1".into()));
        }
        self.test_config().validate()?;
        Ok(())
    }

    pub fn test_config(&self) -> TestConfig {
        TestConfig {
            method: self.method,
            kernel: self.kernel,
            linear_ridge: 0.0,
            permutations: (self.permutations > 0).then_some(PermutationConfig {
                n_perm: self.permutations,
                scheme: self.perm_scheme,
                seed: self.seed,
                early_stop: self.early_stop,
            }),
            alpha: self.alpha,
            exec: self.exec,
        }
    }
}

/// Parameters echoed into the network document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub lags: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSpec>,
    pub permutations: usize,
    pub perm_scheme: PermScheme,
    pub early_stop: Option<usize>,
    pub alpha: f64,
    pub seed: u64,
    pub standardized: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataSummary {
    pub kind: String,
    pub rows: usize,
}

/// One tested `(source → target, lag)` with its annotations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Edge {
    #[serde(flatten)]
    pub result: CausalResult,
    /// `(score − q99) / q99`; drives arrow size.
    pub null_distance: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkDocument {
    pub format: String,
    pub config: RunSummary,
    pub data: DataSummary,
    pub nodes: Vec<Block>,
    pub edges: Vec<Edge>,
}

impl NetworkDocument {
    pub fn significant(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.result.significant)
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Io(format!("serializing network document: {e}")))?;
        s.push('\n');
        Ok(s)
    }
}

/// Write `contents` to a temporary file beside `path`, then rename it into
/// place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Tests for the configured selection, ordered by `(source, target, lag)`.
pub fn run_tests(data: &dyn DesignSource, cfg: &RunConfig) -> Result<Vec<CausalResult>, CliError> {
    let test = cfg.test_config();
    match &cfg.selection {
        Selection::ScanAll => Ok(causal_scan(data, cfg.lags, &test)?),
        Selection::Pair {
            target,
            source,
            condition,
        } => {
            let names = data.block_names();
            for b in [target, source]
                .into_iter()
                .chain(condition.iter().flatten())
            {
                if !names.contains(b) {
                    return Err(kcc_core::Error::UnknownBlock(b.clone()).into());
                }
            }
            let cond: Vec<&str> = match condition {
                Some(c) => c.iter().map(String::as_str).collect(),
                None => names
                    .iter()
                    .filter(|b| *b != target && *b != source)
                    .map(String::as_str)
                    .collect(),
            };
            (1..=cfg.lags)
                .map(|k| Ok(causal_test(data, target, source, &cond, k, &test)?))
                .collect()
        }
    }
}

fn prepare(cfg: &RunConfig) -> Result<Dataset, CliError> {
    cfg.validate()?;
    let data = ingest_csv(&cfg.input, cfg.blocks.as_deref())?;
    if let Some(max) = data.max_lag() {
        if cfg.lags > max {
            return Err(CliError::Config(format!(
                "panel data has lags up to {max}, {} requested",
                cfg.lags
            )));
        }
    }
    let standardize = cfg.standardize || cfg.method == Method::Kcc;
    if standardize {
        data.standardize()
    } else {
        Ok(data)
    }
}

/// Build the network document for an already loaded dataset.
pub fn scan_dataset(
    data: &Dataset,
    cfg: &RunConfig,
    standardized: bool,
) -> Result<NetworkDocument, CliError> {
    let results = run_tests(data.source(), cfg)?;
    let mut nodes = data.blocks();
    nodes.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(NetworkDocument {
        format: NETWORK_FORMAT.to_string(),
        config: RunSummary {
            method: cfg.method,
            lags: cfg.lags,
            kernel: (cfg.method == Method::Kcc).then_some(cfg.kernel),
            permutations: cfg.permutations,
            perm_scheme: cfg.perm_scheme,
            early_stop: cfg.early_stop,
            alpha: cfg.alpha,
            seed: cfg.seed,
            standardized,
        },
        data: DataSummary {
            kind: data.kind().to_string(),
            rows: data.rows(),
        },
        nodes,
        edges: results
            .into_iter()
            .map(|r| Edge {
                null_distance: r.null_distance().filter(|d| d.is_finite()),
                result: r,
            })
            .collect(),
    })
}

/// Ingest, standardize, scan and write every requested output. Outputs are
/// only written once the whole scan has succeeded.
pub fn run_scan(cfg: &RunConfig) -> Result<NetworkDocument, CliError> {
    let data = prepare(cfg)?;
    let standardized = cfg.standardize || cfg.method == Method::Kcc;
    let doc = scan_dataset(&data, cfg, standardized)?;
    let density = match &cfg.density_out {
        Some(_) => Some(density_csv(data.source(), &doc)?),
        None => None,
    };
    if let Some(path) = &cfg.out {
        write_atomic(path, doc.to_json()?.as_bytes())?;
    }
    if let Some(path) = &cfg.graph_out {
        write_atomic(path, to_dot(&doc).as_bytes())?;
    }
    if let (Some(path), Some(csv)) = (&cfg.density_out, density) {
        write_atomic(path, csv.as_bytes())?;
    }
    Ok(doc)
}

fn dot_id(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Graphviz description: significant edges only, pen width from the null
/// distance, red for positive and blue for negative rank score.
pub fn to_dot(doc: &NetworkDocument) -> String {
    let mut s = String::from("digraph causal_network {\n  rankdir=LR;\n");
    for n in &doc.nodes {
        let _ = writeln!(s, "  {};", dot_id(&n.name));
    }
    for e in doc.significant() {
        let r = &e.result;
        let width = 1.0 + e.null_distance.unwrap_or(0.0).clamp(0.0, 4.0);
        let color = match r.rank_score {
            Some(v) if v < 0.0 => "blue",
            Some(_) => "red",
            None => "black",
        };
        let _ = writeln!(
            s,
            "  {} -> {} [label=\"lag {} / {:.4}\", penwidth={:.3}, color={}];",
            dot_id(&r.source),
            dot_id(&r.target),
            r.k,
            r.score,
            width,
            color
        );
    }
    s.push_str("}\n");
    s
}

/// Long-format scatter data: for each tested edge, the first target
/// variable at time `t` against the first source variable at `t − lag`.
pub fn density_csv(data: &dyn DesignSource, doc: &NetworkDocument) -> Result<String, CliError> {
    let mut s = String::from("source,target,lag,x,y\n");
    for e in &doc.edges {
        let r = &e.result;
        let design = data.design(&r.target, &r.source, &[], r.k)?;
        let d = design.source_dims();
        let x = design.x.column(0);
        let y = design.y.column((r.k - 1) * d);
        for (a, b) in x.iter().zip(y.iter()) {
            let _ = writeln!(s, "{},{},{},{},{}", r.source, r.target, r.k, a, b);
        }
    }
    Ok(s)
}
