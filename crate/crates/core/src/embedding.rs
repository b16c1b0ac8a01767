//! Lag embedding of block time series and rank-correlation annotation.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ensure_finite, hstack, Matrix};

/// A named group of variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub variables: Vec<String>,
}

/// Time-indexed observations (rows = time) with columns grouped into blocks.
#[derive(Debug, Clone)]
pub struct TimeSeriesTable {
    variables: Vec<String>,
    blocks: Vec<Block>,
    /// Column indices of each block, parallel to `blocks`.
    columns: Vec<Vec<usize>>,
    data: Matrix,
    time: Vec<String>,
}

impl TimeSeriesTable {
    /// `blocks` must partition `variables`. When `time` is `None` the row
    /// numbers are used as labels.
    pub fn new(
        variables: Vec<String>,
        data: Matrix,
        blocks: Vec<Block>,
        time: Option<Vec<String>>,
    ) -> Result<Self> {
        let (t, d) = data.shape();
        if variables.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "{} variable names for {} columns",
                variables.len(),
                d
            )));
        }
        if t < 2 {
            return Err(Error::InsufficientLength { length: t, lags: 0 });
        }
        ensure_finite(&data, "observations")?;
        let mut seen = HashSet::new();
        for v in &variables {
            if !seen.insert(v.as_str()) {
                return Err(Error::Config(format!("duplicate variable `{v}`")));
            }
        }
        let mut block_names = HashSet::new();
        let mut assigned = vec![false; d];
        let mut columns = Vec::with_capacity(blocks.len());
        for b in &blocks {
            if !block_names.insert(b.name.as_str()) {
                return Err(Error::Config(format!("duplicate block `{}`", b.name)));
            }
            if b.variables.is_empty() {
                return Err(Error::Config(format!("block `{}` is empty", b.name)));
            }
            let mut cols = Vec::with_capacity(b.variables.len());
            for v in &b.variables {
                let j = variables
                    .iter()
                    .position(|x| x == v)
                    .ok_or_else(|| Error::Config(format!("unknown variable `{v}`")))?;
                if assigned[j] {
                    return Err(Error::Config(format!(
                        "variable `{v}` assigned to more than one block"
                    )));
                }
                assigned[j] = true;
                cols.push(j);
            }
            columns.push(cols);
        }
        if let Some(j) = assigned.iter().position(|a| !a) {
            return Err(Error::Config(format!(
                "variable `{}` is not assigned to a block",
                variables[j]
            )));
        }
        let time = match time {
            Some(labels) if labels.len() != t => {
                return Err(Error::DimensionMismatch(format!(
                    "{} time labels for {} rows",
                    labels.len(),
                    t
                )))
            }
            Some(labels) => labels,
            None => (0..t).map(|i| i.to_string()).collect(),
        };
        Ok(Self {
            variables,
            blocks,
            columns,
            data,
            time,
        })
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dims(&self) -> usize {
        self.data.ncols()
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn time(&self) -> &[String] {
        &self.time
    }

    fn block_index(&self, name: &str) -> Result<usize> {
        self.blocks
            .iter()
            .position(|b| b.name == name)
            .ok_or_else(|| Error::UnknownBlock(name.to_string()))
    }

    /// The `T×d_B` observations of one block.
    pub fn block_data(&self, name: &str) -> Result<Matrix> {
        let cols = &self.columns[self.block_index(name)?];
        Ok(self.data.select_columns(cols.iter()))
    }

    /// Drop the last `n` time points.
    pub fn truncate(&self, n: usize) -> Result<Self> {
        let keep = self.len().saturating_sub(n);
        Self::new(
            self.variables.clone(),
            self.data.rows(0, keep).into_owned(),
            self.blocks.clone(),
            Some(self.time[..keep].to_vec()),
        )
    }

    /// Center every column and scale it to unit standard deviation.
    pub fn standardize(&self) -> Result<Self> {
        let mut data = self.data.clone();
        for (j, col) in data.column_iter_mut().enumerate() {
            standardize_column(col, &self.variables[j])?;
        }
        Ok(Self {
            data,
            ..self.clone()
        })
    }

    /// Lagged design for `source → target` given `conditioning`, `k` lags.
    pub fn build_design(
        &self,
        target: &str,
        source: &str,
        conditioning: &[&str],
        k: usize,
    ) -> Result<LaggedDesign> {
        if k == 0 {
            return Err(Error::Config("lag count must be at least 1".into()));
        }
        check_disjoint(target, source, conditioning)?;
        let t = self.len();
        if t <= k + 1 {
            return Err(Error::InsufficientLength { length: t, lags: k });
        }
        let n = t - k;
        let lagged = |name: &str| -> Result<Matrix> {
            let block = self.block_data(name)?;
            let parts: Vec<Matrix> = (1..=k)
                .map(|lag| block.rows(k - lag, n).into_owned())
                .collect();
            Ok(hstack(&parts.iter().collect::<Vec<_>>(), n))
        };
        let x = self.block_data(target)?.rows(k, n).into_owned();
        let y = lagged(source)?;
        let mut z_parts = vec![lagged(target)?];
        for c in conditioning {
            z_parts.push(lagged(c)?);
        }
        let z = hstack(&z_parts.iter().collect::<Vec<_>>(), n);
        Ok(LaggedDesign {
            x,
            y,
            z,
            k,
            n,
            target: target.to_string(),
            source: source.to_string(),
            conditioning: conditioning.iter().map(|s| s.to_string()).collect(),
        })
    }
}

fn standardize_column(mut col: nalgebra::DVectorViewMut<'_, f64>, name: &str) -> Result<()> {
    let n = col.len() as f64;
    let mean = col.sum() / n;
    col.add_scalar_mut(-mean);
    let sd = (col.norm_squared() / n).sqrt();
    let scale = col.amax().max(mean.abs());
    if !(sd > 16.0 * f64::EPSILON * scale) || sd == 0.0 {
        return Err(Error::ZeroVariance(name.to_string()));
    }
    col /= sd;
    Ok(())
}

fn check_disjoint(target: &str, source: &str, conditioning: &[&str]) -> Result<()> {
    if target == source {
        return Err(Error::Config(format!(
            "source and target are the same block `{target}`"
        )));
    }
    let mut seen: HashSet<&str> = [target, source].into_iter().collect();
    for c in conditioning {
        if !seen.insert(c) {
            return Err(Error::Config(format!(
                "block `{c}` appears more than once in the design"
            )));
        }
    }
    Ok(())
}

/// The `(X, Y, Z)` matrices of one causal hypothesis.
///
/// Row `i` of `x` is the target at time `k+i`; row `i` of `y` stacks the
/// source at `t−1, …, t−k`; row `i` of `z` stacks the target's own history
/// followed by each conditioning block's history, lags in the same order.
#[derive(Debug, Clone)]
pub struct LaggedDesign {
    pub x: Matrix,
    pub y: Matrix,
    pub z: Matrix,
    pub k: usize,
    pub n: usize,
    pub target: String,
    pub source: String,
    pub conditioning: Vec<String>,
}

impl LaggedDesign {
    /// Number of source variables (`cols(Y) / k`).
    pub fn source_dims(&self) -> usize {
        self.y.ncols() / self.k.max(1)
    }
}

/// Anything that can produce lagged designs for named blocks.
pub trait DesignSource: Sync {
    fn block_names(&self) -> Vec<String>;
    fn design(
        &self,
        target: &str,
        source: &str,
        conditioning: &[&str],
        k: usize,
    ) -> Result<LaggedDesign>;
}

impl DesignSource for TimeSeriesTable {
    fn block_names(&self) -> Vec<String> {
        self.blocks.iter().map(|b| b.name.clone()).collect()
    }

    fn design(
        &self,
        target: &str,
        source: &str,
        conditioning: &[&str],
        k: usize,
    ) -> Result<LaggedDesign> {
        self.build_design(target, source, conditioning, k)
    }
}

/// Pre-lagged data: each block carries its lag-0 … lag-k values as
/// separate `N×d` matrices sharing the same rows. Rows are independent
/// realizations rather than consecutive time points.
#[derive(Debug, Clone)]
pub struct LaggedPanel {
    specs: Vec<Block>,
    /// `lags[b][l]` is block `b` at lag `l`.
    lags: Vec<Vec<Matrix>>,
}

impl LaggedPanel {
    /// Variables are named `<block>_<j>` with `j` counted from 1.
    pub fn new(blocks: Vec<(String, Vec<Matrix>)>) -> Result<Self> {
        Self::with_variables(
            blocks
                .into_iter()
                .map(|(name, mats)| {
                    let d = mats.first().map_or(0, |m| m.ncols());
                    let width = d.to_string().len().max(2);
                    let vars = (1..=d).map(|j| format!("{name}_{j:0width$}")).collect();
                    (name, vars, mats)
                })
                .collect(),
        )
    }

    pub fn with_variables(blocks: Vec<(String, Vec<String>, Vec<Matrix>)>) -> Result<Self> {
        let mut specs: Vec<Block> = Vec::with_capacity(blocks.len());
        let mut lags = Vec::with_capacity(blocks.len());
        let mut shape = None;
        let mut seen = HashSet::new();
        for (name, variables, mats) in blocks {
            if specs.iter().any(|b| b.name == name) {
                return Err(Error::Config(format!("duplicate block `{name}`")));
            }
            if mats.len() < 2 {
                return Err(Error::Config(format!(
                    "block `{name}` needs lag 0 and at least one lag"
                )));
            }
            if variables.is_empty() || variables.len() != mats[0].ncols() {
                return Err(Error::DimensionMismatch(format!(
                    "block `{name}` has {} names for {} columns",
                    variables.len(),
                    mats[0].ncols()
                )));
            }
            for v in &variables {
                if !seen.insert(v.clone()) {
                    return Err(Error::Config(format!("duplicate variable `{v}`")));
                }
            }
            let expected = *shape.get_or_insert((mats[0].nrows(), mats.len()));
            for m in &mats {
                ensure_finite(m, &name)?;
                if (m.nrows(), mats.len()) != expected || m.ncols() != mats[0].ncols() {
                    return Err(Error::DimensionMismatch(format!(
                        "block `{name}` does not match the panel's rows or lag count"
                    )));
                }
            }
            specs.push(Block { name, variables });
            lags.push(mats);
        }
        if specs.is_empty() {
            return Err(Error::Config("panel has no blocks".into()));
        }
        let n = lags[0][0].nrows();
        if n < 2 {
            return Err(Error::InsufficientLength { length: n, lags: 0 });
        }
        Ok(Self { specs, lags })
    }

    pub fn block_specs(&self) -> &[Block] {
        &self.specs
    }

    pub fn rows(&self) -> usize {
        self.lags[0][0].nrows()
    }

    /// Largest lag available.
    pub fn max_lag(&self) -> usize {
        self.lags[0].len() - 1
    }

    pub fn names(&self) -> Vec<String> {
        self.specs.iter().map(|b| b.name.clone()).collect()
    }

    pub fn block(&self, name: &str) -> Result<&[Matrix]> {
        let b = self
            .specs
            .iter()
            .position(|b| b.name == name)
            .ok_or_else(|| Error::UnknownBlock(name.to_string()))?;
        Ok(&self.lags[b])
    }

    /// Standardize every lag column separately.
    pub fn standardize(&self) -> Result<Self> {
        let mut lags = self.lags.clone();
        for (b, mats) in lags.iter_mut().enumerate() {
            for (l, m) in mats.iter_mut().enumerate() {
                for (j, col) in m.column_iter_mut().enumerate() {
                    let var = &self.specs[b].variables[j];
                    standardize_column(col, &format!("{var}@{l}"))?;
                }
            }
        }
        Ok(Self {
            specs: self.specs.clone(),
            lags,
        })
    }
}

impl DesignSource for LaggedPanel {
    fn block_names(&self) -> Vec<String> {
        self.names()
    }

    fn design(
        &self,
        target: &str,
        source: &str,
        conditioning: &[&str],
        k: usize,
    ) -> Result<LaggedDesign> {
        if k == 0 || k > self.max_lag() {
            return Err(Error::Config(format!(
                "lag {k} outside 1..={}",
                self.max_lag()
            )));
        }
        check_disjoint(target, source, conditioning)?;
        let n = self.rows();
        let lagged = |name: &str| -> Result<Matrix> {
            let mats = self.block(name)?;
            Ok(hstack(&mats[1..=k].iter().collect::<Vec<_>>(), n))
        };
        let mut z_parts = vec![lagged(target)?];
        for c in conditioning {
            z_parts.push(lagged(c)?);
        }
        Ok(LaggedDesign {
            x: self.block(target)?[0].clone(),
            y: lagged(source)?,
            z: hstack(&z_parts.iter().collect::<Vec<_>>(), n),
            k,
            n,
            target: target.to_string(),
            source: source.to_string(),
            conditioning: conditioning.iter().map(|s| s.to_string()).collect(),
        })
    }
}

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            out[o] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::DegenerateInput(
            "constant input to rank correlation".into(),
        ));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "spearman on lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::DegenerateInput(
            "need at least two observations".into(),
        ));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spearman input".into()));
    }
    pearson(&ranks(a), &ranks(b))
}

fn average_ranks(block: &Matrix) -> Vec<f64> {
    let n = block.nrows();
    let mut acc = vec![0.0; n];
    for col in block.column_iter() {
        for (a, r) in acc.iter_mut().zip(ranks(col.as_slice())) {
            *a += r;
        }
    }
    let d = block.ncols() as f64;
    acc.iter().map(|a| a / d).collect()
}

/// Rank each column, average the ranks across each block's columns, and
/// correlate the two per-row average-rank vectors by Spearman.
pub fn aggregate_rank_score(x: &Matrix, y: &Matrix) -> Result<f64> {
    if x.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "blocks have {} and {} rows",
            x.nrows(),
            y.nrows()
        )));
    }
    if x.ncols() == 0 || y.ncols() == 0 {
        return Err(Error::DegenerateInput("empty block".into()));
    }
    spearman(&average_ranks(x), &average_ranks(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn table(cols: &[(&str, Vec<f64>)], blocks: &[(&str, &[&str])]) -> TimeSeriesTable {
        let t = cols[0].1.len();
        let data = Matrix::from_fn(t, cols.len(), |i, j| cols[j].1[i]);
        TimeSeriesTable::new(
            cols.iter().map(|c| c.0.to_string()).collect(),
            data,
            blocks
                .iter()
                .map(|(n, vs)| Block {
                    name: n.to_string(),
                    variables: vs.iter().map(|v| v.to_string()).collect(),
                })
                .collect(),
            None,
        )
        .unwrap()
    }

    fn sd(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (
            m,
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt(),
        )
    }

    #[test]
    fn standardize_ramp() {
        let t = table(&[("a", vec![1.0, 2.0, 3.0])], &[("A", &["a"])]);
        let s = t.standardize().unwrap();
        let (m, d) = sd(s.data().column(0).as_slice());
        assert_abs_diff_eq!(m, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn standardize_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..1000)
            .map(|_| 3.0 + 2.0 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let t = table(&[("a", v)], &[("A", &["a"])]);
        let once = t.standardize().unwrap();
        let (m, d) = sd(once.data().column(0).as_slice());
        assert!(m.abs() < 1e-12 && (d - 1.0).abs() < 1e-12);
        let twice = once.standardize().unwrap();
        let diff = (once.data() - twice.data()).amax();
        assert!(diff < 1e-12);
    }

    #[test]
    fn standardize_rejects_constant() {
        let t = table(&[("a", vec![2.0; 5])], &[("A", &["a"])]);
        assert_eq!(
            t.standardize().unwrap_err(),
            Error::ZeroVariance("a".into())
        );
    }

    #[test]
    fn design_lengths() {
        let t = table(
            &[
                ("a", (0..10).map(f64::from).collect()),
                ("b", vec![0.0; 10]),
            ],
            &[("A", &["a"]), ("B", &["b"])],
        );
        let d = t.build_design("A", "B", &[], 4).unwrap();
        assert_eq!(d.n, 6);
        assert_eq!(d.x.nrows(), 6);
        assert_eq!(d.y.shape(), (6, 4));
        assert_eq!(d.z.shape(), (6, 4));
    }

    #[test]
    fn design_ramp_alignment() {
        let t = table(
            &[
                ("a", (0..5).map(f64::from).collect()),
                ("b", (10..15).map(f64::from).collect()),
            ],
            &[("A", &["a"]), ("B", &["b"])],
        );
        let d = t.build_design("A", "B", &[], 1).unwrap();
        assert_eq!(d.x.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(d.z.column(0).as_slice(), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(d.y.column(0).as_slice(), &[10.0, 11.0, 12.0, 13.0]);
    }

    #[test]
    fn design_lag_order_and_conditioning() {
        let t = table(
            &[
                ("a", (0..6).map(f64::from).collect()),
                ("b", (10..16).map(f64::from).collect()),
                ("c", (20..26).map(f64::from).collect()),
            ],
            &[("A", &["a"]), ("B", &["b"]), ("C", &["c"])],
        );
        let d = t.build_design("A", "B", &["C"], 2).unwrap();
        // x at t = 2..5; y = [b(t−1), b(t−2)]; z = [a(t−1), a(t−2), c(t−1), c(t−2)]
        assert_eq!(d.x.as_slice(), &[2.0, 3.0, 4.0, 5.0]);
        assert_eq!(d.y.column(0).as_slice(), &[11.0, 12.0, 13.0, 14.0]);
        assert_eq!(d.y.column(1).as_slice(), &[10.0, 11.0, 12.0, 13.0]);
        assert_eq!(d.z.column(2).as_slice(), &[21.0, 22.0, 23.0, 24.0]);
        assert_eq!(d.z.column(3).as_slice(), &[20.0, 21.0, 22.0, 23.0]);
    }

    #[test]
    fn design_errors() {
        let t = table(
            &[("a", vec![0.0, 1.0, 2.0]), ("b", vec![1.0, 0.0, 1.0])],
            &[("A", &["a"]), ("B", &["b"])],
        );
        assert_eq!(
            t.build_design("A", "B", &[], 2).unwrap_err(),
            Error::InsufficientLength { length: 3, lags: 2 }
        );
        assert!(matches!(
            t.build_design("A", "Q", &[], 1),
            Err(Error::UnknownBlock(_))
        ));
        assert!(matches!(
            t.build_design("A", "A", &[], 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn ar1_coefficient_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut a = vec![0.0];
        for _ in 1..20000 {
            let prev = *a.last().unwrap();
            a.push(0.9 * prev + rng.sample::<f64, _>(StandardNormal));
        }
        let b: Vec<f64> = (0..20000).map(|_| rng.sample(StandardNormal)).collect();
        let t = table(&[("a", a), ("b", b)], &[("A", &["a"]), ("B", &["b"])]);
        let d = t.build_design("A", "B", &[], 1).unwrap();
        // Least squares with intercept, solved by centering.
        let (mx, mz) = (d.x.mean(), d.z.mean());
        let sxz: f64 =
            d.x.iter()
                .zip(d.z.iter())
                .map(|(x, z)| (x - mx) * (z - mz))
                .sum();
        let szz: f64 = d.z.iter().map(|z| (z - mz).powi(2)).sum();
        assert_abs_diff_eq!(sxz / szz, 0.9, epsilon = 0.01);
    }

    #[test]
    fn spearman_examples() {
        assert_abs_diff_eq!(
            spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(),
            1.0
        );
        assert_abs_diff_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_abs_diff_eq!(
            spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 3.0, 2.0, 5.0, 4.0]).unwrap(),
            0.8,
            epsilon = 1e-15
        );
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn aggregate_rank_reductions() {
        let a = Matrix::from_column_slice(5, 1, &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let b = Matrix::from_column_slice(5, 1, &[1.0, 3.0, 2.0, 5.0, 4.0]);
        assert_abs_diff_eq!(aggregate_rank_score(&a, &b).unwrap(), 0.8, epsilon = 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Matrix::from_fn(30, 3, |_, _| rng.sample(StandardNormal));
        assert_abs_diff_eq!(aggregate_rank_score(&x, &x).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn aggregate_rank_shared_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200;
        let shared: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let x = Matrix::from_fn(n, 2, |i, j| {
            if j == 0 {
                shared[i]
            } else {
                rng.sample(StandardNormal)
            }
        });
        let y = Matrix::from_fn(n, 2, |i, j| {
            if j == 0 {
                shared[i]
            } else {
                rng.sample(StandardNormal)
            }
        });
        let got = aggregate_rank_score(&x, &y).unwrap();
        assert!(got > 0.0 && got < 1.0);
        // Independent recomputation: rank by counting, average, then the
        // classic 1 − 6Σd²/(n(n²−1)) (no ties with continuous data).
        let rank_of = |v: &[f64], i: usize| v.iter().filter(|&&w| w < v[i]).count() as f64 + 1.0;
        let avg = |m: &Matrix| -> Vec<f64> {
            let c0: Vec<f64> = m.column(0).iter().copied().collect();
            let c1: Vec<f64> = m.column(1).iter().copied().collect();
            (0..n)
                .map(|i| (rank_of(&c0, i) + rank_of(&c1, i)) / 2.0)
                .collect()
        };
        let (ax, ay) = (avg(&x), avg(&y));
        let rx: Vec<f64> = (0..n).map(|i| rank_of(&ax, i)).collect();
        let ry: Vec<f64> = (0..n).map(|i| rank_of(&ay, i)).collect();
        let has_ties = |r: &[f64]| {
            let mut s = r.to_vec();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            s.windows(2).any(|w| w[0] == w[1])
        };
        if !has_ties(&rx) && !has_ties(&ry) {
            let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
            let nn = n as f64;
            let want = 1.0 - 6.0 * d2 / (nn * (nn * nn - 1.0));
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        } else {
            let want = pearson(&ranks(&ax), &ranks(&ay)).unwrap();
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn panel_design_layout() {
        let m = |v: f64| Matrix::from_element(3, 2, v);
        let p = LaggedPanel::new(vec![
            ("X".into(), vec![m(0.0), m(1.0), m(2.0)]),
            ("Y".into(), vec![m(10.0), m(11.0), m(12.0)]),
            ("W".into(), vec![m(20.0), m(21.0), m(22.0)]),
        ])
        .unwrap();
        let d = p.design("X", "Y", &["W"], 2).unwrap();
        assert_eq!(d.x, m(0.0));
        assert_eq!(d.y.shape(), (3, 4));
        assert_eq!(d.y[(0, 2)], 12.0);
        assert_eq!(d.z.shape(), (3, 8));
        assert_eq!(d.z[(0, 0)], 1.0);
        assert_eq!(d.z[(0, 7)], 22.0);
        assert!(p.design("X", "Y", &[], 3).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn design_consistent_under_truncation(seed in any::<u64>(), k in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = table(
                &[
                    ("a", (0..12).map(|_| rng.sample(StandardNormal)).collect()),
                    ("b", (0..12).map(|_| rng.sample(StandardNormal)).collect()),
                    ("c", (0..12).map(|_| rng.sample(StandardNormal)).collect()),
                ],
                &[("A", &["a"]), ("B", &["b", "c"])],
            );
            let full = t.build_design("A", "B", &[], k).unwrap();
            let short = t.truncate(1).unwrap().build_design("A", "B", &[], k).unwrap();
            let n = short.n;
            prop_assert_eq!(full.x.rows(0, n).into_owned(), short.x);
            prop_assert_eq!(full.y.rows(0, n).into_owned(), short.y);
            prop_assert_eq!(full.z.rows(0, n).into_owned(), short.z);
        }

        #[test]
        fn spearman_monotone_invariant(xs in proptest::collection::vec(-100.0f64..100.0, 3..30), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ys: Vec<f64> = xs.iter().map(|_| rng.sample(StandardNormal)).collect();
            prop_assume!(xs.iter().any(|&v| v != xs[0]));
            let base = spearman(&xs, &ys).unwrap();
            let moved: Vec<f64> = xs.iter().map(|v| (v / 50.0).exp() * 3.0 + 1.0).collect();
            let other: Vec<f64> = ys.iter().map(|v| v * v * v).collect();
            prop_assert!((spearman(&moved, &other).unwrap() - base).abs() < 1e-12);
        }

        #[test]
        fn standardize_idempotent(xs in proptest::collection::vec(-1e3f64..1e3, 2..50)) {
            prop_assume!(xs.iter().any(|&v| (v - xs[0]).abs() > 1e-6));
            let t = table(&[("a", xs)], &[("A", &["a"])]);
            let once = t.standardize().unwrap();
            let twice = once.standardize().unwrap();
            prop_assert!((once.data() - twice.data()).amax() < 1e-12);
        }
    }
}
