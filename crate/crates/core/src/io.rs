//! File formats, pairwise-covariate construction, atomic writers and the
//! degree goodness-of-fit table.
//!
//! Edge lists have header `i,j,a`; pairwise covariates `i,j,<name>…`; node
//! attributes `i,<name>…`. Node ids are integers; they are sorted and mapped
//! to consecutive internal indices, and the original ids become labels.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::ModelFit;
use crate::linalg::{dot, Matrix};
use crate::network::{standardize, DirectedNetwork};

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<fs::File>> {
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?)
}

fn headers(rdr: &mut csv::Reader<fs::File>) -> Result<Vec<String>> {
    Ok(rdr.headers()?.iter().map(str::to_string).collect())
}

fn parse_id(path: &Path, line: usize, s: &str) -> Result<u64> {
    s.parse::<u64>().map_err(|_| {
        parse_err(
            path,
            line,
            format!("node id `{s}` is not a nonnegative integer"),
        )
    })
}

fn parse_value(path: &Path, line: usize, s: &str) -> Result<f64> {
    let v = s
        .parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("`{s}` is not a number")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(parse_err(path, line, format!("`{s}` is not finite")))
    }
}

fn expect_prefix(path: &Path, got: &[String], want: &[&str]) -> Result<()> {
    if got.len() < want.len() || got.iter().zip(want).any(|(g, w)| g != w) {
        return Err(parse_err(
            path,
            1,
            format!("header must start with `{}`", want.join(",")),
        ));
    }
    Ok(())
}

/// Rows of a pair-keyed file, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTable {
    pub names: Vec<String>,
    pub rows: Vec<(u64, u64, Vec<f64>)>,
}

fn read_pair_file(path: &Path, value_names: Option<&[&str]>) -> Result<PairTable> {
    let mut rdr = open_csv(path)?;
    let header = headers(&mut rdr)?;
    let mut want = vec!["i", "j"];
    if let Some(v) = value_names {
        want.extend_from_slice(v);
    }
    expect_prefix(path, &header, &want)?;
    let names: Vec<String> = header[2..].to_vec();
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, got {}", header.len(), rec.len()),
            ));
        }
        let i = parse_id(path, line, &rec[0])?;
        let j = parse_id(path, line, &rec[1])?;
        if i == j {
            return Err(Error::SelfLoop {
                file: path.display().to_string(),
                i: i.to_string(),
            });
        }
        if !seen.insert((i, j)) {
            return Err(Error::DuplicatePair {
                file: path.display().to_string(),
                i: i.to_string(),
                j: j.to_string(),
            });
        }
        let vals = (2..rec.len())
            .map(|c| parse_value(path, line, &rec[c]))
            .collect::<Result<Vec<_>>>()?;
        rows.push((i, j, vals));
    }
    Ok(PairTable { names, rows })
}

/// Edge list with header `i,j,a`.
pub fn read_edges(path: &Path) -> Result<PairTable> {
    let t = read_pair_file(path, Some(&["a"]))?;
    if t.names.len() != 1 {
        return Err(parse_err(
            path,
            1,
            "edge file must have exactly the columns i,j,a",
        ));
    }
    Ok(t)
}

/// Pairwise covariates with header `i,j,<name>…`.
pub fn read_pairwise(path: &Path) -> Result<PairTable> {
    let t = read_pair_file(path, None)?;
    if t.names.is_empty() {
        return Err(parse_err(path, 1, "covariate file has no value columns"));
    }
    Ok(t)
}

/// Node attributes with header `i,<name>…`; values are kept as text so
/// categorical columns need no coding.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTable {
    pub names: Vec<String>,
    pub ids: Vec<u64>,
    pub values: Vec<Vec<String>>,
}

impl NodeTable {
    fn column(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    /// Numeric view of one column, one entry per node.
    pub fn numeric(&self, name: &str, path: &Path) -> Result<Vec<f64>> {
        let c = self.column(name)?;
        self.values
            .iter()
            .enumerate()
            .map(|(k, row)| parse_value(path, k + 2, &row[c]))
            .collect()
    }
}

pub fn read_node_attributes(path: &Path) -> Result<NodeTable> {
    let mut rdr = open_csv(path)?;
    let header = headers(&mut rdr)?;
    expect_prefix(path, &header, &["i"])?;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut seen = BTreeSet::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, got {}", header.len(), rec.len()),
            ));
        }
        let id = parse_id(path, line, &rec[0])?;
        if !seen.insert(id) {
            return Err(parse_err(path, line, format!("node {id} listed twice")));
        }
        ids.push(id);
        values.push(rec.iter().skip(1).map(str::to_string).collect());
    }
    Ok(NodeTable {
        names: header[1..].to_vec(),
        ids,
        values,
    })
}

/// Dense adjacency matrix without header; the diagonal is ignored.
/// Returns the node count and edge values in pair order.
pub fn read_adjacency_matrix(path: &Path) -> Result<(usize, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        rows.push(
            rec.iter()
                .map(|s| parse_value(path, k + 1, s))
                .collect::<Result<_>>()?,
        );
    }
    let n = rows.len();
    if let Some((k, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(parse_err(
            path,
            k + 1,
            format!("expected {n} columns, got {}", r.len()),
        ));
    }
    let idx = crate::design::PairIndexing::new(n)?;
    Ok((n, idx.iter().map(|(_, i, j)| rows[i][j]).collect()))
}

/// Pairwise covariate built from node attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Constructor {
    /// `|w_i − w_j|`, continuous.
    AbsDiff {
        column: String,
        name: Option<String>,
    },
    /// `I(w_i = w_j)`, discrete.
    Equal {
        column: String,
        name: Option<String>,
    },
    /// `w_i`, continuous.
    Sender {
        column: String,
        name: Option<String>,
    },
    /// `w_j`, continuous.
    Receiver {
        column: String,
        name: Option<String>,
    },
}

impl Constructor {
    pub fn output_name(&self) -> &str {
        match self {
            Constructor::AbsDiff { column, name }
            | Constructor::Equal { column, name }
            | Constructor::Sender { column, name }
            | Constructor::Receiver { column, name } => name.as_deref().unwrap_or(column),
        }
    }

    fn column(&self) -> &str {
        match self {
            Constructor::AbsDiff { column, .. }
            | Constructor::Equal { column, .. }
            | Constructor::Sender { column, .. }
            | Constructor::Receiver { column, .. } => column,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Constructor::Equal { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum CovariateSource {
    Pairwise {
        path: PathBuf,
    },
    NodeAttributes {
        path: PathBuf,
        constructors: Vec<Constructor>,
    },
}

/// Where the data live and how to assemble the pairwise design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSchema {
    pub edges: PathBuf,
    pub covariates: CovariateSource,
    /// Column used as the special regressor; every other column enters Z.
    pub special_regressor: String,
    /// Extra columns matched exactly by the kernel; equality constructors are always discrete.
    #[serde(default)]
    pub discrete: Vec<String>,
    /// Standardize numeric node attributes before building pairwise covariates.
    #[serde(default)]
    pub standardize: bool,
    /// Node count for files whose ids are exactly `1..=nodes`.
    #[serde(default)]
    pub nodes: Option<usize>,
}

struct NodeMap {
    ids: Vec<u64>,
    pos: HashMap<u64, usize>,
}

impl NodeMap {
    fn new(ids: impl IntoIterator<Item = u64>) -> Self {
        let set: BTreeSet<u64> = ids.into_iter().collect();
        let ids: Vec<u64> = set.into_iter().collect();
        let pos = ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
        Self { ids, pos }
    }

    fn get(&self, id: u64, file: &Path) -> Result<usize> {
        self.pos
            .get(&id)
            .copied()
            .ok_or_else(|| parse_err(file, 0, format!("node {id} is not a known node")))
    }
}

/// Reads and validates a network described by `schema`.
pub fn load_network(schema: &InputSchema) -> Result<DirectedNetwork<f64>> {
    let edges = read_edges(&schema.edges)?;
    let (names, discrete_cols, map, values): (Vec<String>, Vec<bool>, NodeMap, Vec<Vec<f64>>) =
        match &schema.covariates {
            CovariateSource::Pairwise { path } => {
                let table = read_pairwise(path)?;
                let map = match schema.nodes {
                    Some(n) => NodeMap::new(1..=n as u64),
                    None => NodeMap::new(
                        table
                            .rows
                            .iter()
                            .flat_map(|r| [r.0, r.1])
                            .chain(edges.rows.iter().flat_map(|r| [r.0, r.1])),
                    ),
                };
                let n = map.ids.len();
                let idx = crate::design::PairIndexing::new(n)?;
                let mut vals: Vec<Option<Vec<f64>>> = vec![None; idx.pairs()];
                for (i, j, v) in &table.rows {
                    let row = idx.row_unchecked(map.get(*i, path)?, map.get(*j, path)?);
                    vals[row] = Some(v.clone());
                }
                let mut out = Vec::with_capacity(idx.pairs());
                for (row, i, j) in idx.iter() {
                    match vals[row].take() {
                        Some(v) => out.push(v),
                        None => {
                            return Err(Error::MissingPair {
                                i: map.ids[i].to_string(),
                                j: map.ids[j].to_string(),
                            })
                        }
                    }
                }
                let k = table.names.len();
                (table.names, vec![false; k], map, out)
            }
            CovariateSource::NodeAttributes { path, constructors } => {
                let table = read_node_attributes(path)?;
                let map = NodeMap::new(table.ids.iter().copied());
                if let Some(n) = schema.nodes {
                    if map.ids != (1..=n as u64).collect::<Vec<_>>() {
                        return Err(parse_err(
                            path,
                            0,
                            format!("node ids must be exactly 1..={n}"),
                        ));
                    }
                }
                let n = map.ids.len();
                let idx = crate::design::PairIndexing::new(n)?;
                // Row order of the table → internal node order.
                let order: Vec<usize> = map
                    .ids
                    .iter()
                    .map(|id| {
                        table
                            .ids
                            .iter()
                            .position(|x| x == id)
                            .expect("id from table")
                    })
                    .collect();
                let mut columns: Vec<Vec<f64>> = Vec::with_capacity(constructors.len());
                for c in constructors {
                    let col = c.column();
                    let built: Vec<f64> = match c {
                        Constructor::Equal { .. } => {
                            let k = table.column(col)?;
                            let w: Vec<&str> =
                                order.iter().map(|&r| table.values[r][k].as_str()).collect();
                            idx.iter()
                                .map(|(_, i, j)| if w[i] == w[j] { 1.0 } else { 0.0 })
                                .collect()
                        }
                        _ => {
                            let raw = table.numeric(col, path)?;
                            let mut w: Vec<f64> = order.iter().map(|&r| raw[r]).collect();
                            if schema.standardize {
                                standardize(&mut w);
                            }
                            idx.iter()
                                .map(|(_, i, j)| match c {
                                    Constructor::AbsDiff { .. } => (w[i] - w[j]).abs(),
                                    Constructor::Sender { .. } => w[i],
                                    _ => w[j],
                                })
                                .collect()
                        }
                    };
                    columns.push(built);
                }
                let vals = (0..idx.pairs())
                    .map(|r| columns.iter().map(|c| c[r]).collect())
                    .collect();
                (
                    constructors
                        .iter()
                        .map(|c| c.output_name().to_string())
                        .collect(),
                    constructors.iter().map(Constructor::is_discrete).collect(),
                    map,
                    vals,
                )
            }
        };
    let n = map.ids.len();
    let idx = crate::design::PairIndexing::new(n)?;
    let mut dup = BTreeSet::new();
    for (k, name) in names.iter().enumerate() {
        if !dup.insert(name) {
            return Err(Error::InvalidConfig(format!(
                "covariate `{name}` defined twice (column {})",
                k + 1
            )));
        }
    }
    let sr = names
        .iter()
        .position(|n| n == &schema.special_regressor)
        .ok_or_else(|| Error::UnknownColumn(schema.special_regressor.clone()))?;
    for d in &schema.discrete {
        if !names.contains(d) {
            return Err(Error::UnknownColumn(d.clone()));
        }
    }
    let mut a = vec![0.0; idx.pairs()];
    for (i, j, v) in &edges.rows {
        let ii = map.get(*i, &schema.edges)?;
        let jj = map.get(*j, &schema.edges)?;
        a[idx.row_unchecked(ii, jj)] = v[0];
    }
    let zcols: Vec<usize> = (0..names.len()).filter(|&c| c != sr).collect();
    let x1: Vec<f64> = values.iter().map(|v| v[sr]).collect();
    let mut z = Vec::with_capacity(idx.pairs() * zcols.len());
    for v in &values {
        z.extend(zcols.iter().map(|&c| v[c]));
    }
    let discrete = zcols
        .iter()
        .map(|&c| discrete_cols[c] || schema.discrete.contains(&names[c]))
        .collect();
    DirectedNetwork::new(
        n,
        a,
        x1,
        Matrix::from_row_major(idx.pairs(), zcols.len(), z),
    )?
    .with_covariate_names(zcols.iter().map(|&c| names[c].clone()).collect())?
    .with_discrete(discrete)?
    .with_labels(map.ids.iter().map(u64::to_string).collect())
}

/// Shortest decimal text that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir)?;
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

/// Writes `edges.csv` (every ordered pair) and `covariates.csv` (special
/// regressor first, named `special_name`) under `dir`.
pub fn write_network(
    dir: &Path,
    net: &DirectedNetwork<f64>,
    special_name: &str,
) -> Result<(PathBuf, PathBuf)> {
    let labels = net.labels();
    let idx = net.indexing();
    let edges: Vec<Vec<String>> = idx
        .iter()
        .map(|(r, i, j)| {
            vec![
                labels[i].clone(),
                labels[j].clone(),
                fmt_f64(net.edges()[r]),
            ]
        })
        .collect();
    let e_path = dir.join("edges.csv");
    write_csv(&e_path, &["i", "j", "a"], &edges)?;
    let mut header = vec!["i", "j", special_name];
    header.extend(net.covariate_names().iter().map(String::as_str));
    let cov: Vec<Vec<String>> = idx
        .iter()
        .map(|(r, i, j)| {
            let mut row = vec![
                labels[i].clone(),
                labels[j].clone(),
                fmt_f64(net.special_regressor()[r]),
            ];
            row.extend(net.covariates().row(r).iter().map(|&v| fmt_f64(v)));
            row
        })
        .collect();
    let c_path = dir.join("covariates.csv");
    write_csv(&c_path, &header, &cov)?;
    Ok((e_path, c_path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofRow {
    pub node: String,
    pub out_observed: f64,
    pub out_fitted: f64,
    pub in_observed: f64,
    pub in_fitted: f64,
}

/// Observed versus fitted normalized degrees, with L₂ errors for the fit and
/// for the all-zeros predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub rows: Vec<GofRow>,
    pub l2_out: f64,
    pub l2_in: f64,
    pub l2_out_zero: f64,
    pub l2_in_zero: f64,
}

/// Fitted edges `Â_ij = I(α̂_i + β̂_j + s·x1 + Zᵀη̂ > 0)`. `net` must be the
/// network the fit saw (after any node removal and standardization).
pub fn gof_degrees(net: &DirectedNetwork<f64>, fit: &ModelFit<f64>) -> Result<GofReport> {
    if net.nodes() != fit.n || net.labels() != fit.labels.as_slice() {
        return Err(Error::InvalidConfig(
            "goodness-of-fit network does not match the fitted node set".into(),
        ));
    }
    let n = fit.n;
    let s = f64::from(fit.sign);
    let denom = (n - 1) as f64;
    let mut out_obs = vec![0.0; n];
    let mut in_obs = vec![0.0; n];
    let mut out_fit = vec![0.0; n];
    let mut in_fit = vec![0.0; n];
    for (r, i, j) in net.indexing().iter() {
        let a = if net.edges()[r] > 0.0 { 1.0 } else { 0.0 };
        let index = fit.alpha[i]
            + fit.beta[j]
            + s * net.special_regressor()[r]
            + dot(net.covariates().row(r), &fit.eta);
        let ahat = if index > 0.0 { 1.0 } else { 0.0 };
        out_obs[i] += a / denom;
        in_obs[j] += a / denom;
        out_fit[i] += ahat / denom;
        in_fit[j] += ahat / denom;
    }
    let l2 = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let zeros = vec![0.0; n];
    Ok(GofReport {
        rows: (0..n)
            .map(|i| GofRow {
                node: fit.labels[i].clone(),
                out_observed: out_obs[i],
                out_fitted: out_fit[i],
                in_observed: in_obs[i],
                in_fitted: in_fit[i],
            })
            .collect(),
        l2_out: l2(&out_obs, &out_fit),
        l2_in: l2(&in_obs, &in_fit),
        l2_out_zero: l2(&out_obs, &zeros),
        l2_in_zero: l2(&in_obs, &zeros),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn complete_pairs(n: u64, f: impl Fn(u64, u64) -> String) -> String {
        let mut s = String::new();
        for i in 1..=n {
            for j in 1..=n {
                if i != j {
                    s.push_str(&format!("{i},{j},{}\n", f(i, j)));
                }
            }
        }
        s
    }

    #[test]
    fn three_node_pairwise_load() {
        let d = tempdir().unwrap();
        let e = write(
            d.path(),
            "e.csv",
            &format!(
                "i,j,a\n{}",
                complete_pairs(3, |i, j| ((i + j) % 2).to_string())
            ),
        );
        let c = write(
            d.path(),
            "x.csv",
            &format!(
                "i,j,x,z\n{}",
                complete_pairs(3, |i, j| format!("{},{}", i as f64 * 0.5, j))
            ),
        );
        let net = load_network(&InputSchema {
            edges: e,
            covariates: CovariateSource::Pairwise { path: c },
            special_regressor: "x".into(),
            discrete: vec![],
            standardize: false,
            nodes: None,
        })
        .unwrap();
        assert_eq!(net.pairs(), 6);
        assert_eq!(net.covariates().cols(), 1);
        assert_eq!(net.covariate_names(), &["z".to_string()]);
        let r = net.indexing().row_of(1, 2).unwrap();
        assert_eq!(net.edges()[r], 1.0);
        assert_eq!(net.special_regressor()[r], 1.0);
        assert_eq!(net.covariates()[(r, 0)], 3.0);
    }

    #[test]
    fn rejects_self_loops_duplicates_and_missing_pairs() {
        let d = tempdir().unwrap();
        let e = write(d.path(), "e.csv", "i,j,a\n1,1,1\n");
        assert!(matches!(read_edges(&e), Err(Error::SelfLoop { .. })));
        let e = write(d.path(), "e2.csv", "i,j,a\n1,2,1\n1,2,0\n");
        assert!(matches!(read_edges(&e), Err(Error::DuplicatePair { .. })));
        let e = write(d.path(), "e3.csv", "i,j,a\n1,2,x\n");
        assert!(matches!(read_edges(&e), Err(Error::Parse { line: 2, .. })));
        let e = write(d.path(), "e4.csv", "i,j,a\n1,2,1\n");
        let c = write(
            d.path(),
            "c.csv",
            "i,j,x\n1,2,0.1\n2,1,0.2\n1,3,0.3\n3,1,0.1\n2,3,0.2\n",
        );
        let err = load_network(&InputSchema {
            edges: e.clone(),
            covariates: CovariateSource::Pairwise { path: c.clone() },
            special_regressor: "x".into(),
            discrete: vec![],
            standardize: false,
            nodes: None,
        })
        .unwrap_err();
        assert!(matches!(err, Error::MissingPair { .. }));
        let c = write(
            d.path(),
            "c2.csv",
            &format!("i,j,x\n{}", complete_pairs(3, |_, _| "0.5".into())),
        );
        let err = load_network(&InputSchema {
            edges: e,
            covariates: CovariateSource::Pairwise { path: c },
            special_regressor: "age".into(),
            discrete: vec![],
            standardize: false,
            nodes: None,
        })
        .unwrap_err();
        assert!(matches!(err, Error::UnknownColumn(ref c) if c == "age"));
    }

    #[test]
    fn node_attribute_constructors() {
        let d = tempdir().unwrap();
        let nodes = write(
            d.path(),
            "n.csv",
            "i,gender,years,age\n1,m,1,30\n2,f,4,40\n3,m,9,60\n",
        );
        let e = write(d.path(), "e.csv", "i,j,a\n1,2,1\n2,3,1\n3,1,1\n");
        let net = load_network(&InputSchema {
            edges: e,
            covariates: CovariateSource::NodeAttributes {
                path: nodes,
                constructors: vec![
                    Constructor::Equal {
                        column: "gender".into(),
                        name: None,
                    },
                    Constructor::AbsDiff {
                        column: "years".into(),
                        name: None,
                    },
                    Constructor::AbsDiff {
                        column: "age".into(),
                        name: None,
                    },
                ],
            },
            special_regressor: "age".into(),
            discrete: vec![],
            standardize: false,
            nodes: None,
        })
        .unwrap();
        assert_eq!(
            net.covariate_names(),
            &["gender".to_string(), "years".to_string()]
        );
        assert_eq!(net.discrete_mask(), &[true, false]);
        let r = net.indexing().row_of(0, 2).unwrap();
        assert_eq!(net.covariates()[(r, 0)], 1.0);
        assert_eq!(net.covariates()[(r, 1)], 8.0);
        assert_eq!(net.special_regressor()[r], 30.0);
    }

    #[test]
    fn adjacency_matrix_reader() {
        let d = tempdir().unwrap();
        let p = write(d.path(), "adj.csv", "0,1,0\n1,0,1\n0,0,0\n");
        let (n, a) = read_adjacency_matrix(&p).unwrap();
        assert_eq!(n, 3);
        assert_eq!(a, vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn atomic_write_replaces_content() {
        let d = tempdir().unwrap();
        let p = d.path().join("out.json");
        write_json(&p, &vec![1.5, 0.1]).unwrap();
        write_json(&p, &vec![2.0]).unwrap();
        let back: Vec<f64> = serde_json::from_slice(&fs::read(&p).unwrap()).unwrap();
        assert_eq!(back, vec![2.0]);
        assert_eq!(fs::read_dir(d.path()).unwrap().count(), 1);
    }

    #[test]
    fn float_text_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 1e22, 123456.789] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }
}
