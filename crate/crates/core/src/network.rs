//! Pair-indexed directed network with a special regressor and covariates.

use crate::design::PairIndexing;
use crate::error::{check_len, Error, Result};
use crate::linalg::{compensated_sum, Matrix};
use crate::scalar::Scalar;

/// A directed network on `n` nodes stored in the sender-major pair order of
/// [`PairIndexing`].
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedNetwork<T> {
    idx: PairIndexing,
    /// Edge value per pair: 0/1 for binary networks, a level value otherwise.
    a: Vec<T>,
    /// Special regressor per pair.
    x1: Vec<T>,
    /// Remaining covariates, N × p.
    z: Matrix<T>,
    covariate_names: Vec<String>,
    /// Per covariate column: matched exactly by the kernel when true.
    discrete: Vec<bool>,
    labels: Vec<String>,
}

impl<T: Scalar> DirectedNetwork<T> {
    /// Covariates default to continuous, named `z1, z2, …`, nodes labelled `1..=n`.
    pub fn new(n: usize, a: Vec<T>, x1: Vec<T>, z: Matrix<T>) -> Result<Self> {
        let idx = PairIndexing::new(n)?;
        check_len("edge values", idx.pairs(), a.len())?;
        check_len("special regressor", idx.pairs(), x1.len())?;
        check_len("covariate rows", idx.pairs(), z.rows())?;
        let p = z.cols();
        Ok(Self {
            idx,
            a,
            x1,
            z,
            covariate_names: (1..=p).map(|k| format!("z{k}")).collect(),
            discrete: vec![false; p],
            labels: (1..=n).map(|i| i.to_string()).collect(),
        })
    }

    pub fn with_covariate_names(mut self, names: Vec<String>) -> Result<Self> {
        check_len("covariate names", self.z.cols(), names.len())?;
        self.covariate_names = names;
        Ok(self)
    }

    pub fn with_discrete(mut self, discrete: Vec<bool>) -> Result<Self> {
        check_len("discrete mask", self.z.cols(), discrete.len())?;
        self.discrete = discrete;
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        check_len("node labels", self.idx.nodes(), labels.len())?;
        self.labels = labels;
        Ok(self)
    }

    pub fn indexing(&self) -> &PairIndexing {
        &self.idx
    }

    pub fn nodes(&self) -> usize {
        self.idx.nodes()
    }

    pub fn pairs(&self) -> usize {
        self.idx.pairs()
    }

    pub fn edges(&self) -> &[T] {
        &self.a
    }

    pub fn special_regressor(&self) -> &[T] {
        &self.x1
    }

    pub fn covariates(&self) -> &Matrix<T> {
        &self.z
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn discrete_mask(&self) -> &[bool] {
        &self.discrete
    }

    pub fn continuous_columns(&self) -> Vec<usize> {
        (0..self.z.cols()).filter(|&c| !self.discrete[c]).collect()
    }

    pub fn discrete_columns(&self) -> Vec<usize> {
        (0..self.z.cols()).filter(|&c| self.discrete[c]).collect()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Whether every edge value is 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.a.iter().all(|&v| v == T::zero() || v == T::one())
    }

    /// Count of pairs `(i, ·)` with a positive edge value, per sender.
    pub fn out_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.nodes()];
        for (row, i, _) in self.idx.iter() {
            if self.a[row] > T::zero() {
                d[i] += 1;
            }
        }
        d
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.nodes()];
        for (row, _, j) in self.idx.iter() {
            if self.a[row] > T::zero() {
                d[j] += 1;
            }
        }
        d
    }

    /// Nodes with zero in- or out-degree.
    pub fn isolated_nodes(&self) -> Vec<usize> {
        let out = self.out_degrees();
        let inn = self.in_degrees();
        (0..self.nodes())
            .filter(|&i| out[i] == 0 || inn[i] == 0)
            .collect()
    }

    /// Errors with [`Error::IsolatedNodes`] when any node has zero in- or out-degree.
    pub fn check_isolated(&self) -> Result<()> {
        let iso = self.isolated_nodes();
        if iso.is_empty() {
            Ok(())
        } else {
            Err(Error::IsolatedNodes {
                count: iso.len(),
                nodes: iso.iter().map(|&i| self.labels[i].clone()).collect(),
            })
        }
    }

    /// Sub-network on `keep` (ascending node ids), preserving relative order.
    pub fn induced(&self, keep: &[usize]) -> Result<Self> {
        let n = self.nodes();
        if let Some(&bad) = keep.iter().find(|&&k| k >= n) {
            return Err(Error::NodeOutOfRange { node: bad, n });
        }
        let m = keep.len();
        let sub = PairIndexing::new(m)?;
        let p = self.z.cols();
        let mut a = Vec::with_capacity(sub.pairs());
        let mut x1 = Vec::with_capacity(sub.pairs());
        let mut z = Vec::with_capacity(sub.pairs() * p);
        for (_, i, j) in sub.iter() {
            let row = self.idx.row_unchecked(keep[i], keep[j]);
            a.push(self.a[row]);
            x1.push(self.x1[row]);
            z.extend_from_slice(self.z.row(row));
        }
        Ok(Self {
            idx: sub,
            a,
            x1,
            z: Matrix::from_row_major(sub.pairs(), p, z),
            covariate_names: self.covariate_names.clone(),
            discrete: self.discrete.clone(),
            labels: keep.iter().map(|&k| self.labels[k].clone()).collect(),
        })
    }

    /// Repeatedly removes nodes with zero in- or out-degree until none remain.
    /// Returns the pruned network and the labels of removed nodes.
    pub fn drop_isolated(&self) -> Result<(Self, Vec<String>)> {
        let mut net = self.clone();
        let mut removed = Vec::new();
        loop {
            let iso = net.isolated_nodes();
            if iso.is_empty() {
                return Ok((net, removed));
            }
            removed.extend(iso.iter().map(|&i| net.labels[i].clone()));
            let keep: Vec<usize> = (0..net.nodes()).filter(|i| !iso.contains(i)).collect();
            net = net.induced(&keep)?;
        }
    }

    /// Centres and scales the special regressor and every continuous
    /// covariate column to mean zero and unit sample SD. Constant columns
    /// are only centred.
    pub fn standardized(&self) -> Self {
        let mut out = self.clone();
        standardize(&mut out.x1);
        for c in self.continuous_columns() {
            let mut col: Vec<T> = (0..self.pairs()).map(|r| self.z[(r, c)]).collect();
            standardize(&mut col);
            for (r, v) in col.into_iter().enumerate() {
                out.z[(r, c)] = v;
            }
        }
        out
    }
}

pub(crate) fn standardize<T: Scalar>(v: &mut [T]) {
    if v.len() < 2 {
        return;
    }
    let n = T::count(v.len());
    let mean = compensated_sum(v.iter().copied()) / n;
    let ss = compensated_sum(v.iter().map(|&x| (x - mean) * (x - mean)));
    let sd = (ss / (n - T::one())).sqrt();
    for x in v.iter_mut() {
        *x -= mean;
        if sd > T::zero() {
            *x /= sd;
        }
    }
}
