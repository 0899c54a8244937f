//! Pair indexing and closed-form algebra of the two-way degree design.
//!
//! Ordered pairs `(i, j)`, `i != j`, of an `n`-node directed network are laid
//! out sender-major: sender block `i` holds receivers `0..n` with `i`
//! skipped, so row `i·(n−1) + j` for `j < i` and `i·(n−1) + j − 1` for
//! `j > i`. Node ids are 0-based.
//!
//! The degree design `U` (N × (2n−1), N = n(n−1)) has a one in the sender's
//! α-column and, unless the receiver is the last node, a one in the
//! receiver's β-column: the parameter vector is
//! `θ = (α_0, …, α_{n−1}, β_0, …, β_{n−2})` and `β_{n−1} ≡ 0`.
//! None of `U`, `V = UᵀU`, `V⁻¹` or the annihilator `D = I − U V⁻¹ Uᵀ`
//! is ever materialised; everything runs in O(N·p).

use crate::error::{check_len, Error, Result};
use crate::linalg::{dot, symmetric_eigenvalues, CompensatedSum, Matrix};
use crate::scalar::Scalar;

/// Bijection between ordered node pairs and design rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairIndexing {
    n: usize,
}

impl PairIndexing {
    pub fn new(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::TooFewNodes { min: 3, got: n });
        }
        Ok(Self { n })
    }

    #[inline]
    pub fn nodes(&self) -> usize {
        self.n
    }

    /// Number of ordered pairs, `n(n−1)`.
    #[inline]
    pub fn pairs(&self) -> usize {
        self.n * (self.n - 1)
    }

    /// Length of the binary parameter vector θ.
    #[inline]
    pub fn params(&self) -> usize {
        2 * self.n - 1
    }

    pub fn row_of(&self, i: usize, j: usize) -> Result<usize> {
        for node in [i, j] {
            if node >= self.n {
                return Err(Error::NodeOutOfRange { node, n: self.n });
            }
        }
        if i == j {
            return Err(Error::IdentityPair(i));
        }
        Ok(self.row_unchecked(i, j))
    }

    #[inline]
    pub fn row_unchecked(&self, i: usize, j: usize) -> usize {
        debug_assert!(i != j && i < self.n && j < self.n);
        i * (self.n - 1) + if j < i { j } else { j - 1 }
    }

    pub fn pair_of(&self, row: usize) -> Result<(usize, usize)> {
        if row >= self.pairs() {
            return Err(Error::IndexOutOfRange {
                index: row,
                len: self.pairs(),
            });
        }
        Ok(self.pair_unchecked(row))
    }

    #[inline]
    pub fn pair_unchecked(&self, row: usize) -> (usize, usize) {
        let i = row / (self.n - 1);
        let k = row % (self.n - 1);
        (i, if k < i { k } else { k + 1 })
    }

    /// Iterator over `(row, sender, receiver)` in row order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let n = self.n;
        (0..n).flat_map(move |i| {
            (0..n)
                .filter(move |&j| j != i)
                .enumerate()
                .map(move |(k, j)| (i * (n - 1) + k, i, j))
        })
    }

    /// θ column of the receiver's β, `None` for the reference node.
    #[inline]
    pub fn beta_column(&self, j: usize) -> Option<usize> {
        (j + 1 < self.n).then(|| self.n + j)
    }
}

/// `U·θ`: entry `(i, j)` is `α_i + β_j` with `β_{n−1} = 0`.
pub fn apply_u<T: Scalar>(idx: &PairIndexing, theta: &[T]) -> Result<Vec<T>> {
    check_len("theta", idx.params(), theta.len())?;
    let n = idx.nodes();
    let mut out = Vec::with_capacity(idx.pairs());
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let b = if j + 1 < n { theta[n + j] } else { T::zero() };
            out.push(theta[i] + b);
        }
    }
    Ok(out)
}

/// `Uᵀ·v`: out-sums per sender followed by in-sums per non-reference receiver.
pub fn apply_ut<T: Scalar>(idx: &PairIndexing, v: &[T]) -> Result<Vec<T>> {
    check_len("pair vector", idx.pairs(), v.len())?;
    let n = idx.nodes();
    let mut alpha = vec![CompensatedSum::new(); n];
    let mut beta = vec![CompensatedSum::new(); n];
    for (row, i, j) in idx.iter() {
        alpha[i].add(v[row]);
        beta[j].add(v[row]);
    }
    let mut out: Vec<T> = alpha.iter().map(CompensatedSum::value).collect();
    out.extend(beta[..n - 1].iter().map(CompensatedSum::value));
    Ok(out)
}

/// Closed-form entry `(V⁻¹)_{ij}` for 0-based indices into the θ layout.
pub fn vinv_entry<T: Scalar>(n: usize, i: usize, j: usize) -> Result<T> {
    if n < 3 {
        return Err(Error::TooFewNodes { min: 3, got: n });
    }
    let len = 2 * n - 1;
    for k in [i, j] {
        if k >= len {
            return Err(Error::IndexOutOfRange { index: k, len });
        }
    }
    Ok(VinvClasses::new(n).entry(i, j))
}

/// The nine distinct values of `V⁻¹`, grouped by index class:
/// α-block `0..n−1`, the last sender `n−1`, and β-block `n..2n−1`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct VinvClasses<T> {
    n: usize,
    aa_diag: T,
    aa_off: T,
    last_last: T,
    last_a: T,
    a_own_b: T,
    last_b: T,
    a_other_b: T,
    bb_diag: T,
    bb_off: T,
}

impl<T: Scalar> VinvClasses<T> {
    pub(crate) fn new(n: usize) -> Self {
        let nf = T::count(n);
        let one = T::one();
        let two = T::lit(2.0);
        let three = T::lit(3.0);
        let n1 = nf - one;
        let n2 = nf - two;
        Self {
            n,
            aa_diag: (two * nf - one) / (nf * n1),
            aa_off: (nf * nf - three * nf + one) / (nf * n1 * n2),
            last_last: (two * nf - three) / (n1 * n2),
            last_a: one / n1,
            a_own_b: -one / nf,
            last_b: -one / n2,
            a_other_b: -n1 / (nf * n2),
            bb_diag: two * n1 / (nf * n2),
            bb_off: n1 / (nf * n2),
        }
    }

    pub(crate) fn entry(&self, i: usize, j: usize) -> T {
        let n = self.n;
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let last = n - 1;
        match (i, j) {
            (i, j) if j < last => {
                if i == j {
                    self.aa_diag
                } else {
                    self.aa_off
                }
            }
            (i, j) if i == last && j == last => self.last_last,
            (_, j) if j == last => self.last_a,
            (i, j) if i == last => {
                debug_assert!(j >= n);
                self.last_b
            }
            (i, j) if i < last => {
                if j - n == i {
                    self.a_own_b
                } else {
                    self.a_other_b
                }
            }
            (i, j) => {
                if i == j {
                    self.bb_diag
                } else {
                    self.bb_off
                }
            }
        }
    }
}

/// `V⁻¹·w` in O(n) using the class structure of the closed form.
pub fn apply_vinv<T: Scalar>(n: usize, w: &[T]) -> Result<Vec<T>> {
    if n < 3 {
        return Err(Error::TooFewNodes { min: 3, got: n });
    }
    check_len("theta-layout vector", 2 * n - 1, w.len())?;
    let c = VinvClasses::<T>::new(n);
    let last = n - 1;
    let wa = &w[..last];
    let wn = w[last];
    let wb = &w[n..];
    let sa = crate::linalg::compensated_sum(wa.iter().copied());
    let sb = crate::linalg::compensated_sum(wb.iter().copied());
    let mut out = Vec::with_capacity(w.len());
    for i in 0..last {
        out.push(
            c.aa_diag * wa[i]
                + c.aa_off * (sa - wa[i])
                + c.last_a * wn
                + c.a_own_b * wb[i]
                + c.a_other_b * (sb - wb[i]),
        );
    }
    out.push(c.last_last * wn + c.last_a * sa + c.last_b * sb);
    for i in 0..last {
        out.push(
            c.a_own_b * wa[i]
                + c.a_other_b * (sa - wa[i])
                + c.last_b * wn
                + c.bb_diag * wb[i]
                + c.bb_off * (sb - wb[i]),
        );
    }
    Ok(out)
}

/// `D·v = v − U V⁻¹ Uᵀ v`.
pub fn project_out<T: Scalar>(idx: &PairIndexing, v: &[T]) -> Result<Vec<T>> {
    let fitted = apply_u(idx, &apply_vinv(idx.nodes(), &apply_ut(idx, v)?)?)?;
    Ok(v.iter().zip(&fitted).map(|(&a, &b)| a - b).collect())
}

/// Extracts column `k` of a row-major N×p matrix.
pub(crate) fn column<T: Scalar>(z: &Matrix<T>, k: usize) -> Vec<T> {
    (0..z.rows()).map(|r| z[(r, k)]).collect()
}

/// Cross products of the covariate matrix with itself and with `U`.
#[derive(Debug, Clone)]
pub struct GramSummary<T> {
    idx: PairIndexing,
    /// `UᵀZ`, (2n−1) × p.
    utz: Matrix<T>,
    /// `V⁻¹UᵀZ`, (2n−1) × p.
    vinv_utz: Matrix<T>,
    ztz: Matrix<T>,
}

impl<T: Scalar> GramSummary<T> {
    pub fn new(idx: PairIndexing, z: &Matrix<T>) -> Result<Self> {
        check_len("covariate rows", idx.pairs(), z.rows())?;
        let p = z.cols();
        let q = idx.params();
        let mut utz = Matrix::zeros(q, p);
        let mut vinv_utz = Matrix::zeros(q, p);
        for k in 0..p {
            let col = column(z, k);
            let u = apply_ut(&idx, &col)?;
            let vu = apply_vinv(idx.nodes(), &u)?;
            for r in 0..q {
                utz[(r, k)] = u[r];
                vinv_utz[(r, k)] = vu[r];
            }
        }
        let mut ztz = Matrix::zeros(p, p);
        let cols: Vec<Vec<T>> = (0..p).map(|k| column(z, k)).collect();
        for a in 0..p {
            for b in a..p {
                let v = dot(&cols[a], &cols[b]);
                ztz[(a, b)] = v;
                ztz[(b, a)] = v;
            }
        }
        Ok(Self {
            idx,
            utz,
            vinv_utz,
            ztz,
        })
    }

    pub fn indexing(&self) -> &PairIndexing {
        &self.idx
    }

    pub fn covariates(&self) -> usize {
        self.ztz.cols()
    }

    pub fn utz(&self) -> &Matrix<T> {
        &self.utz
    }

    pub fn ztz(&self) -> &Matrix<T> {
        &self.ztz
    }

    /// `V⁻¹UᵀZ`, the coefficients of each covariate's projection onto span(U).
    pub fn vinv_utz(&self) -> &Matrix<T> {
        &self.vinv_utz
    }
}

/// `ZᵀDZ = ZᵀZ − (UᵀZ)ᵀ V⁻¹ (UᵀZ)`.
pub fn ztdz<T: Scalar>(g: &GramSummary<T>) -> Matrix<T> {
    let p = g.covariates();
    let q = g.idx.params();
    let mut out = Matrix::zeros(p, p);
    for a in 0..p {
        for b in a..p {
            let mut acc = CompensatedSum::new();
            acc.add(g.ztz[(a, b)]);
            for r in 0..q {
                acc.add(-(g.utz[(r, a)] * g.vinv_utz[(r, b)]));
            }
            let v = acc.value();
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    out
}

/// `ZᵀDv = Zᵀv − (V⁻¹UᵀZ)ᵀ Uᵀv`.
pub fn ztd_vec<T: Scalar>(z: &Matrix<T>, v: &[T], g: &GramSummary<T>) -> Result<Vec<T>> {
    check_len("pair vector", g.idx.pairs(), v.len())?;
    check_len("covariate rows", g.idx.pairs(), z.rows())?;
    let utv = apply_ut(&g.idx, v)?;
    let p = z.cols();
    let mut out = Vec::with_capacity(p);
    for k in 0..p {
        let mut acc = CompensatedSum::new();
        for r in 0..z.rows() {
            acc.add(z[(r, k)] * v[r]);
        }
        for r in 0..utv.len() {
            acc.add(-(g.vinv_utz[(r, k)] * utv[r]));
        }
        out.push(acc.value());
    }
    Ok(out)
}

/// Explicit `DZ` (N × p); O(N·p).
pub fn projected_covariates<T: Scalar>(z: &Matrix<T>, g: &GramSummary<T>) -> Result<Matrix<T>> {
    let p = z.cols();
    let mut out = z.clone();
    for k in 0..p {
        let coef: Vec<T> = (0..g.idx.params()).map(|r| g.vinv_utz[(r, k)]).collect();
        let fitted = apply_u(&g.idx, &coef)?;
        for (r, f) in fitted.into_iter().enumerate() {
            out[(r, k)] -= f;
        }
    }
    Ok(out)
}

/// Smallest eigenvalue of `ZᵀDZ / N`; a value near zero means the
/// covariates are (close to) collinear or absorbed by the degree design.
pub fn c4_diagnostic<T: Scalar>(g: &GramSummary<T>) -> T {
    if g.covariates() == 0 {
        return T::infinity();
    }
    let m = ztdz(g).scale(T::one() / T::count(g.idx.pairs()));
    symmetric_eigenvalues(&m)[0]
}

// ---------------------------------------------------------------------------
// Reduced layout: both α_{n−1} and β_{n−1} pinned to zero (2n−2 parameters).
// ---------------------------------------------------------------------------

/// Length of the reduced parameter vector `(α_0..α_{n−2}, β_0..β_{n−2})`.
pub fn reduced_params(idx: &PairIndexing) -> usize {
    2 * idx.nodes() - 2
}

fn expand_reduced<T: Scalar>(n: usize, theta_r: &[T]) -> Vec<T> {
    let mut full = Vec::with_capacity(2 * n - 1);
    full.extend_from_slice(&theta_r[..n - 1]);
    full.push(T::zero());
    full.extend_from_slice(&theta_r[n - 1..]);
    full
}

fn drop_last_sender<T: Scalar>(n: usize, full: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(2 * n - 2);
    out.extend_from_slice(&full[..n - 1]);
    out.extend_from_slice(&full[n..]);
    out
}

/// `Ū·θ_r` where `Ū` is `U` without the last sender's column.
pub fn apply_u_reduced<T: Scalar>(idx: &PairIndexing, theta_r: &[T]) -> Result<Vec<T>> {
    check_len("reduced theta", reduced_params(idx), theta_r.len())?;
    apply_u(idx, &expand_reduced(idx.nodes(), theta_r))
}

/// `Ūᵀ·v`.
pub fn apply_ut_reduced<T: Scalar>(idx: &PairIndexing, v: &[T]) -> Result<Vec<T>> {
    Ok(drop_last_sender(idx.nodes(), &apply_ut(idx, v)?))
}

/// `(ŪᵀŪ)⁻¹·w`.
///
/// `ŪᵀŪ` is `V` with the last sender's row and column removed, so its
/// inverse is the Schur complement of `V⁻¹`:
/// `(V⁻¹)_{−k,−k} − (V⁻¹)_{−k,k}(V⁻¹)_{k,−k} / (V⁻¹)_{kk}` with `k = n−1`.
pub fn apply_reduced_gram_inv<T: Scalar>(n: usize, w: &[T]) -> Result<Vec<T>> {
    if n < 3 {
        return Err(Error::TooFewNodes { min: 3, got: n });
    }
    check_len("reduced theta", 2 * n - 2, w.len())?;
    let c = VinvClasses::<T>::new(n);
    let x = apply_vinv(n, &expand_reduced(n, w))?;
    let k = n - 1;
    let ratio = x[k] / c.last_last;
    let mut out = drop_last_sender(n, &x);
    for (r, o) in out.iter_mut().enumerate() {
        let col = if r < k { c.last_a } else { c.last_b };
        *o -= ratio * col;
    }
    Ok(out)
}

/// Closed-form entry of `(ŪᵀŪ)⁻¹` (0-based, reduced layout).
pub fn reduced_gram_inv_entry<T: Scalar>(n: usize, i: usize, j: usize) -> Result<T> {
    let len = 2 * n - 2;
    for k in [i, j] {
        if k >= len {
            return Err(Error::IndexOutOfRange { index: k, len });
        }
    }
    let c = VinvClasses::<T>::new(n);
    let full = |r: usize| if r < n - 1 { r } else { r + 1 };
    let col = |r: usize| if r < n - 1 { c.last_a } else { c.last_b };
    Ok(c.entry(full(i), full(j)) - col(i) * col(j) / c.last_last)
}
