//! Gaussian-approximation resampling: θ and η samplers, confidence
//! intervals, sparse-signal tests, support recovery and degree-heterogeneity
//! tests.
//!
//! Draw `b` uses ChaCha8 streams `2b` (θ) and `2b+1` (η) under the base seed, so
//! draws are reproducible one by one and independent of evaluation order.
//! θ draws are realised as `√(n−1)·V⁻¹Uᵀξ` with `ξ_r = w_r·z_r` per pair;
//! the homoskedastic model uses the constant weight `σ̂_ε`, the
//! heteroskedastic one the residuals `ε̂_r`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::{apply_u, apply_ut, apply_vinv, vinv_entry, PairIndexing, VinvClasses};
use crate::error::{Error, Result};
use crate::estimator::ModelFit;
use crate::linalg::{compensated_sum, Cholesky, Matrix};
use crate::scalar::Scalar;

pub const DEFAULT_DRAWS: usize = 10_000;
pub const DEFAULT_SUPPORT_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CovMode {
    #[default]
    Homoskedastic,
    Heteroskedastic,
}

/// Stream `stream` of the ChaCha8 generator seeded with `seed`.
pub fn draw_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Gaussian approximation to the sampling law of `√(n−1)(θ̂−θ)` and
/// `√N(η̂−η)`.
#[derive(Debug, Clone)]
pub struct CovarianceModel<T> {
    pub mode: CovMode,
    idx: PairIndexing,
    /// Per-pair multiplier weights for θ draws.
    weights: Vec<T>,
    /// Homoskedastic variance, used by the closed-form ζ̂.
    sigma2: T,
    /// Covariance of the η draws and its lower factor (`None` when zero).
    eta_cov: Matrix<T>,
    eta_factor: Option<Cholesky<T>>,
    pub draws: usize,
    pub seed: u64,
}

impl<T: Scalar> CovarianceModel<T> {
    /// Builds the θ part from explicit per-pair weights; with constant
    /// weights `σ` this is exactly the homoskedastic sampler.
    pub fn from_weights(
        mode: CovMode,
        idx: PairIndexing,
        weights: Vec<T>,
        sigma2: T,
        eta_cov: Matrix<T>,
        draws: usize,
        seed: u64,
    ) -> Result<Self> {
        crate::error::check_len("pair weights", idx.pairs(), weights.len())?;
        if draws == 0 {
            return Err(Error::InvalidConfig("resampling needs B >= 1".into()));
        }
        let eta_factor = if eta_cov.as_slice().iter().all(|&v| v == T::zero()) {
            None
        } else {
            Some(
                Cholesky::new(&eta_cov).ok_or(Error::SingularDesign {
                    lambda_min: crate::linalg::symmetric_eigenvalues(&eta_cov)
                        .first()
                        .map_or(0.0, |v| v.as_f64()),
                })?,
            )
        };
        Ok(Self {
            mode,
            idx,
            weights,
            sigma2,
            eta_cov,
            eta_factor,
            draws,
            seed,
        })
    }

    /// `Ĝ₁ ~ N(0, (n−1)σ̂_ε²V⁻¹)`, `Ĝ₂ ~ N(0, σ̂_Q²(ZᵀDZ/N)⁻¹)`.
    pub fn homoskedastic(fit: &ModelFit<T>, draws: usize, seed: u64) -> Result<Self> {
        let idx = PairIndexing::new(fit.n)?;
        let sigma = fit.sigma_eps2.sqrt();
        let eta_cov = homo_eta_cov(fit)?;
        Self::from_weights(
            CovMode::Homoskedastic,
            idx,
            vec![sigma; idx.pairs()],
            fit.sigma_eps2,
            eta_cov,
            draws,
            seed,
        )
    }

    /// `Ĝ₃ ~ N(0, (n−1)V⁻¹Uᵀdiag(ε̂²)UV⁻¹)`,
    /// `Ĝ₄ ~ N(0, N(ZᵀDZ)⁻¹ZᵀD diag(Q̂²) DZ(ZᵀDZ)⁻¹)`.
    pub fn heteroskedastic(fit: &ModelFit<T>, draws: usize, seed: u64) -> Result<Self> {
        let idx = PairIndexing::new(fit.n)?;
        let eta_cov = hetero_eta_cov(fit)?;
        Self::from_weights(
            CovMode::Heteroskedastic,
            idx,
            fit.residuals.clone(),
            fit.sigma_eps2,
            eta_cov,
            draws,
            seed,
        )
    }

    pub fn new(fit: &ModelFit<T>, mode: CovMode, draws: usize, seed: u64) -> Result<Self> {
        match mode {
            CovMode::Homoskedastic => Self::homoskedastic(fit, draws, seed),
            CovMode::Heteroskedastic => Self::heteroskedastic(fit, draws, seed),
        }
    }

    pub fn nodes(&self) -> usize {
        self.idx.nodes()
    }

    pub fn eta_cov(&self) -> &Matrix<T> {
        &self.eta_cov
    }

    /// One θ draw (length 2n−1).
    pub fn sample_g1(&self, draw: usize) -> Vec<T> {
        let mut rng = draw_rng(self.seed, 2 * draw as u64);
        let xi: Vec<T> = self
            .weights
            .iter()
            .map(|&w| {
                let z: f64 = StandardNormal.sample(&mut rng);
                w * T::lit(z)
            })
            .collect();
        let scale = T::count(self.idx.nodes() - 1).sqrt();
        let ut = apply_ut(&self.idx, &xi).expect("weights sized to the pair count");
        apply_vinv(self.idx.nodes(), &ut)
            .expect("θ layout length")
            .into_iter()
            .map(|v| v * scale)
            .collect()
    }

    /// One η draw (length p).
    pub fn sample_g2(&self, draw: usize) -> Vec<T> {
        let p = self.eta_cov.rows();
        let Some(chol) = &self.eta_factor else {
            return vec![T::zero(); p];
        };
        let mut rng = draw_rng(self.seed, 2 * draw as u64 + 1);
        let z: Vec<T> = (0..p)
            .map(|_| T::lit(StandardNormal.sample(&mut rng)))
            .collect();
        chol.lower_mul(&z)
    }

    /// All B θ draws as rows.
    pub fn theta_draws(&self) -> Matrix<T> {
        let q = self.idx.params();
        let mut data = Vec::with_capacity(self.draws * q);
        for b in 0..self.draws {
            data.extend(self.sample_g1(b));
        }
        Matrix::from_row_major(self.draws, q, data)
    }

    pub fn eta_draws(&self) -> Matrix<T> {
        let p = self.eta_cov.rows();
        let mut data = Vec::with_capacity(self.draws * p);
        for b in 0..self.draws {
            data.extend(self.sample_g2(b));
        }
        Matrix::from_row_major(self.draws, p, data)
    }

    /// Variance of `cᵀG₁` for a θ-layout contrast.
    pub fn theta_contrast_variance(&self, c: &[(usize, T)]) -> T {
        let n = self.idx.nodes();
        match self.mode {
            CovMode::Homoskedastic => {
                let k = VinvClasses::<T>::new(n);
                let mut acc = T::zero();
                for &(a, ca) in c {
                    for &(b, cb) in c {
                        acc += ca * cb * k.entry(a, b);
                    }
                }
                T::count(n - 1) * self.sigma2 * acc
            }
            CovMode::Heteroskedastic => {
                let mut dense = vec![T::zero(); self.idx.params()];
                for &(a, ca) in c {
                    dense[a] += ca;
                }
                let v = apply_vinv(n, &dense).expect("θ layout length");
                let uv = apply_u(&self.idx, &v).expect("θ layout length");
                T::count(n - 1)
                    * compensated_sum(uv.iter().zip(&self.weights).map(|(&u, &w)| w * w * u * u))
            }
        }
    }

    /// Per-coordinate variances of G₁ (ζ̂).
    pub fn zeta(&self) -> Vec<T> {
        match self.mode {
            CovMode::Homoskedastic => zeta_from_sigma2(self.idx.nodes(), self.sigma2),
            CovMode::Heteroskedastic => (0..self.idx.params())
                .map(|k| self.theta_contrast_variance(&[(k, T::one())]))
                .collect(),
        }
    }
}

fn homo_eta_cov<T: Scalar>(fit: &ModelFit<T>) -> Result<Matrix<T>> {
    let p = fit.eta.len();
    if p == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let chol = Cholesky::new(&fit.ztdz).ok_or(Error::SingularDesign {
        lambda_min: fit.c4_lambda_min.as_f64(),
    })?;
    Ok(chol.inverse().scale(fit.sigma_q2 * T::count(fit.pairs())))
}

fn hetero_eta_cov<T: Scalar>(fit: &ModelFit<T>) -> Result<Matrix<T>> {
    let p = fit.eta.len();
    if p == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let chol = Cholesky::new(&fit.ztdz).ok_or(Error::SingularDesign {
        lambda_min: fit.c4_lambda_min.as_f64(),
    })?;
    let inv = chol.inverse();
    let mut cov = inv
        .matmul(&fit.meat_q)
        .matmul(&inv)
        .scale(T::count(fit.pairs()));
    cov.symmetrize();
    Ok(cov)
}

/// `ζ̂_k = (n−1)σ̂²(V⁻¹)_kk`.
pub fn zeta_from_sigma2<T: Scalar>(n: usize, sigma2: T) -> Vec<T> {
    let k = VinvClasses::<T>::new(n);
    (0..2 * n - 1)
        .map(|i| T::count(n - 1) * sigma2 * k.entry(i, i))
        .collect()
}

pub fn zeta_diag<T: Scalar>(fit: &ModelFit<T>) -> Vec<T> {
    zeta_from_sigma2(fit.n, fit.sigma_eps2)
}

/// Which parameter block a statistic refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Block {
    Alpha,
    Beta,
}

impl Block {
    /// θ column of node `i`, `None` for the reference β.
    pub fn column(self, n: usize, i: usize) -> Option<usize> {
        match self {
            Block::Alpha => Some(i),
            Block::Beta => (i + 1 < n).then_some(n + i),
        }
    }

    /// Nodes whose parameter is free in this block.
    pub fn free_nodes(self, n: usize) -> std::ops::Range<usize> {
        match self {
            Block::Alpha => 0..n,
            Block::Beta => 0..n - 1,
        }
    }
}

/// Sparse linear combination of θ or η coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub target: ContrastTarget,
    pub terms: Vec<(usize, f64)>,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContrastTarget {
    Theta,
    Eta,
}

impl Contrast {
    pub fn alpha(i: usize) -> Self {
        Self {
            target: ContrastTarget::Theta,
            terms: vec![(i, 1.0)],
            label: format!("alpha[{}]", i + 1),
        }
    }

    /// β of node `j`; the reference node gives an empty (identically zero) contrast.
    pub fn beta(n: usize, j: usize) -> Self {
        Self {
            target: ContrastTarget::Theta,
            terms: Block::Beta
                .column(n, j)
                .map(|c| (c, 1.0))
                .into_iter()
                .collect(),
            label: format!("beta[{}]", j + 1),
        }
    }

    pub fn difference(block: Block, n: usize, i: usize, j: usize) -> Self {
        let mut terms = Vec::new();
        if let Some(c) = block.column(n, i) {
            terms.push((c, 1.0));
        }
        if let Some(c) = block.column(n, j) {
            terms.push((c, -1.0));
        }
        let name = match block {
            Block::Alpha => "alpha",
            Block::Beta => "beta",
        };
        Self {
            target: ContrastTarget::Theta,
            terms,
            label: format!("{name}[{}]-{name}[{}]", i + 1, j + 1),
        }
    }

    pub fn eta(k: usize) -> Self {
        Self {
            target: ContrastTarget::Eta,
            terms: vec![(k, 1.0)],
            label: format!("eta[{}]", k + 1),
        }
    }

    fn apply<T: Scalar>(&self, v: &[T]) -> T {
        self.terms
            .iter()
            .fold(T::zero(), |acc, &(k, w)| acc + T::lit(w) * v[k])
    }

    fn typed<T: Scalar>(&self) -> Vec<(usize, T)> {
        self.terms.iter().map(|&(k, w)| (k, T::lit(w))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CiMethod {
    /// Quantile of |cᵀG| over the B draws.
    #[default]
    Resampled,
    /// `z_{1−ν/2}` times the closed-form contrast standard deviation.
    ExactNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub label: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub half_width: f64,
    pub level: f64,
    pub method: CiMethod,
}

/// `k`-th smallest value for `k = ⌈(1−ν)·B⌉` (1-based); zero for `k = 0`.
pub fn resampled_quantile<T: Scalar>(values: &mut [T], nu: f64) -> T {
    let b = values.len();
    let k = ((1.0 - nu) * b as f64 - 1e-9).ceil().max(0.0) as usize;
    if k == 0 || b == 0 {
        return T::zero();
    }
    let k = k.min(b);
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    values[k - 1]
}

fn check_level(nu: f64) -> Result<()> {
    if nu > 0.0 && nu <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "level must lie in (0, 1], got {nu}"
        )))
    }
}

/// Precomputed draws for repeated interval/test evaluation on one fit.
#[derive(Debug, Clone)]
pub struct DrawSet<T> {
    pub theta: Matrix<T>,
    pub eta: Matrix<T>,
}

impl<T: Scalar> DrawSet<T> {
    pub fn new(cov: &CovarianceModel<T>) -> Self {
        Self {
            theta: cov.theta_draws(),
            eta: cov.eta_draws(),
        }
    }

    pub fn theta_only(cov: &CovarianceModel<T>) -> Self {
        Self {
            theta: cov.theta_draws(),
            eta: Matrix::zeros(cov.draws, 0),
        }
    }
}

/// Confidence interval for one contrast.
pub fn ci_scalar<T: Scalar>(
    fit: &ModelFit<T>,
    cov: &CovarianceModel<T>,
    draws: Option<&DrawSet<T>>,
    contrast: &Contrast,
    nu: f64,
    method: CiMethod,
) -> Result<Interval> {
    check_level(nu)?;
    let (estimate, scale) = match contrast.target {
        ContrastTarget::Theta => (contrast.apply(&fit.theta()), T::count(fit.n - 1).sqrt()),
        ContrastTarget::Eta => (contrast.apply(&fit.eta), T::count(fit.pairs()).sqrt()),
    };
    let q = match method {
        CiMethod::ExactNormal => {
            let var = match contrast.target {
                ContrastTarget::Theta => cov.theta_contrast_variance(&contrast.typed()),
                ContrastTarget::Eta => {
                    let c = contrast.typed::<T>();
                    let mut acc = T::zero();
                    for &(a, ca) in &c {
                        for &(b, cb) in &c {
                            acc += ca * cb * cov.eta_cov()[(a, b)];
                        }
                    }
                    acc
                }
            };
            let z = if nu >= 1.0 {
                0.0
            } else {
                Normal::standard().inverse_cdf(1.0 - nu / 2.0)
            };
            T::lit(z) * var.max(T::zero()).sqrt()
        }
        CiMethod::Resampled => {
            let owned;
            let d = match draws {
                Some(d) => d,
                None => {
                    owned = DrawSet::new(cov);
                    &owned
                }
            };
            let m = match contrast.target {
                ContrastTarget::Theta => &d.theta,
                ContrastTarget::Eta => &d.eta,
            };
            let mut abs: Vec<T> = (0..m.rows())
                .map(|b| contrast.apply::<T>(m.row(b)).abs())
                .collect();
            resampled_quantile(&mut abs, nu)
        }
    };
    let half = (q / scale).as_f64();
    let est = estimate.as_f64();
    Ok(Interval {
        label: contrast.label.clone(),
        estimate: est,
        lower: est - half,
        upper: est + half,
        half_width: half,
        level: nu,
        method,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestMeta {
    pub draws: usize,
    pub seed: u64,
    pub level: f64,
    pub mode: CovMode,
    pub m_tilde: Option<usize>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    pub meta: TestMeta,
}

/// Assembles a report from the observed statistic and the resampled maxima.
pub fn report_from_draws<T: Scalar>(
    statistic: T,
    mut maxima: Vec<T>,
    meta: TestMeta,
) -> TestReport {
    let b = maxima.len();
    let exceed = maxima.iter().filter(|&&m| m >= statistic).count();
    let crit = resampled_quantile(&mut maxima, meta.level);
    TestReport {
        statistic: statistic.as_f64(),
        critical_value: crit.as_f64(),
        p_value: (1 + exceed) as f64 / (b + 1) as f64,
        reject: statistic > crit,
        meta,
    }
}

fn standardized_abs<T: Scalar>(value: T, var: T) -> T {
    if var > T::zero() {
        value.abs() / var.sqrt()
    } else {
        T::zero()
    }
}

/// `max_i √(n−1)|θ̂_i| / ζ̂_i^{1/2}` over the block, calibrated by
/// `max_i |G_i| / ζ̂_i^{1/2}`.
pub fn test_sparse<T: Scalar>(
    fit: &ModelFit<T>,
    cov: &CovarianceModel<T>,
    draws: Option<&DrawSet<T>>,
    which: Block,
    nu: f64,
) -> Result<TestReport> {
    check_level(nu)?;
    let n = fit.n;
    let theta = fit.theta();
    let zeta = cov.zeta();
    let cols: Vec<usize> = which
        .free_nodes(n)
        .filter_map(|i| which.column(n, i))
        .collect();
    let root = T::count(n - 1).sqrt();
    let stat = cols
        .iter()
        .map(|&c| standardized_abs(root * theta[c], zeta[c]))
        .fold(T::zero(), T::max);
    let owned;
    let d = match draws {
        Some(d) => d,
        None => {
            owned = DrawSet::theta_only(cov);
            &owned
        }
    };
    let maxima: Vec<T> = (0..d.theta.rows())
        .map(|b| {
            let g = d.theta.row(b);
            cols.iter()
                .map(|&c| standardized_abs(g[c], zeta[c]))
                .fold(T::zero(), T::max)
        })
        .collect();
    Ok(report_from_draws(
        stat,
        maxima,
        TestMeta {
            draws: d.theta.rows(),
            seed: cov.seed,
            level: nu,
            mode: cov.mode,
            m_tilde: None,
            description: format!("sparse-signal test, {which:?} block"),
        },
    ))
}

/// `{i : |θ̂_i| > √(t ζ̂_i log m / (n−1))}` with `m = n` for α and `n−1` for β.
pub fn recover_support<T: Scalar>(
    fit: &ModelFit<T>,
    zeta: &[T],
    t: f64,
    which: Block,
) -> Vec<usize> {
    let n = fit.n;
    let theta = fit.theta();
    let m = match which {
        Block::Alpha => n,
        Block::Beta => n - 1,
    };
    let log_m = T::count(m).ln();
    let n1 = T::count(n - 1);
    which
        .free_nodes(n)
        .filter(|&i| {
            let c = which.column(n, i).expect("free node has a column");
            theta[c].abs() > (T::lit(t) * zeta[c] * log_m / n1).sqrt()
        })
        .collect()
}

/// `|Ŝ ∩ S₀| / √(|Ŝ|·|S₀|)`; zero for an empty estimate.
pub fn similarity(estimate: &[usize], reference: &[usize]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    if estimate.is_empty() {
        return Ok(0.0);
    }
    let common = estimate.iter().filter(|i| reference.contains(i)).count();
    Ok(common as f64 / ((estimate.len() * reference.len()) as f64).sqrt())
}

/// Groups up to this size are relabelled without repeats from the full
/// permutation list.
const ENUMERATE_LIMIT: usize = 7;

fn canonical(order: &[usize]) -> Vec<usize> {
    let rev: Vec<usize> = order.iter().rev().copied().collect();
    if rev < order.to_vec() {
        rev
    } else {
        order.to_vec()
    }
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for k in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(k);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// The original ordering followed by `m_tilde` relabelings of `group`.
///
/// An ordering and its reverse yield the same consecutive pairs, so they
/// count as one. Small groups draw relabelings without repetition from the
/// enumerated distinct orderings; larger groups draw iid uniform permutations.
pub fn relabelings(group: &[usize], m_tilde: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = draw_rng(seed, u64::MAX);
    let mut out = vec![group.to_vec()];
    if m_tilde == 0 {
        return out;
    }
    if group.len() <= ENUMERATE_LIMIT {
        let original = canonical(group);
        let mut pool: Vec<Vec<usize>> = permutations(group)
            .into_iter()
            .filter(|p| canonical(p) == *p && *p != original)
            .collect();
        pool.shuffle(&mut rng);
        out.extend(pool.into_iter().take(m_tilde));
    } else {
        for _ in 0..m_tilde {
            let mut p = group.to_vec();
            p.shuffle(&mut rng);
            out.push(p);
        }
    }
    out
}

fn check_group(group: &[usize], which: Block, n: usize) -> Result<()> {
    if group.len() < 2 {
        return Err(Error::GroupTooSmall(group.len()));
    }
    for &g in group {
        if g >= n {
            return Err(Error::NodeOutOfRange { node: g, n });
        }
    }
    let _ = which;
    Ok(())
}

/// Standardised difference pairs `(col_a, col_b, 1/√ζ_D)` over a list of node pairs.
fn difference_terms<T: Scalar>(
    cov: &CovarianceModel<T>,
    which: Block,
    pairs: impl Iterator<Item = (usize, usize)>,
) -> Vec<(Option<usize>, Option<usize>, T)> {
    let n = cov.nodes();
    pairs
        .map(|(a, b)| {
            let c = Contrast::difference(which, n, a, b);
            let var = cov.theta_contrast_variance(&c.typed());
            let inv = if var > T::zero() {
                T::one() / var.sqrt()
            } else {
                T::zero()
            };
            (which.column(n, a), which.column(n, b), inv)
        })
        .collect()
}

fn max_difference<T: Scalar>(v: &[T], terms: &[(Option<usize>, Option<usize>, T)], scale: T) -> T {
    let get = |c: Option<usize>| c.map_or(T::zero(), |k| v[k]);
    terms
        .iter()
        .map(|&(a, b, inv)| scale * (get(a) - get(b)).abs() * inv)
        .fold(T::zero(), T::max)
}

fn difference_test<T: Scalar>(
    fit: &ModelFit<T>,
    cov: &CovarianceModel<T>,
    draws: Option<&DrawSet<T>>,
    which: Block,
    pairs: Vec<(usize, usize)>,
    nu: f64,
    m_tilde: Option<usize>,
    description: String,
) -> Result<TestReport> {
    check_level(nu)?;
    let terms = difference_terms(cov, which, pairs.into_iter());
    let theta = fit.theta();
    let root = T::count(fit.n - 1).sqrt();
    let stat = max_difference(&theta, &terms, root);
    let owned;
    let d = match draws {
        Some(d) => d,
        None => {
            owned = DrawSet::theta_only(cov);
            &owned
        }
    };
    let maxima = (0..d.theta.rows())
        .map(|b| max_difference(d.theta.row(b), &terms, T::one()))
        .collect();
    Ok(report_from_draws(
        stat,
        maxima,
        TestMeta {
            draws: d.theta.rows(),
            seed: cov.seed,
            level: nu,
            mode: cov.mode,
            m_tilde,
            description,
        },
    ))
}

/// `max_s max_k √(n−1)|θ̂_{o_k} − θ̂_{o_{k+1}}| / ζ̂_D^{1/2}` over the original
/// ordering and `m_tilde` relabelings; the resampled maxima use the same
/// orderings.
pub fn test_heterogeneity<T: Scalar>(
    fit: &ModelFit<T>,
    cov: &CovarianceModel<T>,
    draws: Option<&DrawSet<T>>,
    which: Block,
    group: &[usize],
    m_tilde: usize,
    nu: f64,
    relabel_seed: u64,
) -> Result<TestReport> {
    check_group(group, which, fit.n)?;
    let orders = relabelings(group, m_tilde, relabel_seed);
    let mut pairs = Vec::new();
    for o in &orders {
        pairs.extend(o.windows(2).map(|w| (w[0], w[1])));
    }
    difference_test(
        fit,
        cov,
        draws,
        which,
        pairs,
        nu,
        Some(m_tilde),
        format!(
            "degree-heterogeneity test, {which:?} block, {} ordering(s)",
            orders.len()
        ),
    )
}

/// All-pairs version `max_{a<b} √(n−1)|θ̂_a − θ̂_b| / ζ̂_{ab,D}^{1/2}`.
pub fn test_heterogeneity_full<T: Scalar>(
    fit: &ModelFit<T>,
    cov: &CovarianceModel<T>,
    draws: Option<&DrawSet<T>>,
    which: Block,
    group: &[usize],
    nu: f64,
) -> Result<TestReport> {
    check_group(group, which, fit.n)?;
    let mut pairs = Vec::new();
    for a in 0..group.len() {
        for b in (a + 1)..group.len() {
            pairs.push((group[a], group[b]));
        }
    }
    difference_test(
        fit,
        cov,
        draws,
        which,
        pairs,
        nu,
        None,
        format!("all-pairs degree-heterogeneity test, {which:?} block"),
    )
}

/// Dense `(n−1)σ²V⁻¹`, for diagnostics and tests.
pub fn g1_covariance<T: Scalar>(n: usize, sigma2: T) -> Result<Matrix<T>> {
    let q = 2 * n - 1;
    let mut m = Matrix::zeros(q, q);
    for i in 0..q {
        for j in 0..q {
            m[(i, j)] = T::count(n - 1) * sigma2 * vinv_entry::<T>(n, i, j)?;
        }
    }
    Ok(m)
}
