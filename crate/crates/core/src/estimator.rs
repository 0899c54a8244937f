//! Special-regressor sign, Ŷ transform, projection estimator for η and the
//! closed-form constrained least squares for (α, β).

use serde::{Deserialize, Serialize};

use crate::design::{
    apply_u, apply_ut, apply_vinv, c4_diagnostic, projected_covariates, ztd_vec, ztdz, GramSummary,
    PairIndexing,
};
use crate::error::{check_len, Error, Result};
use crate::kernel::{
    default_bandwidth_grid, select_bandwidth, BandwidthSelection, KernelFamily, KernelIndex,
    SmoothingPlan, DEFAULT_M_FLOOR,
};
use crate::linalg::{compensated_sum, Cholesky, Matrix};
use crate::network::DirectedNetwork;
use crate::scalar::Scalar;

/// Outcome of the binned edge-count trend check on the special regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignDetermination {
    pub sign: i8,
    /// Kendall τ-b between bin index and bin edge count.
    pub tau: f64,
    pub counts: Vec<f64>,
}

pub const DEFAULT_SIGN_BINS: usize = 7;
pub const DEFAULT_TAU_MIN: f64 = 0.5;

/// Kendall τ-b; zero when either margin is constant.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    let (mut concordant, mut discordant, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            match (dx == 0.0, dy == 0.0) {
                (true, true) => {
                    tie_x += 1;
                    tie_y += 1;
                }
                (true, false) => tie_x += 1,
                (false, true) => tie_y += 1,
                (false, false) => {
                    if (dx > 0.0) == (dy > 0.0) {
                        concordant += 1;
                    } else {
                        discordant += 1;
                    }
                }
            }
        }
    }
    let n0 = (n * n.saturating_sub(1) / 2) as i64;
    let denom = (((n0 - tie_x) * (n0 - tie_y)) as f64).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (concordant - discordant) as f64 / denom
    }
}

/// Splits the range of `x1` into `bins` equal-length intervals, sums the edge
/// values falling in each, and reads the sign off the Kendall trend.
pub fn determine_sign<T: Scalar>(
    a: &[T],
    x1: &[T],
    bins: usize,
    tau_min: f64,
) -> Result<SignDetermination> {
    check_len("special regressor", a.len(), x1.len())?;
    if bins < 3 {
        return Err(Error::InvalidConfig(format!(
            "sign determination needs at least 3 bins, got {bins}"
        )));
    }
    let lo = x1.iter().fold(f64::INFINITY, |m, v| m.min(v.as_f64()));
    let hi = x1.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
    let mut counts = vec![0.0; bins];
    if hi > lo {
        let width = (hi - lo) / bins as f64;
        for (&ai, &xi) in a.iter().zip(x1) {
            let k = (((xi.as_f64() - lo) / width) as usize).min(bins - 1);
            counts[k] += ai.as_f64();
        }
    }
    sign_from_counts(counts, tau_min)
}

/// Sign decision from precomputed bin counts.
pub fn sign_from_counts(counts: Vec<f64>, tau_min: f64) -> Result<SignDetermination> {
    let ks: Vec<f64> = (0..counts.len()).map(|k| k as f64).collect();
    let tau = kendall_tau_b(&ks, &counts);
    if tau.abs() < tau_min {
        return Err(Error::AmbiguousSpecialRegressor { tau, tau_min });
    }
    Ok(SignDetermination {
        sign: if tau > 0.0 { 1 } else { -1 },
        tau,
        counts,
    })
}

/// Ŷ together with the densities it was divided by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformedResponse<T> {
    pub yhat: Vec<T>,
    pub fhat: Vec<T>,
}

pub(crate) fn check_density<T: Scalar>(fhat: &[T]) -> Result<()> {
    match fhat
        .iter()
        .position(|&f| !(f > T::zero()) || !f.is_finite())
    {
        Some(row) => Err(Error::NonPositiveDensity {
            row,
            value: fhat[row].as_f64(),
        }),
        None => Ok(()),
    }
}

/// `Ŷ_ij = (A_ij − I(s·x1_ij > 0)) / f̂_ij`.
pub fn transform_y<T: Scalar>(
    a: &[T],
    x1: &[T],
    fhat: &[T],
    sign: i8,
) -> Result<TransformedResponse<T>> {
    check_len("special regressor", a.len(), x1.len())?;
    check_len("densities", a.len(), fhat.len())?;
    check_density(fhat)?;
    let s = if sign < 0 { -T::one() } else { T::one() };
    let yhat = a
        .iter()
        .zip(x1)
        .zip(fhat)
        .map(|((&ai, &xi), &f)| {
            let ind = if s * xi > T::zero() {
                T::one()
            } else {
                T::zero()
            };
            (ai - ind) / f
        })
        .collect();
    Ok(TransformedResponse {
        yhat,
        fhat: fhat.to_vec(),
    })
}

/// `η̂ = (ZᵀDZ)⁻¹ ZᵀDŶ`.
pub fn estimate_eta<T: Scalar>(z: &Matrix<T>, yhat: &[T], g: &GramSummary<T>) -> Result<Vec<T>> {
    if z.cols() == 0 {
        return Ok(Vec::new());
    }
    let m = ztdz(g);
    let chol = Cholesky::new(&m).ok_or_else(|| Error::SingularDesign {
        lambda_min: c4_diagnostic(g).as_f64(),
    })?;
    Ok(chol.solve(&ztd_vec(z, yhat, g)?))
}

/// `θ̂ = V⁻¹Uᵀ(Ŷ − Zη̂)` in the `(α_0..α_{n−1}, β_0..β_{n−2})` layout.
pub fn estimate_theta<T: Scalar>(
    yhat: &[T],
    z: &Matrix<T>,
    eta: &[T],
    g: &GramSummary<T>,
) -> Result<Vec<T>> {
    let idx = g.indexing();
    check_len("response", idx.pairs(), yhat.len())?;
    check_len("eta", z.cols(), eta.len())?;
    let resid = subtract_covariates(yhat, z, eta);
    apply_vinv(idx.nodes(), &apply_ut(idx, &resid)?)
}

fn subtract_covariates<T: Scalar>(y: &[T], z: &Matrix<T>, eta: &[T]) -> Vec<T> {
    y.iter()
        .enumerate()
        .map(|(r, &v)| v - crate::linalg::dot(z.row(r), eta))
        .collect()
}

/// `ε̂ = Ŷ − Uθ̂ − Zη̂`.
pub fn residuals<T: Scalar>(
    idx: &PairIndexing,
    yhat: &[T],
    z: &Matrix<T>,
    theta: &[T],
    eta: &[T],
) -> Result<Vec<T>> {
    let fitted = apply_u(idx, theta)?;
    Ok(subtract_covariates(yhat, z, eta)
        .into_iter()
        .zip(fitted)
        .map(|(r, f)| r - f)
        .collect())
}

/// Mean of squares.
pub fn mean_square<T: Scalar>(v: &[T]) -> T {
    if v.is_empty() {
        return T::zero();
    }
    compensated_sum(v.iter().map(|&x| x * x)) / T::count(v.len())
}

/// `σ̂_ε² = N⁻¹ Σ ε̂²`.
pub fn sigma_eps2<T: Scalar>(residuals: &[T]) -> T {
    mean_square(residuals)
}

/// `σ̂_Q² = N⁻¹ Σ (Ŷ − Ê(Ŷ | X₁, Z))²`; also returns the Q̂ residuals.
pub fn sigma_q2<T: Scalar>(yhat: &[T], conditional_mean: &[T]) -> Result<(T, Vec<T>)> {
    check_len("conditional mean", yhat.len(), conditional_mean.len())?;
    let q: Vec<T> = yhat
        .iter()
        .zip(conditional_mean)
        .map(|(&y, &m)| y - m)
        .collect();
    Ok((mean_square(&q), q))
}

/// Sandwich ingredients for the heteroskedastic samplers.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroComponents<T> {
    /// Per-pair multiplier weights for the θ sampler (ε̂).
    pub eps: Vec<T>,
    /// Per-pair weights for the η sampler (Q̂).
    pub q: Vec<T>,
    pub ztdz: Matrix<T>,
    /// `ZᵀD diag(Q̂²) DZ`.
    pub meat: Matrix<T>,
}

/// `ZᵀD diag(w) DZ`, O(N·p²).
pub fn ztd_w_dz<T: Scalar>(z: &Matrix<T>, w: &[T], g: &GramSummary<T>) -> Result<Matrix<T>> {
    check_len("weights", z.rows(), w.len())?;
    let dz = projected_covariates(z, g)?;
    let p = z.cols();
    let mut out = Matrix::zeros(p, p);
    for a in 0..p {
        for b in a..p {
            let v = compensated_sum((0..z.rows()).map(|r| dz[(r, a)] * w[r] * dz[(r, b)]));
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    Ok(out)
}

pub fn hetero_cov_components<T: Scalar>(fit: &ModelFit<T>) -> HeteroComponents<T> {
    HeteroComponents {
        eps: fit.residuals.clone(),
        q: fit.q_residuals.clone(),
        ztdz: fit.ztdz.clone(),
        meat: fit.meat_q.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum IsolatedPolicy {
    /// Fail with [`Error::IsolatedNodes`].
    #[default]
    Error,
    /// Remove zero-in or zero-out nodes (repeatedly) before fitting.
    Drop,
    /// Fit anyway.
    Allow,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthChoice<T> {
    Fixed(T),
    /// Select over the given grid, or the default geometric grid when `None`.
    Select(Option<Vec<T>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions<T> {
    /// Imposed sign of the special regressor; determined from the data when `None`.
    pub sign: Option<i8>,
    pub sign_bins: usize,
    pub tau_min: f64,
    pub bandwidth: BandwidthChoice<T>,
    pub kernel: KernelFamily,
    pub m_floor: T,
    pub isolated: IsolatedPolicy,
    pub standardize: bool,
    /// Minimum accepted smallest eigenvalue of `ZᵀDZ/N`.
    pub c4_threshold: T,
}

impl<T: Scalar> Default for FitOptions<T> {
    fn default() -> Self {
        Self {
            sign: None,
            sign_bins: DEFAULT_SIGN_BINS,
            tau_min: DEFAULT_TAU_MIN,
            bandwidth: BandwidthChoice::Select(None),
            kernel: KernelFamily::Biweight2,
            m_floor: T::lit(DEFAULT_M_FLOOR),
            isolated: IsolatedPolicy::Error,
            standardize: false,
            c4_threshold: T::lit(1e-8),
        }
    }
}

/// A fitted binary model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelFit<T> {
    pub n: usize,
    pub labels: Vec<String>,
    pub alpha: Vec<T>,
    /// Length n with the last entry fixed at zero.
    pub beta: Vec<T>,
    pub eta: Vec<T>,
    pub covariate_names: Vec<String>,
    pub sign: i8,
    pub sign_tau: Option<f64>,
    pub bandwidth: T,
    pub bandwidth_selection: Option<BandwidthSelection>,
    pub sigma_eps2: T,
    pub sigma_q2: T,
    pub c4_lambda_min: T,
    pub dropped_nodes: Vec<String>,
    #[serde(skip)]
    pub yhat: Vec<T>,
    #[serde(skip)]
    pub fhat: Vec<T>,
    #[serde(skip)]
    pub residuals: Vec<T>,
    #[serde(skip)]
    pub q_residuals: Vec<T>,
    #[serde(skip)]
    pub ztdz: Matrix<T>,
    #[serde(skip)]
    pub meat_q: Matrix<T>,
}

impl<T: Scalar> ModelFit<T> {
    pub fn pairs(&self) -> usize {
        self.n * (self.n - 1)
    }

    /// `(α_0..α_{n−1}, β_0..β_{n−2})`.
    pub fn theta(&self) -> Vec<T> {
        let mut t = self.alpha.clone();
        t.extend_from_slice(&self.beta[..self.n - 1]);
        t
    }
}

/// Network after preprocessing plus the smoothing state shared by the
/// binary and weighted fits.
#[derive(Debug, Clone)]
pub(crate) struct Prepared<T> {
    pub network: DirectedNetwork<T>,
    pub dropped: Vec<String>,
    pub sign: i8,
    pub sign_tau: Option<f64>,
    /// `s·x1`.
    pub x: Vec<T>,
    pub index: KernelIndex<T>,
    pub plan: SmoothingPlan<T>,
    pub selection: Option<BandwidthSelection>,
    pub fhat: Vec<T>,
}

/// Isolated-node handling then optional standardization, as applied before
/// smoothing. Returns the network the estimators see and the removed labels.
pub fn preprocess<T: Scalar>(
    network: &DirectedNetwork<T>,
    options: &FitOptions<T>,
) -> Result<(DirectedNetwork<T>, Vec<String>)> {
    let (mut net, dropped) = match options.isolated {
        IsolatedPolicy::Error => {
            network.check_isolated()?;
            (network.clone(), Vec::new())
        }
        IsolatedPolicy::Drop => network.drop_isolated()?,
        IsolatedPolicy::Allow => (network.clone(), Vec::new()),
    };
    if options.standardize {
        net = net.standardized();
    }
    Ok((net, dropped))
}

pub(crate) fn prepare<T: Scalar>(
    network: &DirectedNetwork<T>,
    options: &FitOptions<T>,
    sign_edges: impl Fn(&DirectedNetwork<T>) -> Vec<T>,
) -> Result<Prepared<T>> {
    let (net, dropped) = preprocess(network, options)?;
    let (sign, sign_tau) = match options.sign {
        Some(s) => (if s < 0 { -1 } else { 1 }, None),
        None => {
            let det = determine_sign(
                &sign_edges(&net),
                net.special_regressor(),
                options.sign_bins,
                options.tau_min,
            )?;
            (det.sign, Some(det.tau))
        }
    };
    let s = if sign < 0 { -T::one() } else { T::one() };
    let x: Vec<T> = net.special_regressor().iter().map(|&v| s * v).collect();
    let initial_h = match &options.bandwidth {
        BandwidthChoice::Fixed(h) => *h,
        BandwidthChoice::Select(_) => T::one(),
    };
    let plan = SmoothingPlan::new(
        net.covariates().cols(),
        net.continuous_columns(),
        net.discrete_columns(),
        initial_h,
        options.m_floor,
        options.kernel,
    )?;
    let index = KernelIndex::new(&x, net.covariates(), &plan)?;
    let (plan, selection) = match &options.bandwidth {
        BandwidthChoice::Fixed(_) => (plan, None),
        BandwidthChoice::Select(grid) => {
            let grid = grid.clone().unwrap_or_else(|| default_bandwidth_grid(&x));
            let sel = select_bandwidth(&index, &plan, &grid)?;
            (plan.with_bandwidth(T::lit(sel.bandwidth))?, Some(sel))
        }
    };
    let fhat = index.densities(&plan)?;
    Ok(Prepared {
        network: net,
        dropped,
        sign,
        sign_tau,
        x,
        index,
        plan,
        selection,
        fhat,
    })
}

pub(crate) fn check_c4<T: Scalar>(g: &GramSummary<T>, threshold: T) -> Result<T> {
    let lambda = c4_diagnostic(g);
    if g.covariates() > 0 && !(lambda > threshold) {
        return Err(Error::SingularDesign {
            lambda_min: lambda.as_f64(),
        });
    }
    Ok(lambda)
}

/// Runs the full binary pipeline.
pub fn fit<T: Scalar>(
    network: &DirectedNetwork<T>,
    options: &FitOptions<T>,
) -> Result<ModelFit<T>> {
    if !network.is_binary() {
        return Err(Error::InvalidConfig(
            "binary fit needs 0/1 edge values; use the weighted fit for leveled networks".into(),
        ));
    }
    let prep = prepare(network, options, |net| net.edges().to_vec())?;
    let net = &prep.network;
    let tr = transform_y(net.edges(), &prep.x, &prep.fhat, 1)?;
    let cond_mean = prep.index.means(&tr.yhat, &prep.plan)?;
    let core = solve_projection(net, &tr.yhat, options.c4_threshold)?;
    let (sigma_q2, q_residuals) = sigma_q2(&tr.yhat, &cond_mean)?;
    let q2: Vec<T> = q_residuals.iter().map(|&q| q * q).collect();
    let meat_q = ztd_w_dz(net.covariates(), &q2, &core.gram)?;
    let n = net.nodes();
    let mut beta = core.theta[n..].to_vec();
    beta.push(T::zero());
    Ok(ModelFit {
        n,
        labels: net.labels().to_vec(),
        alpha: core.theta[..n].to_vec(),
        beta,
        eta: core.eta,
        covariate_names: net.covariate_names().to_vec(),
        sign: prep.sign,
        sign_tau: prep.sign_tau,
        bandwidth: prep.plan.bandwidth,
        bandwidth_selection: prep.selection,
        sigma_eps2: sigma_eps2(&core.residuals),
        sigma_q2,
        c4_lambda_min: core.lambda_min,
        dropped_nodes: prep.dropped,
        yhat: tr.yhat,
        fhat: tr.fhat,
        residuals: core.residuals,
        q_residuals,
        ztdz: ztdz(&core.gram),
        meat_q,
    })
}

/// Two-step least-squares solution for a given response.
#[derive(Debug, Clone)]
pub struct ProjectionSolution<T> {
    pub eta: Vec<T>,
    pub theta: Vec<T>,
    pub residuals: Vec<T>,
    pub gram: GramSummary<T>,
    pub lambda_min: T,
}

/// η̂ by projection, then θ̂ given η̂, then residuals.
pub fn solve_projection<T: Scalar>(
    network: &DirectedNetwork<T>,
    yhat: &[T],
    c4_threshold: T,
) -> Result<ProjectionSolution<T>> {
    let z = network.covariates();
    let gram = GramSummary::new(*network.indexing(), z)?;
    let lambda_min = check_c4(&gram, c4_threshold)?;
    let eta = estimate_eta(z, yhat, &gram)?;
    let theta = estimate_theta(yhat, z, &eta, &gram)?;
    let residuals = residuals(network.indexing(), yhat, z, &theta, &eta)?;
    Ok(ProjectionSolution {
        eta,
        theta,
        residuals,
        gram,
        lambda_min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(
        rng: &mut ChaCha8Rng,
        n: usize,
        p: usize,
    ) -> (PairIndexing, Matrix<f64>, Vec<f64>) {
        let idx = PairIndexing::new(n).unwrap();
        let z = Matrix::from_row_major(
            idx.pairs(),
            p,
            (0..idx.pairs() * p)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        );
        let y = (0..idx.pairs()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        (idx, z, y)
    }

    /// Dense joint least squares over (θ, η) with β_{n−1} = 0.
    fn dense_joint(idx: &PairIndexing, z: &Matrix<f64>, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = idx.nodes();
        let q = idx.params();
        let p = z.cols();
        let mut x = DMatrix::zeros(idx.pairs(), q + p);
        for (row, i, j) in idx.iter() {
            x[(row, i)] = 1.0;
            if let Some(c) = idx.beta_column(j) {
                x[(row, c)] = 1.0;
            }
            for k in 0..p {
                x[(row, q + k)] = z[(row, k)];
            }
        }
        let yv = DVector::from_column_slice(y);
        let sol = (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * yv;
        let _ = n;
        (
            sol.rows(0, q).iter().copied().collect(),
            sol.rows(q, p).iter().copied().collect(),
        )
    }

    #[test]
    fn sign_examples() {
        let det = sign_from_counts(vec![249.0, 149.0, 119.0, 22.0, 17.0, 4.0, 0.0], 0.5).unwrap();
        assert_eq!(det.sign, -1);
        assert!((det.tau + 1.0).abs() < 1e-12);
        assert_eq!(
            sign_from_counts(vec![1.0, 2.0, 5.0, 9.0], 0.5)
                .unwrap()
                .sign,
            1
        );
        assert!(matches!(
            sign_from_counts(vec![3.0; 7], 0.5),
            Err(Error::AmbiguousSpecialRegressor { .. })
        ));
    }

    #[test]
    fn sign_from_raw_regressor() {
        let x1: Vec<f64> = (0..100).map(|k| k as f64 / 10.0).collect();
        let a: Vec<f64> = x1
            .iter()
            .map(|&x| if x < 4.0 { 1.0 } else { 0.0 })
            .collect();
        assert_eq!(determine_sign(&a, &x1, 7, 0.5).unwrap().sign, -1);
    }

    #[test]
    fn transform_examples() {
        let t = transform_y(&[1.0, 1.0, 0.0, 0.0], &[0.3, -0.3, 0.3, -0.3], &[0.5; 4], 1).unwrap();
        assert_eq!(t.yhat, vec![0.0, 2.0, -2.0, 0.0]);
        let flipped = transform_y(&[1.0], &[0.3], &[0.5], -1).unwrap();
        assert_eq!(flipped.yhat, vec![2.0]);
        assert!(matches!(
            transform_y(&[1.0], &[0.3], &[0.0], 1),
            Err(Error::NonPositiveDensity { row: 0, .. })
        ));
    }

    #[test]
    fn exact_recovery_without_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (idx, z, _) = random_instance(&mut rng, 7, 2);
        let theta: Vec<f64> = (0..idx.params())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let eta = vec![0.7, -0.4];
        let mut y = apply_u(&idx, &theta).unwrap();
        for (r, v) in y.iter_mut().enumerate() {
            *v += crate::linalg::dot(z.row(r), &eta);
        }
        let g = GramSummary::new(idx, &z).unwrap();
        let e = estimate_eta(&z, &y, &g).unwrap();
        let t = estimate_theta(&y, &z, &e, &g).unwrap();
        for (a, b) in e.iter().zip(&eta) {
            assert!((a - b).abs() < 1e-8);
        }
        for (a, b) in t.iter().zip(&theta) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_shift_moves_alpha_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (idx, z, y) = random_instance(&mut rng, 6, 1);
        let g = GramSummary::new(idx, &z).unwrap();
        let eta = estimate_eta(&z, &y, &g).unwrap();
        let t0 = estimate_theta(&y, &z, &eta, &g).unwrap();
        let shifted: Vec<f64> = y.iter().map(|v| v + 1.5).collect();
        let eta1 = estimate_eta(&z, &shifted, &g).unwrap();
        assert!((eta1[0] - eta[0]).abs() < 1e-10);
        let t1 = estimate_theta(&shifted, &z, &eta1, &g).unwrap();
        for i in 0..6 {
            assert!((t1[i] - t0[i] - 1.5).abs() < 1e-10);
        }
        for k in 6..11 {
            assert!((t1[k] - t0[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(sigma_eps2(&[0.0f64; 4]), 0.0);
        assert_eq!(sigma_eps2(&[1.0, -1.0, 1.0, -1.0]), 1.0);
        let (s, q) = sigma_q2(&[2.0, -2.0], &[0.0, 0.0]).unwrap();
        assert_eq!(s, 4.0);
        assert_eq!(q, vec![2.0, -2.0]);
    }

    #[test]
    fn sandwich_meat_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (idx, z, w) = random_instance(&mut rng, 6, 2);
        let w: Vec<f64> = w.iter().map(|v| v * v).collect();
        let g = GramSummary::new(idx, &z).unwrap();
        let fast = ztd_w_dz(&z, &w, &g).unwrap();
        let mut u = DMatrix::zeros(idx.pairs(), idx.params());
        for (row, i, j) in idx.iter() {
            u[(row, i)] = 1.0;
            if let Some(c) = idx.beta_column(j) {
                u[(row, c)] = 1.0;
            }
        }
        let d = DMatrix::identity(idx.pairs(), idx.pairs())
            - &u * (u.transpose() * &u).try_inverse().unwrap() * u.transpose();
        let zd = DMatrix::from_row_slice(idx.pairs(), 2, z.as_slice());
        let dense = zd.transpose() * &d * DMatrix::from_diagonal(&DVector::from_vec(w)) * &d * &zd;
        for a in 0..2 {
            for b in 0..2 {
                assert!((fast[(a, b)] - dense[(a, b)]).abs() < 1e-10);
            }
        }
        let zero = ztd_w_dz(&z, &vec![0.0; idx.pairs()], &g).unwrap();
        assert!(zero.as_slice().iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn two_step_equals_joint_least_squares(n in 4usize..9, p in 1usize..3, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (idx, z, y) = random_instance(&mut rng, n, p);
            let g = GramSummary::new(idx, &z).unwrap();
            let eta = estimate_eta(&z, &y, &g).unwrap();
            let theta = estimate_theta(&y, &z, &eta, &g).unwrap();
            let (dt, de) = dense_joint(&idx, &z, &y);
            for (a, b) in eta.iter().zip(&de) {
                prop_assert!((a - b).abs() < 1e-8);
            }
            for (a, b) in theta.iter().zip(&dt) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }

        #[test]
        fn eta_ignores_degree_shifts(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (idx, z, y) = random_instance(&mut rng, 8, 2);
            let g = GramSummary::new(idx, &z).unwrap();
            let shift: Vec<f64> = (0..idx.params()).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let y2: Vec<f64> = y.iter().zip(apply_u(&idx, &shift).unwrap()).map(|(a, b)| a + b).collect();
            let e1 = estimate_eta(&z, &y, &g).unwrap();
            let e2 = estimate_eta(&z, &y2, &g).unwrap();
            for (a, b) in e1.iter().zip(&e2) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
