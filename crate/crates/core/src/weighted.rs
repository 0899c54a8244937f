//! Ordered-threshold extension for networks whose edges take R ordered
//! level values `π_0 < … < π_{R−1}`.
//!
//! Level `l = 1..R−1` contributes the response
//! `Y_l = [I(A ≥ π_l) − I(s·x1 > 0)] / f̂` with mean `−ω_l + α_i + β_j + Zᵀη`.
//! The `L = R−1` level equations are stacked; both `α_{n−1}` and `β_{n−1}`
//! are pinned to zero, so the degree design is the reduced `Ū` with
//! `2n−2` columns and the stacked Gram is `L·ŪᵀŪ`. The thresholds enter
//! through the level-indicator columns `−e_l ⊗ 1_N` and are estimated with
//! η as `ξ = (ω, η)` by projection.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::{
    apply_reduced_gram_inv, apply_u_reduced, apply_ut_reduced, reduced_gram_inv_entry,
    reduced_params, PairIndexing,
};
use crate::error::{check_len, Error, Result};
use crate::estimator::{check_density, prepare, sigma_q2, FitOptions};
use crate::inference::{draw_rng, resampled_quantile, CiMethod, Interval};
use crate::linalg::{compensated_sum, dot, Cholesky, Matrix};
use crate::network::DirectedNetwork;
use crate::scalar::Scalar;
use rand_distr::{Distribution, StandardNormal};

/// Index of `value` among `levels`, exact match.
fn level_of<T: Scalar>(value: T, levels: &[T]) -> Option<usize> {
    levels.iter().position(|&p| p == value)
}

/// Distinct edge values in ascending order.
pub fn infer_levels<T: Scalar>(a: &[T]) -> Vec<T> {
    let mut v: Vec<T> = a.to_vec();
    v.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    v.dedup();
    v
}

/// Checks that levels increase strictly, every edge value is a level and
/// every level is observed.
pub fn validate_levels<T: Scalar>(
    idx: &PairIndexing,
    a: &[T],
    levels: &[T],
    labels: &[String],
) -> Result<()> {
    if levels.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "weighted fit needs at least two levels, got {}",
            levels.len()
        )));
    }
    if levels.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidConfig(
            "level values must increase strictly".into(),
        ));
    }
    let mut seen = vec![false; levels.len()];
    for (row, i, j) in idx.iter() {
        match level_of(a[row], levels) {
            Some(l) => seen[l] = true,
            None => {
                return Err(Error::UnknownLevelValue {
                    i: labels[i].clone(),
                    j: labels[j].clone(),
                    value: a[row].as_f64(),
                })
            }
        }
    }
    if let Some(l) = seen.iter().position(|s| !s) {
        return Err(Error::LevelCollapse {
            level: l,
            value: levels[l].as_f64(),
        });
    }
    Ok(())
}

/// `Y_l = [I(A ≥ π_l) − I(s·x1 > 0)] / f̂` for one level `l ∈ 1..R`.
pub fn transform_y_weighted<T: Scalar>(
    a: &[T],
    x1: &[T],
    fhat: &[T],
    sign: i8,
    levels: &[T],
    level: usize,
) -> Result<Vec<T>> {
    check_len("special regressor", a.len(), x1.len())?;
    check_len("densities", a.len(), fhat.len())?;
    if level == 0 || level >= levels.len() {
        return Err(Error::IndexOutOfRange {
            index: level,
            len: levels.len(),
        });
    }
    check_density(fhat)?;
    let threshold = levels[level];
    let s = if sign < 0 { -T::one() } else { T::one() };
    a.iter()
        .zip(x1)
        .zip(fhat)
        .enumerate()
        .map(|(row, ((&ai, &xi), &f))| {
            if level_of(ai, levels).is_none() {
                return Err(Error::UnknownLevelValue {
                    i: format!("row {row}"),
                    j: String::new(),
                    value: ai.as_f64(),
                });
            }
            let up = if ai >= threshold { T::one() } else { T::zero() };
            let pos = if s * xi > T::zero() {
                T::one()
            } else {
                T::zero()
            };
            Ok((up - pos) / f)
        })
        .collect()
}

/// Stacked least-squares solution for given level responses.
#[derive(Debug, Clone)]
pub struct StackedSolution<T> {
    /// `(ω_1..ω_L, η)`.
    pub xi: Vec<T>,
    /// Reduced layout `(α_0..α_{n−2}, β_0..β_{n−2})`.
    pub theta: Vec<T>,
    /// `Z̃ᵀDZ̃`.
    pub gram: Matrix<T>,
    /// `DZ̃`, stored level-major: entry `(l·N + r, k)`.
    pub dz: Matrix<T>,
}

/// Solves the stacked system: `ξ̂ = (Z̃ᵀDZ̃)⁻¹Z̃ᵀDỸ`, then
/// `θ̂ = (ŪᵀŪ)⁻¹Ūᵀ(mean_l(Y_l + ω̂_l) − Zη̂)`.
pub fn solve_stacked<T: Scalar>(
    idx: &PairIndexing,
    z: &Matrix<T>,
    ys: &[Vec<T>],
) -> Result<StackedSolution<T>> {
    let n = idx.nodes();
    let big_n = idx.pairs();
    let l_count = ys.len();
    if l_count == 0 {
        return Err(Error::InvalidConfig("no level equations".into()));
    }
    for y in ys {
        check_len("level response", big_n, y.len())?;
    }
    check_len("covariate rows", big_n, z.rows())?;
    let p = z.cols();
    let k = l_count + p;
    let lf = T::count(l_count);
    let nf = T::count(big_n);

    let ones = vec![T::one(); big_n];
    let u1 = apply_ut_reduced(idx, &ones)?;
    let w1 = apply_reduced_gram_inv(n, &u1)?;
    let zcols: Vec<Vec<T>> = (0..p).map(|c| crate::design::column(z, c)).collect();
    let uz: Vec<Vec<T>> = zcols
        .iter()
        .map(|c| apply_ut_reduced(idx, c))
        .collect::<Result<_>>()?;
    let wz: Vec<Vec<T>> = uz
        .iter()
        .map(|u| apply_reduced_gram_inv(n, u))
        .collect::<Result<_>>()?;

    let mut gram = Matrix::zeros(k, k);
    let u1w1 = dot(&u1, &w1);
    for a in 0..l_count {
        for b in 0..l_count {
            let diag = if a == b { nf } else { T::zero() };
            gram[(a, b)] = diag - u1w1 / lf;
        }
    }
    for c in 0..p {
        let one_z = compensated_sum(zcols[c].iter().copied());
        let cross = -one_z + dot(&u1, &wz[c]);
        for a in 0..l_count {
            gram[(a, l_count + c)] = cross;
            gram[(l_count + c, a)] = cross;
        }
        for d in c..p {
            let v = lf * (dot(&zcols[c], &zcols[d]) - dot(&uz[c], &wz[d]));
            gram[(l_count + c, l_count + d)] = v;
            gram[(l_count + d, l_count + c)] = v;
        }
    }

    let mut s = vec![T::zero(); big_n];
    for y in ys {
        for (acc, &v) in s.iter_mut().zip(y) {
            *acc += v;
        }
    }
    let us = apply_ut_reduced(idx, &s)?;
    let ws = apply_reduced_gram_inv(n, &us)?;
    let u1ws = dot(&u1, &ws);
    let mut rhs = Vec::with_capacity(k);
    for y in ys {
        rhs.push(-compensated_sum(y.iter().copied()) + u1ws / lf);
    }
    for c in 0..p {
        rhs.push(dot(&zcols[c], &s) - dot(&uz[c], &ws));
    }
    let chol = Cholesky::new(&gram).ok_or_else(|| Error::SingularDesign {
        lambda_min: crate::linalg::symmetric_eigenvalues(&gram.scale(T::one() / nf))[0].as_f64(),
    })?;
    let xi = chol.solve(&rhs);

    let omega_bar = compensated_sum(xi[..l_count].iter().copied()) / lf;
    let eta = &xi[l_count..];
    let target: Vec<T> = (0..big_n)
        .map(|r| s[r] / lf + omega_bar - dot(z.row(r), eta))
        .collect();
    let theta = apply_reduced_gram_inv(n, &apply_ut_reduced(idx, &target)?)?;

    // DZ̃ = Z̃ − (1/L)(J_L ⊗ P)Z̃ with P = Ū(ŪᵀŪ)⁻¹Ūᵀ.
    let p1 = apply_u_reduced(idx, &w1)?;
    let pz: Vec<Vec<T>> = wz
        .iter()
        .map(|w| apply_u_reduced(idx, w))
        .collect::<Result<_>>()?;
    let mut dz = Matrix::zeros(l_count * big_n, k);
    for m in 0..l_count {
        for r in 0..big_n {
            let row = m * big_n + r;
            for a in 0..l_count {
                let e = if a == m { T::one() } else { T::zero() };
                dz[(row, a)] = -e + p1[r] / lf;
            }
            for c in 0..p {
                dz[(row, l_count + c)] = zcols[c][r] - pz[c][r];
            }
        }
    }
    Ok(StackedSolution {
        xi,
        theta,
        gram,
        dz,
    })
}

/// How the error covariance Ω̂ of the stacked system is formed for the ξ sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum XiCovarianceForm {
    /// `Ω̂ = blockdiag(σ̂²_{wQ,l} I_N)`: levels treated as independent.
    LevelDiagonal,
    /// Pair-clustered sandwich on the Q̂ residuals (cross-level correlation kept).
    PairClusterQ,
    /// Pair-clustered sandwich on the stacked ε̂ residuals.
    #[default]
    PairClusterEps,
}

/// A fitted weighted model. `alpha` and `beta` have length n with the last
/// entry fixed at zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedModelFit<T> {
    pub n: usize,
    pub labels: Vec<String>,
    pub levels: Vec<T>,
    pub alpha: Vec<T>,
    pub beta: Vec<T>,
    pub eta: Vec<T>,
    pub omega: Vec<T>,
    pub covariate_names: Vec<String>,
    pub sign: i8,
    pub sign_tau: Option<f64>,
    pub bandwidth: T,
    pub sigma_weps2: T,
    pub sigma_wq2: Vec<T>,
    pub dropped_nodes: Vec<String>,
    /// `Z̃ᵀDZ̃`.
    #[serde(skip)]
    pub gram: Matrix<T>,
    #[serde(skip)]
    pub meat_level_diagonal: Matrix<T>,
    #[serde(skip)]
    pub meat_cluster_q: Matrix<T>,
    #[serde(skip)]
    pub meat_cluster_eps: Matrix<T>,
    /// `mean_l(Y_l + ω̂_l) − α̂_i − β̂_j − Zᵀη̂`.
    #[serde(skip)]
    pub residuals: Vec<T>,
}

impl<T: Scalar> WeightedModelFit<T> {
    /// Reduced θ layout `(α_0..α_{n−2}, β_0..β_{n−2})`.
    pub fn theta(&self) -> Vec<T> {
        let mut t = self.alpha[..self.n - 1].to_vec();
        t.extend_from_slice(&self.beta[..self.n - 1]);
        t
    }

    /// `(ω, η)`.
    pub fn xi(&self) -> Vec<T> {
        let mut v = self.omega.clone();
        v.extend_from_slice(&self.eta);
        v
    }

    pub fn pairs(&self) -> usize {
        self.n * (self.n - 1)
    }
}

fn sandwich_meat<T: Scalar>(
    dz: &Matrix<T>,
    big_n: usize,
    l_count: usize,
    resid: &dyn Fn(usize, usize) -> T,
) -> Matrix<T> {
    let k = dz.cols();
    let mut meat = Matrix::zeros(k, k);
    let mut g = vec![T::zero(); k];
    for r in 0..big_n {
        g.iter_mut().for_each(|v| *v = T::zero());
        for m in 0..l_count {
            let e = resid(r, m);
            let row = dz.row(m * big_n + r);
            for a in 0..k {
                g[a] += row[a] * e;
            }
        }
        for a in 0..k {
            for b in a..k {
                meat[(a, b)] += g[a] * g[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            meat[(a, b)] = meat[(b, a)];
        }
    }
    meat
}

fn level_diagonal_meat<T: Scalar>(dz: &Matrix<T>, big_n: usize, sigma2: &[T]) -> Matrix<T> {
    let k = dz.cols();
    let mut meat = Matrix::zeros(k, k);
    for (m, &s2) in sigma2.iter().enumerate() {
        for r in 0..big_n {
            let row = dz.row(m * big_n + r);
            for a in 0..k {
                for b in a..k {
                    meat[(a, b)] += s2 * row[a] * row[b];
                }
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            meat[(a, b)] = meat[(b, a)];
        }
    }
    meat
}

/// Runs the weighted pipeline. `levels` must be declared for real data;
/// `None` infers them from the distinct edge values.
pub fn fit_weighted<T: Scalar>(
    network: &DirectedNetwork<T>,
    levels: Option<&[T]>,
    options: &FitOptions<T>,
) -> Result<WeightedModelFit<T>> {
    let levels: Vec<T> = match levels {
        Some(l) => l.to_vec(),
        None => infer_levels(network.edges()),
    };
    validate_levels(
        network.indexing(),
        network.edges(),
        &levels,
        network.labels(),
    )?;
    let pi1 = levels[1];
    let prep = prepare(network, options, |net| {
        net.edges()
            .iter()
            .map(|&a| if a >= pi1 { T::one() } else { T::zero() })
            .collect()
    })?;
    let net = &prep.network;
    validate_levels(net.indexing(), net.edges(), &levels, net.labels())?;
    let idx = *net.indexing();
    let n = idx.nodes();
    let big_n = idx.pairs();
    let l_count = levels.len() - 1;
    let ys: Vec<Vec<T>> = (1..levels.len())
        .map(|l| transform_y_weighted(net.edges(), &prep.x, &prep.fhat, 1, &levels, l))
        .collect::<Result<_>>()?;
    let z = net.covariates();
    let sol = solve_stacked(&idx, z, &ys)?;

    let omega = sol.xi[..l_count].to_vec();
    let eta = sol.xi[l_count..].to_vec();
    let fitted = apply_u_reduced(&idx, &sol.theta)?;
    let zeta: Vec<T> = (0..big_n).map(|r| dot(z.row(r), &eta)).collect();
    let lf = T::count(l_count);
    let omega_bar = compensated_sum(omega.iter().copied()) / lf;
    let residuals: Vec<T> = (0..big_n)
        .map(|r| {
            let ybar = compensated_sum(ys.iter().map(|y| y[r])) / lf;
            ybar + omega_bar - fitted[r] - zeta[r]
        })
        .collect();
    let sigma_weps2 = crate::estimator::mean_square(&residuals);

    let mut q = Vec::with_capacity(l_count);
    let mut sigma_wq2 = Vec::with_capacity(l_count);
    for y in &ys {
        let mean = prep.index.means(y, &prep.plan)?;
        let (s2, qres) = sigma_q2(y, &mean)?;
        sigma_wq2.push(s2);
        q.push(qres);
    }
    let eps = |r: usize, m: usize| ys[m][r] + omega[m] - fitted[r] - zeta[r];
    let meat_cluster_eps = sandwich_meat(&sol.dz, big_n, l_count, &eps);
    let meat_cluster_q = sandwich_meat(&sol.dz, big_n, l_count, &|r, m| q[m][r]);
    let meat_level_diagonal = level_diagonal_meat(&sol.dz, big_n, &sigma_wq2);

    let mut alpha = sol.theta[..n - 1].to_vec();
    alpha.push(T::zero());
    let mut beta = sol.theta[n - 1..].to_vec();
    beta.push(T::zero());
    Ok(WeightedModelFit {
        n,
        labels: net.labels().to_vec(),
        levels,
        alpha,
        beta,
        eta,
        omega,
        covariate_names: net.covariate_names().to_vec(),
        sign: prep.sign,
        sign_tau: prep.sign_tau,
        bandwidth: prep.plan.bandwidth,
        sigma_weps2,
        sigma_wq2,
        dropped_nodes: prep.dropped,
        gram: sol.gram,
        meat_level_diagonal,
        meat_cluster_q,
        meat_cluster_eps,
        residuals,
    })
}

/// Samplers for the weighted model: `Ĝ₅` for the reduced θ and `Ĝ₆` for ξ.
#[derive(Debug, Clone)]
pub struct WeightedCovariance<T> {
    idx: PairIndexing,
    sigma: T,
    xi_cov: Matrix<T>,
    xi_factor: Option<Cholesky<T>>,
    pub form: XiCovarianceForm,
    pub draws: usize,
    pub seed: u64,
}

impl<T: Scalar> WeightedCovariance<T> {
    pub fn new(
        fit: &WeightedModelFit<T>,
        form: XiCovarianceForm,
        draws: usize,
        seed: u64,
    ) -> Result<Self> {
        if draws == 0 {
            return Err(Error::InvalidConfig("resampling needs B >= 1".into()));
        }
        let idx = PairIndexing::new(fit.n)?;
        let chol = Cholesky::new(&fit.gram).ok_or(Error::SingularDesign { lambda_min: 0.0 })?;
        let inv = chol.inverse();
        let meat = match form {
            XiCovarianceForm::LevelDiagonal => &fit.meat_level_diagonal,
            XiCovarianceForm::PairClusterQ => &fit.meat_cluster_q,
            XiCovarianceForm::PairClusterEps => &fit.meat_cluster_eps,
        };
        let mut xi_cov = inv.matmul(meat).matmul(&inv).scale(T::count(fit.pairs()));
        xi_cov.symmetrize();
        let xi_factor = if xi_cov.as_slice().iter().all(|&v| v == T::zero()) {
            None
        } else {
            Some(Cholesky::new(&xi_cov).ok_or(Error::SingularDesign { lambda_min: 0.0 })?)
        };
        Ok(Self {
            idx,
            sigma: fit.sigma_weps2.sqrt(),
            xi_cov,
            xi_factor,
            form,
            draws,
            seed,
        })
    }

    pub fn xi_cov(&self) -> &Matrix<T> {
        &self.xi_cov
    }

    /// `√(n−1)(ŪᵀŪ)⁻¹Ūᵀ(σ̂_wε·z)`, covariance `(n−1)σ̂_wε²(ŪᵀŪ)⁻¹`.
    pub fn sample_g5(&self, draw: usize) -> Vec<T> {
        let mut rng = draw_rng(self.seed, 2 * draw as u64);
        let xi: Vec<T> = (0..self.idx.pairs())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                self.sigma * T::lit(z)
            })
            .collect();
        let n = self.idx.nodes();
        let scale = T::count(n - 1).sqrt();
        let ut = apply_ut_reduced(&self.idx, &xi).expect("pair-length noise");
        apply_reduced_gram_inv(n, &ut)
            .expect("reduced layout length")
            .into_iter()
            .map(|v| v * scale)
            .collect()
    }

    pub fn sample_g6(&self, draw: usize) -> Vec<T> {
        let k = self.xi_cov.rows();
        let Some(chol) = &self.xi_factor else {
            return vec![T::zero(); k];
        };
        let mut rng = draw_rng(self.seed, 2 * draw as u64 + 1);
        let z: Vec<T> = (0..k)
            .map(|_| T::lit(StandardNormal.sample(&mut rng)))
            .collect();
        chol.lower_mul(&z)
    }

    /// Variance of reduced-θ coordinate `k` of `Ĝ₅`.
    pub fn theta_variance(&self, k: usize) -> T {
        let n = self.idx.nodes();
        T::count(n - 1)
            * self.sigma
            * self.sigma
            * reduced_gram_inv_entry::<T>(n, k, k).expect("reduced index")
    }
}

/// Parameter addressed by a weighted confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "index")]
pub enum WeightedTarget {
    Alpha(usize),
    Beta(usize),
    Omega(usize),
    Eta(usize),
}

/// Confidence intervals for the requested weighted-model parameters.
/// Parameters pinned at zero (`α_{n−1}`, `β_{n−1}`) get degenerate intervals.
pub fn weighted_intervals<T: Scalar>(
    fit: &WeightedModelFit<T>,
    cov: &WeightedCovariance<T>,
    targets: &[WeightedTarget],
    nu: f64,
    method: CiMethod,
) -> Result<Vec<Interval>> {
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "level must lie in (0, 1], got {nu}"
        )));
    }
    let n = fit.n;
    let l_count = fit.omega.len();
    let z = if nu >= 1.0 {
        0.0
    } else {
        Normal::standard().inverse_cdf(1.0 - nu / 2.0)
    };
    let need_draws = method == CiMethod::Resampled;
    let (g5, g6): (Vec<Vec<T>>, Vec<Vec<T>>) = if need_draws {
        (
            (0..cov.draws).map(|b| cov.sample_g5(b)).collect(),
            (0..cov.draws).map(|b| cov.sample_g6(b)).collect(),
        )
    } else {
        (Vec::new(), Vec::new())
    };
    let root_n1 = (n as f64 - 1.0).sqrt();
    let root_nn = (fit.pairs() as f64).sqrt();
    targets
        .iter()
        .map(|&t| {
            let (label, est, col, theta_block) = match t {
                WeightedTarget::Alpha(i) => (
                    format!("alpha[{}]", i + 1),
                    fit.alpha[i],
                    (i + 1 < n).then_some(i),
                    true,
                ),
                WeightedTarget::Beta(j) => (
                    format!("beta[{}]", j + 1),
                    fit.beta[j],
                    (j + 1 < n).then_some(n - 1 + j),
                    true,
                ),
                WeightedTarget::Omega(l) => {
                    (format!("omega[{}]", l + 1), fit.omega[l], Some(l), false)
                }
                WeightedTarget::Eta(k) => (
                    format!("eta[{}]", k + 1),
                    fit.eta[k],
                    Some(l_count + k),
                    false,
                ),
            };
            let half = match col {
                None => 0.0,
                Some(c) => {
                    let q = match method {
                        CiMethod::ExactNormal => {
                            let var = if theta_block {
                                cov.theta_variance(c)
                            } else {
                                cov.xi_cov()[(c, c)]
                            };
                            z * var.max(T::zero()).as_f64().sqrt()
                        }
                        CiMethod::Resampled => {
                            let src = if theta_block { &g5 } else { &g6 };
                            let mut abs: Vec<T> = src.iter().map(|g| g[c].abs()).collect();
                            resampled_quantile(&mut abs, nu).as_f64()
                        }
                    };
                    q / if theta_block { root_n1 } else { root_nn }
                }
            };
            let e = est.as_f64();
            Ok(Interval {
                label,
                estimate: e,
                lower: e - half,
                upper: e + half,
                half_width: half,
                level: nu,
                method,
            })
        })
        .collect()
}

/// Weighted estimates expected from a binary fit when `R = 2`:
/// `α^w = α^b − α^b_{n−1}`, `β^w = β^b`, `ω_1 = −α^b_{n−1}`, `η^w = η^b`.
pub fn renormalize_binary<T: Scalar>(
    alpha: &[T],
    beta: &[T],
    eta: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>, T) {
    let an = *alpha.last().expect("nonempty alpha");
    (
        alpha.iter().map(|&a| a - an).collect(),
        beta.to_vec(),
        eta.to_vec(),
        -an,
    )
}

/// Reduced-layout parameter count (re-exported for callers sizing draws).
pub fn weighted_theta_len(idx: &PairIndexing) -> usize {
    reduced_params(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(
        rng: &mut ChaCha8Rng,
        n: usize,
        p: usize,
        l: usize,
    ) -> (PairIndexing, Matrix<f64>, Vec<Vec<f64>>) {
        let idx = PairIndexing::new(n).unwrap();
        let z = Matrix::from_row_major(
            idx.pairs(),
            p,
            (0..idx.pairs() * p)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        );
        let ys = (0..l)
            .map(|_| (0..idx.pairs()).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        (idx, z, ys)
    }

    /// Dense stacked LS over (θ_reduced, ω, η).
    fn dense_stacked(idx: &PairIndexing, z: &Matrix<f64>, ys: &[Vec<f64>]) -> DVector<f64> {
        let n = idx.nodes();
        let big_n = idx.pairs();
        let l = ys.len();
        let p = z.cols();
        let q = 2 * n - 2;
        let mut x = DMatrix::zeros(l * big_n, q + l + p);
        let mut y = DVector::zeros(l * big_n);
        for m in 0..l {
            for (r, i, j) in idx.iter() {
                let row = m * big_n + r;
                if i + 1 < n {
                    x[(row, i)] = 1.0;
                }
                if j + 1 < n {
                    x[(row, n - 1 + j)] = 1.0;
                }
                x[(row, q + m)] = -1.0;
                for c in 0..p {
                    x[(row, q + l + c)] = z[(r, c)];
                }
                y[row] = ys[m][r];
            }
        }
        (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * y
    }

    #[test]
    fn stacked_solution_matches_dense_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for &(n, p, l) in &[(4, 1, 1), (5, 2, 3), (7, 2, 2), (6, 0, 4)] {
            let (idx, z, ys) = random_problem(&mut rng, n, p, l);
            let sol = solve_stacked(&idx, &z, &ys).unwrap();
            let dense = dense_stacked(&idx, &z, &ys);
            let q = 2 * n - 2;
            for k in 0..q {
                assert!((sol.theta[k] - dense[k]).abs() < 1e-8, "theta {k}");
            }
            for k in 0..l + p {
                assert!((sol.xi[k] - dense[q + k]).abs() < 1e-8, "xi {k}");
            }
        }
    }

    #[test]
    fn level_validation() {
        let idx = PairIndexing::new(3).unwrap();
        let labels: Vec<String> = (1..=3).map(|i| i.to_string()).collect();
        let a = vec![0.0, 1.0, 2.0, 0.0, 1.0, 2.0];
        assert!(validate_levels(&idx, &a, &[0.0, 1.0, 2.0], &labels).is_ok());
        assert!(matches!(
            validate_levels(&idx, &a, &[0.0, 1.0], &labels),
            Err(Error::UnknownLevelValue { .. })
        ));
        assert!(matches!(
            validate_levels(&idx, &a, &[0.0, 1.0, 2.0, 3.0], &labels),
            Err(Error::LevelCollapse { level: 3, .. })
        ));
        assert_eq!(infer_levels(&a), vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn binary_levels_reduce_to_binary_transform() {
        let a = vec![1.0, 0.0, 1.0, 0.0];
        let x = vec![0.5, -0.5, -0.2, 0.1];
        let f = vec![0.5, 0.25, 0.4, 0.8];
        let w = transform_y_weighted(&a, &x, &f, 1, &[0.0, 1.0], 1).unwrap();
        let b = crate::estimator::transform_y(&a, &x, &f, 1).unwrap().yhat;
        assert_eq!(w, b);
        let bottom = transform_y_weighted(
            &[0.0, 0.0],
            &[0.3, -0.3],
            &[0.5, 0.5],
            1,
            &[0.0, 1.0, 2.0],
            2,
        )
        .unwrap();
        assert_eq!(bottom, vec![-2.0, 0.0]);
    }

    #[test]
    fn level_responses_are_ordered() {
        let levels = [0.0, 1.0, 2.0, 3.0];
        let a = vec![0.0, 1.0, 2.0, 3.0, 2.0, 1.0];
        let x = vec![0.1; 6];
        let f = vec![1.0; 6];
        let mut prev: Option<Vec<f64>> = None;
        for l in 1..4 {
            let y = transform_y_weighted(&a, &x, &f, 1, &levels, l).unwrap();
            if let Some(p) = &prev {
                assert!(p.iter().zip(&y).all(|(u, v)| u >= v));
            }
            prev = Some(y);
        }
    }

    #[test]
    fn g5_covariance_matches_reduced_inverse() {
        let n = 4;
        let fit = WeightedModelFit {
            n,
            labels: vec![],
            levels: vec![0.0, 1.0],
            alpha: vec![0.0; n],
            beta: vec![0.0; n],
            eta: vec![],
            omega: vec![0.0],
            covariate_names: vec![],
            sign: 1,
            sign_tau: None,
            bandwidth: 1.0,
            sigma_weps2: 1.0,
            sigma_wq2: vec![1.0],
            dropped_nodes: vec![],
            gram: Matrix::from_rows(&[vec![12.0]]),
            meat_level_diagonal: Matrix::from_rows(&[vec![12.0]]),
            meat_cluster_q: Matrix::from_rows(&[vec![12.0]]),
            meat_cluster_eps: Matrix::from_rows(&[vec![12.0]]),
            residuals: vec![],
        };
        let draws = 40_000;
        let cov = WeightedCovariance::new(&fit, XiCovarianceForm::LevelDiagonal, draws, 5).unwrap();
        let q = 2 * n - 2;
        let mut acc = vec![0.0; q * q];
        for b in 0..draws {
            let g = cov.sample_g5(b);
            for a in 0..q {
                for c in 0..q {
                    acc[a * q + c] += g[a] * g[c];
                }
            }
        }
        for a in 0..q {
            for c in 0..q {
                let target = 3.0 * reduced_gram_inv_entry::<f64>(n, a, c).unwrap();
                let emp = acc[a * q + c] / draws as f64;
                let se = ((3.0f64 * reduced_gram_inv_entry::<f64>(n, a, a).unwrap())
                    * (3.0 * reduced_gram_inv_entry::<f64>(n, c, c).unwrap())
                    * 2.0
                    / draws as f64)
                    .sqrt();
                assert!(
                    (emp - target).abs() < 4.0 * se,
                    "({a},{c}) {emp} vs {target}"
                );
            }
        }
        // ξ covariance N·G⁻¹·meat·G⁻¹ = 12·(1/12)·12·(1/12) = 1.
        assert!((cov.xi_cov()[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn renormalization_formula() {
        let (a, b, e, w) = renormalize_binary(&[1.0, 2.0, 0.5], &[0.3, -0.1, 0.0], &[0.7]);
        assert_eq!(a, vec![0.5, 1.5, 0.0]);
        assert_eq!(b, vec![0.3, -0.1, 0.0]);
        assert_eq!(e, vec![0.7]);
        assert_eq!(w, -0.5);
    }
}
