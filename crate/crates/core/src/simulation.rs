//! Data-generating processes and the Monte-Carlo study runner.
//!
//! Pairs draw `Z ~ N(0, Σ)`, `X1 = Zᵀb + 𝓔` with `𝓔 ~ N(0, x_sd²)`, and
//! `A = I(α_i + β_j + X1 + Zᵀη − ε > 0)`; the weighted variant counts how
//! many thresholds `ω_l` the index `α_i + β_j + X1 + Zᵀη − ε` exceeds.
//! Covariates and noise use separate RNG streams so that changing the noise
//! law leaves the design unchanged.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit, BandwidthChoice, FitOptions, IsolatedPolicy, ModelFit};
use crate::inference::{
    ci_scalar, draw_rng, recover_support, similarity, test_heterogeneity, test_sparse, Block,
    CiMethod, Contrast, CovMode, CovarianceModel, DrawSet,
};
use crate::kernel::KernelFamily;
use crate::linalg::{dot, Cholesky, Matrix};
use crate::network::DirectedNetwork;
use crate::weighted::{
    fit_weighted, weighted_intervals, WeightedCovariance, WeightedTarget, XiCovarianceForm,
};

/// User-supplied noise sampler; receives the pair's covariate row.
#[derive(Clone)]
pub struct CustomNoise(pub Arc<dyn Fn(&mut ChaCha8Rng, &[f64]) -> f64 + Send + Sync>);

impl fmt::Debug for CustomNoise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomNoise(..)")
    }
}

/// Law of the structural error ε.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Noise {
    Normal {
        mean: f64,
        var: f64,
    },
    /// CDF `[1 + exp{−(x − loc)/scale}]⁻¹`.
    Logistic {
        loc: f64,
        scale: f64,
    },
    /// Finite normal mixture; `variances` are variances, not SDs.
    Mixture {
        weights: Vec<f64>,
        means: Vec<f64>,
        variances: Vec<f64>,
    },
    /// `U(−0.5, 0.5)` when `z1·z2 > 0`, `U(−1, 1)` otherwise.
    HeteroUniform,
    Constant {
        value: f64,
    },
    #[serde(skip)]
    Custom(CustomNoise),
}

impl Noise {
    pub fn standard_normal() -> Self {
        Noise::Normal {
            mean: 0.0,
            var: 1.0,
        }
    }

    pub fn logistic(scale: f64) -> Self {
        Noise::Logistic { loc: 0.0, scale }
    }

    /// 0.75·N(−0.3, 0.91) + 0.25·N(0.9, 0.19): mean 0, variance 1.
    pub fn mnorm1() -> Self {
        Noise::Mixture {
            weights: vec![0.75, 0.25],
            means: vec![-0.3, 0.9],
            variances: vec![0.91, 0.19],
        }
    }

    /// 0.75·N(−0.3, 0.5) + 0.25·N(0.9, 0.5).
    pub fn mnorm2() -> Self {
        Noise::Mixture {
            weights: vec![0.75, 0.25],
            means: vec![-0.3, 0.9],
            variances: vec![0.5, 0.5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        match self {
            Noise::Normal { var, .. } if !(*var >= 0.0) => {
                bad(format!("normal variance {var} is negative"))
            }
            Noise::Logistic { scale, .. } if !(*scale > 0.0) => {
                bad(format!("logistic scale {scale} must be positive"))
            }
            Noise::Mixture {
                weights,
                means,
                variances,
            } => {
                if weights.is_empty()
                    || weights.len() != means.len()
                    || weights.len() != variances.len()
                {
                    return bad(
                        "mixture weights, means and variances must have equal nonzero length"
                            .into(),
                    );
                }
                if weights.iter().any(|&w| !(w >= 0.0))
                    || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9
                {
                    return bad("mixture weights must be nonnegative and sum to 1".into());
                }
                if variances.iter().any(|&v| !(v >= 0.0)) {
                    return bad("mixture variances must be nonnegative".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// One draw given the pair's covariates.
    pub fn sample(&self, rng: &mut ChaCha8Rng, z: &[f64]) -> f64 {
        match self {
            Noise::Normal { mean, var } => {
                let g: f64 = StandardNormal.sample(rng);
                mean + var.sqrt() * g
            }
            Noise::Logistic { loc, scale } => {
                let u: f64 = rng.gen_range(f64::EPSILON..1.0);
                loc + scale * (u / (1.0 - u)).ln()
            }
            Noise::Mixture {
                weights,
                means,
                variances,
            } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut k = weights.len() - 1;
                for (c, &w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        k = c;
                        break;
                    }
                }
                let g: f64 = StandardNormal.sample(rng);
                means[k] + variances[k].sqrt() * g
            }
            Noise::HeteroUniform => {
                let half = if z.len() >= 2 && z[0] * z[1] > 0.0 {
                    0.5
                } else {
                    1.0
                };
                rng.gen_range(-half..half)
            }
            Noise::Constant { value } => *value,
            Noise::Custom(f) => (f.0)(rng, z),
        }
    }
}

/// `count` iid draws on stream `stream` of `seed`. Covariate-dependent laws
/// are rejected.
pub fn draw_noise(noise: &Noise, count: usize, seed: u64, stream: u64) -> Result<Vec<f64>> {
    noise.validate()?;
    if matches!(noise, Noise::HeteroUniform) {
        return Err(Error::InvalidConfig(
            "heteroskedastic noise needs covariates".into(),
        ));
    }
    let mut rng = draw_rng(seed, stream);
    Ok((0..count).map(|_| noise.sample(&mut rng, &[])).collect())
}

/// Degree-parameter schedule. Indices in the formulas below are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Schedule {
    /// `α_i = −0.25 log n + (i−1)(0.25 + ρ₁) log n / (n−1)`.
    Consistency { rho1: f64 },
    /// `α_i = −2i/n` for `i ≤ ⌊ρ₂ n⌋`, zero otherwise.
    Sparse { rho2: f64 },
    /// `α = (−1, 2, −2, 1.5, −3, −1.5·1_d, 0, …)`, `β` the same shifted by five, `d = ⌊n/15⌋`.
    Support,
    /// `α_i = −ρ₃ i / n`.
    Heterogeneity { rho3: f64 },
    /// `R` levels `0..R−1`, `ω_l = step·(l−1)`, `α_i = β_i = value` for `i < n`.
    Weighted {
        levels: usize,
        omega_step: f64,
        value: f64,
    },
}

impl Schedule {
    pub fn weighted_default() -> Self {
        Schedule::Weighted {
            levels: 7,
            omega_step: 0.25,
            value: -0.3,
        }
    }

    /// Level values `π_0..π_{R−1}` and thresholds `ω_1..ω_{R−1}` of a weighted schedule.
    pub fn levels_and_thresholds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match *self {
            Schedule::Weighted {
                levels, omega_step, ..
            } => Some((
                (0..levels).map(|l| l as f64).collect(),
                (1..levels).map(|l| omega_step * (l - 1) as f64).collect(),
            )),
            _ => None,
        }
    }
}

/// True `(α, β)` for the schedule, 0-based vectors of length n.
pub fn param_schedule(schedule: &Schedule, n: usize) -> (Vec<f64>, Vec<f64>) {
    let nf = n as f64;
    let mirror = |alpha: &[f64]| {
        let mut beta = alpha.to_vec();
        beta[n - 1] = 0.0;
        beta
    };
    match *schedule {
        Schedule::Consistency { rho1 } => {
            let ln = nf.ln();
            let alpha: Vec<f64> = (0..n)
                .map(|i| -0.25 * ln + i as f64 * (0.25 * ln + rho1 * ln) / (nf - 1.0))
                .collect();
            let beta = mirror(&alpha);
            (alpha, beta)
        }
        Schedule::Sparse { rho2 } => {
            let k = (rho2 * nf + 1e-9).floor() as usize;
            let alpha: Vec<f64> = (1..=n)
                .map(|i| if i <= k { -2.0 * i as f64 / nf } else { 0.0 })
                .collect();
            let beta = mirror(&alpha);
            (alpha, beta)
        }
        Schedule::Support => {
            let d = n / 15;
            let mut head = vec![-1.0, 2.0, -2.0, 1.5, -3.0];
            head.extend(std::iter::repeat(-1.5).take(d));
            let mut alpha = vec![0.0; n];
            let mut beta = vec![0.0; n];
            for (k, &v) in head.iter().enumerate() {
                if k < n {
                    alpha[k] = v;
                }
                if k + 5 < n - 1 {
                    beta[k + 5] = v;
                }
            }
            (alpha, beta)
        }
        Schedule::Heterogeneity { rho3 } => {
            let alpha: Vec<f64> = (1..=n).map(|i| -rho3 * i as f64 / nf).collect();
            let beta = mirror(&alpha);
            (alpha, beta)
        }
        Schedule::Weighted { value, .. } => {
            let mut alpha = vec![value; n];
            alpha[n - 1] = 0.0;
            (alpha.clone(), alpha)
        }
    }
}

/// Full description of a simulated network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n: usize,
    pub noise: Noise,
    pub schedule: Schedule,
    #[serde(default = "default_eta")]
    pub eta: Vec<f64>,
    /// Covariance of Z.
    #[serde(default = "default_z_cov")]
    pub z_cov: Vec<Vec<f64>>,
    /// `X1 = Zᵀb + 𝓔`.
    #[serde(default = "default_b")]
    pub b: Vec<f64>,
    #[serde(default = "default_x_sd")]
    pub x_sd: f64,
}

fn default_eta() -> Vec<f64> {
    vec![-0.5, 0.5]
}

fn default_z_cov() -> Vec<Vec<f64>> {
    vec![vec![1.0, 0.25], vec![0.25, 1.0]]
}

fn default_b() -> Vec<f64> {
    vec![0.5, -0.5]
}

fn default_x_sd() -> f64 {
    1.0
}

impl DgpSpec {
    /// Standard covariate law: unit variances, correlation 0.25, `b = (0.5, −0.5)`, `η = (−0.5, 0.5)`.
    pub fn new(n: usize, noise: Noise, schedule: Schedule) -> Self {
        Self {
            n,
            noise,
            schedule,
            eta: default_eta(),
            z_cov: default_z_cov(),
            b: default_b(),
            x_sd: default_x_sd(),
        }
    }

    pub fn covariates(&self) -> usize {
        self.eta.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::TooFewNodes {
                min: 3,
                got: self.n,
            });
        }
        self.noise.validate()?;
        let p = self.eta.len();
        if self.b.len() != p || self.z_cov.len() != p || self.z_cov.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidConfig(format!(
                "eta, b and z_cov must all have dimension {p}"
            )));
        }
        if p > 0 {
            let m = Matrix::from_rows(&self.z_cov);
            let symmetric = (0..p).all(|a| (0..p).all(|c| (m[(a, c)] - m[(c, a)]).abs() < 1e-12));
            if !symmetric || Cholesky::new(&m).is_none() {
                return Err(Error::InvalidConfig(
                    "z_cov must be symmetric positive definite".into(),
                ));
            }
        }
        if !(self.x_sd > 0.0) {
            return Err(Error::InvalidConfig("x_sd must be positive".into()));
        }
        if let Schedule::Weighted { levels, .. } = self.schedule {
            if levels < 2 {
                return Err(Error::InvalidConfig(
                    "weighted schedule needs at least two levels".into(),
                ));
            }
        }
        Ok(())
    }

    fn z_factor(&self) -> Option<Cholesky<f64>> {
        if self.eta.is_empty() {
            None
        } else {
            Cholesky::new(&Matrix::from_rows(&self.z_cov))
        }
    }

    fn draw_design(&self, rng: &mut ChaCha8Rng, factor: Option<&Cholesky<f64>>) -> (Vec<f64>, f64) {
        let p = self.eta.len();
        let g: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let z = factor.map(|f| f.lower_mul(&g)).unwrap_or_default();
        let e: f64 = StandardNormal.sample(rng);
        let x1 = dot(&z, &self.b) + self.x_sd * e;
        (z, x1)
    }
}

/// Parameters behind a simulated network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub eta: Vec<f64>,
    pub omega: Option<Vec<f64>>,
    pub levels: Option<Vec<f64>>,
    pub b: Vec<f64>,
    pub x_sd: f64,
}

impl Truth {
    /// `f(x1 | z) = φ((x1 − zᵀb)/x_sd)/x_sd`.
    pub fn oracle_density(&self, x1: &[f64], z: &Matrix<f64>) -> Vec<f64> {
        x1.iter()
            .enumerate()
            .map(|(r, &x)| {
                let u = (x - dot(z.row(r), &self.b)) / self.x_sd;
                (-0.5 * u * u).exp() / ((2.0 * std::f64::consts::PI).sqrt() * self.x_sd)
            })
            .collect()
    }

    /// Nodes with a nonzero true parameter among the free nodes of `block`.
    pub fn support(&self, block: Block) -> Vec<usize> {
        let n = self.alpha.len();
        let v = match block {
            Block::Alpha => &self.alpha,
            Block::Beta => &self.beta,
        };
        block.free_nodes(n).filter(|&i| v[i] != 0.0).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedNetwork {
    pub network: DirectedNetwork<f64>,
    pub truth: Truth,
}

/// Draws one network. Identical `(spec, seed)` reproduce the network bit-for-bit.
pub fn generate_network(spec: &DgpSpec, seed: u64) -> Result<SimulatedNetwork> {
    spec.validate()?;
    let n = spec.n;
    let (alpha, beta) = param_schedule(&spec.schedule, n);
    let weighted = spec.schedule.levels_and_thresholds();
    let net0 = DirectedNetwork::<f64>::new(
        n,
        vec![0.0; n * (n - 1)],
        vec![0.0; n * (n - 1)],
        Matrix::zeros(n * (n - 1), spec.eta.len()),
    )?;
    let idx = *net0.indexing();
    let factor = spec.z_factor();
    let mut rng_design = draw_rng(seed, 0);
    let mut rng_noise = draw_rng(seed, 1);
    let p = spec.eta.len();
    let mut a = Vec::with_capacity(idx.pairs());
    let mut x1 = Vec::with_capacity(idx.pairs());
    let mut z = Vec::with_capacity(idx.pairs() * p);
    for (_, i, j) in idx.iter() {
        let (zr, x) = spec.draw_design(&mut rng_design, factor.as_ref());
        let eps = spec.noise.sample(&mut rng_noise, &zr);
        let latent = alpha[i] + beta[j] + x + dot(&zr, &spec.eta) - eps;
        let value = match &weighted {
            None => {
                if latent > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Some((levels, omega)) => levels[omega.iter().filter(|&&w| latent > w).count()],
        };
        a.push(value);
        x1.push(x);
        z.extend_from_slice(&zr);
    }
    let network = DirectedNetwork::new(n, a, x1, Matrix::from_row_major(idx.pairs(), p, z))?;
    let (levels, omega) = match weighted {
        Some((l, w)) => (Some(l), Some(w)),
        None => (None, None),
    };
    Ok(SimulatedNetwork {
        network,
        truth: Truth {
            alpha,
            beta,
            eta: spec.eta.clone(),
            omega,
            levels,
            b: spec.b.clone(),
            x_sd: spec.x_sd,
        },
    })
}

/// Oracle-transformed responses `(A − I(X1 > 0)) / f(X1 | z)` at a fixed pair
/// `(i, j)` and fixed covariates `z`, redrawing `X1` and ε. Their mean is
/// `α_i + β_j + zᵀη`.
pub fn oracle_transform_draws(
    spec: &DgpSpec,
    i: usize,
    j: usize,
    z: &[f64],
    draws: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    spec.validate()?;
    if i >= spec.n || j >= spec.n || i == j {
        return Err(Error::InvalidConfig(format!("invalid pair ({i}, {j})")));
    }
    if z.len() != spec.eta.len() {
        return Err(Error::DimensionMismatch {
            what: "covariate row",
            expected: spec.eta.len(),
            got: z.len(),
        });
    }
    let (alpha, beta) = param_schedule(&spec.schedule, spec.n);
    let mean_x = dot(z, &spec.b);
    let base = alpha[i] + beta[j] + dot(z, &spec.eta);
    let mut rng_x = draw_rng(seed, 0);
    let mut rng_e = draw_rng(seed, 1);
    Ok((0..draws)
        .map(|_| {
            let g: f64 = StandardNormal.sample(&mut rng_x);
            let x = mean_x + spec.x_sd * g;
            let eps = spec.noise.sample(&mut rng_e, z);
            let a = if base + x - eps > 0.0 { 1.0 } else { 0.0 };
            let pos = if x > 0.0 { 1.0 } else { 0.0 };
            let f = (-0.5 * g * g).exp() / ((2.0 * std::f64::consts::PI).sqrt() * spec.x_sd);
            (a - pos) / f
        })
        .collect())
}

/// How the smoothing bandwidth is chosen across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum BandwidthPolicy {
    /// Grid selection inside every replication.
    #[default]
    PerReplication,
    /// Median of the selections on the first `replications` replications, then fixed.
    Pilot {
        replications: usize,
    },
    Fixed {
        bandwidth: f64,
    },
}

/// Scalar parameter tracked across replications (0-based node indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum McTarget {
    Alpha { node: usize },
    Beta { node: usize },
    AlphaDiff { i: usize, j: usize },
    Eta { index: usize },
    Omega { index: usize },
}

impl McTarget {
    pub fn label(&self) -> String {
        match *self {
            McTarget::Alpha { node } => format!("alpha[{}]", node + 1),
            McTarget::Beta { node } => format!("beta[{}]", node + 1),
            McTarget::AlphaDiff { i, j } => format!("alpha[{}]-alpha[{}]", i + 1, j + 1),
            McTarget::Eta { index } => format!("eta[{}]", index + 1),
            McTarget::Omega { index } => format!("omega[{}]", index + 1),
        }
    }

    fn truth(&self, t: &Truth) -> Result<f64> {
        let get = |v: &[f64], k: usize| {
            v.get(k).copied().ok_or(Error::IndexOutOfRange {
                index: k,
                len: v.len(),
            })
        };
        match *self {
            McTarget::Alpha { node } => get(&t.alpha, node),
            McTarget::Beta { node } => get(&t.beta, node),
            McTarget::AlphaDiff { i, j } => Ok(get(&t.alpha, i)? - get(&t.alpha, j)?),
            McTarget::Eta { index } => get(&t.eta, index),
            McTarget::Omega { index } => match &t.omega {
                Some(w) => get(w, index),
                None => Err(Error::InvalidConfig(
                    "omega target needs a weighted schedule".into(),
                )),
            },
        }
    }
}

fn default_level() -> f64 {
    0.05
}

fn default_draws() -> usize {
    2000
}

/// What each replication computes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum McTask {
    /// Bias, SD and CI coverage of point estimates.
    Estimation {
        targets: Vec<McTarget>,
        #[serde(default = "default_level")]
        level: f64,
        #[serde(default = "default_draws")]
        draws: usize,
        #[serde(default)]
        method: CiMethod,
        #[serde(default)]
        mode: CovMode,
    },
    /// Rejection rate of the sparse-signal test per block.
    SparseTest {
        blocks: Vec<Block>,
        #[serde(default = "default_level")]
        level: f64,
        #[serde(default = "default_draws")]
        draws: usize,
        #[serde(default)]
        mode: CovMode,
    },
    /// Similarity, false positives and negatives of thresholded supports.
    Support {
        blocks: Vec<Block>,
        thresholds: Vec<f64>,
        #[serde(default)]
        mode: CovMode,
    },
    /// Rejection rate of the heterogeneity test per number of relabelings,
    /// all evaluated on the same draws.
    Heterogeneity {
        block: Block,
        m_tildes: Vec<usize>,
        /// Defaults to every free node of the block.
        #[serde(default)]
        group: Option<Vec<usize>>,
        #[serde(default = "default_level")]
        level: f64,
        #[serde(default = "default_draws")]
        draws: usize,
        #[serde(default)]
        mode: CovMode,
    },
    /// Bias, SD and coverage for the weighted model.
    Weighted {
        targets: Vec<McTarget>,
        #[serde(default = "default_level")]
        level: f64,
        #[serde(default = "default_draws")]
        draws: usize,
        #[serde(default)]
        method: CiMethod,
        #[serde(default)]
        form: XiCovarianceForm,
    },
}

fn default_sign() -> Option<i8> {
    Some(1)
}

fn default_workers() -> usize {
    1
}

/// A Monte-Carlo study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McStudy {
    pub dgp: DgpSpec,
    pub replications: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub bandwidth: BandwidthPolicy,
    pub task: McTask,
    /// Imposed sign of the special regressor, `+1` for every built-in DGP;
    /// determined per replication from edge counts when `None`.
    #[serde(default = "default_sign")]
    pub sign: Option<i8>,
    #[serde(default)]
    pub kernel: KernelFamily,
    #[serde(default)]
    pub m_floor: Option<f64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub label: String,
    pub truth: f64,
    pub bias: f64,
    pub sd: f64,
    /// Percentage.
    pub cp: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub label: String,
    pub rejections: usize,
    pub count: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSummary {
    pub label: String,
    pub threshold: f64,
    pub mean_similarity: f64,
    pub sd_similarity: f64,
    pub mean_fp: f64,
    pub mean_fn: f64,
    pub exact_rate: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub replication: usize,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub replications: usize,
    pub succeeded: usize,
    pub failures: Vec<ReplicationFailure>,
    pub targets: Vec<TargetSummary>,
    pub tests: Vec<TestSummary>,
    pub support: Vec<SupportSummary>,
    pub mean_bandwidth: f64,
    pub elapsed_seconds: f64,
}

impl McReport {
    /// Equality of everything except wall-clock time.
    pub fn same_results(&self, other: &McReport) -> bool {
        let mut a = self.clone();
        a.elapsed_seconds = other.elapsed_seconds;
        &a == other
    }
}

/// `(data seed, inference seed)` of replication `rep`.
pub fn replication_seeds(master: u64, rep: usize) -> (u64, u64) {
    let mut rng = draw_rng(master, rep as u64);
    (rng.next_u64(), rng.next_u64())
}

#[derive(Debug, Clone, Default)]
struct RepResult {
    values: Vec<f64>,
    covered: Vec<bool>,
    rejects: Vec<bool>,
    support: Vec<(f64, f64, f64, bool)>,
    bandwidth: f64,
}

impl McStudy {
    fn fit_options(&self, bandwidth: Option<f64>) -> FitOptions<f64> {
        let mut o = FitOptions {
            sign: self.sign,
            // every node keeps its parameter so truths and supports line up;
            // the estimator is well defined for nodes with no edges
            isolated: IsolatedPolicy::Allow,
            kernel: self.kernel,
            ..FitOptions::default()
        };
        if let Some(m) = self.m_floor {
            o.m_floor = m;
        }
        if let Some(h) = bandwidth {
            o.bandwidth = BandwidthChoice::Fixed(h);
        }
        o
    }

    fn is_weighted(&self) -> bool {
        matches!(self.task, McTask::Weighted { .. })
    }

    fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.replications == 0 {
            return Err(Error::InvalidConfig(
                "replication count must be at least 1".into(),
            ));
        }
        if self.is_weighted() != matches!(self.dgp.schedule, Schedule::Weighted { .. }) {
            return Err(Error::InvalidConfig(
                "weighted tasks and weighted schedules must be used together".into(),
            ));
        }
        Ok(())
    }

    /// Fixed bandwidth implied by the policy, running the pilot if needed.
    pub fn resolve_bandwidth(&self) -> Result<Option<f64>> {
        match self.bandwidth {
            BandwidthPolicy::PerReplication => Ok(None),
            BandwidthPolicy::Fixed { bandwidth } => {
                if bandwidth > 0.0 && bandwidth.is_finite() {
                    Ok(Some(bandwidth))
                } else {
                    Err(Error::InvalidBandwidth(bandwidth))
                }
            }
            BandwidthPolicy::Pilot { replications } => {
                let opts = self.fit_options(None);
                let mut hs = Vec::new();
                for rep in 0..replications.max(1) {
                    let (data_seed, _) = replication_seeds(self.master_seed, rep);
                    let sim = generate_network(&self.dgp, data_seed)?;
                    let h = if self.is_weighted() {
                        fit_weighted(&sim.network, sim.truth.levels.as_deref(), &opts)
                            .map(|f| f.bandwidth)
                    } else {
                        fit(&sim.network, &opts).map(|f| f.bandwidth)
                    };
                    if let Ok(h) = h {
                        hs.push(h);
                    }
                }
                if hs.is_empty() {
                    return Err(Error::InvalidConfig(
                        "every pilot replication failed".into(),
                    ));
                }
                hs.sort_by(|a, b| a.total_cmp(b));
                Ok(Some(hs[hs.len() / 2]))
            }
        }
    }

    fn replicate(&self, rep: usize, opts: &FitOptions<f64>) -> Result<RepResult> {
        let (data_seed, inf_seed) = replication_seeds(self.master_seed, rep);
        let sim = generate_network(&self.dgp, data_seed)?;
        let truth = &sim.truth;
        let mut out = RepResult::default();
        if let McTask::Weighted {
            targets,
            level,
            draws,
            method,
            form,
        } = &self.task
        {
            let wf = fit_weighted(&sim.network, truth.levels.as_deref(), opts)?;
            out.bandwidth = wf.bandwidth;
            let cov = WeightedCovariance::new(&wf, *form, (*draws).max(1), inf_seed)?;
            let wt: Vec<WeightedTarget> = targets
                .iter()
                .map(|t| match *t {
                    McTarget::Alpha { node } => Ok(WeightedTarget::Alpha(node)),
                    McTarget::Beta { node } => Ok(WeightedTarget::Beta(node)),
                    McTarget::Eta { index } => Ok(WeightedTarget::Eta(index)),
                    McTarget::Omega { index } => Ok(WeightedTarget::Omega(index)),
                    McTarget::AlphaDiff { .. } => Err(Error::InvalidConfig(
                        "differences are not tracked for weighted fits".into(),
                    )),
                })
                .collect::<Result<_>>()?;
            for (t, iv) in targets
                .iter()
                .zip(weighted_intervals(&wf, &cov, &wt, *level, *method)?)
            {
                let truth = t.truth(truth)?;
                out.values.push(iv.estimate);
                out.covered.push(iv.lower <= truth && truth <= iv.upper);
            }
            return Ok(out);
        }

        let f: ModelFit<f64> = fit(&sim.network, opts)?;
        out.bandwidth = f.bandwidth;
        let n = f.n;
        match &self.task {
            McTask::Estimation {
                targets,
                level,
                draws,
                method,
                mode,
            } => {
                let cov = CovarianceModel::new(&f, *mode, (*draws).max(1), inf_seed)?;
                let set = (*method == CiMethod::Resampled).then(|| DrawSet::new(&cov));
                for t in targets {
                    let contrast = match *t {
                        McTarget::Alpha { node } => Contrast::alpha(node),
                        McTarget::Beta { node } => Contrast::beta(n, node),
                        McTarget::AlphaDiff { i, j } => Contrast::difference(Block::Alpha, n, i, j),
                        McTarget::Eta { index } => Contrast::eta(index),
                        McTarget::Omega { .. } => {
                            return Err(Error::InvalidConfig(
                                "omega targets need a weighted task".into(),
                            ))
                        }
                    };
                    let iv = ci_scalar(&f, &cov, set.as_ref(), &contrast, *level, *method)?;
                    let truth = t.truth(truth)?;
                    out.values.push(iv.estimate);
                    out.covered.push(iv.lower <= truth && truth <= iv.upper);
                }
            }
            McTask::SparseTest {
                blocks,
                level,
                draws,
                mode,
            } => {
                let cov = CovarianceModel::new(&f, *mode, (*draws).max(1), inf_seed)?;
                let set = DrawSet::theta_only(&cov);
                for &b in blocks {
                    out.rejects
                        .push(test_sparse(&f, &cov, Some(&set), b, *level)?.reject);
                }
            }
            McTask::Support {
                blocks,
                thresholds,
                mode,
            } => {
                let cov = CovarianceModel::new(&f, *mode, 1, inf_seed)?;
                let zeta = cov.zeta();
                for &b in blocks {
                    let reference = truth.support(b);
                    for &t in thresholds {
                        let est = recover_support(&f, &zeta, t, b);
                        let m = similarity(&est, &reference)?;
                        let fp = est.iter().filter(|i| !reference.contains(i)).count() as f64;
                        let fnn = reference.iter().filter(|i| !est.contains(i)).count() as f64;
                        out.support.push((m, fp, fnn, est == reference));
                    }
                }
            }
            McTask::Heterogeneity {
                block,
                m_tildes,
                group,
                level,
                draws,
                mode,
            } => {
                let cov = CovarianceModel::new(&f, *mode, (*draws).max(1), inf_seed)?;
                let set = DrawSet::theta_only(&cov);
                let g: Vec<usize> = match group {
                    Some(g) => g.clone(),
                    None => block.free_nodes(n).collect(),
                };
                for &m in m_tildes {
                    let r =
                        test_heterogeneity(&f, &cov, Some(&set), *block, &g, m, *level, inf_seed)?;
                    out.rejects.push(r.reject);
                }
            }
            McTask::Weighted { .. } => unreachable!("handled above"),
        }
        Ok(out)
    }

    /// Runs every replication and aggregates. Deterministic given the master seed.
    pub fn run(&self) -> Result<McReport> {
        self.validate()?;
        let start = Instant::now();
        let h = self.resolve_bandwidth()?;
        let opts = self.fit_options(h);
        let reps = self.replications;
        let workers = self.workers.clamp(1, reps);
        let mut results: Vec<(usize, Result<RepResult>)> = if workers == 1 {
            (0..reps).map(|r| (r, self.replicate(r, &opts))).collect()
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = (0..workers)
                    .map(|w| {
                        let opts = &opts;
                        s.spawn(move || {
                            (w..reps)
                                .step_by(workers)
                                .map(|r| (r, self.replicate(r, opts)))
                                .collect::<Vec<_>>()
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .flat_map(|h| h.join().expect("replication worker panicked"))
                    .collect()
            })
        };
        results.sort_by_key(|(r, _)| *r);

        let mut ok = Vec::new();
        let mut failures = Vec::new();
        for (rep, r) in results {
            match r {
                Ok(v) => ok.push(v),
                Err(e) => failures.push(ReplicationFailure {
                    replication: rep,
                    kind: e.kind().to_string(),
                    message: e.to_string(),
                }),
            }
        }
        let mut report = McReport {
            replications: reps,
            succeeded: ok.len(),
            failures,
            targets: Vec::new(),
            tests: Vec::new(),
            support: Vec::new(),
            mean_bandwidth: mean(&ok.iter().map(|r| r.bandwidth).collect::<Vec<_>>()),
            elapsed_seconds: 0.0,
        };
        let truth = generate_network(&self.dgp, 0)?.truth;
        match &self.task {
            McTask::Estimation { targets, .. } | McTask::Weighted { targets, .. } => {
                for (k, t) in targets.iter().enumerate() {
                    let v: Vec<f64> = ok.iter().map(|r| r.values[k]).collect();
                    let cov = ok.iter().filter(|r| r.covered[k]).count();
                    let tv = t.truth(&truth)?;
                    report.targets.push(TargetSummary {
                        label: t.label(),
                        truth: tv,
                        bias: mean(&v) - tv,
                        sd: sample_sd(&v),
                        cp: percent(cov, v.len()),
                        count: v.len(),
                    });
                }
            }
            McTask::SparseTest { blocks, .. } => {
                for (k, b) in blocks.iter().enumerate() {
                    report
                        .tests
                        .push(rate_summary(format!("sparse-{}", block_name(*b)), &ok, k));
                }
            }
            McTask::Heterogeneity {
                block, m_tildes, ..
            } => {
                for (k, m) in m_tildes.iter().enumerate() {
                    report.tests.push(rate_summary(
                        format!("heterogeneity-{}-m{m}", block_name(*block)),
                        &ok,
                        k,
                    ));
                }
            }
            McTask::Support {
                blocks, thresholds, ..
            } => {
                let mut k = 0;
                for b in blocks {
                    for &t in thresholds {
                        let col: Vec<(f64, f64, f64, bool)> =
                            ok.iter().map(|r| r.support[k]).collect();
                        let m: Vec<f64> = col.iter().map(|c| c.0).collect();
                        report.support.push(SupportSummary {
                            label: format!("support-{}-t{t}", block_name(*b)),
                            threshold: t,
                            mean_similarity: mean(&m),
                            sd_similarity: sample_sd(&m),
                            mean_fp: mean(&col.iter().map(|c| c.1).collect::<Vec<_>>()),
                            mean_fn: mean(&col.iter().map(|c| c.2).collect::<Vec<_>>()),
                            exact_rate: col.iter().filter(|c| c.3).count() as f64
                                / col.len().max(1) as f64,
                            count: col.len(),
                        });
                        k += 1;
                    }
                }
            }
        }
        report.elapsed_seconds = start.elapsed().as_secs_f64();
        Ok(report)
    }
}

fn block_name(b: Block) -> &'static str {
    match b {
        Block::Alpha => "alpha",
        Block::Beta => "beta",
    }
}

fn rate_summary(label: String, ok: &[RepResult], k: usize) -> TestSummary {
    let rejections = ok.iter().filter(|r| r.rejects[k]).count();
    TestSummary {
        label,
        rejections,
        count: ok.len(),
        rate: rejections as f64 / ok.len().max(1) as f64,
    }
}

fn percent(k: usize, n: usize) -> f64 {
    if n == 0 {
        f64::NAN
    } else {
        100.0 * k as f64 / n as f64
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consistency_schedule_boundaries() {
        let (a, b) = param_schedule(&Schedule::Consistency { rho1: 0.0 }, 50);
        assert!((a[0] + 0.25 * 50f64.ln()).abs() < 1e-12);
        assert!(a[49].abs() < 1e-12);
        assert_eq!(b[49], 0.0);
        assert_eq!(a[..49], b[..49]);
        let (a, _) = param_schedule(&Schedule::Consistency { rho1: 0.1 }, 100);
        assert!((a[99] - 0.1 * 100f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sparse_and_support_schedules() {
        let (a, b) = param_schedule(&Schedule::Sparse { rho2: 0.0 }, 40);
        assert!(a.iter().chain(&b).all(|&v| v == 0.0));
        let (a, _) = param_schedule(&Schedule::Sparse { rho2: 0.2 }, 100);
        assert_eq!(a.iter().filter(|&&v| v != 0.0).count(), 20);
        assert!((a[19] + 0.4).abs() < 1e-12);
        let (a, b) = param_schedule(&Schedule::Support, 150);
        assert_eq!(a.iter().filter(|&&v| v != 0.0).count(), 15);
        assert_eq!(b.iter().filter(|&&v| v != 0.0).count(), 15);
        assert_eq!(b[5], -1.0);
        assert_eq!(b[19], -1.5);
        assert_eq!(b[149], 0.0);
    }

    #[test]
    fn heterogeneity_and_weighted_schedules() {
        let (a, b) = param_schedule(&Schedule::Heterogeneity { rho3: 0.6 }, 100);
        assert!((a[0] + 0.006).abs() < 1e-12 && (a[99] + 0.6).abs() < 1e-12);
        assert_eq!(b[99], 0.0);
        let s = Schedule::weighted_default();
        let (a, _) = param_schedule(&s, 10);
        assert_eq!(a[0], -0.3);
        assert_eq!(a[9], 0.0);
        let (levels, omega) = s.levels_and_thresholds().unwrap();
        assert_eq!(levels, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(omega, vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.25]);
    }

    #[test]
    fn mixture_moments() {
        let v = draw_noise(&Noise::mnorm1(), 1_000_000, 3, 0).unwrap();
        let m = mean(&v);
        let s = sample_sd(&v);
        assert!(m.abs() < 0.004, "{m}");
        assert!((s * s - 1.0).abs() < 0.01, "{s}");
    }

    #[test]
    fn logistic_interquartile_range() {
        let mut v = draw_noise(&Noise::logistic(0.5), 400_000, 9, 0).unwrap();
        v.sort_by(|a, b| a.total_cmp(b));
        let iqr = v[300_000] - v[100_000];
        assert!((iqr - 3f64.ln()).abs() < 0.02, "{iqr}");
    }

    #[test]
    fn mixture_validation() {
        let bad = Noise::Mixture {
            weights: vec![0.5, 0.4],
            means: vec![0.0, 0.0],
            variances: vec![1.0, 1.0],
        };
        assert!(bad.validate().is_err());
        assert!(draw_noise(&Noise::HeteroUniform, 3, 0, 0).is_err());
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = DgpSpec::new(
            12,
            Noise::standard_normal(),
            Schedule::Consistency { rho1: 0.0 },
        );
        let a = generate_network(&spec, 4).unwrap();
        let b = generate_network(&spec, 4).unwrap();
        assert_eq!(a.network, b.network);
        let c = generate_network(&spec, 5).unwrap();
        assert_ne!(a.network.edges(), c.network.edges());
    }

    #[test]
    fn noise_change_keeps_design() {
        let s1 = DgpSpec::new(
            8,
            Noise::standard_normal(),
            Schedule::Consistency { rho1: 0.0 },
        );
        let mut s2 = s1.clone();
        s2.noise = Noise::mnorm1();
        let a = generate_network(&s1, 1).unwrap();
        let b = generate_network(&s2, 1).unwrap();
        assert_eq!(a.network.special_regressor(), b.network.special_regressor());
        assert_eq!(a.network.covariates(), b.network.covariates());
    }

    #[test]
    fn negative_infinite_noise_gives_complete_graph() {
        let spec = DgpSpec::new(
            6,
            Noise::Constant {
                value: f64::NEG_INFINITY,
            },
            Schedule::Consistency { rho1: 0.0 },
        );
        let sim = generate_network(&spec, 0).unwrap();
        assert!(sim.network.edges().iter().all(|&a| a == 1.0));
    }

    #[test]
    fn weighted_generation_uses_levels() {
        let spec = DgpSpec::new(10, Noise::standard_normal(), Schedule::weighted_default());
        let sim = generate_network(&spec, 2).unwrap();
        assert!(sim
            .network
            .edges()
            .iter()
            .all(|&a| a.fract() == 0.0 && (0.0..=6.0).contains(&a)));
        assert!(sim.network.edges().iter().any(|&a| a > 1.0));
    }

    #[test]
    fn oracle_density_integrates_to_one() {
        let t = Truth {
            alpha: vec![],
            beta: vec![],
            eta: vec![],
            omega: None,
            levels: None,
            b: vec![0.5],
            x_sd: 1.0,
        };
        let grid: Vec<f64> = (0..4001).map(|k| -10.0 + k as f64 * 0.005).collect();
        let z = Matrix::from_row_major(grid.len(), 1, vec![1.0; grid.len()]);
        let f = t.oracle_density(&grid, &z);
        let integral: f64 = f.iter().sum::<f64>() * 0.005;
        assert!((integral - 1.0).abs() < 1e-6);
    }

    #[test]
    fn seeds_differ_across_replications() {
        assert_ne!(replication_seeds(1, 0), replication_seeds(1, 1));
        assert_eq!(replication_seeds(1, 7), replication_seeds(1, 7));
    }
}
