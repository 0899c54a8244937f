//! Product biweight kernels, Nadaraya–Watson conditional density and mean
//! estimators over dyads, and the δ-matching bandwidth selector.
//!
//! Pairs are bucketed by the exact bit pattern of their discrete covariates
//! and, inside a bucket, sorted by a key column (the first continuous
//! covariate, or the regressor itself when every covariate is discrete).
//! The compact kernel support then restricts each query to a contiguous
//! window of the sorted bucket.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{CompensatedSum, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    /// `(15/16)(1−u²)²` on `[−1, 1]`.
    #[default]
    Biweight2,
    /// `(15/16)(1−u²)²(7/4 − 21/4·u²)`, mass one and zero second moment.
    Biweight4,
}

impl KernelFamily {
    #[inline]
    pub fn eval<T: Scalar>(self, u: T) -> T {
        // clamping instead of branching keeps the hot loops free of
        // unpredictable jumps; the clamp is exactly zero off the support
        let u2 = u * u;
        let t = (T::one() - u2).max(T::zero());
        let base = T::lit(15.0 / 16.0) * t * t;
        match self {
            KernelFamily::Biweight2 => base,
            KernelFamily::Biweight4 => base * (T::lit(1.75) - T::lit(5.25) * u2),
        }
    }
}

/// A kernel family applied as a product over `continuous` coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec<T> {
    pub family: KernelFamily,
    pub bandwidth: T,
    pub continuous: usize,
}

/// Product kernel `Π K(u_l)`; `u` has `continuous` (for 𝒦_z) or
/// `continuous + 1` (for 𝒦_xz) entries.
pub fn kernel_eval<T: Scalar>(spec: &KernelSpec<T>, u: &[T]) -> Result<T> {
    if u.len() != spec.continuous && u.len() != spec.continuous + 1 {
        return Err(Error::DimensionMismatch {
            what: "kernel argument",
            expected: spec.continuous + 1,
            got: u.len(),
        });
    }
    Ok(u.iter().fold(T::one(), |acc, &v| acc * spec.family.eval(v)))
}

/// Which covariate columns are smoothed and which are matched exactly,
/// plus the bandwidth and density floor.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingPlan<T> {
    continuous: Vec<usize>,
    discrete: Vec<usize>,
    pub bandwidth: T,
    pub m_floor: T,
    pub family: KernelFamily,
}

pub const DEFAULT_M_FLOOR: f64 = 1e-3;

impl<T: Scalar> SmoothingPlan<T> {
    /// `continuous` and `discrete` must partition `0..p`.
    pub fn new(
        p: usize,
        continuous: Vec<usize>,
        discrete: Vec<usize>,
        bandwidth: T,
        m_floor: T,
        family: KernelFamily,
    ) -> Result<Self> {
        let mut seen = vec![false; p];
        for &c in continuous.iter().chain(&discrete) {
            if c >= p || seen[c] {
                return Err(Error::InvalidConfig(format!(
                    "smoothing columns must partition 0..{p}; column {c} is out of range or repeated"
                )));
            }
            seen[c] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidConfig(format!(
                "covariate column {c} is neither continuous nor discrete"
            )));
        }
        check_bandwidth(bandwidth)?;
        if !(m_floor > T::zero()) {
            return Err(Error::InvalidConfig(format!(
                "density floor must be positive, got {m_floor}"
            )));
        }
        Ok(Self {
            continuous,
            discrete,
            bandwidth,
            m_floor,
            family,
        })
    }

    /// Every column continuous, order-2 kernel, default floor.
    pub fn all_continuous(p: usize, bandwidth: T) -> Result<Self> {
        Self::new(
            p,
            (0..p).collect(),
            Vec::new(),
            bandwidth,
            T::lit(DEFAULT_M_FLOOR),
            KernelFamily::Biweight2,
        )
    }

    pub fn continuous(&self) -> &[usize] {
        &self.continuous
    }

    pub fn discrete(&self) -> &[usize] {
        &self.discrete
    }

    pub fn with_bandwidth(&self, bandwidth: T) -> Result<Self> {
        check_bandwidth(bandwidth)?;
        Ok(Self {
            bandwidth,
            ..self.clone()
        })
    }

    pub fn kernel(&self) -> KernelSpec<T> {
        KernelSpec {
            family: self.family,
            bandwidth: self.bandwidth,
            continuous: self.continuous.len(),
        }
    }
}

fn check_bandwidth<T: Scalar>(h: T) -> Result<()> {
    if h > T::zero() && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidBandwidth(h.as_f64()))
    }
}

/// Smallest strip length when a cell is split for two-level pruning.
const STRIP_MIN: usize = 32;

fn cell_key<T: Scalar>(values: impl Iterator<Item = T>) -> Vec<u64> {
    // -0.0 and 0.0 compare equal, so they must share a cell.
    values
        .map(|v| {
            let v = v.as_f64();
            if v == 0.0 { 0.0f64 } else { v }.to_bits()
        })
        .collect()
}

/// Members of a cell are split into runs of consecutive values of the first
/// continuous covariate; each run is sorted by the second one. A query scans
/// only the runs overlapping its window on the first coordinate and, inside
/// each, the binary-searched window on the second.
#[derive(Debug, Clone)]
struct Cell<T> {
    /// Within-strip sort key of each member, ascending inside every strip.
    key: Vec<T>,
    x: Vec<T>,
    /// Continuous covariates, row-major with stride p₁.
    z1: Vec<T>,
    rows: Vec<usize>,
    strips: Vec<Strip<T>>,
}

#[derive(Debug, Clone, Copy)]
struct Strip<T> {
    /// Range of the first continuous covariate over the strip.
    lo: T,
    hi: T,
    start: usize,
    end: usize,
}

/// Pair data bucketed for kernel queries. Independent of the bandwidth, so
/// one index serves a whole bandwidth grid.
#[derive(Debug, Clone)]
pub struct KernelIndex<T> {
    x: Vec<T>,
    z1: Matrix<T>,
    z2: Matrix<T>,
    cells: HashMap<Vec<u64>, Cell<T>>,
    /// Cell of each data row.
    locate: Vec<Vec<u64>>,
}

/// Raw kernel sums for one query point.
#[derive(Debug, Clone, Copy)]
struct Sums<T> {
    /// Σ 𝒦_z over the window (unscaled).
    den: T,
    /// Σ 𝒦_xz (unscaled).
    num: T,
    /// Σ 𝒦_xz · value (unscaled).
    weighted: T,
}

impl<T: Scalar> KernelIndex<T> {
    pub fn new(x: &[T], z: &Matrix<T>, plan: &SmoothingPlan<T>) -> Result<Self> {
        check_len("covariate rows", x.len(), z.rows())?;
        let p = plan.continuous.len() + plan.discrete.len();
        check_len("covariate columns", p, z.cols())?;
        let n = x.len();
        let p1 = plan.continuous.len();
        let mut z1 = Matrix::zeros(n, p1);
        let mut z2 = Matrix::zeros(n, plan.discrete.len());
        for r in 0..n {
            for (k, &c) in plan.continuous.iter().enumerate() {
                z1[(r, k)] = z[(r, c)];
            }
            for (k, &c) in plan.discrete.iter().enumerate() {
                z2[(r, k)] = z[(r, c)];
            }
        }
        let primary = |r: usize| if p1 > 0 { z1[(r, 0)] } else { x[r] };
        let secondary = |r: usize| if p1 > 1 { z1[(r, 1)] } else { primary(r) };
        let by = |f: &dyn Fn(usize) -> T, a: usize, b: usize| {
            f(a).partial_cmp(&f(b))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        };
        let mut members: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
        for r in 0..n {
            members
                .entry(cell_key(z2.row(r).iter().copied()))
                .or_default()
                .push(r);
        }
        let mut cells = HashMap::with_capacity(members.len());
        let mut locate = vec![Vec::new(); n];
        for (key, mut rows) in members {
            rows.sort_by(|&a, &b| by(&primary, a, b));
            let width = if p1 > 1 {
                ((rows.len() as f64).sqrt().ceil() as usize).max(STRIP_MIN)
            } else {
                rows.len()
            };
            let mut cell = Cell {
                key: Vec::with_capacity(rows.len()),
                x: Vec::with_capacity(rows.len()),
                z1: Vec::with_capacity(rows.len() * p1),
                rows: Vec::with_capacity(rows.len()),
                strips: Vec::new(),
            };
            for chunk in rows.chunks_mut(width) {
                let lo = primary(chunk[0]);
                let hi = primary(chunk[chunk.len() - 1]);
                chunk.sort_by(|&a, &b| by(&secondary, a, b));
                let start = cell.rows.len();
                for &r in chunk.iter() {
                    cell.key.push(secondary(r));
                    cell.x.push(x[r]);
                    cell.z1.extend_from_slice(z1.row(r));
                    cell.rows.push(r);
                    locate[r] = key.clone();
                }
                cell.strips.push(Strip {
                    lo,
                    hi,
                    start,
                    end: cell.rows.len(),
                });
            }
            cells.insert(key, cell);
        }
        Ok(Self {
            x: x.to_vec(),
            z1,
            z2,
            cells,
            locate,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self) -> &[T] {
        &self.x
    }

    fn sums(
        &self,
        cell: &Cell<T>,
        x: T,
        z1: &[T],
        values: Option<&[T]>,
        plan: &SmoothingPlan<T>,
    ) -> Sums<T> {
        let h = plan.bandwidth;
        let fam = plan.family;
        let p1 = z1.len();
        let q0 = if p1 > 0 { z1[0] } else { x };
        let q1 = if p1 > 1 { z1[1] } else { q0 };
        let mut den = CompensatedSum::new();
        let mut num = CompensatedSum::new();
        let mut weighted = CompensatedSum::new();
        let inv_h = T::one() / h;
        let first = cell.strips.partition_point(|s| s.hi <= q0 - h);
        for strip in &cell.strips[first..] {
            if strip.lo >= q0 + h {
                break;
            }
            let keys = &cell.key[strip.start..strip.end];
            let lo = strip.start + keys.partition_point(|&k| k <= q1 - h);
            let hi = strip.start + keys.partition_point(|&k| k < q1 + h);
            for m in lo..hi {
                // zero terms are exact no-ops for the compensated sums
                let zr = &cell.z1[m * p1..(m + 1) * p1];
                let kz = z1
                    .iter()
                    .zip(zr)
                    .fold(T::one(), |acc, (&a, &b)| acc * fam.eval((a - b) * inv_h));
                den.add(kz);
                let kxz = kz * fam.eval((x - cell.x[m]) * inv_h);
                num.add(kxz);
                if let Some(v) = values {
                    weighted.add(kxz * v[cell.rows[m]]);
                }
            }
        }
        Sums {
            // With no continuous covariates 𝒦_z ≡ 1 over the whole cell,
            // while the window above only covered the x-support.
            den: if p1 == 0 {
                T::count(cell.rows.len())
            } else {
                den.value()
            },
            num: num.value(),
            weighted: weighted.value(),
        }
    }

    fn cell_for(&self, z2: &[T]) -> Result<&Cell<T>> {
        self.cells
            .get(&cell_key(z2.iter().copied()))
            .ok_or(Error::EmptyCell)
    }

    fn check_query(&self, z1: &[T], z2: &[T]) -> Result<()> {
        check_len("continuous query", self.z1.cols(), z1.len())?;
        check_len("discrete query", self.z2.cols(), z2.len())
    }

    /// Unfloored `f̂(x | z₁, z₂)`.
    pub fn density_raw(&self, x: T, z1: &[T], z2: &[T], plan: &SmoothingPlan<T>) -> Result<T> {
        self.check_query(z1, z2)?;
        let s = self.sums(self.cell_for(z2)?, x, z1, None, plan);
        if s.den == T::zero() {
            return Err(Error::EmptyCell);
        }
        Ok(s.num / (s.den * plan.bandwidth))
    }

    /// `max(f̂(x | z₁, z₂), m_floor)`.
    pub fn density(&self, x: T, z1: &[T], z2: &[T], plan: &SmoothingPlan<T>) -> Result<T> {
        Ok(self.density_raw(x, z1, z2, plan)?.max(plan.m_floor))
    }

    /// Floored density at data row `r`, the row itself included in the sums.
    pub fn density_at(&self, r: usize, plan: &SmoothingPlan<T>) -> Result<T> {
        let key = &self.locate[r];
        let s = self.sums(&self.cells[key], self.x[r], self.z1.row(r), None, plan);
        if s.den == T::zero() {
            return Err(Error::EmptyCell);
        }
        Ok((s.num / (s.den * plan.bandwidth)).max(plan.m_floor))
    }

    /// Floored densities at every data row.
    pub fn densities(&self, plan: &SmoothingPlan<T>) -> Result<Vec<T>> {
        (0..self.len()).map(|r| self.density_at(r, plan)).collect()
    }

    /// `Ê(v | x, z₁, z₂)` with 𝒦_xz weights.
    pub fn mean(
        &self,
        values: &[T],
        x: T,
        z1: &[T],
        z2: &[T],
        plan: &SmoothingPlan<T>,
    ) -> Result<T> {
        check_len("values", self.len(), values.len())?;
        self.check_query(z1, z2)?;
        let s = self.sums(self.cell_for(z2)?, x, z1, Some(values), plan);
        if s.num == T::zero() {
            return Err(Error::EmptyCell);
        }
        Ok(s.weighted / s.num)
    }

    pub fn mean_at(&self, values: &[T], r: usize, plan: &SmoothingPlan<T>) -> Result<T> {
        check_len("values", self.len(), values.len())?;
        let key = &self.locate[r];
        let s = self.sums(
            &self.cells[key],
            self.x[r],
            self.z1.row(r),
            Some(values),
            plan,
        );
        if s.num == T::zero() {
            return Err(Error::EmptyCell);
        }
        Ok(s.weighted / s.num)
    }

    /// NW conditional means at every data row.
    pub fn means(&self, values: &[T], plan: &SmoothingPlan<T>) -> Result<Vec<T>> {
        (0..self.len())
            .map(|r| self.mean_at(values, r, plan))
            .collect()
    }

    pub fn row_query(&self, r: usize) -> (T, &[T], &[T]) {
        (self.x[r], self.z1.row(r), self.z2.row(r))
    }
}

/// Free-function form of [`KernelIndex::density`].
pub fn nw_density<T: Scalar>(
    x: T,
    z1: &[T],
    z2: &[T],
    data: &KernelIndex<T>,
    plan: &SmoothingPlan<T>,
) -> Result<T> {
    data.density(x, z1, z2, plan)
}

/// Free-function form of [`KernelIndex::mean`].
pub fn nw_mean<T: Scalar>(
    values: &[T],
    x: T,
    z1: &[T],
    z2: &[T],
    data: &KernelIndex<T>,
    plan: &SmoothingPlan<T>,
) -> Result<T> {
    data.mean(values, x, z1, z2, plan)
}

/// `N⁻¹ Σ [I(x+δ>0) − I(x>0)] / f̂(x | z)` given densities for the rows
/// with `x ∈ (−δ, 0]` (other rows contribute zero).
fn delta_from_densities<T: Scalar>(
    x: &[T],
    fhat: &dyn Fn(usize) -> Result<T>,
    delta: T,
) -> Result<T> {
    let mut acc = CompensatedSum::new();
    for (r, &xr) in x.iter().enumerate() {
        if xr + delta > T::zero() && !(xr > T::zero()) {
            acc.add(T::one() / fhat(r)?);
        }
    }
    Ok(acc.value() / T::count(x.len()))
}

/// δ̂(h) for one δ, with `plan.bandwidth` as h.
pub fn delta_hat<T: Scalar>(delta: T, data: &KernelIndex<T>, plan: &SmoothingPlan<T>) -> Result<T> {
    delta_from_densities(data.x(), &|r| data.density_at(r, plan), delta)
}

/// Number of δ levels `δ_i = i/M₀` in the selection loss.
pub const DELTA_LEVELS: usize = 10;

/// Default candidate grid: 40 geometric points `c·sd(x)`, `c ∈ [0.05, 3]`.
pub fn default_bandwidth_grid<T: Scalar>(x: &[T]) -> Vec<T> {
    geometric_grid(sample_sd(x), 0.05, 3.0, 40)
}

pub fn geometric_grid<T: Scalar>(scale: T, lo: f64, hi: f64, points: usize) -> Vec<T> {
    if points == 1 {
        return vec![scale * T::lit(lo)];
    }
    let ratio = (hi / lo).ln() / (points - 1) as f64;
    (0..points)
        .map(|k| scale * T::lit(lo * (ratio * k as f64).exp()))
        .collect()
}

pub(crate) fn sample_sd<T: Scalar>(x: &[T]) -> T {
    let n = T::count(x.len());
    let mean = crate::linalg::compensated_sum(x.iter().copied()) / n;
    let ss = crate::linalg::compensated_sum(x.iter().map(|&v| (v - mean) * (v - mean)));
    (ss / (n - T::one())).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthCandidate {
    pub bandwidth: f64,
    /// `None` when some evaluation point had no kernel support.
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSelection {
    pub bandwidth: f64,
    pub loss: f64,
    pub candidates: Vec<BandwidthCandidate>,
}

/// `argmin_h Σ_{i=1}^{M₀} (δ_i − δ̂_i(h))²` over `grid`, ties toward the
/// smaller h.
pub fn select_bandwidth<T: Scalar>(
    data: &KernelIndex<T>,
    plan: &SmoothingPlan<T>,
    grid: &[T],
) -> Result<BandwidthSelection> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty bandwidth grid".into()));
    }
    let x = data.x();
    let window: Vec<usize> = (0..x.len())
        .filter(|&r| x[r] > -T::one() && !(x[r] > T::zero()))
        .collect();
    let mut candidates = Vec::with_capacity(grid.len());
    let mut best: Option<(T, T)> = None;
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    for &h in &sorted {
        let plan_h = plan.with_bandwidth(h)?;
        let mut dens = vec![T::nan(); x.len()];
        let mut ok = true;
        for &r in &window {
            match data.density_at(r, &plan_h) {
                Ok(f) => dens[r] = f,
                Err(Error::EmptyCell) => {
                    ok = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let loss = if ok {
            let mut acc = CompensatedSum::new();
            for i in 1..=DELTA_LEVELS {
                let delta = T::count(i) / T::count(DELTA_LEVELS);
                let d = delta_from_densities(x, &|r| Ok(dens[r]), delta)?;
                acc.add((delta - d) * (delta - d));
            }
            Some(acc.value())
        } else {
            None
        };
        if let Some(l) = loss {
            if best.map_or(true, |(_, bl)| l < bl) {
                best = Some((h, l));
            }
        }
        candidates.push(BandwidthCandidate {
            bandwidth: h.as_f64(),
            loss: loss.map(Scalar::as_f64),
        });
    }
    let (h, loss) = best.ok_or(Error::AllCellsEmpty)?;
    Ok(BandwidthSelection {
        bandwidth: h.as_f64(),
        loss: loss.as_f64(),
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, steps: usize) -> f64 {
        let h = (b - a) / steps as f64;
        let mut s = f(a) + f(b);
        for k in 1..steps {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + k as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn kernel_moments_by_quadrature() {
        for fam in [KernelFamily::Biweight2, KernelFamily::Biweight4] {
            let mass = simpson(|u| fam.eval(u), -1.0, 1.0, 2000);
            assert!((mass - 1.0).abs() < 1e-6, "{fam:?} mass {mass}");
            let first = simpson(|u| u * fam.eval(u), -1.0, 1.0, 2000);
            assert!(first.abs() < 1e-12);
        }
        let m2 = simpson(|u| u * u * KernelFamily::Biweight4.eval(u), -1.0, 1.0, 2000);
        assert!(m2.abs() < 1e-6);
        let m2_order2 = simpson(|u| u * u * KernelFamily::Biweight2.eval(u), -1.0, 1.0, 2000);
        assert!((m2_order2 - 1.0 / 7.0).abs() < 1e-9);
    }

    #[test]
    fn kernel_eval_examples() {
        let spec = KernelSpec {
            family: KernelFamily::Biweight2,
            bandwidth: 1.0,
            continuous: 0,
        };
        assert_eq!(kernel_eval(&spec, &[0.0]).unwrap(), 15.0 / 16.0);
        assert_eq!(kernel_eval(&spec, &[1.0]).unwrap(), 0.0);
        let spec2 = KernelSpec {
            continuous: 2,
            ..spec
        };
        assert_eq!(kernel_eval(&spec2, &[0.3, -1.2, 0.0]).unwrap(), 0.0);
        let k = KernelFamily::Biweight2.eval(0.3) * KernelFamily::Biweight2.eval(0.5);
        assert_eq!(kernel_eval(&spec2, &[0.3, 0.5]).unwrap(), k);
        assert!(kernel_eval(&spec2, &[0.3]).is_err());
    }

    #[test]
    fn biweight2_is_symmetric_nonnegative() {
        for k in 0..=200 {
            let u = -1.5 + 3.0 * k as f64 / 200.0;
            let v = KernelFamily::Biweight2.eval(u);
            assert!(v >= 0.0);
            assert_eq!(v, KernelFamily::Biweight2.eval(-u));
        }
    }

    #[test]
    fn plan_validates_partition() {
        assert!(
            SmoothingPlan::new(3, vec![0, 2], vec![1], 0.5, 1e-3, KernelFamily::Biweight2).is_ok()
        );
        assert!(
            SmoothingPlan::new(3, vec![0], vec![1], 0.5, 1e-3, KernelFamily::Biweight2).is_err()
        );
        assert!(
            SmoothingPlan::new(2, vec![0, 1], vec![1], 0.5, 1e-3, KernelFamily::Biweight2).is_err()
        );
        assert!(
            SmoothingPlan::new(1, vec![0], vec![], 0.0, 1e-3, KernelFamily::Biweight2).is_err()
        );
        assert!(SmoothingPlan::new(1, vec![0], vec![], 0.5, 0.0, KernelFamily::Biweight2).is_err());
    }

    #[test]
    fn single_point_density() {
        let h = 0.4;
        let z = Matrix::<f64>::zeros(1, 0);
        let plan = SmoothingPlan::all_continuous(0, h).unwrap();
        let idx = KernelIndex::new(&[0.7], &z, &plan).unwrap();
        let f = idx.density(0.7, &[], &[], &plan).unwrap();
        assert!((f - 15.0 / 16.0 / h).abs() < 1e-15);
        assert_eq!(idx.mean(&[3.5], 0.7, &[], &[], &plan).unwrap(), 3.5);
    }

    #[test]
    fn unmatched_discrete_cell_is_empty() {
        let z = Matrix::from_rows(&[vec![0.1, 1.0], vec![0.2, 1.0]]);
        let plan =
            SmoothingPlan::new(2, vec![0], vec![1], 0.5, 1e-3, KernelFamily::Biweight2).unwrap();
        let idx = KernelIndex::new(&[0.0, 0.1], &z, &plan).unwrap();
        assert!(matches!(
            idx.density(0.0, &[0.1], &[2.0], &plan),
            Err(Error::EmptyCell)
        ));
        assert!(matches!(
            idx.density(0.0, &[5.0], &[1.0], &plan),
            Err(Error::EmptyCell)
        ));
        assert!(idx.density(0.0, &[0.1], &[1.0], &plan).is_ok());
    }

    #[test]
    fn floor_applies_when_raw_density_vanishes() {
        // x far from every data point but z inside the window.
        let z = Matrix::from_rows(&[vec![0.0], vec![0.1]]);
        let plan = SmoothingPlan::all_continuous(1, 0.5).unwrap();
        let idx = KernelIndex::new(&[0.0, 0.0], &z, &plan).unwrap();
        assert_eq!(idx.density_raw(10.0, &[0.0], &[], &plan).unwrap(), 0.0);
        assert_eq!(idx.density(10.0, &[0.0], &[], &plan).unwrap(), 1e-3);
    }

    fn brute_density(x: &[f64], z: &Matrix<f64>, qx: f64, qz: &[f64], h: f64) -> f64 {
        let k = KernelFamily::Biweight2;
        let (mut num, mut den) = (0.0, 0.0);
        for r in 0..x.len() {
            let kz: f64 = (0..z.cols())
                .map(|c| k.eval((qz[c] - z[(r, c)]) / h))
                .product();
            den += kz;
            num += kz * k.eval((qx - x[r]) / h);
        }
        (num / (den * h)).max(1e-3)
    }

    fn random_data(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Matrix<f64>) {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let data: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (x, Matrix::from_row_major(n, 2, data))
    }

    #[test]
    fn pruned_sums_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (x, z) = random_data(&mut rng, 400);
        let plan = SmoothingPlan::all_continuous(2, 0.35).unwrap();
        let idx = KernelIndex::new(&x, &z, &plan).unwrap();
        let dens = idx.densities(&plan).unwrap();
        for r in 0..x.len() {
            let b = brute_density(&x, &z, x[r], z.row(r), 0.35);
            assert!((dens[r] - b).abs() < 1e-12 * b.max(1.0));
        }
    }

    #[test]
    fn mean_of_constant_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (x, z) = random_data(&mut rng, 200);
        let plan = SmoothingPlan::all_continuous(2, 0.5).unwrap();
        let idx = KernelIndex::new(&x, &z, &plan).unwrap();
        let v = vec![2.5; 200];
        for m in idx.means(&v, &plan).unwrap() {
            assert!((m - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_hat_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, z) = random_data(&mut rng, 300);
        let plan = SmoothingPlan::all_continuous(2, 0.6).unwrap();
        let idx = KernelIndex::new(&x, &z, &plan).unwrap();
        assert_eq!(delta_hat(0.0, &idx, &plan).unwrap(), 0.0);
        // A floor above every raw density makes f̂ ≡ m_floor.
        let flat =
            SmoothingPlan::new(2, vec![0, 1], vec![], 0.6, 1e6, KernelFamily::Biweight2).unwrap();
        let count = x.iter().filter(|&&v| v > -1.0 && v <= 0.0).count();
        let d = delta_hat(1.0, &idx, &flat).unwrap();
        assert!((d - count as f64 / (300.0 * 1e6)).abs() < 1e-18);
    }

    #[test]
    fn singleton_grid_selects_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, z) = random_data(&mut rng, 200);
        let plan = SmoothingPlan::all_continuous(2, 1.0).unwrap();
        let idx = KernelIndex::new(&x, &z, &plan).unwrap();
        let sel = select_bandwidth(&idx, &plan, &[0.8]).unwrap();
        assert_eq!(sel.bandwidth, 0.8);
        assert!(select_bandwidth(&idx, &plan, &[]).is_err());
    }

    #[test]
    fn ties_break_toward_smaller_bandwidth() {
        // A huge floor makes every candidate's loss identical.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (x, z) = random_data(&mut rng, 100);
        let plan =
            SmoothingPlan::new(2, vec![0, 1], vec![], 1.0, 1e9, KernelFamily::Biweight2).unwrap();
        let idx = KernelIndex::new(&x, &z, &plan).unwrap();
        let sel = select_bandwidth(&idx, &plan, &[2.0, 0.5, 1.0]).unwrap();
        assert_eq!(sel.bandwidth, 0.5);
    }

    #[test]
    fn geometric_grid_endpoints() {
        let g = geometric_grid(2.0f64, 0.05, 3.0, 40);
        assert_eq!(g.len(), 40);
        assert!((g[0] - 0.1).abs() < 1e-12 && (g[39] - 6.0).abs() < 1e-9);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    proptest! {
        #[test]
        fn density_is_permutation_invariant(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, z) = random_data(&mut rng, 60);
            let plan = SmoothingPlan::all_continuous(2, 0.7).unwrap();
            let idx = KernelIndex::new(&x, &z, &plan).unwrap();
            let mut perm: Vec<usize> = (0..60).collect();
            perm.shuffle(&mut rng);
            let px: Vec<f64> = perm.iter().map(|&r| x[r]).collect();
            let pz = Matrix::from_rows(&perm.iter().map(|&r| z.row(r).to_vec()).collect::<Vec<_>>());
            let pidx = KernelIndex::new(&px, &pz, &plan).unwrap();
            let (qx, qz1, _) = idx.row_query(0);
            let a = idx.density(qx, qz1, &[], &plan).unwrap();
            let b = pidx.density(qx, qz1, &[], &plan).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            prop_assert!(a >= plan.m_floor);
        }

        #[test]
        fn delta_hat_monotone(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, z) = random_data(&mut rng, 80);
            let plan = SmoothingPlan::all_continuous(2, 0.8).unwrap();
            let idx = KernelIndex::new(&x, &z, &plan).unwrap();
            let mut prev = 0.0;
            for i in 1..=10 {
                let d = delta_hat(i as f64 / 10.0, &idx, &plan).unwrap();
                prop_assert!(d >= prev);
                prev = d;
            }
        }
    }
}
