//! Model primitives shared by every other module: the parameter set, points
//! of the simplex `Δ` and of the product domain `D = Δ×Δ`, the floored
//! weight, the jump kernel `π`, the joint-support functional `H`, and the
//! small-joint-support region `S^δ`.

use crate::error::{Error, Result};
use crate::oracles::{self, GridSpec, InequalityReport};
use serde::Serialize;

/// Absolute tolerance on the coordinate sum for simplex membership checks.
pub const SIMPLEX_SUM_TOLERANCE: f64 = 1e-12;

/// Largest sum defect the constructor will absorb by renormalizing; above
/// this the input is treated as a bug and rejected.
pub const SIMPLEX_RENORM_TOLERANCE: f64 = 1e-9;

/// Model parameters: vertex count `d`, reinforcement exponent `alpha`,
/// weight floor `delta`, and the normalization offset `n0` of the occupation
/// measures. All derived thresholds are computed from here so that every
/// module shares one set of formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Params {
    d: usize,
    alpha: f64,
    delta: f64,
    n0: u64,
}

impl Params {
    /// Builds a parameter set with the default offset `n0 = d`.
    pub fn new(d: usize, alpha: f64, delta: f64) -> Result<Self> {
        Self::with_n0(d, alpha, delta, d as u64)
    }

    /// Builds a parameter set with an explicit offset.
    ///
    /// `delta < 1/d` is required so the uniform point lies strictly inside
    /// the un-floored region, where the kernel is smooth.
    pub fn with_n0(d: usize, alpha: f64, delta: f64, n0: u64) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidParams(format!("d = {d} must be >= 2")));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParams(format!("alpha = {alpha} must be > 0")));
        }
        if !(delta > 0.0) || !(delta < 1.0 / d as f64) {
            return Err(Error::InvalidParams(format!(
                "delta = {delta} must satisfy 0 < delta < 1/d = {}",
                1.0 / d as f64
            )));
        }
        if n0 == 0 {
            return Err(Error::InvalidParams("n0 must be >= 1".into()));
        }
        Ok(Self { d, alpha, delta, n0 })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn n0(&self) -> u64 {
        self.n0
    }

    /// `d^(1/(alpha+1))`, the constant in front of `delta` in both derived
    /// thresholds.
    pub fn d_pow(&self) -> f64 {
        (self.d as f64).powf(1.0 / (self.alpha + 1.0))
    }

    /// `2 d^(1/(alpha+1)) delta`: joint support below this means the state
    /// lies in the trapping region `S^δ`.
    pub fn s_delta_bound(&self) -> f64 {
        2.0 * self.d_pow() * self.delta
    }

    /// `(3/2) d^(1/(alpha+1)) delta`: above this level the derivative of the
    /// joint-support functional along the flow is non-positive (for `alpha`
    /// large enough).
    pub fn lyapunov_threshold(&self) -> f64 {
        1.5 * self.d_pow() * self.delta
    }
}

/// A point of the closed `(d-1)`-simplex: `d` nonnegative coordinates
/// summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimplexPoint {
    coords: Vec<f64>,
}

impl SimplexPoint {
    /// Validates and normalizes raw coordinates.
    ///
    /// Coordinates in `[-1e-9, 0)` are clamped to zero and a sum defect up to
    /// `1e-9` is absorbed by renormalizing; anything worse is rejected.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::InvalidSimplex(format!(
                "dimension {} must be >= 2",
                coords.len()
            )));
        }
        let mut coords = coords;
        for c in coords.iter_mut() {
            if !c.is_finite() || *c < -SIMPLEX_RENORM_TOLERANCE {
                return Err(Error::InvalidSimplex(format!("coordinate {c} is negative")));
            }
            if *c < 0.0 {
                *c = 0.0;
            }
        }
        let sum: f64 = coords.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_RENORM_TOLERANCE {
            return Err(Error::InvalidSimplex(format!(
                "coordinates sum to {sum}, defect {:e} above {:e}",
                (sum - 1.0).abs(),
                SIMPLEX_RENORM_TOLERANCE
            )));
        }
        for c in coords.iter_mut() {
            *c /= sum;
        }
        Ok(Self { coords })
    }

    /// Wraps coordinates that are known-normalized (e.g. a kernel output).
    pub(crate) fn from_normalized(coords: Vec<f64>) -> Self {
        debug_assert!(
            (coords.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_SUM_TOLERANCE,
            "from_normalized called with unnormalized coordinates"
        );
        debug_assert!(coords.iter().all(|c| *c >= 0.0));
        Self { coords }
    }

    /// The uniform point `U = (1/d, ..., 1/d)`.
    pub fn uniform(d: usize) -> Self {
        Self {
            coords: vec![1.0 / d as f64; d],
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn min_coord(&self) -> f64 {
        self.coords.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// L¹ distance to another point.
    pub fn l1_distance(&self, other: &Self) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

/// A state of the product domain `D = Δ×Δ`: the pair `z = (x, y)` of the two
/// occupation measures.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProductPoint {
    x: SimplexPoint,
    y: SimplexPoint,
}

impl ProductPoint {
    pub fn new(x: SimplexPoint, y: SimplexPoint) -> Result<Self> {
        if x.dim() != y.dim() {
            return Err(Error::InvalidSimplex(format!(
                "component dimensions differ: {} vs {}",
                x.dim(),
                y.dim()
            )));
        }
        Ok(Self { x, y })
    }

    /// The pair `(U, U)`, the unique interior equilibrium of the flow.
    pub fn uniform(d: usize) -> Self {
        Self {
            x: SimplexPoint::uniform(d),
            y: SimplexPoint::uniform(d),
        }
    }

    pub fn x(&self) -> &SimplexPoint {
        &self.x
    }

    pub fn y(&self) -> &SimplexPoint {
        &self.y
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    /// L¹ distance on `R^(2d)`.
    pub fn l1_distance(&self, other: &Self) -> f64 {
        self.x.l1_distance(&other.x) + self.y.l1_distance(&other.y)
    }
}

/// The floored weight `f(v) = delta` for `v <= delta`, `v` otherwise.
///
/// The comparison is `<=` exactly; no epsilon slack.
pub fn floor_weight(v: f64, params: &Params) -> Result<f64> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!("floor_weight input {v} outside [0, 1]")));
    }
    Ok(floor_weight_unchecked(v, params.delta))
}

#[inline]
pub(crate) fn floor_weight_unchecked(v: f64, delta: f64) -> f64 {
    if v <= delta {
        delta
    } else {
        v
    }
}

/// Writes the jump kernel `π(p)` into `out`: `π_i = f(p_i)^(-alpha) /
/// Σ_k f(p_k)^(-alpha)`.
///
/// The powers are taken after factoring out the smallest floored coordinate,
/// so every term lies in `(0, 1]` and no exponent overflows even for large
/// `alpha`.
pub(crate) fn kernel_into(p: &[f64], params: &Params, out: &mut [f64]) {
    debug_assert_eq!(p.len(), out.len());
    let alpha = params.alpha;
    let delta = params.delta;
    let mut min_f = f64::INFINITY;
    for (&v, o) in p.iter().zip(out.iter_mut()) {
        let f = floor_weight_unchecked(v, delta);
        *o = f;
        if f < min_f {
            min_f = f;
        }
    }
    let mut sum = 0.0;
    for o in out.iter_mut() {
        // (min_f / f)^alpha = f^(-alpha) scaled by min_f^alpha
        *o = (min_f / *o).powf(alpha);
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// The jump kernel as a simplex point. Entry `i` is strictly decreasing in
/// `p_i` on `(delta, 1]`: vertices the other particle occupies heavily are
/// avoided.
pub fn kernel(p: &SimplexPoint, params: &Params) -> SimplexPoint {
    let mut out = vec![0.0; p.dim()];
    kernel_into(p.coords(), params, &mut out);
    SimplexPoint::from_normalized(out)
}

/// The joint-support functional `H(z) = Σ_i x_i y_i`. Small `H` means the
/// two occupation measures concentrate on nearly disjoint vertex sets.
pub fn joint_support(z: &ProductPoint) -> f64 {
    z.x()
        .coords()
        .iter()
        .zip(z.y().coords())
        .map(|(a, b)| a * b)
        .sum()
}

/// Membership in `S^δ = { z : H(z) < 2 d^(1/(alpha+1)) delta }` (strict).
pub fn in_s_delta(z: &ProductPoint, params: &Params) -> bool {
    joint_support(z) < params.s_delta_bound()
}

/// Report for the two largeness conditions on `alpha`.
///
/// Condition (2) is the exact inequality `alpha > log d / log(4/3)`.
/// Condition (1) — the master inequality holding for this `alpha` — has no
/// closed form; it is *numerically evidenced* by a grid scan, not proved.
#[derive(Debug, Clone, Serialize)]
pub struct AlphaLargenessReport {
    pub condition2_bound: f64,
    pub condition2_holds: bool,
    pub condition1_evidence: InequalityReport,
    pub condition1_verified: bool,
    pub large_enough: bool,
}

/// Checks whether `alpha` is "large enough" in the sense used by the
/// trapping theorem, deferring condition (1) to a grid verification of the
/// master inequality at the requested resolution.
pub fn alpha_large_enough(params: &Params, grid: &GridSpec) -> Result<AlphaLargenessReport> {
    let bound = (params.d() as f64).ln() / (4.0f64 / 3.0).ln();
    let condition2_holds = params.alpha() > bound;
    let evidence = oracles::verify_prop_a1_grid(params.d(), params.alpha(), grid)?;
    let condition1_verified = evidence.violation_count == 0;
    Ok(AlphaLargenessReport {
        condition2_bound: bound,
        condition2_holds,
        condition1_evidence: evidence,
        condition1_verified,
        large_enough: condition2_holds && condition1_verified,
    })
}
