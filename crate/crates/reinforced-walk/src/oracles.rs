//! Brute-force numeric verification of the supporting inequalities: the
//! master product inequality, the generalized-mean bound on the ratio
//! functional, the near-uniform local-minimum function `g`, the
//! far-from-uniform regime, and the rearrangement lower bound.
//!
//! Scans report violations; they never panic on them. A margin below
//! `-1e-12` counts as a violation, anything above as numeric noise.

use crate::error::{Error, Result};
use crate::model::SimplexPoint;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::time::Instant;

/// Margins below this are violations; above, roundoff.
pub const VIOLATION_TOLERANCE: f64 = -1e-12;

/// At most this many violating pairs are kept in a report (the count is
/// always exact).
const MAX_STORED_VIOLATIONS: usize = 64;

/// A deterministic interior lattice on the simplex: compositions
/// `c_1 + ... + c_d = resolution` with every part `>= 1`, mapped through
/// `u = floor + (1 - d*floor) * c/resolution` so the grid keeps a distance
/// `floor` from the boundary. Enumeration order is lexicographic in `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    resolution: u32,
    interior_floor: f64,
}

impl GridSpec {
    pub fn new(resolution: u32, interior_floor: f64) -> Result<Self> {
        if resolution < 10 {
            return Err(Error::InvalidParams(format!(
                "grid resolution {resolution} must be >= 10"
            )));
        }
        if !(interior_floor > 0.0) {
            return Err(Error::InvalidParams(format!(
                "interior floor {interior_floor} must be > 0"
            )));
        }
        Ok(Self {
            resolution,
            interior_floor,
        })
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn interior_floor(&self) -> f64 {
        self.interior_floor
    }

    fn validate_dim(&self, d: usize) -> Result<()> {
        if self.interior_floor * d as f64 >= 1.0 {
            return Err(Error::InvalidParams(format!(
                "interior floor {} * d = {d} leaves no interior",
                self.interior_floor
            )));
        }
        if (self.resolution as usize) < d {
            return Err(Error::InvalidParams(format!(
                "resolution {} below dimension {d}",
                self.resolution
            )));
        }
        Ok(())
    }

    /// All lattice points in lexicographic composition order.
    pub fn lattice_points(&self, d: usize) -> Result<Vec<SimplexPoint>> {
        self.validate_dim(d)?;
        let r = self.resolution;
        let fl = self.interior_floor;
        let scale = (1.0 - d as f64 * fl) / r as f64;
        let mut out = Vec::new();
        let mut parts = vec![1u32; d];
        compositions(r, d, &mut parts, 0, &mut |c| {
            let coords: Vec<f64> = c.iter().map(|&k| fl + scale * k as f64).collect();
            out.push(SimplexPoint::new(coords).expect("lattice point off the simplex"));
        });
        Ok(out)
    }
}

fn compositions(total: u32, d: usize, parts: &mut [u32], idx: usize, emit: &mut impl FnMut(&[u32])) {
    let remaining = d - idx;
    if remaining == 1 {
        parts[idx] = total;
        emit(parts);
        return;
    }
    // each later part needs at least 1
    for v in 1..=(total - remaining as u32 + 1) {
        parts[idx] = v;
        compositions(total - v, d, parts, idx + 1, emit);
    }
}

/// Uniform sample of the simplex via normalized exponential draws.
pub fn sample_simplex(rng: &mut impl Rng, d: usize) -> SimplexPoint {
    let mut coords = vec![0.0f64; d];
    let mut sum = 0.0;
    for c in coords.iter_mut() {
        // -ln(1 - u) with u in [0, 1) is Exp(1)
        let e = -(1.0 - rng.random::<f64>()).ln();
        *c = e;
        sum += e;
    }
    for c in coords.iter_mut() {
        *c /= sum;
    }
    SimplexPoint::from_normalized(coords)
}

pub(crate) fn ratio_raw(coords: &[f64], alpha: f64) -> f64 {
    // factor by the minimum so every power argument lies in (0, 1]
    let m = coords.iter().copied().fold(f64::INFINITY, f64::min);
    let mut num = 0.0;
    let mut den = 0.0;
    for &u in coords {
        let a = m / u;
        let p = a.powf(alpha);
        num += p;
        den += p * a;
    }
    m * num / den
}

/// The ratio functional `Σ u_i^(-alpha) / Σ u_i^(-(1+alpha))`, computed
/// after factoring out the minimum coordinate so that large `alpha` cannot
/// overflow.
pub fn ratio(u: &SimplexPoint, alpha: f64) -> Result<f64> {
    if u.min_coord() <= 0.0 {
        return Err(Error::Domain(
            "ratio requires strictly positive coordinates".into(),
        ));
    }
    Ok(ratio_raw(u.coords(), alpha))
}

/// One scanned pair together with its margin.
#[derive(Debug, Clone, Serialize)]
pub struct MarginSample {
    pub u: SimplexPoint,
    pub v: SimplexPoint,
    pub margin: f64,
}

/// Outcome of a grid scan of the master inequality
/// `2 Σ u_i v_i >= ratio(u) + ratio(v)`.
#[derive(Debug, Clone, Serialize)]
pub struct InequalityReport {
    pub lattice_points: usize,
    pub pairs_checked: u64,
    pub min_margin: f64,
    pub argmin: MarginSample,
    pub argmin_l1_to_uniform: f64,
    pub lattice_min_l1_to_uniform: f64,
    /// Whether the argmin pair sits at the smallest lattice distance from
    /// `(U, U)` achievable on this grid.
    pub argmin_is_nearest_uniform: bool,
    pub violation_count: u64,
    pub violations: Vec<MarginSample>,
    pub wall_time_s: f64,
}

impl InequalityReport {
    pub fn holds(&self) -> bool {
        self.violation_count == 0
    }
}

struct ScanAcc {
    min_margin: f64,
    argmin: (usize, usize),
    violation_count: u64,
    violations: Vec<(usize, usize, f64)>,
}

/// Exhaustively scans all ordered lattice pairs `(u, v)` and reports the
/// margin landscape of the master inequality. Deterministic: the argmin tie
/// breaks toward the lexicographically smallest index pair.
pub fn verify_prop_a1_grid(d: usize, alpha: f64, grid: &GridSpec) -> Result<InequalityReport> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParams(format!("alpha = {alpha} must be > 0")));
    }
    let start = Instant::now();
    let points = grid.lattice_points(d)?;
    let n = points.len();
    let ratios: Vec<f64> = points.iter().map(|p| ratio_raw(p.coords(), alpha)).collect();

    let per_row: Vec<ScanAcc> = (0..n)
        .into_par_iter()
        .map(|i| {
            let u = points[i].coords();
            let ru = ratios[i];
            let mut acc = ScanAcc {
                min_margin: f64::INFINITY,
                argmin: (0, 0),
                violation_count: 0,
                violations: Vec::new(),
            };
            for j in 0..n {
                let v = points[j].coords();
                let h: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
                let margin = 2.0 * h - ru - ratios[j];
                if margin < acc.min_margin {
                    acc.min_margin = margin;
                    acc.argmin = (i, j);
                }
                if margin < VIOLATION_TOLERANCE {
                    acc.violation_count += 1;
                    if acc.violations.len() < MAX_STORED_VIOLATIONS {
                        acc.violations.push((i, j, margin));
                    }
                }
            }
            acc
        })
        .collect();

    // sequential merge in row order keeps the result worker-count independent
    let mut min_margin = f64::INFINITY;
    let mut argmin = (0usize, 0usize);
    let mut violation_count = 0u64;
    let mut violations = Vec::new();
    for acc in per_row {
        if acc.min_margin < min_margin {
            min_margin = acc.min_margin;
            argmin = acc.argmin;
        }
        violation_count += acc.violation_count;
        for v in acc.violations {
            if violations.len() < MAX_STORED_VIOLATIONS {
                violations.push(v);
            }
        }
    }

    let uniform = SimplexPoint::uniform(d);
    let point_dist: Vec<f64> = points.iter().map(|p| p.l1_distance(&uniform)).collect();
    let min_point_dist = point_dist.iter().copied().fold(f64::INFINITY, f64::min);
    let argmin_dist = point_dist[argmin.0] + point_dist[argmin.1];
    let to_sample = |(i, j, margin): (usize, usize, f64)| MarginSample {
        u: points[i].clone(),
        v: points[j].clone(),
        margin,
    };

    Ok(InequalityReport {
        lattice_points: n,
        pairs_checked: (n as u64) * (n as u64),
        min_margin,
        argmin: to_sample((argmin.0, argmin.1, min_margin)),
        argmin_l1_to_uniform: argmin_dist,
        lattice_min_l1_to_uniform: 2.0 * min_point_dist,
        argmin_is_nearest_uniform: argmin_dist <= 2.0 * min_point_dist + 1e-12,
        violation_count,
        violations: violations.into_iter().map(to_sample).collect(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Streams every `(u, v, margin)` row of the grid scan, for margin-landscape
/// dumps. Row order is deterministic (lexicographic in both indices).
pub fn prop_a1_margin_rows(
    d: usize,
    alpha: f64,
    grid: &GridSpec,
    mut sink: impl FnMut(&SimplexPoint, &SimplexPoint, f64),
) -> Result<()> {
    let points = grid.lattice_points(d)?;
    let ratios: Vec<f64> = points.iter().map(|p| ratio_raw(p.coords(), alpha)).collect();
    for (i, u) in points.iter().enumerate() {
        for (j, v) in points.iter().enumerate() {
            let h: f64 = u.coords().iter().zip(v.coords()).map(|(a, b)| a * b).sum();
            sink(u, v, 2.0 * h - ratios[i] - ratios[j]);
        }
    }
    Ok(())
}

/// Both sides of the generalized-mean bound
/// `(1 + Σ a_i^alpha) / (1 + Σ a_i^(1+alpha)) < d^(1/(alpha+1))` for
/// `a_i` in `(0, 1]`, where `d = len(a) + 1`.
pub fn mean_bound_check(a: &[f64], alpha: f64) -> Result<(f64, f64)> {
    if a.is_empty() {
        return Err(Error::Domain("mean bound needs at least one entry".into()));
    }
    for &x in a {
        if !(x > 0.0 && x <= 1.0) {
            return Err(Error::Domain(format!("entry {x} outside (0, 1]")));
        }
    }
    let d = a.len() + 1;
    let mut num = 1.0;
    let mut den = 1.0;
    for &x in a {
        let p = x.powf(alpha);
        num += p;
        den += p * x;
    }
    let bound = (d as f64).powf(1.0 / (alpha + 1.0));
    Ok((num / den, bound))
}

/// `g(u) = 2 min u - d (min u)^2 - ratio(u)`; zero at the uniform point and
/// locally nonnegative there exactly when `alpha > d - 2`.
pub fn g_function(u: &SimplexPoint, alpha: f64) -> Result<f64> {
    let m = u.min_coord();
    if m <= 0.0 {
        return Err(Error::Domain(
            "g requires strictly positive coordinates".into(),
        ));
    }
    let d = u.dim() as f64;
    Ok(2.0 * m - d * m * m - ratio_raw(u.coords(), alpha))
}

/// Result of sampling `g` in an L¹ ball around the uniform point.
#[derive(Debug, Clone, Serialize)]
pub struct LocalMinReport {
    pub alpha: f64,
    pub d: usize,
    pub radius: f64,
    pub samples: usize,
    pub min_g: f64,
    pub argmin: SimplexPoint,
    /// Samples with `g < -1e-12`. Empty supports the local-minimum claim;
    /// nonempty is expected when `alpha <= d - 2`.
    pub negative_count: usize,
}

/// Samples `g` on random rays from the uniform point (seeded, uniform ray
/// direction from a simplex draw, uniform radius fraction) and reports the
/// smallest value seen.
pub fn local_min_probe(
    alpha: f64,
    d: usize,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<LocalMinReport> {
    if d < 2 || !(radius > 0.0) || samples == 0 {
        return Err(Error::InvalidParams(
            "local_min_probe needs d >= 2, radius > 0, samples >= 1".into(),
        ));
    }
    let uniform = SimplexPoint::uniform(d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_g = f64::INFINITY;
    let mut argmin = uniform.clone();
    let mut negative_count = 0usize;
    let mut taken = 0usize;
    while taken < samples {
        let dir = sample_simplex(&mut rng, d);
        let norm = dir.l1_distance(&uniform);
        if norm < 1e-12 {
            continue;
        }
        let s = radius * rng.random::<f64>() / norm;
        let coords: Vec<f64> = dir
            .coords()
            .iter()
            .zip(uniform.coords())
            .map(|(v, u)| u + s * (v - u))
            .collect();
        if coords.iter().any(|c| *c <= 1e-12) {
            continue;
        }
        let point = SimplexPoint::new(coords)?;
        let g = g_function(&point, alpha)?;
        taken += 1;
        if g < min_g {
            min_g = g;
            argmin = point;
        }
        if g < VIOLATION_TOLERANCE {
            negative_count += 1;
        }
    }
    Ok(LocalMinReport {
        alpha,
        d,
        radius,
        samples,
        min_g,
        argmin,
        negative_count,
    })
}

/// Outcome of the far-from-uniform check for one point.
#[derive(Debug, Clone, Serialize)]
pub enum FarFromUniformCheck {
    /// Preconditions unmet; the regime does not cover this point.
    NotApplicable { reason: String },
    Checked {
        /// margin of `2 min u - d (min u)^2 - ratio(u)` (strictly positive
        /// when the regime claim holds)
        main_margin: f64,
        main_holds: bool,
        /// margin of `d^(1/(alpha+1)) min u - ratio(u)`
        intermediate_margin: f64,
        intermediate_holds: bool,
    },
}

/// Checks the far-from-uniform regime: for `min u < kappa/d` and
/// `alpha >= log d / log(2 - kappa) - 1`, both
/// `2 min u - d (min u)^2 > ratio(u)` and
/// `ratio(u) <= d^(1/(alpha+1)) min u` must hold.
pub fn far_from_uniform_check(u: &SimplexPoint, alpha: f64, kappa: f64) -> Result<FarFromUniformCheck> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::InvalidParams(format!("kappa = {kappa} outside (0, 1)")));
    }
    let m = u.min_coord();
    if m <= 0.0 {
        return Err(Error::Domain("point must be interior".into()));
    }
    let d = u.dim() as f64;
    if m >= kappa / d {
        return Ok(FarFromUniformCheck::NotApplicable {
            reason: format!("min coordinate {m} >= kappa/d = {}", kappa / d),
        });
    }
    let alpha_floor = d.ln() / (2.0 - kappa).ln() - 1.0;
    if alpha < alpha_floor {
        return Ok(FarFromUniformCheck::NotApplicable {
            reason: format!("alpha {alpha} below regime threshold {alpha_floor}"),
        });
    }
    let r = ratio_raw(u.coords(), alpha);
    let main_margin = 2.0 * m - d * m * m - r;
    let intermediate_margin = d.powf(1.0 / (alpha + 1.0)) * m - r;
    Ok(FarFromUniformCheck::Checked {
        main_margin,
        main_holds: main_margin > 0.0,
        intermediate_margin,
        intermediate_holds: intermediate_margin >= 0.0,
    })
}

/// Both sides of the rearrangement lower bound
/// `Σ u_i v_i >= min u + min v - d (min u)(min v)`.
pub fn rearrangement_bound(u: &SimplexPoint, v: &SimplexPoint) -> (f64, f64) {
    let lhs: f64 = u.coords().iter().zip(v.coords()).map(|(a, b)| a * b).sum();
    let mu = u.min_coord();
    let mv = v.min_coord();
    let rhs = mu + mv - u.dim() as f64 * mu * mv;
    (lhs, rhs)
}
