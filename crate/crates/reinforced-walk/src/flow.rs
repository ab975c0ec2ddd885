//! The mean-field ODE `du/dt = -u + π(v)`, `dv/dt = -v + π(u)`: vector
//! field, fixed-step RK4 semiflow, positive invariance, the joint-support
//! functional along the flow with its closed-form derivative and region
//! classifier, deterministic product-lattice scans of the derivative sign,
//! and trajectory-based omega-limit estimation.

use crate::error::{Error, Result};
use crate::model::{self, Params, ProductPoint, SimplexPoint};
use crate::oracles::GridSpec;
use rayon::prelude::*;
use serde::Serialize;

/// Violations of the derivative sign above this are reported by scans.
pub const SCAN_TOLERANCE: f64 = 1e-12;

const MAX_STORED_VIOLATIONS: usize = 64;

/// Integrator configuration. The field is only piecewise smooth (kinks
/// where a coordinate crosses `delta`), so results are used with tolerances
/// rather than event detection.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FlowConfig {
    /// RK4 step in flow time.
    pub step: f64,
    /// Default horizon for trajectory-based estimates.
    pub max_time: f64,
    /// Divide each block by its coordinate sum after every step. The sum is
    /// conserved analytically, so the correction absorbs roundoff only.
    pub renormalize: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            max_time: 50.0,
            renormalize: true,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "flow step {} outside (0, 1]",
                self.step
            )));
        }
        if !(self.max_time > 0.0) {
            return Err(Error::InvalidParams(format!(
                "max_time {} must be > 0",
                self.max_time
            )));
        }
        Ok(())
    }
}

/// A tangent vector of `D`: both blocks sum to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl TangentVector {
    pub fn l1_norm(&self) -> f64 {
        self.x.iter().chain(&self.y).map(|v| v.abs()).sum()
    }
}

/// Writes `F(u, v) = (π(v) - u, π(u) - v)` into `(out_u, out_v)`.
///
/// Accepts raw coordinate slices so finite-difference probes may evaluate
/// the formula slightly off the simplex.
pub(crate) fn field_into(u: &[f64], v: &[f64], params: &Params, out_u: &mut [f64], out_v: &mut [f64]) {
    model::kernel_into(v, params, out_u);
    model::kernel_into(u, params, out_v);
    for (o, &ui) in out_u.iter_mut().zip(u) {
        *o -= ui;
    }
    for (o, &vi) in out_v.iter_mut().zip(v) {
        *o -= vi;
    }
}

/// The ODE vector field `F(z) = (-u + π(v), -v + π(u))`.
pub fn vector_field(z: &ProductPoint, params: &Params) -> TangentVector {
    let d = z.dim();
    let mut out = TangentVector {
        x: vec![0.0; d],
        y: vec![0.0; d],
    };
    field_into(z.x().coords(), z.y().coords(), params, &mut out.x, &mut out.y);
    out
}

struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    fn new(two_d: usize) -> Self {
        Self {
            k1: vec![0.0; two_d],
            k2: vec![0.0; two_d],
            k3: vec![0.0; two_d],
            k4: vec![0.0; two_d],
            tmp: vec![0.0; two_d],
        }
    }
}

/// In-place RK4 stepper over the flattened state `z = (u | v)`.
pub(crate) struct Integrator {
    scratch: Rk4Scratch,
    d: usize,
    /// largest per-step block-sum defect absorbed by renormalization
    pub max_renorm_defect: f64,
    /// smallest coordinate seen after any step
    pub min_coord_seen: f64,
}

impl Integrator {
    pub(crate) fn new(d: usize) -> Self {
        Self {
            scratch: Rk4Scratch::new(2 * d),
            d,
            max_renorm_defect: 0.0,
            min_coord_seen: f64::INFINITY,
        }
    }

    fn eval(&mut self, which: usize, params: &Params) {
        let d = self.d;
        let Rk4Scratch { k1, k2, k3, k4, tmp } = &mut self.scratch;
        let (u, v) = tmp.split_at(d);
        let out = match which {
            1 => k1,
            2 => k2,
            3 => k3,
            _ => k4,
        };
        let (ou, ov) = out.split_at_mut(d);
        field_into(u, v, params, ou, ov);
    }

    pub(crate) fn step(&mut self, z: &mut [f64], dt: f64, params: &Params, renormalize: bool, t: f64) -> Result<()> {
        let d = self.d;
        self.scratch.tmp.copy_from_slice(z);
        self.eval(1, params);
        for i in 0..2 * d {
            self.scratch.tmp[i] = z[i] + 0.5 * dt * self.scratch.k1[i];
        }
        self.eval(2, params);
        for i in 0..2 * d {
            self.scratch.tmp[i] = z[i] + 0.5 * dt * self.scratch.k2[i];
        }
        self.eval(3, params);
        for i in 0..2 * d {
            self.scratch.tmp[i] = z[i] + dt * self.scratch.k3[i];
        }
        self.eval(4, params);
        let s = &self.scratch;
        for i in 0..2 * d {
            z[i] += dt / 6.0 * (s.k1[i] + 2.0 * s.k2[i] + 2.0 * s.k3[i] + s.k4[i]);
        }
        let mut min_c = f64::INFINITY;
        for &c in z.iter() {
            if c < min_c {
                min_c = c;
            }
        }
        if min_c < -1e-9 {
            return Err(Error::IntegratorMisconfigured { coord: min_c, t });
        }
        if min_c < self.min_coord_seen {
            self.min_coord_seen = min_c;
        }
        if renormalize {
            for block in 0..2 {
                let b = &mut z[block * d..(block + 1) * d];
                let sum: f64 = b.iter().sum();
                let defect = (sum - 1.0).abs();
                if defect > self.max_renorm_defect {
                    self.max_renorm_defect = defect;
                }
                if defect > 1e-10 {
                    log::warn!("renormalization correction {defect:e} above 1e-10 at t={t}");
                }
                for c in b.iter_mut() {
                    *c /= sum;
                }
            }
        }
        Ok(())
    }
}

fn flat(z: &ProductPoint) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * z.dim());
    out.extend_from_slice(z.x().coords());
    out.extend_from_slice(z.y().coords());
    out
}

fn unflat(z: &[f64], d: usize) -> Result<ProductPoint> {
    ProductPoint::new(
        SimplexPoint::new(z[..d].to_vec())?,
        SimplexPoint::new(z[d..].to_vec())?,
    )
}

/// Bookkeeping from one integration.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IntegrationStats {
    pub steps: u64,
    pub max_renorm_defect: f64,
    pub min_coord_seen: f64,
}

/// The semiflow `Φ_t(z0)`: classical RK4 with fixed step, final partial step
/// landing exactly on `t`.
pub fn integrate(z0: &ProductPoint, t: f64, config: &FlowConfig, params: &Params) -> Result<ProductPoint> {
    integrate_with_stats(z0, t, config, params).map(|(z, _)| z)
}

/// Like [`integrate`] but reporting renormalization and coordinate extremes.
pub fn integrate_with_stats(
    z0: &ProductPoint,
    t: f64,
    config: &FlowConfig,
    params: &Params,
) -> Result<(ProductPoint, IntegrationStats)> {
    config.validate()?;
    if !(t >= 0.0) {
        return Err(Error::InvalidParams(format!("time {t} must be >= 0")));
    }
    let d = z0.dim();
    let mut z = flat(z0);
    let mut integ = Integrator::new(d);
    let mut elapsed = 0.0;
    let mut steps = 0u64;
    while elapsed < t {
        let dt = config.step.min(t - elapsed);
        integ.step(&mut z, dt, params, config.renormalize, elapsed)?;
        elapsed += dt;
        steps += 1;
    }
    Ok((
        unflat(&z, d)?,
        IntegrationStats {
            steps,
            max_renorm_defect: integ.max_renorm_defect,
            min_coord_seen: integ.min_coord_seen.min(
                z0.x().coords().iter().chain(z0.y().coords()).copied().fold(f64::INFINITY, f64::min),
            ),
        },
    ))
}

/// Integrates to time `t` recording the state after every step (plus the
/// initial state).
pub fn trace(z0: &ProductPoint, t: f64, config: &FlowConfig, params: &Params) -> Result<Vec<(f64, ProductPoint)>> {
    config.validate()?;
    let d = z0.dim();
    let mut z = flat(z0);
    let mut integ = Integrator::new(d);
    let mut out = vec![(0.0, z0.clone())];
    let mut elapsed = 0.0;
    while elapsed < t {
        let dt = config.step.min(t - elapsed);
        integ.step(&mut z, dt, params, config.renormalize, elapsed)?;
        elapsed += dt;
        out.push((elapsed, unflat(&z, d)?));
    }
    Ok(out)
}

/// Report from a positive-invariance probe near the boundary.
#[derive(Debug, Clone, Serialize)]
pub struct InvarianceReport {
    /// Initial time derivative of every coordinate that starts at zero.
    pub zero_coord_derivatives: Vec<(usize, f64)>,
    /// `min(pi_i(v)) >= delta^alpha / (delta^alpha + (d-1))`: the analytic
    /// inflow floor the zero-coordinate derivatives must dominate.
    pub inflow_lower_bound: f64,
    pub min_coord_seen: f64,
    pub ok: bool,
}

/// Integrates a (possibly boundary) start to time `t` and checks that no
/// coordinate ever drops below `-1e-9` and that the field points inward on
/// every zero coordinate.
pub fn check_invariance(z0: &ProductPoint, t: f64, config: &FlowConfig, params: &Params) -> Result<InvarianceReport> {
    let d = z0.dim();
    let f = vector_field(z0, params);
    let mut zero_coord_derivatives = Vec::new();
    for (i, &c) in z0.x().coords().iter().enumerate() {
        if c == 0.0 {
            zero_coord_derivatives.push((i, f.x[i]));
        }
    }
    for (i, &c) in z0.y().coords().iter().enumerate() {
        if c == 0.0 {
            zero_coord_derivatives.push((d + i, f.y[i]));
        }
    }
    let delta_pow = params.delta().powf(params.alpha());
    let inflow_lower_bound = delta_pow / (delta_pow + (d as f64 - 1.0));
    let (_, stats) = integrate_with_stats(z0, t, config, params)?;
    let ok = stats.min_coord_seen >= -1e-9
        && zero_coord_derivatives
            .iter()
            .all(|(_, dv)| *dv >= inflow_lower_bound - 1e-12);
    Ok(InvarianceReport {
        zero_coord_derivatives,
        inflow_lower_bound,
        min_coord_seen: stats.min_coord_seen,
        ok,
    })
}

fn ray_term(coords: &[f64], params: &Params) -> f64 {
    // sum x_i f(x_i)^(-alpha) / sum f(x_k)^(-alpha), factored by the minimum
    let delta = params.delta();
    let alpha = params.alpha();
    let mut min_f = f64::INFINITY;
    for &x in coords {
        let f = model::floor_weight_unchecked(x, delta);
        if f < min_f {
            min_f = f;
        }
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for &x in coords {
        let f = model::floor_weight_unchecked(x, delta);
        let w = (min_f / f).powf(alpha);
        num += x * w;
        den += w;
    }
    num / den
}

/// Closed-form autonomous derivative of `H` along the flow:
/// `-2 Σ u_i v_i + Σ u_i f(u_i)^(-α)/Σ f(u_k)^(-α) + (same in v)`.
pub fn dh_dt(z: &ProductPoint, params: &Params) -> f64 {
    -2.0 * model::joint_support(z) + ray_term(z.x().coords(), params) + ray_term(z.y().coords(), params)
}

/// Position of a state relative to the three-case sign analysis of `dH/dt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Region {
    /// `H` below `(3/2) d^(1/(α+1)) δ`; the sign lemma says nothing here.
    BelowThreshold,
    /// Neither component floored.
    Case1,
    /// Exactly one component floored, the other's minimum above `2δ`.
    Case2,
    /// One component floored and the other's minimum at most `2δ`.
    Case3,
}

impl Region {
    pub fn label(&self) -> &'static str {
        match self {
            Region::BelowThreshold => "below_threshold",
            Region::Case1 => "case1",
            Region::Case2 => "case2",
            Region::Case3 => "case3",
        }
    }
}

fn min_floored(coords: &[f64], delta: f64) -> f64 {
    coords
        .iter()
        .map(|&c| model::floor_weight_unchecked(c, delta))
        .fold(f64::INFINITY, f64::min)
}

/// Classifies a state into the sign-lemma cases. The cases partition the
/// complement of `BelowThreshold`.
pub fn region_classify(z: &ProductPoint, params: &Params) -> Region {
    if model::joint_support(z) < params.lyapunov_threshold() {
        return Region::BelowThreshold;
    }
    let delta = params.delta();
    let fu = min_floored(z.x().coords(), delta);
    let fv = min_floored(z.y().coords(), delta);
    let u_floored = fu <= delta;
    let v_floored = fv <= delta;
    if !u_floored && !v_floored {
        Region::Case1
    } else if (u_floored && fv > 2.0 * delta) || (v_floored && fu > 2.0 * delta) {
        Region::Case2
    } else {
        Region::Case3
    }
}

/// One scanned product-lattice pair.
#[derive(Debug, Clone, Serialize)]
pub struct ScanRow {
    pub u: SimplexPoint,
    pub v: SimplexPoint,
    pub h: f64,
    pub dh_dt: f64,
    pub region: Region,
}

/// Outcome of a deterministic scan of `dH/dt` over a product lattice.
#[derive(Debug, Clone, Serialize)]
pub struct LyapunovScanReport {
    pub threshold: f64,
    pub lattice_points: usize,
    pub pairs_total: u64,
    pub pairs_in_region: u64,
    /// `min(-dH/dt)` over the region equals `-max_dh_dt`.
    pub max_dh_dt: f64,
    pub argmax: ScanRow,
    pub argmax_l1_to_uniform: f64,
    pub lattice_min_l1_to_uniform: f64,
    pub argmax_is_nearest_uniform: bool,
    pub violation_count: u64,
    pub violations: Vec<ScanRow>,
    pub rows: Option<Vec<ScanRow>>,
}

impl LyapunovScanReport {
    pub fn holds(&self) -> bool {
        self.violation_count == 0
    }
}

struct RowAcc {
    max: f64,
    argmax: (usize, usize),
    in_region: u64,
    violations: Vec<(usize, usize)>,
    violation_count: u64,
}

/// Scans `dH/dt` over all ordered lattice pairs with `H >= threshold`
/// (`threshold = None` uses the parameter-derived level; `Some(0.0)` scans
/// the whole lattice). Deterministic: ties in the argmax break toward the
/// lexicographically smallest index pair.
pub fn lyapunov_scan(
    params: &Params,
    grid: &GridSpec,
    threshold: Option<f64>,
    collect_rows: bool,
) -> Result<LyapunovScanReport> {
    let threshold = threshold.unwrap_or_else(|| params.lyapunov_threshold());
    let points = grid.lattice_points(params.d())?;
    let n = points.len();
    let terms: Vec<f64> = points.iter().map(|p| ray_term(p.coords(), params)).collect();

    let per_row: Vec<RowAcc> = (0..n)
        .into_par_iter()
        .map(|i| {
            let u = points[i].coords();
            let mut acc = RowAcc {
                max: f64::NEG_INFINITY,
                argmax: (0, 0),
                in_region: 0,
                violations: Vec::new(),
                violation_count: 0,
            };
            for j in 0..n {
                let v = points[j].coords();
                let h: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
                if h < threshold {
                    continue;
                }
                acc.in_region += 1;
                let dh = -2.0 * h + terms[i] + terms[j];
                if dh > acc.max {
                    acc.max = dh;
                    acc.argmax = (i, j);
                }
                if dh > SCAN_TOLERANCE {
                    acc.violation_count += 1;
                    if acc.violations.len() < MAX_STORED_VIOLATIONS {
                        acc.violations.push((i, j));
                    }
                }
            }
            acc
        })
        .collect();

    let mut max = f64::NEG_INFINITY;
    let mut argmax = (0usize, 0usize);
    let mut in_region = 0u64;
    let mut violation_count = 0u64;
    let mut violations = Vec::new();
    for acc in per_row {
        if acc.max > max {
            max = acc.max;
            argmax = acc.argmax;
        }
        in_region += acc.in_region;
        violation_count += acc.violation_count;
        for v in acc.violations {
            if violations.len() < MAX_STORED_VIOLATIONS {
                violations.push(v);
            }
        }
    }
    if in_region == 0 {
        return Err(Error::Domain(
            "no lattice pair reaches the scan threshold".into(),
        ));
    }

    let mk_row = |i: usize, j: usize| {
        let z = ProductPoint::new(points[i].clone(), points[j].clone()).expect("lattice pair");
        let h = model::joint_support(&z);
        ScanRow {
            u: points[i].clone(),
            v: points[j].clone(),
            h,
            dh_dt: dh_dt(&z, params),
            region: region_classify(&z, params),
        }
    };

    let uniform = SimplexPoint::uniform(params.d());
    let dist: Vec<f64> = points.iter().map(|p| p.l1_distance(&uniform)).collect();
    let min_point_dist = dist.iter().copied().fold(f64::INFINITY, f64::min);
    let argmax_dist = dist[argmax.0] + dist[argmax.1];

    let rows = if collect_rows {
        let mut all = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let z = ProductPoint::new(points[i].clone(), points[j].clone()).expect("lattice pair");
                if model::joint_support(&z) < threshold {
                    continue;
                }
                all.push(mk_row(i, j));
            }
        }
        Some(all)
    } else {
        None
    };

    Ok(LyapunovScanReport {
        threshold,
        lattice_points: n,
        pairs_total: (n as u64) * (n as u64),
        pairs_in_region: in_region,
        max_dh_dt: max,
        argmax: mk_row(argmax.0, argmax.1),
        argmax_l1_to_uniform: argmax_dist,
        lattice_min_l1_to_uniform: 2.0 * min_point_dist,
        argmax_is_nearest_uniform: argmax_dist <= 2.0 * min_point_dist + 1e-12,
        violation_count,
        violations: violations.into_iter().map(|(i, j)| mk_row(i, j)).collect(),
        rows,
    })
}

/// Streams every in-region scan row to `sink` in deterministic
/// (lexicographic) order without materializing them.
pub fn lyapunov_scan_rows(
    params: &Params,
    grid: &GridSpec,
    threshold: Option<f64>,
    mut sink: impl FnMut(&ScanRow),
) -> Result<()> {
    let threshold = threshold.unwrap_or_else(|| params.lyapunov_threshold());
    let points = grid.lattice_points(params.d())?;
    for u in &points {
        for v in &points {
            let z = ProductPoint::new(u.clone(), v.clone()).expect("lattice pair");
            let h = model::joint_support(&z);
            if h < threshold {
                continue;
            }
            sink(&ScanRow {
                u: u.clone(),
                v: v.clone(),
                h,
                dh_dt: dh_dt(&z, params),
                region: region_classify(&z, params),
            });
        }
    }
    Ok(())
}

/// Accumulation points of a flow trajectory, estimated from its tail.
#[derive(Debug, Clone, Serialize)]
pub struct OmegaEstimate {
    /// Representatives with visit densities (densities sum to 1).
    pub points: Vec<(ProductPoint, f64)>,
    pub tail_samples: usize,
    pub tail_start: f64,
    pub tail_end: f64,
}

/// Integrates `z0` to `config.max_time` and clusters the last
/// `tail_fraction` of the recorded states by L¹ distance `1e-4`
/// (first-seen representative wins).
pub fn omega_limit_estimate(
    z0: &ProductPoint,
    config: &FlowConfig,
    params: &Params,
    tail_fraction: f64,
) -> Result<OmegaEstimate> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidParams(format!(
            "tail fraction {tail_fraction} outside (0, 1]"
        )));
    }
    let path = trace(z0, config.max_time, config, params)?;
    let start = ((path.len() as f64) * (1.0 - tail_fraction)) as usize;
    let tail = &path[start.min(path.len() - 1)..];
    if tail.len() < 100 {
        return Err(Error::Domain(format!(
            "tail holds {} samples; need >= 100 (raise max_time or tail_fraction)",
            tail.len()
        )));
    }
    let mut reps: Vec<(ProductPoint, u64)> = Vec::new();
    for (_, z) in tail {
        match reps.iter_mut().find(|(r, _)| r.l1_distance(z) <= 1e-4) {
            Some((_, c)) => *c += 1,
            None => reps.push((z.clone(), 1)),
        }
    }
    let total = tail.len() as f64;
    Ok(OmegaEstimate {
        points: reps
            .into_iter()
            .map(|(p, c)| (p, c as f64 / total))
            .collect(),
        tail_samples: tail.len(),
        tail_start: tail.first().map(|(t, _)| *t).unwrap_or(0.0),
        tail_end: tail.last().map(|(t, _)| *t).unwrap_or(0.0),
    })
}
