//! The discrete-time two-particle chain: stepping with the repelling
//! kernel, visit counts and occupation measures, the step-size
//! decomposition into drift plus martingale noise, martingale diagnostics,
//! Monte Carlo campaigns, and the exact conditional-expectation probe used
//! for the non-convergence noise condition.

use crate::error::{Error, Result};
use crate::flow;
use crate::model::{self, Params, ProductPoint, SimplexPoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Chain state: positions, visit counts and the step index. Both count
/// vectors start at all ones (each particle has visited every vertex once),
/// so with `n0 = d` the occupation measures are exact probability vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkState {
    pub pos_x: usize,
    pub pos_y: usize,
    counts_x: Vec<u64>,
    counts_y: Vec<u64>,
    n: u64,
}

impl WalkState {
    pub fn counts_x(&self) -> &[u64] {
        &self.counts_x
    }

    pub fn counts_y(&self) -> &[u64] {
        &self.counts_y
    }

    pub fn n(&self) -> u64 {
        self.n
    }
}

/// Initial state with all counts 1 and the given positions (0-based vertex
/// indices).
pub fn init(params: &Params, pos_x0: usize, pos_y0: usize) -> Result<WalkState> {
    let d = params.d();
    if pos_x0 >= d || pos_y0 >= d {
        return Err(Error::Domain(format!(
            "initial positions ({pos_x0}, {pos_y0}) outside 0..{d}"
        )));
    }
    Ok(WalkState {
        pos_x: pos_x0,
        pos_y: pos_y0,
        counts_x: vec![1; d],
        counts_y: vec![1; d],
        n: 0,
    })
}

fn occupation_into(state: &WalkState, params: &Params, out_x: &mut [f64], out_y: &mut [f64]) {
    let denom = (state.n + params.n0()) as f64;
    for (o, &c) in out_x.iter_mut().zip(&state.counts_x) {
        *o = c as f64 / denom;
    }
    for (o, &c) in out_y.iter_mut().zip(&state.counts_y) {
        *o = c as f64 / denom;
    }
    if params.n0() != state.counts_x.len() as u64 {
        // counts sum to n + d, so the raw vectors sum to (n+d)/(n+n0)
        log::warn!(
            "occupation with n0 = {} != d = {}: renormalizing",
            params.n0(),
            state.counts_x.len()
        );
        for block in [out_x.iter_mut(), out_y.iter_mut()] {
            let mut sum = 0.0;
            let mut tmp = Vec::new();
            for v in block {
                sum += *v;
                tmp.push(v);
            }
            for v in tmp {
                *v /= sum;
            }
        }
    }
}

/// The pair of empirical occupation measures `(x(n), y(n))` with
/// `x_i(n) = N(X,i,n)/(n+N0)`. With `n0 != d` the raw vectors do not sum to
/// one; they are renormalized and a warning is logged.
pub fn occupation(state: &WalkState, params: &Params) -> ProductPoint {
    let d = state.counts_x.len();
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    occupation_into(state, params, &mut x, &mut y);
    ProductPoint::new(
        SimplexPoint::new(x).expect("occupation off the simplex"),
        SimplexPoint::new(y).expect("occupation off the simplex"),
    )
    .expect("occupation dimensions")
}

/// One step's noise: the indicator-minus-kernel increments for both
/// particles, already scaled by `1/(n+1+N0)`. Each block sums to zero and
/// every component is bounded by `1/(n+1+N0)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseSample {
    pub step: u64,
    pub eps_x: Vec<f64>,
    pub eps_y: Vec<f64>,
}

impl NoiseSample {
    pub fn l1_norm(&self) -> f64 {
        self.eps_x.iter().chain(&self.eps_y).map(|v| v.abs()).sum()
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.eps_x.iter().chain(&self.eps_y).map(|v| v * v).sum()
    }
}

/// The two particles draw from independent, individually seeded streams of
/// one generator family. Mirroring the seed swaps the streams, which swaps
/// the roles of `X` and `Y` exactly.
#[derive(Debug, Clone)]
pub struct WalkRng {
    x: ChaCha8Rng,
    y: ChaCha8Rng,
}

impl WalkRng {
    pub fn new(seed: u64) -> Self {
        let mut x = ChaCha8Rng::seed_from_u64(seed);
        x.set_stream(0);
        let mut y = ChaCha8Rng::seed_from_u64(seed);
        y.set_stream(1);
        Self { x, y }
    }

    /// The same seed with the particle streams swapped.
    pub fn mirrored(seed: u64) -> Self {
        let Self { x, y } = Self::new(seed);
        Self { x: y, y: x }
    }
}

/// Inverse-CDF draw with a single uniform variate.
fn sample_index(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

struct StepBuffers {
    occ_x: Vec<f64>,
    occ_y: Vec<f64>,
    law_x: Vec<f64>,
    law_y: Vec<f64>,
}

impl StepBuffers {
    fn new(d: usize) -> Self {
        Self {
            occ_x: vec![0.0; d],
            occ_y: vec![0.0; d],
            law_x: vec![0.0; d],
            law_y: vec![0.0; d],
        }
    }
}

struct StepOutcome {
    noise: Option<NoiseSample>,
    decomposition_residual: Option<f64>,
}

/// Advances the state by one step. `X` jumps with law `π(y(n))` and `Y`
/// with law `π(x(n))`, conditionally independent given the current state;
/// on the complete graph the law does not depend on the current positions.
fn advance(
    state: &mut WalkState,
    params: &Params,
    rng: &mut WalkRng,
    bufs: &mut StepBuffers,
    want_noise: bool,
    check_decomposition: bool,
) -> StepOutcome {
    let d = state.counts_x.len();
    occupation_into(state, params, &mut bufs.occ_x, &mut bufs.occ_y);
    model::kernel_into(&bufs.occ_y, params, &mut bufs.law_x);
    model::kernel_into(&bufs.occ_x, params, &mut bufs.law_y);
    let i = sample_index(&mut rng.x, &bufs.law_x);
    let j = sample_index(&mut rng.y, &bufs.law_y);

    let sigma = 1.0 / (state.n + 1 + params.n0()) as f64;
    let noise = if want_noise || check_decomposition {
        let mut eps_x = vec![0.0; d];
        let mut eps_y = vec![0.0; d];
        for k in 0..d {
            let ind_x = if k == i { 1.0 } else { 0.0 };
            let ind_y = if k == j { 1.0 } else { 0.0 };
            eps_x[k] = (ind_x - bufs.law_x[k]) * sigma;
            eps_y[k] = (ind_y - bufs.law_y[k]) * sigma;
        }
        debug_assert!(eps_x.iter().sum::<f64>().abs() <= 1e-12);
        debug_assert!(eps_y.iter().sum::<f64>().abs() <= 1e-12);
        debug_assert!(eps_x.iter().chain(&eps_y).all(|e| e.abs() <= sigma * (1.0 + 1e-12)));
        Some(NoiseSample {
            step: state.n,
            eps_x,
            eps_y,
        })
    } else {
        None
    };

    state.counts_x[i] += 1;
    state.counts_y[j] += 1;
    state.pos_x = i;
    state.pos_y = j;
    state.n += 1;

    let decomposition_residual = if check_decomposition {
        // z(n+1) - z(n) must equal sigma * F(z(n)) + eps(n) coordinatewise
        let noise = noise.as_ref().expect("noise computed above");
        let denom_new = (state.n + params.n0()) as f64;
        let mut field_x = vec![0.0; d];
        let mut field_y = vec![0.0; d];
        flow::field_into(&bufs.occ_x, &bufs.occ_y, params, &mut field_x, &mut field_y);
        let mut l1 = 0.0;
        for k in 0..d {
            let lhs_x = state.counts_x[k] as f64 / denom_new - bufs.occ_x[k];
            let lhs_y = state.counts_y[k] as f64 / denom_new - bufs.occ_y[k];
            let rx = (lhs_x - (sigma * field_x[k] + noise.eps_x[k])).abs();
            let ry = (lhs_y - (sigma * field_y[k] + noise.eps_y[k])).abs();
            debug_assert!(rx <= 1e-14 && ry <= 1e-14, "decomposition residual {rx:e}/{ry:e}");
            l1 += rx + ry;
        }
        Some(l1)
    } else {
        None
    };

    StepOutcome {
        noise,
        decomposition_residual,
    }
}

/// One functional step: returns the advanced state and the realized noise.
pub fn step(state: &WalkState, params: &Params, rng: &mut WalkRng) -> (WalkState, NoiseSample) {
    let mut next = state.clone();
    let mut bufs = StepBuffers::new(state.counts_x.len());
    let out = advance(&mut next, params, rng, &mut bufs, true, false);
    (next, out.noise.expect("noise requested"))
}

/// One retained trajectory sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectorySample {
    pub n: u64,
    pub z: ProductPoint,
    pub h: f64,
    pub in_s_delta: bool,
}

/// A recorded run: retained samples (strictly increasing step indices) plus
/// whatever noise recording was requested.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub params: Params,
    pub seed: u64,
    pub thinning: u64,
    pub samples: Vec<TrajectorySample>,
    pub noise: Vec<NoiseSample>,
}

/// Per-run scalars.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub n_steps: u64,
    pub final_h: f64,
    pub trapped: bool,
    pub dist_to_uniform: f64,
    /// `sup_{m >= k} ||M_m - M_k||_1` over the recorded tail; present only
    /// with full noise recording.
    pub martingale_sup_tail: Option<f64>,
    /// Largest per-step L¹ defect of the drift-plus-noise decomposition;
    /// present only when the check was enabled.
    pub max_decomposition_residual: Option<f64>,
}

/// Recording and checking options for [`run`].
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Record every `thinning`-th step (step 0 and the final step are always
    /// kept).
    pub thinning: u64,
    /// Keep every noise sample. Costs `2d` floats per step.
    pub record_noise_all: bool,
    /// Step-index windows recorded unthinned: states for `n` in `[lo, hi]`
    /// and noise for `n` in `[lo, hi)`.
    pub windows: Vec<(u64, u64)>,
    /// Assert the drift-plus-noise decomposition at every step and report
    /// the worst L¹ residual. Roughly doubles the per-step cost.
    pub check_decomposition: bool,
    /// Tail fraction used for the summary's trapping flag.
    pub tail_fraction: f64,
    pub pos_x0: usize,
    pub pos_y0: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            thinning: 1,
            record_noise_all: false,
            windows: Vec::new(),
            check_decomposition: false,
            tail_fraction: 0.1,
            pos_x0: 0,
            pos_y0: 0,
        }
    }
}

impl RunOptions {
    fn in_window(&self, n: u64) -> bool {
        self.windows.iter().any(|&(lo, hi)| lo <= n && n <= hi)
    }

    fn in_noise_window(&self, n: u64) -> bool {
        self.windows.iter().any(|&(lo, hi)| lo <= n && n < hi)
    }
}

/// Runs the chain for `n_steps` steps. Deterministic: identical inputs
/// yield identical trajectories.
pub fn run(params: &Params, n_steps: u64, seed: u64, opts: &RunOptions) -> Result<(Trajectory, RunSummary)> {
    if n_steps == 0 {
        return Err(Error::InvalidParams("n_steps must be >= 1".into()));
    }
    if opts.thinning == 0 {
        return Err(Error::InvalidParams("thinning must be >= 1".into()));
    }
    if !(opts.tail_fraction > 0.0 && opts.tail_fraction <= 1.0) {
        return Err(Error::InvalidParams(format!(
            "tail_fraction {} outside (0, 1]",
            opts.tail_fraction
        )));
    }
    let d = params.d();
    let mut state = init(params, opts.pos_x0, opts.pos_y0)?;
    let mut rng = WalkRng::new(seed);
    let mut bufs = StepBuffers::new(d);

    let mut samples = Vec::new();
    let mut noise = Vec::new();
    let mut max_residual: Option<f64> = None;

    let record_state = |state: &WalkState, samples: &mut Vec<TrajectorySample>| {
        let z = occupation(state, params);
        let h = model::joint_support(&z);
        samples.push(TrajectorySample {
            n: state.n,
            z,
            h,
            in_s_delta: h < params.s_delta_bound(),
        });
    };

    record_state(&state, &mut samples);
    for n in 0..n_steps {
        let want_noise = opts.record_noise_all || opts.in_noise_window(n);
        let out = advance(&mut state, params, &mut rng, &mut bufs, want_noise, opts.check_decomposition);
        if let Some(eps) = out.noise {
            if want_noise {
                noise.push(eps);
            }
        }
        if let Some(r) = out.decomposition_residual {
            max_residual = Some(max_residual.unwrap_or(0.0).max(r));
        }
        let m = n + 1;
        if m % opts.thinning == 0 || m == n_steps || opts.in_window(m) {
            record_state(&state, &mut samples);
        }
    }

    let traj = Trajectory {
        params: *params,
        seed,
        thinning: opts.thinning,
        samples,
        noise,
    };
    let last = traj.samples.last().expect("final sample recorded");
    let final_h = last.h;
    let dist_to_uniform = last.z.l1_distance(&ProductPoint::uniform(d));
    let trapped = trapped_in_s_delta(&traj, opts.tail_fraction)?;
    let martingale_sup_tail = if opts.record_noise_all {
        let k0 = ((1.0 - opts.tail_fraction) * n_steps as f64).ceil() as u64;
        Some(tail_oscillation(&traj.noise, k0))
    } else {
        None
    };
    let summary = RunSummary {
        seed,
        n_steps,
        final_h,
        trapped,
        dist_to_uniform,
        martingale_sup_tail,
        max_decomposition_residual: max_residual,
    };
    Ok((traj, summary))
}

/// True iff every recorded sample in the last `tail_fraction` of steps lies
/// in `S^δ` (strictly).
pub fn trapped_in_s_delta(traj: &Trajectory, tail_fraction: f64) -> Result<bool> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidParams(format!(
            "tail_fraction {tail_fraction} outside (0, 1]"
        )));
    }
    let last = traj.samples.last().ok_or(Error::EmptyTail)?;
    let cutoff = (1.0 - tail_fraction) * last.n as f64;
    let mut any = false;
    let mut all_in = true;
    for s in traj.samples.iter().rev() {
        if (s.n as f64) < cutoff {
            break;
        }
        any = true;
        all_in &= s.in_s_delta;
    }
    if !any {
        return Err(Error::EmptyTail);
    }
    Ok(all_in)
}

fn tail_oscillation(noise: &[NoiseSample], from_step: u64) -> f64 {
    let mut cum: Option<Vec<f64>> = None;
    let mut sup = 0.0f64;
    for s in noise {
        if s.step < from_step {
            continue;
        }
        let c = cum.get_or_insert_with(|| vec![0.0; s.eps_x.len() + s.eps_y.len()]);
        let d = s.eps_x.len();
        for k in 0..d {
            c[k] += s.eps_x[k];
            c[d + k] += s.eps_y[k];
        }
        sup = sup.max(c.iter().map(|v| v.abs()).sum());
    }
    sup
}

/// Martingale diagnostics at one checkpoint step.
#[derive(Debug, Clone, Serialize)]
pub struct MartingaleCheckpoint {
    pub n: u64,
    /// `||M_n||_1` with `M_n = Σ_{i<n} ε(i)`.
    pub partial_sum_norm: f64,
    /// `sup_{m>=n} ||M_m - M_n||_1` over the recorded range.
    pub tail_oscillation: f64,
    /// `Σ_{i<n} ||ε(i)||_2²`.
    pub quadratic_variation: f64,
}

/// Partial-sum norms, tail oscillations and quadratic variation of the
/// noise martingale.
#[derive(Debug, Clone, Serialize)]
pub struct MartingaleReport {
    pub checkpoints: Vec<MartingaleCheckpoint>,
    pub total_quadratic_variation: f64,
    pub first_step: u64,
    pub last_step: u64,
}

/// Computes martingale diagnostics from contiguous noise records.
pub fn martingale_partial_sums(noise: &[NoiseSample], checkpoints: &[u64]) -> Result<MartingaleReport> {
    if noise.is_empty() {
        return Err(Error::NoiseNotRecorded(0, 0));
    }
    let first = noise[0].step;
    let last = noise[noise.len() - 1].step;
    for w in noise.windows(2) {
        if w[1].step != w[0].step + 1 {
            return Err(Error::NoiseNotRecorded(w[0].step + 1, w[1].step));
        }
    }
    for &c in checkpoints {
        if c < first || c > last + 1 {
            return Err(Error::NoiseNotRecorded(c, c));
        }
    }
    let d = noise[0].eps_x.len();
    let mut cum = vec![0.0f64; 2 * d];
    let mut qv = 0.0f64;
    let mut snapshots: Vec<(usize, Vec<f64>, f64)> = Vec::new(); // checkpoint idx, M_n, qv
    let mut oscillations = vec![0.0f64; checkpoints.len()];
    let mut partials = vec![0.0f64; checkpoints.len()];
    let mut qvs = vec![0.0f64; checkpoints.len()];

    let take_snapshot = |step: u64, cum: &[f64], qv: f64, snapshots: &mut Vec<(usize, Vec<f64>, f64)>, partials: &mut [f64], qvs: &mut [f64]| {
        for (ci, &c) in checkpoints.iter().enumerate() {
            if c == step {
                partials[ci] = cum.iter().map(|v| v.abs()).sum();
                qvs[ci] = qv;
                snapshots.push((ci, cum.to_vec(), qv));
            }
        }
    };

    take_snapshot(first, &cum, qv, &mut snapshots, &mut partials, &mut qvs);
    for s in noise {
        for k in 0..d {
            cum[k] += s.eps_x[k];
            cum[d + k] += s.eps_y[k];
        }
        qv += s.l2_norm_sq();
        for (ci, m_n, _) in &snapshots {
            let osc: f64 = cum.iter().zip(m_n).map(|(a, b)| (a - b).abs()).sum();
            if osc > oscillations[*ci] {
                oscillations[*ci] = osc;
            }
        }
        take_snapshot(s.step + 1, &cum, qv, &mut snapshots, &mut partials, &mut qvs);
    }

    Ok(MartingaleReport {
        checkpoints: checkpoints
            .iter()
            .enumerate()
            .map(|(ci, &n)| MartingaleCheckpoint {
                n,
                partial_sum_norm: partials[ci],
                tail_oscillation: oscillations[ci],
                quadratic_variation: qvs[ci],
            })
            .collect(),
        total_quadratic_variation: qv,
        first_step: first,
        last_step: last,
    })
}

/// The lower bound `1/((d-1) sqrt(2d))` on the largest coordinate of a unit
/// tangent vector, as used by the noise positivity condition.
pub fn theta_max_lower_bound(d: usize) -> f64 {
    1.0 / ((d as f64 - 1.0) * (2.0 * d as f64).sqrt())
}

/// Exact `(n+1+N0) * E((ε(n)·θ)⁺ | F_n)` by enumerating all `d²` joint
/// outcomes of one step from `state`. `θ` must be a unit vector tangent to
/// `D` (both `d`-blocks summing to zero).
pub fn noise_positivity_probe(state: &WalkState, theta: &[f64], params: &Params) -> Result<f64> {
    let d = params.d();
    if theta.len() != 2 * d {
        return Err(Error::Domain(format!(
            "theta has length {}, expected {}",
            theta.len(),
            2 * d
        )));
    }
    let sum_x: f64 = theta[..d].iter().sum();
    let sum_y: f64 = theta[d..].iter().sum();
    if sum_x.abs() > 1e-9 || sum_y.abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "theta outside the tangent space: block sums {sum_x:e}, {sum_y:e}"
        )));
    }
    let norm: f64 = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("theta has L2 norm {norm}, expected 1")));
    }
    let z = occupation(state, params);
    let law_x = model::kernel(z.y(), params); // law of X_{n+1}
    let law_y = model::kernel(z.x(), params); // law of Y_{n+1}
    let a: f64 = law_x
        .coords()
        .iter()
        .zip(&theta[..d])
        .map(|(p, t)| p * t)
        .sum();
    let b: f64 = law_y
        .coords()
        .iter()
        .zip(&theta[d..])
        .map(|(p, t)| p * t)
        .sum();
    let mut expect = 0.0;
    for i in 0..d {
        for j in 0..d {
            let dot = theta[i] + theta[d + j] - a - b;
            if dot > 0.0 {
                expect += law_x.coords()[i] * law_y.coords()[j] * dot;
            }
        }
    }
    Ok(expect)
}

/// Aggregate of a Monte Carlo campaign.
#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloReport {
    pub runs: u64,
    pub n_steps: u64,
    pub base_seed: u64,
    pub trapped_count: u64,
    pub trapped_rate: f64,
    pub mean_final_h: f64,
    /// Runs ending within L¹ distance 0.01 of the uniform pair.
    pub near_uniform_count: u64,
    pub near_uniform_rate: f64,
    pub summaries: Vec<RunSummary>,
}

pub const NEAR_UNIFORM_RADIUS: f64 = 0.01;

/// Independent runs with seeds `base_seed + k`, aggregated by a fold over
/// the run index. The aggregation is order-independent, so the worker count
/// never changes any emitted value.
pub fn monte_carlo(
    params: &Params,
    runs: u64,
    n_steps: u64,
    base_seed: u64,
    opts: &RunOptions,
) -> Result<MonteCarloReport> {
    if runs == 0 {
        return Err(Error::InvalidParams("runs must be >= 1".into()));
    }
    let summaries: Vec<RunSummary> = (0..runs)
        .into_par_iter()
        .map(|k| run(params, n_steps, base_seed + k, opts).map(|(_, s)| s))
        .collect::<Result<Vec<_>>>()?;
    let trapped_count = summaries.iter().filter(|s| s.trapped).count() as u64;
    let near_uniform_count = summaries
        .iter()
        .filter(|s| s.dist_to_uniform < NEAR_UNIFORM_RADIUS)
        .count() as u64;
    let mean_final_h = summaries.iter().map(|s| s.final_h).sum::<f64>() / runs as f64;
    Ok(MonteCarloReport {
        runs,
        n_steps,
        base_seed,
        trapped_count,
        trapped_rate: trapped_count as f64 / runs as f64,
        mean_final_h,
        near_uniform_count,
        near_uniform_rate: near_uniform_count as f64 / runs as f64,
        summaries,
    })
}
