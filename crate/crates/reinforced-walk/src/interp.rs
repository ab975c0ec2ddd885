//! The continuous-time interpolated process: the logarithmic time grid
//! `τ_n = Σ_{k=1}^n 1/(k+N0)`, piecewise-affine evaluation through the
//! recorded chain states, the finite-horizon gap against the semiflow, and
//! the windowed noise supremum controlling it.

use crate::error::{Error, Result};
use crate::flow::{self, FlowConfig};
use crate::model::{Params, ProductPoint, SimplexPoint};
use crate::walk::{NoiseSample, Trajectory};
use serde::Serialize;

/// Cached prefix sums of the step sizes `σ_k = 1/(k+N0)`.
#[derive(Debug, Clone)]
pub struct TimeGrid {
    n0: u64,
    tau: Vec<f64>,
}

impl TimeGrid {
    /// Precomputes `τ_0..τ_max_n`.
    pub fn with_len(n0: u64, max_n: u64) -> Self {
        let mut tau = Vec::with_capacity(max_n as usize + 1);
        tau.push(0.0);
        let mut acc = 0.0;
        for k in 1..=max_n {
            acc += 1.0 / (k + n0) as f64;
            tau.push(acc);
        }
        Self { n0, tau }
    }

    pub fn n0(&self) -> u64 {
        self.n0
    }

    /// Largest step index covered.
    pub fn max_n(&self) -> u64 {
        (self.tau.len() - 1) as u64
    }

    /// The step size `σ_n = 1/(n+N0)`.
    pub fn sigma(&self, n: u64) -> f64 {
        1.0 / (n + self.n0) as f64
    }

    pub fn tau(&self, n: u64) -> Result<f64> {
        self.tau
            .get(n as usize)
            .copied()
            .ok_or(Error::WindowExceeded {
                t: n as f64,
                lo: 0.0,
                hi: self.max_n() as f64,
            })
    }

    /// `m(t) = sup { p : τ_p <= t }`, the right inverse of `τ`.
    pub fn m_of_t(&self, t: f64) -> Result<u64> {
        let last = *self.tau.last().expect("grid nonempty");
        if !(0.0..=last).contains(&t) {
            return Err(Error::WindowExceeded {
                t,
                lo: 0.0,
                hi: last,
            });
        }
        // partition_point: first index with tau > t
        let idx = self.tau.partition_point(|&x| x <= t);
        Ok((idx - 1) as u64)
    }
}

/// A trajectory viewed as the continuous-time path that is affine on each
/// `[τ_n, τ_{n+1}]` and hits `z(n)` at `τ_n`. Evaluation needs the queried
/// window recorded unthinned.
pub struct InterpolatedPath<'a> {
    traj: &'a Trajectory,
    grid: TimeGrid,
}

impl<'a> InterpolatedPath<'a> {
    pub fn new(traj: &'a Trajectory) -> Result<Self> {
        let last = traj.samples.last().ok_or(Error::EmptyTail)?;
        let grid = TimeGrid::with_len(traj.params.n0(), last.n + 1);
        Ok(Self { traj, grid })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn params(&self) -> &Params {
        &self.traj.params
    }

    pub fn noise(&self) -> &[NoiseSample] {
        &self.traj.noise
    }

    fn sample(&self, n: u64) -> Result<&ProductPoint> {
        let idx = self
            .traj
            .samples
            .binary_search_by_key(&n, |s| s.n)
            .map_err(|_| {
                Error::Domain(format!(
                    "step {n} not recorded; the queried window must be unthinned"
                ))
            })?;
        Ok(&self.traj.samples[idx].z)
    }

    /// Evaluates the affine interpolant at flow time `t`.
    pub fn eval(&self, t: f64) -> Result<ProductPoint> {
        let m = self.grid.m_of_t(t)?;
        let tau_m = self.grid.tau(m)?;
        let left = self.sample(m)?;
        if t == tau_m {
            return Ok(left.clone());
        }
        let tau_next = self.grid.tau(m + 1)?;
        let right = self.sample(m + 1)?;
        let lambda = (t - tau_m) / (tau_next - tau_m);
        let mix = |a: &SimplexPoint, b: &SimplexPoint| {
            SimplexPoint::new(
                a.coords()
                    .iter()
                    .zip(b.coords())
                    .map(|(x, y)| (1.0 - lambda) * x + lambda * y)
                    .collect(),
            )
        };
        ProductPoint::new(mix(left.x(), right.x())?, mix(left.y(), right.y())?)
    }
}

/// A rigorous L¹→L¹ Lipschitz bound for the vector field on `D`, from the
/// chain rule through the floored weight: `1 + 2 α δ^(-(α+1)) / d`.
pub fn lipschitz_bound(params: &Params) -> f64 {
    1.0 + 2.0 * params.alpha() * params.delta().powf(-(params.alpha() + 1.0)) / params.d() as f64
}

/// Sup-norm bound of the field on `D`: each block is a difference of two
/// probability vectors.
pub fn field_sup_bound() -> f64 {
    4.0
}

/// `ε(n, T) = sup ||Σ_{i=n}^{k-1} ε(i)||_1` over `k` with
/// `0 <= τ_k - τ_n <= T + 1`. The noise window is deliberately one unit
/// longer than the gap horizon it controls.
pub fn error_sup(noise: &[NoiseSample], grid: &TimeGrid, n: u64, t_horizon: f64) -> Result<f64> {
    let tau_n = grid.tau(n)?;
    let limit = tau_n + t_horizon + 1.0;
    if grid.tau(grid.max_n())? < limit {
        return Err(Error::WindowExceeded {
            t: limit,
            lo: 0.0,
            hi: grid.tau(grid.max_n())?,
        });
    }
    let k_max = grid.m_of_t(limit)?;
    if k_max == n {
        return Ok(0.0);
    }
    // need eps(n) .. eps(k_max - 1)
    let start = noise
        .binary_search_by_key(&n, |s| s.step)
        .map_err(|_| Error::NoiseNotRecorded(n, k_max))?;
    let span = (k_max - n) as usize;
    if start + span > noise.len() {
        return Err(Error::NoiseNotRecorded(n, k_max));
    }
    let d = noise[start].eps_x.len();
    let mut cum = vec![0.0f64; 2 * d];
    let mut sup = 0.0f64;
    for (off, s) in noise[start..start + span].iter().enumerate() {
        if s.step != n + off as u64 {
            return Err(Error::NoiseNotRecorded(n, k_max));
        }
        for k in 0..d {
            cum[k] += s.eps_x[k];
            cum[d + k] += s.eps_y[k];
        }
        let norm: f64 = cum.iter().map(|v| v.abs()).sum();
        if norm > sup {
            sup = norm;
        }
    }
    Ok(sup)
}

/// The measured finite-horizon gap together with its Gronwall-type bound.
#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub t: f64,
    pub horizon: f64,
    pub m_t: u64,
    /// `sup_h ||z(t+h) - Φ_h(z(t))||_1` over the sampled `h`-grid.
    pub gap: f64,
    pub eps_sup: f64,
    pub lipschitz: f64,
    pub sigma_end: f64,
    /// `e^(LT) (L T σ_{m(t+T)} ||F||_D + 2 ε(m(t),T) (L T + 1))`; may be
    /// infinite when `L T` overflows the exponential.
    pub bound: f64,
    pub bound_holds: bool,
}

/// `sup_{0<=h<=T} ||z(t+h) - Φ_h(z(t))||_1`, sampled on the integrator's
/// step grid (a lower bound on the true supremum; both paths have bounded
/// derivatives, so grid refinement converges).
pub fn pseudotrajectory_gap(
    path: &InterpolatedPath,
    config: &FlowConfig,
    t: f64,
    horizon: f64,
) -> Result<f64> {
    gap_with_bound(path, config, t, horizon).map(|r| r.gap)
}

/// Measures the gap and evaluates the Gronwall-type bound on the same
/// window. Requires noise records covering `[m(t), m(τ(m(t)) + T + 1))`.
pub fn gap_with_bound(
    path: &InterpolatedPath,
    config: &FlowConfig,
    t: f64,
    horizon: f64,
) -> Result<GapReport> {
    config.validate()?;
    if horizon < 0.0 {
        return Err(Error::InvalidParams(format!("horizon {horizon} < 0")));
    }
    let params = *path.params();
    let start = path.eval(t)?;
    let d = start.dim();
    let mut z: Vec<f64> = start
        .x()
        .coords()
        .iter()
        .chain(start.y().coords())
        .copied()
        .collect();
    let mut integ = flow::Integrator::new(d);
    let mut gap = 0.0f64;
    let mut h = 0.0;
    while h < horizon {
        let dt = config.step.min(horizon - h);
        integ.step(&mut z, dt, &params, config.renormalize, h)?;
        h += dt;
        let on_path = path.eval(t + h)?;
        let dist: f64 = on_path
            .x()
            .coords()
            .iter()
            .chain(on_path.y().coords())
            .zip(&z)
            .map(|(a, b)| (a - b).abs())
            .sum();
        if dist > gap {
            gap = dist;
        }
    }

    let grid = path.grid();
    let m_t = grid.m_of_t(t)?;
    let m_end = grid.m_of_t(t + horizon)?;
    let eps_sup = error_sup(path.noise(), grid, m_t, horizon)?;
    let l = lipschitz_bound(&params);
    let sigma_end = grid.sigma(m_end);
    let lt = l * horizon;
    let bound = lt.exp() * (lt * sigma_end * field_sup_bound() + 2.0 * eps_sup * (lt + 1.0));
    Ok(GapReport {
        t,
        horizon,
        m_t,
        gap,
        eps_sup,
        lipschitz: l,
        sigma_end,
        bound,
        bound_holds: gap <= bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::joint_support;
    use crate::walk::{run, RunOptions};

    fn params(d: usize, alpha: f64, delta: f64) -> Params {
        Params::new(d, alpha, delta).unwrap()
    }

    #[test]
    fn tau_hand_values() {
        // N0 = 3: tau_1 = 1/4, tau_2 = 1/4 + 1/5
        let g = TimeGrid::with_len(3, 10);
        assert_eq!(g.tau(0).unwrap(), 0.0);
        assert!((g.tau(1).unwrap() - 0.25).abs() < 1e-15);
        assert!((g.tau(2).unwrap() - 0.45).abs() < 1e-15);
        assert!(g.tau(11).is_err());
    }

    #[test]
    fn tau_is_increasing_and_divergent() {
        let g = TimeGrid::with_len(3, 2_000_000);
        let mut prev = -1.0;
        for n in (0..=2_000_000).step_by(10_000) {
            let t = g.tau(n).unwrap();
            assert!(t > prev);
            prev = t;
        }
        // grows like log n: passes 10 by n ~ e^10 * n0
        assert!(g.tau(2_000_000).unwrap() > 10.0);
        // log-accuracy: tau_n - (log(n + n0) - log(n0)) stays bounded by the
        // first step size
        let n = 1_000_000u64;
        let approx = ((n + 3) as f64 / 3.0).ln();
        assert!((g.tau(n).unwrap() - approx).abs() < 1.0 / 4.0);
    }

    #[test]
    fn m_of_t_inverts_tau() {
        let g = TimeGrid::with_len(3, 10_000);
        for n in 0..10_000u64 {
            assert_eq!(g.m_of_t(g.tau(n).unwrap()).unwrap(), n);
        }
        assert_eq!(g.m_of_t(g.tau(1).unwrap() + 1e-12).unwrap(), 1);
        assert!(g.m_of_t(-0.1).is_err());
        assert!(g.m_of_t(g.tau(10_000).unwrap() + 1.0).is_err());
    }

    #[test]
    fn eval_reproduces_grid_points_exactly() {
        let p = params(3, 2.0, 0.05);
        let (t, _) = run(&p, 200, 11, &RunOptions::default()).unwrap();
        let path = InterpolatedPath::new(&t).unwrap();
        for s in &t.samples {
            let z = path.eval(path.grid().tau(s.n).unwrap()).unwrap();
            assert_eq!(&z, &s.z);
        }
    }

    #[test]
    fn eval_midpoint_is_the_arithmetic_mean() {
        let p = params(3, 2.0, 0.05);
        let (t, _) = run(&p, 50, 13, &RunOptions::default()).unwrap();
        let path = InterpolatedPath::new(&t).unwrap();
        let g = path.grid();
        let mid = 0.5 * (g.tau(10).unwrap() + g.tau(11).unwrap());
        let z = path.eval(mid).unwrap();
        let a = &t.samples[10].z;
        let b = &t.samples[11].z;
        for k in 0..3 {
            let expect = 0.5 * (a.x().coords()[k] + b.x().coords()[k]);
            assert!((z.x().coords()[k] - expect).abs() < 1e-15);
        }
        // interpolants stay inside the product of simplices
        assert!(z.x().coords().iter().all(|c| *c >= 0.0));
        assert!((z.x().coords().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eval_requires_unthinned_window() {
        let p = params(3, 2.0, 0.05);
        let opts = RunOptions {
            thinning: 10,
            ..RunOptions::default()
        };
        let (t, _) = run(&p, 100, 17, &opts).unwrap();
        let path = InterpolatedPath::new(&t).unwrap();
        let inside = 0.5 * (path.grid().tau(13).unwrap() + path.grid().tau(14).unwrap());
        assert!(path.eval(inside).is_err());
    }

    #[test]
    fn interpolant_h_respects_bilinear_envelope() {
        // H(z(t)) deviates from the chord by at most s(1-s) |Σ Δx Δy|
        let p = params(3, 4.0, 0.02);
        let (t, _) = run(&p, 1000, 29, &RunOptions::default()).unwrap();
        let path = InterpolatedPath::new(&t).unwrap();
        let g = path.grid();
        for n in (0..1000).step_by(7) {
            let a = &t.samples[n].z;
            let b = &t.samples[n + 1].z;
            let corr = a.x().l1_distance(b.x()) * a.y().l1_distance(b.y());
            let lo = t.samples[n].h.min(t.samples[n + 1].h) - corr;
            let hi = t.samples[n].h.max(t.samples[n + 1].h) + corr;
            for frac in [0.25, 0.5, 0.75] {
                let tt = g.tau(n as u64).unwrap() * (1.0 - frac) + g.tau(n as u64 + 1).unwrap() * frac;
                let h = joint_support(&path.eval(tt).unwrap());
                assert!(h >= lo - 1e-15 && h <= hi + 1e-15);
            }
        }
    }

    #[test]
    fn error_sup_synthetic() {
        let g = TimeGrid::with_len(3, 2000);
        let d = 2;
        let zeros: Vec<NoiseSample> = (0..2000)
            .map(|n| NoiseSample {
                step: n,
                eps_x: vec![0.0; d],
                eps_y: vec![0.0; d],
            })
            .collect();
        assert_eq!(error_sup(&zeros, &g, 10, 1.0).unwrap(), 0.0);
        let mut one = zeros.clone();
        one[10].eps_x = vec![0.125, -0.125];
        assert_eq!(error_sup(&one, &g, 10, 1.0).unwrap(), 0.25);
        // missing records
        assert!(error_sup(&zeros[..100], &g, 90, 1.0).is_err());
        // grid too short for the window
        let short = TimeGrid::with_len(3, 12);
        assert!(error_sup(&zeros, &short, 10, 1.0).is_err());
    }

    #[test]
    fn gap_vanishes_at_zero_horizon() {
        let p = params(3, 10.0, 0.05);
        let opts = RunOptions {
            record_noise_all: true,
            ..RunOptions::default()
        };
        let (t, _) = run(&p, 3000, 19, &opts).unwrap();
        let path = InterpolatedPath::new(&t).unwrap();
        let t0 = path.grid().tau(100).unwrap();
        let gap = pseudotrajectory_gap(&path, &FlowConfig::default(), t0, 0.0).unwrap();
        assert_eq!(gap, 0.0);
    }

    #[test]
    fn noiseless_path_tracks_the_flow() {
        // feed the interpolator a trajectory generated by the integrator
        // itself on the tau grid: the gap reduces to interpolation plus
        // integrator error
        let p = params(3, 2.0, 0.2);
        let n0 = p.n0();
        let cfg = FlowConfig {
            step: 1e-4,
            ..FlowConfig::default()
        };
        let grid = TimeGrid::with_len(n0, 700);
        let mut zs = vec![ProductPoint::new(
            SimplexPoint::new(vec![0.5, 0.3, 0.2]).unwrap(),
            SimplexPoint::new(vec![0.25, 0.35, 0.4]).unwrap(),
        )
        .unwrap()];
        for n in 0..600u64 {
            let dt = grid.tau(n + 1).unwrap() - grid.tau(n).unwrap();
            zs.push(flow::integrate(&zs[n as usize], dt, &cfg, &p).unwrap());
        }
        let traj = Trajectory {
            params: p,
            seed: 0,
            thinning: 1,
            noise: (0..600)
                .map(|n| NoiseSample {
                    step: n,
                    eps_x: vec![0.0; 3],
                    eps_y: vec![0.0; 3],
                })
                .collect(),
            samples: zs
                .iter()
                .enumerate()
                .map(|(n, z)| crate::walk::TrajectorySample {
                    n: n as u64,
                    z: z.clone(),
                    h: joint_support(z),
                    in_s_delta: false,
                })
                .collect(),
        };
        let path = InterpolatedPath::new(&traj).unwrap();
        let t0 = path.grid().tau(100).unwrap();
        let rep = gap_with_bound(&path, &cfg, t0, 0.5).unwrap();
        // the affine chord deviates from the flow by O(sigma^2) per cell
        assert!(rep.gap < 1e-4, "gap {}", rep.gap);
        assert_eq!(rep.eps_sup, 0.0);
        assert!(rep.bound_holds);
        // mild parameters keep the Gronwall bound finite and meaningful
        assert!(rep.bound.is_finite());
    }

    #[test]
    fn windowed_noise_sup_decays_along_the_chain() {
        // eps(1e5, 1) < eps(1e3, 1) for most seeds: the martingale tail
        // flattens as the step sizes shrink
        let p = params(3, 10.0, 0.05);
        let horizon = 1.0f64;
        let window_hi =
            |n: u64| ((n + p.n0() + 1) as f64 * (horizon + 1.0).exp()).ceil() as u64 + 2;
        let steps = window_hi(100_000);
        let seeds = 12u64;
        let mut decayed = 0;
        for seed in 0..seeds {
            let opts = RunOptions {
                thinning: steps,
                windows: vec![(1_000, window_hi(1_000)), (100_000, window_hi(100_000))],
                ..RunOptions::default()
            };
            let (t, _) = run(&p, steps, 3000 + seed, &opts).unwrap();
            let grid = TimeGrid::with_len(p.n0(), steps + 1);
            let early = error_sup(&t.noise, &grid, 1_000, horizon).unwrap();
            let late = error_sup(&t.noise, &grid, 100_000, horizon).unwrap();
            assert!(early > 0.0 && late > 0.0);
            if late < early {
                decayed += 1;
            }
        }
        assert!(decayed * 100 >= seeds * 80, "decayed in {decayed}/{seeds} runs");
    }

    #[test]
    fn gap_report_on_a_real_run() {
        let p = params(3, 10.0, 0.05);
        let opts = RunOptions {
            thinning: 1,
            record_noise_all: true,
            ..RunOptions::default()
        };
        let (t, _) = run(&p, 12_000, 23, &opts).unwrap();
        let path = InterpolatedPath::new(&t).unwrap();
        let t0 = path.grid().tau(1000).unwrap();
        let rep = gap_with_bound(&path, &FlowConfig::default(), t0, 1.0).unwrap();
        assert!(rep.gap > 0.0);
        assert!(rep.bound_holds);
        assert!(rep.eps_sup > 0.0);
    }
}
