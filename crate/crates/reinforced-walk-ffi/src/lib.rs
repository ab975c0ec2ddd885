//! C ABI over the core library so other languages can bind: opaque handles
//! for parameter sets, integer error codes, caller-owned flat buffers.
//!
//! Conventions:
//! - every function returns an `RwStatus` code; outputs go through pointers;
//! - state vectors are flat `double` arrays, `x` first then `y` (`2d` total);
//! - no call unwinds across the boundary (panics become `RW_STATUS_PANIC`);
//! - handles from `rw_params_new` must be released with `rw_params_free`.
//!
//! The matching header lives in `include/reinforced_walk.h` (kept in sync
//! by the symbol test; `cbindgen.toml` is provided for regeneration).

use reinforced_walk::flow::{self, FlowConfig};
use reinforced_walk::model::{self, Params, ProductPoint, SimplexPoint};
use reinforced_walk::oracles::{self, GridSpec};
use reinforced_walk::spectra;
use reinforced_walk::walk::{self, RunOptions};
use std::ffi::{c_char, c_double, c_int};
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Status codes returned by every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RwStatus {
    RwStatusOk = 0,
    RwStatusNullPointer = 1,
    RwStatusInvalidArgument = 2,
    RwStatusDomainError = 3,
    RwStatusPanic = 4,
}

use RwStatus::*;

/// Opaque parameter handle.
pub struct RwParams {
    inner: Params,
}

/// Scalar results of one simulated chain.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RwRunSummary {
    pub final_h: c_double,
    pub dist_to_uniform: c_double,
    /// 1 when every recorded tail sample lies in the trapping region.
    pub trapped: c_int,
}

/// Aggregate of a Monte Carlo campaign.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RwMonteCarloSummary {
    pub trapped_rate: c_double,
    pub near_uniform_rate: c_double,
    pub mean_final_h: c_double,
}

fn map_err(e: &reinforced_walk::Error) -> RwStatus {
    use reinforced_walk::Error::*;
    match e {
        InvalidParams(_) => RwStatusInvalidArgument,
        InvalidSimplex(_) | Domain(_) | WindowExceeded { .. } | EmptyTail
        | NoiseNotRecorded(_, _) | NotSymmetric(_) => RwStatusDomainError,
        EigenNoConvergence | IntegratorMisconfigured { .. } => RwStatusPanic,
    }
}

fn guarded(body: impl FnOnce() -> RwStatus) -> RwStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(code) => code,
        Err(_) => RwStatusPanic,
    }
}

unsafe fn slice_arg<'a>(ptr: *const c_double, len: usize) -> Option<&'a [c_double]> {
    if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

unsafe fn slice_out<'a>(ptr: *mut c_double, len: usize) -> Option<&'a mut [c_double]> {
    if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts_mut(ptr, len))
    }
}

fn product_point(x: &[f64], y: &[f64]) -> Result<ProductPoint, reinforced_walk::Error> {
    ProductPoint::new(SimplexPoint::new(x.to_vec())?, SimplexPoint::new(y.to_vec())?)
}

/// Library version as a NUL-terminated static string.
#[no_mangle]
pub extern "C" fn rw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Allocates a parameter handle. `n0 = 0` selects the default offset `d`.
///
/// # Safety
///
/// `out` must be null or valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn rw_params_new(
    d: usize,
    alpha: c_double,
    delta: c_double,
    n0: u64,
    out: *mut *mut RwParams,
) -> RwStatus {
    guarded(|| {
        if out.is_null() {
            return RwStatusNullPointer;
        }
        let params = if n0 == 0 {
            Params::new(d, alpha, delta)
        } else {
            Params::with_n0(d, alpha, delta, n0)
        };
        match params {
            Ok(inner) => {
                let handle = Box::new(RwParams { inner });
                unsafe { *out = Box::into_raw(handle) };
                RwStatusOk
            }
            Err(e) => map_err(&e),
        }
    })
}

/// Releases a handle from `rw_params_new`. A null pointer is a no-op.
///
/// # Safety
///
/// `params` must be null or a live handle obtained from
/// [`rw_params_new`] that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn rw_params_free(params: *mut RwParams) {
    if !params.is_null() {
        drop(unsafe { Box::from_raw(params) });
    }
}

/// The trapping-region level `2 d^(1/(alpha+1)) delta`.
///
/// # Safety
///
/// `params` must be a live handle; `out` must be null or valid for
/// writing one double.
#[no_mangle]
pub unsafe extern "C" fn rw_s_delta_bound(params: *const RwParams, out: *mut c_double) -> RwStatus {
    guarded(|| {
        let (Some(p), false) = (unsafe { params.as_ref() }, out.is_null()) else {
            return RwStatusNullPointer;
        };
        unsafe { *out = p.inner.s_delta_bound() };
        RwStatusOk
    })
}

/// Jump kernel: writes `pi(p)` (length `d`) into `out`.
///
/// # Safety
///
/// `params` must be a live handle; `point` and `out` must be null or
/// valid for `d` doubles.
#[no_mangle]
pub unsafe extern "C" fn rw_kernel(
    params: *const RwParams,
    point: *const c_double,
    out: *mut c_double,
) -> RwStatus {
    guarded(|| {
        let Some(p) = (unsafe { params.as_ref() }) else {
            return RwStatusNullPointer;
        };
        let d = p.inner.d();
        let (Some(point), Some(out)) = (unsafe { slice_arg(point, d) }, unsafe { slice_out(out, d) })
        else {
            return RwStatusNullPointer;
        };
        match SimplexPoint::new(point.to_vec()) {
            Ok(sp) => {
                out.copy_from_slice(model::kernel(&sp, &p.inner).coords());
                RwStatusOk
            }
            Err(e) => map_err(&e),
        }
    })
}

/// Joint support `H(x, y) = sum x_i y_i` of a `2d` state.
///
/// # Safety
///
/// `state` must be null or valid for `2 * d` doubles; `out` null or
/// valid for one double.
#[no_mangle]
pub unsafe extern "C" fn rw_joint_support(
    d: usize,
    state: *const c_double,
    out: *mut c_double,
) -> RwStatus {
    guarded(|| {
        let (Some(state), false) = (unsafe { slice_arg(state, 2 * d) }, out.is_null()) else {
            return RwStatusNullPointer;
        };
        if d < 2 {
            return RwStatusInvalidArgument;
        }
        let h: f64 = state[..d].iter().zip(&state[d..]).map(|(a, b)| a * b).sum();
        unsafe { *out = h };
        RwStatusOk
    })
}

/// Closed-form derivative of the joint support along the mean-field flow.
///
/// # Safety
///
/// `params` must be a live handle; `state` must be null or valid for
/// `2 * d` doubles; `out` null or valid for one double.
#[no_mangle]
pub unsafe extern "C" fn rw_dh_dt(
    params: *const RwParams,
    state: *const c_double,
    out: *mut c_double,
) -> RwStatus {
    guarded(|| {
        let Some(p) = (unsafe { params.as_ref() }) else {
            return RwStatusNullPointer;
        };
        let d = p.inner.d();
        let (Some(state), false) = (unsafe { slice_arg(state, 2 * d) }, out.is_null()) else {
            return RwStatusNullPointer;
        };
        match product_point(&state[..d], &state[d..]) {
            Ok(z) => {
                unsafe { *out = flow::dh_dt(&z, &p.inner) };
                RwStatusOk
            }
            Err(e) => map_err(&e),
        }
    })
}

/// Integrates the mean-field flow in place: `state` (length `2d`) advances
/// by time `t` with RK4 steps of size `step`.
///
/// # Safety
///
/// `params` must be a live handle; `state` must be null or valid for
/// reading and writing `2 * d` doubles.
#[no_mangle]
pub unsafe extern "C" fn rw_flow_integrate(
    params: *const RwParams,
    state: *mut c_double,
    t: c_double,
    step: c_double,
) -> RwStatus {
    guarded(|| {
        let Some(p) = (unsafe { params.as_ref() }) else {
            return RwStatusNullPointer;
        };
        let d = p.inner.d();
        let Some(state) = (unsafe { slice_out(state, 2 * d) }) else {
            return RwStatusNullPointer;
        };
        let cfg = FlowConfig {
            step,
            max_time: t.max(1.0),
            renormalize: true,
        };
        let z0 = match product_point(&state[..d], &state[d..]) {
            Ok(z) => z,
            Err(e) => return map_err(&e),
        };
        match flow::integrate(&z0, t, &cfg, &p.inner) {
            Ok(z) => {
                state[..d].copy_from_slice(z.x().coords());
                state[d..].copy_from_slice(z.y().coords());
                RwStatusOk
            }
            Err(e) => map_err(&e),
        }
    })
}

/// Runs the chain for `n_steps` steps from seed `seed`. Writes the final
/// occupation pair into `final_state` (length `2d`, may be null) and the
/// scalar summary into `summary`.
///
/// # Safety
///
/// `params` must be a live handle; `final_state` must be null or valid
/// for `2 * d` doubles; `summary` null or valid for one record.
#[no_mangle]
pub unsafe extern "C" fn rw_simulate(
    params: *const RwParams,
    n_steps: u64,
    seed: u64,
    tail_fraction: c_double,
    final_state: *mut c_double,
    summary: *mut RwRunSummary,
) -> RwStatus {
    guarded(|| {
        let (Some(p), false) = (unsafe { params.as_ref() }, summary.is_null()) else {
            return RwStatusNullPointer;
        };
        let d = p.inner.d();
        let opts = RunOptions {
            thinning: (n_steps / 1000).max(1),
            tail_fraction,
            ..RunOptions::default()
        };
        match walk::run(&p.inner, n_steps, seed, &opts) {
            Ok((traj, s)) => {
                if !final_state.is_null() {
                    let out = unsafe { slice_out(final_state, 2 * d) }.expect("checked non-null");
                    let z = &traj.samples.last().expect("final sample").z;
                    out[..d].copy_from_slice(z.x().coords());
                    out[d..].copy_from_slice(z.y().coords());
                }
                unsafe {
                    *summary = RwRunSummary {
                        final_h: s.final_h,
                        dist_to_uniform: s.dist_to_uniform,
                        trapped: s.trapped as c_int,
                    };
                }
                RwStatusOk
            }
            Err(e) => map_err(&e),
        }
    })
}

/// Monte Carlo campaign with seeds `base_seed..base_seed+runs`.
///
/// # Safety
///
/// `params` must be a live handle; `out` must be null or valid for one
/// record.
#[no_mangle]
pub unsafe extern "C" fn rw_monte_carlo(
    params: *const RwParams,
    runs: u64,
    n_steps: u64,
    base_seed: u64,
    tail_fraction: c_double,
    out: *mut RwMonteCarloSummary,
) -> RwStatus {
    guarded(|| {
        let (Some(p), false) = (unsafe { params.as_ref() }, out.is_null()) else {
            return RwStatusNullPointer;
        };
        let opts = RunOptions {
            thinning: (n_steps / 1000).max(1),
            tail_fraction,
            ..RunOptions::default()
        };
        match walk::monte_carlo(&p.inner, runs, n_steps, base_seed, &opts) {
            Ok(rep) => {
                unsafe {
                    *out = RwMonteCarloSummary {
                        trapped_rate: rep.trapped_rate,
                        near_uniform_rate: rep.near_uniform_rate,
                        mean_final_h: rep.mean_final_h,
                    };
                }
                RwStatusOk
            }
            Err(e) => map_err(&e),
        }
    })
}

/// Sorted eigenvalues of the flow linearization at the uniform pair
/// (`out` holds `2d` doubles).
///
/// # Safety
///
/// `params` must be a live handle; `out` must be null or valid for
/// `2 * d` doubles.
#[no_mangle]
pub unsafe extern "C" fn rw_jacobian_eigenvalues(
    params: *const RwParams,
    out: *mut c_double,
) -> RwStatus {
    guarded(|| {
        let Some(p) = (unsafe { params.as_ref() }) else {
            return RwStatusNullPointer;
        };
        let d = p.inner.d();
        let Some(out) = (unsafe { slice_out(out, 2 * d) }) else {
            return RwStatusNullPointer;
        };
        match spectra::numeric_eigenvalues(&spectra::jacobian_at_uniform(&p.inner)) {
            Ok(eig) => {
                out.copy_from_slice(&eig);
                RwStatusOk
            }
            Err(e) => map_err(&e),
        }
    })
}

/// Grid verification of the master inequality
/// `2 sum(u_i v_i) >= ratio(u) + ratio(v)`. Writes the worst margin and the
/// number of violating lattice pairs.
///
/// # Safety
///
/// `min_margin` and `violations` must be null or valid for one write
/// each.
#[no_mangle]
pub unsafe extern "C" fn rw_verify_master_inequality(
    d: usize,
    alpha: c_double,
    resolution: u32,
    interior_floor: c_double,
    min_margin: *mut c_double,
    violations: *mut u64,
) -> RwStatus {
    guarded(|| {
        if min_margin.is_null() || violations.is_null() {
            return RwStatusNullPointer;
        }
        let grid = match GridSpec::new(resolution, interior_floor) {
            Ok(g) => g,
            Err(e) => return map_err(&e),
        };
        match oracles::verify_prop_a1_grid(d, alpha, &grid) {
            Ok(rep) => {
                unsafe {
                    *min_margin = rep.min_margin;
                    *violations = rep.violation_count;
                }
                RwStatusOk
            }
            Err(e) => map_err(&e),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    fn params(d: usize, alpha: f64, delta: f64) -> *mut RwParams {
        let mut handle: *mut RwParams = ptr::null_mut();
        let code = unsafe { rw_params_new(d, alpha, delta, 0, &mut handle) };
        assert_eq!(code, RwStatusOk);
        assert!(!handle.is_null());
        handle
    }

    fn free(p: *mut RwParams) {
        unsafe { rw_params_free(p) };
    }

    #[test]
    fn version_is_a_c_string() {
        let v = rw_version();
        assert!(!v.is_null());
        let s = unsafe { std::ffi::CStr::from_ptr(v) }.to_str().unwrap();
        assert_eq!(s, env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn param_validation_maps_to_codes() {
        unsafe {
            let mut handle: *mut RwParams = ptr::null_mut();
            assert_eq!(rw_params_new(1, 1.0, 0.1, 0, &mut handle), RwStatusInvalidArgument);
            assert_eq!(rw_params_new(3, -1.0, 0.1, 0, &mut handle), RwStatusInvalidArgument);
            assert_eq!(rw_params_new(3, 1.0, 0.5, 0, &mut handle), RwStatusInvalidArgument);
            assert_eq!(rw_params_new(3, 1.0, 0.1, 0, ptr::null_mut()), RwStatusNullPointer);
            rw_params_free(ptr::null_mut()); // no-op
        }
    }

    #[test]
    fn kernel_through_the_abi() {
        let p = params(3, 2.0, 0.01);
        let point = [0.5, 0.3, 0.2];
        let mut out = [0.0f64; 3];
        unsafe {
            assert_eq!(rw_kernel(p, point.as_ptr(), out.as_mut_ptr()), RwStatusOk);
            let expect = [0.09972299168975068, 0.2770083102493075, 0.6232686980609418];
            for (a, b) in out.iter().zip(expect) {
                assert!((a - b).abs() < 1e-12);
            }
            assert_eq!(rw_kernel(p, ptr::null(), out.as_mut_ptr()), RwStatusNullPointer);
            let bad = [0.9, 0.9, one_third()];
            assert_eq!(rw_kernel(p, bad.as_ptr(), out.as_mut_ptr()), RwStatusDomainError);
        }
        free(p);
    }

    fn one_third() -> f64 {
        1.0 / 3.0
    }

    #[test]
    fn joint_support_and_dh_dt() {
        let p = params(3, 10.0, 0.01);
        let state = [0.5, 0.3, 0.2, 0.2, 0.3, 0.5];
        unsafe {
            let mut h = 0.0;
            assert_eq!(rw_joint_support(3, state.as_ptr(), &mut h), RwStatusOk);
            assert!((h - 0.29).abs() < 1e-15);
            let mut dh = 0.0;
            assert_eq!(rw_dh_dt(p, state.as_ptr(), &mut dh), RwStatusOk);
            assert!(dh < 0.0);
        }
        free(p);
    }

    #[test]
    fn simulate_and_flow_through_the_abi() {
        let p = params(3, 10.0, 0.05);
        let mut summary = RwRunSummary {
            final_h: -1.0,
            dist_to_uniform: -1.0,
            trapped: -1,
        };
        let mut final_state = [0.0f64; 6];
        unsafe {
            let code = rw_simulate(p, 200_000, 7, 0.1, final_state.as_mut_ptr(), &mut summary);
            assert_eq!(code, RwStatusOk);
        }
        assert!(summary.final_h >= 0.0);
        assert_eq!(summary.trapped, 1);
        let sx: f64 = final_state[..3].iter().sum();
        assert!((sx - 1.0).abs() < 1e-9);

        // flow toward the uniform pair in the attracting regime
        let p2 = params(3, 0.5, 0.01);
        let mut state = [0.6, 0.3, 0.1, 0.1, 0.2, 0.7];
        unsafe {
            assert_eq!(rw_flow_integrate(p2, state.as_mut_ptr(), 50.0, 5e-3), RwStatusOk);
        }
        for c in state {
            assert!((c - one_third()).abs() < 1e-3);
        }
        free(p);
        free(p2);
    }

    #[test]
    fn eigenvalues_and_inequality_through_the_abi() {
        let p = params(3, 2.0, 0.05);
        let mut eig = [0.0f64; 6];
        unsafe {
            assert_eq!(rw_jacobian_eigenvalues(p, eig.as_mut_ptr()), RwStatusOk);
        }
        let expect = [-3.0, -3.0, -1.0, -1.0, 1.0, 1.0];
        for (a, b) in eig.iter().zip(expect) {
            assert!((a - b).abs() < 1e-10);
        }
        free(p);

        // resolution not divisible by d keeps the uniform pair (where the
        // margin vanishes exactly) off the lattice
        let mut margin = 0.0;
        let mut violations = 0u64;
        let code =
            unsafe { rw_verify_master_inequality(3, 10.0, 16, 0.01, &mut margin, &mut violations) };
        assert_eq!(code, RwStatusOk);
        assert_eq!(violations, 0);
        assert!(margin > 0.0);
    }

    #[test]
    fn header_declares_every_exported_symbol() {
        let header = include_str!("../include/reinforced_walk.h");
        for symbol in [
            "rw_version",
            "rw_params_new",
            "rw_params_free",
            "rw_s_delta_bound",
            "rw_kernel",
            "rw_joint_support",
            "rw_dh_dt",
            "rw_flow_integrate",
            "rw_simulate",
            "rw_monte_carlo",
            "rw_jacobian_eigenvalues",
            "rw_verify_master_inequality",
        ] {
            assert!(header.contains(symbol), "header is missing {symbol}");
        }
        for ty in ["RwStatus", "RwParams", "RwRunSummary", "RwMonteCarloSummary"] {
            assert!(header.contains(ty), "header is missing type {ty}");
        }
    }
}
