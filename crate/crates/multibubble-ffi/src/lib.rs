//! C interface to the multibubble toolkit.
//!
//! Every entry point returns an `MbStatus`; results travel through out
//! pointers. Handles returned by `_new` / `_solve` / `_shoot` functions own
//! their data and must be released with the matching `_free`. All functions
//! catch panics at the boundary and report them as `MB_STATUS_INTERNAL`
//! instead of unwinding into the caller.
//!
//! Error messages outlive the failing call: each thread keeps the last
//! message, readable through `mb_last_error` until the next failure on
//! that thread.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use multibubble::greens::{BallDomain, GreenEvaluator};
use multibubble::interaction::Configuration;
use multibubble::pde::{pohozaev_check, shoot_radial, RadialSolution};
use multibubble::profiles::{constants, solve_w, solve_w2, RadialProfileTable};
use multibubble::rates::{mu_law, Potential, ReducedEnergy};
use multibubble::Error;

/// Result of every call. Zero is success; anything else means the out
/// parameters were left untouched.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MbStatus {
    /// Call succeeded.
    MbStatusOk = 0,
    /// A required pointer argument was null.
    MbStatusNullArgument = 1,
    /// Invalid input: bad dimension, point outside the domain, malformed
    /// configuration.
    MbStatusConfig = 2,
    /// A solver failed to converge.
    MbStatusNumerical = 3,
    /// The quantity does not exist in the requested regime (for example
    /// profile constants in dimension four).
    MbStatusNotDefined = 4,
    /// The point configuration cannot arise as a concentration limit.
    MbStatusInfeasible = 5,
    /// An index was out of range.
    MbStatusRange = 6,
    /// A panic was caught at the boundary; see `mb_last_error`.
    MbStatusInternal = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let owned = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(owned));
}

fn status_of(err: &Error) -> MbStatus {
    match err {
        Error::Config(_) => MbStatus::MbStatusConfig,
        Error::Numerical(_) => MbStatus::MbStatusNumerical,
        Error::NotDefined(_) => MbStatus::MbStatusNotDefined,
        Error::Infeasible(_) => MbStatus::MbStatusInfeasible,
    }
}

fn fail(err: Error) -> MbStatus {
    set_error(&err.to_string());
    status_of(&err)
}

/// Runs `body` with panics converted to `MB_STATUS_INTERNAL`.
fn guarded(body: impl FnOnce() -> MbStatus) -> MbStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic of unknown type".to_string());
            set_error(&format!("internal panic: {msg}"));
            MbStatus::MbStatusInternal
        }
    }
}

/// Message from the most recent failure on the calling thread, or null if
/// no call has failed yet. The pointer stays valid until the next failing
/// call on the same thread.
#[no_mangle]
pub extern "C" fn mb_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |s| s.as_ptr())
    })
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn mb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

macro_rules! require {
    ($ptr:expr) => {
        if $ptr.is_null() {
            set_error(concat!("null argument: ", stringify!($ptr)));
            return MbStatus::MbStatusNullArgument;
        }
    };
}

/// Ball domain with its Green's function. Opaque.
pub struct MbDomain {
    inner: BallDomain,
}

/// Creates a ball domain. `center` must point to `dim` coordinates, or be
/// null for the origin. On success `*out` owns the new handle.
///
/// # Safety
/// `center` is read for `dim` doubles when non-null; `out` must be valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn mb_domain_ball_new(
    dim: usize,
    center: *const f64,
    radius: f64,
    out: *mut *mut MbDomain,
) -> MbStatus {
    require!(out);
    guarded(|| {
        let c = if center.is_null() {
            vec![0.0; dim]
        } else {
            unsafe { slice::from_raw_parts(center, dim) }.to_vec()
        };
        match BallDomain::new(c, radius) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(MbDomain { inner })) };
                MbStatus::MbStatusOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Releases a domain handle. Null is ignored.
///
/// # Safety
/// `dom` must come from `mb_domain_ball_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mb_domain_free(dom: *mut MbDomain) {
    if !dom.is_null() {
        drop(unsafe { Box::from_raw(dom) });
    }
}

/// Green's function of the domain at interior points `x`, `y` (each `dim`
/// doubles for the domain's dimension).
///
/// # Safety
/// `x` and `y` are read for the domain dimension; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mb_green(
    dom: *const MbDomain,
    x: *const f64,
    y: *const f64,
    out: *mut f64,
) -> MbStatus {
    require!(dom);
    require!(x);
    require!(y);
    require!(out);
    guarded(|| {
        let d = unsafe { &(*dom).inner };
        let n = d.center().len();
        let xs = unsafe { slice::from_raw_parts(x, n) };
        let ys = unsafe { slice::from_raw_parts(y, n) };
        match d.green(xs, ys) {
            Ok(v) => {
                unsafe { *out = v };
                MbStatus::MbStatusOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Regular part of the Green's function on the diagonal.
///
/// # Safety
/// `y` is read for the domain dimension; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mb_robin(
    dom: *const MbDomain,
    y: *const f64,
    out: *mut f64,
) -> MbStatus {
    require!(dom);
    require!(y);
    require!(out);
    guarded(|| {
        let d = unsafe { &(*dom).inner };
        let ys = unsafe { slice::from_raw_parts(y, d.center().len()) };
        match d.robin(ys) {
            Ok(v) => {
                unsafe { *out = v };
                MbStatus::MbStatusOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Gradient of the Robin function; `out` receives `dim` doubles.
///
/// # Safety
/// `y` is read and `out` written for the domain dimension.
#[no_mangle]
pub unsafe extern "C" fn mb_grad_robin(
    dom: *const MbDomain,
    y: *const f64,
    out: *mut f64,
) -> MbStatus {
    require!(dom);
    require!(y);
    require!(out);
    guarded(|| {
        let d = unsafe { &(*dom).inner };
        let n = d.center().len();
        let ys = unsafe { slice::from_raw_parts(y, n) };
        match d.grad_robin(ys) {
            Ok(g) => {
                unsafe { slice::from_raw_parts_mut(out, n) }.copy_from_slice(&g);
                MbStatus::MbStatusOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Lowest eigenvalue data of the interaction matrix for `npts` points
/// (row-major, `npts * dim` doubles). `rho` and `gap` receive scalars;
/// `vector`, when non-null, receives the `npts` components of the
/// eigenvector scaled so its first entry is one.
///
/// # Safety
/// `points` is read for `npts * dim` doubles; out pointers as described.
#[no_mangle]
pub unsafe extern "C" fn mb_interaction_spectrum(
    dom: *const MbDomain,
    points: *const f64,
    npts: usize,
    rho: *mut f64,
    gap: *mut f64,
    vector: *mut f64,
) -> MbStatus {
    require!(dom);
    require!(points);
    require!(rho);
    require!(gap);
    guarded(|| {
        let d = unsafe { &(*dom).inner };
        let n = d.center().len();
        let flat = unsafe { slice::from_raw_parts(points, npts * n) };
        let pts: Vec<Vec<f64>> = flat.chunks(n).map(|c| c.to_vec()).collect();
        let conf = match Configuration::new(d, pts) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        match conf.lowest_eig() {
            Ok(s) => {
                unsafe {
                    *rho = s.rho;
                    *gap = s.gap;
                }
                if !vector.is_null() {
                    unsafe { slice::from_raw_parts_mut(vector, npts) }
                        .copy_from_slice(&s.vector);
                }
                MbStatus::MbStatusOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Correction profile sampled on the solver grid. Opaque.
pub struct MbProfile {
    inner: RadialProfileTable,
}

/// Which correction profile to solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MbProfileKind {
    /// First-order profile; bounded, with limit `c_N / (N - 2)`.
    MbProfileW = 0,
    /// Second-order profile; grows linearly for `N >= 5`.
    MbProfileW2 = 1,
}

/// Solves a correction profile out to radius `r_max`. On success `*out`
/// owns the new handle.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mb_profile_solve(
    dim: usize,
    kind: MbProfileKind,
    r_max: f64,
    out: *mut *mut MbProfile,
) -> MbStatus {
    require!(out);
    guarded(|| {
        let solved = match kind {
            MbProfileKind::MbProfileW => solve_w(dim, r_max),
            MbProfileKind::MbProfileW2 => solve_w2(dim, r_max),
        };
        match solved {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(MbProfile { inner })) };
                MbStatus::MbStatusOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Number of stored grid nodes.
///
/// # Safety
/// `profile` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mb_profile_len(profile: *const MbProfile) -> usize {
    if profile.is_null() {
        return 0;
    }
    unsafe { &(*profile).inner }.len()
}

/// Node `i` as radius, value, derivative.
///
/// # Safety
/// Out pointers must be writable; `profile` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mb_profile_node(
    profile: *const MbProfile,
    i: usize,
    r: *mut f64,
    w: *mut f64,
    dw: *mut f64,
) -> MbStatus {
    require!(profile);
    require!(r);
    require!(w);
    require!(dw);
    guarded(|| {
        let p = unsafe { &(*profile).inner };
        if i >= p.len() {
            set_error(&format!("node index {i} out of range, table has {}", p.len()));
            return MbStatus::MbStatusRange;
        }
        let (rr, ww, dd) = p.node(i);
        unsafe {
            *r = rr;
            *w = ww;
            *dw = dd;
        }
        MbStatus::MbStatusOk
    })
}

/// Interpolated profile value at radius `r` within the solved range.
///
/// # Safety
/// `out` must be writable; `profile` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mb_profile_eval(
    profile: *const MbProfile,
    r: f64,
    out: *mut f64,
) -> MbStatus {
    require!(profile);
    require!(out);
    guarded(|| match unsafe { &(*profile).inner }.eval(r) {
        Ok(v) => {
            unsafe { *out = v };
            MbStatus::MbStatusOk
        }
        Err(e) => fail(e),
    })
}

/// Releases a profile handle. Null is ignored.
///
/// # Safety
/// `profile` must come from `mb_profile_solve` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mb_profile_free(profile: *mut MbProfile) {
    if !profile.is_null() {
        drop(unsafe { Box::from_raw(profile) });
    }
}

/// Closed-form profile constants for `dim >= 5`: the tail coefficient,
/// the profile limit, the linear growth rate of the second-order
/// profile, and the potential-term constant of the reduced energy.
/// Dimension four has no finite limit and reports `MB_STATUS_NOT_DEFINED`.
///
/// # Safety
/// All four out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn mb_profile_constants(
    dim: usize,
    c_n: *mut f64,
    w_limit: *mut f64,
    a_n: *mut f64,
    d_n: *mut f64,
) -> MbStatus {
    require!(c_n);
    require!(w_limit);
    require!(a_n);
    require!(d_n);
    guarded(|| match constants(dim) {
        Ok(k) => {
            unsafe {
                *c_n = k.c_n;
                *w_limit = k.w_limit;
                *a_n = k.a_n;
                *d_n = k.d_n;
            }
            MbStatus::MbStatusOk
        }
        Err(e) => fail(e),
    })
}

/// Leading-order blow-up speeds for bubbles at `points` (row-major,
/// `npts * dim`) in the unit ball with constant potential `v0 < 0`, at
/// coupling `eps`. Writes `npts` speeds to `mu`. Dimension four uses the
/// exponential law; degenerate configurations report
/// `MB_STATUS_NOT_DEFINED`.
///
/// # Safety
/// `points` is read for `npts * dim` doubles; `mu` written for `npts`.
#[no_mangle]
pub unsafe extern "C" fn mb_predict_rate_const_v(
    dim: usize,
    v0: f64,
    points: *const f64,
    npts: usize,
    eps: f64,
    mu: *mut f64,
) -> MbStatus {
    require!(points);
    require!(mu);
    guarded(|| {
        let dom = match BallDomain::unit_ball(dim) {
            Ok(d) => d,
            Err(e) => return fail(e),
        };
        let energy = match ReducedEnergy::new(&dom, Potential::constant(v0)) {
            Ok(en) => en,
            Err(e) => return fail(e),
        };
        let flat = unsafe { slice::from_raw_parts(points, npts * dim) };
        let pts: Vec<Vec<f64>> = flat.chunks(dim).map(|c| c.to_vec()).collect();
        let pred = match energy.predict(&pts) {
            Ok(p) => p,
            Err(e) => return fail(e),
        };
        match mu_law(&pred, eps) {
            Ok(sample) => {
                unsafe { slice::from_raw_parts_mut(mu, npts) }.copy_from_slice(&sample.mu);
                MbStatus::MbStatusOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Radial shooting solution on the unit ball. Opaque.
pub struct MbRadial {
    inner: RadialSolution,
}

/// Shoots the radial equation in dimension `dim` with constant potential
/// level `v0 < 0` and coupling `eps_tilde > 0`, rescaled so the first
/// zero lands on the unit sphere. On success `*out` owns the new handle.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mb_shoot_radial(
    dim: usize,
    v0: f64,
    eps_tilde: f64,
    out: *mut *mut MbRadial,
) -> MbStatus {
    require!(out);
    guarded(|| match shoot_radial(dim, v0, eps_tilde) {
        Ok(inner) => {
            unsafe { *out = Box::into_raw(Box::new(MbRadial { inner })) };
            MbStatus::MbStatusOk
        }
        Err(e) => fail(e),
    })
}

/// Scalar summary of a radial solution: height scale `mu`, the rescaled
/// coupling `eps`, the rate quantity `eps * mu^-(N-4)` (or
/// `eps * ln(1/mu)` in dimension four), and the worst normalized
/// equation defect of the stored grid. Null out pointers are skipped.
///
/// # Safety
/// Non-null out pointers must be writable; `sol` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mb_radial_info(
    sol: *const MbRadial,
    mu: *mut f64,
    eps: *mut f64,
    rate_qty: *mut f64,
    residual: *mut f64,
) -> MbStatus {
    require!(sol);
    guarded(|| {
        let s = unsafe { &(*sol).inner };
        unsafe {
            if !mu.is_null() {
                *mu = s.mu;
            }
            if !eps.is_null() {
                *eps = s.eps;
            }
            if !rate_qty.is_null() {
                *rate_qty = s.rate_qty;
            }
            if !residual.is_null() {
                *residual = s.residual;
            }
        }
        MbStatus::MbStatusOk
    })
}

/// Number of stored grid nodes.
///
/// # Safety
/// `sol` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mb_radial_len(sol: *const MbRadial) -> usize {
    if sol.is_null() {
        return 0;
    }
    unsafe { &(*sol).inner }.len()
}

/// Node `i` as radius, value, derivative.
///
/// # Safety
/// Out pointers must be writable; `sol` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mb_radial_node(
    sol: *const MbRadial,
    i: usize,
    rho: *mut f64,
    u: *mut f64,
    du: *mut f64,
) -> MbStatus {
    require!(sol);
    require!(rho);
    require!(u);
    require!(du);
    guarded(|| {
        let s = unsafe { &(*sol).inner };
        if i >= s.len() {
            set_error(&format!("node index {i} out of range, table has {}", s.len()));
            return MbStatus::MbStatusRange;
        }
        let (rr, uu, dd) = s.node(i);
        unsafe {
            *rho = rr;
            *u = uu;
            *du = dd;
        }
        MbStatus::MbStatusOk
    })
}

/// Interpolated solution value and derivative at radius `rho` in [0, 1].
/// Null out pointers are skipped.
///
/// # Safety
/// Non-null out pointers must be writable; `sol` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mb_radial_eval(
    sol: *const MbRadial,
    rho: f64,
    u: *mut f64,
    du: *mut f64,
) -> MbStatus {
    require!(sol);
    guarded(|| {
        let s = unsafe { &(*sol).inner };
        if !u.is_null() {
            match s.eval(rho) {
                Ok(v) => unsafe { *u = v },
                Err(e) => return fail(e),
            }
        }
        if !du.is_null() {
            match s.deriv(rho) {
                Ok(v) => unsafe { *du = v },
                Err(e) => return fail(e),
            }
        }
        MbStatus::MbStatusOk
    })
}

/// Worst relative residual over the non-vacuous integral identities of
/// the solution, a solver-independent quality certificate.
///
/// # Safety
/// `out` must be writable; `sol` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mb_radial_identity_residual(
    sol: *const MbRadial,
    out: *mut f64,
) -> MbStatus {
    require!(sol);
    require!(out);
    guarded(|| match pohozaev_check(unsafe { &(*sol).inner }) {
        Ok(report) => {
            let worst = report
                .identities
                .iter()
                .filter(|i| !i.vacuous)
                .map(|i| i.residual)
                .fold(0.0, f64::max);
            unsafe { *out = worst };
            MbStatus::MbStatusOk
        }
        Err(e) => fail(e),
    })
}

/// Releases a radial solution handle. Null is ignored.
///
/// # Safety
/// `sol` must come from `mb_shoot_radial` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mb_radial_free(sol: *mut MbRadial) {
    if !sol.is_null() {
        drop(unsafe { Box::from_raw(sol) });
    }
}
