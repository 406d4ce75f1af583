//! Acceptance gate: thirteen numbered criteria, each printing exactly one
//! PASS or FAIL line with the measured values and the tolerance pinned in
//! code next to the check. Run with `--nocapture` to see the lines of the
//! passing criteria too.

use std::f64::consts::PI;
use std::sync::OnceLock;
use std::time::Instant;

use multibubble::greens::{BallDomain, GreenEvaluator};
use multibubble::interaction::{Configuration, perron_lowest};
use multibubble::linalg::lowest_eig_iterative;
use multibubble::pde::{
    check_speed_identity, check_speed_identity_with_coeff, expansion_residuals, log_grid,
    pohozaev_check, select_peaks, sweep_epsilon, verify_peaks, FieldSample, SweepResult,
};
use multibubble::profiles::{constants, eta_limit, expansion_coefficient, solve_w, solve_w2, ClosedFormW};
use multibubble::rates::{Potential, RateRegime, ReducedEnergy};

fn verdict(id: u32, pass: bool, detail: String) {
    let line = format!(
        "criterion {id:02} {}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    println!("{line}");
    assert!(pass, "{line}");
}

/// Deterministic uniform samples in [0, 1); xorshift64 keeps the gate
/// free of external generators.
fn uniform(state: &mut u64) -> f64 {
    *state ^= *state << 13;
    *state ^= *state >> 7;
    *state ^= *state << 17;
    (*state >> 11) as f64 / (1u64 << 53) as f64
}

/// Random configuration of pairwise-separated points inside the ball of
/// the given radius.
fn sample_points(state: &mut u64, dim: usize, npts: usize, rad: f64, sep: f64) -> Vec<Vec<f64>> {
    'retry: loop {
        let pts: Vec<Vec<f64>> = (0..npts)
            .map(|_| {
                loop {
                    let x: Vec<f64> = (0..dim).map(|_| rad * (2.0 * uniform(state) - 1.0)).collect();
                    if x.iter().map(|c| c * c).sum::<f64>().sqrt() <= rad {
                        return x;
                    }
                }
            })
            .collect();
        for i in 0..npts {
            for j in 0..i {
                let d2: f64 = (0..dim).map(|l| (pts[i][l] - pts[j][l]).powi(2)).sum();
                if d2.sqrt() < sep {
                    continue 'retry;
                }
            }
        }
        return pts;
    }
}

static N5_SWEEP: OnceLock<SweepResult> = OnceLock::new();
static N4_SWEEP: OnceLock<SweepResult> = OnceLock::new();

fn n5_sweep() -> &'static SweepResult {
    N5_SWEEP.get_or_init(|| {
        sweep_epsilon(5, -1.0, &log_grid(3e-5, 3e-6, 6).unwrap()).unwrap()
    })
}

fn n4_sweep() -> &'static SweepResult {
    N4_SWEEP.get_or_init(|| {
        sweep_epsilon(4, -1.0, &log_grid(2e-3, 1e-9, 8).unwrap()).unwrap()
    })
}

#[test]
fn criterion_01_profile_limit_dimension_five() {
    let start = Instant::now();
    let w = solve_w(5, 1e4).unwrap();
    let value = w.eval(1e4).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let target = PI / 24.0;
    let dev = (value - target).abs();
    let pass = dev <= 1e-3 && elapsed < 1.0;
    verdict(
        1,
        pass,
        format!("W(1e4) = {value:.8} vs pi/24 = {target:.8}, |diff| = {dev:.2e} (tol 1e-3), {elapsed:.2}s (limit 1s)"),
    );
}

#[test]
fn criterion_02_log_growth_dimension_four() {
    let start = Instant::now();
    let w = solve_w(4, 1e6).unwrap();
    let ratio = w.eval(1e6).unwrap() / 1e6f64.ln();
    let elapsed = start.elapsed().as_secs_f64();
    let dev = (ratio - 0.5).abs();
    // 2% of 1/2; the log-law correction decays like 1/ln R, so this band
    // genuinely tests the constant in front of the logarithm.
    let pass = dev <= 0.01 && elapsed < 2.0;
    verdict(
        2,
        pass,
        format!("W(1e6)/ln(1e6) = {ratio:.6} vs 1/2, |diff| = {dev:.2e} (tol 1e-2), {elapsed:.2}s (limit 2s)"),
    );
}

#[test]
fn criterion_03_second_profile_growth_rate() {
    let w2 = solve_w2(5, 1e4).unwrap();
    let slope = w2.eval(1e4).unwrap() / 1e4;
    let deriv = w2.eval_deriv(1e4).unwrap();
    let target = PI / 32.0;
    let dev_slope = (slope - target).abs();
    let dev_agree = (slope - deriv).abs();
    let pass = dev_slope <= 1e-2 && dev_agree <= 1e-3;
    verdict(
        3,
        pass,
        format!("W2(R)/R = {slope:.8} vs pi/32 = {target:.8} (|diff| = {dev_slope:.2e}, tol 1e-2); |W2(R)/R - W2'(R)| = {dev_agree:.2e} (tol 1e-3)"),
    );
}

#[test]
fn criterion_04_oracle_equivalence() {
    let ivp = solve_w(5, 50.0).unwrap();
    let oracle = ClosedFormW::new(5, 50.0).unwrap();
    let mut worst = 0.0f64;
    let mut k = 1;
    while (k as f64) * 0.25 <= 50.0 {
        let r = k as f64 * 0.25;
        k += 1;
        if r > 0.9 && r < 1.1 {
            continue;
        }
        let a = ivp.eval(r).unwrap();
        let b = oracle.eval(r).unwrap();
        worst = worst.max((a - b).abs() / b.abs());
    }
    let eta = eta_limit(5).unwrap();
    let eta_dev = (eta + PI / 8.0).abs();
    let pass = worst <= 1e-6 && eta_dev <= 1e-8;
    verdict(
        4,
        pass,
        format!("max relative gap ivp vs closed form = {worst:.2e} on [0.25, 50] minus (0.9, 1.1) (tol 1e-6); eta limit {eta:.10} vs -pi/8, |diff| = {eta_dev:.2e} (tol 1e-8)"),
    );
}

#[test]
fn criterion_05_spectral_duality() {
    let mut state = 0x5eed_0005_u64;
    let mut worst = 0.0f64;
    for case in 0..100 {
        let dim = 4 + case % 3;
        let npts = 2 + (uniform(&mut state) * 3.0) as usize;
        let dom = BallDomain::unit_ball(dim).unwrap();
        let pts = sample_points(&mut state, dim, npts, 0.6, 0.15);
        let conf = Configuration::new(&dom, pts).unwrap();
        let m = conf.interaction_matrix().unwrap();
        let dense = perron_lowest(&m, npts).unwrap();
        let (iter_val, _) = lowest_eig_iterative(&m, npts).unwrap();
        let scale = dense
            .eigenvalues
            .iter()
            .fold(1.0f64, |a, v| a.max(v.abs()));
        worst = worst.max((dense.rho - iter_val).abs() / scale);
        // Positivity must hold whenever the gap is resolved, which
        // perron_lowest already enforces; make the claim explicit.
        assert!(dense.gap > 1e-10 * scale);
        assert!(dense.vector.iter().all(|&v| v > 0.0));
    }
    let pass = worst <= 1e-10;
    verdict(
        5,
        pass,
        format!("dense vs iterative lowest eigenvalue on 100 random interaction matrices: worst scaled gap {worst:.2e} (tol 1e-10); Perron vectors strictly positive throughout"),
    );
}

#[test]
fn criterion_06_rate_limit_dimension_five() {
    // A fresh sweep rather than the shared one, so the pinned wall-clock
    // bound measures the real cost.
    let start = Instant::now();
    let sweep = sweep_epsilon(5, -1.0, &log_grid(3e-5, 3e-6, 6).unwrap()).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let target = 24.0 / PI;
    let rel = (sweep.fit.limit - target).abs() / target;
    let pass = rel <= 0.10 && elapsed <= 300.0;
    verdict(
        6,
        pass,
        format!("extrapolated eps/mu limit = {:.6} vs 24/pi = {target:.6}, relative gap {rel:.2e} (tol 0.10), sweep took {elapsed:.1}s (limit 300s)", sweep.fit.limit),
    );
}

#[test]
fn criterion_07_rate_trend_dimension_four() {
    let sweep = n4_sweep();
    let qty: Vec<f64> = sweep.solutions.iter().map(|s| s.rate_qty).collect();
    let monotone = qty.windows(2).all(|w| w[0] > w[1]);
    let last = *qty.last().unwrap();
    let dev = (last - 2.0).abs();
    let pass = monotone && dev <= 0.25 * 2.0;
    verdict(
        7,
        pass,
        format!("eps ln(1/mu) decreasing across sweep: {monotone}; last = {last:.6} vs kappa0 = 2 (|diff| = {dev:.3}, band 25%)"),
    );
}

#[test]
fn criterion_08_expansion_identity_and_control() {
    let sweep = n5_sweep();
    let sol = sweep.solutions.last().unwrap();
    let dom = BallDomain::unit_ball(5).unwrap();
    let speed = check_speed_identity(sol, &dom).unwrap();
    let control =
        check_speed_identity_with_coeff(sol, &dom, 2.0 * expansion_coefficient(5).unwrap())
            .unwrap();
    let dev = (speed.ratio - 1.0).abs();
    let dev_ctrl = (control.ratio - 0.5).abs();
    let pass = !speed.unreliable && dev <= 0.10 && dev_ctrl <= 0.05;
    verdict(
        8,
        pass,
        format!("height balance ratio = {:.4} at mu = {:.3e} (band 0.10); doubled-coefficient control = {:.4} vs 0.5 (band 0.05)", speed.ratio, speed.mu, control.ratio),
    );
}

#[test]
fn criterion_09_remainder_scaling() {
    let sweep = n5_sweep();
    let w = solve_w(5, 16.0).unwrap();
    let report = expansion_residuals(&sweep.solutions, &w).unwrap();
    let r = report.r_exponent.expect("enough trusted samples");
    let q = report.q_exponent.expect("enough trusted samples");
    let dev_r = (r - report.r_theory).abs();
    let dev_q = (q - report.q_theory).abs();
    let pass = dev_r <= 0.3 && dev_q <= 0.3 && q > r;
    verdict(
        9,
        pass,
        format!("remainder slope {r:.3} vs {:.1}, corrected slope {q:.3} vs {:.1} (bands 0.3); corrected decays faster: {}", report.r_theory, report.q_theory, q > r),
    );
}

#[test]
fn criterion_10_multiplier_identities() {
    let mut worst = 0.0f64;
    let mut min_order = f64::INFINITY;
    let mut all_flux_positive = true;
    let mut shots = 0;
    for sweep in [n5_sweep(), n4_sweep()] {
        for sol in &sweep.solutions {
            let report = pohozaev_check(sol).unwrap();
            for idc in report.identities.iter().filter(|i| !i.vacuous) {
                worst = worst.max(idc.residual);
            }
            min_order = min_order.min(report.refinement.observed_order);
            all_flux_positive &= report.boundary_flux > 0.0;
            shots += 1;
        }
    }
    let pass = worst <= 1e-6 && min_order >= 2.0 && all_flux_positive;
    verdict(
        10,
        pass,
        format!("{shots} solutions: worst identity residual {worst:.3e} (tol 1e-6), refinement order at least {min_order:.2} (floor 2), boundary flux positive throughout: {all_flux_positive}"),
    );
}

#[test]
fn criterion_11_degenerate_configuration() {
    let dom = BallDomain::unit_ball(5).unwrap();
    let rho_at = |r: f64| {
        let mut a = vec![0.0; 5];
        let mut b = vec![0.0; 5];
        a[0] = r;
        b[0] = -r;
        Configuration::new(&dom, vec![a, b])
            .unwrap()
            .lowest_eig()
            .unwrap()
    };
    let (mut lo, mut hi) = (0.05, 0.49);
    assert!(rho_at(lo).rho < 0.0 && rho_at(hi).rho > 0.0, "bracket lost");
    let mut mid = 0.5 * (lo + hi);
    let mut spec = rho_at(mid);
    for _ in 0..64 {
        if spec.rho.abs() <= 1e-12 {
            break;
        }
        if spec.rho < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        mid = 0.5 * (lo + hi);
        spec = rho_at(mid);
    }
    let vec_dev = (spec.vector[1] - 1.0).abs();

    let energy = ReducedEnergy::new(&dom, Potential::constant(-1.0)).unwrap();
    let mut a = vec![0.0; 5];
    let mut b = vec![0.0; 5];
    a[0] = mid;
    b[0] = -mid;
    let pred = energy.predict(&[a, b]).unwrap();
    let (is_degenerate, lambda_dev) = match &pred.regime {
        RateRegime::Degenerate { lambda0, .. } => (
            true,
            lambda0.iter().map(|l| (l - 1.0).abs()).fold(0.0, f64::max),
        ),
        _ => (false, f64::INFINITY),
    };
    let pass = spec.rho.abs() <= 1e-10 && vec_dev <= 1e-8 && is_degenerate && lambda_dev <= 1e-8;
    verdict(
        11,
        pass,
        format!("antipodal pair at r* = {mid:.12}: |rho| = {:.2e} (tol 1e-10), Perron vector off (1,1) by {vec_dev:.2e} (tol 1e-8), degenerate regime: {is_degenerate}, lambda0 off (1,1) by {lambda_dev:.2e} (tol 1e-8)", spec.rho.abs()),
    );
}

#[test]
fn criterion_12_peak_selection() {
    let mut state = 0x5eed_0012_u64;
    let dim = 5;
    let mut populated = 0;
    for _ in 0..100 {
        let count = 40 + (uniform(&mut state) * 40.0) as usize;
        let field: Vec<FieldSample> = (0..count)
            .map(|_| FieldSample {
                position: (0..dim).map(|_| 4.0 * uniform(&mut state)).collect(),
                value: (-1.0 + 4.0 * uniform(&mut state)).exp(),
                boundary_dist: 2.0 * uniform(&mut state),
                local_max: uniform(&mut state) < 0.5,
            })
            .collect();
        let peaks = select_peaks(&field, dim).unwrap();
        verify_peaks(&peaks, &field, dim).unwrap();
        if !peaks.points.is_empty() {
            populated += 1;
        }
    }
    let pass = populated > 20;
    verdict(
        12,
        pass,
        format!("100 random fields all pass the brute-force selection check ({populated} with nonempty output)"),
    );
}

#[test]
fn criterion_13_gradient_suites() {
    let h = 1e-5;
    let dom = BallDomain::unit_ball(5).unwrap();
    let energy = ReducedEnergy::new(&dom, Potential::constant(-1.0)).unwrap();

    let mut state = 0x5eed_0013_u64;
    let mut worst_f = 0.0f64;
    for _ in 0..50 {
        let npts = 1 + (uniform(&mut state) * 3.0) as usize;
        let points = sample_points(&mut state, 5, npts, 0.6, 0.2);
        let kappa: Vec<f64> = (0..npts).map(|_| 0.5 + uniform(&mut state)).collect();
        let (gk, gx) = energy.grad(&kappa, &points).unwrap();

        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for i in 0..npts {
            analytic.push(gk[i]);
            let mut kp = kappa.clone();
            let mut km = kappa.clone();
            kp[i] += h;
            km[i] -= h;
            numeric.push(
                (energy.value(&kp, &points).unwrap() - energy.value(&km, &points).unwrap())
                    / (2.0 * h),
            );
            for l in 0..5 {
                analytic.push(gx[i][l]);
                let mut pp = points.clone();
                let mut pm = points.clone();
                pp[i][l] += h;
                pm[i][l] -= h;
                numeric.push(
                    (energy.value(&kappa, &pp).unwrap() - energy.value(&kappa, &pm).unwrap())
                        / (2.0 * h),
                );
            }
        }
        let err: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst_f = worst_f.max(err / norm.max(1e-3));
    }

    let mut worst_rho = 0.0f64;
    for _ in 0..50 {
        let npts = 2 + (uniform(&mut state) * 3.0) as usize;
        let points = loop {
            let pts = sample_points(&mut state, 5, npts, 0.6, 0.2);
            let spec = Configuration::new(&dom, pts.clone())
                .unwrap()
                .lowest_eig()
                .unwrap();
            // Eigenvalue differentiation needs a resolved gap; resample
            // the rare nearly-crossing configurations.
            if spec.gap > 1e-3 {
                break pts;
            }
        };
        let conf = Configuration::new(&dom, points.clone()).unwrap();
        let grad = conf.grad_rho().unwrap();

        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for i in 0..npts {
            for l in 0..5 {
                analytic.push(grad[i][l]);
                let mut pp = points.clone();
                let mut pm = points.clone();
                pp[i][l] += h;
                pm[i][l] -= h;
                let rp = Configuration::new(&dom, pp).unwrap().lowest_eig().unwrap().rho;
                let rm = Configuration::new(&dom, pm).unwrap().lowest_eig().unwrap().rho;
                numeric.push((rp - rm) / (2.0 * h));
            }
        }
        let err: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst_rho = worst_rho.max(err / norm.max(1e-3));
    }

    let pass = worst_f <= 1e-6 && worst_rho <= 1e-6;
    verdict(
        13,
        pass,
        format!("energy gradient vs central differences: worst relative error {worst_f:.2e} on 50 instances; eigenvalue gradient: worst {worst_rho:.2e} on 50 instances (tol 1e-6 each)"),
    );
}
