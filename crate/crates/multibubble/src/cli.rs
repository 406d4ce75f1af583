//! Command-line front end. Five subcommands cover the workflow:
//! `robin` tabulates Green-function data, `predict` turns it into a
//! blow-up forecast, `profiles` exports the correction profiles,
//! `validate` runs the radial solver against every cross-check, and
//! `peaks` extracts concentration candidates from a sampled field.
//!
//! Exit codes: 0 success, 2 bad configuration, 3 numerical failure,
//! 4 validation checks ran but did not pass. Payload bytes depend
//! only on the config and tool version; the envelope timestamp is the
//! sole run-dependent field.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::{
    parse_eps_flag, EpsGrid, ExperimentConfig, ToleranceOverrides, ValidateTolerances,
};
use crate::error::{Error, Result};
use crate::greens::{BallDomain, GreenEvaluator};
use crate::interaction::Configuration;
use crate::pde::{
    check_speed_identity, check_speed_identity_with_coeff, expansion_residuals, log_grid,
    pohozaev_check, select_peaks, sweep_epsilon,
};
use crate::profiles::{constants, expansion_coefficient, solve_w, solve_w2, ClosedFormW};
use crate::rates::{mu_law, Potential, RateRegime, ReducedEnergy};
use crate::report::{emit, Artifact, ResultEnvelope};

#[derive(Parser)]
#[command(
    name = "multibubble",
    version,
    about = "Concentration analysis for nearly critical elliptic problems"
)]
struct Cli {
    /// Experiment description (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Directory for the result envelope and data tables; stdout when
    /// absent.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Log-spaced coupling grid `hi:lo:count`, overriding the config.
    #[arg(long = "eps-grid", global = true, value_name = "H:L:N")]
    eps_grid: Option<String>,

    /// JSON object of tolerance overrides, e.g. '{"slope_band":0.5}'.
    #[arg(long = "tol-overrides", global = true, value_name = "JSON")]
    tol_overrides: Option<String>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Tabulate the Robin function and its gradient at the config points.
    Robin,
    /// Interaction spectrum, rate regime, and speed-law samples.
    Predict,
    /// Export correction-profile tables and their limit constants.
    Profiles,
    /// Shoot a coupling sweep and run every cross-check against it.
    Validate,
    /// Select concentration peaks from a sampled field.
    Peaks,
}

/// Parses the process arguments, runs the requested command, and
/// returns the exit code. All diagnostics go to stderr.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::NotDefined(_) => 2,
        Error::Numerical(_) | Error::Infeasible(_) => 3,
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::config("a --config file is required"))?;
    let cfg = ExperimentConfig::load(path)?;
    let hash = cfg.canonical_hash();

    let grid_spec = match &cli.eps_grid {
        Some(text) => Some(parse_eps_flag(text)?),
        None => cfg.eps_grid.clone(),
    };
    let mut tol = ValidateTolerances::default();
    if let Some(o) = &cfg.tolerances {
        tol = tol.apply(o);
    }
    if let Some(text) = &cli.tol_overrides {
        let o: ToleranceOverrides = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("tolerance overrides: {e}")))?;
        tol = tol.apply(&o);
    }

    let (name, payload, artifacts, code) = match cli.command {
        Cmd::Robin => {
            let (p, a) = cmd_robin(&cfg)?;
            ("robin", p, a, 0)
        }
        Cmd::Predict => {
            let (p, a) = cmd_predict(&cfg, grid_spec.as_ref())?;
            ("predict", p, a, 0)
        }
        Cmd::Profiles => {
            let (p, a) = cmd_profiles(&cfg)?;
            ("profiles", p, a, 0)
        }
        Cmd::Validate => {
            let (p, a, passed) = cmd_validate(&cfg, grid_spec.as_ref(), &tol)?;
            ("validate", p, a, if passed { 0 } else { 4 })
        }
        Cmd::Peaks => {
            let (p, a) = cmd_peaks(&cfg)?;
            ("peaks", p, a, 0)
        }
    };

    let envelope = ResultEnvelope::new(name, hash, payload);
    emit(cli.out.as_deref(), &envelope, &artifacts)?;
    Ok(code)
}

fn require_domain(cfg: &ExperimentConfig) -> Result<BallDomain> {
    cfg.domain
        .as_ref()
        .ok_or_else(|| Error::config("this command needs a domain section"))?
        .build(cfg.dim)
}

/// Robin function and gradient at each requested point. A point the
/// domain rejects (on or outside the boundary) produces an error row
/// tagged DOMAIN instead of aborting the whole table.
fn cmd_robin(cfg: &ExperimentConfig) -> Result<(Value, Vec<Artifact>)> {
    let dom = require_domain(cfg)?;
    let points = cfg.points.clone().unwrap_or_default();

    let mut rows = Vec::with_capacity(points.len());
    let mut csv = String::new();
    for i in 1..=cfg.dim {
        let _ = write!(csv, "x{i},");
    }
    csv.push_str("phi,");
    for i in 1..=cfg.dim {
        let _ = write!(csv, "dphi{i},");
    }
    csv.push_str("error\n");

    for p in &points {
        let coords = p
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(",");
        match dom.robin(p).and_then(|phi| {
            let grad = dom.grad_robin(p)?;
            Ok((phi, grad))
        }) {
            Ok((phi, grad)) => {
                rows.push(json!({"point": p, "phi": phi, "grad_phi": grad}));
                let g = grad
                    .iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join(",");
                let _ = writeln!(csv, "{coords},{phi},{g},");
            }
            Err(Error::Config(msg)) => {
                rows.push(json!({"point": p, "error": "DOMAIN", "message": msg}));
                let blanks = ",".repeat(cfg.dim + 1);
                let _ = writeln!(csv, "{coords},{blanks}DOMAIN");
            }
            Err(e) => return Err(e),
        }
    }

    let payload = json!({"dim": cfg.dim, "count": rows.len(), "rows": rows});
    Ok((payload, vec![Artifact::new("robin.csv", csv)]))
}

/// Interaction matrix and spectrum at the candidate points, the rate
/// regime the reduced energy selects, and concentration-speed samples
/// over a coupling grid.
fn cmd_predict(
    cfg: &ExperimentConfig,
    grid_spec: Option<&EpsGrid>,
) -> Result<(Value, Vec<Artifact>)> {
    let dom = require_domain(cfg)?;
    let potential = cfg
        .potential
        .clone()
        .ok_or_else(|| Error::config("predict needs a potential section"))?;
    let points = match &cfg.points {
        Some(p) if !p.is_empty() => p.clone(),
        _ => return Err(Error::config("predict needs at least one point")),
    };

    let conf = Configuration::new(&dom, points.clone())?;
    let matrix = conf.interaction_matrix()?;
    let spectrum = conf.lowest_eig()?;
    let energy = ReducedEnergy::new(&dom, potential)?;
    let pred = energy.predict(&points)?;

    let grid = match grid_spec {
        Some(g) => g.resolve()?,
        None => log_grid(1e-2, 1e-4, 5)?,
    };
    let mut samples = Vec::new();
    let mut law_note = Value::Null;
    for &eps in &grid {
        match mu_law(&pred, eps) {
            Ok(s) => samples.push(json!({"eps": s.eps, "mu": s.mu})),
            Err(Error::NotDefined(msg)) => {
                law_note = json!(msg);
                samples.clear();
                break;
            }
            Err(e) => return Err(e),
        }
    }

    // The constant the sweep quantity converges to, when a pointwise
    // law exists: eps mu^{4-N} is asymptotically mu(1)^{4-N} in the
    // power regime, and kappa_0 replaces it in dimension four.
    let limit_quantity = match &pred.regime {
        RateRegime::PowerLaw { .. } => {
            let m1 = mu_law(&pred, 1.0)?.mu;
            json!(m1
                .iter()
                .map(|m| m.powi(4 - cfg.dim as i32))
                .collect::<Vec<f64>>())
        }
        RateRegime::LogLaw { kappa0, .. } => json!(kappa0),
        RateRegime::Degenerate { .. } => Value::Null,
    };

    let n = points.len();
    let matrix_rows: Vec<Vec<f64>> = (0..n).map(|i| matrix[i * n..(i + 1) * n].to_vec()).collect();

    let mut csv = String::from("eps");
    for i in 1..=n {
        let _ = write!(csv, ",mu{i}");
    }
    csv.push('\n');
    for s in &samples {
        let _ = write!(csv, "{}", s["eps"]);
        for m in s["mu"].as_array().into_iter().flatten() {
            let _ = write!(csv, ",{m}");
        }
        csv.push('\n');
    }

    let payload = json!({
        "dim": cfg.dim,
        "points": points,
        "interaction": {
            "matrix": matrix_rows,
            "rho": spectrum.rho,
            "vector": spectrum.vector,
            "gap": spectrum.gap,
            "eigenvalues": spectrum.eigenvalues,
        },
        "prediction": pred,
        "limit_quantity": limit_quantity,
        "mu_samples": samples,
        "mu_law_note": law_note,
    });
    Ok((payload, vec![Artifact::new("mu_law.csv", csv)]))
}

/// Correction-profile tables with their limit constants and an
/// agreement check against the closed-form solution.
fn cmd_profiles(cfg: &ExperimentConfig) -> Result<(Value, Vec<Artifact>)> {
    let dim = cfg.dim;
    let r_max = cfg.profile.as_ref().and_then(|p| p.r_max).unwrap_or(1e4);
    if !r_max.is_finite() || r_max < 2.0 {
        return Err(Error::config(format!(
            "profile r_max must be finite and at least 2, got {r_max}"
        )));
    }

    let w = solve_w(dim, r_max)?;
    let (r_end, w_end, dw_end) = w.node(w.len() - 1);
    let w_resid = w.residuals().into_iter().fold(0.0f64, f64::max);

    // Independent route: the same profile in integral form. Compare
    // away from r = 1 where the closed form has a removable kink in
    // its quadrature variable.
    let oracle = ClosedFormW::new(dim, r_max.min(50.0))?;
    let mut oracle_dev = 0.0f64;
    let mut checked = 0usize;
    let mut r = 0.25;
    while r <= r_max.min(50.0) - 0.25 {
        if !(0.9..=1.1).contains(&r) {
            let dev = (w.eval(r)? - oracle.eval(r)?).abs();
            oracle_dev = oracle_dev.max(dev);
            checked += 1;
        }
        r += 0.25;
    }

    let consts = match constants(dim) {
        Ok(c) => json!({
            "c_n": c.c_n,
            "w_limit": c.w_limit,
            "a_n": c.a_n,
            "d_n": c.d_n,
        }),
        Err(Error::NotDefined(msg)) => json!({"status": "NOT_DEFINED", "message": msg}),
        Err(e) => return Err(e),
    };

    let mut artifacts = vec![Artifact::new("profile_w.csv", profile_csv(&w))];
    let w2_summary = if dim >= 5 {
        let w2 = solve_w2(dim, r_max)?;
        let (r2, v2, d2) = w2.node(w2.len() - 1);
        let resid2 = w2.residuals().into_iter().fold(0.0f64, f64::max);
        artifacts.push(Artifact::new("profile_w2.csv", profile_csv(&w2)));
        json!({
            "r_max": r2,
            "len": w2.len(),
            "end_value": v2,
            "end_slope": v2 / r2,
            "end_deriv": d2,
            "max_residual": resid2,
        })
    } else {
        Value::Null
    };

    let payload = json!({
        "dim": dim,
        "w": {
            "r_max": r_end,
            "len": w.len(),
            "end_value": w_end,
            "end_deriv": dw_end,
            "max_residual": w_resid,
        },
        "w2": w2_summary,
        "constants": consts,
        "oracle": {"max_dev": oracle_dev, "checked": checked},
    });
    Ok((payload, artifacts))
}

fn profile_csv(table: &crate::profiles::RadialProfileTable) -> String {
    let mut csv = String::from("r,value,deriv\n");
    for i in 0..table.len() {
        let (r, v, d) = table.node(i);
        let _ = writeln!(csv, "{r},{v},{d}");
    }
    csv
}

struct CheckList {
    rows: Vec<Value>,
    all: bool,
}

impl CheckList {
    fn new() -> Self {
        CheckList { rows: Vec::new(), all: true }
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.rows.push(json!({"name": name, "passed": passed, "detail": detail}));
        self.all &= passed;
    }
}

/// Full validation pipeline: a coupling sweep on the unit ball feeds
/// the rate extrapolation, the speed identity with its doubled
/// coefficient control, the Pohozaev balances on every shot, and the
/// expansion-remainder fits. Individual check failures exit 4 after
/// the whole report is written.
fn cmd_validate(
    cfg: &ExperimentConfig,
    grid_spec: Option<&EpsGrid>,
    tol: &ValidateTolerances,
) -> Result<(Value, Vec<Artifact>, bool)> {
    let dim = cfg.dim;
    let dom = match &cfg.domain {
        Some(spec) => spec.build(dim)?,
        None => BallDomain::unit_ball(dim)?,
    };
    if (dom.radius() - 1.0).abs() > 1e-12 || dom.center().iter().any(|&c| c != 0.0) {
        return Err(Error::config(
            "validation runs on the unit ball at the origin",
        ));
    }
    let v0 = match &cfg.potential {
        None => -1.0,
        Some(Potential::Const { value }) if *value < 0.0 => *value,
        Some(Potential::Const { value }) => {
            return Err(Error::config(format!(
                "validation needs a negative constant potential, got {value}"
            )));
        }
        Some(_) => {
            return Err(Error::config(
                "validation needs a constant potential; spatially varying ones have no radial reference solution",
            ));
        }
    };

    let grid = match grid_spec {
        Some(g) => g.resolve()?,
        // Deep enough that remainder slopes reach their asymptotic
        // values; dimension four needs far smaller couplings because
        // its corrections decay only logarithmically.
        None if dim == 4 => log_grid(2e-3, 1e-9, 8)?,
        None => log_grid(3e-5, 3e-6, 6)?,
    };
    if grid.len() < 6 {
        return Err(Error::config(format!(
            "INSUFFICIENT_DATA: extrapolation needs at least 6 couplings, got {}",
            grid.len()
        )));
    }

    let sweep = sweep_epsilon(dim, v0, &grid)?;
    let mut checks = CheckList::new();

    // Independent prediction of the same limit from Green's-function
    // data alone.
    let energy = ReducedEnergy::new(&dom, Potential::constant(v0))?;
    let pred = energy.predict(&[dom.center().to_vec()])?;
    let target = match &pred.regime {
        RateRegime::PowerLaw { .. } => {
            let m1 = mu_law(&pred, 1.0)?.mu[0];
            m1.powi(4 - dim as i32)
        }
        RateRegime::LogLaw { kappa0, .. } => *kappa0,
        RateRegime::Degenerate { .. } => {
            return Err(Error::numerical(
                "degenerate rate prediction for the reference ball",
            ));
        }
    };

    let qty: Vec<f64> = sweep.solutions.iter().map(|s| s.rate_qty).collect();
    let monotone = qty.windows(2).all(|w| w[1] < w[0]);
    if dim >= 5 {
        let lim = sweep.fit.limit;
        checks.push(
            "rate_limit",
            (lim - target).abs() <= tol.rate_limit_rel * target.abs(),
            format!(
                "extrapolated {lim:.6}, predicted {target:.6}, band {:.0}%",
                100.0 * tol.rate_limit_rel
            ),
        );
    } else {
        let last = *qty.last().unwrap();
        checks.push(
            "rate_trend",
            monotone && (last - target).abs() <= tol.trend_band_rel * target.abs(),
            format!(
                "monotone {monotone}, last {last:.6} vs {target:.6}, band {:.0}%",
                100.0 * tol.trend_band_rel
            ),
        );
    }

    let last_sol = sweep.solutions.last().unwrap();
    let speed = check_speed_identity(last_sol, &dom)?;
    let coeff = expansion_coefficient(dim)?;
    let control = check_speed_identity_with_coeff(last_sol, &dom, 2.0 * coeff)?;
    // The identity converges like mu; in dimension four the approach
    // carries a 1/ln(1/mu) correction, so it gets the wide band.
    let speed_band = if dim == 4 { tol.trend_band_rel } else { tol.speed_ratio_tol };
    checks.push(
        "speed_identity",
        (speed.ratio - 1.0).abs() <= speed_band && !speed.unreliable,
        format!(
            "ratio {:.4} at mu {:.3e}, band {:.0}%",
            speed.ratio,
            speed.mu,
            100.0 * speed_band
        ),
    );
    if dim >= 5 {
        checks.push(
            "speed_identity_control",
            (control.ratio - 0.5).abs() <= tol.control_tol,
            format!("doubled coefficient gives {:.4}, want 0.5", control.ratio),
        );
    } else {
        // Exact halving is the sensitivity statement itself; the
        // distance to one half is inherited from the main ratio.
        checks.push(
            "speed_identity_control",
            (control.ratio - 0.5 * speed.ratio).abs() <= 1e-12,
            format!(
                "doubled coefficient gives {:.4}, half the main ratio {:.4}",
                control.ratio, speed.ratio
            ),
        );
    }

    let mut max_resid = 0.0f64;
    let mut min_order = f64::INFINITY;
    let mut flux_ok = true;
    let mut poh_rows = Vec::with_capacity(sweep.solutions.len());
    for sol in &sweep.solutions {
        let rep = pohozaev_check(sol)?;
        let worst = rep
            .identities
            .iter()
            .filter(|c| !c.vacuous)
            .fold(0.0f64, |m, c| m.max(c.residual));
        max_resid = max_resid.max(worst);
        min_order = min_order.min(rep.refinement.observed_order);
        flux_ok &= rep.boundary_flux > 0.0;
        poh_rows.push(json!({
            "eps": sol.eps,
            "max_residual": worst,
            "observed_order": rep.refinement.observed_order,
            "boundary_flux": rep.boundary_flux,
        }));
    }
    checks.push(
        "pohozaev_identities",
        max_resid <= tol.pohozaev_residual,
        format!("worst residual {max_resid:.3e}, bar {:.1e}", tol.pohozaev_residual),
    );
    checks.push(
        "pohozaev_refinement",
        min_order >= tol.refinement_order_min,
        format!(
            "observed order at least {min_order:.2}, floor {:.1}",
            tol.refinement_order_min
        ),
    );
    checks.push(
        "boundary_flux_positive",
        flux_ok,
        "normal derivative sign at the boundary".to_string(),
    );

    let w = solve_w(dim, 16.0)?;
    let exp = expansion_residuals(&sweep.solutions, &w)?;
    match (exp.r_exponent, exp.q_exponent) {
        (Some(r_slope), Some(q_slope)) => {
            let ordered = q_slope > r_slope;
            if dim >= 5 {
                let r_ok = (r_slope - exp.r_theory).abs() <= tol.slope_band;
                let q_ok = (q_slope - exp.q_theory).abs() <= tol.slope_band;
                checks.push(
                    "expansion_orders",
                    r_ok && q_ok && ordered,
                    format!(
                        "remainder {r_slope:.3} vs {:.1}, corrected {q_slope:.3} vs {:.1}, band {:.1}",
                        exp.r_theory, exp.q_theory, tol.slope_band
                    ),
                );
            } else {
                // Logarithmic corrections shift the absolute slopes in
                // dimension four; the strict gain of the correction
                // term is the invariant worth enforcing.
                checks.push(
                    "expansion_orders",
                    ordered,
                    format!("remainder {r_slope:.3}, corrected {q_slope:.3}"),
                );
            }
        }
        _ => checks.push(
            "expansion_orders",
            false,
            "too few reliable samples to fit the remainder decay".to_string(),
        ),
    }

    let artifacts = vec![Artifact::new("sweep.csv", sweep.csv())];
    let all = checks.all;
    let payload = json!({
        "dim": dim,
        "v0": v0,
        "grid": grid,
        "sweep": sweep,
        "predicted_limit": target,
        "prediction": pred,
        "speed": {
            "lhs": speed.lhs, "rhs": speed.rhs, "ratio": speed.ratio,
            "mu": speed.mu, "unreliable": speed.unreliable,
        },
        "speed_control": {"ratio": control.ratio},
        "pohozaev": poh_rows,
        "expansion": exp,
        "tolerances": tol,
        "checks": checks.rows,
        "all_passed": all,
    });
    Ok((payload, artifacts, all))
}

/// Peak selection on a sampled field; the returned set has already
/// passed the separation and covering verification.
fn cmd_peaks(cfg: &ExperimentConfig) -> Result<(Value, Vec<Artifact>)> {
    let field = cfg
        .field
        .as_ref()
        .ok_or_else(|| Error::config("peaks needs a field section"))?;
    let peaks = select_peaks(field, cfg.dim)?;

    let mut csv = String::new();
    for i in 1..=cfg.dim {
        let _ = write!(csv, "x{i},");
    }
    csv.push_str("height\n");
    for (p, h) in peaks.points.iter().zip(&peaks.heights) {
        for c in p {
            let _ = write!(csv, "{c},");
        }
        let _ = writeln!(csv, "{h}");
    }

    let payload = json!({
        "dim": cfg.dim,
        "samples": field.len(),
        "count": peaks.points.len(),
        "peaks": peaks,
    });
    Ok((payload, vec![Artifact::new("peaks.csv", csv)]))
}
