//! Scenario orchestration for the four run modes.

use std::fmt::Write as _;
use std::path::Path;

use super::catalog::InitialSpec;
use super::config::Scenario;
use super::h2_scaled_noise;
use super::report::{csv, Check};
use crate::error::{Error, Result};
use crate::fem::{CoefficientField, NormContext};
use crate::heat::{
    certify_threshold, check_u0_condition, compute_f, evolve, f_decay_fit, f_envelope_check, lipschitz_table,
    lower_bound_check, theta, u_decay_fit,
};
use crate::mesh::{boundary_band, build_structured_mesh, grid_to_string, Mesh};
use crate::spectral::{
    check_gap_property, decompose, eigen_perturbation_experiment, projection_perturbation_experiment, spread,
    verify_minmax_sandwich, SpectralDecomposition,
};
use crate::transport::{fixed_point_invert, stability_ratio_experiment, InversionOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Forward,
    Invert,
    VerifySpectral,
    StabilitySweep,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Forward => "forward",
            Mode::Invert => "invert",
            Mode::VerifySpectral => "verify-spectral",
            Mode::StabilitySweep => "stability-sweep",
        }
    }
}

/// In-memory result of a run; [`super::write_reports`] persists it.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifact {
    pub scenario_name: String,
    pub scenario_hash: String,
    pub mode: Mode,
    pub checks: Vec<Check>,
    /// Informational lines (fitted constants, warnings).
    pub notes: Vec<String>,
    /// `(file name, contents)` of every CSV and grid dump.
    pub files: Vec<(String, String)>,
}

impl RunArtifact {
    fn new(scenario: &Scenario, mode: Mode) -> Self {
        Self {
            scenario_name: scenario.name.clone(),
            scenario_hash: scenario.hash(),
            mode,
            checks: Vec::new(),
            notes: Vec::new(),
            files: Vec::new(),
        }
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "scenario {}\nhash {}\nmode {}\n",
            self.scenario_name,
            self.scenario_hash,
            self.mode.name()
        );
        for c in &self.checks {
            let _ = writeln!(s, "{}", c.line());
        }
        for n in &self.notes {
            let _ = writeln!(s, "note {n}");
        }
        let _ = writeln!(s, "result {}", if self.all_pass() { "PASS" } else { "FAIL" });
        s
    }
}

/// Runs `scenario` in `mode`. `base_dir` resolves relative grid-file paths.
pub fn run_scenario(scenario: &Scenario, mode: Mode, base_dir: &Path) -> Result<RunArtifact> {
    let run = || -> Result<RunArtifact> {
        scenario.validate()?;
        let ctx = Context::new(scenario, base_dir)?;
        let mut art = RunArtifact::new(scenario, mode);
        match mode {
            Mode::Forward => forward(&ctx, &mut art)?,
            Mode::Invert => invert(&ctx, &mut art)?,
            Mode::VerifySpectral => verify_spectral(&ctx, &mut art)?,
            Mode::StabilitySweep => sweep(&ctx, &mut art)?,
        }
        Ok(art)
    };
    run().map_err(|e| Error::Scenario {
        scenario: scenario.name.clone(),
        source: Box::new(e),
    })
}

/// Stability sweep entry point; equivalent to `run_scenario(.., StabilitySweep, ..)`.
pub fn stability_sweep(scenario: &Scenario, base_dir: &Path) -> Result<RunArtifact> {
    run_scenario(scenario, Mode::StabilitySweep, base_dir)
}

struct Context<'a> {
    s: &'a Scenario,
    mesh: Mesh,
    a: CoefficientField,
    spec: SpectralDecomposition,
    u0: Vec<f64>,
}

impl<'a> Context<'a> {
    fn new(s: &'a Scenario, base_dir: &Path) -> Result<Self> {
        let mesh = build_structured_mesh(s.nx, s.ny)?;
        let a = CoefficientField::new(&mesh, s.coefficient.nodal(&mesh)?, s.a_plus)?;
        let spec = decompose(&mesh, &a, s.modes, s.cluster_tol)?;
        let u0 = s.u0.nodal(&mesh, Some(&spec), base_dir)?;
        Ok(Self { s, mesh, a, spec, u0 })
    }

    fn laplacian_lambda1(&self) -> Result<f64> {
        let ones = CoefficientField::constant(&self.mesh, 1.0, self.s.a_plus)?;
        Ok(decompose(&self.mesh, &ones, 1, self.s.cluster_tol)?.hat(1))
    }

    fn perturbed(&self, eta: &[f64], s: f64) -> Result<CoefficientField> {
        let values = self.a.values().iter().zip(eta).map(|(a, e)| a + s * e).collect();
        CoefficientField::new(&self.mesh, values, self.s.a_plus)
    }
}

fn forward(ctx: &Context, art: &mut RunArtifact) -> Result<()> {
    let (s, spec, u0) = (ctx.s, &ctx.spec, &ctx.u0);
    let moment = check_u0_condition(&ctx.mesh, u0)?;
    let single_mode = matches!(s.u0, InitialSpec::FirstEigenfunction);
    art.notes.push(format!("lambda_hat_1={:.12e} moment={moment:.6e}", spec.hat(1)));

    let u0_norm = spec.l2_norm(u0);
    let mut rows = Vec::new();
    let mut worst_bound = 0.0f64;
    let mut worst_consistency = 0.0f64;
    for &t in &s.t_grid {
        let snap = evolve(spec, u0, t)?;
        let f = compute_f(spec, u0, t)?;
        let un = spec.l2_norm(&snap.u);
        let envelope = u0_norm * (-spec.hat(1) * t).exp();
        if envelope > 0.0 {
            worst_bound = worst_bound.max(un / envelope);
        }
        worst_consistency = worst_consistency.max(f.consistency_error);
        rows.push(vec![t, un, spec.l2_norm(&f.values), snap.truncation_bound, envelope]);
    }
    art.files.push((
        "decay.csv".into(),
        csv(&["t", "u_l2", "f_l2", "truncation_bound", "u_envelope"], &rows),
    ));
    art.checks.push(Check::at_most(
        "u_l2_envelope",
        worst_bound,
        1.0 + 1e-10,
        "ratio |u(T)| / (|u0| e^{-lambda_hat_1 T}), max over grid",
    ));
    art.checks.push(Check::at_most("f_series_consistency", worst_consistency, 1e-12, ""));

    if s.t_grid.len() >= 2 {
        if moment > 0.0 || single_mode {
            let fit = u_decay_fit(spec, u0, &s.t_grid)?;
            let tol = if single_mode { 1e-6 } else { 0.02 };
            art.checks.push(Check::at_most(
                "u_decay_slope",
                fit.relative_deviation(),
                tol,
                format!("slope={:.9e} expected={:.9e}", fit.fit.slope, fit.expected_slope),
            ));
        } else {
            art.notes.push("moment condition fails; u-decay slope not asserted".into());
        }
        let f_norms_positive = rows.iter().all(|r| r[2] > 0.0);
        if spec.num_clusters() >= 2 && f_norms_positive {
            let fit = f_decay_fit(spec, u0, &s.t_grid)?;
            art.checks.push(Check::at_most(
                "f_decay_slope",
                fit.relative_deviation(),
                0.05,
                format!("slope={:.9e} expected={:.9e}", fit.fit.slope, fit.expected_slope),
            ));
            let (c, violation) = f_envelope_check(&fit, 1e-9);
            art.checks.push(Check::new(
                "f_envelope",
                violation.is_none(),
                violation.unwrap_or(0.0),
                c,
                format!("C fitted at T={}; measured is the first violating T (0 if none)", s.t_grid[0]),
            ));
        } else {
            art.notes.push("F vanishes on the grid (u0 has no component beyond the first cluster)".into());
        }
    }

    let band = boundary_band(&ctx.mesh, s.band_epsilon)?;
    if moment > 0.0 {
        let report = lower_bound_check(&ctx.mesh, spec, u0, s.t, &band)?;
        let mut lb_rows = Vec::new();
        for (i, (name, value)) in report.entries().iter().enumerate() {
            art.checks.push(Check::new(
                format!("lower_bound {name}"),
                *value > 0.0,
                *value,
                0.0,
                format!("T={} index={i}", s.t),
            ));
            lb_rows.push(vec![i as f64, *value]);
        }
        art.files.push(("lower_bounds.csv".into(), csv(&["index", "minimum"], &lb_rows)));
        let mut grid = s.t_grid.clone();
        grid.sort_by(f64::total_cmp);
        match certify_threshold(&ctx.mesh, spec, u0, &grid, &band)? {
            Some(r) => art.notes.push(format!("certified threshold T={} (smallest grid time with all minima positive)", r.t)),
            None => art.notes.push("no grid time certifies the lower bounds".into()),
        }
    } else {
        art.notes.push("moment condition fails; lower bounds not evaluated".into());
    }

    if spec.num_clusters() >= 2 {
        let gap = check_gap_property(spec.hat_eigenvalues(), s.gamma, s.delta)?;
        let th = theta(gap.delta_max, s.a_plus, ctx.laplacian_lambda1()?);
        art.notes.push(format!("delta_max={:.6e} theta={th:.6e}", gap.delta_max));
    }
    let snap = evolve(spec, u0, s.t)?;
    art.files.push(("u_T.grid".into(), grid_to_string(&ctx.mesh, &snap.u)));
    Ok(())
}

fn invert(ctx: &Context, art: &mut RunArtifact) -> Result<()> {
    let (s, mesh) = (ctx.s, &ctx.mesh);
    let norms = NormContext::new(mesh)?;
    let noise = h2_scaled_noise(mesh, &norms, s.noise, s.seed)?;
    let opts = InversionOptions {
        alpha: s.inversion.alpha,
        tol_fp: s.inversion.tol_fp,
        max_iter: s.inversion.max_iter,
        modes: s.modes,
        cluster_tol: s.cluster_tol,
    };
    let data = |t: f64| -> Result<Vec<f64>> {
        let u = evolve(&ctx.spec, &ctx.u0, t)?.u;
        Ok(u.iter().zip(&noise).map(|(u, n)| u + n).collect())
    };
    let level = (-ctx.spec.hat(1) * s.t).exp() * ctx.spec.l2_norm(&ctx.u0);
    if level < 1e-10 {
        art.notes.push(format!(
            "warning: e^(-lambda_hat_1 T) |u0| = {level:.3e} is below 1e-10; data are numerically zero"
        ));
    }

    let u_t = data(s.t)?;
    let report = fixed_point_invert(mesh, &ctx.u0, &u_t, s.t, ctx.a.values(), s.a_plus, &opts, Some(ctx.a.values()))?;
    let rel = report.rel_error.unwrap_or(f64::NAN);
    art.checks.push(Check::new(
        "fixed_point_converged",
        report.converged,
        report.iterations as f64,
        s.inversion.max_iter as f64,
        format!("last_step={:.6e}", report.residual_trace.last().copied().unwrap_or(f64::NAN)),
    ));
    art.checks.push(Check::at_most(
        "rel_error",
        rel,
        s.inversion.target_rel_error,
        format!("T={} noise={:e}", s.t, s.noise),
    ));
    art.notes.push(format!(
        "data_residual={:.6e} lambda_hat_1={:.12e} stalled={} gradient_flags={}",
        report.data_residual, report.lambda1, report.stalled, report.gradient_flags
    ));
    let trace: Vec<Vec<f64>> = report
        .residual_trace
        .iter()
        .enumerate()
        .map(|(i, v)| vec![(i + 1) as f64, *v])
        .collect();
    art.files.push(("residual_trace.csv".into(), csv(&["iteration", "step_l2"], &trace)));
    art.files.push(("a_rec.grid".into(), grid_to_string(mesh, report.a_rec.values())));
    art.files.push(("a_true.grid".into(), grid_to_string(mesh, ctx.a.values())));
    art.files.push(("u_T.grid".into(), grid_to_string(mesh, &u_t)));

    if !s.inversion.t_sweep.is_empty() {
        let mut rows = Vec::new();
        for &t in &s.inversion.t_sweep {
            let r = fixed_point_invert(mesh, &ctx.u0, &data(t)?, t, ctx.a.values(), s.a_plus, &opts, Some(ctx.a.values()))?;
            rows.push(vec![t, r.rel_error.unwrap_or(f64::NAN), r.iterations as f64, r.converged as u8 as f64]);
        }
        let drop = rows.windows(2).position(|w| w[1][1] < w[0][1]);
        let (measured, bound) = match drop {
            Some(i) => (rows[i + 1][1], rows[i][1]),
            None => (0.0, 0.0),
        };
        art.checks.push(Check::new(
            "rel_error_nondecreasing_in_T",
            drop.is_none(),
            measured,
            bound,
            match drop {
                Some(i) => format!("index={} T={}", i + 1, rows[i + 1][0]),
                None => String::new(),
            },
        ));
        art.files.push((
            "sweep.csv".into(),
            csv(&["t", "rel_error", "iterations", "converged"], &rows),
        ));
    }
    Ok(())
}

fn verify_spectral(ctx: &Context, art: &mut RunArtifact) -> Result<()> {
    let (s, mesh, spec) = (ctx.s, &ctx.mesh, &ctx.spec);
    let ones = CoefficientField::constant(mesh, 1.0, s.a_plus)?;
    let lap = decompose(mesh, &ones, s.modes, s.cluster_tol)?;

    let sandwich = verify_minmax_sandwich(spec, &lap, s.a_plus)?;
    let rows: Vec<Vec<f64>> = sandwich
        .rows
        .iter()
        .map(|r| vec![r.k as f64, r.laplacian, r.value, r.upper])
        .collect();
    art.files.push(("minmax.csv".into(), csv(&["k", "lambda_laplacian", "lambda", "upper"], &rows)));
    let (measured, bound, detail) = match sandwich.rows.iter().find(|r| !r.holds) {
        Some(r) => (r.value, if r.value < r.laplacian { r.laplacian } else { r.upper }, format!("index={}", r.k)),
        None => (0.0, 0.0, format!("modes={} slack={:e}", sandwich.rows.len(), sandwich.slack)),
    };
    art.checks.push(Check::new("minmax_sandwich", sandwich.holds(), measured, bound, detail));

    if spec.num_clusters() >= 2 {
        let gap = check_gap_property(spec.hat_eigenvalues(), s.gamma, s.delta)?;
        let rows: Vec<Vec<f64>> = spec
            .hat_eigenvalues()
            .iter()
            .zip(spec.multiplicities())
            .zip(&gap.rho)
            .enumerate()
            .map(|(i, ((h, m), r))| vec![(i + 1) as f64, *h, *m as f64, *r])
            .collect();
        art.files.push(("gap.csv".into(), csv(&["k", "lambda_hat", "multiplicity", "rho"], &rows)));
        let (measured, bound, detail) = match gap.first_violation() {
            Some(k) => {
                let h = spec.hat_eigenvalues();
                (h[k] - h[k - 1], s.delta * h[k - 1].powf(-s.gamma), format!("index={k}"))
            }
            None => (gap.delta_max, s.delta, format!("delta_max={:.6e}", gap.delta_max)),
        };
        art.checks.push(Check::new(
            format!("gap_property gamma={} delta={}", s.gamma, s.delta),
            gap.all_satisfied(),
            measured,
            bound,
            detail,
        ));
    }

    if let Some(c) = s.coefficient.is_constant() {
        let pi2 = std::f64::consts::PI.powi(2);
        let l = spec.eigenvalues();
        art.checks.push(Check::at_most(
            "lambda_1_vs_2pi^2",
            (l[0] / (2.0 * c * pi2) - 1.0).abs(),
            0.01,
            format!("lambda_1={:.9e}", l[0]),
        ));
        if l.len() >= 3 {
            let worst = (l[1] / (5.0 * c * pi2) - 1.0).abs().max((l[2] / (5.0 * c * pi2) - 1.0).abs());
            art.checks.push(Check::at_most(
                "lambda_2_3_vs_5pi^2",
                worst,
                0.02,
                format!("lambda_2={:.9e} lambda_3={:.9e}", l[1], l[2]),
            ));
            let mult = spec.multiplicities().get(1).copied().unwrap_or(0);
            art.checks.push(Check::new(
                "cluster_2_multiplicity",
                mult == 2,
                mult as f64,
                2.0,
                format!("cluster_tol={:e}", s.cluster_tol),
            ));
        }
    }

    let eta = s.spectral.eta.nodal(mesh)?;
    for &sc in &s.spectral.scales {
        ctx.perturbed(&eta, sc)?;
    }
    let eig_rows = eigen_perturbation_experiment(mesh, &ctx.a, &eta, &s.spectral.scales, s.spectral.eig_modes, s.cluster_tol)?;
    let rows: Vec<Vec<f64>> = eig_rows
        .iter()
        .map(|r| vec![r.k as f64, r.s, r.lambda, r.lambda_tilde, r.diff, r.l2_coeff_diff, r.ratio])
        .collect();
    art.files.push((
        "perturbation.csv".into(),
        csv(&["k", "s", "lambda", "lambda_tilde", "diff", "l2_coeff_diff", "ratio"], &rows),
    ));
    let eig_spread = spread(eig_rows.iter().map(|r| r.ratio).filter(|r| *r > 0.0)).unwrap_or(f64::INFINITY);
    art.checks.push(Check::at_most(
        "eigen_perturbation_ratio_spread",
        eig_spread,
        50.0,
        format!("points={}", eig_rows.len()),
    ));

    let proj_modes = s.spectral.eig_modes.max(2 * s.spectral.proj_modes);
    let proj_rows = projection_perturbation_experiment(
        mesh,
        &ctx.a,
        &eta,
        &s.spectral.scales,
        s.spectral.proj_modes,
        s.gamma,
        s.delta,
        s.spectral.eta_hat,
        proj_modes,
        s.cluster_tol,
    )?;
    let rows: Vec<Vec<f64>> = proj_rows
        .iter()
        .map(|r| {
            vec![
                r.k as f64,
                r.s,
                r.lambda_max,
                r.proj_diff,
                r.l2_coeff_diff,
                r.isolated as u8 as f64,
                r.gated as u8 as f64,
                r.ratio,
            ]
        })
        .collect();
    art.files.push((
        "projection.csv".into(),
        csv(
            &["k", "s", "lambda_max", "proj_diff", "l2_coeff_diff", "isolated", "gated", "ratio"],
            &rows,
        ),
    ));
    let gated: Vec<_> = proj_rows.iter().filter(|r| r.gated).collect();
    let proj_spread = spread(gated.iter().map(|r| r.ratio)).unwrap_or(f64::INFINITY);
    let (lo, hi) = extremes(gated.iter().map(|r| (r.k, r.s, r.ratio)));
    art.checks.push(Check::at_most(
        "projection_perturbation_ratio_spread",
        proj_spread,
        10.0,
        format!(
            "gated_points={} eta_hat={} min at (k={}, s={:e}) max at (k={}, s={:e})",
            gated.len(),
            s.spectral.eta_hat,
            lo.0,
            lo.1,
            hi.0,
            hi.1
        ),
    ));
    let per_k = (1..=s.spectral.proj_modes)
        .filter_map(|k| spread(gated.iter().filter(|r| r.k == k).map(|r| r.ratio)))
        .fold(1.0f64, f64::max);
    art.notes.push(format!("projection ratio spread over s at fixed k (worst k): {per_k:.6e}"));
    Ok(())
}

/// `(k, s)` of the smallest and largest ratio.
fn extremes(points: impl Iterator<Item = (usize, f64, f64)>) -> ((usize, f64), (usize, f64)) {
    let (mut lo, mut hi) = ((0, 0.0, f64::INFINITY), (0, 0.0, f64::NEG_INFINITY));
    for p in points {
        if p.2 < lo.2 {
            lo = p;
        }
        if p.2 > hi.2 {
            hi = p;
        }
    }
    ((lo.0, lo.1), (hi.0, hi.1))
}

fn sweep(ctx: &Context, art: &mut RunArtifact) -> Result<()> {
    let (s, mesh) = (ctx.s, &ctx.mesh);
    if s.t_grid.len() < 4 {
        return Err(Error::invalid(format!(
            "stability sweep needs at least 4 grid times, got {}",
            s.t_grid.len()
        )));
    }
    let eta = s.stability.perturbation.nodal(mesh)?;
    let a_tilde = ctx.perturbed(&eta, 1.0)?;
    let table = stability_ratio_experiment(mesh, &ctx.a, &a_tilde, &ctx.u0, &s.t_grid, s.modes, s.cluster_tol)?;
    let rows: Vec<Vec<f64>> = table
        .rows
        .iter()
        .map(|r| vec![r.t, r.coeff_diff, r.data_diff_h2, r.data_diff_l2, r.rho.unwrap_or(f64::NAN)])
        .collect();
    art.files.push((
        "stability.csv".into(),
        csv(&["t", "coeff_l2", "data_h2", "data_l2", "rho"], &rows),
    ));
    if table.rows.is_empty() {
        art.notes.push("coefficients coincide; stability table is empty".into());
        return Ok(());
    }
    let (lo, hi) = table.rate_bracket();
    let rate = table.rate().unwrap_or(f64::NAN);
    art.checks.push(Check::new(
        "rho_rate_bracket",
        rate >= lo && rate <= hi,
        rate,
        hi,
        format!(
            "lower={lo:.6e} lambda_hat_1={:.6e} a_plus*lambda_1^Omega={:.6e}",
            table.lambda1,
            table.a_plus * table.lambda1_laplacian
        ),
    ));
    let defined: Vec<(f64, f64)> = table.rows.iter().filter_map(|r| r.rho.map(|v| (r.t, v))).collect();
    let drop = defined.windows(2).position(|w| w[1].1 < w[0].1);
    art.checks.push(Check::new(
        "rho_increasing_in_T",
        drop.is_none() && defined.len() >= 2,
        drop.map(|i| defined[i + 1].1).unwrap_or(0.0),
        drop.map(|i| defined[i].1).unwrap_or(0.0),
        match drop {
            Some(i) => format!("T={}", defined[i + 1].0),
            None => format!("points={}", defined.len()),
        },
    ));
    let blind: Vec<String> = table.rows.iter().filter(|r| r.rho.is_none()).map(|r| r.t.to_string()).collect();
    if !blind.is_empty() {
        art.notes.push(format!("data indistinguishable (below 1e-14) at T = {}", blind.join(", ")));
    }
    art.notes.push(format!(
        "reciprocal_gap={:.6e} C_fit={:.6e}",
        table.reciprocal_gap, table.reciprocal_constant
    ));

    let late: Vec<f64> = s.t_grid.iter().copied().filter(|t| *t >= 1.0).collect();
    if late.len() >= 2 {
        let spec_t = decompose(mesh, &a_tilde, s.modes, s.cluster_tol)?;
        let lt = lipschitz_table(&ctx.spec, &spec_t, ctx.a.values(), a_tilde.values(), &ctx.u0, &late)?;
        let rows: Vec<Vec<f64>> = lt.rows.iter().map(|r| vec![r.t, r.f_diff, r.coeff_diff, r.ratio]).collect();
        art.files.push((
            "lipschitz.csv".into(),
            csv(&["t", "f_diff_l2", "coeff_l2", "ratio"], &rows),
        ));
        match lt.fit {
            Some(fit) => art.checks.push(Check::at_most(
                "f_lipschitz_slope",
                lt.relative_deviation().unwrap_or(f64::INFINITY),
                0.05,
                format!("slope={:.9e} expected={:.9e}", fit.slope, lt.expected_slope),
            )),
            None => art.notes.push("F difference vanishes; Lipschitz slope not fitted".into()),
        }
    } else {
        art.notes.push("fewer than two grid times >= 1; Lipschitz table skipped".into());
    }
    Ok(())
}
