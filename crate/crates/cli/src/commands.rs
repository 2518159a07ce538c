use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use volterra_ghd::compare::{self, WindowMetrics};
use volterra_ghd::dos::{sigma_from_dos, solve_el_with_kernel, DosSolution};
use volterra_ghd::ensembles::{sample_ag, HistogramAccumulator};
use volterra_ghd::ghd::{euler_scale_curve, CurvePoint, DressedCharges, DressingOperator, GhdCurve, GhdSummary};
use volterra_ghd::grid::GridParams;
use volterra_ghd::io::write_json;
use volterra_ghd::kernel::assemble_t;
use volterra_ghd::md::{aggregate, run_plan, write_estimates_csv, RescaledProfile, RunOptions};
use volterra_ghd::special::mu_quadratic;
use volterra_ghd::whittaker::rho_whittaker;
use volterra_ghd::Error;

use crate::config::RunConfig;
use crate::CliError;

pub struct Context {
    pub config: RunConfig,
    pub hash: String,
    pub out: PathBuf,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn solve(ctx: &Context) -> Result<(DosSolution, DressingOperator), CliError> {
    let grid = ctx.config.grid()?;
    let k = assemble_t(&grid);
    let sol = solve_el_with_kernel(&ctx.config.gge()?, &grid, &k, &ctx.config.solver)?;
    if !sol.converged {
        return Err(CliError::Numerical(format!(
            "density iteration did not converge after {} sweeps (residual {:.3e})",
            sol.iterations, sol.residual
        )));
    }
    let op = DressingOperator::new(&sol, &k)?;
    Ok((sol, op))
}

#[derive(Serialize)]
struct DosMeta {
    config_hash: String,
    beta: f64,
    potential: Vec<f64>,
    grid: GridParams,
    converged: bool,
    iterations: usize,
    residual: f64,
    final_damping: f64,
    mu: f64,
    /// 1 + 2 ln 2 − 2 ln Γ(β/2), present for V = x²/2
    mu_closed_form: Option<f64>,
    kappa: f64,
    volterra_free_energy: f64,
    /// largest relative deviation from the closed-form density on the checked range
    whittaker_max_rel_dev: Option<f64>,
    whittaker_range: Option<(f64, f64)>,
}

pub fn dos(ctx: &Context) -> Result<(), CliError> {
    let grid = ctx.config.grid()?;
    let params = ctx.config.gge()?;
    let k = assemble_t(&grid);
    let sol = solve_el_with_kernel(&params, &grid, &k, &ctx.config.solver)?;
    let op = DressingOperator::new(&sol, &k)?;
    let sigma = sigma_from_dos(&sol, &op)?;
    let (whittaker_max_rel_dev, whittaker_range) = if ctx.config.dos.whittaker_check && params.is_quadratic() {
        let range = (0.2, 0.6 * grid.w_max);
        let rho = sol.rho();
        let mut worst: f64 = 0.0;
        for (j, &w) in grid.nodes.iter().enumerate() {
            if w >= range.0 && w <= range.1 {
                worst = worst.max((rho[j] / rho_whittaker(params.beta, w)? - 1.0).abs());
            }
        }
        (Some(worst), Some(range))
    } else {
        (None, None)
    };
    sol.write_csv(&ctx.path("dos.csv"), &sigma.sigma_norm())?;
    let meta = DosMeta {
        config_hash: ctx.hash.clone(),
        beta: sol.beta,
        potential: params.potential.clone(),
        grid: grid.params(),
        converged: sol.converged,
        iterations: sol.iterations,
        residual: sol.residual,
        final_damping: sol.final_damping,
        mu: sol.mu,
        mu_closed_form: params.is_quadratic().then(|| mu_quadratic(params.beta)),
        kappa: sigma.kappa,
        volterra_free_energy: sol.volterra_free_energy(),
        whittaker_max_rel_dev,
        whittaker_range,
    };
    write_json(&ctx.path("dos_meta.json"), &meta)?;
    println!("mu = {:.10}, kappa = {:.10}, {} sweeps", sol.mu, sigma.kappa, sol.iterations);
    if !sol.converged {
        return Err(CliError::Numerical(format!("density iteration did not converge (residual {:.3e})", sol.residual)));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct GhdMeta {
    config_hash: String,
    #[serde(flatten)]
    summary: GhdSummary,
    curve_files: Vec<String>,
}

fn curve_name(m: usize, n: usize) -> String {
    format!("ghd_curve_m{m}_n{n}.csv")
}

pub fn ghd(ctx: &Context) -> Result<(), CliError> {
    let (sol, op) = solve(ctx)?;
    let ch = DressedCharges::compute(&sol, &op, ctx.config.ghd.n_max)?;
    let summary = GhdSummary::new(&sol, &ch);
    let mut curve_files = Vec::new();
    for &(m, n) in &ctx.config.ghd.curves {
        let curve = euler_scale_curve(&sol, &ch, m, n)?;
        let name = curve_name(m, n);
        curve.write_csv(&ctx.path(&name))?;
        curve_files.push(name);
    }
    if !summary.veff_monotone {
        eprintln!("warning: effective velocity is not monotone at {} nodes", ch.non_monotone.len());
    }
    println!("xi0 = {:.10}, C01 = {:.10}, B01 = {:.10}", summary.xi0, summary.c[0][1], summary.b[0][1]);
    let meta = GhdMeta { config_hash: ctx.hash.clone(), summary, curve_files };
    write_json(&ctx.path("ghd_summary.json"), &meta)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct SumEntry {
    m: usize,
    n: usize,
    t: f64,
    sum: f64,
    sum_stderr: f64,
    first_moment: f64,
    first_moment_stderr: f64,
}

#[derive(Serialize, Deserialize)]
struct MdMeta {
    config_hash: String,
    complete: bool,
    trials_done: usize,
    trials_planned: usize,
    retained: usize,
    dropped: Vec<(usize, String)>,
    max_relative_drift: f64,
    sums: Vec<SumEntry>,
    /// site-and-trial means ⟨Q^{[n]}⟩ at t = 0 with standard errors
    field_means: BTreeMap<usize, (f64, f64)>,
}

pub fn md(ctx: &Context, stop_after: Option<usize>) -> Result<(), CliError> {
    let (plan, section) = ctx.config.md_plan()?;
    let checkpoint = ctx.path("md_checkpoint.json");
    let progress = |done: usize, total: usize| eprintln!("md: {done}/{total} trials");
    let opts = RunOptions {
        batch: section.batch,
        checkpoint: Some(&checkpoint),
        config_key: ctx.hash.clone(),
        stop_after,
        progress: Some(&progress),
    };
    let outcome = run_plan(&plan, &opts)?;
    let acc = &outcome.accumulator;
    let done = acc.retained + acc.dropped.len();
    if !outcome.complete {
        println!("stopped after {done} of {} trials; rerun to resume", plan.trials);
        return Ok(());
    }
    let (estimates, means) = aggregate(&plan, acc)?;
    write_estimates_csv(&ctx.path("md_correlations.csv"), &estimates)?;
    let mut sums = Vec::new();
    for e in &estimates {
        for (k, &t) in e.times.iter().enumerate() {
            sums.push(SumEntry {
                m: e.m,
                n: e.n,
                t,
                sum: e.sum[k].0,
                sum_stderr: e.sum[k].1,
                first_moment: e.first_moment[k].0,
                first_moment_stderr: e.first_moment[k].1,
            });
        }
    }
    let field_means = means.fields.iter().zip(&means.values).map(|(&f, v)| (f, v[0])).collect();
    let meta = MdMeta {
        config_hash: ctx.hash.clone(),
        complete: true,
        trials_done: done,
        trials_planned: plan.trials,
        retained: acc.retained,
        dropped: acc.dropped.clone(),
        max_relative_drift: acc.max_drift,
        sums,
        field_means,
    };
    write_json(&ctx.path("md_meta.json"), &meta)?;
    println!("{} trials retained, {} dropped, max drift {:.2e}", acc.retained, acc.dropped.len(), acc.max_drift);
    if acc.retained == 0 {
        return Err(CliError::Numerical("every trial failed".into()));
    }
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Usage(format!("missing input {}: {e}; run the producing command first", path.display()))
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Io(format!("cannot parse {}: {e}", path.display())))
}

fn check_hash(ctx: &Context, name: &str, found: &str) -> Result<(), CliError> {
    if found != ctx.hash {
        return Err(CliError::Usage(format!(
            "{name} was produced by a different configuration (hash {found}, current {})",
            ctx.hash
        )));
    }
    Ok(())
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    csv::Reader::from_path(path).map_err(|e| CliError::Usage(format!("missing input {}: {e}", path.display())))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::Io(format!("malformed {}: {e}", path.display()))
}

#[derive(Deserialize)]
struct CurveRow {
    w: f64,
    xi: f64,
    value: f64,
    diverged: u8,
}

fn read_curve(path: &Path, m: usize, n: usize, xi0: f64) -> Result<GhdCurve, CliError> {
    let mut points = Vec::new();
    for row in csv_reader(path)?.deserialize() {
        let r: CurveRow = row.map_err(|e| csv_err(path, e))?;
        points.push(CurvePoint { w: r.w, xi: r.xi, value: r.value, diverged: r.diverged != 0 });
    }
    Ok(GhdCurve { m, n, xi0, points })
}

#[derive(Deserialize)]
struct EstimateRow {
    m: usize,
    n: usize,
    t: f64,
    #[allow(dead_code)]
    j: i64,
    xi: f64,
    #[serde(rename = "S")]
    #[allow(dead_code)]
    s: f64,
    #[serde(rename = "tS")]
    ts: f64,
    stderr: f64,
}

/// Rescaled profiles keyed by (m, n) and then by t, in file order.
fn read_profiles(path: &Path) -> Result<BTreeMap<(usize, usize), Vec<RescaledProfile>>, CliError> {
    let mut out: BTreeMap<(usize, usize), Vec<RescaledProfile>> = BTreeMap::new();
    for row in csv_reader(path)?.deserialize() {
        let r: EstimateRow = row.map_err(|e| csv_err(path, e))?;
        if !(r.t > 0.0) {
            continue;
        }
        let list = out.entry((r.m, r.n)).or_default();
        if list.last().is_none_or(|p| p.t != r.t) {
            list.push(RescaledProfile { t: r.t, xi: Vec::new(), value: Vec::new(), stderr: Vec::new() });
        }
        let p = list.last_mut().expect("just pushed");
        p.xi.push(r.xi);
        p.value.push(r.ts);
        p.stderr.push(r.t * r.stderr);
    }
    Ok(out)
}

#[derive(Serialize)]
struct CompareEntry {
    m: usize,
    n: usize,
    t: f64,
    /// mean |MD − GHD| over the window
    window: WindowMetrics,
    /// window mean deviation divided by the curve peak in the window
    relative_l1: f64,
    /// the same ratio for |MD| against |GHD|
    relative_l1_magnitude: f64,
    sign_changes: usize,
    oscillation_window: (f64, f64),
    curve_min_near_shock: f64,
}

#[derive(Serialize)]
struct CompareMeta {
    config_hash: String,
    xi0: f64,
    entries: Vec<CompareEntry>,
}

pub fn compare(ctx: &Context) -> Result<(), CliError> {
    let ghd: GhdMeta = read_json(&ctx.path("ghd_summary.json"))?;
    check_hash(ctx, "ghd_summary.json", &ghd.config_hash)?;
    let md: MdMeta = read_json(&ctx.path("md_meta.json"))?;
    check_hash(ctx, "md_meta.json", &md.config_hash)?;
    let xi0 = ghd.summary.xi0;
    let profiles = read_profiles(&ctx.path("md_correlations.csv"))?;
    let cfg = &ctx.config.compare;
    let (lo, hi) = (cfg.xi_lo, xi0 - cfg.shock_margin);
    let osc = (xi0 - cfg.oscillation_halfwidth, xi0 + cfg.oscillation_halfwidth);
    let mut entries = Vec::new();
    for (&(m, n), list) in &profiles {
        let name = curve_name(m, n);
        if !ghd.curve_files.contains(&name) {
            eprintln!("skipping ({m}, {n}): no GHD curve in ghd_summary.json");
            continue;
        }
        let curve = read_curve(&ctx.path(&name), m, n, xi0)?;
        let mut rows = Vec::new();
        for profile in list {
            let joined = compare::join(profile, &curve);
            let window = compare::window_metrics(&joined, lo, hi)?;
            entries.push(CompareEntry {
                m,
                n,
                t: profile.t,
                relative_l1: window.mean_abs_deviation / window.ghd_peak,
                relative_l1_magnitude: window.mean_magnitude_deviation / window.ghd_peak,
                window,
                sign_changes: compare::sign_changes(&joined, osc.0, osc.1, cfg.sigmas),
                oscillation_window: osc,
                curve_min_near_shock: compare::curve_min(&curve, osc.0, osc.1),
            });
            rows.extend(joined);
        }
        compare::write_csv(&ctx.path(&format!("compare_m{m}_n{n}.csv")), &rows)?;
    }
    if entries.is_empty() {
        return Err(CliError::Usage("no MD pair has a matching GHD curve".into()));
    }
    for e in &entries {
        println!(
            "({}, {}) t = {}: relative L1 {:.4}, {} sign changes near xi0",
            e.m, e.n, e.t, e.relative_l1, e.sign_changes
        );
    }
    write_json(&ctx.path("compare_metrics.json"), &CompareMeta { config_hash: ctx.hash.clone(), xi0, entries })?;
    Ok(())
}

#[derive(Serialize)]
struct EnsembleMeta {
    config_hash: String,
    beta: f64,
    n_pairs: usize,
    samples: usize,
    /// ∫|h − ρ| over [l1_lo, w_max] with ρ averaged over each bin
    l1: f64,
    l1_range: (f64, f64),
    /// (1/N)E[Σw²] from the histogram, and its exact value β/2
    second_moment: f64,
    second_moment_expected: f64,
    overflow_fraction: f64,
}

pub fn ensemble_check(ctx: &Context) -> Result<(), CliError> {
    let params = ctx.config.gge()?;
    if !params.is_quadratic() {
        return Err(CliError::Usage("the ensemble check needs V = x^2/2".into()));
    }
    let e = &ctx.config.ensemble;
    if e.samples == 0 || e.n_pairs == 0 {
        return Err(CliError::Usage("ensemble.samples and ensemble.n_pairs must be positive".into()));
    }
    let (sol, _) = solve(ctx)?;
    let w_max = sol.grid.w_max;
    let mut acc = HistogramAccumulator::new(e.bins, w_max)?;
    for r in 0..e.samples {
        acc.add_ag(&sample_ag(params.beta, e.n_pairs, e.seed.wrapping_add(r as u64))?);
    }
    let hist = acc.finish()?;
    hist.write_csv(&ctx.path("ensemble_hist.csv"))?;
    let mut l1 = 0.0;
    for k in 0..e.bins {
        let (lo, hi) = (hist.bin_edges[k].max(e.l1_lo), hist.bin_edges[k + 1]);
        if hi > lo {
            l1 += (hist.counts[k] * (hi - lo) - sol.mass_between(lo, hi) / params.beta).abs();
        }
    }
    let meta = EnsembleMeta {
        config_hash: ctx.hash.clone(),
        beta: params.beta,
        n_pairs: e.n_pairs,
        samples: e.samples,
        l1,
        l1_range: (e.l1_lo, w_max),
        second_moment: hist.moment(2),
        second_moment_expected: 0.5 * params.beta,
        overflow_fraction: hist.overflow,
    };
    println!(
        "L1 = {:.5} on [{}, {}], second moment {:.5} (exact {})",
        l1, e.l1_lo, w_max, meta.second_moment, meta.second_moment_expected
    );
    write_json(&ctx.path("ensemble_meta.json"), &meta)?;
    Ok(())
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Json(_) => CliError::Io(e.to_string()),
            Error::InvalidInput(_) | Error::UnsupportedPotential(_) | Error::ResumeMismatch { .. } => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}
