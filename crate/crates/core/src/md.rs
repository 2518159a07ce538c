//! Monte Carlo estimation of S_mn(j, t) = ⟨Q^{[m]}_j(t) Q^{[n]}_0(0)⟩ − ⟨Q^{[m]}⟩⟨Q^{[n]}⟩
//! over GGE-sampled trajectories.
//!
//! Each trial contributes the site average P(j, t) = (1/2N) Σ_i Q^{[m]}_{i+j}(t) Q^{[n]}_i(0)
//! and the site means of every field. Trials are grouped into blocks by
//! `trial_index % blocks`; the estimate subtracts grand means and its error
//! bars come from a delete-one-block jackknife.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::ensembles::{sample_gge, GgeParams};
use crate::error::{Error, Result};
use crate::integrate::Dopri5;
use crate::io::fmt_f64;
use crate::lattice::{local_currents, local_fields, log_product, CurrentConvention, LatticeState};

/// Upper bound on the number of jackknife blocks.
pub const MAX_BLOCKS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdPlan {
    pub gge: GgeParams,
    pub n_pairs: usize,
    pub trials: usize,
    /// snapshot times, nonnegative and strictly increasing
    pub times: Vec<f64>,
    /// (m, n) pairs: Q^{[m]} at time t against Q^{[n]} at time 0
    pub fields: Vec<(usize, usize)>,
    pub base_seed: u64,
    pub tol: f64,
    pub convention: CurrentConvention,
    pub n_max: usize,
    /// site averages through FFT cross-correlation instead of the O(N²) loop
    pub use_fft: bool,
}

impl MdPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_pairs < 2 {
            return Err(Error::InvalidInput(format!("n_pairs must be at least 2, got {}", self.n_pairs)));
        }
        if self.trials == 0 {
            return Err(Error::InvalidInput("trials must be at least 1".into()));
        }
        if self.times.is_empty() {
            return Err(Error::InvalidInput("at least one snapshot time is required".into()));
        }
        if self.times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || self.times.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::InvalidInput("times must be nonnegative and strictly increasing".into()));
        }
        if self.fields.is_empty() {
            return Err(Error::InvalidInput("at least one (m, n) pair is required".into()));
        }
        if let Some(&(m, n)) = self.fields.iter().find(|(m, n)| *m > self.n_max || *n > self.n_max) {
            return Err(Error::InvalidInput(format!("pair ({m}, {n}) exceeds n_max = {}", self.n_max)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput("integrator tolerance must be positive".into()));
        }
        if !self.gge.is_quadratic() {
            return Err(Error::UnsupportedPotential("MD sampling needs V = x^2/2".into()));
        }
        Ok(())
    }

    pub fn sites(&self) -> usize {
        2 * self.n_pairs
    }

    pub fn blocks(&self) -> usize {
        self.trials.min(MAX_BLOCKS)
    }

    /// Distinct field indices that appear in any pair.
    pub fn field_set(&self) -> Vec<usize> {
        let s: BTreeSet<usize> = self.fields.iter().flat_map(|&(m, n)| [m, n]).collect();
        s.into_iter().collect()
    }
}

/// Contribution of one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialPartial {
    pub trial_index: usize,
    /// products[pair][time][offset], offset j stored at j mod 2N
    pub products: Vec<Vec<Vec<f64>>>,
    /// means[field][k]: site mean at time 0 (k = 0) and at times[k − 1]
    pub means: Vec<Vec<f64>>,
    /// largest relative drift of Σ_j Q^{[n]}_j, n = 1, 2, and of ln Π a_j
    pub drift: f64,
}

/// Circular cross-correlation with reusable FFT plans.
pub struct Correlator {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    use_fft: bool,
}

impl Correlator {
    pub fn new(len: usize, use_fft: bool) -> Self {
        let mut planner = FftPlanner::new();
        Self { len, forward: planner.plan_fft_forward(len), inverse: planner.plan_fft_inverse(len), use_fft }
    }

    fn spectrum(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    /// c_j = (1/L) Σ_i x_{i+j} y_i given the spectrum of y.
    fn correlate_with(&self, x: &[f64], y_hat: &[Complex64], y: &[f64]) -> Vec<f64> {
        let l = self.len;
        if !self.use_fft {
            return (0..l).map(|j| (0..l).map(|i| x[(i + j) % l] * y[i]).sum::<f64>() / l as f64).collect();
        }
        let mut buf = self.spectrum(x);
        for (b, yh) in buf.iter_mut().zip(y_hat) {
            *b *= yh.conj();
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / (l * l) as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }

    pub fn correlate(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let y_hat = if self.use_fft { self.spectrum(y) } else { Vec::new() };
        self.correlate_with(x, &y_hat, y)
    }
}

/// Reusable per-plan machinery for running trials.
pub struct MdRunner {
    plan: MdPlan,
    fields: Vec<usize>,
    correlator: Correlator,
}

impl MdRunner {
    pub fn new(plan: &MdPlan) -> Result<Self> {
        plan.validate()?;
        Ok(Self {
            plan: plan.clone(),
            fields: plan.field_set(),
            correlator: Correlator::new(plan.sites(), plan.use_fft),
        })
    }

    pub fn plan(&self) -> &MdPlan {
        &self.plan
    }

    pub fn run_trial(&self, trial_index: usize) -> Result<TrialPartial> {
        let seed = self.plan.base_seed.wrapping_add(trial_index as u64);
        let state = sample_gge(&self.plan.gge, self.plan.n_pairs, seed)?;
        self.run_from_state(trial_index, state)
    }

    /// Evolve a given initial state; `run_trial` is this with a sampled state.
    pub fn run_from_state(&self, trial_index: usize, mut state: LatticeState) -> Result<TrialPartial> {
        let plan = &self.plan;
        let sites = plan.sites();
        if state.sites() != sites {
            return Err(Error::InvalidInput(format!("state has {} sites, plan expects {sites}", state.sites())));
        }
        let pos = |f: usize| self.fields.binary_search(&f).expect("field in set");
        let q0: Vec<Vec<f64>> = self.fields.iter().map(|&f| local_fields(&state, f)).collect();
        let q0_hat: Vec<Vec<Complex64>> = if plan.use_fft {
            q0.iter().map(|q| self.correlator.spectrum(q)).collect()
        } else {
            vec![Vec::new(); q0.len()]
        };
        let mut means: Vec<Vec<f64>> = q0.iter().map(|q| vec![mean(q)]).collect();
        let totals0 = [total(&state, 1), total(&state, 2)];
        let logp0 = log_product(&state);
        let mut drift: f64 = 0.0;
        let mut products = vec![Vec::with_capacity(plan.times.len()); plan.fields.len()];
        let mut integrator = Dopri5::new(plan.tol, sites);
        for &t in &plan.times {
            integrator.advance(&mut state, t)?;
            let qt: Vec<Vec<f64>> = self.fields.iter().map(|&f| local_fields(&state, f)).collect();
            for (k, q) in qt.iter().enumerate() {
                means[k].push(mean(q));
            }
            for (p, &(m, n)) in plan.fields.iter().enumerate() {
                let (im, i_n) = (pos(m), pos(n));
                products[p].push(self.correlator.correlate_with(&qt[im], &q0_hat[i_n], &q0[i_n]));
            }
            for (k, n) in [1usize, 2].into_iter().enumerate() {
                drift = drift.max(((total(&state, n) - totals0[k]) / totals0[k]).abs());
            }
            drift = drift.max((log_product(&state) - logp0).abs());
        }
        Ok(TrialPartial { trial_index, products, means, drift })
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn total(state: &LatticeState, n: usize) -> f64 {
    local_fields(state, n).iter().sum()
}

/// Single-trial convenience wrapper.
pub fn run_trial(plan: &MdPlan, trial_index: usize) -> Result<TrialPartial> {
    MdRunner::new(plan)?.run_trial(trial_index)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSums {
    pub count: usize,
    /// flattened [pair][time][offset]
    pub products: Vec<f64>,
    /// flattened [field][k]
    pub means: Vec<f64>,
}

/// Commutative accumulator of trial partials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdAccumulator {
    pub blocks: Vec<BlockSums>,
    pub sites: usize,
    pub n_times: usize,
    pub n_pairs_fields: usize,
    pub n_fields: usize,
    pub retained: usize,
    pub dropped: Vec<(usize, String)>,
    pub max_drift: f64,
}

impl MdAccumulator {
    pub fn new(plan: &MdPlan) -> Self {
        let sites = plan.sites();
        let n_times = plan.times.len();
        let n_fields = plan.field_set().len();
        let block = BlockSums {
            count: 0,
            products: vec![0.0; plan.fields.len() * n_times * sites],
            means: vec![0.0; n_fields * (n_times + 1)],
        };
        Self {
            blocks: vec![block; plan.blocks()],
            sites,
            n_times,
            n_pairs_fields: plan.fields.len(),
            n_fields,
            retained: 0,
            dropped: Vec::new(),
            max_drift: 0.0,
        }
    }

    pub fn add(&mut self, partial: &TrialPartial) {
        let b = partial.trial_index % self.blocks.len();
        let block = &mut self.blocks[b];
        block.count += 1;
        let mut k = 0;
        for per_pair in &partial.products {
            for per_time in per_pair {
                for v in per_time {
                    block.products[k] += v;
                    k += 1;
                }
            }
        }
        let mut k = 0;
        for per_field in &partial.means {
            for v in per_field {
                block.means[k] += v;
                k += 1;
            }
        }
        self.retained += 1;
        self.max_drift = self.max_drift.max(partial.drift);
    }

    pub fn record_failure(&mut self, trial_index: usize, reason: String) {
        self.dropped.push((trial_index, reason));
    }

    pub fn add_result(&mut self, trial_index: usize, r: Result<TrialPartial>) {
        match r {
            Ok(p) => self.add(&p),
            Err(e) => self.record_failure(trial_index, e.to_string()),
        }
    }

    /// Blockwise sum of two accumulators built for the same plan.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if self.blocks.len() != other.blocks.len() || self.blocks[0].products.len() != other.blocks[0].products.len() {
            return Err(Error::InvalidInput("cannot merge accumulators of different plans".into()));
        }
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.count += b.count;
            for (x, y) in a.products.iter_mut().zip(&b.products) {
                *x += y;
            }
            for (x, y) in a.means.iter_mut().zip(&b.means) {
                *x += y;
            }
        }
        self.retained += other.retained;
        self.dropped.extend(other.dropped.iter().cloned());
        self.dropped.sort_by_key(|d| d.0);
        self.max_drift = self.max_drift.max(other.max_drift);
        Ok(())
    }
}

/// Resumable state of a run: everything needed to continue after trial
/// `next_trial − 1`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    /// opaque key of the configuration; a resume with a different key is refused
    pub config_key: String,
    pub next_trial: usize,
    pub accumulator: MdAccumulator,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }

    /// Write through a temporary file so an interrupted save leaves the old one.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        crate::io::write_json(&tmp, self)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}

pub struct RunOptions<'a> {
    /// trials per batch; a checkpoint is written after every batch
    pub batch: usize,
    pub checkpoint: Option<&'a Path>,
    pub config_key: String,
    /// stop once this many trials are done (simulates an interruption)
    pub stop_after: Option<usize>,
    pub progress: Option<&'a (dyn Fn(usize, usize) + Sync)>,
}

impl Default for RunOptions<'_> {
    fn default() -> Self {
        Self { batch: 64, checkpoint: None, config_key: String::new(), stop_after: None, progress: None }
    }
}

pub struct RunOutcome {
    pub accumulator: MdAccumulator,
    pub complete: bool,
    /// trials found already done in the checkpoint
    pub resumed_from: usize,
}

/// Run all trials of a plan in batches. Trials inside a batch run on the
/// rayon pool; their partials are added in trial order, so the result does
/// not depend on the thread count and a resumed run reproduces an
/// uninterrupted one bit for bit.
pub fn run_plan(plan: &MdPlan, opts: &RunOptions) -> Result<RunOutcome> {
    let runner = MdRunner::new(plan)?;
    let batch = opts.batch.max(1);
    let (mut acc, mut next) = match opts.checkpoint {
        Some(path) if path.exists() => {
            let cp = Checkpoint::load(path)?;
            if cp.config_key != opts.config_key {
                return Err(Error::ResumeMismatch { stored: cp.config_key, current: opts.config_key.clone() });
            }
            (cp.accumulator, cp.next_trial)
        }
        _ => (MdAccumulator::new(plan), 0),
    };
    let resumed_from = next;
    let limit = opts.stop_after.map_or(plan.trials, |s| s.min(plan.trials));
    while next < limit {
        let end = (next + batch).min(limit);
        let results: Vec<Result<TrialPartial>> = (next..end).into_par_iter().map(|r| runner.run_trial(r)).collect();
        for (r, res) in (next..end).zip(results) {
            acc.add_result(r, res);
        }
        next = end;
        if let Some(path) = opts.checkpoint {
            Checkpoint { config_key: opts.config_key.clone(), next_trial: next, accumulator: acc.clone() }
                .save(path)?;
        }
        if let Some(cb) = opts.progress {
            cb(next, plan.trials);
        }
    }
    Ok(RunOutcome { accumulator: acc, complete: next >= plan.trials, resumed_from })
}

/// Correlation estimate for one (m, n) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationEstimate {
    pub m: usize,
    pub n: usize,
    pub times: Vec<f64>,
    /// offsets −N, …, N − 1
    pub offsets: Vec<i64>,
    /// s[time][offset index]
    pub s: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    /// Σ_j S(j, t) and its jackknife error
    pub sum: Vec<(f64, f64)>,
    /// Σ_j j·S(j, t) and its jackknife error
    pub first_moment: Vec<(f64, f64)>,
    pub trials: usize,
}

/// Site-and-trial means with jackknife errors, mean_sites[field][k] as in
/// [`TrialPartial::means`].
#[derive(Clone, Debug, PartialEq)]
pub struct FieldMeans {
    pub fields: Vec<usize>,
    pub values: Vec<Vec<(f64, f64)>>,
}

struct Totals {
    count: f64,
    products: Vec<f64>,
    means: Vec<f64>,
}

fn totals_without(acc: &MdAccumulator, skip: Option<usize>) -> Totals {
    let mut t = Totals {
        count: 0.0,
        products: vec![0.0; acc.blocks[0].products.len()],
        means: vec![0.0; acc.blocks[0].means.len()],
    };
    for (b, block) in acc.blocks.iter().enumerate() {
        if Some(b) == skip {
            continue;
        }
        t.count += block.count as f64;
        for (x, y) in t.products.iter_mut().zip(&block.products) {
            *x += y;
        }
        for (x, y) in t.means.iter_mut().zip(&block.means) {
            *x += y;
        }
    }
    t
}

/// Mean, then delete-one-block jackknife standard error, of a statistic.
fn jackknife<F: Fn(&Totals) -> Vec<f64>>(acc: &MdAccumulator, stat: F) -> (Vec<f64>, Vec<f64>) {
    let full = stat(&totals_without(acc, None));
    let live: Vec<usize> = (0..acc.blocks.len()).filter(|&b| acc.blocks[b].count > 0).collect();
    let g = live.len();
    if g < 2 {
        return (full.clone(), vec![f64::NAN; full.len()]);
    }
    let reps: Vec<Vec<f64>> = live.iter().map(|&b| stat(&totals_without(acc, Some(b)))).collect();
    let se = (0..full.len())
        .map(|i| {
            let mean = reps.iter().map(|r| r[i]).sum::<f64>() / g as f64;
            let ss = reps.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>();
            ((g - 1) as f64 / g as f64 * ss).sqrt()
        })
        .collect();
    (full, se)
}

/// Turn accumulated partials into estimates, one per plan pair.
pub fn aggregate(plan: &MdPlan, acc: &MdAccumulator) -> Result<(Vec<CorrelationEstimate>, FieldMeans)> {
    if acc.retained == 0 {
        return Err(Error::Empty("no successful trials".into()));
    }
    let sites = plan.sites();
    let nt = plan.times.len();
    let fields = plan.field_set();
    let nk = nt + 1;
    let half = plan.n_pairs as i64;
    let offsets: Vec<i64> = (-half..half).collect();
    let idx = |j: i64| -> usize { j.rem_euclid(sites as i64) as usize };

    let mut out = Vec::with_capacity(plan.fields.len());
    for (p, &(m, n)) in plan.fields.iter().enumerate() {
        let im = fields.binary_search(&m).unwrap();
        let i_n = fields.binary_search(&n).unwrap();
        // statistic layout: [time][offset] then per-time sums, then first moments
        let stat = |t: &Totals| -> Vec<f64> {
            let mut v = Vec::with_capacity(nt * (sites + 2));
            let mut sums = vec![0.0; nt];
            let mut firsts = vec![0.0; nt];
            let mean_n0 = t.means[i_n * nk] / t.count;
            for k in 0..nt {
                let mean_mt = t.means[im * nk + k + 1] / t.count;
                for &j in &offsets {
                    let s = t.products[(p * nt + k) * sites + idx(j)] / t.count - mean_mt * mean_n0;
                    sums[k] += s;
                    firsts[k] += j as f64 * s;
                    v.push(s);
                }
            }
            v.extend(sums);
            v.extend(firsts);
            v
        };
        let (val, se) = jackknife(acc, stat);
        let mut s = Vec::with_capacity(nt);
        let mut err = Vec::with_capacity(nt);
        for k in 0..nt {
            s.push(val[k * sites..(k + 1) * sites].to_vec());
            err.push(se[k * sites..(k + 1) * sites].to_vec());
        }
        let base = nt * sites;
        let sum = (0..nt).map(|k| (val[base + k], se[base + k])).collect();
        let first_moment = (0..nt).map(|k| (val[base + nt + k], se[base + nt + k])).collect();
        out.push(CorrelationEstimate {
            m,
            n,
            times: plan.times.clone(),
            offsets: offsets.clone(),
            s,
            stderr: err,
            sum,
            first_moment,
            trials: acc.retained,
        });
    }
    let (mv, ms) = jackknife(acc, |t| t.means.iter().map(|v| v / t.count).collect());
    let values = (0..fields.len()).map(|f| (0..nk).map(|k| (mv[f * nk + k], ms[f * nk + k])).collect()).collect();
    Ok((out, FieldMeans { fields, values }))
}

impl CorrelationEstimate {
    pub fn time_index(&self, t: f64) -> Result<usize> {
        self.times.iter().position(|&x| x == t).ok_or_else(|| Error::InvalidInput(format!("time {t} was not sampled")))
    }
}

/// Ballistically rescaled profile (ξ = j/t, t·S(j, t)) with scaled errors.
#[derive(Clone, Debug, PartialEq)]
pub struct RescaledProfile {
    pub t: f64,
    pub xi: Vec<f64>,
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl RescaledProfile {
    /// Σ value·Δξ with Δξ = 1/t, which equals Σ_j S(j, t).
    pub fn mass(&self) -> f64 {
        self.value.iter().sum::<f64>() / self.t
    }
}

pub fn rescale_ballistic(est: &CorrelationEstimate, t: f64) -> Result<RescaledProfile> {
    if !(t > 0.0) {
        return Err(Error::InvalidInput("ballistic rescaling needs t > 0".into()));
    }
    let k = est.time_index(t)?;
    Ok(RescaledProfile {
        t,
        xi: est.offsets.iter().map(|&j| j as f64 / t).collect(),
        value: est.s[k].iter().map(|s| t * s).collect(),
        stderr: est.stderr[k].iter().map(|e| t * e).collect(),
    })
}

/// CSV with columns `m,n,t,j,xi,S,tS,stderr`.
pub fn write_estimates_csv(path: &Path, estimates: &[CorrelationEstimate]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "m,n,t,j,xi,S,tS,stderr")?;
    for est in estimates {
        for (k, &t) in est.times.iter().enumerate() {
            for (i, &j) in est.offsets.iter().enumerate() {
                let s = est.s[k][i];
                let xi = if t > 0.0 { j as f64 / t } else { f64::NAN };
                writeln!(
                    f,
                    "{},{},{},{},{},{},{},{}",
                    est.m,
                    est.n,
                    fmt_f64(t),
                    j,
                    fmt_f64(xi),
                    fmt_f64(s),
                    fmt_f64(t * s),
                    fmt_f64(est.stderr[k][i])
                )?;
            }
        }
    }
    f.flush()?;
    Ok(())
}

/// Per-site GGE mean of J^{[n]} with its standard error over `samples`
/// independent states.
pub fn mean_current(
    params: &GgeParams,
    n_pairs: usize,
    n: usize,
    convention: CurrentConvention,
    samples: usize,
    base_seed: u64,
) -> Result<(f64, f64)> {
    if samples < 2 {
        return Err(Error::InvalidInput("need at least two samples".into()));
    }
    let mut vals = Vec::with_capacity(samples);
    for r in 0..samples {
        let state = sample_gge(params, n_pairs, base_seed.wrapping_add(r as u64))?;
        vals.push(mean(&local_currents(&state, n, convention)));
    }
    let mu = mean(&vals);
    let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (samples - 1) as f64;
    Ok((mu, (var / samples as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(n_pairs: usize, trials: usize, times: Vec<f64>) -> MdPlan {
        MdPlan {
            gge: GgeParams::quadratic(1.5).unwrap(),
            n_pairs,
            trials,
            times,
            fields: vec![(0, 0), (0, 1), (1, 1)],
            base_seed: 7,
            tol: 1e-9,
            convention: CurrentConvention::Lax,
            n_max: 3,
            use_fft: true,
        }
    }

    #[test]
    fn fft_and_direct_correlations_agree() {
        let x: Vec<f64> = (0..16).map(|i| ((i * 7 % 5) as f64).sin() + 1.0).collect();
        let y: Vec<f64> = (0..16).map(|i| (i as f64 * 0.3).cos()).collect();
        let a = Correlator::new(16, true).correlate(&x, &y);
        let b = Correlator::new(16, false).correlate(&x, &y);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn uniform_state_gives_constant_products() {
        let p = plan(4, 1, vec![0.0, 1.0, 2.5]);
        let runner = MdRunner::new(&p).unwrap();
        let c = 0.7;
        let part = runner.run_from_state(0, LatticeState::uniform(4, c).unwrap()).unwrap();
        for per_time in &part.products[2] {
            for v in per_time {
                assert!((v - 4.0 * c * c).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn trials_are_reproducible() {
        let p = plan(8, 2, vec![0.0, 0.5]);
        let runner = MdRunner::new(&p).unwrap();
        assert_eq!(runner.run_trial(1).unwrap(), runner.run_trial(1).unwrap());
        assert_ne!(runner.run_trial(0).unwrap(), runner.run_trial(1).unwrap());
    }

    #[test]
    fn merge_matches_sequential_accumulation() {
        let p = plan(4, 6, vec![0.0, 0.3]);
        let runner = MdRunner::new(&p).unwrap();
        let mut all = MdAccumulator::new(&p);
        let mut a = MdAccumulator::new(&p);
        let mut b = MdAccumulator::new(&p);
        for r in 0..6 {
            let part = runner.run_trial(r).unwrap();
            all.add(&part);
            if r % 2 == 0 {
                a.add(&part)
            } else {
                b.add(&part)
            }
        }
        a.merge(&b).unwrap();
        let (ea, _) = aggregate(&p, &a).unwrap();
        let (eb, _) = aggregate(&p, &all).unwrap();
        for (x, y) in ea.iter().zip(&eb) {
            for (u, v) in x.s.iter().flatten().zip(y.s.iter().flatten()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resumed_run_matches_uninterrupted() {
        let p = plan(4, 10, vec![0.0, 0.5]);
        let dir = std::env::temp_dir().join(format!("vghd-md-resume-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let cp = dir.join("cp.json");
        let _ = std::fs::remove_file(&cp);
        let full = run_plan(&p, &RunOptions { batch: 3, ..Default::default() }).unwrap();
        let opts = |stop| RunOptions {
            batch: 3,
            checkpoint: Some(&cp),
            config_key: "k".into(),
            stop_after: stop,
            progress: None,
        };
        let first = run_plan(&p, &opts(Some(5))).unwrap();
        assert!(!first.complete);
        let second = run_plan(&p, &opts(None)).unwrap();
        assert!(second.complete);
        assert_eq!(second.resumed_from, 5);
        assert_eq!(second.accumulator, full.accumulator);
        let wrong = RunOptions { config_key: "other".into(), ..opts(None) };
        assert!(matches!(run_plan(&p, &wrong), Err(Error::ResumeMismatch { .. })));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn rejects_bad_plans() {
        assert!(plan(1, 1, vec![0.0]).validate().is_err());
        assert!(plan(4, 1, vec![1.0, 0.5]).validate().is_err());
        let mut p = plan(4, 1, vec![0.0]);
        p.fields = vec![(4, 0)];
        assert!(p.validate().is_err());
    }

    #[test]
    fn rescaling_preserves_mass() {
        let p = plan(4, 3, vec![0.0, 2.0]);
        let runner = MdRunner::new(&p).unwrap();
        let mut acc = MdAccumulator::new(&p);
        for r in 0..3 {
            acc.add(&runner.run_trial(r).unwrap());
        }
        let (est, _) = aggregate(&p, &acc).unwrap();
        let prof = rescale_ballistic(&est[0], 2.0).unwrap();
        assert_eq!(prof.xi.len(), est[0].offsets.len());
        assert!((prof.mass() - est[0].sum[1].0).abs() < 1e-12);
        assert!(rescale_ballistic(&est[0], 1.0).is_err());
    }
}
