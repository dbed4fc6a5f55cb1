use std::path::PathBuf;

use anyhow::{Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use we_core::coarse::{build_coarse_exact, build_coarse_mc, CoarseModel};
use we_core::diagnostics::{check_doob_identity, check_unbiasedness, CheckReport, GSequence};
use we_core::hill::{
    direct_mfpt, hitting_probability, source_sink_kernel, we_hill_mfpt, we_stationary_estimate, SourceSinkSpec,
    StationaryEstimate, StationaryWeConfig,
};
use we_core::rng::derive_seed;
use we_core::stats::summarize;
use we_core::we::{stationary_init_ensemble, KernelSampler};
use we_core::{Distribution, Ensemble, Observable, Purpose, RngStream, TransitionMatrix, WeSampler};

use crate::config::{ConfigError, ExperimentConfig, Mode};
use crate::fields;
use crate::output::CsvOut;

/// Chains up to this size get exact Hill oracles.
pub const ORACLE_LIMIT: usize = 10_000;

/// Replicates per parallel batch in `run`.
const BATCH: usize = 1024;

/// Coarse model for horizon `n` with the configured builder.
pub fn coarse_model(cfg: &ExperimentConfig, n: usize) -> Result<CoarseModel> {
    let (p, u) = match cfg.coarse {
        crate::config::CoarseBuilder::Exact => build_coarse_exact(&cfg.kernel, &cfg.bins, &cfg.zeta, &cfg.observable)?,
        crate::config::CoarseBuilder::MonteCarlo { budget } => build_coarse_mc(
            &KernelSampler::new(&cfg.kernel),
            &cfg.bins,
            &cfg.zeta,
            &cfg.observable,
            budget,
            RngStream::new(cfg.seed, 0, 0, Purpose::CoarseSampling),
        )?,
    };
    Ok(CoarseModel::new(p, u, n.max(1))?)
}

/// The μ-preconditioned initial ensemble shared by every mode.
pub fn initial_ensemble(cfg: &ExperimentConfig, coarse: &CoarseModel) -> Result<Ensemble> {
    Ok(stationary_init_ensemble(&coarse.stationary, &cfg.bins, cfg.total)?)
}

/// Seed for the replicates of one (mode, horizon) cell.
pub fn cell_seed(cfg: &ExperimentConfig, label: &str, n: usize) -> u64 {
    derive_seed(cfg.seed, label, n as u64)
}

fn sampler<'a>(cfg: &'a ExperimentConfig, mode: Mode, coarse: &'a CoarseModel, n: usize) -> Result<WeSampler<'a>> {
    let table = (n > 0).then_some(&coarse.variances);
    let policy = if n == 0 {
        we_core::SelectionPolicy::Naive
    } else {
        cfg.policy(mode)
    };
    Ok(WeSampler::new(&cfg.kernel, &cfg.bins, policy, table)?)
}

pub fn cmd_coarse(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let horizon = *cfg.horizons.last().expect("validated nonempty");
    let coarse = coarse_model(cfg, horizon)?;
    match coarse.transition.second_eigenvalue_modulus() {
        Ok(l2) => info!(
            "coarse model: {} bins, second eigenvalue modulus {l2:.8}, relaxation scale {:.1} steps",
            coarse.num_bins(),
            if l2 > 0.0 && l2 < 1.0 { -1.0 / l2.ln() } else { f64::NAN }
        ),
        Err(e) => warn!("second eigenvalue unavailable: {e}"),
    }
    let hash = cfg.hash();
    let mut files = Vec::new();

    let r = coarse.num_bins();
    let mut out = CsvOut::create(&cfg.out, "P.csv", &hash, &["i", "j", "value"])?;
    for i in 0..r {
        for j in 0..r {
            out.row(&fields![i + 1, j + 1, coarse.transition.get(i, j)])?;
        }
    }
    files.push(out.finish()?);
    for (name, values) in [
        ("u.csv", coarse.observable.values()),
        ("mu.csv", coarse.stationary.values()),
    ] {
        let mut out = CsvOut::create(&cfg.out, name, &hash, &["i", "value"])?;
        for (i, v) in values.iter().enumerate() {
            out.row(&fields![i + 1, v])?;
        }
        files.push(out.finish()?);
    }
    let mut out = CsvOut::create(&cfg.out, "v.csv", &hash, &["p", "bin", "value"])?;
    for (p, row) in coarse.variances.rows().iter().enumerate() {
        for (bin, v) in row.iter().enumerate() {
            out.row(&fields![p, bin + 1, v])?;
        }
    }
    files.push(out.finish()?);
    info!("minimum v before clamping: {:e}", coarse.variances.min_raw());
    Ok(files)
}

struct ReplicateSummary {
    eta: f64,
    total_weight: f64,
    num_particles: usize,
    extinct: bool,
}

/// Per-mode histogram at the final horizon: averages of per-replicate
/// count fractions and weight fractions.
struct Histogram {
    counts: Vec<f64>,
    weights: Vec<f64>,
    reps: usize,
}

pub fn cmd_run(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let hash = cfg.hash();
    let (pi, pi_f) = stationary_reference(&cfg.kernel, &cfg.observable)?;
    let size = cfg.kernel.size();
    let last = *cfg.horizons.last().expect("validated nonempty");
    let mut files = Vec::new();

    let mut summary = CsvOut::create(
        &cfg.out,
        "summary.csv",
        &hash,
        &[
            "mode",
            "n",
            "reps",
            "mean",
            "std",
            "std_err",
            "exact",
            "stationary",
            "extinct",
            "warning",
        ],
    )?;
    let mut vprof = CsvOut::create(&cfg.out, "v_profile.csv", &hash, &["n", "p", "bin", "v"])?;
    let mut histograms: Vec<(Mode, Histogram)> = Vec::new();

    for &n in &cfg.horizons {
        let coarse = coarse_model(cfg, n)?;
        let init = initial_ensemble(cfg, &coarse)?;
        let exact = exact_reference(&cfg.kernel, &cfg.observable, &init, n)?;
        if n > 0 {
            for p in [0, n - 1] {
                for (bin, v) in coarse.variances.row(p).iter().enumerate() {
                    vprof.row(&fields![n, p, bin + 1, v])?;
                }
                if n == 1 {
                    break;
                }
            }
        }
        for &mode in &cfg.modes {
            let reps = cfg.reps[&mode];
            let seed = cell_seed(cfg, mode.name(), n);
            let s = sampler(cfg, mode, &coarse, n)?;
            let mut rows = Vec::with_capacity(reps);
            let mut hist = Histogram {
                counts: vec![0.0; size],
                weights: vec![0.0; size],
                reps: 0,
            };
            for start in (0..reps).step_by(BATCH) {
                let end = (start + BATCH).min(reps);
                let batch = (start as u64..end as u64)
                    .into_par_iter()
                    .map(|r| {
                        let rec = s.run(&init, &cfg.observable, n, seed, r)?;
                        let e = &rec.final_ensemble;
                        let mut counts = vec![0.0; size];
                        let mut weights = vec![0.0; size];
                        if n == last && !e.is_empty() {
                            let tw = e.total_weight();
                            let inv = 1.0 / e.len() as f64;
                            for q in &e.particles {
                                counts[q.state] += inv;
                                weights[q.state] += q.weight / tw;
                            }
                        }
                        Ok((
                            ReplicateSummary {
                                eta: rec.final_estimate,
                                total_weight: e.total_weight(),
                                num_particles: e.len(),
                                extinct: rec.extinct(),
                            },
                            counts,
                            weights,
                        ))
                    })
                    .collect::<we_core::Result<Vec<_>>>()?;
                for (row, counts, weights) in batch {
                    if n == last && row.num_particles > 0 {
                        hist.reps += 1;
                        for x in 0..size {
                            hist.counts[x] += counts[x];
                            hist.weights[x] += weights[x];
                        }
                    }
                    rows.push(row);
                }
            }

            let mut out = CsvOut::create(
                &cfg.out,
                &format!("runs_{}_n{n}.csv", mode.name()),
                &hash,
                &["replicate", "n", "eta_f", "total_weight", "num_particles", "extinct"],
            )?;
            for (r, row) in rows.iter().enumerate() {
                out.row(&fields![
                    r,
                    n,
                    row.eta,
                    row.total_weight,
                    row.num_particles,
                    u8::from(row.extinct)
                ])?;
            }
            files.push(out.finish()?);

            let etas: Vec<f64> = rows.iter().map(|r| r.eta).collect();
            let st = summarize(&etas);
            let extinct = rows.iter().filter(|r| r.extinct).count();
            let warning = if extinct * 100 > reps {
                warn!("{} n={n}: {extinct} of {reps} replicates went extinct", mode.name());
                "extinction_above_1pct"
            } else {
                ""
            };
            summary.row(&fields![
                mode.name(),
                n,
                reps,
                st.mean,
                st.std,
                st.std_err,
                exact,
                pi_f,
                extinct,
                warning
            ])?;
            info!(
                "{} n={n}: mean {:.6e} ± {:.2e} (exact {exact:.6e}, stationary {pi_f:.6e})",
                mode.name(),
                st.mean,
                st.std_err
            );
            if n == last {
                histograms.push((mode, hist));
            }
        }
    }
    files.push(summary.finish()?);
    files.push(vprof.finish()?);

    let f_total: f64 = cfg.observable.values().iter().sum();
    for (mode, hist) in histograms {
        let mut out = CsvOut::create(
            &cfg.out,
            &format!("histogram_{}.csv", mode.name()),
            &hash,
            &["state", "count_fraction", "weight_fraction", "f_bar", "pi"],
        )?;
        let k = hist.reps.max(1) as f64;
        for x in 0..size {
            let fbar = if f_total != 0.0 {
                cfg.observable.get(x) / f_total
            } else {
                0.0
            };
            out.row(&fields![
                x + 1,
                hist.counts[x] / k,
                hist.weights[x] / k,
                fbar,
                pi.values()[x]
            ])?;
        }
        files.push(out.finish()?);
    }
    Ok(files)
}

/// Runs the unbiasedness and Doob checks; returns the written file and the
/// number of failed checks.
pub fn cmd_diagnose(cfg: &ExperimentConfig) -> Result<(PathBuf, usize)> {
    let n = cfg.diagnose_n;
    let coarse = coarse_model(cfg, n)?;
    let init = initial_ensemble(cfg, &coarse)?;
    let mut reports: Vec<CheckReport> = Vec::new();
    for &mode in &cfg.modes {
        let s = sampler(cfg, mode, &coarse, n)?.with_weight_scale(cfg.corrupt_weights);
        let seed = cell_seed(cfg, &format!("unbiasedness:{}", mode.name()), n);
        reports.push(check_unbiasedness(
            &s,
            &cfg.kernel,
            &init,
            &cfg.observable,
            n,
            cfg.diagnose_reps,
            seed,
        )?);
        let seed = cell_seed(cfg, &format!("doob:{}", mode.name()), n);
        reports.push(check_doob_identity(
            &s,
            &cfg.kernel,
            &init,
            &cfg.observable,
            n,
            cfg.diagnose_reps,
            seed,
        )?);
    }
    let mut out = CsvOut::create(
        &cfg.out,
        "diagnostics.csv",
        &cfg.hash(),
        &["check", "n", "policy", "value", "exact_or_rhs", "std_err", "z", "pass"],
    )?;
    let mut failed = 0;
    for r in &reports {
        if !r.pass {
            failed += 1;
            warn!("{} ({}) failed: z = {:.2}", r.check, r.policy, r.z);
        }
        if r.extinct_replicates > 0 {
            warn!(
                "{} ({}): {} extinct replicates",
                r.check, r.policy, r.extinct_replicates
            );
        }
        out.row(&fields![
            r.check,
            r.n,
            r.policy,
            r.value,
            r.exact_or_rhs,
            r.std_err,
            r.z,
            r.pass
        ])?;
    }
    Ok((out.finish()?, failed))
}

/// Ratio of replicate means with a delta-method standard error that
/// accounts for the pairing of replicates.
fn paired_ratio(num: &StationaryEstimate, den: &StationaryEstimate) -> (f64, f64) {
    let (mb, mu) = (num.eta.mean, den.eta.mean);
    let ratio = mb / mu;
    let count = num.values.len().min(den.values.len());
    if count < 2 {
        return (ratio, f64::NAN);
    }
    let resid: Vec<f64> = num.values[..count]
        .iter()
        .zip(&den.values[..count])
        .map(|(b, u)| (b - ratio * u) / mu)
        .collect();
    (ratio, summarize(&resid).std_err)
}

pub fn cmd_hill(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let hill = cfg
        .hill
        .as_ref()
        .ok_or_else(|| ConfigError("hill requires hill.sink or hill.a and hill.b".into()))?;
    let spec = SourceSinkSpec::new(cfg.kernel.clone(), hill.sink.clone(), hill.source.clone())?;
    let wcfg = StationaryWeConfig {
        bins: hill.bins.clone(),
        zeta: Some(cfg.zeta.clone()),
        total: cfg.total as f64,
        floor: cfg.floor,
        horizon: hill.horizon,
        reps: hill.reps,
        seed: cell_seed(cfg, "hill", hill.horizon),
    };
    cfg.policy(Mode::Adaptive)
        .validate(hill.bins.num_bins())
        .map_err(|e| ConfigError(format!("hill: {e}")))?;
    if cfg.total < hill.bins.num_bins() {
        return Err(ConfigError(format!(
            "hill: N = {} is smaller than the number of bins {}",
            cfg.total,
            hill.bins.num_bins()
        ))
        .into());
    }

    let small = spec.size() <= ORACLE_LIMIT;
    let (pi, mfpt_oracle) = if small {
        let k = source_sink_kernel(&spec)?;
        (Some(k.stationary()?), Some(direct_mfpt(&spec)?))
    } else {
        (None, None)
    };

    let est = we_hill_mfpt(&spec, &wcfg)?;
    let hash = cfg.hash();
    let mut out = CsvOut::create(
        &cfg.out,
        "hill.csv",
        &hash,
        &[
            "quantity",
            "horizon",
            "reps",
            "estimate",
            "std_err",
            "oracle",
            "z",
            "invalid_replicates",
            "extinct_replicates",
        ],
    )?;
    let z = |e: f64, se: f64, o: Option<f64>| o.map_or(f64::NAN, |o| (e - o) / se);
    let sm = &est.sink_mass;
    let mass_oracle = pi.as_ref().map(|p| p.mass_of(&spec.sink));
    out.row(&fields![
        "sink_mass",
        hill.horizon,
        hill.reps,
        sm.eta.mean,
        sm.eta.std_err,
        opt(mass_oracle),
        z(sm.eta.mean, sm.eta.std_err, mass_oracle),
        sm.invalid_replicates,
        sm.extinct_replicates
    ])?;
    out.row(&fields![
        "mfpt",
        hill.horizon,
        hill.reps,
        est.mfpt,
        est.mfpt_std_err,
        opt(mfpt_oracle),
        z(est.mfpt, est.mfpt_std_err, mfpt_oracle),
        sm.invalid_replicates,
        sm.extinct_replicates
    ])?;
    info!(
        "mean first-passage time {:.6e} ± {:.2e}{}",
        est.mfpt,
        est.mfpt_std_err,
        mfpt_oracle.map_or(String::new(), |o| format!(" (direct solve {o:.6e})"))
    );

    if let Some((a, b)) = &hill.split {
        let k = source_sink_kernel(&spec)?;
        let fb = Observable::indicator(spec.size(), b)?;
        let fu = Observable::indicator(spec.size(), &spec.sink)?;
        let target = we_stationary_estimate(&k, &fb, &wcfg)?;
        let union = we_stationary_estimate(&k, &fu, &wcfg)?;
        let (p, se) = paired_ratio(&target, &union);
        let oracle = match &pi {
            Some(pi) => Some(hitting_probability(pi, a, b)?),
            None => None,
        };
        out.row(&fields![
            "hitting_probability",
            hill.horizon,
            hill.reps,
            p,
            se,
            opt(oracle),
            z(p, se, oracle),
            target.invalid_replicates.max(union.invalid_replicates),
            target.extinct_replicates + union.extinct_replicates
        ])?;
        info!("hitting probability {p:.6} ± {se:.2e}");
    }
    let mut files = vec![out.finish()?];

    let mut reps = CsvOut::create(
        &cfg.out,
        "hill_replicates.csv",
        &hash,
        &["replicate", "eta_f", "reciprocal"],
    )?;
    for (r, v) in sm.values.iter().enumerate() {
        let recip = if *v > 0.0 { (1.0 / v).to_string() } else { String::new() };
        reps.row(&fields![r, v, recip])?;
    }
    files.push(reps.finish()?);
    if sm.invalid_replicates > 0 {
        warn!(
            "{} replicates had η_n(𝟙_F) ≤ 0 and were excluded from the reciprocal summary",
            sm.invalid_replicates
        );
    }
    Ok(files)
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

/// Exact `η_0 K^n f` for the shared initial ensemble.
pub fn exact_reference(k: &TransitionMatrix, f: &Observable, init: &Ensemble, n: usize) -> Result<f64> {
    Ok(GSequence::new(k, f, n)
        .context("building exact reference")?
        .martingale_value(init, 0))
}

/// Exact `π(f)`.
pub fn stationary_reference(k: &TransitionMatrix, f: &Observable) -> Result<(Distribution, f64)> {
    let pi = k.stationary()?;
    let v = pi.expect(f)?;
    Ok((pi, v))
}
