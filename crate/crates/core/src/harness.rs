//! Monte-Carlo scaling studies, compression studies and slope regression.
//!
//! Scaling scenarios:
//!
//! * `thm1`: rank-constrained least squares, sweep over `d1` with `d`, `d2`
//!   fixed; expected MSE `∝ 1/d1`.
//! * `thm2`: Frobenius projection onto `Ψ(X̌)` under bounded noise, sweep
//!   over `d1 = d2 = d`; expected MSE `∝ d^{-1/2}`.
//! * `thm3`: censored MLE under Gaussian noise and ReLU, same sweep;
//!   expected MSE `∝ √(log d)/√d`.
//!
//! Trial `t` at dimension `n` draws from stream `(n << 32) | t` of the base
//! seed, so every record can be regenerated on its own.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compress::{compress_model, truncate_model, CompressParams, CompressionMethod};
use crate::error::{invalid, Result};
use crate::feasible::{PsiParams, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::recover::lemmas::{verify_scalar_lemmas, LemmaReport};
use crate::recover::{
    solve_constrained, solve_mle_with, solve_rank_constrained, CensoredObservation, MleOptions,
};
use crate::synth::{gen_approx_rank_instance, gen_exact_rank_instance, gen_mlp, NoiseKind, Plant, SeededRng};

pub const BOOTSTRAP_RESAMPLES: usize = 1000;
/// Allowed ratio of censored-MLE to uncensored-projection median MSE.
pub const SANITY_FACTOR: f64 = 4.0;
pub const CSV_HEADER: &str = "scenario,dimension,trial,seed,mse,converged";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Thm1,
    Thm2,
    Thm3,
    Compress,
    Verify,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Thm1 => "thm1",
            Scenario::Thm2 => "thm2",
            Scenario::Thm3 => "thm3",
            Scenario::Compress => "compress",
            Scenario::Verify => "verify",
        }
    }

    pub fn is_scaling(self) -> bool {
        matches!(self, Scenario::Thm1 | Scenario::Thm2 | Scenario::Thm3)
    }
}

impl std::str::FromStr for Scenario {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| invalid(format!("unknown scenario {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// Swept dimension: `d1` for thm1, `d1 = d = d2` for thm2/thm3.
    pub sweep: Vec<usize>,
    pub d: usize,
    pub d2: usize,
    pub r: usize,
    pub sigma: f64,
    pub beta: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub trials: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Dykstra tolerance and sweep cap.
    pub tol: f64,
    pub max_iter: usize,
    pub mle_tol: f64,
    pub mle_max_iter: usize,
    /// Also solve the uncensored problem in thm3 for the sanity band.
    pub sanity_band: bool,
    // compress study
    pub layer_dims: Vec<usize>,
    pub ranks: Vec<usize>,
    pub calib: usize,
    pub noise: f64,
    // verify
    pub grid: usize,
}

impl ScenarioConfig {
    /// Default settings for each scenario.
    pub fn preset(scenario: Scenario) -> Self {
        let mut cfg = Self {
            scenario,
            sweep: vec![32, 64, 128, 256],
            d: 16,
            d2: 16,
            r: 2,
            sigma: 0.5,
            beta: 0.5,
            alpha: 1.0,
            epsilon: 0.0,
            trials: 20,
            seed: 7,
            out: None,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            mle_tol: 1e-9,
            mle_max_iter: 500,
            sanity_band: true,
            layer_dims: vec![32, 32, 32, 16],
            ranks: vec![4, 4, 4],
            calib: 256,
            noise: 0.1,
            grid: 100_000,
        };
        match scenario {
            Scenario::Thm1 => cfg.sweep = vec![64, 128, 256, 512],
            Scenario::Thm3 => cfg.sigma = 0.25,
            Scenario::Verify => {
                cfg.alpha = 2.0;
                cfg.sigma = 1.0;
            }
            Scenario::Thm2 | Scenario::Compress => {}
        }
        cfg
    }

    /// Preset for `overrides["scenario"]` with the given JSON fields replaced.
    pub fn from_json(text: &str) -> Result<Self> {
        let overrides: serde_json::Value = serde_json::from_str(text)?;
        let scenario = overrides
            .get("scenario")
            .ok_or_else(|| invalid("config needs a \"scenario\" field"))?;
        let scenario: Scenario = serde_json::from_value(scenario.clone())?;
        let mut merged = serde_json::to_value(Self::preset(scenario))?;
        let serde_json::Value::Object(fields) = overrides else {
            return Err(invalid("config must be a JSON object"));
        };
        for (k, v) in fields {
            merged[k] = v;
        }
        let cfg: Self = serde_json::from_value(merged)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        match self.scenario {
            Scenario::Thm1 | Scenario::Thm2 | Scenario::Thm3 => {
                if self.sweep.len() < 3 {
                    return Err(invalid("a slope fit needs at least 3 sweep dimensions"));
                }
                if self.sweep.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(invalid(format!("sweep must be strictly increasing, got {:?}", self.sweep)));
                }
                if self.sweep[self.sweep.len() - 1] > u32::MAX as usize {
                    return Err(invalid("sweep dimension too large"));
                }
                let smallest = self.sweep[0];
                let ok = match self.scenario {
                    Scenario::Thm1 => smallest >= self.d && self.d >= self.r && self.d2 >= self.r,
                    _ => smallest >= self.r,
                };
                if self.r == 0 || !ok {
                    return Err(invalid(format!(
                        "dimensions incompatible with r = {}: sweep {:?}, d = {}, d2 = {}",
                        self.r, self.sweep, self.d, self.d2
                    )));
                }
            }
            Scenario::Compress => {
                if self.layer_dims.len() < 2 || self.ranks.len() + 1 != self.layer_dims.len() {
                    return Err(invalid(format!(
                        "{} ranks do not fit layer dims {:?}",
                        self.ranks.len(),
                        self.layer_dims
                    )));
                }
                if self.calib == 0 {
                    return Err(invalid("calibration size must be positive"));
                }
            }
            Scenario::Verify => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub scenario: Scenario,
    pub dimension: usize,
    pub trial: usize,
    /// Base seed; the trial's stream id is `(dimension << 32) | trial`.
    pub seed: u64,
    pub mse: f64,
    pub converged: bool,
}

impl TrialRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{:e},{}",
            self.scenario.name(),
            self.dimension,
            self.trial,
            self.seed,
            self.mse,
            self.converged
        )
    }
}

pub fn stream_id(dimension: usize, trial: usize) -> u64 {
    ((dimension as u64) << 32) | trial as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DimensionSummary {
    pub dimension: usize,
    /// Converged trials entering the statistics.
    pub trials: usize,
    pub mean_mse: f64,
    pub median_mse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    Median,
    Mean,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub aggregate: Aggregate,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            aggregate: Aggregate::Median,
            resamples: BOOTSTRAP_RESAMPLES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% percentile bootstrap interval over within-dimension trial resampling.
    pub ci: (f64, f64),
    pub excluded_nonconverged: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SanityPoint {
    pub dimension: usize,
    pub mle_median: f64,
    pub uncensored_median: f64,
    pub ratio: f64,
}

/// Engineering check on thm3, not a theoretical guarantee: the censored MLE
/// should stay within a constant factor of the uncensored projection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SanityBand {
    pub factor: f64,
    pub points: Vec<SanityPoint>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub scenario: Scenario,
    pub records: Vec<TrialRecord>,
    pub summaries: Vec<DimensionSummary>,
    /// Fitted on per-dimension medians.
    pub slope: f64,
    pub slope_ci: (f64, f64),
    /// Same regression on per-dimension means.
    pub slope_mean: f64,
    pub excluded_nonconverged: usize,
    pub warnings: Vec<String>,
    pub sanity: Option<SanityBand>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn aggregate(values: &[f64], how: Aggregate) -> f64 {
    match how {
        Aggregate::Mean => values.iter().sum::<f64>() / values.len() as f64,
        Aggregate::Median => median(&mut values.to_vec()),
    }
}

/// Least squares `y = a + b·x`, returns `(b, a)`.
fn ols(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn group(records: &[TrialRecord]) -> (BTreeMap<usize, Vec<f64>>, usize) {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut excluded = 0;
    for rec in records {
        if rec.converged {
            groups.entry(rec.dimension).or_default().push(rec.mse);
        } else {
            excluded += 1;
        }
    }
    (groups, excluded)
}

/// Log-log slope of per-dimension median MSE against dimension.
pub fn fit_slope(records: &[TrialRecord]) -> Result<SlopeFit> {
    fit_slope_with(records, &FitOptions::default())
}

pub fn fit_slope_with(records: &[TrialRecord], opts: &FitOptions) -> Result<SlopeFit> {
    let (groups, excluded_nonconverged) = group(records);
    let mut warnings = Vec::new();
    if excluded_nonconverged > 0 {
        warnings.push(format!("{excluded_nonconverged} non-converged trials excluded"));
    }
    let mut points = Vec::new();
    for (&dim, values) in &groups {
        let agg = aggregate(values, opts.aggregate);
        if agg > 0.0 && agg.is_finite() {
            points.push(((dim as f64).ln(), agg.ln()));
        } else {
            warnings.push(format!("dimension {dim} excluded: aggregate MSE {agg} has no logarithm"));
        }
    }
    if points.len() < 3 {
        return Err(invalid(format!(
            "slope fit needs at least 3 usable dimensions, got {}",
            points.len()
        )));
    }
    let (slope, intercept) = ols(&points);

    let mut rng = SeededRng::new(opts.seed, u64::MAX);
    let mut slopes = Vec::with_capacity(opts.resamples);
    let mut resample = Vec::new();
    for _ in 0..opts.resamples {
        let mut pts = Vec::with_capacity(groups.len());
        for (&dim, values) in &groups {
            resample.clear();
            resample.extend((0..values.len()).map(|_| values[rng.random_range(0..values.len())]));
            let agg = aggregate(&resample, opts.aggregate);
            if agg > 0.0 && agg.is_finite() {
                pts.push(((dim as f64).ln(), agg.ln()));
            }
        }
        if pts.len() >= 3 {
            slopes.push(ols(&pts).0);
        }
    }
    let ci = if slopes.is_empty() {
        (slope, slope)
    } else {
        slopes.sort_by(f64::total_cmp);
        (percentile(&slopes, 0.025), percentile(&slopes, 0.975))
    };
    Ok(SlopeFit {
        slope,
        intercept,
        ci,
        excluded_nonconverged,
        warnings,
    })
}

pub fn summarize(records: &[TrialRecord]) -> Vec<DimensionSummary> {
    let (groups, _) = group(records);
    groups
        .into_iter()
        .map(|(dimension, values)| DimensionSummary {
            dimension,
            trials: values.len(),
            mean_mse: aggregate(&values, Aggregate::Mean),
            median_mse: aggregate(&values, Aggregate::Median),
        })
        .collect()
}

struct TrialOutcome {
    record: TrialRecord,
    /// Uncensored projection MSE on the same instance (thm3 only).
    baseline: Option<f64>,
}

fn run_trial(cfg: &ScenarioConfig, dimension: usize, trial: usize) -> Result<TrialOutcome> {
    let mut rng = SeededRng::new(cfg.seed, stream_id(dimension, trial));
    let (mse, converged, baseline) = match cfg.scenario {
        Scenario::Thm1 => {
            let inst = gen_exact_rank_instance(dimension, cfg.d, cfg.d2, cfg.r, cfg.sigma, cfg.epsilon, &mut rng)?;
            let res = solve_rank_constrained(&inst.x_check, &inst.observation, cfg.r)?;
            (inst.mse(&res.m_hat), true, None)
        }
        Scenario::Thm2 => {
            let noise = NoiseKind::BoundedUniform { beta: cfg.beta };
            let inst = gen_approx_rank_instance(dimension, dimension, dimension, cfg.r, cfg.alpha, noise, false, &mut rng)?;
            let p = PsiParams::new(inst.x_check.clone(), cfg.alpha, cfg.r)?;
            let res = solve_constrained(&inst.observation, &p, cfg.tol, cfg.max_iter)?;
            (inst.mse(&res.m_hat), res.diagnostics.converged, None)
        }
        Scenario::Thm3 => {
            let noise = NoiseKind::Gaussian { sigma: cfg.sigma };
            let inst = gen_approx_rank_instance(dimension, dimension, dimension, cfg.r, cfg.alpha, noise, true, &mut rng)?;
            let p = PsiParams::new(inst.x_check.clone(), cfg.alpha, cfg.r)?;
            let obs = CensoredObservation::new(inst.observation.clone(), cfg.sigma)?;
            let opts = MleOptions {
                tol: cfg.mle_tol,
                max_iter: cfg.mle_max_iter,
                projection_tol: cfg.tol,
                projection_max_iter: cfg.max_iter,
            };
            let res = solve_mle_with(&obs, &p, &opts)?;
            let baseline = if cfg.sanity_band {
                let uncensored = &inst.y + &inst.g;
                Some(inst.mse(&solve_constrained(&uncensored, &p, cfg.tol, cfg.max_iter)?.m_hat))
            } else {
                None
            };
            (inst.mse(&res.m_hat), res.converged, baseline)
        }
        Scenario::Compress | Scenario::Verify => {
            return Err(invalid(format!("{} is not a scaling scenario", cfg.scenario.name())))
        }
    };
    Ok(TrialOutcome {
        record: TrialRecord {
            scenario: cfg.scenario,
            dimension,
            trial,
            seed: cfg.seed,
            mse,
            converged,
        },
        baseline,
    })
}

/// Runs every `(dimension, trial)` of a scaling scenario. With `cfg.out`
/// set, the CSV is written one dimension at a time, rows in trial order.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScalingReport> {
    cfg.validate()?;
    if !cfg.scenario.is_scaling() {
        return Err(invalid(format!("{} is not a scaling scenario", cfg.scenario.name())));
    }
    let mut csv = match &cfg.out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            writeln!(w, "{CSV_HEADER}")?;
            Some(w)
        }
        None => None,
    };
    let mut records = Vec::with_capacity(cfg.sweep.len() * cfg.trials);
    let mut sanity_points = Vec::new();
    for &dimension in &cfg.sweep {
        let outcomes = (0..cfg.trials)
            .into_par_iter()
            .map(|trial| run_trial(cfg, dimension, trial))
            .collect::<Result<Vec<_>>>()?;
        if let Some(w) = csv.as_mut() {
            for o in &outcomes {
                writeln!(w, "{}", o.record.csv_line())?;
            }
            w.flush()?;
        }
        let baselines: Vec<f64> = outcomes.iter().filter_map(|o| o.baseline).collect();
        if !baselines.is_empty() {
            let mut mle: Vec<f64> = outcomes.iter().map(|o| o.record.mse).collect();
            let mle_median = median(&mut mle);
            let uncensored_median = median(&mut baselines.clone());
            sanity_points.push(SanityPoint {
                dimension,
                mle_median,
                uncensored_median,
                ratio: mle_median / uncensored_median,
            });
        }
        records.extend(outcomes.into_iter().map(|o| o.record));
    }

    let fit = fit_slope_with(
        &records,
        &FitOptions {
            seed: cfg.seed,
            ..FitOptions::default()
        },
    )?;
    let mean_fit = fit_slope_with(
        &records,
        &FitOptions {
            aggregate: Aggregate::Mean,
            resamples: 0,
            seed: cfg.seed,
        },
    )?;
    let sanity = (!sanity_points.is_empty()).then(|| SanityBand {
        factor: SANITY_FACTOR,
        passed: sanity_points.iter().all(|p| p.ratio <= SANITY_FACTOR),
        points: sanity_points,
    });
    Ok(ScalingReport {
        scenario: cfg.scenario,
        summaries: summarize(&records),
        records,
        slope: fit.slope,
        slope_ci: fit.ci,
        slope_mean: mean_fit.slope,
        excluded_nonconverged: fit.excluded_nonconverged,
        warnings: fit.warnings,
        sanity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompressTrial {
    pub trial: usize,
    /// Output MSE against the uncompressed model, layer-wise data-driven compression.
    pub data_driven_mse: f64,
    /// Same for truncating each weight's SVD.
    pub agnostic_mse: f64,
    pub compression_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompressionStudy {
    pub trials: Vec<CompressTrial>,
    /// Fraction of trials where the data-driven model is strictly better.
    pub win_rate: f64,
}

/// Planted MLPs with full-rank noise of relative size `cfg.noise`: the
/// closed-form compressor against per-layer weight truncation.
pub fn run_compress_study(cfg: &ScenarioConfig) -> Result<CompressionStudy> {
    cfg.validate()?;
    let plant = Plant {
        ranks: cfg.ranks.clone(),
        noise: cfg.noise,
    };
    let trials = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| -> Result<CompressTrial> {
            let model = gen_mlp(&cfg.layer_dims, &mut SeededRng::new(cfg.seed, trial as u64), Some(&plant))?;
            let x0 = SeededRng::new(cfg.seed, (1 << 63) | trial as u64).gaussian(cfg.calib, cfg.layer_dims[0], 1.0);
            let (_, report) = compress_model(
                &model,
                &x0,
                &cfg.ranks,
                CompressionMethod::ClosedForm,
                &CompressParams::default(),
            )?;
            let truncated = truncate_model(&model, &cfg.ranks)?;
            let out = model.forward(&x0)?;
            Ok(CompressTrial {
                trial,
                data_driven_mse: report.output_mse,
                agnostic_mse: out.mse(&truncated.forward(&x0)?),
                compression_ratio: report.compression_ratio,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(path) = &cfg.out {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "scenario,trial,seed,data_driven_mse,agnostic_mse")?;
        for t in &trials {
            writeln!(w, "compress,{},{},{:e},{:e}", t.trial, cfg.seed, t.data_driven_mse, t.agnostic_mse)?;
        }
        w.flush()?;
    }
    let wins = trials.iter().filter(|t| t.data_driven_mse < t.agnostic_mse).count();
    Ok(CompressionStudy {
        win_rate: wins as f64 / trials.len() as f64,
        trials,
    })
}

pub fn run_verify(cfg: &ScenarioConfig) -> Result<LemmaReport> {
    verify_scalar_lemmas(cfg.alpha, cfg.sigma, cfg.grid)
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Outcome {
    Scaling(ScalingReport),
    Compression(CompressionStudy),
    Lemmas(LemmaReport),
}

/// Dispatches on `cfg.scenario`.
pub fn run(cfg: &ScenarioConfig) -> Result<Outcome> {
    Ok(match cfg.scenario {
        Scenario::Thm1 | Scenario::Thm2 | Scenario::Thm3 => Outcome::Scaling(run_scenario(cfg)?),
        Scenario::Compress => Outcome::Compression(run_compress_study(cfg)?),
        Scenario::Verify => Outcome::Lemmas(run_verify(cfg)?),
    })
}
