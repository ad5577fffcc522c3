//! Paired base/regulation runs and the two studies built on them.

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, Discrete};

use super::{
    find_peak_hour, scale_regulation_signal, simulate, test_step_times, Case, CaseSpec, EngineError, EvMode, Scenario,
    TrialResult,
};
use crate::rng::{derive_seed, Domain};

/// Base and regulation cases sharing one trial seed.
#[derive(Debug, Clone, Serialize)]
pub struct Pair {
    pub base: TrialResult,
    pub regulation: TrialResult,
}

/// Configured test-hour start, or the peak hour of an uncontrolled scan.
pub fn find_test_hour(scenario: &Scenario) -> Result<f64, EngineError> {
    match scenario.config.test_hour_start_s {
        Some(t) => Ok(t),
        None => find_peak_hour(&scenario.feeder, &scenario.weather, scenario.config.seed),
    }
}

/// Run the base case, scale the signal to its hour-mean AC power, then run
/// the regulation case with the same seed.
pub fn run_pair(scenario: &Scenario, trial_seed: u64, test_hour_start_s: f64) -> Result<Pair, EngineError> {
    let signal = scenario
        .signal
        .as_ref()
        .ok_or_else(|| EngineError::Config("regulation_signal is required for regulation cases".into()))?;
    let base = simulate(
        scenario,
        &CaseSpec { case: Case::Base, trial_seed, test_hour_start_s, baseline_kw: None, desired_kw: None },
    )?;
    let baseline = base.mean_ac_kw();
    let times = test_step_times(scenario.config.dt_test_s);
    let desired = scale_regulation_signal(signal, baseline, scenario.config.signal_scale, &times)?;
    let regulation = simulate(
        scenario,
        &CaseSpec {
            case: Case::Regulation,
            trial_seed,
            test_hour_start_s,
            baseline_kw: Some(baseline),
            desired_kw: Some(desired),
        },
    )?;
    Ok(Pair { base, regulation })
}

#[derive(Debug, Clone, Serialize)]
pub struct EvRow {
    pub mode: EvMode,
    pub base_any_pct: f64,
    pub regulation_any_pct: f64,
    pub base_sustained_pct: f64,
    pub regulation_sustained_pct: f64,
    /// Time-averaged voltage sensitivity of the monitored line, base case.
    pub base_sensitivity: Option<f64>,
    pub regulation_sensitivity: Option<f64>,
    #[serde(skip)]
    pub pair: Pair,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvStudy {
    pub test_hour_start_s: f64,
    /// Rows in the order EV+, No-EV, EV-.
    pub rows: Vec<EvRow>,
}

impl EvStudy {
    pub fn row(&self, mode: EvMode) -> &EvRow {
        self.rows.iter().find(|r| r.mode == mode).expect("all modes present")
    }
}

/// Base/regulation pairs with all EVs charging, without EVs, and with all EVs discharging.
pub fn run_ev_study(scenario: &Scenario) -> Result<EvStudy, EngineError> {
    let t0 = find_test_hour(scenario)?;
    let limits = scenario.config.limits;
    let rows = [EvMode::Charge, EvMode::None, EvMode::Discharge]
        .par_iter()
        .map(|&mode| {
            let sc = scenario.with_config(|c| c.ev_mode = mode);
            let pair = run_pair(&sc, sc.config.seed, t0)?;
            Ok(EvRow {
                mode,
                base_any_pct: pair.base.over_limit_pct_any(),
                regulation_any_pct: pair.regulation.over_limit_pct_any(),
                base_sustained_pct: pair.base.over_limit_pct_sustained(&limits),
                regulation_sustained_pct: pair.regulation.over_limit_pct_sustained(&limits),
                base_sensitivity: pair.base.mean_sensitivity(),
                regulation_sensitivity: pair.regulation.mean_sensitivity(),
                pair,
            })
        })
        .collect::<Result<Vec<_>, EngineError>>()?;
    Ok(EvStudy { test_hour_start_s: t0, rows })
}

#[derive(Debug, Clone, Serialize)]
pub struct RandomizationSummary {
    pub n_trials: usize,
    pub seeds: Vec<u64>,
    pub transformer_ids: Vec<String>,
    /// Trials in which each transformer aged faster under regulation.
    pub counts: Vec<usize>,
    /// Number of transformers with each count `0..=n_trials`.
    pub observed: Vec<usize>,
    /// Binomial(n_trials, p_hat) expectation scaled to the transformer population.
    pub expected: Vec<f64>,
    pub p_hat: f64,
    pub chi_square: f64,
    pub chi_square_dof: usize,
    pub chi_square_critical_95: f64,
    /// Per-transformer mean over trials of the aging-factor change, percent.
    pub mean_delta_aging_pct: Vec<f64>,
    pub mean_duty: Vec<f64>,
    /// Pearson correlation between `mean_delta_aging_pct` and `mean_duty`.
    pub correlation: f64,
    #[serde(skip)]
    pub trials: Vec<Pair>,
}

/// Trial seeds derived from the scenario seed.
pub fn trial_seeds(seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|k| derive_seed(seed, Domain::TrialSeed, k)).collect()
}

/// Repeat base/regulation pairs with fresh initial-state and dispatch seeds.
pub fn run_randomization_study(scenario: &Scenario, n_trials: usize) -> Result<RandomizationSummary, EngineError> {
    if n_trials < 2 {
        return Err(EngineError::Config(format!("randomization study needs at least 2 trials, got {n_trials}")));
    }
    run_randomization_with_seeds(scenario, &trial_seeds(scenario.config.seed, n_trials))
}

/// As [`run_randomization_study`] with explicit trial seeds.
pub fn run_randomization_with_seeds(scenario: &Scenario, seeds: &[u64]) -> Result<RandomizationSummary, EngineError> {
    let n = seeds.len();
    if n < 2 {
        return Err(EngineError::Config(format!("randomization study needs at least 2 trials, got {n}")));
    }
    let t0 = find_test_hour(scenario)?;
    let trials =
        seeds.par_iter().map(|&s| run_pair(scenario, s, t0)).collect::<Result<Vec<Pair>, EngineError>>()?;
    Ok(summarize_trials(seeds.to_vec(), trials))
}

/// Whether regulation aged a transformer faster; relative differences below 1e-12 are ties.
pub fn increased_aging(base: f64, regulation: f64) -> bool {
    regulation - base > 1e-12 * base.abs()
}

fn summarize_trials(seeds: Vec<u64>, trials: Vec<Pair>) -> RandomizationSummary {
    let n = trials.len();
    let first = &trials[0].base;
    let ids: Vec<String> = first.transformers.iter().map(|t| t.id.clone()).collect();
    let m = ids.len();
    let mut counts = vec![0usize; m];
    let mut delta = vec![0.0; m];
    let mut duty = vec![0.0; m];
    for pair in &trials {
        for j in 0..m {
            let b = pair.base.transformers[j].mean_aging_factor;
            let r = pair.regulation.transformers[j].mean_aging_factor;
            if increased_aging(b, r) {
                counts[j] += 1;
            }
            delta[j] += 100.0 * (r - b) / b / n as f64;
            duty[j] += pair.base.transformers[j].mean_duty / n as f64;
        }
    }
    let mut observed = vec![0usize; n + 1];
    for &c in &counts {
        observed[c] += 1;
    }
    let p_hat = counts.iter().sum::<usize>() as f64 / (m * n) as f64;
    let binom = Binomial::new(p_hat, n as u64).expect("p_hat in [0, 1]");
    let expected: Vec<f64> = (0..=n as u64).map(|k| m as f64 * binom.pmf(k)).collect();
    let (chi_square, dof, critical) = chi_square_test(&observed, &expected);

    // Transformers without houses carry no duty cycle and are left out of the correlation.
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        delta.iter().zip(&duty).filter(|(d, u)| d.is_finite() && u.is_finite()).map(|(d, u)| (*d, *u)).unzip();
    let correlation = pearson(&xs, &ys);

    RandomizationSummary {
        n_trials: n,
        seeds,
        transformer_ids: ids,
        counts,
        observed,
        expected,
        p_hat,
        chi_square,
        chi_square_dof: dof,
        chi_square_critical_95: critical,
        mean_delta_aging_pct: delta,
        mean_duty: duty,
        correlation,
        trials,
    }
}

/// Pearson chi-square over bins with positive expectation; one degree of
/// freedom is lost to the total and one to the estimated probability.
pub fn chi_square_test(observed: &[usize], expected: &[f64]) -> (f64, usize, f64) {
    let mut stat = 0.0;
    let mut bins = 0usize;
    for (&o, &e) in observed.iter().zip(expected) {
        if e > 1e-12 {
            stat += (o as f64 - e).powi(2) / e;
            bins += 1;
        } else if o > 0 {
            stat = f64::INFINITY;
        }
    }
    let dof = bins.saturating_sub(2).max(1);
    let critical = ChiSquared::new(dof as f64).expect("dof > 0").inverse_cdf(0.95);
    (stat, dof, critical)
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return f64::NAN;
    }
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_known_values() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_nan());
    }

    #[test]
    fn chi_square_critical_for_five_dof() {
        let observed = [1, 2, 3, 4, 3, 2, 1];
        let expected = [1.0, 2.0, 3.0, 4.0, 3.0, 2.0, 1.0];
        let (stat, dof, crit) = chi_square_test(&observed, &expected);
        assert_eq!(stat, 0.0);
        assert_eq!(dof, 5);
        assert!((crit - 11.070_497_693_516_35).abs() < 1e-6, "{crit}");
    }

    #[test]
    fn tie_rule() {
        assert!(!increased_aging(1.0, 1.0 + 1e-13));
        assert!(increased_aging(1.0, 1.0 + 1e-9));
        assert!(!increased_aging(1.0, 0.9));
    }
}
