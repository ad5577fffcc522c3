//! `tclgrid` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 input or validation error,
//! 3 simulation failure. Errors go to standard error as
//! `tclgrid:error:<usage|input|simulation>: <message>`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use tclgrid::engine::{
    self, find_test_hour, run_ev_study, run_pair, run_randomization_study, scan_peak, Case, CaseSpec, EngineError,
    Scenario,
};
use tclgrid::netmodel::{
    attach_houses, load_feeder, populate_houses, synthetic_feeder, PopulatorConfig, SynthSpec,
};
use tclgrid::results;
use tclgrid::series::TimeSeries;

#[derive(Debug, Parser)]
#[command(name = "tclgrid", version, about = "Feeder co-simulation of air conditioners providing frequency regulation")]
struct Cli {
    /// Cap on worker threads; defaults to the number of available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario config file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct Output {
    /// Output directory.
    #[arg(long, env = "TCLGRID_OUT_DIR", default_value = "tclgrid-out")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the base and regulation cases of a scenario.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        output: Output,
    },
    /// EV study: base/regulation pairs with EVs charging, absent and discharging.
    StudyEv {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        output: Output,
    },
    /// Randomized trials with fresh initial-state and dispatch seeds.
    StudyRandom {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        output: Output,
        /// Number of trials; defaults to the config's `n_trials`.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Find the peak-load hour with an uncontrolled scan.
    FindPeak {
        #[command(flatten)]
        common: Common,
    },
    /// Attach houses to a feeder.
    Populate {
        /// Populator config (parameter ranges and seed); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Feeder to populate; a synthetic feeder is generated when omitted.
        #[arg(long, conflicts_with = "synth_spec")]
        feeder: Option<PathBuf>,
        /// Parameters of the generated synthetic feeder (JSON); defaults apply when omitted.
        #[arg(long)]
        synth_spec: Option<PathBuf>,
        /// Weather series for the peak scan (required with --target-kva).
        #[arg(long)]
        weather: Option<PathBuf>,
        /// Size the population to this peak-hour demand, kVA.
        #[arg(long, conflicts_with = "houses", required_unless_present = "houses")]
        target_kva: Option<f64>,
        /// Attach exactly this many houses.
        #[arg(long)]
        houses: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output feeder file.
        #[arg(long)]
        output: PathBuf,
    },
    /// DistFlow voltage sensitivity of a line over the base case.
    Sensitivity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        line: String,
        #[arg(long, default_value_t = 0.97)]
        pf: f64,
        /// Print one operating point per this many seconds.
        #[arg(long, default_value_t = 300.0)]
        every: f64,
    },
    /// Validate a scenario and its inputs, or a single feeder file.
    Validate {
        #[arg(long, required_unless_present = "feeder")]
        config: Option<PathBuf>,
        #[arg(long)]
        feeder: Option<PathBuf>,
    },
}

enum Failure {
    Input(anyhow::Error),
    Simulation(anyhow::Error),
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        if e.is_input_error() {
            Failure::Input(e.into())
        } else {
            Failure::Simulation(e.into())
        }
    }
}

impl From<results::ResultsError> for Failure {
    fn from(e: results::ResultsError) -> Self {
        Failure::Input(e.into())
    }
}

fn input<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Input(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            if code == 1 {
                eprintln!("tclgrid:error:usage: {}", e.kind());
            }
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("tclgrid:error:usage: --threads must be at least 1");
            return ExitCode::from(1);
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().expect("thread pool is configured once");
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("tclgrid:error:input: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Simulation(e)) => {
            eprintln!("tclgrid:error:simulation: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn load_scenario(common: &Common) -> Result<Scenario, Failure> {
    let sc = Scenario::load(&common.config)?;
    Ok(match common.seed {
        Some(seed) => sc.with_seed(seed),
        None => sc,
    })
}

fn fresh_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(input)
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { common, output } => {
            let sc = load_scenario(&common)?;
            let t0 = find_test_hour(&sc)?;
            let pair = run_pair(&sc, sc.config.seed, t0)?;
            fresh_dir(&output.out)?;
            results::emit_pair(&pair, &output.out)?;
            results::write_manifest(&output.out, &sc, "run")?;
            let (b, r) = (&pair.base, &pair.regulation);
            println!("test_hour_start_s {}", t0);
            println!("baseline_kw {:.4}", r.baseline_kw.unwrap_or(f64::NAN));
            println!("energy_kwh base {:.4} regulation {:.4}", b.energy_kwh(), r.energy_kwh());
            println!("tracking_rms_pct {:.4}", r.tracking_rms_pct().unwrap_or(f64::NAN));
            println!("violations base {} regulation {}", b.violations.len(), r.violations.len());
        }
        Command::StudyEv { common, output } => {
            let sc = load_scenario(&common)?;
            let study = run_ev_study(&sc)?;
            fresh_dir(&output.out)?;
            results::emit_ev_study(&study, &output.out)?;
            results::write_manifest(&output.out, &sc, "study-ev")?;
            println!("ev_mode  base_any%  reg_any%  base_>2min%  reg_>2min%  sensitivity");
            for r in &study.rows {
                println!(
                    "{:<8} {:>9.2} {:>9.2} {:>12.2} {:>11.2}  {:.6e}",
                    r.mode.name(),
                    r.base_any_pct,
                    r.regulation_any_pct,
                    r.base_sustained_pct,
                    r.regulation_sustained_pct,
                    r.base_sensitivity.unwrap_or(f64::NAN)
                );
            }
        }
        Command::StudyRandom { common, output, trials } => {
            let sc = load_scenario(&common)?;
            let n = trials.unwrap_or(sc.config.n_trials);
            let summary = run_randomization_study(&sc, n)?;
            fresh_dir(&output.out)?;
            results::emit_randomization(&summary, &output.out)?;
            results::write_manifest(&output.out, &sc, "study-random")?;
            println!("p_hat {:.6}", summary.p_hat);
            println!("observed {:?}", summary.observed);
            println!(
                "expected [{}]",
                summary.expected.iter().map(|e| format!("{e:.3}")).collect::<Vec<_>>().join(", ")
            );
            println!(
                "chi_square {:.4} (dof {}, critical 95% {:.4})",
                summary.chi_square, summary.chi_square_dof, summary.chi_square_critical_95
            );
            println!("correlation {:.6}", summary.correlation);
        }
        Command::FindPeak { common } => {
            let sc = load_scenario(&common)?;
            let scan = scan_peak(&sc.feeder, &sc.weather, sc.config.seed)?;
            println!("hour_start_s,mean_head_kva");
            for (h, kva) in scan.hourly_kva.iter().enumerate() {
                println!("{},{}", sc.weather.start() + 3600.0 * h as f64, results::fmt_f(*kva));
            }
            println!("peak_hour_start_s {}", scan.hour_start_s);
        }
        Command::Populate { config, feeder, synth_spec, weather, target_kva, houses, seed, output } => {
            let mut cfg = match &config {
                Some(p) => PopulatorConfig::load(p).map_err(input)?,
                None => PopulatorConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let base = match &feeder {
                Some(p) => load_feeder(p).map_err(input)?,
                None => {
                    let spec: SynthSpec = match &synth_spec {
                        Some(p) => {
                            let text = std::fs::read_to_string(p)
                                .with_context(|| format!("reading {}", p.display()))
                                .map_err(input)?;
                            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display())).map_err(input)?
                        }
                        None => SynthSpec::default(),
                    };
                    synthetic_feeder(&spec)
                }
            };
            let populated = match (target_kva, houses) {
                (_, Some(n)) => attach_houses(&base, n, &cfg).map_err(input)?,
                (Some(target), None) => {
                    let path = weather.ok_or_else(|| input(anyhow::anyhow!("--weather is required with --target-kva")))?;
                    let w = TimeSeries::load_weather(&path).map_err(input)?;
                    let outcome = populate_houses(&base, target, &cfg, &w).map_err(|e| match e {
                        tclgrid::netmodel::PopulateError::Scan(inner) => Failure::from(*inner),
                        other => input(other),
                    })?;
                    println!(
                        "houses_added {} achieved_peak_kva {:.3} iterations {}",
                        outcome.houses_added, outcome.achieved_peak_kva, outcome.iterations
                    );
                    outcome.feeder
                }
                (None, None) => unreachable!("clap requires one of --target-kva or --houses"),
            };
            populated.save(&output).map_err(input)?;
            println!("wrote {} ({} houses)", output.display(), populated.houses.len());
        }
        Command::Sensitivity { common, line, pf, every } => {
            let sc = load_scenario(&common)?;
            let sc = sc.with_config(|c| {
                c.monitored_line = Some(line.clone());
                c.sensitivity_power_factor = pf;
            });
            if sc.feeder.line(&line).is_none() {
                return Err(input(anyhow::anyhow!("unknown line `{line}`")));
            }
            sc.config.validate()?;
            let t0 = find_test_hour(&sc)?;
            let base = engine::simulate(
                &sc,
                &CaseSpec { case: Case::Base, trial_seed: sc.config.seed, test_hour_start_s: t0, baseline_kw: None, desired_kw: None },
            )?;
            println!("time_s,p_pu,q_pu,v_send_pu,q_term,p_term,v_term,total");
            let stride = ((every / sc.config.dt_test_s).round() as usize).max(1);
            for s in base.sensitivity.iter().skip(stride - 1).step_by(stride) {
                println!(
                    "{},{},{},{},{},{},{},{}",
                    s.time_s,
                    results::fmt_f(s.p_pu),
                    results::fmt_f(s.q_pu),
                    results::fmt_f(s.v_send_pu),
                    results::fmt_f(s.q_term),
                    results::fmt_f(s.p_term),
                    results::fmt_f(s.v_term),
                    results::fmt_f(s.total)
                );
            }
        }
        Command::Validate { config, feeder } => {
            if let Some(p) = feeder {
                let f = load_feeder(&p).map_err(input)?;
                println!(
                    "ok: {} buses, {} lines, {} transformers, {} houses",
                    f.buses.len(),
                    f.lines.len(),
                    f.transformers.len(),
                    f.houses.len()
                );
            }
            if let Some(p) = config {
                let sc = Scenario::load(&p)?;
                println!("ok: scenario {} (input digest {})", p.display(), sc.input_digest);
            }
        }
    }
    Ok(())
}
