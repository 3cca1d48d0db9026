//! Command-line laboratory driver: analytic predictions, Monte Carlo
//! ensembles, and the deterministic verification suite.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use bht_lab::config::Config;
use bht_lab::ensemble::{fit_scaling_exponent, run_static_ensemble, run_timedep_ensemble, EnsembleMode};
use bht_lab::error::Result;
use bht_lab::output::{
    fmt_f64, now_utc, plot_script, predictions_csv, stats_csv, to_json_bytes, write_atomic,
    CheckLine, OutDir, RunManifest, VerdictSummary,
};
use bht_lab::phases::{derive_seed, sample_static_phases};
use bht_lab::predictor::{
    angular_quartic_integral, angular_quartic_integral_quadrature, lattice_integral_error,
    PredictionReport,
};
use bht_lab::spectral::WaveVector;

const CSV_COLUMNS: &str = "\
Output files and columns:
  predictions.csv : kappa, expected_vartheta, expected_vartheta_lattice,
                    expected_phi1, expected_phi1_lattice, var_bound,
                    relative_budget, below_validity, correction_n0..n2
  stats.csv       : kappa, n, mean, variance, std_error, expected_annulus,
                    expected_lattice, variance_bound, mean_margin_sigmas,
                    variance_ratio, mean_ok, variance_ok, below_validity
  verify.csv      : check, case, measured, expected, margin, pass
  manifest.json   : config snapshot, master seed, code version, timestamps,
                    output list, verdicts
  plot.gp         : gnuplot script, log-log band power vs prediction
Floats are written with 17 significant digits.
Thread count: --threads, else BHT_LAB_THREADS, else [ensemble] threads key.";

#[derive(Parser)]
#[command(name = "bht-lab", version, about = "Passive-tracer spectrum laboratory", after_help = CSV_COLUMNS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the analytic band predictions over the configured ladder.
    Predict(RunArgs),
    /// Run the seeded Monte Carlo ensemble and compare with predictions.
    Ensemble(RunArgs),
    /// Run the deterministic verification suite (quadrature identities,
    /// lattice-error ladder, solver oracle equivalence).
    Verify(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread count override.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, run): (&RunArgs, fn(&RunArgs, Config) -> Result<bool>) = match &cli.command {
        Command::Predict(a) => (a, cmd_predict),
        Command::Ensemble(a) => (a, cmd_ensemble),
        Command::Verify(a) => (a, cmd_verify),
    };
    let mut config = match Config::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = args.seed {
        config.ensemble.seed = seed;
    }
    init_threads(args.threads, config.ensemble.threads);
    match run(args, config) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn init_threads(cli_threads: Option<usize>, config_threads: usize) {
    let env_threads = std::env::var("BHT_LAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    let n = cli_threads.or(env_threads).unwrap_or(config_threads);
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .ok();
    }
}

fn manifest(config: &Config, started: String, outputs: Vec<String>, verdict: VerdictSummary) -> RunManifest {
    RunManifest {
        config_toml: config.to_toml_string(),
        master_seed: config.ensemble.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        started_utc: started,
        finished_utc: now_utc(),
        outputs,
        verdict,
    }
}

fn cmd_predict(args: &RunArgs, config: Config) -> Result<bool> {
    let started = now_utc();
    let out = OutDir::new(&args.out);
    let source = config.source_spec()?;
    let velocity = config.velocity_spec()?;
    let law = config.correlation_law()?;
    let report = PredictionReport::new(
        &config.bands.kappas,
        &source,
        velocity.amplitude,
        velocity.beta,
        Some(&law),
        config.ensemble.slack,
    );
    write_atomic(&out.file("predictions.csv"), &predictions_csv(&report)?)?;
    let m = manifest(
        &config,
        started,
        vec!["predictions.csv".into()],
        VerdictSummary {
            pass: true,
            detail: Vec::new(),
        },
    );
    write_atomic(&out.file("manifest.json"), &to_json_bytes(&m)?)?;
    println!("predictions written to {}", out.file("predictions.csv").display());
    Ok(true)
}

fn cmd_ensemble(args: &RunArgs, config: Config) -> Result<bool> {
    let started = now_utc();
    let out = OutDir::new(&args.out);
    let ens = config.ensemble_config()?;
    let outcome = match ens.mode {
        EnsembleMode::Static => run_static_ensemble(&ens)?,
        EnsembleMode::Timedep => run_timedep_ensemble(&ens)?,
    };
    write_atomic(&out.file("stats.csv"), &stats_csv(&outcome)?)?;

    let mut detail = Vec::new();
    for (row, stat) in outcome.report.rows.iter().zip(outcome.stats.iter()) {
        detail.push(CheckLine {
            name: format!("band-mean kappa={}", row.kappa),
            measured: stat.sample_mean,
            expected: row.expected_vartheta_lattice,
            margin: row.mean_margin_sigmas.unwrap_or(f64::NAN),
            pass: row.mean_ok.unwrap_or(false),
        });
        detail.push(CheckLine {
            name: format!("band-variance kappa={}", row.kappa),
            measured: stat.sample_variance,
            expected: row.variance_bound,
            margin: row.variance_ratio.unwrap_or(f64::NAN),
            pass: row.below_validity || row.variance_ok.unwrap_or(false),
        });
    }
    if outcome.stats.len() >= 3 {
        let (slope, stderr) = fit_scaling_exponent(&outcome.stats)?;
        detail.push(CheckLine {
            name: "scaling-exponent".into(),
            measured: slope,
            expected: 2.0 * config.velocity.beta,
            margin: stderr,
            pass: true, // informational; acceptance thresholds live in the suite
        });
    }
    if ens.check_envelope {
        detail.push(CheckLine {
            name: "envelope-violations".into(),
            measured: outcome.envelope_violations as f64,
            expected: 0.0,
            margin: 0.0,
            pass: outcome.envelope_violations == 0,
        });
    }
    let pass = detail.iter().all(|c| c.pass);

    let prefactor = outcome.report.rows.first().map_or(1.0, |r| {
        r.expected_vartheta / r.kappa.powf(2.0 * config.velocity.beta)
    });
    let plot = plot_script(
        "stats.csv",
        &outcome.stats,
        2.0 * config.velocity.beta,
        prefactor,
    );
    write_atomic(&out.file("plot.gp"), plot.as_bytes())?;

    let m = manifest(
        &config,
        started,
        vec!["stats.csv".into(), "plot.gp".into()],
        VerdictSummary { pass, detail },
    );
    write_atomic(&out.file("manifest.json"), &to_json_bytes(&m)?)?;
    for line in &m.verdict.detail {
        println!(
            "{:<28} measured {:>13.6e} expected {:>13.6e} {}",
            line.name,
            line.measured,
            line.expected,
            if line.pass { "pass" } else { "FAIL" }
        );
    }
    println!("verdict: {}", if pass { "pass" } else { "FAIL" });
    Ok(pass)
}

fn cmd_verify(args: &RunArgs, config: Config) -> Result<bool> {
    let started = now_utc();
    let out = OutDir::new(&args.out);
    let mut rows: Vec<(String, String, f64, f64, f64, bool)> = Vec::new();
    let mut detail = Vec::new();

    // 1. static kernel identity: frozen-phase double integral vs closed form
    {
        let law = bht_lab::phases::CorrelationLaw::constant_one();
        for &a in &[1.0f64, 4.0, 25.0] {
            for &t in &[0.1f64, 1.0, 10.0] {
                let q = bht_lab::timedep::static_kernel_quadrature(&law, a, t);
                let exact = (1.0 - (-t * a).exp()).powi(2) / (a * a);
                let margin = (q - exact).abs() / exact;
                let pass = margin <= 1e-10;
                rows.push((
                    "static-kernel".into(),
                    format!("|k|^2={a} t={t}"),
                    q,
                    exact,
                    margin,
                    pass,
                ));
            }
        }
    }

    // 2. angular integral identity on seeded random integer pairs
    {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(config.ensemble.seed);
        for case in 0..50 {
            let j = WaveVector::new(rng.gen_range(-6..=6), rng.gen_range(-6..=6));
            let n = WaveVector::new(rng.gen_range(-6..=6), rng.gen_range(-6..=6));
            let closed = angular_quartic_integral(j, n);
            let quad = angular_quartic_integral_quadrature(j, n, 64);
            let margin = (closed - quad).abs() / closed.abs().max(1.0);
            rows.push((
                "angular-integral".into(),
                format!("case {case} j=({},{}) n=({},{})", j.kx, j.ky, n.kx, n.ky),
                quad,
                closed,
                margin,
                margin <= 1e-10,
            ));
        }
    }

    // 3. lattice-vs-integral error ladder; the gate uses the per-cell
    //    kappa^{2 beta + 3} normalization (bounded), while the
    //    kappa^{2 beta + 1} reference column is reported for inspection.
    {
        for &beta in &[config.velocity.beta, -2.5] {
            for &(jx, jy) in &[(1, 0), (1, 1), (2, 1)] {
                let mut cell_ratios = Vec::new();
                for &kappa in &[8.0f64, 16.0, 32.0, 64.0] {
                    let c = lattice_integral_error(WaveVector::new(jx, jy), kappa, beta)?;
                    cell_ratios.push(c.normalized_cell);
                    rows.push((
                        "lattice-error".into(),
                        format!("beta={beta} j=({jx},{jy}) kappa={kappa}"),
                        c.lattice_sum,
                        c.integral,
                        c.normalized,
                        true, // per-row informational; the gate is the ladder spread
                    ));
                }
                let max = cell_ratios.iter().cloned().fold(f64::MIN, f64::max);
                let min = cell_ratios.iter().cloned().fold(f64::MAX, f64::min);
                detail.push(CheckLine {
                    name: format!("lattice-error-spread beta={beta} j=({jx},{jy})"),
                    measured: max / min,
                    expected: 10.0,
                    margin: max / min / 10.0,
                    pass: max / min <= 10.0,
                });
            }
        }
    }

    // 4. solver oracle equivalence at a dense-feasible truncation
    {
        let k_max = config.velocity.k_max.min(16);
        let velocity = bht_lab::fields::VelocitySpec::new(config.velocity.amplitude, config.velocity.beta, k_max)?;
        let source = config.source_spec()?;
        for seed_idx in 0..3u64 {
            let phi = sample_static_phases(derive_seed(config.ensemble.seed, seed_idx, 0x01), k_max);
            let xi = sample_static_phases(derive_seed(config.ensemble.seed, seed_idx, 0x02), k_max);
            let psi = bht_lab::fields::build_streamfunction(&velocity, &phi);
            let u = bht_lab::fields::velocity_from_streamfunction(&psi);
            let g = bht_lab::fields::build_source_truncated(&source, &xi, k_max);
            let it = bht_lab::static_solver::iterate_static(&u, &g, None, 0)?;
            let oracle = bht_lab::static_solver::dense_oracle_solve(&u, &g)?;
            let rel = it.theta.sub_field(&oracle)?.l2_norm_sq().sqrt()
                / oracle.l2_norm_sq().sqrt();
            rows.push((
                "oracle-equivalence".into(),
                format!("seed {seed_idx} K_max={k_max}"),
                rel,
                1e-10,
                rel / 1e-10,
                rel <= 1e-10,
            ));
            // two-path first-order term agreement
            let direct = bht_lab::static_solver::first_order_term_direct(&velocity, &phi, &source, &xi);
            let conv = bht_lab::static_solver::first_order_term(&u, &g)?;
            let rel2 = direct.sub_field(&conv)?.l2_norm_sq().sqrt()
                / direct.l2_norm_sq().sqrt().max(1e-300);
            rows.push((
                "first-order-paths".into(),
                format!("seed {seed_idx} K_max={k_max}"),
                rel2,
                1e-12,
                rel2 / 1e-12,
                rel2 <= 1e-12,
            ));
        }
    }

    // assemble CSV and verdict
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["check", "case", "measured", "expected", "margin", "pass"])
        .map_err(|e| bht_lab::Error::InvalidSpec(format!("csv: {e}")))?;
    for (check, case, measured, expected, margin, pass) in &rows {
        w.write_record([
            check.clone(),
            case.clone(),
            fmt_f64(*measured),
            fmt_f64(*expected),
            fmt_f64(*margin),
            pass.to_string(),
        ])
        .map_err(|e| bht_lab::Error::InvalidSpec(format!("csv: {e}")))?;
    }
    let csv_bytes = w
        .into_inner()
        .map_err(|e| bht_lab::Error::InvalidSpec(format!("csv flush: {e}")))?;
    write_atomic(&out.file("verify.csv"), &csv_bytes)?;

    for (check, case, measured, expected, _margin, pass) in &rows {
        detail.push(CheckLine {
            name: format!("{check} {case}"),
            measured: *measured,
            expected: *expected,
            margin: 0.0,
            pass: *pass,
        });
    }
    let pass = detail.iter().all(|c| c.pass);
    let m = manifest(
        &config,
        started,
        vec!["verify.csv".into()],
        VerdictSummary {
            pass,
            detail: detail.clone(),
        },
    );
    write_atomic(&out.file("manifest.json"), &to_json_bytes(&m)?)?;

    let failed = detail.iter().filter(|c| !c.pass).count();
    println!(
        "verify: {} checks, {} failed -> {}",
        detail.len(),
        failed,
        if pass { "pass" } else { "FAIL" }
    );
    Ok(pass)
}
