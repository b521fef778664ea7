//! Command-line front end: link-level simulation, state-evolution
//! trajectories, minimum-Eb/N0 search, and a quick self test.

use clap::{Args, Parser, Subcommand};
use std::fs;
use std::io::Write;
use std::process::ExitCode;

use ccs_amp::error::Error;
use ccs_amp::sim::{min_ebn0, run_experiment, se_comparison, Seeds, SimConfig};

#[derive(Parser)]
#[command(name = "ccs-amp", version, about = "Unsourced random access simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment description (JSON).
    #[arg(long)]
    config: String,
    /// Master seed overriding every seed stream in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<String>,
    /// Worker threads (defaults to the available cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run independent decoding trials and report per-user error rates.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Predicted (and empirical) effective-variance trajectories.
    StateEvolution {
        #[command(flatten)]
        common: CommonArgs,
        /// Recursion steps to compute.
        #[arg(long, default_value_t = 10)]
        steps: usize,
    },
    /// Bisect for the smallest Eb/N0 meeting the target error rate.
    MinEbn0 {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        lo_db: f64,
        #[arg(long)]
        hi_db: f64,
        #[arg(long, default_value_t = 0.25)]
        resolution_db: f64,
    },
    /// Fast internal consistency checks.
    Selftest {
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn setup_threads(threads: Option<usize>) {
    if let Some(t) = threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
}

fn load_config(common: &CommonArgs) -> Result<SimConfig, Error> {
    let text = fs::read_to_string(&common.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", common.config)))?;
    let mut config = SimConfig::from_json(&text)?;
    if let Some(seed) = common.seed {
        config.seeds = Seeds::from_master(seed);
    }
    Ok(config)
}

fn emit(
    common: &CommonArgs,
    write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Result<(), Error> {
    let io_err = |e: std::io::Error| Error::Config(format!("cannot write output: {e}"));
    match &common.out {
        Some(path) => {
            let mut file = fs::File::create(path).map_err(io_err)?;
            write(&mut file).map_err(io_err)
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock).map_err(io_err)
        }
    }
}

fn run() -> Result<(), Error> {
    match Cli::parse().command {
        Command::Simulate { common } => {
            setup_threads(common.threads);
            let config = load_config(&common)?;
            let result = run_experiment(&config)?;
            emit(&common, |w| result.write_csv(w))?;
            eprintln!(
                "mean pupe {:.4} +/- {:.4} over {} trials ({:.2} s/trial)",
                result.mean_pupe,
                result.std_err,
                result.trials.len(),
                result.mean_runtime_s
            );
            if result.trials.iter().any(|t| t.error.is_some()) {
                let first = result.trials.iter().find_map(|t| t.error.clone()).unwrap();
                return Err(Error::Numerical {
                    iteration: 0,
                    message: first,
                });
            }
            Ok(())
        }
        Command::StateEvolution { common, steps } => {
            setup_threads(common.threads);
            let config = load_config(&common)?;
            let cmp = se_comparison(&config, steps)?;
            emit(&common, |w| cmp.write_csv(w))
        }
        Command::MinEbn0 {
            common,
            lo_db,
            hi_db,
            resolution_db,
        } => {
            setup_threads(common.threads);
            let config = load_config(&common)?;
            let result = min_ebn0(&config, lo_db, hi_db, resolution_db)?;
            emit(&common, |w| {
                writeln!(w, "ebn0_db,mean_pupe")?;
                for (db, p) in &result.points {
                    writeln!(w, "{db},{p}")?;
                }
                Ok(())
            })?;
            eprintln!(
                "threshold {:.3} dB (bracket {:.3}..{:.3} dB at target {})",
                result.threshold_db, result.bracket.0, result.bracket.1, config.target_pupe
            );
            Ok(())
        }
        Command::Selftest { threads } => {
            setup_threads(threads);
            selftest()
        }
    }
}

fn selftest() -> Result<(), Error> {
    use ccs_amp::amp::pme;
    use ccs_amp::bp::{check_to_variable, precompute_masks};
    use ccs_amp::sensing::{build_operator, AmplitudeDiagonal, OperatorKind};
    use ccs_amp::state_evolution::{se_step_original, tau0_sq, SeParams};
    use ccs_amp::tree_code::{codeword_consistent, encode, make_triadic_design, Payload};
    use rand::{Rng, SeedableRng};

    let mut pass = true;
    let mut check = |name: &str, ok: bool| {
        println!("selftest {name}: {}", if ok { "ok" } else { "FAIL" });
        pass &= ok;
    };

    let design = make_triadic_design(128, 16, 0, 1).map_err(|e| e)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let ok = (0..5).all(|_| {
        let iv = encode(&design, &Payload::random(128, &mut rng));
        codeword_consistent(&design, &iv)
    });
    check("encode/consistency roundtrip (v=16)", ok);

    let mini = make_triadic_design(16, 4, 0, 2)?;
    let table = precompute_masks(&mini);
    let m = mini.layout().section_size(0);
    let msgs: Vec<Vec<f64>> = (0..2)
        .map(|_| {
            let v: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() + 0.01).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
        .collect();
    let p0 = mini.factor_parity_section(0);
    let fast = check_to_variable(&mini, &table, 0, p0, &[&msgs[0], &msgs[1]])?;
    let mut brute = vec![0.0; m];
    for k1 in 0..m as u32 {
        for k2 in 0..m as u32 {
            let g = (mini.precursor(0, mini.factor_info_sections(0)[0], k1)
                + mini.precursor(0, mini.factor_info_sections(0)[1], k2))
                % m as u32;
            brute[g as usize] += msgs[0][k1 as usize] * msgs[1][k2 as usize];
        }
    }
    let bsum: f64 = brute.iter().sum();
    let ok = fast
        .iter()
        .zip(&brute)
        .all(|(a, b)| (a - b / bsum).abs() < 1e-10);
    check("FFT check update vs direct sum (v=4)", ok);

    let op = build_operator(OperatorKind::SubsampledHadamard, 128, 512, 3)?;
    let x: Vec<f64> = (0..512).map(|_| rng.gen::<f64>() - 0.5).collect();
    let z: Vec<f64> = (0..128).map(|_| rng.gen::<f64>() - 0.5).collect();
    let lhs: f64 = op.forward(&x).iter().zip(&z).map(|(a, b)| a * b).sum();
    let rhs: f64 = x.iter().zip(op.adjoint(&z)).map(|(a, b)| a * b).sum();
    check(
        "sensing adjoint identity",
        (lhs - rhs).abs() / lhs.abs().max(1e-12) < 1e-9,
    );

    check(
        "scalar posterior mean",
        (pme(0.5, 2.0, 2.0, 1.0) - 0.8807970779778823).abs() < 1e-12,
    );

    let n = 38400;
    let power = 2.0 * 128.0 * 10f64.powf(0.3) / n as f64;
    let params = SeParams {
        k_a: 25,
        design: design.clone(),
        amplitudes: AmplitudeDiagonal::equal_power(power, n, design.num_sections()),
        sigma_sq: 1.0,
        n,
        mc_samples: 1,
    };
    let t0 = tau0_sq(&params);
    check("tau0 formula (25 users, 3 dB)", (t0 - 1.3325).abs() < 1e-3);
    let s1 = 1.0 + se_step_original(t0.sqrt(), &params);
    check(
        "state evolution first step",
        (s1 - 1.0716).abs() / 1.0716 < 1e-2,
    );

    let config = SimConfig {
        k_a: 2,
        n: 512,
        w: 32,
        v: 8,
        extra_parity_sections: Some(0),
        ebn0_db: 12.0,
        trials: 2,
        amp_iters: 10,
        bp_rounds: 1,
        sic_delta: None,
        sic_enabled: true,
        target_pupe: 0.05,
        seeds: Seeds::from_master(5),
        denoiser: ccs_amp::amp::DenoiserKind::Dynamic { bp_rounds: 1 },
        operator: OperatorKind::SubsampledHadamard,
        mc_samples: 10,
        out: None,
    };
    let result = run_experiment(&config)?;
    check("noiseless miniature decode", result.mean_pupe == 0.0);

    if pass {
        Ok(())
    } else {
        Err(Error::Numerical {
            iteration: 0,
            message: "selftest failures above".into(),
        })
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e @ Error::Numerical { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
