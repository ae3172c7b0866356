use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use splitbcd_cli::commands::{self, Failure, GenData};
use splitbcd_cli::config::read_config;

/// Train deep networks by block coordinate descent on split variables.
#[derive(Parser)]
#[command(name = "splitbcd", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train with block coordinate descent.
    TrainBcd { config: PathBuf },
    /// Train with mini-batch SGD from the same initialization.
    TrainSgd { config: PathBuf },
    /// Train both and check the accuracy thresholds of the config.
    Compare { config: PathBuf },
    /// Write Gaussian-blob images and labels as IDX files.
    GenData {
        #[arg(long, default_value_t = 6000)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        n_test: usize,
        #[arg(long, default_value_t = 28)]
        side: usize,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 0.05)]
        spread: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the scalar proximal maps against a dense-grid oracle.
    ProxCheck {
        #[arg(long, default_value_t = 10_000)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn show(s: &commands::Summary) {
    let test = s.final_test_acc.map_or("n/a".to_string(), |a| format!("{a:.4}"));
    eprintln!(
        "{}: {} epochs, objective {:.6e}, train acc {:.4}, test acc {test}",
        s.method, s.epochs, s.final_total, s.final_train_acc
    );
    if let (Some(d), Some(k)) = (s.descent_pass, s.descent_pass_count) {
        eprintln!(
            "  descent {} ({k}/{} epochs), rate {:?}, residual {:?}",
            if d { "ok" } else { "FAILED" },
            s.epochs,
            s.rate_pass,
            s.residual_pass
        );
    }
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::TrainBcd { config } => {
            let cfg = read_config(&config)?;
            let (train, test) = commands::load_data(&cfg)?;
            let s = commands::train_bcd(&cfg, &train, test.as_ref())?;
            show(&s);
            commands::bcd_outcome(&s)
        }
        Cmd::TrainSgd { config } => {
            let cfg = read_config(&config)?;
            let (train, test) = commands::load_data(&cfg)?;
            show(&commands::train_sgd(&cfg, &train, test.as_ref())?);
            Ok(())
        }
        Cmd::Compare { config } => {
            let cfg = read_config(&config)?;
            let (train, test) = commands::load_data(&cfg)?;
            let v = commands::compare(&cfg, &train, test.as_ref())?;
            eprintln!(
                "bcd {:.4} (need >= {}), sgd {:.4} (need <= {}), bcd checks {}",
                v.bcd_accuracy,
                v.bcd_min,
                v.sgd_accuracy,
                v.sgd_max,
                if v.bcd_invariants { "ok" } else { "FAILED" }
            );
            if v.verdict {
                Ok(())
            } else {
                Err(Failure::Check("accuracy contrast not reproduced".into()))
            }
        }
        Cmd::GenData { n, n_test, side, classes, spread, seed, out } => {
            if classes == 0 || classes > 10 {
                return Err(Failure::Setup(format!("--classes {classes}: IDX labels hold 1 to 10 classes")));
            }
            let g = GenData { n, n_test, side, classes, spread, seed, out };
            for p in commands::gen_data(&g)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Cmd::ProxCheck { cases, seed } => {
            let mut failed = 0;
            for r in commands::prox_check(cases, seed) {
                println!(
                    "{:<8} {} cases, {} violations, worst excess {:.3e}",
                    r.name, r.cases, r.violations, r.worst_excess
                );
                if let Some(v) = &r.first_violation {
                    println!("         first: {v}");
                }
                failed += usize::from(!r.passed());
            }
            if failed == 0 {
                Ok(())
            } else {
                Err(Failure::Check(format!("{failed} suites had violations")))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
