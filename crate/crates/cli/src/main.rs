use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use ocularage_cli::{cmd_bench, cmd_eval, cmd_preprocess, cmd_split, cmd_synth, cmd_train, CliError, RunConfig};
use ocularage_core::dataman::Modality;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Stage {
    Synth,
    Preprocess,
    Split,
    Train,
    Eval,
    Bench,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModalityArg {
    Eye,
    Iris,
}

/// Pediatric ocular age estimation pipeline.
#[derive(Debug, Parser)]
#[command(name = "ocularage", version)]
struct Args {
    /// Pipeline stage to run.
    #[arg(value_enum)]
    stage: Stage,
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint to evaluate or benchmark (defaults to the trained model path).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Also score the other sensor's test images and report the deltas.
    #[arg(long)]
    cross_sensor: bool,
    #[arg(long, value_enum)]
    modality: Option<ModalityArg>,
}

fn run(args: &Args) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let modality = match args.modality {
        Some(ModalityArg::Eye) => Modality::Eye,
        Some(ModalityArg::Iris) => Modality::Iris,
        None => cfg.modality(),
    };
    let checkpoint = args.checkpoint.clone().unwrap_or_else(|| cfg.checkpoint_path(modality));
    match args.stage {
        Stage::Synth => {
            let path = cmd_synth(&cfg)?;
            println!("manifest {}", path.display());
        }
        Stage::Preprocess => {
            let s = cmd_preprocess(&cfg)?;
            println!("preprocessed {} images, excluded {} ({:.2}%)", s.total, s.excluded, 100.0 * s.exclusion_rate());
        }
        Stage::Split => {
            let s = cmd_split(&cfg)?;
            let [tr, va, te] = s.image_fractions;
            println!(
                "subjects train {} val {} test {}; image fractions {tr:.3} {va:.3} {te:.3}",
                s.assignment.train.len(),
                s.assignment.val.len(),
                s.assignment.test.len()
            );
        }
        Stage::Train => {
            let (path, history) = cmd_train(&cfg, modality, &mut |r| {
                println!(
                    "epoch {:>3} train {:.4} val {:.4} (cls {:.4} reg {:.4}) lr {:.2e} alpha {:.3}",
                    r.epoch, r.train_loss, r.val_loss, r.val_cls_loss, r.val_reg_loss, r.lr, r.alpha
                );
            })?;
            println!("best epoch {}; checkpoint {}", history.best_epoch, path.display());
        }
        Stage::Eval => {
            let doc = cmd_eval(&cfg, modality, &checkpoint, args.cross_sensor)?;
            let (c, r) = (&doc.report.classification, &doc.report.regression);
            println!("accuracy {:.4} macro-F1 {:.4} MAE {:.3} RMSE {:.3}", c.accuracy, c.macro_f1, r.mae, r.rmse);
            if let Some(x) = &doc.cross_sensor {
                println!(
                    "other sensor: accuracy drop {:.4}, MAE increase {:.3}",
                    x.delta.accuracy_drop, x.delta.mae_increase
                );
            }
        }
        Stage::Bench => {
            let p = cmd_bench(&cfg, modality, &checkpoint)?;
            for r in [&p.fp32, &p.fp16] {
                println!(
                    "{:?}: {} params, {} bytes, mean {:.3} ms, median {:.3} ms, p95 {:.3} ms, cv {:.3}",
                    r.precision,
                    r.param_count,
                    r.param_count * r.precision.bytes_per_param(),
                    r.mean_ms,
                    r.median_ms,
                    r.p95_ms,
                    r.cv
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
