//! A small sweep over constant shift rates, written as CSV and SVG.
//!
//! Needs MNIST under `HOMEOSTAT_DATA_DIR`. The default scale finishes in a
//! few minutes on one core.

use homeostat::harness::cli::write_outputs;
use homeostat::harness::{fmt_float, parse_config, run_experiment, ExperimentData, SeriesKey};

fn main() -> homeostat::Result<()> {
    let cfg = parse_config(
        "
        train_subset = 2000
        val_subset = 500
        epochs = 6
        epoch_length = 1000
        eval_interval = 500
        shift_rates = 0, 10
        replicates = 2
        out_dir = target/shift_sweep
        ",
    )?;
    let data = ExperimentData::load(&cfg)?;
    let exp = run_experiment(&cfg, &data)?;
    for a in exp.aggregates.iter().filter(|a| a.epoch + 1 == cfg.epochs as u64) {
        println!(
            "{:>12} rate {:>3}: accuracy {} ± {}, lr {}",
            a.learner.name(),
            fmt_float(a.shift_rate),
            fmt_float(a.acc_mean),
            fmt_float(a.acc_sem),
            fmt_float(a.lr_mean)
        );
    }
    write_outputs(&cfg, &exp, &cfg.out_dir, SeriesKey::LearnerRate)?;
    println!("outputs in {}", cfg.out_dir.display());
    Ok(())
}
