//! Calm and stormy seasons: learning-rate response of each learner.
//!
//! Needs MNIST under `HOMEOSTAT_DATA_DIR`.

use homeostat::harness::cli::write_outputs;
use homeostat::harness::{fmt_float, parse_config, run_experiment, ExperimentData, ScheduleId, ShiftSetting, SeriesKey};

fn main() -> homeostat::Result<()> {
    let cfg = parse_config(
        "
        train_subset = 2000
        val_subset = 500
        epochs = 8
        epoch_length = 1000
        eval_interval = 1000
        shift_mode = seasonal
        schedules = a
        storm_rate = 10
        season_span = 2
        replicates = 1
        out_dir = target/seasonal_schedule
        ",
    )?;
    let schedule = cfg.schedule(ShiftSetting::Schedule(ScheduleId::A))?;
    println!("storm onsets at epochs {:?}", schedule.storm_onsets());

    let data = ExperimentData::load(&cfg)?;
    let exp = run_experiment(&cfg, &data)?;
    for a in &exp.aggregates {
        println!(
            "{:>12} epoch {} (rate {:>2}): accuracy {}, lr {}",
            a.learner.name(),
            a.epoch,
            fmt_float(a.shift_rate),
            fmt_float(a.acc_mean),
            fmt_float(a.lr_mean)
        );
    }
    write_outputs(&cfg, &exp, &cfg.out_dir, SeriesKey::Learner)?;
    Ok(())
}
