//! Parses a config document and renders an SVG from aggregate rows.

use homeostat::harness::config::parse_config_with_env;
use homeostat::harness::{parse_plot_spec, render_plot, AggregateRow};
use homeostat::Controller;

fn main() -> homeostat::Result<()> {
    let doc = "
        # desk-scale sweep
        data_dir = /data/mnist
        shift_rates = 0, 50
        step_rule = multiplicative
    ";
    let cfg = parse_config_with_env(doc, None)?;
    println!("{}", cfg.serialize());

    match parse_config_with_env("data_dir = x\nlearnng_rate = 0.1\n", None) {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!("unknown key"),
    }

    let rows: Vec<AggregateRow> = Controller::ALL
        .iter()
        .enumerate()
        .flat_map(|(k, &learner)| {
            (0..20).map(move |epoch| {
                let t = epoch as f64 / 20.0;
                AggregateRow {
                    learner,
                    shift_rate: 50.0,
                    epoch,
                    acc_mean: 0.2 + 0.6 * t / (k as f64 + 1.0),
                    acc_sem: 0.02 * (k as f64 + 1.0),
                    lr_mean: 0.005 * (1.0 + t * k as f64),
                    lr_sem: 0.0005,
                    n_replicates: 5,
                }
            })
        })
        .collect();
    let spec = parse_plot_spec("metric = accuracy; title = Synthetic traces")?;
    let svg = render_plot(&rows, &spec)?;
    let path = std::env::temp_dir().join("homeostat_plot.svg");
    std::fs::write(&path, svg).map_err(|e| homeostat::Error::io(&path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}
