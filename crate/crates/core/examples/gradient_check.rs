//! Verifies backprop against central finite differences on random nets.
//!
//! ```text
//! cargo run --release --example gradient_check -- [instances] [seed]
//! ```

use homeostat::gradcheck::{self, DEFAULT_EPSILON, DEFAULT_TOLERANCE};

fn main() -> homeostat::Result<()> {
    let mut args = std::env::args().skip(1);
    let instances: usize = args.next().map_or(5, |s| s.parse().expect("instances"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));

    let reports = gradcheck::run_suite(instances, seed)?;
    for (i, r) in reports.iter().enumerate() {
        println!(
            "instance {i:>2}: {:>4} coordinates, max relative error {:.3e}",
            r.coords_checked, r.max_rel_error
        );
    }
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    println!("worst {worst:.3e} at eps {DEFAULT_EPSILON:e}, tolerance {DEFAULT_TOLERANCE:e}");
    Ok(())
}
