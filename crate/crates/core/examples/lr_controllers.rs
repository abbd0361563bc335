//! Learning-rate traces of the three controllers on the same stream.
//!
//! Needs MNIST under `HOMEOSTAT_DATA_DIR`.
//!
//! ```text
//! cargo run --release --example lr_controllers -- [presentations] [swaps_per_1000]
//! ```

use homeostat::harness::{parse_config, ExperimentData};
use homeostat::drift::{ShiftSchedule, StreamState};
use homeostat::homeostat::Choice;
use homeostat::{Controller, HomeostatState, Learner, LrPolicy, Mlp};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> homeostat::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: u64 = args.next().map_or(3000, |s| s.parse().expect("presentations"));
    let rate: f64 = args.next().map_or(10.0, |s| s.parse().expect("rate"));

    let cfg = parse_config("train_subset = 5000\nval_subset = 500\n")?;
    let data = ExperimentData::load(&cfg)?;

    for controller in Controller::ALL {
        let mut stream = StreamState::new(&data.train, ShiftSchedule::constant(rate, 1000)?, 1)?;
        let net = Mlp::mnist(&mut ChaCha8Rng::seed_from_u64(1));
        let state = HomeostatState::new(controller, LrPolicy::default(), 100);
        let mut learner = Learner::new(net, state, ChaCha8Rng::seed_from_u64(2));
        let (mut ingests, mut correct) = (0, 0);
        print!("{controller:>12}:");
        for i in 0..n {
            let p = stream.next_presentation()?;
            let log = learner.step(p.index, stream.image(p.sample), p.label)?;
            correct += log.correct as u32;
            if log.decision.is_some_and(|d| d.choice() == Choice::Ingest) {
                ingests += 1;
            }
            if (i + 1) % 500 == 0 {
                print!(" {:.4}", learner.lr());
            }
        }
        println!("  | online accuracy {:.3}, ingests {ingests}", correct as f64 / n as f64);
    }
    Ok(())
}
