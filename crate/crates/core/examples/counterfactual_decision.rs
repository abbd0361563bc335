//! One ingest-or-reject decision, checked against the brute-force oracle.

use homeostat::homeostat::{counterfactual_decide, Workspace};
use homeostat::oracle;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> homeostat::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let s = oracle::random_state(&mut rng, 40);
        let mut ws = Workspace::new(&s.net);
        let cf = counterfactual_decide(&s.net, &s.state, s.predicted, &mut ws);
        let reference = oracle::decide(&s.net, &s.state, s.predicted)?;
        println!(
            "store {:>2}, lr {:.5}, predicted {} (direction {:+}): ingest lr {:.5} loss {:?}, reject loss {:?} -> {:?} (oracle {:?})",
            s.state.store.len(),
            s.state.lr,
            s.predicted,
            cf.expected_direction,
            cf.lr_ingest,
            cf.loss_ingest,
            cf.loss_reject,
            cf.choice,
            reference.choice
        );
        assert_eq!(cf.choice, reference.choice);
    }
    Ok(())
}
