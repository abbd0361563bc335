//! Serves a presentation stream under label swaps and replays its event log.
//!
//! Uses a tiny synthetic dataset, so it runs without MNIST.

use homeostat::drift::{replay_log, write_event_log, Dataset, ShiftSchedule, Split, StreamState};
use homeostat::{LabelPermutation, SparseImage};

fn main() -> homeostat::Result<()> {
    let mut p = LabelPermutation::identity();
    p.swap_pair(0, 9)?;
    println!("after swapping 0 and 9, images of 0 are labelled {}", p.relabel(0));

    let images = (0..40)
        .map(|i| SparseImage::from_dense(&[i as f64 / 40.0, 1.0]))
        .collect();
    let data = Dataset {
        images,
        labels: (0..40).map(|i| (i % 10) as u8).collect(),
        rows: 1,
        cols: 2,
        split: Split::Train,
    };

    // Four swaps per 40-presentation epoch: one every 10 presentations.
    let schedule = ShiftSchedule::constant(4.0, 40)?;
    let mut stream = StreamState::new(&data, schedule, 7)?;
    for _ in 0..120 {
        let p = stream.next_presentation()?;
        for ev in &p.fired {
            println!(
                "presentation {:>3} (epoch {}): swap {} <-> {}, now {:?}",
                ev.presentation_index,
                ev.epoch,
                ev.class_a,
                ev.class_b,
                stream.permutation().map()
            );
        }
    }

    let replayed = replay_log(stream.event_log())?;
    assert_eq!(&replayed, stream.permutation());
    println!("event log replays to the live permutation");

    let path = std::env::temp_dir().join("homeostat_events.csv");
    write_event_log(stream.event_log(), &path)?;
    println!("wrote {}", path.display());
    Ok(())
}
