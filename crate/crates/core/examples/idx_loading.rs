//! Writes and reads IDX files, then loads MNIST if it is available.
//!
//! Set `HOMEOSTAT_DATA_DIR` to a directory holding the MNIST IDX files
//! (optionally gzipped) to see the real split sizes.

use std::path::PathBuf;

use homeostat::drift::{load_idx, write_idx, Split};
use homeostat::harness::ExperimentConfig;

fn main() -> homeostat::Result<()> {
    let dir = std::env::temp_dir().join("homeostat_idx_example");
    std::fs::create_dir_all(&dir).map_err(|e| homeostat::Error::io(&dir, e))?;
    let (img, lab) = (dir.join("img-idx3-ubyte"), dir.join("lab-idx1-ubyte"));
    let pixels: Vec<u8> = (0..3 * 4).map(|i| (i * 20) as u8).collect();
    write_idx(&img, &lab, 2, 2, &pixels, &[3, 1, 4])?;
    let d = load_idx(&img, &lab, Split::Train)?;
    println!("round trip: {} images of {}x{}, labels {:?}", d.len(), d.rows, d.cols, d.labels);
    println!("first image {:?}", d.images[0].to_dense());

    match load_idx(&lab, &img, Split::Train) {
        Err(e) => println!("swapped arguments rejected: {e}"),
        Ok(_) => unreachable!("label file is not an image file"),
    }

    if let Some(data_dir) = std::env::var_os("HOMEOSTAT_DATA_DIR").map(PathBuf::from) {
        let cfg = ExperimentConfig::with_data_dir(data_dir);
        let train = load_idx(
            &cfg.resolve(&cfg.train_images),
            &cfg.resolve(&cfg.train_labels),
            Split::Train,
        )?;
        println!("MNIST train: {} images, {}x{}", train.len(), train.rows, train.cols);
        println!("class counts {:?}", train.class_counts());
        let sub = train.stratified_subset(5000, 0);
        println!("stratified 5000: {:?}", sub.class_counts());
    }
    Ok(())
}
