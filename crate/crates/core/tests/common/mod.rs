#![allow(dead_code)]

use std::path::Path;

use homeostat::drift::write_idx;

/// Writes a small separable 28x28 dataset under the default MNIST file names.
/// Class `c` lights a 4-row band starting at row `2c`, plus some noise.
pub fn write_synthetic_mnist(dir: &Path, train: usize, val: usize) {
    let make = |n: usize, salt: usize| {
        let mut pixels = vec![0u8; n * 784];
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = (i * 7 + salt) % 10;
            labels.push(c as u8);
            let img = &mut pixels[i * 784..(i + 1) * 784];
            for r in 2 * c..2 * c + 4 {
                for col in 4..24 {
                    img[r * 28 + col] = 200 + ((i + col) % 50) as u8;
                }
            }
            img[(i * 31 + salt) % 784] = 255;
        }
        (pixels, labels)
    };
    let (p, l) = make(train, 0);
    write_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
        28,
        28,
        &p,
        &l,
    )
    .unwrap();
    let (p, l) = make(val, 3);
    write_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
        28,
        28,
        &p,
        &l,
    )
    .unwrap();
}

/// A config small enough for debug builds.
pub fn small_config(data_dir: &Path, out_dir: &Path) -> String {
    format!(
        "# tiny run\n\
         data_dir = {}\n\
         out_dir = {}\n\
         train_subset = 200\n\
         val_subset = 50\n\
         epochs = 3\n\
         epoch_length = 60\n\
         eval_interval = 30\n\
         hidden = 16, 12\n\
         store_capacity = 8\n\
         shift_rates = 0, 6\n\
         storm_rate = 6\n\
         season_span = 1\n\
         ramp_rates = 0, 6, 0\n\
         ramp_span = 1\n\
         replicates = 2\n",
        data_dir.display(),
        out_dir.display()
    )
}
