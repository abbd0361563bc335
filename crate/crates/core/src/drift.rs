//! Datasets and the concept-shifting presentation stream.
//!
//! Concept shift here means the images never change but the label served for
//! them does: every scheduled event swaps the labels of two classes for all
//! of their instances. The stream serves images in a seeded shuffle and
//! applies swap events at evenly spaced presentation offsets.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{SparseImage, NUM_CLASSES};
use crate::permutation::LabelPermutation;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Presentations per epoch implied by 500 swaps spaced 100 apart.
pub const FULL_EPOCH_LENGTH: u64 = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

/// Labelled images with pixels scaled to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<SparseImage>,
    pub labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
    pub split: Split,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    let gz = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"));
    if gz {
        GzDecoder::new(file).read_to_end(&mut buf)
    } else {
        file.read_to_end(&mut buf)
    }
    .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn be_u32(buf: &[u8], at: usize, path: &Path) -> Result<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "truncated IDX header"),
            )
        })
}

fn truncated(path: &Path, want: usize, got: usize) -> Error {
    Error::io(
        path,
        std::io::Error::new(
            std::io::ErrorKind::UnexpectedEof,
            format!("truncated IDX payload: expected {want} bytes, found {got}"),
        ),
    )
}

/// Parses an IDX3 image file: `(count, rows, cols, raw pixels)`.
pub fn parse_idx_images(buf: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(buf, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: IMAGES_MAGIC,
            actual: magic,
        });
    }
    let n = be_u32(buf, 4, path)? as usize;
    let rows = be_u32(buf, 8, path)? as usize;
    let cols = be_u32(buf, 12, path)? as usize;
    let want = n * rows * cols;
    let payload = &buf[16..];
    if payload.len() < want {
        return Err(truncated(path, want, payload.len()));
    }
    Ok((n, rows, cols, payload[..want].to_vec()))
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels(buf: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(buf, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: LABELS_MAGIC,
            actual: magic,
        });
    }
    let n = be_u32(buf, 4, path)? as usize;
    let payload = &buf[8..];
    if payload.len() < n {
        return Err(truncated(path, n, payload.len()));
    }
    if let Some(l) = payload[..n].iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(Error::Format(format!("{}: label {l} outside 0..10", path.display())));
    }
    Ok(payload[..n].to_vec())
}

/// Loads an image/label IDX pair. Files ending in `.gz` are decompressed.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let (n, rows, cols, raw) = parse_idx_images(&read_file(images_path)?, images_path)?;
    let labels = parse_idx_labels(&read_file(labels_path)?, labels_path)?;
    if labels.len() != n {
        return Err(Error::Format(format!(
            "{} has {n} images but {} has {} labels",
            images_path.display(),
            labels_path.display(),
            labels.len()
        )));
    }
    if n == 0 {
        return Err(Error::Format(format!("{}: empty dataset", images_path.display())));
    }
    let dim = rows * cols;
    let images = raw
        .chunks_exact(dim)
        .map(|px| {
            let dense: Vec<f64> = px.iter().map(|&p| p as f64 / 255.0).collect();
            SparseImage::from_dense(&dense)
        })
        .collect();
    Ok(Dataset {
        images,
        labels,
        rows,
        cols,
        split,
    })
}

/// Serializes raw pixels and labels in IDX format.
pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    rows: usize,
    cols: usize,
    pixels: &[u8],
    labels: &[u8],
) -> Result<()> {
    assert_eq!(pixels.len(), labels.len() * rows * cols);
    let mut img = Vec::with_capacity(16 + pixels.len());
    img.extend(IMAGES_MAGIC.to_be_bytes());
    img.extend((labels.len() as u32).to_be_bytes());
    img.extend((rows as u32).to_be_bytes());
    img.extend((cols as u32).to_be_bytes());
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend(LABELS_MAGIC.to_be_bytes());
    lab.extend((labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    std::fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    std::fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }

    /// Class-stratified subset of `n` samples (all of them if `n >= len`).
    ///
    /// Each class is shuffled with `seed`, and samples are taken in order of
    /// their within-class rank fraction, so class proportions are preserved
    /// up to rounding.
    pub fn stratified_subset(&self, n: usize, seed: u64) -> Dataset {
        if n >= self.len() {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l as usize].push(i);
        }
        let mut ranked: Vec<(f64, usize)> = Vec::with_capacity(self.len());
        for members in &mut by_class {
            members.shuffle(&mut rng);
            let count = members.len() as f64;
            ranked.extend(
                members
                    .iter()
                    .enumerate()
                    .map(|(r, &i)| ((r as f64 + 0.5) / count, i)),
            );
        }
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut picked: Vec<usize> = ranked[..n].iter().map(|&(_, i)| i).collect();
        picked.sort_unstable();
        Dataset {
            images: picked.iter().map(|&i| self.images[i].clone()).collect(),
            labels: picked.iter().map(|&i| self.labels[i]).collect(),
            rows: self.rows,
            cols: self.cols,
            split: self.split,
        }
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut c = [0; NUM_CLASSES];
        for &l in &self.labels {
            c[l as usize] += 1;
        }
        c
    }
}

/// One span of a seasonal schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Season {
    pub epochs: u32,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ShiftMode {
    Constant { rate: f64 },
    Seasonal { seasons: Vec<Season> },
}

/// When label swaps happen, in swaps per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSchedule {
    pub mode: ShiftMode,
    pub epoch_length: u64,
}

/// A scheduled swap, `offset` presentations into its epoch (`1..=E`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduledSwap {
    pub offset: u64,
    pub a: u8,
    pub b: u8,
}

/// A swap that has been applied to the stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwapRecord {
    pub presentation_index: u64,
    pub epoch: u64,
    pub class_a: u8,
    pub class_b: u8,
}

const PAIR_COUNT: usize = NUM_CLASSES * (NUM_CLASSES - 1) / 2;

/// Uniform draw over the 45 unordered pairs of distinct classes, `a < b`.
pub fn random_pair<R: Rng + ?Sized>(rng: &mut R) -> (u8, u8) {
    let mut k = rng.random_range(0..PAIR_COUNT);
    for a in 0..NUM_CLASSES {
        let span = NUM_CLASSES - 1 - a;
        if k < span {
            return (a as u8, (a + 1 + k) as u8);
        }
        k -= span;
    }
    unreachable!("pair index within range")
}

impl ShiftSchedule {
    pub fn constant(rate: f64, epoch_length: u64) -> Result<Self> {
        let s = ShiftSchedule {
            mode: ShiftMode::Constant { rate },
            epoch_length,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn seasonal(seasons: Vec<Season>, epoch_length: u64) -> Result<Self> {
        let s = ShiftSchedule {
            mode: ShiftMode::Seasonal { seasons },
            epoch_length,
        };
        s.validate()?;
        Ok(s)
    }

    /// Alternating calm (0) and stormy (`storm`) seasons of `span` epochs,
    /// starting calm, covering at least `epochs`.
    pub fn schedule_a(storm: f64, span: u32, epochs: u32, epoch_length: u64) -> Result<Self> {
        let mut seasons = Vec::new();
        let mut covered = 0;
        let mut stormy = false;
        while covered < epochs.max(1) {
            seasons.push(Season {
                epochs: span,
                rate: if stormy { storm } else { 0.0 },
            });
            covered += span;
            stormy = !stormy;
        }
        Self::seasonal(seasons, epoch_length)
    }

    /// Stepped ramp up then down through `rates`, `span` epochs per step.
    pub fn schedule_b(rates: &[f64], span: u32, epoch_length: u64) -> Result<Self> {
        Self::seasonal(
            rates.iter().map(|&rate| Season { epochs: span, rate }).collect(),
            epoch_length,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.epoch_length == 0 {
            return Err(Error::Schedule("epoch length must be at least 1".into()));
        }
        let rates: Vec<f64> = match &self.mode {
            ShiftMode::Constant { rate } => vec![*rate],
            ShiftMode::Seasonal { seasons } => {
                if seasons.is_empty() {
                    return Err(Error::Schedule("seasonal schedule has no seasons".into()));
                }
                if seasons.iter().any(|s| s.epochs == 0) {
                    return Err(Error::Schedule("season spans must be at least 1 epoch".into()));
                }
                seasons.iter().map(|s| s.rate).collect()
            }
        };
        for r in rates {
            if !r.is_finite() || r < 0.0 {
                return Err(Error::Schedule(format!("rate {r} must be finite and >= 0")));
            }
            if r > self.epoch_length as f64 {
                return Err(Error::Schedule(format!(
                    "rate {r} exceeds one swap per presentation (epoch length {})",
                    self.epoch_length
                )));
            }
        }
        Ok(())
    }

    /// Swap rate in effect during `epoch`. Epochs past the end of a seasonal
    /// schedule keep the last season's rate.
    pub fn rate_at(&self, epoch: u64) -> f64 {
        match &self.mode {
            ShiftMode::Constant { rate } => *rate,
            ShiftMode::Seasonal { seasons } => {
                let mut start = 0u64;
                for s in seasons {
                    start += s.epochs as u64;
                    if epoch < start {
                        return s.rate;
                    }
                }
                seasons.last().map(|s| s.rate).unwrap_or(0.0)
            }
        }
    }

    /// Total epochs covered by a seasonal schedule; `None` for constant mode.
    pub fn span(&self) -> Option<u64> {
        match &self.mode {
            ShiftMode::Constant { .. } => None,
            ShiftMode::Seasonal { seasons } => Some(seasons.iter().map(|s| s.epochs as u64).sum()),
        }
    }

    /// Epoch indices at which a zero-rate season gives way to a nonzero one.
    pub fn storm_onsets(&self) -> Vec<u64> {
        let mut out = Vec::new();
        if let ShiftMode::Seasonal { seasons } = &self.mode {
            let mut start = 0u64;
            let mut prev = None;
            for s in seasons {
                if s.rate > 0.0 && prev == Some(0.0) {
                    out.push(start);
                }
                prev = Some(s.rate);
                start += s.epochs as u64;
            }
        }
        out
    }
}

/// Swap rate for `epoch` under `schedule`.
pub fn seasonal_rate(schedule: &ShiftSchedule, epoch: u64) -> f64 {
    schedule.rate_at(epoch)
}

/// The swaps of one epoch: `floor(r)` events at offsets `k * floor(E / r)`.
///
/// Fractional rates are floored; a rate below 1 yields no events.
pub fn swap_events_for_epoch<R: Rng + ?Sized>(
    schedule: &ShiftSchedule,
    epoch: u64,
    rng: &mut R,
) -> Result<Vec<ScheduledSwap>> {
    schedule.validate()?;
    let rate = schedule.rate_at(epoch);
    let count = rate.floor() as u64;
    if count == 0 {
        return Ok(Vec::new());
    }
    let spacing = schedule.epoch_length / count;
    Ok((1..=count)
        .map(|k| {
            let (a, b) = random_pair(rng);
            ScheduledSwap {
                offset: k * spacing,
                a,
                b,
            }
        })
        .collect())
}

/// RNG stream ids carved out of one seed.
pub(crate) mod streams {
    pub const WEIGHTS: u64 = 1;
    pub const ORDER: u64 = 2;
    pub const SWAPS: u64 = 3;
    pub const CONTROLLER: u64 = 4;
}

pub(crate) fn sub_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One served sample.
#[derive(Debug, Clone)]
pub struct Presentation {
    pub index: u64,
    pub sample: usize,
    pub raw_label: u8,
    pub label: u8,
    pub fired: Vec<SwapRecord>,
}

/// Infinite stream of `(image, current label)` pairs.
///
/// Sample order and swap pairs come from separate RNG streams, so the order
/// in which images are served does not depend on the schedule.
#[derive(Debug, Clone)]
pub struct StreamState<'a> {
    data: &'a Dataset,
    schedule: ShiftSchedule,
    permutation: LabelPermutation,
    index: u64,
    order: Vec<usize>,
    cursor: usize,
    order_rng: ChaCha8Rng,
    swap_rng: ChaCha8Rng,
    pending: VecDeque<(u64, u8, u8, u64)>,
    queued_epochs: u64,
    log: Vec<SwapRecord>,
}

impl<'a> StreamState<'a> {
    pub fn new(data: &'a Dataset, schedule: ShiftSchedule, seed: u64) -> Result<Self> {
        schedule.validate()?;
        if data.is_empty() {
            return Err(Error::Format("stream needs a nonempty dataset".into()));
        }
        let mut order_rng = sub_rng(seed, streams::ORDER);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut order_rng);
        Ok(StreamState {
            data,
            schedule,
            permutation: LabelPermutation::identity(),
            index: 0,
            order,
            cursor: 0,
            order_rng,
            swap_rng: sub_rng(seed, streams::SWAPS),
            pending: VecDeque::new(),
            queued_epochs: 0,
            log: Vec::new(),
        })
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.data
    }

    pub fn schedule(&self) -> &ShiftSchedule {
        &self.schedule
    }

    pub fn permutation(&self) -> &LabelPermutation {
        &self.permutation
    }

    /// Index of the next presentation.
    pub fn presentation_index(&self) -> u64 {
        self.index
    }

    pub fn epoch(&self) -> u64 {
        self.index / self.schedule.epoch_length
    }

    pub fn event_log(&self) -> &[SwapRecord] {
        &self.log
    }

    /// Applies every swap due at the current index. Called by
    /// [`next_presentation`](Self::next_presentation); also useful to bring
    /// the permutation up to date before an evaluation.
    pub fn apply_due_swaps(&mut self) -> Result<Vec<SwapRecord>> {
        let e = self.schedule.epoch_length;
        while self.queued_epochs <= self.index / e {
            let epoch = self.queued_epochs;
            for ev in swap_events_for_epoch(&self.schedule, epoch, &mut self.swap_rng)? {
                self.pending.push_back((epoch * e + ev.offset, ev.a, ev.b, epoch));
            }
            self.queued_epochs += 1;
        }
        let mut fired = Vec::new();
        while let Some(&(at, a, b, epoch)) = self.pending.front() {
            if at > self.index {
                break;
            }
            self.pending.pop_front();
            self.permutation.swap_pair(a, b)?;
            let rec = SwapRecord {
                presentation_index: at,
                epoch,
                class_a: a,
                class_b: b,
            };
            self.log.push(rec);
            fired.push(rec);
        }
        Ok(fired)
    }

    /// Applies due swaps, then serves the next sample in the shuffled order
    /// under the current permutation.
    pub fn next_presentation(&mut self) -> Result<Presentation> {
        let fired = self.apply_due_swaps()?;
        if self.cursor == self.order.len() {
            self.order.shuffle(&mut self.order_rng);
            self.cursor = 0;
        }
        let sample = self.order[self.cursor];
        self.cursor += 1;
        let raw_label = self.data.labels[sample];
        let p = Presentation {
            index: self.index,
            sample,
            raw_label,
            label: self.permutation.relabel(raw_label),
            fired,
        };
        self.index += 1;
        Ok(p)
    }

    pub fn image(&self, sample: usize) -> &'a SparseImage {
        &self.data.images[sample]
    }
}

/// Folds logged swaps over the identity permutation.
pub fn replay_log(log: &[SwapRecord]) -> Result<LabelPermutation> {
    let mut p = LabelPermutation::identity();
    for r in log {
        p.swap_pair(r.class_a, r.class_b)?;
    }
    Ok(p)
}

/// CSV: `presentation_index,epoch,class_a,class_b`.
pub fn write_event_log(log: &[SwapRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut go = || -> std::io::Result<()> {
        writeln!(w, "presentation_index,epoch,class_a,class_b")?;
        for r in log {
            writeln!(w, "{},{},{},{}", r.presentation_index, r.epoch, r.class_a, r.class_b)?;
        }
        w.flush()
    };
    go().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Small synthetic dataset: sample `i` has class `i % 10` and a single
    /// lit pixel identifying it.
    pub(crate) fn toy(n: usize) -> Dataset {
        let images = (0..n)
            .map(|i| {
                let mut d = vec![0.0; 16];
                d[i % 16] = (i % 7 + 1) as f64 / 8.0;
                SparseImage::from_dense(&d)
            })
            .collect();
        Dataset {
            images,
            labels: (0..n).map(|i| (i % 10) as u8).collect(),
            rows: 4,
            cols: 4,
            split: Split::Train,
        }
    }

    #[test]
    fn spacing_at_full_epoch_density() {
        let s = ShiftSchedule::constant(500.0, 50_000).unwrap();
        let ev = swap_events_for_epoch(&s, 0, &mut sub_rng(1, 9)).unwrap();
        assert_eq!(ev.len(), 500);
        assert!(ev.iter().enumerate().all(|(k, e)| e.offset == 100 * (k as u64 + 1)));
        assert!(ev.iter().all(|e| e.a < e.b && e.b < 10));
    }

    #[test]
    fn zero_and_unit_rates() {
        let s = ShiftSchedule::constant(0.0, 50_000).unwrap();
        assert!(swap_events_for_epoch(&s, 3, &mut sub_rng(1, 9)).unwrap().is_empty());
        let s = ShiftSchedule::constant(1.0, 50_000).unwrap();
        let ev = swap_events_for_epoch(&s, 0, &mut sub_rng(1, 9)).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].offset, 50_000);
    }

    #[test]
    fn rate_above_epoch_length_rejected() {
        assert!(matches!(
            ShiftSchedule::constant(101.0, 100),
            Err(Error::Schedule(_))
        ));
        assert!(ShiftSchedule::constant(-1.0, 100).is_err());
        assert!(ShiftSchedule::constant(1.0, 0).is_err());
    }

    #[test]
    fn pair_draw_covers_all_45_pairs() {
        let mut rng = sub_rng(5, 1);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..5_000 {
            let (a, b) = random_pair(&mut rng);
            assert!(a < b && b < 10);
            seen.insert((a, b));
        }
        assert_eq!(seen.len(), 45);
    }

    #[test]
    fn seasonal_rates_piecewise() {
        let a = ShiftSchedule::schedule_a(500.0, 10, 40, 50_000).unwrap();
        assert_eq!(a.rate_at(0), 0.0);
        assert_eq!(a.rate_at(9), 0.0);
        assert_eq!(a.rate_at(10), 500.0);
        assert_eq!(a.rate_at(19), 500.0);
        assert_eq!(a.rate_at(20), 0.0);
        assert_eq!(a.rate_at(35), 500.0);
        assert_eq!(a.rate_at(1000), 500.0);
        assert_eq!(a.storm_onsets(), vec![10, 30]);

        let b = ShiftSchedule::schedule_b(&[0.0, 50.0, 500.0, 50.0, 0.0], 8, 50_000).unwrap();
        let rates: Vec<f64> = (0..40).step_by(8).map(|e| seasonal_rate(&b, e)).collect();
        assert_eq!(rates, vec![0.0, 50.0, 500.0, 50.0, 0.0]);
        assert_eq!(b.span(), Some(40));

        let c = ShiftSchedule::constant(7.0, 100).unwrap();
        assert!((0..50).all(|e| c.rate_at(e) == 7.0));
    }

    #[test]
    fn zero_rate_stream_serves_raw_labels() {
        let d = toy(50);
        let mut s = StreamState::new(&d, ShiftSchedule::constant(0.0, 50).unwrap(), 3).unwrap();
        for _ in 0..500 {
            let p = s.next_presentation().unwrap();
            assert_eq!(p.label, d.labels[p.sample]);
        }
        assert!(s.event_log().is_empty());
    }

    #[test]
    fn swap_relabels_until_touched_again() {
        let d = toy(100);
        let mut s = StreamState::new(&d, ShiftSchedule::constant(5.0, 100).unwrap(), 4).unwrap();
        for _ in 0..1_000 {
            let p = s.next_presentation().unwrap();
            let expect = replay_log(s.event_log()).unwrap();
            assert_eq!(&expect, s.permutation());
            assert_eq!(p.label, expect.relabel(p.raw_label));
            for f in &p.fired {
                assert_eq!(f.presentation_index, p.index);
            }
        }
        // 5 per epoch at offsets 20..=100: the offset-100 event of epoch 9
        // fires at index 1000, not yet reached.
        assert_eq!(s.event_log().len(), 49);
        assert!(s.event_log().iter().all(|r| r.presentation_index % 20 == 0));
    }

    #[test]
    fn stream_is_reproducible() {
        let d = toy(64);
        let sched = ShiftSchedule::constant(8.0, 64).unwrap();
        let run = |seed| {
            let mut s = StreamState::new(&d, sched.clone(), seed).unwrap();
            let served: Vec<(usize, u8)> = (0..700)
                .map(|_| {
                    let p = s.next_presentation().unwrap();
                    (p.sample, p.label)
                })
                .collect();
            (served, s.event_log().to_vec())
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11).0, run(12).0);
    }

    #[test]
    fn subset_is_stratified() {
        let d = toy(1000);
        let s = d.stratified_subset(250, 1);
        assert_eq!(s.len(), 250);
        assert!(s.class_counts().iter().all(|&c| c == 25));
        assert_eq!(s.stratified_subset(10_000, 1).len(), 250);
    }

    #[test]
    fn idx_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img-idx3-ubyte");
        let lp = dir.path().join("lab-idx1-ubyte");
        let pixels: Vec<u8> = (0..3 * 4).map(|i| [0u8, 255, 128][i % 3]).collect();
        write_idx(&ip, &lp, 2, 2, &pixels, &[1, 9, 0]).unwrap();
        let d = load_idx(&ip, &lp, Split::Train).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.labels, vec![1, 9, 0]);
        let dense = d.images[0].to_dense();
        assert_eq!(dense[0], 0.0);
        assert_eq!(dense[1], 1.0);

        // Labels file passed where images are expected and vice versa.
        assert!(matches!(
            load_idx(&lp, &lp, Split::Train),
            Err(Error::BadMagic { expected: IMAGES_MAGIC, actual: LABELS_MAGIC, .. })
        ));
        assert!(matches!(
            load_idx(&ip, &ip, Split::Train),
            Err(Error::BadMagic { expected: LABELS_MAGIC, actual: IMAGES_MAGIC, .. })
        ));

        // Count mismatch.
        let lp2 = dir.path().join("lab2");
        let ip2 = dir.path().join("img2");
        write_idx(&ip2, &lp2, 2, 2, &pixels[..8], &[1, 2]).unwrap();
        assert!(matches!(load_idx(&ip, &lp2, Split::Train), Err(Error::Format(_))));

        // Truncated payload.
        let bytes = std::fs::read(&ip).unwrap();
        std::fs::write(&ip2, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_idx(&ip2, &lp, Split::Train), Err(Error::Io { .. })));
        std::fs::write(&ip2, &bytes[..6]).unwrap();
        assert!(matches!(load_idx(&ip2, &lp, Split::Train), Err(Error::Io { .. })));

        assert!(matches!(
            load_idx(&dir.path().join("missing"), &lp, Split::Train),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn gzip_inputs_are_transparent() {
        use flate2::write::GzEncoder;
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        write_idx(&ip, &lp, 1, 2, &[10, 20, 30, 40], &[3, 4]).unwrap();
        for p in [&ip, &lp] {
            let raw = std::fs::read(p).unwrap();
            let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
            enc.write_all(&raw).unwrap();
            std::fs::write(p.with_extension("gz"), enc.finish().unwrap()).unwrap();
        }
        let plain = load_idx(&ip, &lp, Split::Validation).unwrap();
        let gz = load_idx(&ip.with_extension("gz"), &lp.with_extension("gz"), Split::Validation)
            .unwrap();
        assert_eq!(plain.images, gz.images);
        assert_eq!(plain.labels, gz.labels);
    }

    #[test]
    fn event_log_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.csv");
        let log = [SwapRecord {
            presentation_index: 100,
            epoch: 0,
            class_a: 0,
            class_b: 9,
        }];
        write_event_log(&log, &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "presentation_index,epoch,class_a,class_b\n100,0,0,9\n"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn served_images_per_epoch_ignore_schedule(rate in 0u32..40, seed in 0u64..1000) {
            let d = toy(40);
            let served = |r: f64| {
                let mut s = StreamState::new(&d, ShiftSchedule::constant(r, 40).unwrap(), seed).unwrap();
                (0..120).map(|_| s.next_presentation().unwrap().sample).collect::<Vec<_>>()
            };
            let base = served(0.0);
            let shifted = served(rate as f64);
            prop_assert_eq!(&base, &shifted);
            for epoch in base.chunks(40) {
                let mut e = epoch.to_vec();
                e.sort_unstable();
                prop_assert_eq!(e, (0..40).collect::<Vec<_>>());
            }
        }

        #[test]
        fn event_count_is_floor_of_rate(rate in 0.0f64..200.0, len in 200u64..5000, epoch in 0u64..5) {
            let s = ShiftSchedule::constant(rate, len).unwrap();
            let ev = swap_events_for_epoch(&s, epoch, &mut sub_rng(epoch, 3)).unwrap();
            prop_assert_eq!(ev.len() as u64, rate.floor() as u64);
            prop_assert!(ev.iter().all(|e| e.offset >= 1 && e.offset <= len));
        }

        #[test]
        fn log_reconstructs_permutation(rate in 1u32..30, seed in 0u64..100, steps in 1usize..400) {
            let d = toy(30);
            let mut s = StreamState::new(&d, ShiftSchedule::constant(rate as f64, 30).unwrap(), seed).unwrap();
            for _ in 0..steps {
                s.next_presentation().unwrap();
                prop_assert_eq!(replay_log(s.event_log()).unwrap(), *s.permutation());
                prop_assert!(s.permutation().is_bijection());
            }
        }
    }
}
