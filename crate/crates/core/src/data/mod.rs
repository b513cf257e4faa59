//! Domain types, the dataset container and its binary file format.

mod io;
mod rng;

pub use io::{decode_dataset, encode_dataset, load_dataset, save_dataset, MAGIC, VERSION};
pub use rng::{purpose, stream_id, RngStream};

use std::fmt;

use rand::seq::index;

use crate::error::{bail, Result};
use crate::scalar::Scalar;

/// Shortest series accepted by [`TimeSeries::new`].
pub const MIN_TIMESTEPS: usize = 8;

/// One `T x C` sequence stored row-major (timestep, channel); timestamps are
/// the implicit grid `0..T`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries<T = f32> {
    len: usize,
    channels: usize,
    values: Vec<T>,
}

impl<T: Scalar> TimeSeries<T> {
    pub fn new(len: usize, channels: usize, values: Vec<T>) -> Result<Self> {
        if len < MIN_TIMESTEPS {
            bail!(Validation, "time series needs at least {MIN_TIMESTEPS} timesteps, got {len}");
        }
        if channels == 0 {
            bail!(Validation, "time series needs at least one channel");
        }
        if values.len() != len * channels {
            bail!(Validation, "expected {} values for {len}x{channels}, got {}", len * channels, values.len());
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            bail!(Validation, "non-finite value at timestep {}, channel {}", i / channels, i % channels);
        }
        Ok(Self { len, channels, values })
    }

    /// Single-channel convenience constructor.
    pub fn from_column(values: &[T]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    /// Internal constructor for outputs of shape-preserving operations.
    pub(crate) fn from_parts(len: usize, channels: usize, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), len * channels);
        Self { len, channels, values }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn at(&self, t: usize, c: usize) -> T {
        self.values[t * self.channels + c]
    }

    pub fn channel(&self, c: usize) -> impl Iterator<Item = T> + '_ {
        self.values.iter().skip(c).step_by(self.channels).copied()
    }

    pub fn cast<U: Scalar>(&self) -> TimeSeries<U> {
        TimeSeries {
            len: self.len,
            channels: self.channels,
            values: self.values.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Aligned set of series sharing one label (the pixel set of a parcel).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub series: Vec<TimeSeries<f32>>,
    pub label: Option<u32>,
}

impl Sample {
    pub fn new(series: Vec<TimeSeries<f32>>, label: Option<u32>) -> Result<Self> {
        let Some(first) = series.first() else {
            bail!(Validation, "a sample needs at least one series");
        };
        let shape = (first.len(), first.channels());
        if series.iter().any(|s| (s.len(), s.channels()) != shape) {
            bail!(Validation, "series of one sample must share (T, C) = {shape:?}");
        }
        Ok(Self { series, label })
    }

    pub fn n_series(&self) -> usize {
        self.series.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplitTag {
    Unlabeled,
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn name(self) -> &'static str {
        match self {
            SplitTag::Unlabeled => "unlabeled",
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `(N, N_ts, T, C)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetShape {
    pub n: usize,
    pub n_series: usize,
    pub len: usize,
    pub channels: usize,
}

impl fmt::Display for DatasetShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(N={}, N_ts={}, T={}, C={})", self.n, self.n_series, self.len, self.channels)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    n_classes: usize,
    split: SplitTag,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, n_classes: usize, split: SplitTag) -> Result<Self> {
        let ds = Self { samples, n_classes, split };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let Some(first) = self.samples.first() else {
            return Ok(());
        };
        let n_series = first.n_series();
        let (len, channels) = (first.series[0].len(), first.series[0].channels());
        for (i, s) in self.samples.iter().enumerate() {
            if s.n_series() != n_series || s.series.iter().any(|x| x.len() != len || x.channels() != channels) {
                bail!(Validation, "sample {i} does not share (N_ts, T, C) = ({n_series}, {len}, {channels})");
            }
            if self.split != SplitTag::Unlabeled && s.label.is_none() {
                bail!(Validation, "sample {i} of labeled split '{}' has no label", self.split);
            }
            if let Some(l) = s.label {
                if l as usize >= self.n_classes {
                    bail!(Validation, "sample {i} label {l} outside [0, {})", self.n_classes);
                }
            }
        }
        Ok(())
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn split(&self) -> SplitTag {
        self.split
    }

    pub fn shape(&self) -> DatasetShape {
        match self.samples.first() {
            Some(s) => DatasetShape {
                n: self.samples.len(),
                n_series: s.n_series(),
                len: s.series[0].len(),
                channels: s.series[0].channels(),
            },
            None => DatasetShape { n: 0, n_series: 0, len: 0, channels: 0 },
        }
    }

    pub fn has_labels(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.label.is_some())
    }

    /// Labels of every sample; errors if any is missing.
    pub fn labels(&self) -> Result<Vec<u32>> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| s.label.ok_or_else(|| crate::Error::Validation(format!("sample {i} is unlabeled"))))
            .collect()
    }

    pub fn with_split(mut self, split: SplitTag) -> Result<Self> {
        self.split = split;
        self.validate()?;
        Ok(self)
    }

    /// New dataset from the given sample indices, relabeled with `split`.
    pub fn subset(&self, indices: &[usize], split: SplitTag) -> Result<Self> {
        let samples = indices
            .iter()
            .map(|&i| {
                self.samples
                    .get(i)
                    .cloned()
                    .ok_or_else(|| crate::Error::Argument(format!("sample index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples, self.n_classes, split)
    }

    /// Sample indices per class, in dataset order.
    pub fn indices_by_class(&self) -> Result<Vec<Vec<usize>>> {
        let mut out = vec![Vec::new(); self.n_classes];
        for (i, l) in self.labels()?.into_iter().enumerate() {
            out[l as usize].push(i);
        }
        Ok(out)
    }
}

/// Draws `g` distinct series of `sample` uniformly without replacement, in draw order.
pub fn select_group<'a>(sample: &'a Sample, g: usize, rng: &mut RngStream) -> Result<Vec<&'a TimeSeries<f32>>> {
    let idx = select_group_indices(sample.n_series(), g, rng)?;
    Ok(idx.into_iter().map(|i| &sample.series[i]).collect())
}

pub fn select_group_indices(n_series: usize, g: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    if g == 0 || g > n_series {
        bail!(Argument, "group size {g} must be in [1, {n_series}]");
    }
    Ok(index::sample(rng, n_series, g).into_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(v: f32) -> TimeSeries {
        TimeSeries::new(8, 2, vec![v; 16]).unwrap()
    }

    #[test]
    fn time_series_rejects_bad_shapes() {
        assert!(TimeSeries::<f32>::new(7, 1, vec![0.0; 7]).is_err());
        assert!(TimeSeries::<f32>::new(8, 0, vec![]).is_err());
        assert!(TimeSeries::<f32>::new(8, 1, vec![0.0; 9]).is_err());
        let mut v = vec![0.0f32; 8];
        v[3] = f32::NAN;
        assert!(TimeSeries::new(8, 1, v).is_err());
    }

    #[test]
    fn dataset_checks_labels() {
        let s = Sample::new(vec![series(0.0)], Some(3)).unwrap();
        assert!(Dataset::new(vec![s.clone()], 3, SplitTag::Train).is_err());
        assert!(Dataset::new(vec![s.clone()], 4, SplitTag::Train).is_ok());
        let unl = Sample::new(vec![series(0.0)], None).unwrap();
        assert!(Dataset::new(vec![unl.clone()], 4, SplitTag::Unlabeled).is_ok());
        assert!(Dataset::new(vec![unl], 4, SplitTag::Test).is_err());
    }

    #[test]
    fn dataset_checks_shapes() {
        let a = Sample::new(vec![series(0.0)], None).unwrap();
        let b = Sample::new(vec![series(0.0), series(1.0)], None).unwrap();
        assert!(Dataset::new(vec![a, b], 1, SplitTag::Unlabeled).is_err());
    }

    #[test]
    fn group_of_all_is_a_permutation() {
        let sample = Sample::new((0..4).map(|i| series(i as f32)).collect(), None).unwrap();
        let mut rng = RngStream::new(1, 2);
        let g = select_group(&sample, 4, &mut rng).unwrap();
        let mut firsts: Vec<f32> = g.iter().map(|s| s.at(0, 0)).collect();
        firsts.sort_by(f32::total_cmp);
        assert_eq!(firsts, vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn group_larger_than_sample_is_rejected() {
        let sample = Sample::new(vec![series(0.0); 3], None).unwrap();
        assert!(select_group(&sample, 4, &mut RngStream::new(0, 0)).is_err());
        assert!(select_group(&sample, 0, &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn group_indices_distinct_for_pixel_sets() {
        let mut rng = RngStream::new(5, 9);
        for _ in 0..1000 {
            let mut idx = select_group_indices(100, 4, &mut rng).unwrap();
            idx.sort_unstable();
            idx.dedup();
            assert_eq!(idx.len(), 4);
            assert!(idx.iter().all(|&i| i < 100));
        }
    }

    #[test]
    fn group_selection_is_uniform() {
        // chi-square style per-cell bound: each index appears with p = g / n = 0.2
        let (n, g, draws) = (10usize, 2usize, 100_000usize);
        let mut counts = vec![0usize; n];
        let mut rng = RngStream::new(123, 0);
        for _ in 0..draws {
            for i in select_group_indices(n, g, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        let p = g as f64 / n as f64;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sigma, "count {c} vs {mean} +- {sigma}");
        }
    }
}
