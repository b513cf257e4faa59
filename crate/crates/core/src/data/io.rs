//! `TSCL` binary container.
//!
//! Layout (little-endian): magic `TSCL`, u32 version, u32 N, u32 N_ts, u32 T,
//! u32 C, u32 n_classes, u8 has_labels, 3 zero bytes, then N*N_ts*T*C f32
//! values in (sample, series, timestep, channel) order, then N u32 labels when
//! has_labels = 1.

use std::fs;
use std::path::Path;

use super::{Dataset, Sample, SplitTag, TimeSeries};
use crate::error::{bail, Error, Result};

pub const MAGIC: &[u8; 4] = b"TSCL";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 6 + 4;

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    if ds.is_empty() {
        bail!(Validation, "refusing to write an empty dataset");
    }
    let shape = ds.shape();
    let has_labels = ds.has_labels();
    if ds.split() != SplitTag::Unlabeled && !has_labels {
        bail!(Validation, "labeled split '{}' has unlabeled samples", ds.split());
    }
    let n_values = shape.n * shape.n_series * shape.len * shape.channels;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n_values + if has_labels { 4 * shape.n } else { 0 });
    out.extend_from_slice(MAGIC);
    for v in [VERSION, shape.n as u32, shape.n_series as u32, shape.len as u32, shape.channels as u32, ds.n_classes() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(has_labels as u8);
    out.extend_from_slice(&[0, 0, 0]);
    for sample in ds.samples() {
        for s in &sample.series {
            for v in s.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    if has_labels {
        for sample in ds.samples() {
            out.extend_from_slice(&sample.label.unwrap_or_default().to_le_bytes());
        }
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

/// Parses a container; `split` tags the result (the file does not store it).
pub fn decode_dataset(bytes: &[u8], split: SplitTag) -> Result<Dataset> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        bail!(Format, "bad magic, expected {:?}", std::str::from_utf8(MAGIC).unwrap());
    }
    if bytes.len() < HEADER_LEN {
        bail!(Corruption, "truncated header ({} bytes)", bytes.len());
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        bail!(Format, "unsupported version {version}");
    }
    let [n, n_series, len, channels, n_classes] = [8, 12, 16, 20, 24].map(|o| u32_at(bytes, o) as usize);
    let has_labels = match bytes[28] {
        0 => false,
        1 => true,
        f => bail!(Format, "has_labels flag must be 0 or 1, got {f}"),
    };
    if bytes[29..32] != [0, 0, 0] {
        bail!(Format, "non-zero header padding");
    }
    let n_values = n
        .checked_mul(n_series)
        .and_then(|x| x.checked_mul(len))
        .and_then(|x| x.checked_mul(channels))
        .ok_or_else(|| Error::Corruption("header shape overflows".into()))?;
    let expected = HEADER_LEN + 4 * n_values + if has_labels { 4 * n } else { 0 };
    if bytes.len() < expected {
        bail!(Corruption, "truncated payload: expected {expected} bytes, found {}", bytes.len());
    }
    if bytes.len() > expected {
        bail!(Corruption, "{} trailing bytes after payload", bytes.len() - expected);
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + 4 * n_values];
    let mut floats = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    let label_base = HEADER_LEN + 4 * n_values;
    let per_series = len * channels;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let series = (0..n_series)
            .map(|_| TimeSeries::new(len, channels, floats.by_ref().take(per_series).collect()))
            .collect::<Result<Vec<_>>>()?;
        let label = has_labels.then(|| u32_at(bytes, label_base + 4 * i));
        samples.push(Sample::new(series, label)?);
    }
    let split = if has_labels { split } else { SplitTag::Unlabeled };
    Dataset::new(samples, n_classes, split)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_dataset(ds)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a container. Labeled files come back tagged [`SplitTag::Train`];
/// use [`Dataset::with_split`] to retag.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let split = SplitTag::Train;
    decode_dataset(&bytes, split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RngStream;
    use rand::Rng;

    fn random_dataset(rng: &mut RngStream, labeled: bool) -> Dataset {
        let n = rng.gen_range(1..5);
        let n_series = rng.gen_range(1..4);
        let len = rng.gen_range(8..14);
        let channels = rng.gen_range(1..4);
        let n_classes = rng.gen_range(1..6);
        let samples = (0..n)
            .map(|_| {
                let series = (0..n_series)
                    .map(|_| TimeSeries::new(len, channels, (0..len * channels).map(|_| rng.gen::<f32>() * 4.0 - 2.0).collect()).unwrap())
                    .collect();
                let label = labeled.then(|| rng.gen_range(0..n_classes as u32));
                Sample::new(series, label).unwrap()
            })
            .collect();
        let split = if labeled { SplitTag::Train } else { SplitTag::Unlabeled };
        Dataset::new(samples, n_classes, split).unwrap()
    }

    #[test]
    fn header_layout() {
        let series = TimeSeries::new(8, 1, (0..8).map(|v| v as f32).collect()).unwrap();
        let ds = Dataset::new(
            vec![Sample::new(vec![series.clone()], Some(0)).unwrap(), Sample::new(vec![series], Some(1)).unwrap()],
            2,
            SplitTag::Train,
        )
        .unwrap();
        let bytes = encode_dataset(&ds).unwrap();
        assert_eq!(&bytes[..4], b"TSCL");
        assert_eq!(u32_at(&bytes, 4), 1);
        assert_eq!([8, 12, 16, 20, 24].map(|o| u32_at(&bytes, o)), [2, 1, 8, 1, 2]);
        assert_eq!(bytes[28], 1);
        assert_eq!(bytes.len(), HEADER_LEN + 2 * 8 * 4 + 2 * 4);
        let back = decode_dataset(&bytes, SplitTag::Train).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn unlabeled_split_writes_zero_flag() {
        let mut rng = RngStream::new(0, 0);
        let ds = random_dataset(&mut rng, false);
        let bytes = encode_dataset(&ds).unwrap();
        assert_eq!(bytes[28], 0);
        assert_eq!(decode_dataset(&bytes, SplitTag::Train).unwrap().split(), SplitTag::Unlabeled);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = RngStream::new(42, 0);
        for i in 0..100 {
            let ds = random_dataset(&mut rng, i % 2 == 0);
            let bytes = encode_dataset(&ds).unwrap();
            let back = decode_dataset(&bytes, ds.split()).unwrap();
            assert_eq!(encode_dataset(&back).unwrap(), bytes);
            for (a, b) in ds.samples().iter().zip(back.samples()) {
                for (x, y) in a.series.iter().zip(&b.series) {
                    let xb: Vec<u32> = x.values().iter().map(|v| v.to_bits()).collect();
                    let yb: Vec<u32> = y.values().iter().map(|v| v.to_bits()).collect();
                    assert_eq!(xb, yb);
                }
                assert_eq!(a.label, b.label);
            }
        }
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let mut rng = RngStream::new(1, 0);
        let mut bytes = encode_dataset(&random_dataset(&mut rng, true)).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_dataset(&bytes, SplitTag::Train), Err(Error::Format(_))));
    }

    #[test]
    fn bad_version_is_a_format_error() {
        let mut rng = RngStream::new(1, 0);
        let mut bytes = encode_dataset(&random_dataset(&mut rng, true)).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode_dataset(&bytes, SplitTag::Train), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_is_corruption() {
        let mut rng = RngStream::new(2, 0);
        let bytes = encode_dataset(&random_dataset(&mut rng, true)).unwrap();
        for cut in [bytes.len() - 1, HEADER_LEN + 3, 20] {
            assert!(matches!(decode_dataset(&bytes[..cut], SplitTag::Train), Err(Error::Corruption(_))), "cut {cut}");
        }
    }

    #[test]
    fn out_of_range_label_is_validation_error() {
        let mut rng = RngStream::new(3, 0);
        let ds = random_dataset(&mut rng, true);
        let mut bytes = encode_dataset(&ds).unwrap();
        let at = bytes.len() - 4;
        bytes[at..].copy_from_slice(&(ds.n_classes() as u32).to_le_bytes());
        assert!(matches!(decode_dataset(&bytes, SplitTag::Train), Err(Error::Validation(_))));
    }

    #[test]
    fn empty_dataset_is_refused() {
        let ds = Dataset::new(vec![], 3, SplitTag::Unlabeled).unwrap();
        assert!(matches!(encode_dataset(&ds), Err(Error::Validation(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = RngStream::new(4, 0);
        let ds = random_dataset(&mut rng, true);
        let path = dir.path().join("train.tscl");
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);
        assert!(matches!(load_dataset(dir.path().join("missing.tscl")), Err(Error::Io { .. })));
    }
}
