//! The `RFEK1` binary field format and CSV export.
//!
//! Layout: the 6-byte magic `"RFEK1\n"`, then `rows`, `cols`, `channels` as
//! little-endian `u32`, then `rows * cols * channels` little-endian `f64`
//! values, row-major with the channel index fastest.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::adjoint::ObservationSet;
use crate::error::{Error, Result};
use crate::fields::{DriftField, Grid2, MetricField, ScalarField, SourceMask};

pub const MAGIC: &[u8; 6] = b"RFEK1\n";
const HEADER_LEN: usize = 6 + 12;

/// Decoded contents of a field file.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldData {
    pub rows: usize,
    pub cols: usize,
    pub channels: Vec<ScalarField>,
}

impl FieldData {
    pub fn expect_channels(&self, n: usize, what: &str) -> Result<()> {
        if self.channels.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{what} file must have {n} channels, found {}",
                self.channels.len()
            )));
        }
        Ok(())
    }
}

pub fn encode_field(channels: &[&ScalarField]) -> Result<Vec<u8>> {
    let first = channels
        .first()
        .ok_or_else(|| Error::DimensionMismatch("no channels to write".into()))?;
    let (rows, cols) = first.dims();
    if let Some(bad) = channels.iter().find(|c| c.dims() != (rows, cols)) {
        return Err(Error::DimensionMismatch(format!(
            "channel is {}x{}, expected {rows}x{cols}",
            bad.rows(),
            bad.cols()
        )));
    }
    let header_dim = |n: usize| {
        u32::try_from(n).map_err(|_| Error::DimensionMismatch(format!("dimension {n} exceeds u32")))
    };
    let n = rows * cols;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * n * channels.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&header_dim(rows)?.to_le_bytes());
    out.extend_from_slice(&header_dim(cols)?.to_le_bytes());
    out.extend_from_slice(&header_dim(channels.len())?.to_le_bytes());
    for i in 0..n {
        for ch in channels {
            out.extend_from_slice(&ch[i].to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_field(bytes: &[u8]) -> Result<FieldData> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedFile {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (rows, cols, nch) = (word(6), word(10), word(14));
    if rows == 0 || cols == 0 || nch == 0 {
        return Err(Error::ZeroDimension);
    }
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(nch))
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::DimensionMismatch("header dimensions overflow".into()))?;
    if bytes.len() < expected {
        return Err(Error::TruncatedFile {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::DimensionMismatch(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        )));
    }
    let n = rows * cols;
    let mut data = vec![Vec::with_capacity(n); nch];
    for (k, chunk) in bytes[HEADER_LEN..].chunks_exact(8).enumerate() {
        data[k % nch].push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let channels = data
        .into_iter()
        .map(|v| Grid2::from_vec(rows, cols, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(FieldData {
        rows,
        cols,
        channels,
    })
}

pub fn read_field(path: impl AsRef<Path>) -> Result<FieldData> {
    decode_field(&fs::read(path)?)
}

pub fn write_field(path: impl AsRef<Path>, channels: &[&ScalarField]) -> Result<()> {
    let bytes = encode_field(channels)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Writes one channel as `rows` lines of comma-separated values. Values use
/// the shortest representation that parses back to the same double.
pub fn export_csv(field: &ScalarField, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in 0..field.rows() {
        for c in 0..field.cols() {
            if c > 0 {
                w.write_all(b",")?;
            }
            write!(w, "{}", field[(r, c)])?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metric(path: impl AsRef<Path>) -> Result<MetricField> {
    let data = read_field(path)?;
    data.expect_channels(3, "metric")?;
    let mut ch = data.channels.into_iter();
    MetricField::new(ch.next().unwrap(), ch.next().unwrap(), ch.next().unwrap())
}

pub fn read_drift(path: impl AsRef<Path>) -> Result<DriftField> {
    let data = read_field(path)?;
    data.expect_channels(2, "drift")?;
    let mut ch = data.channels.into_iter();
    DriftField::new(ch.next().unwrap(), ch.next().unwrap())
}

/// Source files hold one channel; any nonzero value marks a source.
pub fn read_sources(path: impl AsRef<Path>) -> Result<SourceMask> {
    let data = read_field(path)?;
    data.expect_channels(1, "source")?;
    SourceMask::new(data.channels[0].map(|&v| v != 0.0))
}

pub fn write_metric(path: impl AsRef<Path>, g: &MetricField) -> Result<()> {
    write_field(path, &g.channels())
}

pub fn write_drift(path: impl AsRef<Path>, b: &DriftField) -> Result<()> {
    write_field(path, &b.channels())
}

pub fn write_sources(path: impl AsRef<Path>, src: &SourceMask) -> Result<()> {
    let ch = src.grid().map(|&s| if s { 1.0 } else { 0.0 });
    write_field(path, &[&ch])
}

/// Observation bundles are 4-channel files: source mask, observed mask,
/// observed times (zero off the mask), and a reserved channel of zeros.
pub fn write_observations(path: impl AsRef<Path>, obs: &ObservationSet) -> Result<()> {
    let (rows, cols) = obs.sources.dims();
    let src = obs.sources.grid().map(|&s| if s { 1.0 } else { 0.0 });
    let mut mask = Grid2::filled(rows, cols, 0.0);
    let mut times = Grid2::filled(rows, cols, 0.0);
    for (&n, &t) in obs.nodes.iter().zip(&obs.times) {
        mask[n] = 1.0;
        times[n] = t;
    }
    let reserved = Grid2::filled(rows, cols, 0.0);
    write_field(path, &[&src, &mask, &times, &reserved])
}

pub fn read_observations(path: impl AsRef<Path>) -> Result<ObservationSet> {
    let data = read_field(path)?;
    data.expect_channels(4, "observation")?;
    let sources = SourceMask::new(data.channels[0].map(|&v| v != 0.0))?;
    let nodes: Vec<usize> = (0..data.rows * data.cols)
        .filter(|&i| data.channels[1][i] != 0.0)
        .collect();
    let times = nodes.iter().map(|&i| data.channels[2][i]).collect();
    ObservationSet::new(sources, nodes, times)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_round_trip() {
        let f = Grid2::from_vec(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let back = decode_field(&encode_field(&[&f]).unwrap()).unwrap();
        assert_eq!((back.rows, back.cols), (2, 2));
        assert_eq!(back.channels[0][(0, 1)], 1.0);
        assert_eq!(back.channels[0][(1, 0)], 2.0);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_field(&[&Grid2::filled(2, 2, 1.0)]).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_field(&bytes), Err(Error::BadMagic)));
        assert!(matches!(decode_field(b"XXXX"), Err(Error::BadMagic)));
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode_field(&[&Grid2::filled(3, 3, 1.0)]).unwrap();
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(decode_field(cut), Err(Error::TruncatedFile { .. })));
        assert!(matches!(decode_field(&bytes[..10]), Err(Error::TruncatedFile { .. })));
    }

    #[test]
    fn zero_dimension() {
        let mut bytes = MAGIC.to_vec();
        for v in [0u32, 4, 1] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(decode_field(&bytes), Err(Error::ZeroDimension)));
    }

    #[test]
    fn constant_field_payload_words() {
        let f = Grid2::filled(4, 4, 1.0);
        let bytes = encode_field(&[&f]).unwrap();
        assert_eq!(bytes.len(), 6 + 12 + 8 * 16);
        let one = 1.0f64.to_le_bytes();
        for w in bytes[18..].chunks_exact(8) {
            assert_eq!(w, one);
        }
    }

    #[test]
    fn empty_channel_list_is_rejected() {
        assert!(matches!(encode_field(&[]), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn mismatched_channels_are_rejected() {
        let a = Grid2::filled(2, 2, 0.0);
        let b = Grid2::filled(2, 3, 0.0);
        assert!(matches!(encode_field(&[&a, &b]), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn channel_index_is_fastest() {
        let a = Grid2::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let b = Grid2::from_vec(1, 2, vec![10.0, 20.0]).unwrap();
        let bytes = encode_field(&[&a, &b]).unwrap();
        let vals: Vec<f64> = bytes[18..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(vals, vec![1.0, 10.0, 2.0, 20.0]);
    }

    #[test]
    fn observation_bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("obs.rfek");
        let src = SourceMask::point(3, 4, 1, 1).unwrap();
        let obs = ObservationSet::new(src, vec![0, 7, 11], vec![1.25, 0.5, 3.0]).unwrap();
        write_observations(&p, &obs).unwrap();
        let back = read_observations(&p).unwrap();
        assert_eq!(back.nodes, obs.nodes);
        assert_eq!(back.times, obs.times);
        assert_eq!(back.sources.indices(), vec![5]);
        assert_eq!(read_field(&p).unwrap().channels.len(), 4);
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        export_csv(&Grid2::filled(1, 1, 1.5), &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "1.5\n");
        export_csv(&Grid2::filled(2, 3, 0.0), &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "0,0,0\n0,0,0\n");
    }
}
