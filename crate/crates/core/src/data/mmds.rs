//! `MMDS1` dataset files.
//!
//! Layout, little-endian: magic `MMDS1`, `u32` sensor count, per sensor a
//! `u16` id length, the UTF-8 id and a `u32` width, then `u32` sample count,
//! `u32` class count, `u32` labels, and each sensor's samples as row-major
//! `f32` values in declaration order.

use std::path::Path;

use super::{MultimodalDataset, SensorData};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 5] = b"MMDS1";

pub fn encode_dataset(ds: &MultimodalDataset) -> Result<Vec<u8>> {
    let sensors = ds.sensors();
    let payload: usize = sensors.iter().map(|s| s.data.len() * 4).sum();
    let mut buf = Vec::with_capacity(64 + ds.len() * 4 + payload);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(sensors.len() as u32).to_le_bytes());
    for s in sensors {
        let id = s.id.as_bytes();
        let len = u16::try_from(id.len())
            .map_err(|_| Error::Usage(format!("sensor id of {} bytes", id.len())))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(id);
        buf.extend_from_slice(&(s.dim() as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(ds.n_classes() as u32).to_le_bytes());
    for &l in ds.labels() {
        buf.extend_from_slice(&(l as u32).to_le_bytes());
    }
    for s in sensors {
        for &v in s.data.values() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos as u64,
                message: format!(
                    "truncated {what}: need {n} bytes, {} remain",
                    self.buf.len() - self.pos
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
}

pub fn decode_dataset(buf: &[u8]) -> Result<MultimodalDataset> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(5, "magic")? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "bad magic, expected MMDS1".into(),
        });
    }
    let n_sensors = r.u32("sensor count")? as usize;
    if n_sensors == 0 {
        return Err(Error::Parse {
            offset: 5,
            message: "zero sensors".into(),
        });
    }
    let mut header = Vec::with_capacity(n_sensors.min(64));
    for k in 0..n_sensors {
        let len = r.u16("sensor id length")? as usize;
        let at = r.pos as u64;
        let id = std::str::from_utf8(r.take(len, "sensor id")?)
            .map_err(|_| Error::Parse {
                offset: at,
                message: format!("sensor {k} id is not UTF-8"),
            })?
            .to_owned();
        let at = r.pos as u64;
        let dim = r.u32("sensor width")? as usize;
        if dim == 0 {
            return Err(Error::Parse {
                offset: at,
                message: format!("sensor {id} has zero width"),
            });
        }
        header.push((id, dim));
    }
    let n = r.u32("sample count")? as usize;
    let c = r.u32("class count")? as usize;
    let label_bytes = r.take(n.saturating_mul(4), "labels")?;
    let labels: Vec<usize> = label_bytes
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .collect();
    let mut sensors = Vec::with_capacity(header.len());
    for (id, dim) in header {
        let what = format!("samples of sensor {id}");
        let bytes = r.take(n.saturating_mul(dim).saturating_mul(4), &what)?;
        let values = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        sensors.push(SensorData {
            id,
            data: Tensor::matrix(n, dim, values)?,
        });
    }
    if r.pos != buf.len() {
        return Err(Error::Parse {
            offset: r.pos as u64,
            message: format!("{} trailing bytes", buf.len() - r.pos),
        });
    }
    let ds = MultimodalDataset::new(sensors, labels, c)?;
    ds.check_unit_range()?;
    Ok(ds)
}

pub fn save_binary(ds: &MultimodalDataset, path: &Path) -> Result<()> {
    let bytes = encode_dataset(ds)?;
    std::fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

pub fn load_binary(path: &Path) -> Result<MultimodalDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    decode_dataset(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_bytes() -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"MMDS1");
        b.extend_from_slice(&2u32.to_le_bytes());
        b.extend_from_slice(&3u16.to_le_bytes());
        b.extend_from_slice(b"hsi");
        b.extend_from_slice(&2u32.to_le_bytes());
        b.extend_from_slice(&5u16.to_le_bytes());
        b.extend_from_slice(b"lidar");
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&4u32.to_le_bytes());
        b.extend_from_slice(&2u32.to_le_bytes());
        for l in [0u32, 1, 1, 0] {
            b.extend_from_slice(&l.to_le_bytes());
        }
        for v in [0.0f32, 0.25, 0.5, 0.75, 1.0, 0.125, 0.375, 0.625] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for v in [0.1f32, 0.2, 0.3, 0.4] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn hand_built_file_parses() {
        let ds = decode_dataset(&fixture_bytes()).unwrap();
        assert_eq!(ds.sensor_ids(), vec!["hsi", "lidar"]);
        assert_eq!(ds.labels(), &[0, 1, 1, 0]);
        assert_eq!(ds.n_classes(), 2);
        assert_eq!(ds.sensor("hsi").unwrap().data.row(2), &[1.0, 0.125]);
        assert_eq!(ds.sensor("lidar").unwrap().data.row(1), &[0.2f32 as f64]);
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = fixture_bytes();
        let ds = decode_dataset(&bytes).unwrap();
        assert_eq!(encode_dataset(&ds).unwrap(), bytes);
    }

    #[test]
    fn truncation_names_section_and_offset() {
        let bytes = fixture_bytes();
        let err = decode_dataset(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            Error::Parse { offset, message } => {
                assert!(message.contains("samples of sensor lidar"), "{message}");
                assert_eq!(offset, (bytes.len() - 16) as u64);
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = decode_dataset(&bytes[..20]).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn bad_magic_and_bad_label() {
        let mut bytes = fixture_bytes();
        bytes[0] = b'X';
        assert!(matches!(decode_dataset(&bytes), Err(Error::Parse { offset: 0, .. })));

        let mut bytes = fixture_bytes();
        // first label sits after the 5+4+(2+3+4)+(2+5+4)+4+4 byte header
        let at = 5 + 4 + 9 + 11 + 8;
        bytes[at..at + 4].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(decode_dataset(&bytes), Err(Error::Validation(_))));
    }
}
