//! `LTDS` binary dataset format and the CSV sample table.
//!
//! Binary layout, all little-endian:
//!
//! | field    | type           |
//! |----------|----------------|
//! | magic    | `b"LTDS"`      |
//! | version  | u32 (= 1)      |
//! | N        | u64            |
//! | d        | u32            |
//! | K        | u32            |
//! | labels   | N × u32        |
//! | features | N·d × f32, row-major |

use std::fs;
use std::path::Path;

use crate::data::LongTailDataset;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"LTDS";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 4;

pub fn encode_ltds(dataset: &LongTailDataset) -> Vec<u8> {
    let n = dataset.len();
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * n * (1 + dataset.dim()));
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(dataset.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(dataset.num_classes() as u32).to_le_bytes());
    for &y in dataset.labels() {
        buf.extend_from_slice(&(y as u32).to_le_bytes());
    }
    for &v in dataset.features() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, needed: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < needed {
            return Err(Error::Truncated {
                offset: self.pos,
                needed,
                len: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + needed];
        self.pos += needed;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("slice length"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}

pub fn decode_ltds(bytes: &[u8]) -> Result<LongTailDataset> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.array()?;
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: VERSION,
        });
    }
    let n = usize::try_from(r.u64()?).map_err(|_| Error::Malformed {
        location: "byte offset 8".into(),
        message: "sample count does not fit in memory".into(),
    })?;
    let d = r.u32()? as usize;
    let k = r.u32()? as usize;
    if k == 0 {
        return Err(Error::Malformed {
            location: "byte offset 20".into(),
            message: "class count is zero".into(),
        });
    }

    let payload = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_add(n))
        .and_then(|w| w.checked_mul(4))
        .ok_or_else(|| Error::Malformed {
            location: "byte offset 8".into(),
            message: "payload size overflows".into(),
        })?;
    if bytes.len() - r.pos < payload {
        return Err(Error::Truncated {
            offset: r.pos,
            needed: payload,
            len: bytes.len(),
        });
    }

    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let offset = r.pos;
        let y = r.u32()? as usize;
        if y >= k {
            return Err(Error::Malformed {
                location: format!("byte offset {offset} (label of sample {i})"),
                message: format!("label {y} out of range for {k} classes"),
            });
        }
        labels.push(y);
    }
    let mut features = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        features.push(f32::from_le_bytes(r.array()?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Malformed {
            location: format!("byte offset {}", r.pos),
            message: format!("{} trailing bytes after payload", bytes.len() - r.pos),
        });
    }
    LongTailDataset::new(features, labels, d, k, 0)
}

pub fn write_dataset(path: impl AsRef<Path>, dataset: &LongTailDataset) -> Result<()> {
    fs::write(path, encode_ltds(dataset))?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<LongTailDataset> {
    decode_ltds(&fs::read(path)?)
}

/// CSV with header `label,f_0,...,f_{d-1}` and one row per sample.
pub fn write_csv(path: impl AsRef<Path>, dataset: &LongTailDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["label".to_string()];
    header.extend((0..dataset.dim()).map(|j| format!("f_{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..dataset.len() {
        let mut rec = vec![dataset.labels()[i].to_string()];
        rec.extend(dataset.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a CSV sample table. `num_classes` defaults to the largest label + 1.
pub fn read_csv(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<LongTailDataset> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = r.headers().map_err(csv_err)?.clone();
    if headers.get(0) != Some("label") {
        return Err(Error::Malformed {
            location: "csv header".into(),
            message: "first column must be `label`".into(),
        });
    }
    let d = headers.len() - 1;
    let mut labels = Vec::new();
    let mut features = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = row + 2;
        if rec.len() != d + 1 {
            return Err(Error::Malformed {
                location: format!("csv line {line}"),
                message: format!("expected {} fields, found {}", d + 1, rec.len()),
            });
        }
        let bad = |col: usize, what: &str| Error::Malformed {
            location: format!("csv line {line}, column {}", col + 1),
            message: format!("invalid {what}"),
        };
        labels.push(rec[0].trim().parse::<usize>().map_err(|_| bad(0, "label"))?);
        for (j, field) in rec.iter().enumerate().skip(1) {
            features.push(field.trim().parse::<f32>().map_err(|_| bad(j, "feature"))?);
        }
    }
    let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    LongTailDataset::new(features, labels, d, k, 0)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Malformed {
        location: e
            .position()
            .map(|p| format!("csv line {}", p.line()))
            .unwrap_or_else(|| "csv".into()),
        message: e.to_string(),
    }
}
