//! Binary image-set format.
//!
//! ```text
//! offset  size  field
//!      0     8  magic  b"LROCDSET"
//!      8     4  version (u32, currently 1)
//!     12     8  image count (u64)
//!     20     4  width (u32)
//!     24     4  height (u32)
//!     28     4  J, number of signal locations (u32)
//!     32    32  reserved, zero
//! ```
//! followed by `count` records of `{label: u8, pixels: width·height × f32}`.
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

pub const DATASET_HEADER_LEN: usize = 64;
const MAGIC: &[u8; 8] = b"LROCDSET";
const VERSION: u32 = 1;

pub struct DatasetWriter<W: Write> {
    inner: W,
    width: usize,
    height: usize,
    locations: usize,
    expected: u64,
    written: u64,
}

impl DatasetWriter<BufWriter<File>> {
    pub fn create(
        path: &Path,
        count: u64,
        width: usize,
        height: usize,
        locations: usize,
    ) -> Result<Self> {
        let file = File::create(path)?;
        Self::new(BufWriter::new(file), count, width, height, locations)
    }
}

impl<W: Write> DatasetWriter<W> {
    pub fn new(mut inner: W, count: u64, width: usize, height: usize, locations: usize) -> Result<Self> {
        let mut header = [0u8; DATASET_HEADER_LEN];
        header[0..8].copy_from_slice(MAGIC);
        header[8..12].copy_from_slice(&VERSION.to_le_bytes());
        header[12..20].copy_from_slice(&count.to_le_bytes());
        header[20..24].copy_from_slice(&(width as u32).to_le_bytes());
        header[24..28].copy_from_slice(&(height as u32).to_le_bytes());
        header[28..32].copy_from_slice(&(locations as u32).to_le_bytes());
        inner.write_all(&header)?;
        Ok(Self {
            inner,
            width,
            height,
            locations,
            expected: count,
            written: 0,
        })
    }

    pub fn push(&mut self, label: usize, img: &ImageGrid) -> Result<()> {
        if img.width() != self.width || img.height() != self.height {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.width, self.height),
                got: format!("{}x{}", img.width(), img.height()),
            });
        }
        if label > self.locations {
            return Err(Error::LabelOutOfRange {
                label,
                max: self.locations,
            });
        }
        if self.written == self.expected {
            return Err(Error::InvalidParameter {
                name: "dataset",
                reason: format!("more than the declared {} records", self.expected),
            });
        }
        let mut buf = Vec::with_capacity(1 + 4 * img.len());
        buf.push(label as u8);
        for v in img.pixels() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.inner.write_all(&buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.written != self.expected {
            return Err(Error::InvalidParameter {
                name: "dataset",
                reason: format!("declared {} records, wrote {}", self.expected, self.written),
            });
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Streaming reader over a dataset file.
pub struct DatasetReader<R: Read> {
    inner: R,
    pub width: usize,
    pub height: usize,
    pub locations: usize,
    pub count: u64,
    read: u64,
    origin: PathBuf,
}

impl DatasetReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        Self::new(BufReader::new(file), path)
    }
}

impl<R: Read> DatasetReader<R> {
    pub fn new(mut inner: R, origin: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: origin.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut header = [0u8; DATASET_HEADER_LEN];
        inner
            .read_exact(&mut header)
            .map_err(|_| bad("truncated header"))?;
        if &header[0..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
        if u32_at(8) != VERSION {
            return Err(bad("unsupported version"));
        }
        let count = u64::from_le_bytes(header[12..20].try_into().unwrap());
        let width = u32_at(20) as usize;
        let height = u32_at(24) as usize;
        let locations = u32_at(28) as usize;
        if width == 0 || height == 0 {
            return Err(bad("empty image dimensions"));
        }
        Ok(Self {
            inner,
            width,
            height,
            locations,
            count,
            read: 0,
            origin: origin.to_path_buf(),
        })
    }

    pub fn next_record(&mut self) -> Result<Option<(usize, ImageGrid)>> {
        if self.read == self.count {
            return Ok(None);
        }
        let n = self.width * self.height;
        let mut buf = vec![0u8; 1 + 4 * n];
        self.inner.read_exact(&mut buf).map_err(|_| Error::Format {
            path: self.origin.clone(),
            reason: format!("truncated at record {}", self.read),
        })?;
        let label = buf[0] as usize;
        let pixels = buf[1..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        self.read += 1;
        Ok(Some((label, ImageGrid::from_vec(self.width, self.height, pixels)?)))
    }
}

/// A fully loaded dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub width: usize,
    pub height: usize,
    pub locations: usize,
    pub records: Vec<(usize, ImageGrid)>,
}

impl Dataset {
    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|(l, _)| *l).collect()
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageGrid> {
        self.records.iter().map(|(_, g)| g)
    }
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut reader = DatasetReader::open(path)?;
    let mut records = Vec::with_capacity(reader.count as usize);
    while let Some(r) = reader.next_record()? {
        records.push(r);
    }
    Ok(Dataset {
        width: reader.width,
        height: reader.height,
        locations: reader.locations,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn encode(records: &[(usize, ImageGrid)], w: usize, h: usize, j: usize) -> Vec<u8> {
        let mut writer = DatasetWriter::new(Vec::new(), records.len() as u64, w, h, j).unwrap();
        for (l, g) in records {
            writer.push(*l, g).unwrap();
        }
        writer.finish().unwrap()
    }

    #[test]
    fn header_layout() {
        let img = ImageGrid::from_vec(2, 1, vec![1.0, -2.5]).unwrap();
        let bytes = encode(&[(3, img)], 2, 1, 9);
        assert_eq!(bytes.len(), 64 + 1 + 8);
        assert_eq!(&bytes[0..8], b"LROCDSET");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[28..32].try_into().unwrap()), 9);
        assert!(bytes[32..64].iter().all(|&b| b == 0));
        assert_eq!(bytes[64], 3);
        assert_eq!(&bytes[65..69], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[69..73], &(-2.5f32).to_le_bytes());
    }

    #[test]
    fn writer_enforces_count_and_labels() {
        let img = ImageGrid::zeros(2, 2);
        let mut w = DatasetWriter::new(Vec::new(), 1, 2, 2, 9).unwrap();
        assert!(w.push(10, &img).is_err());
        assert!(w.push(1, &ImageGrid::zeros(3, 2)).is_err());
        w.push(1, &img).unwrap();
        assert!(w.push(1, &img).is_err());
        let short = DatasetWriter::new(Vec::new(), 2, 2, 2, 9).unwrap();
        assert!(short.finish().is_err());
    }

    #[test]
    fn truncated_file_is_reported() {
        let bytes = encode(&[(0, ImageGrid::zeros(4, 4))], 4, 4, 1);
        let cut = &bytes[..bytes.len() - 3];
        let mut r = DatasetReader::new(cut, Path::new("mem")).unwrap();
        assert!(matches!(r.next_record(), Err(Error::Format { .. })));
        assert!(DatasetReader::new(&bytes[..10], Path::new("mem")).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(labels in proptest::collection::vec(0usize..=9, 1..6),
                     seed in any::<u32>()) {
            let (w, h) = (3, 2);
            let records: Vec<(usize, ImageGrid)> = labels.iter().enumerate().map(|(i, &l)| {
                let px = (0..w * h).map(|k| (seed as f32) * 1e-3 - (i * k) as f32).collect();
                (l, ImageGrid::from_vec(w, h, px).unwrap())
            }).collect();
            let bytes = encode(&records, w, h, 9);
            let mut r = DatasetReader::new(bytes.as_slice(), Path::new("mem")).unwrap();
            let mut back = Vec::new();
            while let Some(rec) = r.next_record().unwrap() { back.push(rec); }
            prop_assert_eq!(back, records);
        }
    }
}
