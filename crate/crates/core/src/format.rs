//! TARD binary container shared by training repositories and query sets.
//!
//! Little-endian layout:
//!
//! ```text
//! "TARD" | version u8 = 1 | kind u8 (0 repository, 1 queryset)
//! L u32 | N u32 | C u32 | L × dim u32
//! N × (sample_id u32, true_label u16, predicted_label u16 [0xFFFF = absent],
//!      softmax_confidence f32 [NaN = absent])
//! for each layer: N × dim f32, row-major
//! CRC32 (IEEE) of every preceding byte
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{
    ActivationTrace, ClassId, Dataset, DatasetHeader, DatasetKind, SampleId, MAX_CLASSES,
};

pub const MAGIC: [u8; 4] = *b"TARD";
pub const VERSION: u8 = 1;
const NO_PREDICTION: u16 = 0xFFFF;

/// Per-sample metadata record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleMeta {
    pub sample_id: SampleId,
    pub true_label: ClassId,
    pub predicted_label: Option<ClassId>,
    pub softmax_confidence: Option<f32>,
}

/// Direct image of a TARD file: metadata plus layer-major activation matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTard {
    pub kind: DatasetKind,
    pub num_classes: usize,
    pub dims: Vec<usize>,
    pub meta: Vec<SampleMeta>,
    /// `layers[l]` holds `N × dims[l]` values, row-major.
    pub layers: Vec<Vec<f32>>,
}

impl RawTard {
    pub fn num_samples(&self) -> usize {
        self.meta.len()
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader::new(self.kind, self.meta.len(), self.num_classes, &self.dims)
    }

    pub fn from_dataset(ds: &Dataset) -> Self {
        let dims = ds.header.dims();
        let meta = ds
            .traces
            .iter()
            .map(|t| SampleMeta {
                sample_id: t.sample_id,
                true_label: t.true_label,
                predicted_label: t.predicted_label,
                softmax_confidence: t.softmax_confidence,
            })
            .collect();
        let layers = dims
            .iter()
            .enumerate()
            .map(|(l, &d)| {
                let mut m = Vec::with_capacity(ds.traces.len() * d);
                for t in &ds.traces {
                    m.extend_from_slice(&t.activations[l]);
                }
                m
            })
            .collect();
        Self {
            kind: ds.header.kind,
            num_classes: ds.header.num_classes,
            dims,
            meta,
            layers,
        }
    }

    /// Converts to the trace-major model, validating every trace.
    pub fn into_dataset(self) -> Result<Dataset> {
        let header = self.header();
        let traces = self
            .meta
            .iter()
            .enumerate()
            .map(|(i, m)| ActivationTrace {
                sample_id: m.sample_id,
                activations: self
                    .dims
                    .iter()
                    .zip(&self.layers)
                    .map(|(&d, layer)| layer[i * d..(i + 1) * d].to_vec())
                    .collect(),
                true_label: m.true_label,
                predicted_label: m.predicted_label,
                softmax_confidence: m.softmax_confidence,
            })
            .collect();
        Dataset::new(header, traces)
    }
}

struct CrcWriter<W> {
    inner: W,
    hasher: crc32fast::Hasher,
}

impl<W: Write> Write for CrcWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

struct CrcReader<R> {
    inner: R,
    hasher: crc32fast::Hasher,
}

impl<R: Read> CrcReader<R> {
    fn read_exact_or_truncated(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(map_eof)?;
        self.hasher.update(buf);
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.read_exact_or_truncated(&mut b)?;
        Ok(b[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let mut b = [0u8; 2];
        self.read_exact_or_truncated(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact_or_truncated(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn f32(&mut self) -> Result<f32> {
        let mut b = [0u8; 4];
        self.read_exact_or_truncated(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }
}

fn map_eof(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::TruncatedFile
    } else {
        Error::Io(e)
    }
}

fn to_u32(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::InvalidHeader(format!("{what} {value} exceeds u32")))
}

/// Serializes a raw TARD image. Structural consistency is checked, trace
/// semantics are not.
pub fn write_raw<W: Write>(writer: W, raw: &RawTard) -> Result<()> {
    let n = raw.meta.len();
    if raw.layers.len() != raw.dims.len() {
        return Err(Error::InvalidHeader(
            "layer matrices do not match layer count".into(),
        ));
    }
    for (l, (&d, m)) in raw.dims.iter().zip(&raw.layers).enumerate() {
        if m.len() != n * d {
            return Err(Error::DimensionMismatch {
                sample_id: None,
                layer: Some(l),
                expected: n * d,
                found: m.len(),
            });
        }
    }
    let mut w = CrcWriter {
        inner: writer,
        hasher: crc32fast::Hasher::new(),
    };
    w.write_all(&MAGIC)?;
    w.write_all(&[VERSION, raw.kind.to_byte()])?;
    w.write_all(&to_u32(raw.dims.len(), "layer count")?.to_le_bytes())?;
    w.write_all(&to_u32(n, "sample count")?.to_le_bytes())?;
    w.write_all(&to_u32(raw.num_classes, "class count")?.to_le_bytes())?;
    for &d in &raw.dims {
        w.write_all(&to_u32(d, "layer width")?.to_le_bytes())?;
    }
    for m in &raw.meta {
        w.write_all(&m.sample_id.to_le_bytes())?;
        w.write_all(&m.true_label.to_le_bytes())?;
        w.write_all(&m.predicted_label.unwrap_or(NO_PREDICTION).to_le_bytes())?;
        w.write_all(&m.softmax_confidence.unwrap_or(f32::NAN).to_le_bytes())?;
    }
    let mut buf = Vec::new();
    for layer in &raw.layers {
        for chunk in layer.chunks(16 * 1024) {
            buf.clear();
            buf.extend(chunk.iter().flat_map(|v| v.to_le_bytes()));
            w.write_all(&buf)?;
        }
    }
    let crc = w.hasher.clone().finalize();
    w.inner.write_all(&crc.to_le_bytes())?;
    w.inner.flush()?;
    Ok(())
}

/// Parses a TARD image, verifying magic, version, length and checksum.
pub fn read_raw<R: Read>(reader: R) -> Result<RawTard> {
    let mut r = CrcReader {
        inner: reader,
        hasher: crc32fast::Hasher::new(),
    };
    let mut magic = [0u8; 4];
    r.read_exact_or_truncated(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let kind_byte = r.u8()?;
    let kind = DatasetKind::from_byte(kind_byte)
        .ok_or_else(|| Error::InvalidHeader(format!("unknown kind byte {kind_byte}")))?;
    let num_layers = r.u32()? as usize;
    let num_samples = r.u32()? as usize;
    let num_classes = r.u32()? as usize;
    if num_layers == 0 || num_samples == 0 || !(2..=MAX_CLASSES).contains(&num_classes) {
        return Err(Error::InvalidHeader(format!(
            "L={num_layers}, N={num_samples}, C={num_classes} (need L ≥ 1, N ≥ 1, 2 ≤ C ≤ {MAX_CLASSES})"
        )));
    }
    let dims = (0..num_layers)
        .map(|_| r.u32().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    if let Some(l) = dims.iter().position(|&d| d == 0) {
        return Err(Error::InvalidHeader(format!("layer {l} has zero width")));
    }
    let mut meta = Vec::with_capacity(num_samples.min(1 << 20));
    for _ in 0..num_samples {
        let sample_id = r.u32()?;
        let true_label = r.u16()?;
        let predicted = r.u16()?;
        let confidence = r.f32()?;
        meta.push(SampleMeta {
            sample_id,
            true_label,
            predicted_label: (predicted != NO_PREDICTION).then_some(predicted),
            softmax_confidence: (!confidence.is_nan()).then_some(confidence),
        });
    }
    let mut layers = Vec::with_capacity(num_layers);
    let mut buf = vec![0u8; 64 * 1024];
    for &d in &dims {
        let total = num_samples
            .checked_mul(d)
            .ok_or_else(|| Error::InvalidHeader("layer matrix size overflows".into()))?;
        let mut m = Vec::with_capacity(total.min(1 << 26));
        let mut remaining = total;
        while remaining > 0 {
            let count = remaining.min(buf.len() / 4);
            let bytes = &mut buf[..count * 4];
            r.read_exact_or_truncated(bytes)?;
            m.extend(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
            );
            remaining -= count;
        }
        layers.push(m);
    }
    let computed = r.hasher.clone().finalize();
    let mut crc = [0u8; 4];
    r.inner.read_exact(&mut crc).map_err(map_eof)?;
    let stored = u32::from_le_bytes(crc);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let mut probe = [0u8; 1];
    if r.inner.read(&mut probe)? != 0 {
        return Err(Error::TrailingBytes);
    }
    Ok(RawTard {
        kind,
        num_classes,
        dims,
        meta,
        layers,
    })
}

pub fn write_dataset<W: Write>(writer: W, ds: &Dataset) -> Result<()> {
    write_raw(writer, &RawTard::from_dataset(ds))
}

pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    read_raw(reader)?.into_dataset()
}

pub fn save_raw(path: impl AsRef<Path>, raw: &RawTard) -> Result<()> {
    let file = File::create(path)?;
    write_raw(BufWriter::new(file), raw)
}

pub fn load_raw(path: impl AsRef<Path>) -> Result<RawTard> {
    let file = File::open(path)?;
    read_raw(BufReader::new(file))
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    save_raw(path, &RawTard::from_dataset(ds))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    load_raw(path)?.into_dataset()
}
