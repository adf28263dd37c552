//! Binary trace container and experiment artifact files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 0   magic "PSVC"
//! 4   version u16 = 1
//! 6   flags u16, bit 0 = key present
//! 8   trace count T u32
//! 12  sample count S u32
//! 16  sample format u8, 0 = binary32
//! 17  7 reserved zero bytes
//! 24  key [16]                  if flag bit 0
//! ..  meta length u32, meta JSON (UTF-8 object of strings)
//! ..  T records: plaintext[16] ciphertext[16] S × f32
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use thiserror::Error;

use crate::aes::{AesBlock, AesKey};
use crate::cpa::CorrelationMatrix;
use crate::leakdown::ExperimentReport;
use crate::traceset::TraceSet;

pub const MAGIC: [u8; 4] = *b"PSVC";
pub const VERSION: u16 = 1;
pub const FLAG_KEY: u16 = 1;
pub const FORMAT_F32: u8 = 0;
pub const FIXED_HEADER_LEN: usize = 24;

#[derive(Debug, Error)]
pub enum TraceIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad magic {0:02x?}, not a trace container")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0} (this build reads version {VERSION})")]
    UnsupportedVersion(u16),
    #[error("unknown sample format {0}")]
    UnsupportedSampleFormat(u8),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("file truncated: {0}")]
    TruncatedFile(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
}

impl TraceIoError {
    fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Serializes a set into the container format.
pub fn encode(ts: &TraceSet) -> Vec<u8> {
    let mut buf = Vec::new();
    write_to(ts, &mut buf).expect("writing to memory");
    buf
}

pub fn write_to<W: Write>(ts: &TraceSet, mut w: W) -> io::Result<()> {
    let t = u32::try_from(ts.trace_count())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "more than u32::MAX traces"))?;
    let s = u32::try_from(ts.sample_count())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "more than u32::MAX samples"))?;
    let meta = serde_json::to_vec(ts.meta()).expect("string map serializes");
    let meta_len = u32::try_from(meta.len())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "metadata too large"))?;

    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let flags = if ts.key_known() { FLAG_KEY } else { 0 };
    w.write_all(&flags.to_le_bytes())?;
    w.write_all(&t.to_le_bytes())?;
    w.write_all(&s.to_le_bytes())?;
    w.write_all(&[FORMAT_F32])?;
    w.write_all(&[0u8; 7])?;
    if let Some(k) = ts.key() {
        w.write_all(k.as_bytes())?;
    }
    w.write_all(&meta_len.to_le_bytes())?;
    w.write_all(&meta)?;

    let traces = ts.traces();
    let mut row = Vec::with_capacity(ts.sample_count() * 4);
    for i in 0..ts.trace_count() {
        w.write_all(ts.plaintexts()[i].as_bytes())?;
        w.write_all(ts.ciphertexts()[i].as_bytes())?;
        row.clear();
        for v in traces.row(i) {
            row.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&row)?;
    }
    Ok(())
}

pub fn write_traceset(ts: &TraceSet, path: impl AsRef<Path>) -> Result<(), TraceIoError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| TraceIoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_to(ts, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| TraceIoError::io(path, e))
}

/// Reads from a byte slice.
pub fn decode(bytes: &[u8]) -> Result<TraceSet, TraceIoError> {
    read_from(bytes, bytes.len() as u64, Path::new("<memory>"))
}

pub fn read_traceset(path: impl AsRef<Path>) -> Result<TraceSet, TraceIoError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| TraceIoError::io(path, e))?;
    let len = file.metadata().map_err(|e| TraceIoError::io(path, e))?.len();
    read_from(BufReader::new(file), len, path)
}

struct Cursor<'a, R> {
    r: R,
    consumed: u64,
    total: u64,
    path: &'a Path,
}

impl<R: Read> Cursor<'_, R> {
    fn take(&mut self, buf: &mut [u8], what: &str) -> Result<(), TraceIoError> {
        let consumed = self.consumed;
        if consumed + buf.len() as u64 > self.total {
            return Err(TraceIoError::TruncatedFile(format!(
                "{what} needs {} bytes at offset {consumed}, file has {}",
                buf.len(),
                self.total
            )));
        }
        self.r.read_exact(buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => {
                TraceIoError::TruncatedFile(format!("{what} ends early at offset {consumed}"))
            }
            _ => TraceIoError::io(self.path, e),
        })?;
        self.consumed += buf.len() as u64;
        Ok(())
    }
}

/// Parses a container of `total_len` bytes. Every allocation is bounded by
/// `total_len`, checked before reading.
fn read_from<R: Read>(r: R, total_len: u64, path: &Path) -> Result<TraceSet, TraceIoError> {
    let mut c = Cursor {
        r,
        consumed: 0,
        total: total_len,
        path,
    };
    let mut magic = [0u8; 4];
    c.take(&mut magic, "magic")?;
    if magic != MAGIC {
        return Err(TraceIoError::BadMagic(magic));
    }
    let mut head = [0u8; FIXED_HEADER_LEN - 4];
    c.take(&mut head, "header")?;
    let version = u16::from_le_bytes([head[0], head[1]]);
    if version != VERSION {
        return Err(TraceIoError::UnsupportedVersion(version));
    }
    let flags = u16::from_le_bytes([head[2], head[3]]);
    if flags & !FLAG_KEY != 0 {
        return Err(TraceIoError::MalformedHeader(format!("unknown flag bits {flags:#06x}")));
    }
    let t = u32::from_le_bytes(head[4..8].try_into().unwrap()) as u64;
    let s = u32::from_le_bytes(head[8..12].try_into().unwrap()) as u64;
    if head[12] != FORMAT_F32 {
        return Err(TraceIoError::UnsupportedSampleFormat(head[12]));
    }
    if head[13..20].iter().any(|&b| b != 0) {
        return Err(TraceIoError::MalformedHeader("reserved bytes are not zero".into()));
    }

    let key = if flags & FLAG_KEY != 0 {
        let mut k = [0u8; 16];
        c.take(&mut k, "key")?;
        Some(AesKey(k))
    } else {
        None
    };

    let mut len4 = [0u8; 4];
    c.take(&mut len4, "metadata length")?;
    let meta_len = u32::from_le_bytes(len4) as u64;
    if c.consumed + meta_len > total_len {
        return Err(TraceIoError::LengthMismatch(format!(
            "metadata length {meta_len} exceeds the {} bytes left in the file",
            total_len - c.consumed
        )));
    }
    let mut meta_bytes = vec![0u8; meta_len as usize];
    c.take(&mut meta_bytes, "metadata")?;
    let meta: BTreeMap<String, String> = serde_json::from_slice(&meta_bytes)
        .map_err(|e| TraceIoError::MalformedHeader(format!("metadata is not a JSON string map: {e}")))?;

    let header_len = c.consumed;
    let record = s
        .checked_mul(4)
        .and_then(|b| b.checked_add(32))
        .expect("u32 sample count fits");
    let body = t.checked_mul(record).ok_or_else(|| {
        TraceIoError::LengthMismatch(format!("{t} traces of {s} samples overflow the addressable size"))
    })?;
    let expected = header_len + body;
    if total_len != expected {
        let actual_body = total_len - header_len;
        let msg = format!(
            "header declares {t} traces × {s} samples ({expected} bytes) but the file has {total_len} bytes"
        );
        let mid_record = actual_body < body && actual_body % record != 0 && actual_body >= record;
        return Err(if mid_record {
            TraceIoError::TruncatedFile(format!(
                "{msg}; {} complete records then a partial one",
                actual_body / record
            ))
        } else {
            TraceIoError::LengthMismatch(msg)
        });
    }

    let (t, s) = (t as usize, s as usize);
    let mut traces = Array2::<f32>::zeros((t, s));
    let mut plaintexts = Vec::with_capacity(t);
    let mut ciphertexts = Vec::with_capacity(t);
    let mut rec = vec![0u8; record as usize];
    for i in 0..t {
        c.take(&mut rec, "trace record")?;
        let mut pt = [0u8; 16];
        let mut ct = [0u8; 16];
        pt.copy_from_slice(&rec[..16]);
        ct.copy_from_slice(&rec[16..32]);
        plaintexts.push(AesBlock(pt));
        ciphertexts.push(AesBlock(ct));
        for (dst, chunk) in traces.row_mut(i).iter_mut().zip(rec[32..].chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    Ok(TraceSet::new(traces, plaintexts, ciphertexts, key, meta).expect("rows built together"))
}

/// Writes the sweep table as CSV and the full report (configuration, seeds,
/// all point fields) as JSON next to it.
pub fn write_report(
    report: &ExperimentReport,
    csv_path: impl AsRef<Path>,
    manifest_path: impl AsRef<Path>,
) -> Result<(), TraceIoError> {
    let csv_path = csv_path.as_ref();
    let file = File::create(csv_path).map_err(|e| TraceIoError::io(csv_path, e))?;
    report
        .write_csv(BufWriter::new(file))
        .map_err(|e| TraceIoError::io(csv_path, e.into()))?;
    let manifest_path = manifest_path.as_ref();
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(manifest_path, json + "\n").map_err(|e| TraceIoError::io(manifest_path, e))
}

/// Correlation matrix as CSV: one row per guess, `guess` then one column
/// per sample labelled `t<index>`.
pub fn write_correlation_csv<W: Write>(m: &CorrelationMatrix, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["guess".to_string()];
    header.extend((0..m.values.ncols()).map(|c| format!("t{}", m.time_offset + c)));
    w.write_record(&header)?;
    for (g, row) in m.values.rows().into_iter().enumerate() {
        let mut rec = vec![g.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
