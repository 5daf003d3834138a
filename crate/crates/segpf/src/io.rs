//! Trace, dataset and checkpoint files.
//!
//! Traces are CSV (`ordinal,cycle,pc,vaddr`, hex for the last two, `#`
//! comments), optionally gzip-compressed. Datasets and checkpoints are
//! little-endian binaries with a magic and version header.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use segpf_core::dataset::Sample;
use segpf_core::features::ModelInput;
use segpf_core::labeling::DeltaBitmap;
use segpf_core::model::{ContextMode, Model, ModelConfig, ModelParams};
use segpf_core::tensor::Matrix;
use segpf_core::trace::MemoryAccess;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];
const DATASET_MAGIC: &[u8; 4] = b"SPDS";
const CHECKPOINT_MAGIC: &[u8; 4] = b"SPCK";
const FORMAT_VERSION: u32 = 1;

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| CliError::io(path, e))?,
    ))
}

/// Opens a file, transparently decompressing gzip.
fn reader(path: &Path) -> CliResult<Box<dyn BufRead>> {
    let mut f = BufReader::new(open(path)?);
    let head = f.fill_buf().map_err(|e| CliError::io(path, e))?;
    if head.starts_with(&GZIP_MAGIC) {
        Ok(Box::new(BufReader::new(GzDecoder::new(f))))
    } else {
        Ok(Box::new(f))
    }
}

fn parse_u64(field: &str) -> Option<u64> {
    let f = field.trim();
    match f.strip_prefix("0x").or_else(|| f.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => f.parse().ok(),
    }
}

fn parse_hex(field: &str) -> Option<u64> {
    let f = field.trim();
    let hex = f
        .strip_prefix("0x")
        .or_else(|| f.strip_prefix("0X"))
        .unwrap_or(f);
    u64::from_str_radix(hex, 16).ok()
}

pub fn parse_trace(text: impl BufRead, path: &Path) -> CliResult<Vec<MemoryAccess>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() || body.starts_with("ordinal") {
            continue;
        }
        let err = |message: String| CliError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = body.split(',').collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let ordinal = parse_u64(fields[0]).ok_or_else(|| err(format!("bad ordinal `{}`", fields[0])))?;
        let cycle = parse_u64(fields[1]).ok_or_else(|| err(format!("bad cycle `{}`", fields[1])))?;
        let pc = parse_hex(fields[2]).ok_or_else(|| err(format!("bad pc `{}`", fields[2])))?;
        let vaddr = parse_hex(fields[3]).ok_or_else(|| err(format!("bad address `{}`", fields[3])))?;
        if ordinal != out.len() as u64 {
            return Err(err(format!("ordinal {ordinal} out of sequence, expected {}", out.len())));
        }
        out.push(MemoryAccess::new(ordinal, cycle, pc, vaddr));
    }
    if out.is_empty() {
        return Err(CliError::format(path, "trace has no records"));
    }
    Ok(out)
}

pub fn read_trace(path: &Path) -> CliResult<Vec<MemoryAccess>> {
    parse_trace(reader(path)?, path)
}

pub fn write_trace(path: &Path, trace: &[MemoryAccess]) -> CliResult<()> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    writeln!(w, "ordinal,cycle,pc,vaddr").map_err(io)?;
    for a in trace {
        writeln!(w, "{},{},{:#x},{:#x}", a.ordinal, a.cycle, a.pc, a.vaddr).map_err(io)?;
    }
    w.flush().map_err(io)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CliError::format(self.path, "unexpected end of file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> CliResult<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> CliResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> CliResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> CliResult<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn header(&mut self, magic: &[u8; 4]) -> CliResult<()> {
        if self.take(4)? != magic {
            return Err(CliError::format(self.path, "bad magic"));
        }
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(CliError::format(self.path, format!("unsupported version {v}")));
        }
        Ok(())
    }
    fn finish(&self) -> CliResult<()> {
        if self.pos != self.buf.len() {
            return Err(CliError::format(self.path, "trailing bytes"));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_matrix_sparse(out: &mut Vec<u8>, m: &Matrix) {
    for r in 0..m.rows() {
        let row = m.row(r);
        let nz: Vec<(usize, f64)> = row
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(c, v)| (c, *v))
            .collect();
        put_u32(out, nz.len());
        for (c, v) in nz {
            put_u32(out, c);
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
}

fn get_matrix_sparse(cur: &mut Cursor<'_>, rows: usize, cols: usize) -> CliResult<Matrix> {
    let mut m = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let nz = cur.u32()? as usize;
        for _ in 0..nz {
            let c = cur.u32()? as usize;
            if c >= cols {
                return Err(CliError::format(cur.path, "column index out of range"));
            }
            m[(r, c)] = cur.f64()?;
        }
    }
    Ok(m)
}

/// Writes samples; every sample must share the first one's shape.
pub fn write_dataset(path: &Path, samples: &[Sample], history: usize, width: usize, bits: usize) -> CliResult<()> {
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u32(&mut out, history);
    put_u32(&mut out, width);
    put_u32(&mut out, bits);
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    for s in samples {
        if s.input.history.shape() != (history, width) || s.label.len() != bits {
            return Err(CliError::format(path, "sample shape mismatch"));
        }
        out.extend_from_slice(&s.trigger.to_le_bytes());
        out.push(u8::from(s.truncated));
        put_matrix_sparse(&mut out, &s.input.history);
        put_matrix_sparse(&mut out, &s.input.context);
        out.extend_from_slice(&s.label.to_bytes());
    }
    write_bytes(path, &out)
}

pub fn read_dataset(path: &Path) -> CliResult<Vec<Sample>> {
    let buf = read_bytes(path)?;
    let mut cur = Cursor {
        buf: &buf,
        pos: 0,
        path,
    };
    cur.header(DATASET_MAGIC)?;
    let history = cur.u32()? as usize;
    let width = cur.u32()? as usize;
    let bits = cur.u32()? as usize;
    let count = cur.u64()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        let trigger = cur.u64()?;
        let truncated = cur.u8()? != 0;
        let hist = get_matrix_sparse(&mut cur, history, width)?;
        let context = get_matrix_sparse(&mut cur, history, 2)?;
        let label_bytes = cur.take(bits.div_ceil(8))?;
        let label = DeltaBitmap::from_bytes(bits, label_bytes)?;
        out.push(Sample {
            trigger,
            input: ModelInput {
                history: hist,
                context,
            },
            label,
            truncated,
        });
    }
    cur.finish()?;
    Ok(out)
}

fn context_code(c: ContextMode) -> u8 {
    match c {
        ContextMode::None => 0,
        ContextMode::Pc => 1,
        ContextMode::PageDistance => 2,
        ContextMode::Both => 3,
    }
}

fn context_from_code(code: u8, path: &Path) -> CliResult<ContextMode> {
    Ok(match code {
        0 => ContextMode::None,
        1 => ContextMode::Pc,
        2 => ContextMode::PageDistance,
        3 => ContextMode::Both,
        _ => return Err(CliError::format(path, "bad context mode")),
    })
}

/// Checkpoint: header, model config, f64 tensors, parameter checksum.
pub fn write_checkpoint(path: &Path, model: &Model) -> CliResult<()> {
    let c = &model.config;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [c.dim, c.heads, c.layers, c.outputs, c.history, c.input_width, c.ffn_mult] {
        put_u32(&mut out, v);
    }
    out.push(context_code(c.context));
    for t in model.params.tensors() {
        for v in t.as_slice() {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    out.extend_from_slice(&model.params.checksum().to_le_bytes());
    write_bytes(path, &out)
}

pub fn read_checkpoint(path: &Path) -> CliResult<Model> {
    let buf = read_bytes(path)?;
    let mut cur = Cursor {
        buf: &buf,
        pos: 0,
        path,
    };
    cur.header(CHECKPOINT_MAGIC)?;
    let mut f = [0usize; 7];
    for v in &mut f {
        *v = cur.u32()? as usize;
    }
    let config = ModelConfig {
        dim: f[0],
        heads: f[1],
        layers: f[2],
        outputs: f[3],
        history: f[4],
        input_width: f[5],
        ffn_mult: f[6],
        context: context_from_code(cur.u8()?, path)?,
    };
    config.validate()?;
    let mut params = ModelParams::zeros(&config);
    for t in params.tensors_mut() {
        for v in t.as_mut_slice() {
            *v = cur.f64()?;
        }
    }
    let checksum = cur.u64()?;
    cur.finish()?;
    if checksum != params.checksum() {
        return Err(CliError::format(path, "checksum mismatch"));
    }
    Ok(Model::from_params(config, params)?)
}

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    open(path)?
        .read_to_end(&mut buf)
        .map_err(|e| CliError::io(path, e))?;
    Ok(buf)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let mut w = create(path)?;
    w.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    Ok(sha256_hex(&read_bytes(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor as IoCursor;

    #[test]
    fn parses_comments_and_header() {
        let text = "# generated\nordinal,cycle,pc,vaddr\n0,0,0x400,0x1040\n1,5,400,0x2000 # tail\n";
        let t = parse_trace(IoCursor::new(text), Path::new("t.csv")).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[1], MemoryAccess::new(1, 5, 0x400, 0x2000));
    }

    #[test]
    fn reports_line_numbers() {
        let text = "0,0,0x1,0x2\n1,1,0x1\n";
        let e = parse_trace(IoCursor::new(text), Path::new("t.csv")).unwrap_err();
        assert!(matches!(e, CliError::Parse { line: 2, .. }), "{e}");
        let text = "0,0,0x1,0x2\n2,1,0x1,0x3\n";
        let e = parse_trace(IoCursor::new(text), Path::new("t.csv")).unwrap_err();
        assert!(e.to_string().contains("out of sequence"));
        let e = parse_trace(IoCursor::new("0,0,zz,0x1\n"), Path::new("t.csv")).unwrap_err();
        assert!(e.to_string().contains("bad pc"));
    }

    #[test]
    fn empty_trace_is_an_error() {
        let e = parse_trace(IoCursor::new("# nothing\n"), Path::new("t.csv")).unwrap_err();
        assert!(matches!(e, CliError::Format { .. }));
    }

    #[test]
    fn json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.json");
        write_json(&p, &vec![1.5, 2.0]).unwrap();
        let back: Vec<f64> = read_json(&p).unwrap();
        assert_eq!(back, vec![1.5, 2.0]);
    }
}
