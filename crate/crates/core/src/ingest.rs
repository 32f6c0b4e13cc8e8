//! Feature/logit/label tables on disk: the little-endian `DDFT` binary format
//! and a CSV fallback.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! "DDFT" | version u32 = 1 | n u64 | q u64 | flags u8 | [C u32]
//! features f64[n·q] | [labels u32[n]] | [logits f64[n·C]] | [W f64[C·q], b f64[C]]
//! ```
//!
//! `flags` bit 0 marks labels, bit 1 logits and bit 2 a classifier head; `C`
//! is present iff bit 1 or bit 2 is set. Matrices are row-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::ood_scores::{ClassifierHead, ModelOutputs};

pub const MAGIC: [u8; 4] = *b"DDFT";
pub const VERSION: u32 = 1;

const FLAG_LABELS: u8 = 1;
const FLAG_LOGITS: u8 = 1 << 1;
const FLAG_HEAD: u8 = 1 << 2;

/// Outputs plus the optional head stored alongside them.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub outputs: ModelOutputs<f64>,
    pub head: Option<ClassifierHead<f64>>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, block: &str) -> Result<&'a [u8]> {
        let have = self.buf.len() - self.pos;
        if have < len {
            return Err(Error::CorruptFile(format!(
                "{block} block truncated: needs {len} bytes at offset {}, {have} left",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u8(&mut self, block: &str) -> Result<u8> {
        Ok(self.take(1, block)?[0])
    }

    fn u32(&mut self, block: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, block)?.try_into().unwrap()))
    }

    fn u64(&mut self, block: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, block)?.try_into().unwrap()))
    }

    /// Row-major `rows × cols` block of finite f64.
    fn matrix(&mut self, rows: usize, cols: usize, block: &str) -> Result<DMatrix<f64>> {
        let len = rows
            .checked_mul(cols)
            .and_then(|k| k.checked_mul(8))
            .ok_or_else(|| Error::CorruptFile(format!("{block} block size overflows")))?;
        let bytes = self.take(len, block)?;
        let mut vals = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let v = vals.next().unwrap();
                if !v.is_finite() {
                    return Err(Error::Data(format!(
                        "{block} value {v} at row {i}, column {j} is not finite"
                    )));
                }
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }
}

fn to_usize(v: u64, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::CorruptFile(format!("{what} = {v} does not fit in memory")))
}

/// Parses an in-memory `DDFT` image.
pub fn decode_table(buf: &[u8]) -> Result<Table> {
    let mut cur = Cursor { buf, pos: 0 };
    if buf.len() < 4 || buf[..4] != MAGIC {
        return Err(Error::Format("missing DDFT magic".into()));
    }
    cur.pos = 4;
    let version = cur.u32("header")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported DDFT version {version}")));
    }
    let n = to_usize(cur.u64("header")?, "n")?;
    let q = to_usize(cur.u64("header")?, "q")?;
    let flags = cur.u8("header")?;
    if flags & !(FLAG_LABELS | FLAG_LOGITS | FLAG_HEAD) != 0 {
        return Err(Error::Format(format!("unknown flag bits in {flags:#010b}")));
    }
    let c = if flags & (FLAG_LOGITS | FLAG_HEAD) != 0 {
        Some(cur.u32("header")? as usize)
    } else {
        None
    };

    let features = cur.matrix(n, q, "features")?;
    let labels = if flags & FLAG_LABELS != 0 {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::CorruptFile("labels block size overflows".into()))?;
        let bytes = cur.take(len, "labels")?;
        let labels: Vec<usize> = bytes
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
            .collect();
        if let Some(c) = c {
            if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= c) {
                return Err(Error::Data(format!("label {y} at row {i} is not below C = {c}")));
            }
        }
        Some(labels)
    } else {
        None
    };
    let logits = match (flags & FLAG_LOGITS != 0, c) {
        (true, Some(c)) => Some(cur.matrix(n, c, "logits")?),
        _ => None,
    };
    let head = match (flags & FLAG_HEAD != 0, c) {
        (true, Some(c)) => {
            let w = cur.matrix(c, q, "head W")?;
            let b = cur.matrix(c, 1, "head b")?;
            Some((w, DVector::from_column_slice(b.as_slice())))
        }
        _ => None,
    };
    if cur.pos != buf.len() {
        return Err(Error::CorruptFile(format!(
            "{} trailing bytes after the last block",
            buf.len() - cur.pos
        )));
    }
    let outputs = ModelOutputs::new(features, logits, labels).map_err(as_data)?;
    let head = head
        .map(|(w, b)| ClassifierHead::new(w, b))
        .transpose()
        .map_err(as_data)?;
    Ok(Table { outputs, head })
}

fn as_data(e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::Data(m),
        other => other,
    }
}

pub fn read_table(path: impl AsRef<Path>) -> Result<Table> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(io_err(path))?;
    decode_table(&buf)
}

fn push_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
}

/// Serializes to a `DDFT` image.
pub fn encode_table(outputs: &ModelOutputs<f64>, head: Option<&ClassifierHead<f64>>) -> Result<Vec<u8>> {
    let c = match (outputs.logits(), head) {
        (Some(l), Some(h)) if l.ncols() != h.num_classes() => {
            return invalid(format!(
                "logits have {} classes, head has {}",
                l.ncols(),
                h.num_classes()
            ));
        }
        (Some(l), _) => Some(l.ncols()),
        (None, Some(h)) => Some(h.num_classes()),
        (None, None) => None,
    };
    if let Some(h) = head {
        if h.dim() != outputs.dim() {
            return invalid(format!(
                "head expects q = {}, features have q = {}",
                h.dim(),
                outputs.dim()
            ));
        }
    }
    let c32 = c
        .map(|c| u32::try_from(c).map_err(|_| Error::InvalidArgument(format!("C = {c} exceeds u32"))))
        .transpose()?;
    let mut flags = 0u8;
    if outputs.labels().is_some() {
        flags |= FLAG_LABELS;
    }
    if outputs.logits().is_some() {
        flags |= FLAG_LOGITS;
    }
    if head.is_some() {
        flags |= FLAG_HEAD;
    }

    let (n, q) = (outputs.len(), outputs.dim());
    let mut out = Vec::with_capacity(33 + 8 * n * (q + c.unwrap_or(0)) + 4 * n);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(q as u64).to_le_bytes());
    out.push(flags);
    if let Some(c) = c32 {
        out.extend_from_slice(&c.to_le_bytes());
    }
    push_matrix(&mut out, outputs.features());
    if let Some(y) = outputs.labels() {
        for (i, &v) in y.iter().enumerate() {
            let v =
                u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("label {v} at row {i} exceeds u32")))?;
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(l) = outputs.logits() {
        push_matrix(&mut out, l);
    }
    if let Some(h) = head {
        push_matrix(&mut out, h.weights());
        for &v in h.bias().iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_table(
    outputs: &ModelOutputs<f64>,
    head: Option<&ClassifierHead<f64>>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_table(outputs, head)?;
    fs::write(path, bytes).map_err(io_err(path))
}

enum Column {
    Feature(usize),
    Label,
    Logit(usize),
}

fn parse_header(header: &csv::StringRecord) -> Result<(Vec<Column>, usize, Option<usize>)> {
    let mut cols = Vec::with_capacity(header.len());
    let (mut nf, mut nl, mut has_label) = (0usize, 0usize, false);
    for name in header.iter() {
        let name = name.trim();
        let idx = |prefix: &str| name.strip_prefix(prefix).and_then(|s| s.parse::<usize>().ok());
        let col = if name == "label" {
            if has_label {
                return Err(Error::Format("duplicate label column".into()));
            }
            has_label = true;
            Column::Label
        } else if let Some(j) = idx("f") {
            nf += 1;
            Column::Feature(j)
        } else if let Some(j) = idx("l") {
            nl += 1;
            Column::Logit(j)
        } else {
            return Err(Error::Format(format!("unrecognised column '{name}'")));
        };
        cols.push(col);
    }
    for (prefix, count) in [("f", nf), ("l", nl)] {
        let mut seen = vec![false; count];
        for c in &cols {
            let j = match (c, prefix) {
                (Column::Feature(j), "f") | (Column::Logit(j), "l") => *j,
                _ => continue,
            };
            if j >= count || std::mem::replace(&mut seen[j], true) {
                return Err(Error::Format(format!(
                    "{prefix} columns must be {prefix}0..{prefix}{} without gaps or repeats",
                    count.saturating_sub(1)
                )));
            }
        }
    }
    if nf == 0 {
        return Err(Error::Format("no feature columns (f0, f1, …)".into()));
    }
    Ok((cols, nf, (nl > 0).then_some(nl)))
}

/// Reads a CSV table whose header names the columns `f0..`, optionally
/// `label`, and optionally `l0..`.
pub fn read_csv(path: impl AsRef<Path>) -> Result<ModelOutputs<f64>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let (cols, q, c) = parse_header(&header)?;
    let has_labels = cols.iter().any(|c| matches!(c, Column::Label));

    let (mut feats, mut logits, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(row as u64 + 2, |p| p.line());
        if rec.len() != cols.len() {
            return Err(Error::Format(format!(
                "line {line}: expected {} fields, found {}",
                cols.len(),
                rec.len()
            )));
        }
        let (mut f, mut l) = (vec![0.0; q], vec![0.0; c.unwrap_or(0)]);
        for (j, (col, field)) in cols.iter().zip(rec.iter()).enumerate() {
            let field = field.trim();
            match col {
                Column::Label => labels.push(
                    field
                        .parse::<usize>()
                        .map_err(|_| Error::Format(format!("line {line}: bad label '{field}'")))?,
                ),
                Column::Feature(k) | Column::Logit(k) => {
                    let v: f64 = field
                        .parse()
                        .map_err(|_| Error::Format(format!("line {line}, column {j}: bad number '{field}'")))?;
                    if !v.is_finite() {
                        return Err(Error::Data(format!("row {row}, column {j}: value {v} is not finite")));
                    }
                    match col {
                        Column::Feature(_) => f[*k] = v,
                        _ => l[*k] = v,
                    }
                }
            }
        }
        feats.extend(f);
        logits.extend(l);
    }
    let n = feats.len() / q;
    if n == 0 {
        return Err(Error::Data(format!("{}: empty table (header only)", path.display())));
    }
    let features = DMatrix::from_row_slice(n, q, &feats);
    let logits = c.map(|c| DMatrix::from_row_slice(n, c, &logits));
    ModelOutputs::new(features, logits, has_labels.then_some(labels)).map_err(as_data)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Writes `outputs` as CSV with shortest round-trip float formatting.
pub fn write_csv(outputs: &ModelOutputs<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(std::io::BufWriter::new(file));
    let q = outputs.dim();
    let c = outputs.logits().map_or(0, |l| l.ncols());
    let mut header: Vec<String> = (0..q).map(|j| format!("f{j}")).collect();
    if outputs.labels().is_some() {
        header.push("label".into());
    }
    header.extend((0..c).map(|j| format!("l{j}")));
    w.write_record(&header).map_err(csv_err)?;
    let mut rec = Vec::with_capacity(header.len());
    for i in 0..outputs.len() {
        rec.clear();
        rec.extend(outputs.features().row(i).iter().map(|v| v.to_string()));
        if let Some(y) = outputs.labels() {
            rec.push(y[i].to_string());
        }
        if let Some(l) = outputs.logits() {
            rec.extend(l.row(i).iter().map(|v| v.to_string()));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    let mut inner = w.into_inner().map_err(|e| io_err(path)(e.into_error()))?;
    inner.flush().map_err(io_err(path))
}
