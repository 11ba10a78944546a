//! Binary checkpoints, config sidecars and TSV export.
//!
//! Both binary files start with the magic `KQGC` and a little-endian `u64`
//! version. Embedding tables (version 1) continue with `N`, `R`, `H` and
//! the row-major `f64` values, entities then relations. Convolution
//! parameters (version 2) continue with the layer count, then per layer
//! the header `aggregator, rule, H_out, H_in, attention_len` (`u64`) and
//! `leaky_slope` (`f64`), followed by `W`, `b` and the attention vector.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::layer::{Aggregator, CoefficientRule, KqgcParams, LayerParams};
use crate::transe::EmbeddingTable;

pub const MAGIC: &[u8; 4] = b"KQGC";
pub const EMBEDDING_VERSION: u64 = 1;
pub const PARAMS_VERSION: u64 = 2;

struct Writer(Vec<u8>);

impl Writer {
    fn new(version: u64) -> Self {
        let mut w = Writer(MAGIC.to_vec());
        w.u64(version);
        w
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s<'a>(&mut self, values: impl IntoIterator<Item = &'a f64>) {
        for v in values {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(bytes: &'a [u8], version: u64) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
            return Err(Error::Format(format!("bad magic {found:?}, expected \"KQGC\"")));
        }
        let mut r = Reader { bytes, pos: 4 };
        let found = r.u64()?;
        if found != version {
            return Err(Error::Format(format!(
                "unsupported format version {found}, expected {version}"
            )));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated file at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in memory")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn encode_embeddings(table: &EmbeddingTable) -> Vec<u8> {
    let mut w = Writer::new(EMBEDDING_VERSION);
    w.u64(table.num_entities() as u64);
    w.u64(table.num_relations() as u64);
    w.u64(table.dim() as u64);
    w.f64s(table.entities.iter());
    w.f64s(table.relations.iter());
    w.0
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingTable> {
    let mut r = Reader::open(bytes, EMBEDDING_VERSION)?;
    let n = r.count("entity count")?;
    let m = r.count("relation count")?;
    let h = r.count("dimension")?;
    let size = |rows: usize| {
        rows.checked_mul(h)
            .ok_or_else(|| Error::Format("size overflow".into()))
    };
    let entities = Array2::from_shape_vec((n, h), r.f64s(size(n)?)?).expect("sized");
    let relations = Array2::from_shape_vec((m, h), r.f64s(size(m)?)?).expect("sized");
    r.finish()?;
    EmbeddingTable::new(entities, relations)
}

pub fn encode_params(params: &KqgcParams) -> Vec<u8> {
    let mut w = Writer::new(PARAMS_VERSION);
    w.u64(params.layers.len() as u64);
    for l in &params.layers {
        w.u64(l.aggregator.code());
        w.u64(l.coefficient_rule.code());
        w.u64(l.dim_out() as u64);
        w.u64(l.dim_in() as u64);
        w.u64(l.attention.as_ref().map_or(0, |a| a.len()) as u64);
        w.f64s([l.leaky_slope].iter());
        w.f64s(l.weight.iter());
        w.f64s(l.bias.iter());
        if let Some(a) = &l.attention {
            w.f64s(a.iter());
        }
    }
    w.0
}

pub fn decode_params(bytes: &[u8]) -> Result<KqgcParams> {
    let mut r = Reader::open(bytes, PARAMS_VERSION)?;
    let num_layers = r.count("layer count")?;
    let mut layers = Vec::new();
    for i in 0..num_layers {
        let agg_code = r.u64()?;
        let aggregator = Aggregator::from_code(agg_code)
            .ok_or_else(|| Error::Format(format!("layer {i}: unknown aggregator code {agg_code}")))?;
        let rule_code = r.u64()?;
        let coefficient_rule = CoefficientRule::from_code(rule_code)
            .ok_or_else(|| Error::Format(format!("layer {i}: unknown coefficient rule {rule_code}")))?;
        let out = r.count("output dim")?;
        let inp = r.count("input dim")?;
        let a_len = r.count("attention length")?;
        let leaky_slope = r.f64()?;
        let wlen = out
            .checked_mul(inp)
            .ok_or_else(|| Error::Format("size overflow".into()))?;
        let weight = Array2::from_shape_vec((out, inp), r.f64s(wlen)?).expect("sized");
        let bias = Array1::from(r.f64s(out)?);
        let attention = if a_len > 0 {
            Some(Array1::from(r.f64s(a_len)?))
        } else {
            None
        };
        layers.push(LayerParams {
            weight,
            bias,
            aggregator,
            attention,
            leaky_slope,
            coefficient_rule,
        });
    }
    r.finish()?;
    let params = KqgcParams { layers };
    params.validate()?;
    Ok(params)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn save_embeddings(path: impl AsRef<Path>, table: &EmbeddingTable) -> Result<()> {
    write_bytes(path.as_ref(), &encode_embeddings(table))
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    decode_embeddings(&read_bytes(path)?).map_err(|e| with_path(path, e))
}

pub fn save_params(path: impl AsRef<Path>, params: &KqgcParams) -> Result<()> {
    write_bytes(path.as_ref(), &encode_params(params))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<KqgcParams> {
    let path = path.as_ref();
    decode_params(&read_bytes(path)?).map_err(|e| with_path(path, e))
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    }
}

/// `<checkpoint>.cfg`.
pub fn sidecar_path(checkpoint: impl AsRef<Path>) -> PathBuf {
    let mut s = checkpoint.as_ref().as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

/// Writes `key = value` lines in the given order.
pub fn write_sidecar(path: impl AsRef<Path>, entries: &[(String, String)]) -> Result<()> {
    let mut text = String::new();
    for (k, v) in entries {
        let _ = writeln!(text, "{k} = {v}");
    }
    write_bytes(path.as_ref(), text.as_bytes())
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_key_values(&text)
}

/// Parses `key = value` lines, skipping blanks and `#` comments. Later
/// keys override earlier ones.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("expected `key = value`, found {line:?}"),
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                message: "empty key".into(),
            });
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// `id<TAB>v0<TAB>...<TAB>v{H-1}` per row, with a `#` header. Values use
/// the shortest representation that parses back to the same bits.
pub fn format_tsv(matrix: ArrayView2<f64>) -> String {
    let mut out = String::new();
    let _ = write!(out, "# id");
    for j in 0..matrix.ncols() {
        let _ = write!(out, "\tv{j}");
    }
    out.push('\n');
    for (i, row) in matrix.rows().into_iter().enumerate() {
        let _ = write!(out, "{i}");
        for v in row {
            let _ = write!(out, "\t{v:?}");
        }
        out.push('\n');
    }
    out
}

pub fn write_tsv(path: impl AsRef<Path>, matrix: ArrayView2<f64>) -> Result<()> {
    write_bytes(path.as_ref(), format_tsv(matrix).as_bytes())
}

/// Reads a TSV written by [`format_tsv`]. Ids must be `0..n` in order.
pub fn parse_tsv(text: &str) -> Result<Array2<f64>> {
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: i + 1, message };
        let mut fields = line.split('\t');
        let id: usize = fields
            .next()
            .unwrap_or_default()
            .parse()
            .map_err(|_| parse_err("row id is not an integer".into()))?;
        if id != rows {
            return Err(parse_err(format!("expected row id {rows}, found {id}")));
        }
        let before = values.len();
        for f in fields {
            values.push(
                f.parse::<f64>()
                    .map_err(|_| parse_err(format!("bad value {f:?}")))?,
            );
        }
        let w = values.len() - before;
        match width {
            None => width = Some(w),
            Some(expected) if expected != w => {
                return Err(parse_err(format!("row has {w} values, expected {expected}")))
            }
            _ => {}
        }
        rows += 1;
    }
    let width = width.ok_or_else(|| Error::Invalid("TSV has no rows".into()))?;
    Ok(Array2::from_shape_vec((rows, width), values).expect("sized"))
}

pub fn read_tsv(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(&text)
}
