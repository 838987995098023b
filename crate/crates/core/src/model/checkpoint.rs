//! Binary checkpoint container.
//!
//! Layout, all integers little endian:
//!
//! ```text
//! "SCE1"
//! u64 × 7      L, d, H, d_h, d_ff, d_q, V
//! f64          layer-norm eps
//! u8           1 if the embedding table is frozen
//! V × (u32 len, utf-8 bytes)                     vocabulary in id order
//! u32          number of arrays
//! per array:   u32 name len, name, u32 rank, u64 × rank dims, f64 × n data
//! ```
//!
//! Arrays appear in a fixed order: `table.embeddings`, `adaptor.weight`,
//! `adaptor.bias`, then `encoder.<i>.<field>` per layer in
//! [`LAYER_TENSOR_NAMES`] order. Values are stored as raw IEEE bits, so a
//! save/load round trip is exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{LabelEmbeddingTable, QueryAdaptor, SceParams};
use crate::data::Vocabulary;
use crate::encoder::{EncoderConfig, EncoderParams, LayerParams, LAYER_TENSOR_NAMES};
use crate::error::{Result, SceError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SCE1";

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| SceError::Checkpoint(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_u64(w: &mut impl Write, v: usize) -> Result<()> {
    w.write_all(&(v as u64).to_le_bytes())?;
    Ok(())
}

fn put_array(w: &mut impl Write, name: &str, t: &Tensor) -> Result<()> {
    put_u32(w, name.len())?;
    w.write_all(name.as_bytes())?;
    put_u32(w, t.shape().len())?;
    for &dim in t.shape() {
        put_u64(w, dim)?;
    }
    for x in t.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint(w: &mut impl Write, params: &SceParams) -> Result<()> {
    params.validate()?;
    let cfg = params.encoder.config;
    w.write_all(MAGIC)?;
    for v in [
        cfg.layers,
        cfg.d_model,
        cfg.heads,
        cfg.head_dim,
        cfg.d_ff,
        params.adaptor.in_dim(),
        params.table.vocab.len(),
    ] {
        put_u64(w, v)?;
    }
    w.write_all(&cfg.eps.to_le_bytes())?;
    w.write_all(&[u8::from(params.table.frozen)])?;
    for tok in params.table.vocab.tokens() {
        put_u32(w, tok.len())?;
        w.write_all(tok.as_bytes())?;
    }
    let names = params.encoder.tensor_names();
    put_u32(w, 3 + names.len())?;
    put_array(w, "table.embeddings", &params.table.embeddings)?;
    put_array(w, "adaptor.weight", &params.adaptor.weight)?;
    put_array(w, "adaptor.bias", &params.adaptor.bias)?;
    for (name, t) in names.iter().zip(params.encoder.tensors()) {
        put_array(w, name, t)?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => SceError::Checkpoint("truncated file".into()),
            _ => SceError::Io(e),
        })?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.bytes(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| SceError::Checkpoint(format!("value {v} too large")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.bytes(n)?).map_err(|_| SceError::Checkpoint("invalid utf-8".into()))
    }

    fn array(&mut self, expected_name: &str, expected_shape: &[usize]) -> Result<Tensor> {
        let name = self.string()?;
        if name != expected_name {
            return Err(SceError::Checkpoint(format!("expected array `{expected_name}`, found `{name}`")));
        }
        let rank = self.u32()?;
        let shape = (0..rank).map(|_| self.u64()).collect::<Result<Vec<_>>>()?;
        if shape != expected_shape {
            return Err(SceError::Checkpoint(format!(
                "array `{name}` has shape {shape:?}, expected {expected_shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        let raw = self.bytes(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape, data)
    }
}

pub fn read_checkpoint(r: impl Read) -> Result<SceParams> {
    let mut r = Reader { inner: r };
    if r.bytes(4)? != MAGIC {
        return Err(SceError::Checkpoint("bad magic, not an SCE1 checkpoint".into()));
    }
    let mut dims = [0usize; 7];
    for d in dims.iter_mut() {
        *d = r.u64()?;
    }
    let [layers, d_model, heads, head_dim, d_ff, d_q, vocab_len] = dims;
    let eps = r.f64()?;
    let frozen = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(SceError::Checkpoint(format!("bad frozen flag {other}"))),
    };
    let config = EncoderConfig {
        layers,
        d_model,
        heads,
        head_dim,
        d_ff,
        eps,
    };
    config.validate().map_err(|e| SceError::Checkpoint(e.to_string()))?;
    if d_q == 0 || vocab_len == 0 {
        return Err(SceError::Checkpoint("d_q and V must be positive".into()));
    }
    let tokens = (0..vocab_len).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
    let vocab = Vocabulary::from_tokens(&tokens).map_err(|e| SceError::Checkpoint(e.to_string()))?;

    let count = r.u32()?;
    if count != 3 + 12 * layers {
        return Err(SceError::Checkpoint(format!("expected {} arrays, header says {count}", 3 + 12 * layers)));
    }
    let embeddings = r.array("table.embeddings", &[vocab_len, d_model])?;
    let weight = r.array("adaptor.weight", &[d_model, d_q])?;
    let bias = r.array("adaptor.bias", &[d_model])?;
    let shapes = LayerParams::expected_shapes(&config);
    let mut layer_params = Vec::with_capacity(layers);
    for i in 0..layers {
        let mut ts = Vec::with_capacity(12);
        for (field, shape) in LAYER_TENSOR_NAMES.iter().zip(&shapes) {
            ts.push(r.array(&format!("encoder.{i}.{field}"), shape)?);
        }
        let mut it = ts.into_iter();
        let mut next = || it.next().unwrap();
        layer_params.push(LayerParams {
            wq: next(),
            wk: next(),
            wv: next(),
            wo: next(),
            w_up: next(),
            b_up: next(),
            w_down: next(),
            b_down: next(),
            ln1_gain: next(),
            ln1_bias: next(),
            ln2_gain: next(),
            ln2_bias: next(),
        });
    }
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing)? != 0 {
        return Err(SceError::Checkpoint("trailing bytes after last array".into()));
    }
    let mut table = LabelEmbeddingTable::new(vocab, embeddings)?;
    table.frozen = frozen;
    Ok(SceParams {
        table,
        adaptor: QueryAdaptor { weight, bias },
        encoder: EncoderParams {
            config,
            layers: layer_params,
        },
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &SceParams) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, params)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SceParams> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
