//! Little-endian binary model format.
//!
//! ```text
//! "CMPL" u32:version u32:dtype u32:final_norm u64:init_seed
//! u32:vocab u32:d_model u32:n_layers u32:n_heads u32:d_mlp
//! vocab × (u32:len bytes)
//! embed[vocab×d]
//! n_layers × (wq[d×d] wk[d×d] wv[d×d] wo[d×d] w_in[d×d_mlp] b_in[d_mlp] w_out[d_mlp×d])
//! unembed[d×vocab]
//! ```
//!
//! Matrices are row-major. `dtype` is the element width in bytes: 8 (f64,
//! what we write) or 4 (f32, accepted on read).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{Block, Matrix, ModelConfig, ToyResidualModel};
use super::tokenizer::Tokenizer;
use super::{ModelError, Result};

pub const MAGIC: &[u8; 4] = b"CMPL";
pub const FORMAT_VERSION: u32 = 1;
const MAX_DIM: u32 = 1 << 24;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_model(model: &ToyResidualModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    write_model(model, &mut w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn load_model(path: &Path) -> Result<ToyResidualModel> {
    let file = File::open(path).map_err(io_err(path))?;
    read_model(&mut BufReader::new(file)).map_err(|e| match e {
        ModelError::Io { source, .. } => ModelError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

fn dim(n: usize) -> std::io::Result<[u8; 4]> {
    u32::try_from(n)
        .map(u32::to_le_bytes)
        .map_err(|_| std::io::Error::other("dimension exceeds u32"))
}

pub fn write_model(model: &ToyResidualModel, w: &mut impl Write) -> std::io::Result<()> {
    let c = &model.config;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&8u32.to_le_bytes())?;
    w.write_all(&u32::from(c.final_norm).to_le_bytes())?;
    w.write_all(&c.init_seed.to_le_bytes())?;
    for n in [model.vocab_size(), c.d_model, c.n_layers, c.n_heads, c.d_mlp] {
        w.write_all(&dim(n)?)?;
    }
    for t in model.tokenizer.tokens() {
        w.write_all(&dim(t.len())?)?;
        w.write_all(t.as_bytes())?;
    }
    let mut floats = |xs: &[f64]| -> std::io::Result<()> {
        for x in xs {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    };
    floats(&model.embed.data)?;
    for b in &model.blocks {
        for m in [&b.wq, &b.wk, &b.wv, &b.wo, &b.w_in] {
            floats(&m.data)?;
        }
        floats(&b.b_in)?;
        floats(&b.w_out.data)?;
    }
    floats(&model.unembed.data)
}

struct Reader<'a, R> {
    r: &'a mut R,
    dtype: u32,
}

impl<R: Read> Reader<'_, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.r.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                ModelError::Format("truncated file".into())
            } else {
                ModelError::Io {
                    path: Default::default(),
                    source: e,
                }
            }
        })?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        self.bytes::<4>().map(u32::from_le_bytes)
    }

    fn dim(&mut self, what: &str) -> Result<usize> {
        let v = self.u32()?;
        if v > MAX_DIM {
            return Err(ModelError::Format(format!("{what} = {v} is implausibly large")));
        }
        Ok(v as usize)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n)
            .map(|_| {
                let x = match self.dtype {
                    4 => f64::from(f32::from_le_bytes(self.bytes::<4>()?)),
                    _ => f64::from_le_bytes(self.bytes::<8>()?),
                };
                if x.is_finite() {
                    Ok(x)
                } else {
                    Err(ModelError::Format("non-finite weight".into()))
                }
            })
            .collect()
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        Ok(Matrix {
            rows,
            cols,
            data: self.floats(rows * cols)?,
        })
    }
}

pub fn read_model(r: &mut impl Read) -> Result<ToyResidualModel> {
    let mut rd = Reader { r, dtype: 8 };
    if &rd.bytes::<4>()? != MAGIC {
        return Err(ModelError::Format("bad magic".into()));
    }
    let version = rd.u32()?;
    if version != FORMAT_VERSION {
        return Err(ModelError::Format(format!("unsupported version {version}")));
    }
    let dtype = rd.u32()?;
    if dtype != 4 && dtype != 8 {
        return Err(ModelError::Format(format!("unsupported dtype width {dtype}")));
    }
    let final_norm = match rd.u32()? {
        0 => false,
        1 => true,
        v => return Err(ModelError::Format(format!("final_norm flag {v}"))),
    };
    let init_seed = u64::from_le_bytes(rd.bytes::<8>()?);
    let vocab = rd.dim("vocab")?;
    let config = ModelConfig {
        d_model: rd.dim("d_model")?,
        n_layers: rd.dim("n_layers")?,
        n_heads: rd.dim("n_heads")?,
        d_mlp: rd.dim("d_mlp")?,
        final_norm,
        init_seed,
    };
    config.validate()?;

    let mut tokens = Vec::with_capacity(vocab);
    for _ in 0..vocab {
        let len = rd.dim("token length")?;
        let mut buf = vec![0u8; len];
        rd.r.read_exact(&mut buf)
            .map_err(|_| ModelError::Format("truncated token table".into()))?;
        tokens.push(String::from_utf8(buf).map_err(|_| ModelError::Format("token is not UTF-8".into()))?);
    }
    let tokenizer = Tokenizer::from_tokens(tokens).map_err(ModelError::Format)?;

    rd.dtype = dtype;
    let d = config.d_model;
    let embed = rd.matrix(vocab, d)?;
    let mut blocks = Vec::with_capacity(config.n_layers);
    for _ in 0..config.n_layers {
        blocks.push(Block {
            wq: rd.matrix(d, d)?,
            wk: rd.matrix(d, d)?,
            wv: rd.matrix(d, d)?,
            wo: rd.matrix(d, d)?,
            w_in: rd.matrix(d, config.d_mlp)?,
            b_in: rd.floats(config.d_mlp)?,
            w_out: rd.matrix(config.d_mlp, d)?,
        });
    }
    let unembed = rd.matrix(d, vocab)?;
    let mut probe = [0u8; 1];
    if rd.r.read(&mut probe).map_err(|e| ModelError::Format(e.to_string()))? != 0 {
        return Err(ModelError::Format("trailing bytes after unembedding".into()));
    }
    Ok(ToyResidualModel {
        config,
        tokenizer,
        embed,
        blocks,
        unembed,
    })
}
