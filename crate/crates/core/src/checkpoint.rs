//! Single-file checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "MAMSCKPT"
//! version      u32      1
//! config_len   u32
//! config       config_len bytes of UTF-8 "key=value\n" lines
//! entries      u32      N
//! N times:     u32 name_len, name bytes, u32 rank (2), u64 rows, u64 cols, u64 count
//! N buffers:   count f64 values each, in manifest order
//! ```

use std::io::{Read, Write};

use crate::captioner::{Model, ModelConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MAMSCKPT";
const VERSION: u32 = 1;

fn config_text(c: &ModelConfig) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        s.push_str(k);
        s.push('=');
        s.push_str(&v);
        s.push('\n');
    };
    kv("d", c.d.to_string());
    kv("heads", c.heads.to_string());
    kv("layers", c.layers.to_string());
    kv("mlp_hidden", c.mlp_hidden.to_string());
    kv("vocab_size", c.vocab_size.to_string());
    kv("max_len", c.max_len.to_string());
    kv("t_large", c.t_large.to_string());
    kv("t_small", c.t_small.to_string());
    kv("t_mid", c.t_mid.map_or(String::from("none"), |m| m.to_string()));
    kv("per_frame", c.per_frame.to_string());
    kv("frame_height", c.frame_height.to_string());
    kv("frame_width", c.frame_width.to_string());
    kv("patch_rows", c.patch_rows.to_string());
    kv("patch_cols", c.patch_cols.to_string());
    kv("learnable_mask", c.learnable_mask.to_string());
    s
}

fn parse_config(text: &str) -> Result<ModelConfig> {
    let mut c = ModelConfig::default();
    let bad = |k: &str, v: &str| Error::Checkpoint(format!("bad config value {k}={v}"));
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("bad config line {line:?}")))?;
        let n = || v.parse::<usize>().map_err(|_| bad(k, v));
        match k {
            "d" => c.d = n()?,
            "heads" => c.heads = n()?,
            "layers" => c.layers = n()?,
            "mlp_hidden" => c.mlp_hidden = n()?,
            "vocab_size" => c.vocab_size = n()?,
            "max_len" => c.max_len = n()?,
            "t_large" => c.t_large = n()?,
            "t_small" => c.t_small = n()?,
            "t_mid" => c.t_mid = if v == "none" { None } else { Some(n()?) },
            "per_frame" => c.per_frame = n()?,
            "frame_height" => c.frame_height = n()?,
            "frame_width" => c.frame_width = n()?,
            "patch_rows" => c.patch_rows = n()?,
            "patch_cols" => c.patch_cols = n()?,
            "learnable_mask" => c.learnable_mask = v.parse().map_err(|_| bad(k, v))?,
            other => return Err(Error::Checkpoint(format!("unknown config key {other}"))),
        }
    }
    c.validate()?;
    Ok(c)
}

pub fn write_checkpoint<W: Write>(model: &Model, mut w: W) -> Result<()> {
    let cfg = config_text(model.config());
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(cfg.as_bytes())?;
    let params = model.named_params();
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, m) in &params {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&2u32.to_le_bytes())?;
        w.write_all(&(m.rows() as u64).to_le_bytes())?;
        w.write_all(&(m.cols() as u64).to_le_bytes())?;
        w.write_all(&(m.data().len() as u64).to_le_bytes())?;
    }
    for (_, m) in &params {
        for v in m.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let clen = read_u32(&mut r)? as usize;
    let mut cfg = vec![0u8; clen];
    r.read_exact(&mut cfg)?;
    let cfg = String::from_utf8(cfg).map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
    let mut model = Model::new(parse_config(&cfg)?, 0)?;

    let n = read_u32(&mut r)? as usize;
    let mut manifest = Vec::with_capacity(n);
    for _ in 0..n {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("bad name".into()))?;
        let rank = read_u32(&mut r)?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let count = read_u64(&mut r)? as usize;
        if rank != 2 || rows * cols != count {
            return Err(Error::Checkpoint(format!("inconsistent shape for {name}")));
        }
        manifest.push((name, rows, cols));
    }
    let expected: Vec<(String, usize, usize)> = model
        .named_params()
        .into_iter()
        .map(|(k, m)| (k, m.rows(), m.cols()))
        .collect();
    if manifest != expected {
        return Err(Error::Checkpoint("manifest does not match the configured model".into()));
    }
    let mut buf = [0u8; 8];
    for m in model.params_mut() {
        for v in m.data_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
    }
    Ok(model)
}

pub fn save(model: &Model, path: &std::path::Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &std::path::Path) -> Result<Model> {
    let f = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d: 8,
            heads: 2,
            layers: 1,
            mlp_hidden: 8,
            vocab_size: 8,
            max_len: 4,
            t_large: 4,
            t_small: 2,
            t_mid: Some(3),
            per_frame: 2,
            frame_height: 4,
            frame_width: 4,
            patch_rows: 1,
            patch_cols: 2,
            learnable_mask: true,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let model = Model::new(tiny(), 3).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&model, &mut bytes).unwrap();
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(back, model);
        assert_eq!(&bytes[..8], b"MAMSCKPT");
    }

    #[test]
    fn rejects_corruption() {
        let model = Model::new(tiny(), 3).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&model, &mut bytes).unwrap();
        assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(read_checkpoint(wrong.as_slice()).is_err());
    }
}
