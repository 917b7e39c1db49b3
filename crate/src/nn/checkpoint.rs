//! Model checkpoints: one ASCII header line, then raw little-endian
//! 64-bit words (f64 bits or ring values, per the declared mode).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fixed::FixedVec;
use crate::sharing::Carrier;

use super::{Architecture, Model};

const MAGIC: &str = "model-checkpoint v1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointInfo {
    pub mode: String,
    pub frac_bits: u32,
    pub params: usize,
    pub descriptor: String,
}

impl CheckpointInfo {
    /// Reads just the header line.
    pub fn peek(path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(File::open(path)?);
        read_header(&mut reader)
    }
}

fn read_header(reader: &mut impl Read) -> Result<CheckpointInfo> {
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        match reader.read(&mut byte)? {
            0 => return Err(bad("missing header line")),
            _ if byte[0] == b'\n' => break,
            _ => line.push(byte[0]),
        }
        if line.len() > 4096 {
            return Err(bad("header line too long"));
        }
    }
    let line = String::from_utf8(line).map_err(|_| bad("header is not utf-8"))?;
    let rest = line.strip_prefix(MAGIC).ok_or_else(|| bad("unrecognized magic"))?;
    let mut mode = None;
    let mut frac = None;
    let mut params = None;
    let mut descriptor = None;
    for field in rest.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| bad(&format!("malformed field {field}")))?;
        match key {
            "mode" => mode = Some(value.to_string()),
            "frac" => frac = Some(value.parse().map_err(|_| bad("bad frac"))?),
            "params" => params = Some(value.parse().map_err(|_| bad("bad params"))?),
            "arch" => descriptor = Some(value.to_string()),
            _ => return Err(bad(&format!("unknown field {key}"))),
        }
    }
    Ok(CheckpointInfo {
        mode: mode.ok_or_else(|| bad("missing mode"))?,
        frac_bits: frac.ok_or_else(|| bad("missing frac"))?,
        params: params.ok_or_else(|| bad("missing params"))?,
        descriptor: descriptor.ok_or_else(|| bad("missing arch"))?,
    })
}

pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let (mode, frac, words): (&str, u32, Vec<u64>) = match &model.params {
        Carrier::F64(p) => ("float", 0, p.iter().map(|x| x.to_bits()).collect()),
        Carrier::Fixed(v) => ("fixed", v.frac_bits(), v.raw().to_vec()),
    };
    writeln!(
        out,
        "{MAGIC} mode={mode} frac={frac} params={} arch={}",
        words.len(),
        model.arch.descriptor()
    )?;
    for w in words {
        out.write_all(&w.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());
    let mut reader = BufReader::new(File::open(path)?);
    let info = read_header(&mut reader)?;
    let arch = Architecture::parse(&info.descriptor)?;
    if arch.param_count() != info.params {
        return Err(bad(&format!(
            "declared {} parameters but the architecture needs {}",
            info.params,
            arch.param_count()
        )));
    }
    let mut body = Vec::new();
    reader.read_to_end(&mut body)?;
    if body.len() != info.params * 8 {
        return Err(bad(&format!(
            "body is {} bytes, expected {}",
            body.len(),
            info.params * 8
        )));
    }
    let words: Vec<u64> =
        body.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
    let params = match info.mode.as_str() {
        "float" => {
            let p: Vec<f64> = words.into_iter().map(f64::from_bits).collect();
            if p.iter().any(|x| !x.is_finite()) {
                return Err(bad("non-finite parameter"));
            }
            Carrier::F64(p)
        }
        "fixed" => Carrier::Fixed(FixedVec::from_raw(words, info.frac_bits)),
        other => return Err(bad(&format!("unknown mode {other}"))),
    };
    Model::from_params(arch, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Seek;

    #[test]
    fn roundtrip_preserves_bits_in_both_modes() {
        let dir = tempfile::tempdir().unwrap();
        let float = Model::init(Architecture::mlp(&[784, 128, 10]), 3).unwrap();
        let fixed = float.to_fixed(22).unwrap();
        for (name, model) in [("f.ckpt", &float), ("x.ckpt", &fixed)] {
            let path = dir.path().join(name);
            save_checkpoint(&path, model).unwrap();
            let back = load_checkpoint(&path).unwrap();
            assert_eq!(back.arch, model.arch);
            assert_eq!(back.params, model.params);
        }
        let info = CheckpointInfo::peek(&dir.path().join("x.ckpt")).unwrap();
        assert_eq!(info.mode, "fixed");
        assert_eq!(info.frac_bits, 22);
        assert_eq!(info.params, 101_770);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let model = Model::init(Architecture::mlp(&[784, 32, 10]), 1).unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &model).unwrap();

        // Truncated body.
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 4]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));

        // Wrong magic.
        std::fs::write(&path, b"something else\n").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));

        // Header/architecture disagreement.
        let mut f = std::fs::OpenOptions::new().write(true).create(true).open(&path).unwrap();
        f.rewind().unwrap();
        writeln!(f, "{MAGIC} mode=float frac=0 params=7 arch=in:1x1x2|dense:2,2").unwrap();
        f.write_all(&[0u8; 7 * 8]).unwrap();
        drop(f);
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
