//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//! ```text
//! magic    8 bytes  "BSMCKPT1"
//! kind     u8       0 = bitsemcom, 1 = deepjscc-1bit
//! h, w     u32 each image geometry
//! width    u32      hidden conv width
//! c_latent u32      latent channel depth
//! l_b      u32      transmitted bit count
//! tau      f32      current sampling temperature
//! count    u32      number of tensors
//! tensor   repeated: name_len u16, name bytes, numel u32, numel f32 values
//! ```
//! Parameters are serialized as 32-bit floats.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::codec::CodecArch;
use crate::error::{Error, Result};
use crate::model::{Model, ModelKind};

const MAGIC: &[u8; 8] = b"BSMCKPT1";

pub fn save(model: &Model, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let arch = model.codec.arch;
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(match model.kind {
        ModelKind::BitSemCom => 0,
        ModelKind::DeepJscc1Bit => 1,
    });
    for v in [arch.h, arch.w, arch.width, arch.c_latent, model.l_b()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(model.tau() as f32).to_le_bytes());
    let tensors = model.named_tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let name_bytes = name.as_bytes();
        out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.extend_from_slice(&(t.numel() as u32).to_le_bytes());
        for &v in t.values() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| {
        Error::Checkpoint(format!("cannot read checkpoint {}: {e}", path.display()))
    })?;
    let mut r = Reader { bytes: &bytes, pos: 0 };

    let magic = r.take(8)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a model checkpoint (bad magic)",
            path.display()
        )));
    }
    let kind = match r.u8()? {
        0 => ModelKind::BitSemCom,
        1 => ModelKind::DeepJscc1Bit,
        k => return Err(Error::Checkpoint(format!("unknown model kind {k}"))),
    };
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let width = r.u32()? as usize;
    let c_latent = r.u32()? as usize;
    let l_b = r.u32()? as usize;
    let tau = r.f32()? as f64;

    let arch = CodecArch::new(h, w, width, c_latent)?;
    let mut model = Model::new(kind, arch, l_b, 0)?;
    model.set_tau(tau);

    let count = r.u32()? as usize;
    let mut named = model.named_tensors_mut();
    if count != named.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {count} tensors, model needs {}",
            named.len()
        )));
    }
    for (expected_name, tensor) in named.iter_mut() {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8_lossy(r.take(name_len)?).into_owned();
        if &name != expected_name {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` out of order (expected `{expected_name}`)"
            )));
        }
        let numel = r.u32()? as usize;
        if numel != tensor.numel() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has {numel} values, model needs {}",
                tensor.numel()
            )));
        }
        let vals = tensor.values_mut();
        for v in vals.iter_mut() {
            *v = r.f32()? as f64;
        }
    }
    Ok(model)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("checkpoint truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_f32_values() {
        let arch = CodecArch::new(16, 16, 4, 4).unwrap();
        let mut model = Model::bitsemcom(arch, 64, 9).unwrap();
        model.set_tau(0.62);
        let dir = std::env::temp_dir().join("bitsemcom_ckpt_test");
        let path = dir.join("m.ckpt");
        save(&model, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.kind, ModelKind::BitSemCom);
        assert!((loaded.tau() - 0.62).abs() < 1e-6);
        for ((n1, t1), (n2, t2)) in model.named_tensors().iter().zip(loaded.named_tensors()) {
            assert_eq!(n1, &n2);
            for (a, b) in t1.values().iter().zip(t2.values()) {
                assert_eq!(*a as f32, *b as f32, "{n1}");
            }
        }
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = std::env::temp_dir().join("bitsemcom_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("junk.ckpt");
        std::fs::write(&path, b"NOTACKPT plus junk").unwrap();
        assert!(matches!(load(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load(Path::new("/nonexistent/model.ckpt"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("/nonexistent/model.ckpt"), "{err}");
    }
}
