//! Binary model checkpoints. Layout, all integers little-endian:
//!
//! ```text
//! magic "MIACKPT1" (8 bytes)
//! tag length (u64) + tag bytes          -- model identity string
//! entry count (u64)
//! per entry: name length (u64) + name bytes,
//!            rank (u64), dims (u64 each),
//!            payload (f64 little-endian, row-major)
//! CRC-32 of all preceding bytes (u32)
//! ```

use std::path::Path;

use crate::backbone::Model;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"MIACKPT1";

/// CRC-32 (IEEE, reflected, polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut table = [0u32; 256];
    for (i, slot) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
        }
        *slot = c;
    }
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    crc ^ 0xFFFF_FFFF
}

/// Serialize a model to checkpoint bytes.
pub fn checkpoint_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let tag = model.tag();
    out.extend_from_slice(&(tag.len() as u64).to_le_bytes());
    out.extend_from_slice(tag.as_bytes());
    out.extend_from_slice(&(model.params().len() as u64).to_le_bytes());
    for p in model.params() {
        out.extend_from_slice(&(p.name.len() as u64).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.tensor.rank() as u64).to_le_bytes());
        for &d in p.tensor.dims() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(model)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::ShapeMismatchOnLoad {
                detail: format!("unexpected end of checkpoint at byte {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Parse checkpoint bytes back into a model. The tag rebuilds the skeleton;
/// every entry must match a skeleton parameter by name and shape, and every
/// parameter must be covered.
pub fn parse_checkpoint(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    let body_len = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_len..].try_into().expect("4 bytes"));
    let computed = crc32(&bytes[..body_len]);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }

    let mut r = Reader { bytes: &bytes[..body_len], pos: MAGIC.len() };
    let tag_len = r.u64()? as usize;
    let tag = String::from_utf8(r.take(tag_len)?.to_vec())
        .map_err(|_| Error::ShapeMismatchOnLoad { detail: "tag is not valid utf-8".into() })?;
    let mut model = Model::from_tag(&tag)?;

    let entry_count = r.u64()? as usize;
    if entry_count != model.params().len() {
        return Err(Error::ShapeMismatchOnLoad {
            detail: format!(
                "checkpoint holds {entry_count} entries, skeleton '{tag}' expects {}",
                model.params().len()
            ),
        });
    }
    let mut filled = vec![false; entry_count];
    for _ in 0..entry_count {
        let name_len = r.u64()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::ShapeMismatchOnLoad { detail: "entry name is not valid utf-8".into() })?;
        let rank = r.u64()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64()? as usize);
        }
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.f64()?);
        }
        let idx = model
            .params()
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| Error::ShapeMismatchOnLoad {
                detail: format!("entry '{name}' has no slot in skeleton '{tag}'"),
            })?;
        if model.params()[idx].tensor.dims() != dims.as_slice() {
            return Err(Error::ShapeMismatchOnLoad {
                detail: format!(
                    "entry '{name}' has dims {dims:?}, skeleton expects {:?}",
                    model.params()[idx].tensor.dims()
                ),
            });
        }
        if filled[idx] {
            return Err(Error::ShapeMismatchOnLoad {
                detail: format!("duplicate entry '{name}'"),
            });
        }
        model.params_mut()[idx].tensor = Tensor::from_dims(&dims, data)?;
        filled[idx] = true;
    }
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile { path: path.display().to_string() }
        } else {
            Error::io(path, e)
        }
    })?;
    parse_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{build_mini_cnn, Variant};

    #[test]
    fn crc32_known_vector() {
        // the standard CRC-32 check value
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
        assert_eq!(crc32(b""), 0);
    }

    #[test]
    fn round_trip_is_bitwise() {
        let model = build_mini_cnn((3, 16, 16), 4, Variant::Mia, 16, 77).unwrap();
        let bytes = checkpoint_bytes(&model);
        let loaded = parse_checkpoint(&bytes).unwrap();
        assert_eq!(loaded.tag(), model.tag());
        for (a, b) in loaded.params().iter().zip(model.params()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor.data(), b.tensor.data(), "{} not bitwise equal", a.name);
        }
    }

    #[test]
    fn corrupt_payload_byte_fails_checksum() {
        let model = build_mini_cnn((3, 16, 16), 4, Variant::Mia, 16, 78).unwrap();
        let mut bytes = checkpoint_bytes(&model);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        assert!(matches!(parse_checkpoint(&bytes), Err(Error::ChecksumMismatch { .. })));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let model = build_mini_cnn((3, 16, 16), 4, Variant::Mia, 16, 79).unwrap();
        let mut bytes = checkpoint_bytes(&model);
        bytes[0] = b'X';
        assert!(matches!(parse_checkpoint(&bytes), Err(Error::BadMagic)));
        assert!(matches!(parse_checkpoint(b"tiny"), Err(Error::BadMagic)));
    }

    #[test]
    fn variant_tag_disagreement_is_rejected() {
        // entries from a full-attention model under a tag claiming none
        let model = build_mini_cnn((3, 16, 16), 4, Variant::Mia, 16, 80).unwrap();
        let honest = checkpoint_bytes(&model);
        let old_tag = model.tag();
        let new_tag = old_tag.replace("v=mia", "v=none");

        let mut forged = Vec::new();
        forged.extend_from_slice(MAGIC);
        forged.extend_from_slice(&(new_tag.len() as u64).to_le_bytes());
        forged.extend_from_slice(new_tag.as_bytes());
        let body_start = MAGIC.len() + 8 + old_tag.len();
        forged.extend_from_slice(&honest[body_start..honest.len() - 4]);
        let crc = crc32(&forged);
        forged.extend_from_slice(&crc.to_le_bytes());

        assert!(matches!(
            parse_checkpoint(&forged),
            Err(Error::ShapeMismatchOnLoad { .. })
        ));
    }

    #[test]
    fn save_and_load_via_files() {
        let model = build_mini_cnn((3, 16, 16), 4, Variant::SeOnly, 8, 81).unwrap();
        let path = std::env::temp_dir().join(format!("mia_ckpt_test_{}.ckpt", std::process::id()));
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.tag(), model.tag());
        std::fs::remove_file(&path).ok();
        assert!(matches!(load_checkpoint(&path), Err(Error::MissingFile { .. })));
    }
}
