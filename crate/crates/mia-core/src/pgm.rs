//! 8-bit binary PGM (P5) export for attention maps: values in [0,1] map
//! linearly to [0,255], clamped, row-major.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub fn write_pgm(path: &Path, height: usize, width: usize, values: &[f64]) -> Result<()> {
    if values.len() != height * width {
        return Err(Error::ShapeMismatch {
            op: "write_pgm",
            detail: format!("{height}x{width} image needs {} values, got {}", height * width, values.len()),
        });
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_payload() {
        let path = std::env::temp_dir().join(format!("mia_pgm_test_{}.pgm", std::process::id()));
        write_pgm(&path, 2, 3, &[0.0, 0.5, 1.0, 2.0, -1.0, 0.25]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        let payload = &bytes[bytes.len() - 6..];
        assert_eq!(payload, &[0u8, 128, 255, 255, 0, 64]);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn size_mismatch_rejected() {
        let path = std::env::temp_dir().join("unused.pgm");
        assert!(write_pgm(&path, 2, 2, &[0.0; 3]).is_err());
    }
}
