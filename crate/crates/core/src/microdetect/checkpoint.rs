//! Checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! magic    8 bytes  "HNMPGDCK"
//! version  u32      1
//! side     u32
//! grid     u32
//! classes  u32
//! count    u32      number of parameters that follow
//! params   count × f32, in `DetectorModel::parameters` order
//! ```

use std::path::Path;

use super::DetectorModel;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HNMPGDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const HEADER_LEN: usize = 8 + 5 * 4;

pub fn encode_checkpoint(model: &DetectorModel) -> Vec<u8> {
    let params = model.parameters();
    let mut bytes = Vec::with_capacity(HEADER_LEN + 4 * params.len());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [
        CHECKPOINT_VERSION,
        model.side() as u32,
        model.grid() as u32,
        model.classes() as u32,
        params.len() as u32,
    ] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for p in params {
        bytes.extend_from_slice(&(p as f32).to_le_bytes());
    }
    bytes
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<DetectorModel, String> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err("not a detector checkpoint".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let (side, grid, classes, count) = (
        word(1) as usize,
        word(2) as usize,
        word(3) as usize,
        word(4) as usize,
    );
    let mut model = DetectorModel::zeros(side, grid, classes).map_err(|e| e.to_string())?;
    if count != model.parameter_count() || bytes.len() != HEADER_LEN + 4 * count {
        return Err(format!(
            "parameter block does not match architecture (side {side}, grid {grid}, classes {classes})"
        ));
    }
    let params: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    model.set_parameters(&params).map_err(|e| e.to_string())?;
    Ok(model)
}

pub fn save_checkpoint(model: &DetectorModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DetectorModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|reason| Error::malformed(path, reason))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_weights_exactly() {
        let model = DetectorModel::init(64, 8, 3, 77).unwrap();
        let back = decode_checkpoint(&encode_checkpoint(&model)).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn header_is_fixed_layout() {
        let model = DetectorModel::zeros(64, 8, 3).unwrap();
        let bytes = encode_checkpoint(&model);
        assert_eq!(&bytes[..8], b"HNMPGDCK");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &64u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &8u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &3u32.to_le_bytes());
        assert_eq!(bytes.len(), HEADER_LEN + 4 * model.parameter_count());
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let good = encode_checkpoint(&DetectorModel::zeros(64, 8, 3).unwrap());
        assert!(decode_checkpoint(b"nonsense").is_err());
        assert!(decode_checkpoint(&good[..good.len() - 4]).is_err());
        let mut bad_version = good.clone();
        bad_version[8] = 9;
        assert!(decode_checkpoint(&bad_version).is_err());
    }
}
