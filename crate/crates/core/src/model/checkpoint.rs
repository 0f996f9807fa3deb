//! SSE1 checkpoint format: a text manifest followed by raw f32 payloads.
//!
//! ```text
//! SSE1
//! config cell=gru layers=2 ...
//! tensor embedding.city 41 8 0
//! tensor layer0.z.w 328 8 1312
//! ...
//! end
//! <f32 little-endian payloads, contiguous, in manifest order>
//! ```
//!
//! Values are stored as f32. Loading widens to f64 exactly, so
//! save → load → save is byte-identical: the first save rounds once and
//! f32 values are a fixed point of the round trip.

use std::fs;
use std::path::Path;

use crate::tensor::Tensor;

use super::{ModelConfig, ModelError, ModelParams};

const MAGIC: &[u8] = b"SSE1\n";

pub fn save_checkpoint(params: &ModelParams) -> Vec<u8> {
    let mut header = String::from("SSE1\n");
    header.push_str(&format!("config {}\n", params.config().to_kv()));
    let mut offset = 0usize;
    for (name, tensor) in params.names().iter().zip(params.tensors()) {
        header.push_str(&format!(
            "tensor {name} {} {} {offset}\n",
            tensor.rows(),
            tensor.cols()
        ));
        offset += tensor.len() * 4;
    }
    header.push_str("end\n");

    let mut bytes = header.into_bytes();
    bytes.reserve(offset);
    for tensor in params.tensors() {
        for &v in tensor.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    bytes
}

pub fn save_checkpoint_path(params: &ModelParams, path: &Path) -> Result<(), ModelError> {
    Ok(fs::write(path, save_checkpoint(params))?)
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<ModelParams, ModelError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(corrupt("missing SSE1 magic"));
    }
    let mut pos = MAGIC.len();

    let config_line = take_line(bytes, &mut pos)?;
    let kv = config_line
        .strip_prefix("config ")
        .ok_or_else(|| corrupt("first manifest line must be `config ...`"))?;
    let config = ModelConfig::from_kv(kv)?;

    let mut names = Vec::new();
    let mut shapes = Vec::new();
    let mut expected_offset = 0usize;
    loop {
        let line = take_line(bytes, &mut pos)?;
        if line == "end" {
            break;
        }
        let rest = line
            .strip_prefix("tensor ")
            .ok_or_else(|| corrupt(&format!("unexpected manifest line `{line}`")))?;
        let fields: Vec<&str> = rest.split(' ').collect();
        if fields.len() != 4 {
            return Err(corrupt(&format!("malformed tensor line `{line}`")));
        }
        let name = fields[0].to_string();
        let rows = parse_usize(fields[1], line)?;
        let cols = parse_usize(fields[2], line)?;
        let offset = parse_usize(fields[3], line)?;
        if offset != expected_offset {
            return Err(corrupt(&format!(
                "tensor `{name}` at offset {offset}, expected {expected_offset}"
            )));
        }
        expected_offset = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .and_then(|b| b.checked_add(expected_offset))
            .ok_or_else(|| corrupt("tensor sizes overflow"))?;
        names.push(name);
        shapes.push((rows, cols));
    }

    let payload = &bytes[pos..];
    if payload.len() != expected_offset {
        return Err(corrupt(&format!(
            "payload is {} bytes, manifest promises {expected_offset}",
            payload.len()
        )));
    }

    let mut tensors = Vec::with_capacity(shapes.len());
    let mut cursor = 0usize;
    for &(rows, cols) in &shapes {
        let n = rows * cols;
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let raw: [u8; 4] = payload[cursor + 4 * i..cursor + 4 * i + 4]
                .try_into()
                .expect("slice length checked above");
            data.push(f64::from(f32::from_le_bytes(raw)));
        }
        cursor += n * 4;
        tensors.push(Tensor::new(rows, cols, data).map_err(|e| {
            ModelError::Checkpoint(format!("bad payload values: {e}"))
        })?);
    }
    ModelParams::from_parts(config, names, tensors)
}

pub fn load_checkpoint_path(path: &Path) -> Result<ModelParams, ModelError> {
    load_checkpoint(&fs::read(path)?)
}

fn corrupt(msg: &str) -> ModelError {
    ModelError::Checkpoint(msg.to_string())
}

fn take_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str, ModelError> {
    let rest = &bytes[*pos..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt("manifest ends before `end` line"))?;
    let line = std::str::from_utf8(&rest[..nl]).map_err(|_| corrupt("manifest is not UTF-8"))?;
    *pos += nl + 1;
    Ok(line)
}

fn parse_usize(field: &str, line: &str) -> Result<usize, ModelError> {
    field
        .parse()
        .map_err(|_| corrupt(&format!("bad number `{field}` in `{line}`")))
}

#[cfg(test)]
mod tests {
    use super::super::{CellKind, DecoderKind, ModelConfig};
    use super::*;
    use crate::data::{build_vocab, generate_synthetic, SynthConfig, Vocab, VocabCaps};

    fn vocab() -> Vocab {
        let sessions = generate_synthetic(&SynthConfig::new(30, 9, 3, 4)).unwrap();
        build_vocab(&sessions, VocabCaps::default()).unwrap()
    }

    fn config() -> ModelConfig {
        ModelConfig {
            cell: CellKind::Lstm,
            layers: 2,
            hidden_dim: 6,
            decoder: DecoderKind::Feedforward,
            city_dim: 5,
            categorical_dim: 4,
            device_dim: 2,
            numerical_dim: 3,
            input_dropout: 0.25,
            recurrent_dropout: 0.1,
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let params = ModelParams::init(config(), &vocab(), 17).unwrap();
        let first = save_checkpoint(&params);
        let loaded = load_checkpoint(&first).unwrap();
        let second = save_checkpoint(&loaded);
        assert_eq!(first, second, "f32 payloads must be a round-trip fixed point");
        assert_eq!(loaded.config(), params.config());
        assert_eq!(loaded.names(), params.names());
    }

    #[test]
    fn loaded_values_are_exactly_the_f32_rounding_of_the_originals() {
        let params = ModelParams::init(config(), &vocab(), 18).unwrap();
        let loaded = load_checkpoint(&save_checkpoint(&params)).unwrap();
        for (orig, back) in params.tensors().iter().zip(loaded.tensors()) {
            assert_eq!(orig.shape(), back.shape());
            for (&o, &b) in orig.data().iter().zip(back.data()) {
                assert_eq!(b.to_bits(), f64::from(o as f32).to_bits());
            }
        }
    }

    #[test]
    fn rejects_wrong_magic() {
        let params = ModelParams::init(config(), &vocab(), 19).unwrap();
        let mut bytes = save_checkpoint(&params);
        bytes[0] = b'X';
        let err = load_checkpoint(&bytes).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn rejects_truncated_payload() {
        let params = ModelParams::init(config(), &vocab(), 20).unwrap();
        let mut bytes = save_checkpoint(&params);
        bytes.truncate(bytes.len() - 3);
        let err = load_checkpoint(&bytes).unwrap_err();
        assert!(err.to_string().contains("payload"), "{err}");
    }

    #[test]
    fn rejects_non_finite_payload_values() {
        let params = ModelParams::init(config(), &vocab(), 21).unwrap();
        let mut bytes = save_checkpoint(&params);
        let payload_start = bytes
            .windows(4)
            .position(|w| w == b"end\n")
            .map(|p| p + 4)
            .unwrap();
        bytes[payload_start..payload_start + 4]
            .copy_from_slice(&f32::NAN.to_le_bytes());
        let err = load_checkpoint(&bytes).unwrap_err();
        assert!(err.to_string().contains("payload values"), "{err}");
    }

    #[test]
    fn file_round_trip_works() {
        let dir = std::env::temp_dir().join(format!("sse-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.sse");
        let params = ModelParams::init(config(), &vocab(), 22).unwrap();
        save_checkpoint_path(&params, &path).unwrap();
        let loaded = load_checkpoint_path(&path).unwrap();
        assert_eq!(save_checkpoint(&loaded), save_checkpoint(&params));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
