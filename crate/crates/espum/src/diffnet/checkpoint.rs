//! Binary serialization for parameters, optimizer state, and layer specs.
//!
//! Little-endian throughout. A file starts with the magic `ESPM` and a format
//! version; each parameter is written as name length, name bytes, shape rank,
//! dims, then the f64 payload. Adam moments reuse the same named-tensor
//! layout. Gradients are transient and never serialized.

use super::{AdamConfig, AdamState, DiffnetError, LayerSpec, NetworkSpec, Parameter, Tensor};
use std::io::{Read, Write};

pub const MAGIC: [u8; 4] = *b"ESPM";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_header(w: &mut impl Write) -> Result<(), DiffnetError> {
    w.write_all(&MAGIC)?;
    write_u32(w, FORMAT_VERSION)
}

pub fn read_header(r: &mut impl Read) -> Result<(), DiffnetError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(DiffnetError::BadCheckpoint(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(DiffnetError::BadCheckpoint(format!(
            "unsupported format version {version}"
        )));
    }
    Ok(())
}

pub fn write_u32(w: &mut impl Write, v: u32) -> Result<(), DiffnetError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn read_u32(r: &mut impl Read) -> Result<u32, DiffnetError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn write_u64(w: &mut impl Write, v: u64) -> Result<(), DiffnetError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn read_u64(r: &mut impl Read) -> Result<u64, DiffnetError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn write_f64(w: &mut impl Write, v: f64) -> Result<(), DiffnetError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn read_f64(r: &mut impl Read) -> Result<f64, DiffnetError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

pub fn write_string(w: &mut impl Write, s: &str) -> Result<(), DiffnetError> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn read_string(r: &mut impl Read) -> Result<String, DiffnetError> {
    let len = read_u32(r)? as usize;
    if len > (1 << 20) {
        return Err(DiffnetError::BadCheckpoint(format!(
            "string length {len} is implausible"
        )));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf)
        .map_err(|e| DiffnetError::BadCheckpoint(format!("non-UTF-8 string: {e}")))
}

fn write_tensor_body(w: &mut impl Write, t: &Tensor) -> Result<(), DiffnetError> {
    write_u32(w, t.shape().len() as u32)?;
    for &d in t.shape() {
        write_u32(w, d as u32)?;
    }
    for &v in t.values() {
        write_f64(w, v)?;
    }
    Ok(())
}

fn read_tensor_body(r: &mut impl Read) -> Result<Tensor, DiffnetError> {
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(DiffnetError::BadCheckpoint(format!(
            "tensor rank {rank} is implausible"
        )));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut len: usize = 1;
    for _ in 0..rank {
        let d = read_u32(r)? as usize;
        len = len.saturating_mul(d);
        shape.push(d);
    }
    if len > (1 << 28) {
        return Err(DiffnetError::BadCheckpoint(format!(
            "tensor of {len} elements is implausible"
        )));
    }
    let mut values = Vec::with_capacity(len);
    for _ in 0..len {
        values.push(read_f64(r)?);
    }
    Tensor::from_vec(&shape, values)
        .map_err(|e| DiffnetError::BadCheckpoint(format!("tensor payload: {e}")))
}

/// Count-prefixed block of named tensors.
pub fn write_params(w: &mut impl Write, params: &[Parameter]) -> Result<(), DiffnetError> {
    write_u32(w, params.len() as u32)?;
    for p in params {
        write_string(w, &p.name)?;
        write_tensor_body(w, &p.tensor)?;
    }
    Ok(())
}

pub fn read_params(r: &mut impl Read) -> Result<Vec<Parameter>, DiffnetError> {
    let count = read_u32(r)? as usize;
    if count > (1 << 16) {
        return Err(DiffnetError::BadCheckpoint(format!(
            "{count} parameters is implausible"
        )));
    }
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name = read_string(r)?;
        let tensor = read_tensor_body(r)?;
        params.push(Parameter::new(name, tensor));
    }
    Ok(params)
}

pub fn write_spec(w: &mut impl Write, spec: &NetworkSpec) -> Result<(), DiffnetError> {
    write_u32(w, spec.layers().len() as u32)?;
    for layer in spec.layers() {
        match layer {
            LayerSpec::Conv1d {
                in_ch,
                out_ch,
                kernel,
                stride,
            } => {
                w.write_all(&[0])?;
                write_u32(w, *in_ch as u32)?;
                write_u32(w, *out_ch as u32)?;
                write_u32(w, *kernel as u32)?;
                write_u32(w, *stride as u32)?;
            }
            LayerSpec::Relu => w.write_all(&[1])?,
            LayerSpec::Sigmoid => w.write_all(&[2])?,
            LayerSpec::SoftmaxRows => w.write_all(&[3])?,
        }
    }
    Ok(())
}

pub fn read_spec(r: &mut impl Read) -> Result<NetworkSpec, DiffnetError> {
    let count = read_u32(r)? as usize;
    if count > 1024 {
        return Err(DiffnetError::BadCheckpoint(format!(
            "{count} layers is implausible"
        )));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        layers.push(match tag[0] {
            0 => LayerSpec::Conv1d {
                in_ch: read_u32(r)? as usize,
                out_ch: read_u32(r)? as usize,
                kernel: read_u32(r)? as usize,
                stride: read_u32(r)? as usize,
            },
            1 => LayerSpec::Relu,
            2 => LayerSpec::Sigmoid,
            3 => LayerSpec::SoftmaxRows,
            t => {
                return Err(DiffnetError::BadCheckpoint(format!(
                    "unknown layer tag {t}"
                )))
            }
        });
    }
    NetworkSpec::new(layers)
        .map_err(|e| DiffnetError::BadCheckpoint(format!("stored spec invalid: {e}")))
}

pub fn write_adam(w: &mut impl Write, state: &AdamState) -> Result<(), DiffnetError> {
    write_f64(w, state.config.lr)?;
    write_f64(w, state.config.beta1)?;
    write_f64(w, state.config.beta2)?;
    write_f64(w, state.config.eps)?;
    write_u64(w, state.step)?;
    write_u32(w, state.m.len() as u32)?;
    for (i, (m, v)) in state.m.iter().zip(&state.v).enumerate() {
        write_string(w, &format!("m{i}"))?;
        write_tensor_body(w, m)?;
        write_string(w, &format!("v{i}"))?;
        write_tensor_body(w, v)?;
    }
    Ok(())
}

pub fn read_adam(r: &mut impl Read) -> Result<AdamState, DiffnetError> {
    let config = AdamConfig {
        lr: read_f64(r)?,
        beta1: read_f64(r)?,
        beta2: read_f64(r)?,
        eps: read_f64(r)?,
    };
    let step = read_u64(r)?;
    let count = read_u32(r)? as usize;
    if count > (1 << 16) {
        return Err(DiffnetError::BadCheckpoint(format!(
            "{count} moment tensors is implausible"
        )));
    }
    let mut m = Vec::with_capacity(count);
    let mut v = Vec::with_capacity(count);
    for i in 0..count {
        let name = read_string(r)?;
        if name != format!("m{i}") {
            return Err(DiffnetError::BadCheckpoint(format!(
                "expected moment m{i}, found {name}"
            )));
        }
        m.push(read_tensor_body(r)?);
        let name = read_string(r)?;
        if name != format!("v{i}") {
            return Err(DiffnetError::BadCheckpoint(format!(
                "expected moment v{i}, found {name}"
            )));
        }
        v.push(read_tensor_body(r)?);
    }
    Ok(AdamState {
        config,
        step,
        m,
        v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::Network;
    use std::io::Cursor;

    fn sample_params() -> Vec<Parameter> {
        vec![
            Parameter::new(
                "layer0.weight",
                Tensor::from_vec(&[2, 1, 3], vec![0.0, 1e-300, std::f64::consts::PI, -7.25, 1.0, 2.0]).unwrap(),
            ),
            Parameter::new("layer0.bias", Tensor::from_vec(&[2], vec![0.125, -0.5]).unwrap()),
        ]
    }

    #[test]
    fn params_round_trip_bit_exact() {
        let params = sample_params();
        let mut buf = Vec::new();
        write_header(&mut buf).unwrap();
        write_params(&mut buf, &params).unwrap();
        let mut r = Cursor::new(buf);
        read_header(&mut r).unwrap();
        let back = read_params(&mut r).unwrap();
        assert_eq!(back.len(), params.len());
        for (a, b) in params.iter().zip(&back) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor.shape(), b.tensor.shape());
            for (x, y) in a.tensor.values().iter().zip(b.tensor.values()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            assert!(b.grad.values().iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"XXXX");
        write_u32(&mut buf, FORMAT_VERSION).unwrap();
        let err = read_header(&mut Cursor::new(buf)).unwrap_err();
        assert!(matches!(err, DiffnetError::BadCheckpoint(_)));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut buf = Vec::new();
        buf.extend_from_slice(&MAGIC);
        write_u32(&mut buf, 999).unwrap();
        let err = read_header(&mut Cursor::new(buf)).unwrap_err();
        assert!(matches!(err, DiffnetError::BadCheckpoint(_)));
    }

    #[test]
    fn truncation_is_an_io_error() {
        let params = sample_params();
        let mut buf = Vec::new();
        write_params(&mut buf, &params).unwrap();
        buf.truncate(buf.len() - 3);
        let err = read_params(&mut Cursor::new(buf)).unwrap_err();
        assert!(matches!(err, DiffnetError::Io(_)));
    }

    #[test]
    fn spec_round_trip() {
        let spec = NetworkSpec::new(vec![
            LayerSpec::Conv1d {
                in_ch: 3,
                out_ch: 5,
                kernel: 4,
                stride: 2,
            },
            LayerSpec::Relu,
            LayerSpec::Sigmoid,
            LayerSpec::SoftmaxRows,
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_spec(&mut buf, &spec).unwrap();
        let back = read_spec(&mut Cursor::new(buf)).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn adam_round_trip() {
        let spec = NetworkSpec::new(vec![LayerSpec::Conv1d {
            in_ch: 1,
            out_ch: 2,
            kernel: 2,
            stride: 1,
        }])
        .unwrap();
        let mut net = Network::new(spec, 5);
        let mut state = AdamState::new(AdamConfig::default(), &net);
        for p in net.params_mut() {
            p.grad.fill(0.3);
        }
        state.step(&mut net).unwrap();
        let mut buf = Vec::new();
        write_adam(&mut buf, &state).unwrap();
        let back = read_adam(&mut Cursor::new(buf)).unwrap();
        assert_eq!(back.step, state.step);
        assert_eq!(back.config, state.config);
        for (a, b) in state.m.iter().zip(&back.m) {
            assert_eq!(a.values(), b.values());
        }
        for (a, b) in state.v.iter().zip(&back.v) {
            assert_eq!(a.values(), b.values());
        }
    }
}
