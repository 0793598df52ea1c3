//! Binary checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  "DYNFCKPT"
//! version      u32      = 1
//! header_len   u32      followed by header_len opaque header bytes
//! net_count    u32
//! per network:
//!   layer_count  u32
//!   skip_layer   u32    (0xFFFF_FFFF when absent)
//!   skip_prefix  u32
//!   per layer:   fan_in u32, fan_out u32, activation u8 (0 identity, 1 relu, 2 sigmoid)
//!   per layer:   fan_out*fan_in f64 weights (row-major), then fan_out f64 biases
//! has_adam     u8
//! if has_adam:
//!   learning_rate, beta1, beta2, epsilon  f64
//!   step                                  u64
//!   per network: first-moment values, then second-moment values,
//!                in the same per-layer weights-then-biases order
//! ```

use super::adam::{AdamConfig, AdamState};
use super::mlp::{Activation, Layer, ParamStore, Skip};
use super::DiffError;

pub const MAGIC: &[u8; 8] = b"DYNFCKPT";
pub const VERSION: u32 = 1;
const NO_SKIP: u32 = u32::MAX;

/// Decoded checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: Vec<u8>,
    pub networks: Vec<ParamStore>,
    /// Shared optimizer hyperparameters and step, one moment pair per network.
    pub adam: Option<Vec<AdamState>>,
}

#[derive(Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }
    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DiffError> {
        if self.buf.len() - self.pos < n {
            return Err(DiffError::Checkpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    pub fn u8(&mut self) -> Result<u8, DiffError> {
        Ok(self.take(1)?[0])
    }
    pub fn u32(&mut self) -> Result<u32, DiffError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn u64(&mut self) -> Result<u64, DiffError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn f64(&mut self) -> Result<f64, DiffError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn write_network(w: &mut ByteWriter, p: &ParamStore) {
    w.u32(p.layers().len() as u32);
    match p.skip() {
        Some(s) => {
            w.u32(s.layer as u32);
            w.u32(s.input_prefix as u32);
        }
        None => {
            w.u32(NO_SKIP);
            w.u32(0);
        }
    }
    for l in p.layers() {
        w.u32(l.fan_in as u32);
        w.u32(l.fan_out as u32);
        w.u8(l.activation.tag());
    }
    for l in p.layers() {
        l.weight.iter().chain(&l.bias).for_each(|&v| w.f64(v));
    }
}

fn read_network(r: &mut ByteReader<'_>) -> Result<ParamStore, DiffError> {
    let n = r.u32()? as usize;
    let skip_layer = r.u32()?;
    let skip_prefix = r.u32()? as usize;
    let skip = (skip_layer != NO_SKIP).then_some(Skip {
        layer: skip_layer as usize,
        input_prefix: skip_prefix,
    });
    let mut layers = Vec::with_capacity(n.min(1024));
    for i in 0..n {
        let fan_in = r.u32()? as usize;
        let fan_out = r.u32()? as usize;
        let tag = r.u8()?;
        let act = Activation::from_tag(tag)
            .ok_or_else(|| DiffError::Checkpoint(format!("layer {i}: unknown activation tag {tag}")))?;
        layers.push(Layer::zeros(fan_in, fan_out, act));
    }
    for l in &mut layers {
        for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
            *v = r.f64()?;
        }
    }
    ParamStore::new(layers, skip)
}

fn read_values_into(r: &mut ByteReader<'_>, target: &mut ParamStore) -> Result<(), DiffError> {
    for i in 0..target.num_params() {
        *target.value_mut(i) = r.f64()?;
    }
    Ok(())
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u32(ckpt.header.len() as u32);
    w.bytes(&ckpt.header);
    w.u32(ckpt.networks.len() as u32);
    for net in &ckpt.networks {
        write_network(&mut w, net);
    }
    match &ckpt.adam {
        Some(states) => {
            w.u8(1);
            let first = &states[0];
            w.f64(first.config.learning_rate);
            w.f64(first.config.beta1);
            w.f64(first.config.beta2);
            w.f64(first.config.epsilon);
            w.u64(first.step);
            for s in states {
                s.first_moment.values().for_each(|v| w.f64(v));
                s.second_moment.values().for_each(|v| w.f64(v));
            }
        }
        None => w.u8(0),
    }
    w.finish()
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, DiffError> {
    let mut r = ByteReader::new(bytes);
    if r.take(8)? != MAGIC {
        return Err(DiffError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(DiffError::Checkpoint(format!("unsupported version {version}")));
    }
    let header_len = r.u32()? as usize;
    let header = r.take(header_len)?.to_vec();
    let count = r.u32()? as usize;
    let mut networks = Vec::with_capacity(count.min(16));
    for _ in 0..count {
        networks.push(read_network(&mut r)?);
    }
    let adam = match r.u8()? {
        0 => None,
        1 => {
            let config = AdamConfig {
                learning_rate: r.f64()?,
                beta1: r.f64()?,
                beta2: r.f64()?,
                epsilon: r.f64()?,
            };
            let step = r.u64()?;
            let mut states = Vec::with_capacity(networks.len());
            for net in &networks {
                let mut s = AdamState::new(net, config);
                s.step = step;
                read_values_into(&mut r, &mut s.first_moment)?;
                read_values_into(&mut r, &mut s.second_moment)?;
                states.push(s);
            }
            Some(states)
        }
        other => return Err(DiffError::Checkpoint(format!("bad optimizer flag {other}"))),
    };
    if !r.is_empty() {
        return Err(DiffError::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint {
        header,
        networks,
        adam,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::mlp::MlpShape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let shape = MlpShape {
            input: 5,
            width: 6,
            depth: 3,
            output: 4,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Identity,
            skip: Some(Skip {
                layer: 2,
                input_prefix: 3,
            }),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = ParamStore::init(&shape, &mut rng);
        let b = ParamStore::init(&MlpShape { skip: None, ..shape }, &mut rng);
        let mut sa = AdamState::new(&a, AdamConfig::default());
        let mut sb = AdamState::new(&b, AdamConfig::default());
        *sa.first_moment.value_mut(3) = 0.125;
        *sb.second_moment.value_mut(7) = -3.5;
        sa.step = 42;
        sb.step = 42;
        Checkpoint {
            header: b"hdr".to_vec(),
            networks: vec![a, b],
            adam: Some(vec![sa, sb]),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = encode(&c);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(decode(&bytes).unwrap(), c);
    }

    #[test]
    fn truncation_and_magic_are_detected() {
        let bytes = encode(&sample());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
    }
}
