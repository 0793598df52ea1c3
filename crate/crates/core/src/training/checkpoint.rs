//! Model checkpoints: the binary parameter container from
//! [`crate::diffcore::checkpoint`] with a JSON header describing the model,
//! the camera it was trained under and the iteration reached.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::data::{atomic_write, read_file, TimeRule};
use crate::diffcore::checkpoint::{decode, encode, Checkpoint};
use crate::diffcore::{AdamState, DiffError};
use crate::fields::{FieldConfig, FieldParams};
use crate::rendering::Camera;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    model: FieldConfig,
    camera: Camera,
    frames: usize,
    time_rule: TimeRule,
    iteration: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub model: FieldConfig,
    pub camera: Camera,
    /// Number of training frames.
    pub frames: usize,
    pub time_rule: TimeRule,
    pub iteration: usize,
    pub params: FieldParams,
    /// Optimizer state for `[theta, phi]`.
    pub adam: Option<[AdamState; 2]>,
}

impl ModelCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            model: self.model,
            camera: self.camera.clone(),
            frames: self.frames,
            time_rule: self.time_rule,
            iteration: self.iteration,
        };
        encode(&Checkpoint {
            header: serde_json::to_vec(&header).expect("header serializes"),
            networks: vec![self.params.theta.clone(), self.params.phi.clone()],
            adam: self.adam.clone().map(Vec::from),
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let ckpt = decode(bytes)?;
        let header: Header = serde_json::from_slice(&ckpt.header)
            .map_err(|e| DiffError::Checkpoint(format!("bad header: {e}")))?;
        let [theta, phi]: [_; 2] = ckpt
            .networks
            .try_into()
            .map_err(|_| DiffError::Checkpoint("expected two networks".into()))?;
        let params = FieldParams {
            theta,
            phi,
            encoding: header.model.encoding,
        };
        params.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        let adam = ckpt
            .adam
            .map(|v| <[AdamState; 2]>::try_from(v).map_err(|_| DiffError::Checkpoint("expected two optimizer states".into())))
            .transpose()?;
        Ok(Self {
            model: header.model,
            camera: header.camera,
            frames: header.frames,
            time_rule: header.time_rule,
            iteration: header.iteration,
            params,
            adam,
        })
    }
}

pub fn save_model(path: &Path, ckpt: &ModelCheckpoint) -> Result<(), TrainError> {
    Ok(atomic_write(path, &ckpt.to_bytes())?)
}

pub fn load_model(path: &Path) -> Result<ModelCheckpoint, TrainError> {
    ModelCheckpoint::from_bytes(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::AdamConfig;
    use crate::fields::EncodingConfig;
    use crate::rendering::IDENTITY_POSE;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> ModelCheckpoint {
        let model = FieldConfig {
            encoding: EncodingConfig {
                levels_position: 3,
                levels_direction: 1,
                levels_time: 2,
                include_input: true,
            },
            width: 8,
            depth: 3,
            skip_layer: Some(2),
        };
        let params = FieldParams::init(&model, &mut ChaCha8Rng::seed_from_u64(5));
        let adam = [
            AdamState::new(&params.theta, AdamConfig::default()),
            AdamState::new(&params.phi, AdamConfig::default()),
        ];
        ModelCheckpoint {
            model,
            camera: Camera {
                fx: 10.0,
                fy: 11.0,
                cx: 4.0,
                cy: 3.0,
                width: 8,
                height: 6,
                near: 0.5,
                far: 2.5,
                pose: IDENTITY_POSE,
            },
            frames: 3,
            time_rule: TimeRule::Span,
            iteration: 17,
            params,
            adam: Some(adam),
        }
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(ModelCheckpoint::from_bytes(&bytes).unwrap(), c);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_model(&p, &c).unwrap();
        assert_eq!(load_model(&p).unwrap(), c);
        assert_eq!(std::fs::read(&p).unwrap(), bytes);
    }

    #[test]
    fn corrupt_input() {
        let bytes = sample().to_bytes();
        assert!(ModelCheckpoint::from_bytes(&bytes[..bytes.len() / 2]).is_err());
        assert!(ModelCheckpoint::from_bytes(b"garbage").is_err());
    }
}
