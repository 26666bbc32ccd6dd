//! Single-file checkpoint: magic, little-endian header length, JSON header,
//! then raw little-endian `f64` tensors in header order.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;
use crate::model::{ModelBundle, ModelError};
use crate::nn::{AdamW, Group, Mat};
use crate::scene::RelationVocabulary;
use crate::text::TextVocabulary;
use crate::train::EpochStats;

const MAGIC: &[u8; 8] = b"ORELCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{0}: {1}")]
    Io(String, io::Error),
    #[error("not a checkpoint file (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint does not match the model layout: {0}")]
    Layout(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub group: Group,
    pub shape: (usize, usize),
}

/// Position of the training RNG stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal, since JSON numbers cannot hold 128 bits.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &rand_chacha::ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<rand_chacha::ChaCha8Rng, CheckpointError> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        let pos = self
            .word_pos
            .parse::<u128>()
            .map_err(|e| CheckpointError::Header(format!("rng word_pos: {e}")))?;
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    /// Parameter indices that carry moment tensors (first, then second).
    pub with_moments: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: Config,
    vocab: Vec<String>,
    relations: RelationVocabulary,
    object_classes: Vec<String>,
    epoch: usize,
    history: Vec<EpochStats>,
    rng: Option<RngState>,
    optimizer: Option<OptimizerState>,
    tensors: Vec<TensorEntry>,
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub bundle: ModelBundle,
    pub optimizer: Option<AdamW>,
    pub epoch: usize,
    pub history: Vec<EpochStats>,
    pub rng: Option<RngState>,
}

fn put_mat(out: &mut Vec<u8>, m: &Mat) {
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn take_mat(data: &[u8], at: &mut usize, shape: (usize, usize)) -> Result<Mat, CheckpointError> {
    let n = shape.0 * shape.1;
    let end = *at + n * 8;
    if end > data.len() {
        return Err(CheckpointError::Layout("tensor data truncated".into()));
    }
    let vals = data[*at..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    *at = end;
    Ok(Mat::from_shape_vec(shape, vals).expect("length matches shape"))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let b = &self.bundle;
        let tensors: Vec<TensorEntry> = b
            .store
            .iter()
            .map(|(_, p)| TensorEntry {
                name: p.name.clone(),
                group: p.group,
                shape: p.value.dim(),
            })
            .collect();
        let optimizer = self.optimizer.as_ref().map(|o| OptimizerState {
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            weight_decay: o.weight_decay,
            step: o.step,
            with_moments: o.moments().filter(|(_, m, v)| m.is_some() && v.is_some()).map(|(i, _, _)| i).collect(),
        });
        let header = Header {
            config: b.config.clone(),
            vocab: b.vocab.tokens().to_vec(),
            relations: b.relations.clone(),
            object_classes: b.object_classes.clone(),
            epoch: self.epoch,
            history: self.history.clone(),
            rng: self.rng.clone(),
            optimizer,
            tensors,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, p) in b.store.iter() {
            put_mat(&mut out, &p.value);
        }
        if let (Some(o), Some(state)) = (&self.optimizer, &header.optimizer) {
            let moments: Vec<_> = o.moments().collect();
            for &i in &state.with_moments {
                put_mat(&mut out, moments[i].1.expect("listed"));
            }
            for &i in &state.with_moments {
                put_mat(&mut out, moments[i].2.expect("listed"));
            }
        }
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, CheckpointError> {
        if data.len() < 20 || &data[..8] != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let version = u32::from_le_bytes(data[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let len = u64::from_le_bytes(data[12..20].try_into().expect("8 bytes")) as usize;
        let json = data
            .get(20..20 + len)
            .ok_or_else(|| CheckpointError::Header("header truncated".into()))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let vocab = TextVocabulary::from_tokens(header.vocab.clone());
        let mut bundle = ModelBundle::with_vocab(header.config, header.relations, header.object_classes, vocab)?;
        if bundle.store.len() != header.tensors.len() {
            return Err(CheckpointError::Layout(format!(
                "{} tensors stored, model has {}",
                header.tensors.len(),
                bundle.store.len()
            )));
        }
        let mut at = 20 + len;
        let ids: Vec<_> = bundle.store.ids().collect();
        for (id, entry) in ids.into_iter().zip(&header.tensors) {
            let p = bundle.store.get_mut(id);
            if p.name != entry.name || p.value.dim() != entry.shape || p.group != entry.group {
                return Err(CheckpointError::Layout(format!(
                    "expected {} {:?}, found {} {:?}",
                    p.name,
                    p.value.dim(),
                    entry.name,
                    entry.shape
                )));
            }
            p.value = take_mat(data, &mut at, entry.shape)?;
        }
        let optimizer = match &header.optimizer {
            None => None,
            Some(state) => {
                let mut o = AdamW::new(state.weight_decay, bundle.store.len());
                o.beta1 = state.beta1;
                o.beta2 = state.beta2;
                o.eps = state.eps;
                o.step = state.step;
                let shape = |i: usize| -> Result<(usize, usize), CheckpointError> {
                    header
                        .tensors
                        .get(i)
                        .map(|t| t.shape)
                        .ok_or_else(|| CheckpointError::Layout(format!("moment index {i} out of range")))
                };
                let mut firsts = Vec::new();
                for &i in &state.with_moments {
                    firsts.push(take_mat(data, &mut at, shape(i)?)?);
                }
                for (&i, first) in state.with_moments.iter().zip(firsts) {
                    let second = take_mat(data, &mut at, shape(i)?)?;
                    o.set_moments(i, first, second);
                }
                Some(o)
            }
        };
        if at != data.len() {
            return Err(CheckpointError::Layout(format!("{} trailing bytes", data.len() - at)));
        }
        Ok(Self {
            bundle,
            optimizer,
            epoch: header.epoch,
            history: header.history,
            rng: header.rng,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| CheckpointError::Io(path.display().to_string(), e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| CheckpointError::Io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let path = path.as_ref();
        let mut data = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut data))
            .map_err(|e| CheckpointError::Io(path.display().to_string(), e))?;
        Self::from_bytes(&data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DecodeMode;
    use crate::nn::Grads;
    use crate::scene::{BinaryMask, ObjectInstance, RgbImage};
    use rand::{Rng, SeedableRng};

    fn bundle() -> ModelBundle {
        let mut c = Config::default();
        c.encoder.dim = 16;
        c.patchify.p = 2;
        c.relq.e = 4;
        c.relq.heads = 2;
        c.relq.layers = 1;
        c.decoder.heads = 2;
        c.decoder.layers = 1;
        let rel = RelationVocabulary::new(vec!["on".into()], vec!["under".into()]).unwrap();
        ModelBundle::new(c, rel, vec!["cat".into(), "mat".into()]).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let mut b = bundle();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        // move away from the initialization so the test is not vacuous
        let mut opt = AdamW::new(0.05, b.store.len());
        let mut grads = Grads::zeros_like(&b.store);
        for (id, p) in b.store.iter().step_by(3) {
            grads.slots[id.0] = Some(Mat::from_shape_fn(p.value.dim(), |_| rng.gen_range(-1.0..1.0)));
        }
        opt.step(&mut b.store, &grads, 1e-2, &[]);
        let _ = rng.gen::<u64>();
        let ck = Checkpoint {
            bundle: b,
            optimizer: Some(opt),
            epoch: 3,
            history: Vec::new(),
            rng: Some(RngState::capture(&rng)),
        };
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.epoch, 3);
        let mut restored = back.rng.as_ref().unwrap().restore().unwrap();
        assert_eq!(restored.gen::<u64>(), rng.gen::<u64>());

        let img = RgbImage::new(8, 8);
        let objs: Vec<_> = (0..2)
            .map(|k| ObjectInstance {
                instance_id: k,
                category: ["cat", "mat"][k].into(),
                mask: BinaryMask::from_fn(8, 8, |r, _| r / 4 == k),
            })
            .collect();
        let rels = vec!["on".to_string(), "under".to_string()];
        let a = ck.bundle.predict_scene(&img, &objs, &rels, 0.0, DecodeMode::Judge).unwrap();
        let b = back.bundle.predict_scene(&img, &objs, &rels, 0.0, DecodeMode::Judge).unwrap();
        for (x, y) in a.pairs.iter().zip(&b.pairs) {
            assert_eq!(x.existence.to_bits(), y.existence.to_bits());
            for (r, s) in x.relations.iter().zip(&y.relations) {
                assert_eq!(r.score.to_bits(), s.score.to_bits());
            }
        }
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(matches!(Checkpoint::from_bytes(b"nonsense data here..."), Err(CheckpointError::Magic)));
        let ck = Checkpoint {
            bundle: bundle(),
            optimizer: None,
            epoch: 0,
            history: Vec::new(),
            rng: None,
        };
        let bytes = ck.to_bytes();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 8]),
            Err(CheckpointError::Layout(_))
        ));
    }
}
