//! The full two-stage model: scene encoder, patchify, RelQ-Former and
//! relation decoder sharing one parameter store, plus the per-scene
//! inference pipeline.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{Config, ConfigError, DecodeMode};
use crate::decoder::{DecoderContext, DecoderError, RelationDecoder};
use crate::nn::{Graph, NodeId, ParamStore};
use crate::relq::{instruction_ids, RelQFormer, RelqContext, RelqError};
use crate::scene::{ObjectInstance, RelationVocabulary, RgbImage};
use crate::segment::{downsample_masks, make_pairs, token_positions, PairSet, Patchify, SceneEncoder, SegmentError};
use crate::text::{InstructionBanks, InstructionKind, TextError, TextVocabulary};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Relq(#[from] RelqError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Text(#[from] TextError),
}

#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub config: Config,
    pub vocab: TextVocabulary,
    pub relations: RelationVocabulary,
    pub object_classes: Vec<String>,
    pub banks: InstructionBanks,
    pub store: ParamStore,
    pub encoder: SceneEncoder,
    pub patchify: Patchify,
    pub relq: RelQFormer,
    pub decoder: RelationDecoder,
}

/// Visual tokens of one scene inside a graph.
pub struct SceneTokens {
    pub tokens: NodeId,
    pub grid: (usize, usize),
}

impl ModelBundle {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(config: Config, relations: RelationVocabulary, object_classes: Vec<String>) -> Result<Self, ModelError> {
        let banks = InstructionBanks::default();
        let vocab = TextVocabulary::build(
            &banks,
            relations.all().chain(&object_classes).map(String::as_str),
        );
        Self::with_vocab(config, relations, object_classes, vocab)
    }

    /// Same layout as `new` but with a given vocabulary (checkpoint reload).
    pub fn with_vocab(
        config: Config,
        relations: RelationVocabulary,
        object_classes: Vec<String>,
        vocab: TextVocabulary,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let banks = InstructionBanks::default();
        banks.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let dim = config.encoder.dim;
        let encoder = SceneEncoder::new(&mut store, config.encoder.stride, dim, &mut rng)?;
        let patchify = Patchify::new(&mut store, config.patchify.p, dim, &mut rng);
        let relq = RelQFormer::new(&mut store, &config.relq, dim, vocab.len(), &mut rng);
        let decoder = RelationDecoder::new(&mut store, &config.decoder, dim, vocab.len(), &mut rng);
        Ok(Self {
            config,
            vocab,
            relations,
            object_classes,
            banks,
            store,
            encoder,
            patchify,
            relq,
            decoder,
        })
    }

    pub fn relq_context(&self) -> RelqContext<'_> {
        RelqContext {
            relq: &self.relq,
            store: &self.store,
            vocab: &self.vocab,
            banks: &self.banks,
        }
    }

    pub fn decoder_context(&self) -> DecoderContext<'_> {
        DecoderContext {
            decoder: &self.decoder,
            store: &self.store,
            vocab: &self.vocab,
            banks: &self.banks,
        }
    }

    /// Token grid size for an image, validating divisibility up front.
    pub fn token_grid(&self, height: usize, width: usize) -> Result<(usize, usize), ModelError> {
        let (h, w) = self.encoder.check_dims(height, width)?;
        Ok(self.patchify.grid_dims(h, w)?)
    }

    /// Encoder → patchify → fixed positional code, as graph nodes.
    pub fn scene_tokens(&self, g: &mut Graph, image: &RgbImage) -> Result<SceneTokens, ModelError> {
        let (grid, h, w) = self.encoder.forward(g, image)?;
        let tokens = self.patchify.forward(g, grid, h, w)?;
        let grid = self.patchify.grid_dims(h, w)?;
        let pos = g.constant(token_positions(grid.0, grid.1, self.config.encoder.dim));
        Ok(SceneTokens {
            tokens: g.add(tokens, pos),
            grid,
        })
    }

    pub fn pair_set(&self, objects: &[ObjectInstance], grid: (usize, usize)) -> Result<PairSet, ModelError> {
        let masks = downsample_masks(objects, grid)?;
        Ok(make_pairs(objects, &masks))
    }

    /// Runs both stages on one scene. `relations` are the judgement probes
    /// (ignored when generating); `theta` overrides the configured selector.
    pub fn predict_scene(
        &self,
        image: &RgbImage,
        objects: &[ObjectInstance],
        relations: &[String],
        theta: f64,
        mode: DecodeMode,
    ) -> Result<ScenePrediction, ModelError> {
        let started = Instant::now();
        let mut g = Graph::new(&self.store);
        let scene = self.scene_tokens(&mut g, image)?;
        let pairs = self.pair_set(objects, scene.grid)?;
        let kv = self.relq.prepare(&mut g, scene.tokens);

        let mut out = Vec::with_capacity(pairs.len());
        let mut features = Vec::new();
        for (k, &(i, j)) in pairs.pairs.iter().enumerate() {
            let (s, o) = &pairs.pair_categories[k];
            let mask = &pairs.pair_masks[k];
            let ids = instruction_ids(&self.vocab, &self.banks, InstructionKind::RelExist, 0, s, o)?;
            let inst = self.relq.embed_ids(&mut g, &ids)?;
            let logit = self.relq.existence_logit(&mut g, &kv, inst, mask, None)?;
            let existence = crate::nn::graph::sigmoid(g.scalar(logit));
            let selected = existence > theta;
            if selected {
                let ids = instruction_ids(&self.vocab, &self.banks, InstructionKind::PairFeat, 0, s, o)?;
                let inst = self.relq.embed_ids(&mut g, &ids)?;
                let feat = self.relq.pair_features(&mut g, &kv, inst, mask, None)?;
                features.push((k, g.value(feat).clone()));
            }
            out.push(PairPrediction {
                pair: (i, j),
                subject: s.clone(),
                object: o.clone(),
                existence,
                selected,
                relations: Vec::new(),
                raw: None,
                truncated: false,
            });
        }
        drop(g);
        let relq_ms = started.elapsed().as_secs_f64() * 1e3;

        let decode_started = Instant::now();
        let dec = self.decoder_context();
        let multiply = self.config.scoring.multiply_existence;
        let (mut probes, mut prefix_builds) = (0, 0);
        for (k, values) in features {
            let pred = &mut out[k];
            let feature = crate::relq::PairFeature {
                values,
                pair_index: pred.pair,
            };
            match mode {
                DecodeMode::Judge => {
                    let cache = dec.build_prefix(&feature, &pred.subject, &pred.object, 0)?;
                    prefix_builds += 1;
                    for r in relations {
                        let j = dec.judge_relation(&cache, r)?;
                        probes += 1;
                        let score = if multiply { j.p_yes * pred.existence } else { j.p_yes };
                        pred.relations.push(ScoredRelation {
                            relation: r.clone(),
                            score,
                            verdict: j.verdict,
                        });
                    }
                }
                DecodeMode::Generate => {
                    let gen = dec.decode_generate(
                        &feature,
                        &pred.subject,
                        &pred.object,
                        0,
                        self.config.decoder.max_len,
                        self.config.decoder.beam,
                    )?;
                    for r in gen.relations {
                        // mean log-prob; adding ln(s) multiplies the probabilities
                        let score = if multiply { r.score + pred.existence.ln() } else { r.score };
                        pred.relations.push(ScoredRelation {
                            relation: r.text,
                            score,
                            verdict: true,
                        });
                    }
                    pred.raw = Some(gen.raw);
                    pred.truncated = gen.truncated;
                }
            }
        }
        let decode_ms = decode_started.elapsed().as_secs_f64() * 1e3;
        Ok(ScenePrediction {
            pairs: out,
            relq_ms,
            decode_ms,
            probes,
            prefix_builds,
        })
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ScoredRelation {
    pub relation: String,
    pub score: f64,
    pub verdict: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PairPrediction {
    pub pair: (usize, usize),
    pub subject: String,
    pub object: String,
    pub existence: f64,
    pub selected: bool,
    pub relations: Vec<ScoredRelation>,
    pub raw: Option<String>,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ScenePrediction {
    pub pairs: Vec<PairPrediction>,
    pub relq_ms: f64,
    pub decode_ms: f64,
    pub probes: usize,
    pub prefix_builds: usize,
}

impl ScenePrediction {
    pub fn selected_pairs(&self) -> usize {
        self.pairs.iter().filter(|p| p.selected).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::BinaryMask;

    pub(crate) fn tiny_config() -> Config {
        let mut c = Config::default();
        c.encoder.dim = 16;
        c.patchify.p = 2;
        c.relq.e = 4;
        c.relq.heads = 2;
        c.relq.layers = 1;
        c.decoder.heads = 2;
        c.decoder.layers = 1;
        c
    }

    fn scene() -> (RgbImage, Vec<ObjectInstance>) {
        let mut img = RgbImage::new(16, 16);
        img.put(2, 2, [255, 0, 0]);
        let objs = (0..3)
            .map(|k| ObjectInstance {
                instance_id: k,
                category: ["cat", "dog", "tree"][k].into(),
                mask: BinaryMask::from_fn(16, 16, |r, c| r / 6 == k && c < 8),
            })
            .collect();
        (img, objs)
    }

    fn bundle() -> ModelBundle {
        let rel = RelationVocabulary::new(vec!["on".into(), "left of".into()], vec!["beside".into()]).unwrap();
        ModelBundle::new(tiny_config(), rel, vec!["cat".into(), "dog".into(), "tree".into()]).unwrap()
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = bundle();
        let b = bundle();
        for ((_, x), (_, y)) in a.store.iter().zip(b.store.iter()) {
            assert_eq!(x.value, y.value);
        }
    }

    #[test]
    fn judge_pipeline_counts_probes_and_prefixes() {
        let m = bundle();
        let (img, objs) = scene();
        let rels: Vec<String> = m.relations.all().cloned().collect();
        let p = m.predict_scene(&img, &objs, &rels, 0.0, DecodeMode::Judge).unwrap();
        assert_eq!(p.pairs.len(), 6);
        let kept = p.selected_pairs();
        assert_eq!(p.prefix_builds, kept);
        assert_eq!(p.probes, kept * 3);
        let none = m.predict_scene(&img, &objs, &rels, 1.0, DecodeMode::Judge).unwrap();
        assert_eq!((none.probes, none.prefix_builds, none.selected_pairs()), (0, 0, 0));
    }

    #[test]
    fn generation_pipeline_runs() {
        let m = bundle();
        let (img, objs) = scene();
        let p = m.predict_scene(&img, &objs, &[], 0.0, DecodeMode::Generate).unwrap();
        assert!(p.pairs.iter().filter(|q| q.selected).all(|q| q.raw.is_some()));
    }

    #[test]
    fn unknown_category_is_reported() {
        let m = bundle();
        let (img, mut objs) = scene();
        objs[0].category = "zebra".into();
        let err = m.predict_scene(&img, &objs, &[], 0.0, DecodeMode::Judge).unwrap_err();
        assert!(err.to_string().contains("zebra"), "{err}");
    }
}
