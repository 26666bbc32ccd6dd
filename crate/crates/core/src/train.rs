//! Composite-loss training: existence BCE over every ordered pair plus
//! teacher-forced language-model cross-entropy on relation-bearing pairs.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, RngState};
use crate::config::{Config, ConfigError, Objective};
use crate::model::{ModelBundle, ModelError};
use crate::nn::graph::log_sum_exp;
use crate::nn::{clip_global_norm, AdamW, Grads, Graph, Group, Mat, NodeId};
use crate::relq::instruction_ids;
use crate::scene::{Dataset, SceneRecord};
use crate::text::{InstructionKind, Mode, SEP};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{scores} scores for {labels} labels")]
    CountMismatch { scores: usize, labels: usize },
    #[error("logits have {rows} rows, targets have {targets} entries")]
    Shape { rows: usize, targets: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("scene {scene}: {message}")]
    Scene { scene: String, message: String },
    #[error("dataset has no scene with two or more objects")]
    NoData,
}

impl From<crate::relq::RelqError> for TrainError {
    fn from(e: crate::relq::RelqError) -> Self {
        TrainError::Model(e.into())
    }
}

impl From<crate::decoder::DecoderError> for TrainError {
    fn from(e: crate::decoder::DecoderError) -> Self {
        TrainError::Model(e.into())
    }
}

impl From<crate::text::TextError> for TrainError {
    fn from(e: crate::text::TextError) -> Self {
        TrainError::Model(e.into())
    }
}

/// Mean binary cross-entropy between existence probabilities and labels.
pub fn existence_loss(scores: &[f64], labels: &[f64]) -> Result<f64, TrainError> {
    if scores.len() != labels.len() {
        return Err(TrainError::CountMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Ok(0.0);
    }
    let eps = 1e-12;
    let sum: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let s = s.clamp(eps, 1.0 - eps);
            -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
        })
        .sum();
    Ok(sum / scores.len() as f64)
}

/// Mean token cross-entropy over the rows whose target is not `pad`.
pub fn lm_loss(logits: &Mat, targets: &[usize], pad: usize) -> Result<f64, TrainError> {
    if logits.nrows() != targets.len() {
        return Err(TrainError::Shape {
            rows: logits.nrows(),
            targets: targets.len(),
        });
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (row, &t) in logits.rows().into_iter().zip(targets) {
        if t == pad {
            continue;
        }
        sum += log_sum_exp(row.iter().copied()) - row[t];
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

pub fn total_loss(l_exist: f64, l_lm: f64, lambda: f64) -> f64 {
    lambda * l_exist + l_lm
}

/// Supervision for one scene, in the ordered-pair order of the pair set.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTargets {
    pub labels: Vec<f64>,
    /// Relations per pair, deduplicated and sorted.
    pub relations: Vec<Vec<String>>,
}

/// Existence labels and per-pair relations, keeping only relations for
/// which `keep` holds.
pub fn scene_targets(record: &SceneRecord, keep: impl Fn(&str) -> bool) -> SceneTargets {
    let n = record.objects.len();
    let mut relations = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (si, oj) = (record.objects[i].instance_id, record.objects[j].instance_id);
            let rels: BTreeSet<String> = record
                .gt_triplets
                .iter()
                .filter(|t| t.subject_id == si && t.object_id == oj && keep(&t.relation))
                .map(|t| t.relation.clone())
                .collect();
            relations.push(rels.into_iter().collect::<Vec<_>>());
        }
    }
    SceneTargets {
        labels: relations.iter().map(|r| if r.is_empty() { 0.0 } else { 1.0 }).collect(),
        relations,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub exist_loss: f64,
    pub lm_loss: f64,
    pub scenes: usize,
    pub positive_probes: usize,
    pub negative_probes: usize,
    pub generation_targets: usize,
    /// Positive LM targets naming a relation outside the training set.
    pub held_out_positive_targets: usize,
    pub mean_grad_norm: f64,
}

#[derive(Debug, Default)]
struct SceneStats {
    loss: f64,
    exist: f64,
    lm: f64,
    positives: usize,
    negatives: usize,
    generations: usize,
    held_out: usize,
}

/// Owns the model, optimizer and RNG between steps.
pub struct Trainer {
    pub bundle: ModelBundle,
    pub optimizer: AdamW,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
    pub history: Vec<EpochStats>,
    frozen: Vec<Group>,
    train_relations: Vec<String>,
}

impl Trainer {
    pub fn new(bundle: ModelBundle) -> Result<Self, TrainError> {
        let cfg = &bundle.config.train;
        let frozen = cfg.frozen_groups()?;
        let train_relations = if cfg.open_set {
            bundle.relations.base.clone()
        } else {
            bundle.relations.all().cloned().collect()
        };
        Ok(Self {
            optimizer: AdamW::new(cfg.weight_decay, bundle.store.len()),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            epoch: 0,
            history: Vec::new(),
            frozen,
            train_relations,
            bundle,
        })
    }

    /// Resumes from a checkpoint, keeping its optimizer and RNG state.
    pub fn resume(ck: Checkpoint) -> Result<Self, TrainError> {
        let mut t = Self::new(ck.bundle)?;
        if let Some(o) = ck.optimizer {
            t.optimizer = o;
        }
        if let Some(r) = ck.rng {
            t.rng = r.restore().map_err(|e| TrainError::Scene {
                scene: "<checkpoint>".into(),
                message: e.to_string(),
            })?;
        }
        t.epoch = ck.epoch;
        t.history = ck.history;
        Ok(t)
    }

    pub fn train_relations(&self) -> &[String] {
        &self.train_relations
    }

    pub fn frozen(&self) -> &[Group] {
        &self.frozen
    }

    /// Learning rate for a 1-based epoch.
    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        let t = &self.bundle.config.train;
        if epoch >= t.lr_drop_epoch {
            t.lr * 0.1
        } else {
            t.lr
        }
    }

    /// Builds the loss graph for one scene; `None` when it has fewer than
    /// two objects.
    fn scene_loss(&mut self, g: &mut Graph, record: &SceneRecord, stats: &mut SceneStats) -> Result<Option<NodeId>, TrainError> {
        if record.objects.len() < 2 {
            return Ok(None);
        }
        let b = &self.bundle;
        let scene_err = |message: String| TrainError::Scene {
            scene: record.scene_id.clone(),
            message,
        };
        let targets = scene_targets(record, |r| self.train_relations.iter().any(|t| t == r));
        let scene = b.scene_tokens(g, &record.image)?;
        let pairs = b.pair_set(&record.objects, scene.grid)?;
        if pairs.len() != targets.labels.len() {
            return Err(scene_err("pair/label count mismatch".into()));
        }
        let kv = b.relq.prepare(g, scene.tokens);
        let objective = b.config.objective();
        let ratio = b.config.train.negative_pair_ratio;

        let mut exist_logits = Vec::with_capacity(pairs.len());
        let mut lm_rows = Vec::new();
        let mut lm_targets = Vec::new();
        let (yes, no) = (b.vocab.yes(), b.vocab.no());
        for (k, (s, o)) in pairs.pair_categories.iter().enumerate() {
            let mask = &pairs.pair_masks[k];
            let idx = b.banks.choose(InstructionKind::RelExist, Mode::Train, &mut self.rng);
            let ids = instruction_ids(&b.vocab, &b.banks, InstructionKind::RelExist, idx, s, o)?;
            let inst = b.relq.embed_ids(g, &ids)?;
            exist_logits.push(b.relq.existence_logit(g, &kv, inst, mask, None)?);

            let positives = &targets.relations[k];
            if positives.is_empty() {
                continue;
            }
            let idx = b.banks.choose(InstructionKind::PairFeat, Mode::Train, &mut self.rng);
            let ids = instruction_ids(&b.vocab, &b.banks, InstructionKind::PairFeat, idx, s, o)?;
            let inst = b.relq.embed_ids(g, &ids)?;
            let feat = b.relq.pair_features(g, &kv, inst, mask, None)?;
            let e = g.shape(feat).0;
            stats.held_out += positives.iter().filter(|r| !self.train_relations.contains(r)).count();

            if matches!(objective, Objective::Judge | Objective::Both) {
                let idx = b.banks.choose(InstructionKind::Judgement, Mode::Train, &mut self.rng);
                let mut prefix = vec![b.vocab.bos()];
                prefix.extend(b.vocab.tokenize(&b.banks.fill(InstructionKind::Judgement, idx, s, o, None)?)?);
                let emb = b.decoder.embed_tokens(g, &prefix);
                let x = g.concat_rows(&[feat, emb]);
                let out = b.decoder.forward(g, x, None, 0)?;
                let past_len = e + prefix.len();

                let absent: Vec<&String> = self.train_relations.iter().filter(|r| !positives.contains(r)).collect();
                let n_neg = ((positives.len() as f64 * ratio).round() as usize).min(absent.len());
                let negatives: Vec<&String> = absent.choose_multiple(&mut self.rng, n_neg).copied().collect();
                let probes = positives.iter().map(|r| (r, yes)).chain(negatives.iter().map(|r| (*r, no)));
                for (rel, answer) in probes {
                    let ids = b.vocab.tokenize(rel)?;
                    let emb = b.decoder.embed_tokens(g, &ids);
                    let suffix = b.decoder.forward(g, emb, Some(&out.kv), past_len)?;
                    lm_rows.push(b.decoder.last_logits(g, suffix.hidden));
                    lm_targets.push(Some(answer));
                }
                stats.positives += positives.len();
                stats.negatives += n_neg;
            }
            if matches!(objective, Objective::Generate | Objective::Both) {
                let idx = b.banks.choose(InstructionKind::Generation, Mode::Train, &mut self.rng);
                let mut prompt = vec![b.vocab.bos()];
                prompt.extend(b.vocab.tokenize(&b.banks.fill(InstructionKind::Generation, idx, s, o, None)?)?);
                let mut target = b.vocab.tokenize(&positives.join(&format!(" {SEP} ")))?;
                target.push(b.vocab.eos());
                let mut input = prompt.clone();
                input.extend(&target[..target.len() - 1]);
                let emb = b.decoder.embed_tokens(g, &input);
                let x = g.concat_rows(&[feat, emb]);
                let out = b.decoder.forward(g, x, None, 0)?;
                let start = e + prompt.len() - 1;
                let rows = g.slice_rows(out.hidden, start, start + target.len());
                lm_rows.push(b.decoder.logits(g, rows));
                lm_targets.extend(target.iter().map(|&t| Some(t)));
                stats.generations += 1;
            }
        }

        let lambda = b.config.train.lambda;
        let exist = g.concat_rows(&exist_logits);
        let exist_loss = g.bce_with_logits(exist, &targets.labels);
        stats.exist = g.scalar(exist_loss);
        let mut loss = g.scale(exist_loss, lambda);
        if !lm_rows.is_empty() {
            let logits = g.concat_rows(&lm_rows);
            let lm = g.cross_entropy(logits, &lm_targets);
            stats.lm = g.scalar(lm);
            loss = g.add(loss, lm);
        }
        stats.loss = g.scalar(loss);
        Ok(Some(loss))
    }

    /// One optimizer step over a batch of scenes. Returns the mean loss
    /// and the pre-clipping gradient norm.
    pub fn step(&mut self, scenes: &[&SceneRecord], lr: f64) -> Result<(f64, f64), TrainError> {
        let (stats, norm) = self.step_inner(scenes, lr)?;
        let n = stats.len().max(1) as f64;
        Ok((stats.iter().map(|s| s.loss).sum::<f64>() / n, norm))
    }

    fn step_inner(&mut self, scenes: &[&SceneRecord], lr: f64) -> Result<(Vec<SceneStats>, f64), TrainError> {
        let mut grads = Grads::zeros_like(&self.bundle.store);
        let mut all = Vec::new();
        let frozen = self.frozen.clone();
        let store = self.bundle.store.clone();
        for record in scenes {
            let mut stats = SceneStats::default();
            let mut g = Graph::with_frozen(&store, &frozen);
            if let Some(loss) = self.scene_loss(&mut g, record, &mut stats)? {
                let scene_grads = g.backward(loss);
                grads.accumulate(&scene_grads, 1.0);
                all.push(stats);
            }
        }
        if all.is_empty() {
            return Ok((all, 0.0));
        }
        grads.scale(1.0 / all.len() as f64);
        let norm = clip_global_norm(&mut grads, self.bundle.config.train.grad_clip);
        self.optimizer.step(&mut self.bundle.store, &grads, lr, &frozen);
        Ok((all, norm))
    }

    /// One pass over `scenes` in a freshly shuffled order.
    pub fn run_epoch(&mut self, scenes: &[SceneRecord]) -> Result<EpochStats, TrainError> {
        self.epoch += 1;
        let lr = self.lr_for_epoch(self.epoch);
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        order.shuffle(&mut self.rng);
        let batch = self.bundle.config.train.batch_size;
        let mut out = EpochStats {
            epoch: self.epoch,
            lr,
            ..EpochStats::default()
        };
        let mut steps = 0usize;
        for chunk in order.chunks(batch) {
            let recs: Vec<&SceneRecord> = chunk.iter().map(|&i| &scenes[i]).collect();
            let (stats, norm) = self.step_inner(&recs, lr)?;
            if stats.is_empty() {
                continue;
            }
            steps += 1;
            out.mean_grad_norm += norm;
            for s in stats {
                out.scenes += 1;
                out.loss += s.loss;
                out.exist_loss += s.exist;
                out.lm_loss += s.lm;
                out.positive_probes += s.positives;
                out.negative_probes += s.negatives;
                out.generation_targets += s.generations;
                out.held_out_positive_targets += s.held_out;
            }
        }
        if out.scenes > 0 {
            let n = out.scenes as f64;
            out.loss /= n;
            out.exist_loss /= n;
            out.lm_loss /= n;
        }
        if steps > 0 {
            out.mean_grad_norm /= steps as f64;
        }
        self.history.push(out.clone());
        Ok(out)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            bundle: self.bundle.clone(),
            optimizer: Some(self.optimizer.clone()),
            epoch: self.epoch,
            history: self.history.clone(),
            rng: Some(RngState::capture(&self.rng)),
        }
    }
}

/// Trains a fresh model on `dataset` for `config.train.epochs` epochs,
/// reporting each epoch to `observer`.
pub fn train(dataset: &Dataset, config: Config, mut observer: impl FnMut(&EpochStats)) -> Result<Checkpoint, TrainError> {
    config.validate()?;
    let scenes: Vec<SceneRecord> = match config.train.max_scenes {
        Some(n) => dataset.scenes.iter().take(n).cloned().collect(),
        None => dataset.scenes.clone(),
    };
    if !scenes.iter().any(|s| s.objects.len() >= 2) {
        return Err(TrainError::NoData);
    }
    let epochs = config.train.epochs;
    let bundle = ModelBundle::new(config, dataset.relations.clone(), dataset.object_classes.clone())?;
    let mut trainer = Trainer::new(bundle)?;
    for _ in 0..epochs {
        let stats = trainer.run_epoch(&scenes)?;
        observer(&stats);
    }
    Ok(trainer.checkpoint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{BinaryMask, ObjectInstance, RelationVocabulary, RgbImage, Triplet};

    #[test]
    fn existence_loss_closed_forms() {
        assert!((existence_loss(&[0.5; 7], &[1., 0., 1., 1., 0., 0., 1.]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(existence_loss(&[1.0 - 1e-9, 1e-9], &[1.0, 0.0]).unwrap() < 1e-8);
        assert!(matches!(existence_loss(&[0.5], &[]), Err(TrainError::CountMismatch { .. })));
    }

    #[test]
    fn lm_loss_closed_forms() {
        let v = 9;
        let uniform = Mat::zeros((3, v));
        assert!((lm_loss(&uniform, &[1, 2, 3], 0).unwrap() - (v as f64).ln()).abs() < 1e-12);
        let mut sharp = Mat::zeros((2, v));
        sharp[[0, 4]] = 60.0;
        sharp[[1, 5]] = 60.0;
        assert!(lm_loss(&sharp, &[4, 5], 0).unwrap() < 1e-20);
        assert!(matches!(lm_loss(&sharp, &[4], 0), Err(TrainError::Shape { .. })));
    }

    #[test]
    fn total_loss_is_weighted_sum() {
        assert!((total_loss(0.2, 1.0, 10.0) - 3.0).abs() < 1e-12);
        assert_eq!(total_loss(0.7, 1.3, 0.0), 1.3);
        assert_eq!(total_loss(0.0, 1.3, 10.0), 1.3);
    }

    fn record() -> SceneRecord {
        let objects = (0..3)
            .map(|k| ObjectInstance {
                instance_id: 10 + k,
                category: ["cat", "dog", "mat"][k].into(),
                mask: BinaryMask::from_fn(8, 8, |r, _| r / 3 == k),
            })
            .collect();
        SceneRecord {
            scene_id: "s".into(),
            image: RgbImage::new(8, 8),
            objects,
            gt_triplets: vec![
                Triplet::gt(10, 12, "on"),
                Triplet::gt(10, 12, "on"),
                Triplet::gt(11, 12, "under"),
                Triplet::gt(12, 10, "beside"),
            ],
        }
    }

    #[test]
    fn targets_follow_pair_order_and_filter() {
        let t = scene_targets(&record(), |_| true);
        // pairs: (0,1) (0,2) (1,0) (1,2) (2,0) (2,1)
        assert_eq!(t.labels, vec![0., 1., 0., 1., 1., 0.]);
        assert_eq!(t.relations[1], vec!["on".to_string()]);
        let base = scene_targets(&record(), |r| r != "under");
        assert_eq!(base.labels, vec![0., 1., 0., 0., 1., 0.]);
    }

    fn tiny() -> (Dataset, Config) {
        let mut c = Config::default();
        c.encoder.dim = 16;
        c.patchify.p = 2;
        c.relq.e = 4;
        c.relq.heads = 2;
        c.relq.layers = 1;
        c.decoder.heads = 2;
        c.decoder.layers = 1;
        c.train.batch_size = 2;
        c.train.epochs = 2;
        c.train.lr = 1e-3;
        c.train.objective = Some(Objective::Both);
        let ds = Dataset {
            relations: RelationVocabulary::new(vec!["on".into(), "beside".into()], vec!["under".into()]).unwrap(),
            object_classes: vec!["cat".into(), "dog".into(), "mat".into()],
            scenes: vec![record(), record()],
        };
        (ds, c)
    }

    #[test]
    fn open_set_never_supervises_novel_relations() {
        let (ds, mut c) = tiny();
        c.train.open_set = true;
        let ck = train(&ds, c, |_| {}).unwrap();
        for h in &ck.history {
            assert_eq!(h.held_out_positive_targets, 0);
            assert!(h.positive_probes > 0);
        }
    }

    #[test]
    fn frozen_groups_are_bitwise_unchanged() {
        let (ds, mut c) = tiny();
        c.train.freeze = vec!["encoder".into(), "decoder".into()];
        let bundle = ModelBundle::new(c, ds.relations.clone(), ds.object_classes.clone()).unwrap();
        let before = bundle.store.clone();
        let mut t = Trainer::new(bundle).unwrap();
        t.step(&[&ds.scenes[0]], 1e-2).unwrap();
        let mut relq_changed = false;
        for ((_, a), (_, b)) in before.iter().zip(t.bundle.store.iter()) {
            if a.group == Group::RelQ {
                relq_changed |= a.value != b.value;
            } else {
                assert!(a.value.iter().zip(b.value.iter()).all(|(x, y)| x.to_bits() == y.to_bits()), "{}", a.name);
            }
        }
        assert!(relq_changed);
    }

    #[test]
    fn lr_drops_tenfold() {
        let (ds, c) = tiny();
        let t = Trainer::new(ModelBundle::new(c, ds.relations, ds.object_classes).unwrap()).unwrap();
        assert_eq!(t.lr_for_epoch(7), 1e-3);
        assert!((t.lr_for_epoch(8) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn same_seed_same_checkpoint() {
        let (ds, c) = tiny();
        let a = train(&ds, c.clone(), |_| {}).unwrap().to_bytes();
        let b = train(&ds, c, |_| {}).unwrap().to_bytes();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_freeze_target_errors() {
        let (ds, mut c) = tiny();
        c.train.freeze = vec!["segmenter".into()];
        assert!(matches!(train(&ds, c, |_| {}), Err(TrainError::Config(_))));
    }
}
