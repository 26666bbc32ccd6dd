//! Recall@K / mean Recall@K harness for PredCls and SGDet, base/novel
//! breakdowns, selector sweeps and ranking diagnostics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{DecodeMode, EvalConfig, Subtask};
use crate::model::{ModelBundle, ModelError, ScenePrediction};
use crate::scene::{normalize_name, BinaryMask, ObjectInstance, RelationVocabulary, SceneRecord, Triplet};
use crate::segment::CorruptedOracle;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction {index} ({subject}, {relation}, {object}) has no score")]
    Unscored {
        index: usize,
        subject: usize,
        object: usize,
        relation: String,
    },
    #[error("prediction {index} has a non-finite score")]
    NonFinite { index: usize },
    #[error("mask dimensions differ: predicted {predicted:?}, ground truth {gt:?}")]
    Dimension {
        predicted: (usize, usize),
        gt: (usize, usize),
    },
    #[error("subtask sgdet requires an [eval.segmenter] section")]
    NoSegmenter,
    #[error("invalid eval config: {0}")]
    Config(String),
    #[error("scene `{scene_id}`: {source}")]
    Model {
        scene_id: String,
        #[source]
        source: ModelError,
    },
}

/// Normalizes free text and matches it exactly against base ∪ novel,
/// returning the vocabulary's own spelling.
pub fn canonicalize_relation(text: &str, vocab: &RelationVocabulary) -> Option<String> {
    let key = normalize_name(text);
    if key.is_empty() {
        return None;
    }
    vocab.all().find(|name| normalize_name(name) == key).cloned()
}

/// Score-descending order with ties broken by (subject, object, relation);
/// duplicate (subject, object, relation) entries keep their best score.
pub fn rank_triplets(predictions: &[Triplet]) -> Result<Vec<Triplet>, EvalError> {
    for (index, t) in predictions.iter().enumerate() {
        match t.score {
            None => {
                return Err(EvalError::Unscored {
                    index,
                    subject: t.subject_id,
                    object: t.object_id,
                    relation: t.relation.clone(),
                })
            }
            Some(s) if !s.is_finite() => return Err(EvalError::NonFinite { index }),
            Some(_) => {}
        }
    }
    let mut ranked = predictions.to_vec();
    ranked.sort_by(|a, b| {
        b.score
            .unwrap()
            .total_cmp(&a.score.unwrap())
            .then_with(|| (a.subject_id, a.object_id, &a.relation).cmp(&(b.subject_id, b.object_id, &b.relation)))
    });
    let mut seen = BTreeSet::new();
    ranked.retain(|t| seen.insert((t.subject_id, t.object_id, t.relation.clone())));
    Ok(ranked)
}

/// Matched / total ground-truth counts per relation name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationCounts(pub BTreeMap<String, (usize, usize)>);

impl RelationCounts {
    pub fn matched(&self) -> usize {
        self.0.values().map(|c| c.0).sum()
    }

    pub fn total(&self) -> usize {
        self.0.values().map(|c| c.1).sum()
    }

    /// Micro recall; 0 when there is no ground truth.
    pub fn recall(&self) -> f64 {
        ratio(self.matched(), self.total())
    }

    /// Unweighted mean of per-relation recalls over relations present in gt.
    pub fn mean_recall(&self) -> f64 {
        let present: Vec<f64> = self.0.values().filter(|c| c.1 > 0).map(|c| ratio(c.0, c.1)).collect();
        if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    }

    pub fn merge(&mut self, other: &RelationCounts) {
        for (rel, (m, t)) in &other.0 {
            let e = self.0.entry(rel.clone()).or_default();
            e.0 += m;
            e.1 += t;
        }
    }

    pub fn filter(&self, keep: impl Fn(&str) -> bool) -> RelationCounts {
        RelationCounts(self.0.iter().filter(|(r, _)| keep(r)).map(|(r, c)| (r.clone(), *c)).collect())
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Counts ground-truth triplets recovered by the first `k` entries of an
/// already-ranked list. Each prediction consumes at most one gt triplet.
pub fn match_counts(ranked: &[Triplet], gt: &[Triplet], k: usize) -> RelationCounts {
    let key = |t: &Triplet| (t.subject_id, t.object_id, normalize_name(&t.relation));
    let mut available: BTreeMap<(usize, usize, String), usize> = BTreeMap::new();
    let mut counts = RelationCounts::default();
    for t in gt {
        *available.entry(key(t)).or_default() += 1;
        counts.0.entry(t.relation.clone()).or_default().1 += 1;
    }
    let names: BTreeMap<String, String> = gt.iter().map(|t| (normalize_name(&t.relation), t.relation.clone())).collect();
    for p in ranked.iter().take(k) {
        let kp = key(p);
        if let Some(left) = available.get_mut(&kp) {
            if *left > 0 {
                *left -= 1;
                counts.0.get_mut(&names[&kp.2]).unwrap().0 += 1;
            }
        }
    }
    counts
}

/// R@K for a single scene: matched gt among the top-K over |gt|.
pub fn recall_at_k(predictions: &[Triplet], gt: &[Triplet], k: usize) -> Result<f64, EvalError> {
    Ok(match_counts(&rank_triplets(predictions)?, gt, k).recall())
}

/// mR@K for a single scene.
pub fn mean_recall_at_k(predictions: &[Triplet], gt: &[Triplet], k: usize) -> Result<f64, EvalError> {
    Ok(match_counts(&rank_triplets(predictions)?, gt, k).mean_recall())
}

pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, EvalError> {
    if a.dims() != b.dims() {
        return Err(EvalError::Dimension {
            predicted: a.dims(),
            gt: b.dims(),
        });
    }
    Ok(ratio(a.intersection_area(b), a.union_area(b)))
}

/// One predicted-to-ground-truth object correspondence (by instance id).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectMatch {
    pub predicted: usize,
    pub gt: usize,
    pub iou: f64,
}

/// Greedy highest-IoU matching among same-category objects with IoU at or
/// above `threshold`; each side is used at most once.
pub fn match_objects_sgdet(
    predicted: &[ObjectInstance],
    gt: &[ObjectInstance],
    threshold: f64,
) -> Result<Vec<ObjectMatch>, EvalError> {
    let mut candidates = Vec::new();
    for (pi, p) in predicted.iter().enumerate() {
        for (gi, g) in gt.iter().enumerate() {
            let iou = mask_iou(&p.mask, &g.mask)?;
            if p.category == g.category && iou >= threshold && iou > 0.0 {
                candidates.push((iou, pi, gi));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let (mut used_p, mut used_g) = (vec![false; predicted.len()], vec![false; gt.len()]);
    let mut out = Vec::new();
    for (iou, pi, gi) in candidates {
        if used_p[pi] || used_g[gi] {
            continue;
        }
        used_p[pi] = true;
        used_g[gi] = true;
        out.push(ObjectMatch {
            predicted: predicted[pi].instance_id,
            gt: gt[gi].instance_id,
            iou,
        });
    }
    out.sort_by_key(|m| m.predicted);
    Ok(out)
}

/// Area under the ROC curve via the Mann–Whitney statistic; ties count half.
/// `None` when either side is empty.
pub fn ranking_auc(positives: &[f64], negatives: &[f64]) -> Option<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return None;
    }
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // average ranks over tie groups
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += all[i..=j].iter().filter(|x| x.1).count() as f64 * mid;
        i = j + 1;
    }
    let (np, nn) = (positives.len() as f64, negatives.len() as f64);
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Expected micro R@K of a uniformly random ranking over every
/// (ordered pair, relation) candidate of each scene.
pub fn random_recall_baseline(scenes: &[SceneRecord], n_relations: usize, k: usize) -> f64 {
    let (mut expected, mut total) = (0.0, 0usize);
    for s in scenes {
        let n = s.objects.len();
        let candidates = n * n.saturating_sub(1) * n_relations;
        let g = s.gt_triplets.len();
        if candidates > 0 {
            expected += g as f64 * k.min(candidates) as f64 / candidates as f64;
        }
        total += g;
    }
    if total == 0 {
        0.0
    } else {
        expected / total as f64
    }
}

/// Options of one evaluation pass beyond the stored config.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub config: EvalConfig,
    pub theta: f64,
    pub mode: DecodeMode,
    /// Seeds the sgdet segmenter.
    pub seed: u64,
}

impl EvalOptions {
    pub fn from_bundle(bundle: &ModelBundle) -> Self {
        Self {
            config: bundle.config.eval.clone(),
            theta: bundle.config.selector.theta,
            mode: bundle.config.decoder.mode,
            seed: bundle.config.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedOutput {
    pub subject_id: usize,
    pub object_id: usize,
    pub text: String,
}

/// Per-scene record of what was scored and how long it took.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneLog {
    pub scene_id: String,
    /// Ranked, capped triplets in ground-truth object ids.
    pub ranked: Vec<Triplet>,
    /// Generation-mode strings outside the vocabulary; not scored.
    pub rejected: Vec<RejectedOutput>,
    pub pairs: usize,
    pub selected_pairs: usize,
    pub probes: usize,
    pub prefix_builds: usize,
    // wall-clock fields are left out of serialized logs so reruns compare
    // byte-for-byte; see `TimingSummary`
    #[serde(skip)]
    pub relq_ms: f64,
    #[serde(skip)]
    pub decode_ms: f64,
    #[serde(skip)]
    pub total_ms: f64,
    pub matched_objects: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub split: String,
    pub k: usize,
    pub recall: f64,
    pub mean_recall: f64,
    pub matched: usize,
    pub gt: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationRow {
    pub relation: String,
    pub split: String,
    pub gt: usize,
    /// Recall at each configured K, same order as `ks`.
    pub recall: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TimingSummary {
    pub mean_relq_ms: f64,
    pub mean_decode_ms: f64,
    pub mean_total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub subtask: Subtask,
    pub mode: DecodeMode,
    pub theta: f64,
    pub scenes: usize,
    pub ks: Vec<usize>,
    pub rows: Vec<MetricsRow>,
    pub per_relation: Vec<RelationRow>,
    pub gt_triplets: usize,
    pub pairs: usize,
    pub selected_pairs: usize,
    pub probes: usize,
    pub prefix_builds: usize,
    pub rejected_outputs: usize,
    pub emitted_outputs: usize,
    #[serde(skip)]
    pub timing: TimingSummary,
}

impl MetricsReport {
    pub fn row(&self, split: &str, k: usize) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.split == split && r.k == k)
    }

    pub fn recall(&self, k: usize) -> Option<f64> {
        self.row("all", k).map(|r| r.recall)
    }

    pub fn mean_recall(&self, k: usize) -> Option<f64> {
        self.row("all", k).map(|r| r.mean_recall)
    }

    /// Fraction of pairs surviving the selector.
    pub fn retention(&self) -> f64 {
        ratio(self.selected_pairs, self.pairs)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:?} {:?} theta={:.2} scenes={} gt={}",
            self.subtask, self.mode, self.theta, self.scenes, self.gt_triplets
        );
        let _ = writeln!(s, "{:<6} {:>5} {:>8} {:>8} {:>8}", "split", "K", "R@K", "mR@K", "matched");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<6} {:>5} {:>8.4} {:>8.4} {:>5}/{}",
                r.split, r.k, r.recall, r.mean_recall, r.matched, r.gt
            );
        }
        let _ = writeln!(
            s,
            "pairs {}/{} kept, {} probes, {} prefix builds, {}/{} outputs rejected",
            self.selected_pairs,
            self.pairs,
            self.probes,
            self.prefix_builds,
            self.rejected_outputs,
            self.emitted_outputs
        );
        s
    }

    pub fn per_relation_csv(&self) -> String {
        let mut s = String::from("relation,split,gt");
        for k in &self.ks {
            let _ = write!(s, ",R@{k}");
        }
        s.push('\n');
        for r in &self.per_relation {
            let _ = write!(s, "{},{},{}", csv_field(&r.relation), r.split, r.gt);
            for v in &r.recall {
                let _ = write!(s, ",{v:.6}");
            }
            s.push('\n');
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Converts one scene's model output into scored triplets over the
/// objects given to the model, plus the out-of-vocabulary strings.
pub fn prediction_triplets(
    prediction: &ScenePrediction,
    objects: &[ObjectInstance],
    vocab: &RelationVocabulary,
    mode: DecodeMode,
) -> (Vec<Triplet>, Vec<RejectedOutput>) {
    let (mut kept, mut rejected) = (Vec::new(), Vec::new());
    for p in &prediction.pairs {
        let (s, o) = (objects[p.pair.0].instance_id, objects[p.pair.1].instance_id);
        for r in &p.relations {
            let name = match mode {
                DecodeMode::Judge => Some(r.relation.clone()),
                DecodeMode::Generate => canonicalize_relation(&r.relation, vocab),
            };
            match name {
                Some(name) => kept.push(Triplet::scored(s, o, name, r.score)),
                None => rejected.push(RejectedOutput {
                    subject_id: s,
                    object_id: o,
                    text: r.relation.clone(),
                }),
            }
        }
    }
    (kept, rejected)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalOutput {
    pub report: MetricsReport,
    pub scenes: Vec<SceneLog>,
}

/// Runs the model over `scenes` and aggregates recall metrics.
pub fn run_eval(bundle: &ModelBundle, scenes: &[SceneRecord], options: &EvalOptions) -> Result<EvalOutput, EvalError> {
    let cfg = &options.config;
    cfg.validate().map_err(|e| EvalError::Config(e.to_string()))?;
    if !(0.0..=1.0).contains(&options.theta) {
        return Err(EvalError::Config(format!("theta {} outside [0, 1]", options.theta)));
    }
    let segmenter = match cfg.subtask {
        Subtask::Predcls => None,
        Subtask::Sgdet => {
            let s = cfg.segmenter.as_ref().ok_or(EvalError::NoSegmenter)?;
            Some(CorruptedOracle {
                epsilon: s.epsilon,
                jitter: s.jitter,
            })
        }
    };
    let vocab = &bundle.relations;
    let probes: Vec<String> = vocab.all().cloned().collect();
    let scenes = &scenes[..cfg.max_scenes.unwrap_or(scenes.len()).min(scenes.len())];

    let mut per_k = vec![RelationCounts::default(); cfg.ks.len()];
    let mut logs = Vec::with_capacity(scenes.len());
    for (index, scene) in scenes.iter().enumerate() {
        let started = Instant::now();
        let model_err = |source| EvalError::Model {
            scene_id: scene.scene_id.clone(),
            source,
        };
        let objects = match &segmenter {
            None => scene.objects.clone(),
            Some(seg) => {
                let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
                rng.set_stream(index as u64 + 1);
                seg.segment(&scene.objects, &bundle.object_classes, &mut rng)
            }
        };
        let prediction = bundle
            .predict_scene(&scene.image, &objects, &probes, options.theta, options.mode)
            .map_err(model_err)?;
        let (mut triplets, rejected) = prediction_triplets(&prediction, &objects, vocab, options.mode);
        let mut matched_objects = None;
        if segmenter.is_some() {
            let matches = match_objects_sgdet(&objects, &scene.objects, cfg.iou_threshold)?;
            let map: BTreeMap<usize, usize> = matches.iter().map(|m| (m.predicted, m.gt)).collect();
            triplets = triplets
                .into_iter()
                .filter_map(|t| {
                    Some(Triplet {
                        subject_id: *map.get(&t.subject_id)?,
                        object_id: *map.get(&t.object_id)?,
                        ..t
                    })
                })
                .collect();
            matched_objects = Some(matches.len());
        }
        let mut ranked = rank_triplets(&triplets)?;
        ranked.truncate(cfg.per_scene_cap);
        for (slot, &k) in per_k.iter_mut().zip(&cfg.ks) {
            slot.merge(&match_counts(&ranked, &scene.gt_triplets, k));
        }
        logs.push(SceneLog {
            scene_id: scene.scene_id.clone(),
            ranked,
            rejected,
            pairs: prediction.pairs.len(),
            selected_pairs: prediction.selected_pairs(),
            probes: prediction.probes,
            prefix_builds: prediction.prefix_builds,
            relq_ms: prediction.relq_ms,
            decode_ms: prediction.decode_ms,
            total_ms: started.elapsed().as_secs_f64() * 1e3,
            matched_objects,
        });
    }
    let report = build_report(vocab, cfg, options, &per_k, &logs);
    Ok(EvalOutput { report, scenes: logs })
}

fn build_report(
    vocab: &RelationVocabulary,
    cfg: &EvalConfig,
    options: &EvalOptions,
    per_k: &[RelationCounts],
    logs: &[SceneLog],
) -> MetricsReport {
    let is_novel = |r: &str| vocab.is_novel(r);
    let mut rows = Vec::new();
    let splits: Vec<&str> = if cfg.split_report {
        vec!["all", "base", "novel"]
    } else {
        vec!["all"]
    };
    for split in splits {
        for (counts, &k) in per_k.iter().zip(&cfg.ks) {
            let c = match split {
                "base" => counts.filter(|r| !is_novel(r)),
                "novel" => counts.filter(is_novel),
                _ => counts.clone(),
            };
            rows.push(MetricsRow {
                split: split.into(),
                k,
                recall: c.recall(),
                mean_recall: c.mean_recall(),
                matched: c.matched(),
                gt: c.total(),
            });
        }
    }
    let per_relation = per_k
        .first()
        .map(|c| {
            c.0.iter()
                .map(|(rel, &(_, gt))| RelationRow {
                    relation: rel.clone(),
                    split: if is_novel(rel) { "novel" } else { "base" }.into(),
                    gt,
                    recall: per_k.iter().map(|pk| ratio(pk.0[rel].0, gt)).collect(),
                })
                .collect()
        })
        .unwrap_or_default();
    let n = logs.len().max(1) as f64;
    let sum = |f: fn(&SceneLog) -> usize| logs.iter().map(f).sum::<usize>();
    MetricsReport {
        subtask: cfg.subtask,
        mode: options.mode,
        theta: options.theta,
        scenes: logs.len(),
        ks: cfg.ks.clone(),
        rows,
        per_relation,
        gt_triplets: per_k.first().map_or(0, RelationCounts::total),
        pairs: sum(|l| l.pairs),
        selected_pairs: sum(|l| l.selected_pairs),
        probes: sum(|l| l.probes),
        prefix_builds: sum(|l| l.prefix_builds),
        rejected_outputs: sum(|l| l.rejected.len()),
        emitted_outputs: match options.mode {
            DecodeMode::Generate => sum(|l| l.rejected.len()) + logs.iter().map(|l| l.ranked.len()).sum::<usize>(),
            DecodeMode::Judge => 0,
        },
        timing: TimingSummary {
            mean_relq_ms: logs.iter().map(|l| l.relq_ms).sum::<f64>() / n,
            mean_decode_ms: logs.iter().map(|l| l.decode_ms).sum::<f64>() / n,
            mean_total_ms: logs.iter().map(|l| l.total_ms).sum::<f64>() / n,
        },
    }
}

/// Parses `a:b:step` into an inclusive list of thresholds.
pub fn parse_sweep(spec: &str) -> Result<Vec<f64>, EvalError> {
    let bad = || EvalError::Config(format!("theta sweep `{spec}` must be start:stop:step with 0 <= start <= stop <= 1, step > 0"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    let [a, b, step] = parts[..] else { return Err(bad()) };
    if !(0.0..=1.0).contains(&a) || !(a..=1.0).contains(&b) || !(step > 0.0) {
        return Err(bad());
    }
    let n = ((b - a) / step + 1e-9).floor() as usize;
    // round to the step's decimal grid so 0.35 prints and compares as 0.35
    Ok((0..=n).map(|i| ((a + i as f64 * step) * 1e9).round() / 1e9).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub theta: f64,
    pub recall_20: f64,
    pub mean_recall_20: f64,
    pub ms_per_scene: f64,
    pub decode_ms_per_scene: f64,
    pub retention: f64,
}

/// Evaluates every threshold with K = 20 included in the reported Ks.
pub fn theta_sweep(
    bundle: &ModelBundle,
    scenes: &[SceneRecord],
    options: &EvalOptions,
    thetas: &[f64],
) -> Result<Vec<SweepRow>, EvalError> {
    let mut opts = options.clone();
    if !opts.config.ks.contains(&20) {
        opts.config.ks.push(20);
        opts.config.ks.sort_unstable();
    }
    thetas
        .iter()
        .map(|&theta| {
            opts.theta = theta;
            let r = run_eval(bundle, scenes, &opts)?.report;
            Ok(SweepRow {
                theta,
                recall_20: r.recall(20).unwrap_or(0.0),
                mean_recall_20: r.mean_recall(20).unwrap_or(0.0),
                ms_per_scene: r.timing.mean_total_ms,
                decode_ms_per_scene: r.timing.mean_decode_ms,
                retention: r.retention(),
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("theta,R@20,mR@20,ms_per_scene\n");
    for r in rows {
        let _ = writeln!(s, "{:.4},{:.6},{:.6},{:.4}", r.theta, r.recall_20, r.mean_recall_20, r.ms_per_scene);
    }
    s
}

/// Judgement scores of held-out relations on true pairs versus the same
/// relation probed on pairs of the same scene where it does not hold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpenSetProbe {
    pub auc: Option<f64>,
    pub positives: usize,
    pub negatives: usize,
}

pub fn novel_probe_auc(bundle: &ModelBundle, scenes: &[SceneRecord]) -> Result<OpenSetProbe, EvalError> {
    let novel = bundle.relations.novel.clone();
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for scene in scenes {
        let model_err = |source| EvalError::Model {
            scene_id: scene.scene_id.clone(),
            source,
        };
        let truth: BTreeSet<(usize, usize, &str)> = scene
            .gt_triplets
            .iter()
            .map(|t| (t.subject_id, t.object_id, t.relation.as_str()))
            .collect();
        let present: BTreeSet<&str> = scene
            .gt_triplets
            .iter()
            .filter(|t| bundle.relations.is_novel(&t.relation))
            .map(|t| t.relation.as_str())
            .collect();
        if present.is_empty() {
            continue;
        }
        let probes: Vec<String> = present.iter().map(|s| s.to_string()).collect();
        let p = bundle
            .predict_scene(&scene.image, &scene.objects, &probes, 0.0, DecodeMode::Judge)
            .map_err(model_err)?;
        for pair in &p.pairs {
            let (s, o) = (scene.objects[pair.pair.0].instance_id, scene.objects[pair.pair.1].instance_id);
            for r in &pair.relations {
                debug_assert!(novel.contains(&r.relation));
                if truth.contains(&(s, o, r.relation.as_str())) {
                    pos.push(r.score);
                } else {
                    neg.push(r.score);
                }
            }
        }
    }
    Ok(OpenSetProbe {
        auc: ranking_auc(&pos, &neg),
        positives: pos.len(),
        negatives: neg.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> RelationVocabulary {
        RelationVocabulary::new(vec!["on".into(), "left of".into()], vec!["beside".into()]).unwrap()
    }

    #[test]
    fn canonicalization_normalizes_then_matches_exactly() {
        let v = vocab();
        assert_eq!(canonicalize_relation("  On ", &v).as_deref(), Some("on"));
        assert_eq!(canonicalize_relation("LEFT   of", &v).as_deref(), Some("left of"));
        assert_eq!(canonicalize_relation("pop shove-it", &v), None);
        assert_eq!(canonicalize_relation("lef of", &v), None);
        assert_eq!(canonicalize_relation("", &v), None);
        for name in v.all() {
            assert_eq!(canonicalize_relation(name, &v).as_ref(), Some(name));
        }
    }

    #[test]
    fn ranking_breaks_ties_and_dedupes() {
        let ranked = rank_triplets(&[
            Triplet::scored(1, 0, "on", 0.5),
            Triplet::scored(0, 1, "on", 0.5),
            Triplet::scored(0, 1, "beside", 0.5),
            Triplet::scored(0, 1, "on", 0.2),
            Triplet::scored(2, 0, "on", 0.9),
        ])
        .unwrap();
        let keys: Vec<_> = ranked.iter().map(|t| (t.subject_id, t.object_id, t.relation.as_str(), t.score.unwrap())).collect();
        assert_eq!(
            keys,
            vec![(2, 0, "on", 0.9), (0, 1, "beside", 0.5), (0, 1, "on", 0.5), (1, 0, "on", 0.5)]
        );
    }

    #[test]
    fn unscored_predictions_are_rejected() {
        let err = rank_triplets(&[Triplet::gt(0, 1, "on")]).unwrap_err();
        assert!(matches!(err, EvalError::Unscored { index: 0, .. }));
        assert!(rank_triplets(&[Triplet::scored(0, 1, "on", f64::NAN)]).is_err());
    }

    #[test]
    fn recall_examples() {
        let gt = [Triplet::gt(0, 1, "on")];
        assert_eq!(recall_at_k(&[Triplet::scored(0, 1, "on", 1.0)], &gt, 1).unwrap(), 1.0);
        let gt2 = [Triplet::gt(0, 1, "on"), Triplet::gt(1, 0, "beside")];
        let preds = [Triplet::scored(0, 1, "on", 0.9), Triplet::scored(2, 0, "on", 0.8)];
        assert_eq!(recall_at_k(&preds, &gt2, 20).unwrap(), 0.5);
        assert_eq!(mean_recall_at_k(&preds, &gt2, 20).unwrap(), 0.5);
        assert_eq!(recall_at_k(&[], &gt2, 20).unwrap(), 0.0);
    }

    #[test]
    fn duplicated_gt_needs_distinct_predictions() {
        let gt = [Triplet::gt(0, 1, "on"), Triplet::gt(0, 1, "on")];
        assert_eq!(recall_at_k(&[Triplet::scored(0, 1, "on", 1.0)], &gt, 5).unwrap(), 0.5);
    }

    #[test]
    fn auc_handles_ties_and_extremes() {
        assert_eq!(ranking_auc(&[2.0, 3.0], &[0.0, 1.0]), Some(1.0));
        assert_eq!(ranking_auc(&[0.0], &[1.0]), Some(0.0));
        assert_eq!(ranking_auc(&[1.0], &[1.0]), Some(0.5));
        assert_eq!(ranking_auc(&[], &[1.0]), None);
    }

    #[test]
    fn sweep_parsing() {
        let t = parse_sweep("0:1:0.05").unwrap();
        assert_eq!(t.len(), 21);
        assert_eq!(t[7], 0.35);
        assert_eq!(t[20], 1.0);
        assert!(parse_sweep("0.5:0.2:0.1").is_err());
        assert!(parse_sweep("0:1").is_err());
        assert!(parse_sweep("0:1:0").is_err());
    }

    #[test]
    fn sgdet_matching_basics() {
        let m = |cat: &str, id, f: fn(usize, usize) -> bool| ObjectInstance {
            instance_id: id,
            category: cat.into(),
            mask: BinaryMask::from_fn(4, 4, f),
        };
        let gt = vec![m("a", 0, |r, _| r < 2), m("b", 1, |r, _| r >= 2)];
        let same = match_objects_sgdet(&gt, &gt, 0.5).unwrap();
        assert_eq!(same.len(), 2);
        assert!(same.iter().all(|x| x.iou == 1.0 && x.predicted == x.gt));
        let disjoint = vec![m("a", 5, |r, _| r >= 2)];
        assert!(match_objects_sgdet(&disjoint, &gt[..1], 0.5).unwrap().is_empty());
        let wrong_cat = vec![m("b", 5, |r, _| r < 2)];
        assert!(match_objects_sgdet(&wrong_cat, &gt, 0.5).unwrap().is_empty());
        let small = vec![ObjectInstance {
            instance_id: 0,
            category: "a".into(),
            mask: BinaryMask::from_fn(3, 3, |_, _| true),
        }];
        assert!(matches!(match_objects_sgdet(&small, &gt, 0.5), Err(EvalError::Dimension { .. })));
    }
}
