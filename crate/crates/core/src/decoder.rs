//! Causal relation decoder. Pair features enter as prefix embeddings ahead
//! of the instruction tokens; relations come out either as free text
//! (`[SEP]`-delimited) or as a Yes/No judgement that reuses a cached prefix.

use rand::Rng;
use thiserror::Error;

use crate::config::DecoderConfig;
use crate::nn::graph::log_sum_exp;
use crate::nn::{Attention, FeedForward, Graph, Group, LayerNorm, Linear, Mat, NodeId, ParamId, ParamStore};
use crate::relq::PairFeature;
use crate::text::{InstructionBanks, InstructionKind, TextError, TextVocabulary};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecoderError {
    #[error("sequence of {0} positions exceeds the decoder limit of {1}")]
    TooLong(usize, usize),
    #[error("pair feature width {got} does not match decoder width {expected}")]
    Width { got: usize, expected: usize },
    #[error("relation name is empty")]
    EmptyRelation,
    #[error(transparent)]
    Text(#[from] TextError),
}

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub ln_attn: LayerNorm,
    pub attn: Attention,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
}

/// Keys and values of one layer for every position consumed so far.
#[derive(Debug, Clone, Copy)]
pub struct LayerKv {
    pub k: NodeId,
    pub v: NodeId,
}

#[derive(Debug, Clone)]
pub struct RelationDecoder {
    pub tok_embed: ParamId,
    pub pos_embed: ParamId,
    pub layers: Vec<DecoderLayer>,
    pub ln_out: LayerNorm,
    pub lm_head: Linear,
    pub dim: usize,
    pub max_positions: usize,
}

pub struct DecoderOutput {
    /// Final-norm hidden states, `T×D`.
    pub hidden: NodeId,
    /// Keys/values covering past and new positions.
    pub kv: Vec<LayerKv>,
}

impl RelationDecoder {
    pub fn new(store: &mut ParamStore, cfg: &DecoderConfig, dim: usize, vocab_size: usize, rng: &mut impl Rng) -> Self {
        let g = Group::Decoder;
        let layers = (0..cfg.layers)
            .map(|i| {
                let name = format!("decoder.layer{i}");
                DecoderLayer {
                    ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), g, dim),
                    attn: Attention::new(store, &format!("{name}.attn"), g, dim, cfg.heads, rng),
                    ln_ffn: LayerNorm::new(store, &format!("{name}.ln_ffn"), g, dim),
                    ffn: FeedForward::new(store, &format!("{name}.ffn"), g, dim, dim * cfg.ffn_mult, rng),
                }
            })
            .collect();
        Self {
            tok_embed: store.normal("decoder.tok_embed", g, (vocab_size, dim), 0.1, rng),
            pos_embed: store.normal("decoder.pos_embed", g, (cfg.max_positions, dim), 0.1, rng),
            layers,
            ln_out: LayerNorm::new(store, "decoder.ln_out", g, dim),
            lm_head: Linear::new(store, "decoder.lm_head", g, dim, vocab_size, rng),
            dim,
            max_positions: cfg.max_positions,
        }
    }

    pub fn embed_tokens(&self, g: &mut Graph, ids: &[usize]) -> NodeId {
        let table = g.param(self.tok_embed);
        g.gather(table, ids)
    }

    /// Runs `x` (`T×D` input embeddings) after `past_len` cached positions.
    pub fn forward(
        &self,
        g: &mut Graph,
        x: NodeId,
        past: Option<&[LayerKv]>,
        past_len: usize,
    ) -> Result<DecoderOutput, DecoderError> {
        let (t, d) = g.shape(x);
        if d != self.dim {
            return Err(DecoderError::Width { got: d, expected: self.dim });
        }
        let total = past_len + t;
        if total > self.max_positions {
            return Err(DecoderError::TooLong(total, self.max_positions));
        }
        let pos_table = g.param(self.pos_embed);
        let positions: Vec<usize> = (past_len..total).collect();
        let pos = g.gather(pos_table, &positions);
        let mut h = g.add(x, pos);
        let mask = ndarray::Array2::from_shape_fn((t, total), |(r, c)| c <= past_len + r);
        let mut kv = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let normed = layer.ln_attn.forward(g, h);
            let (k_new, v_new) = layer.attn.project_kv(g, normed);
            let (k, v) = match past {
                Some(p) => (g.concat_rows(&[p[i].k, k_new]), g.concat_rows(&[p[i].v, v_new])),
                None => (k_new, v_new),
            };
            let a = layer.attn.attend(g, normed, k, v, Some(&mask), None);
            h = g.add(h, a);
            let normed = layer.ln_ffn.forward(g, h);
            let f = layer.ffn.forward(g, normed);
            h = g.add(h, f);
            kv.push(LayerKv { k, v });
        }
        let hidden = self.ln_out.forward(g, h);
        Ok(DecoderOutput { hidden, kv })
    }

    pub fn logits(&self, g: &mut Graph, hidden: NodeId) -> NodeId {
        self.lm_head.forward(g, hidden)
    }

    /// Logits of the last row of `hidden`.
    pub fn last_logits(&self, g: &mut Graph, hidden: NodeId) -> NodeId {
        let t = g.shape(hidden).0;
        let last = g.slice_rows(hidden, t - 1, t);
        self.lm_head.forward(g, last)
    }
}

/// Decoder state after consuming the pair features and the judgement
/// instruction up to (excluding) the relation name.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixCache {
    pub layers: Vec<(Mat, Mat)>,
    pub len: usize,
    pub pair_index: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Judgement {
    pub verdict: bool,
    pub p_yes: f64,
    pub yes_logit: f64,
    pub no_logit: f64,
}

impl Judgement {
    pub fn from_logits(yes_logit: f64, no_logit: f64) -> Self {
        let p_yes = yes_probability(yes_logit, no_logit);
        Self {
            verdict: p_yes > 0.5,
            p_yes,
            yes_logit,
            no_logit,
        }
    }

    pub fn p_no(&self) -> f64 {
        1.0 - self.p_yes
    }
}

/// Softmax restricted to the two answer tokens.
pub fn yes_probability(yes_logit: f64, no_logit: f64) -> f64 {
    let m = yes_logit.max(no_logit);
    let (ey, en) = ((yes_logit - m).exp(), (no_logit - m).exp());
    ey / (ey + en)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedRelation {
    pub text: String,
    /// Mean per-token log-probability of the relation span.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub relations: Vec<GeneratedRelation>,
    /// Raw decoded text (without EOS).
    pub raw: String,
    /// Maximum length reached before EOS.
    pub truncated: bool,
}

/// One step of an autoregressive model: logits for the next token.
pub trait StepModel {
    type State: Clone;
    fn start(&self) -> Result<(Self::State, Vec<f64>), DecoderError>;
    fn step(&self, state: &Self::State, token: usize) -> Result<(Self::State, Vec<f64>), DecoderError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedSequence {
    pub tokens: Vec<usize>,
    pub logprobs: Vec<f64>,
    pub truncated: bool,
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits.iter().copied());
    logits.iter().map(|l| l - lse).collect()
}

/// Beam search (`beam = 1` is greedy) until EOS or `max_len` tokens.
/// Returned tokens exclude EOS; ties go to the lower token id.
pub fn beam_decode<M: StepModel>(model: &M, eos: usize, max_len: usize, beam: usize) -> Result<DecodedSequence, DecoderError> {
    struct Hyp<S> {
        state: S,
        next: Vec<f64>,
        tokens: Vec<usize>,
        logprobs: Vec<f64>,
        total: f64,
    }
    let (state, logits) = model.start()?;
    let mut live = vec![Hyp {
        state,
        next: log_softmax(&logits),
        tokens: Vec::new(),
        logprobs: Vec::new(),
        total: 0.0,
    }];
    let mut finished: Vec<(Vec<usize>, Vec<f64>, f64)> = Vec::new();
    for _ in 0..max_len {
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (h, hyp) in live.iter().enumerate() {
            for (tok, lp) in hyp.next.iter().enumerate() {
                candidates.push((hyp.total + lp, h, tok));
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next_live = Vec::new();
        for (total, h, tok) in candidates {
            if next_live.len() + finished.len() >= beam.max(1) && next_live.len() >= beam.max(1) {
                break;
            }
            if next_live.len() >= beam.max(1) {
                break;
            }
            let parent = &live[h];
            let lp = parent.next[tok];
            if tok == eos {
                finished.push((parent.tokens.clone(), parent.logprobs.clone(), total));
                if finished.len() >= beam.max(1) {
                    break;
                }
                continue;
            }
            let (state, logits) = model.step(&parent.state, tok)?;
            let mut tokens = parent.tokens.clone();
            tokens.push(tok);
            let mut logprobs = parent.logprobs.clone();
            logprobs.push(lp);
            next_live.push(Hyp {
                state,
                next: log_softmax(&logits),
                tokens,
                logprobs,
                total,
            });
        }
        let best_finished = finished.iter().map(|f| f.2).fold(f64::NEG_INFINITY, f64::max);
        let best_live = next_live.iter().map(|h| h.total).fold(f64::NEG_INFINITY, f64::max);
        live = next_live;
        // log-probs only decrease, so a finished hypothesis that beats every
        // live one cannot be overtaken.
        if live.is_empty() || (finished.len() >= beam.max(1) && best_finished >= best_live) || (beam <= 1 && !finished.is_empty()) {
            break;
        }
    }
    if let Some((tokens, logprobs, _)) = finished
        .into_iter()
        .max_by(|a, b| a.2.total_cmp(&b.2).then(b.0.len().cmp(&a.0.len())))
    {
        return Ok(DecodedSequence {
            tokens,
            logprobs,
            truncated: false,
        });
    }
    let best = live
        .into_iter()
        .max_by(|a, b| a.total.total_cmp(&b.total))
        .expect("at least one hypothesis");
    Ok(DecodedSequence {
        tokens: best.tokens,
        logprobs: best.logprobs,
        truncated: true,
    })
}

/// Splits a decoded sequence on `[SEP]`; each non-empty segment becomes a
/// relation scored by the mean log-probability of its tokens.
pub fn split_relations(vocab: &TextVocabulary, seq: &DecodedSequence) -> Result<Vec<GeneratedRelation>, DecoderError> {
    let sep = vocab.sep();
    let mut out = Vec::new();
    let mut start = 0;
    for end in 0..=seq.tokens.len() {
        if end == seq.tokens.len() || seq.tokens[end] == sep {
            if end > start {
                let span = &seq.tokens[start..end];
                let lp = &seq.logprobs[start..end];
                out.push(GeneratedRelation {
                    text: vocab.detokenize(span)?,
                    score: lp.iter().sum::<f64>() / lp.len() as f64,
                });
            }
            start = end + 1;
        }
    }
    Ok(out)
}

/// Value-level decoding entry points over a parameter store.
pub struct DecoderContext<'a> {
    pub decoder: &'a RelationDecoder,
    pub store: &'a ParamStore,
    pub vocab: &'a TextVocabulary,
    pub banks: &'a InstructionBanks,
}

impl<'a> DecoderContext<'a> {
    /// `[BOS] + instruction prefix` ids for judgement.
    pub fn judgement_prefix_ids(&self, subject: &str, object: &str, template: usize) -> Result<Vec<usize>, DecoderError> {
        let text = self.banks.fill(InstructionKind::Judgement, template, subject, object, None)?;
        let mut ids = vec![self.vocab.bos()];
        ids.extend(self.vocab.tokenize(&text)?);
        Ok(ids)
    }

    pub fn generation_ids(&self, subject: &str, object: &str, template: usize) -> Result<Vec<usize>, DecoderError> {
        let text = self.banks.fill(InstructionKind::Generation, template, subject, object, None)?;
        let mut ids = vec![self.vocab.bos()];
        ids.extend(self.vocab.tokenize(&text)?);
        Ok(ids)
    }

    pub fn relation_ids(&self, relation: &str) -> Result<Vec<usize>, DecoderError> {
        let ids = self.vocab.tokenize(relation)?;
        if ids.is_empty() {
            return Err(DecoderError::EmptyRelation);
        }
        Ok(ids)
    }

    fn input(&self, g: &mut Graph, feature: &Mat, ids: &[usize]) -> NodeId {
        let f = g.constant(feature.clone());
        let t = self.decoder.embed_tokens(g, ids);
        g.concat_rows(&[f, t])
    }

    pub fn build_prefix(&self, feature: &PairFeature, subject: &str, object: &str, template: usize) -> Result<PrefixCache, DecoderError> {
        let ids = self.judgement_prefix_ids(subject, object, template)?;
        let mut g = Graph::new(self.store);
        let x = self.input(&mut g, &feature.values, &ids);
        let out = self.decoder.forward(&mut g, x, None, 0)?;
        Ok(PrefixCache {
            layers: out
                .kv
                .iter()
                .map(|kv| (g.value(kv.k).clone(), g.value(kv.v).clone()))
                .collect(),
            len: feature.values.nrows() + ids.len(),
            pair_index: feature.pair_index,
        })
    }

    fn restore(g: &mut Graph, cache: &[(Mat, Mat)]) -> Vec<LayerKv> {
        cache
            .iter()
            .map(|(k, v)| LayerKv {
                k: g.constant(k.clone()),
                v: g.constant(v.clone()),
            })
            .collect()
    }

    /// Next-token logits after feeding `relation` on top of the cached prefix.
    pub fn judge_logits(&self, cache: &PrefixCache, relation: &str) -> Result<Vec<f64>, DecoderError> {
        let ids = self.relation_ids(relation)?;
        let mut g = Graph::new(self.store);
        let past = Self::restore(&mut g, &cache.layers);
        let x = self.decoder.embed_tokens(&mut g, &ids);
        let out = self.decoder.forward(&mut g, x, Some(&past), cache.len)?;
        let logits = self.decoder.last_logits(&mut g, out.hidden);
        Ok(g.value(logits).iter().copied().collect())
    }

    pub fn judge_relation(&self, cache: &PrefixCache, relation: &str) -> Result<Judgement, DecoderError> {
        let logits = self.judge_logits(cache, relation)?;
        Ok(Judgement::from_logits(logits[self.vocab.yes()], logits[self.vocab.no()]))
    }

    /// Uncached reference: the whole judgement sentence in one forward pass.
    pub fn judge_full_logits(
        &self,
        feature: &PairFeature,
        subject: &str,
        object: &str,
        relation: &str,
        template: usize,
    ) -> Result<Vec<f64>, DecoderError> {
        let mut ids = self.judgement_prefix_ids(subject, object, template)?;
        ids.extend(self.relation_ids(relation)?);
        let mut g = Graph::new(self.store);
        let x = self.input(&mut g, &feature.values, &ids);
        let out = self.decoder.forward(&mut g, x, None, 0)?;
        let logits = self.decoder.last_logits(&mut g, out.hidden);
        Ok(g.value(logits).iter().copied().collect())
    }

    pub fn judge_full(
        &self,
        feature: &PairFeature,
        subject: &str,
        object: &str,
        relation: &str,
        template: usize,
    ) -> Result<Judgement, DecoderError> {
        let logits = self.judge_full_logits(feature, subject, object, relation, template)?;
        Ok(Judgement::from_logits(logits[self.vocab.yes()], logits[self.vocab.no()]))
    }

    pub fn decode_generate(
        &self,
        feature: &PairFeature,
        subject: &str,
        object: &str,
        template: usize,
        max_len: usize,
        beam: usize,
    ) -> Result<Generation, DecoderError> {
        let ids = self.generation_ids(subject, object, template)?;
        let model = CachedStep {
            ctx: self,
            feature: &feature.values,
            prompt: ids,
        };
        let seq = beam_decode(&model, self.vocab.eos(), max_len, beam)?;
        Ok(Generation {
            relations: split_relations(self.vocab, &seq)?,
            raw: self.vocab.detokenize(&seq.tokens)?,
            truncated: seq.truncated,
        })
    }
}

struct CachedStep<'c, 'a> {
    ctx: &'c DecoderContext<'a>,
    feature: &'c Mat,
    prompt: Vec<usize>,
}

impl StepModel for CachedStep<'_, '_> {
    type State = (Vec<(Mat, Mat)>, usize);

    fn start(&self) -> Result<(Self::State, Vec<f64>), DecoderError> {
        let mut g = Graph::new(self.ctx.store);
        let x = self.ctx.input(&mut g, self.feature, &self.prompt);
        let out = self.ctx.decoder.forward(&mut g, x, None, 0)?;
        let logits = self.ctx.decoder.last_logits(&mut g, out.hidden);
        let cache = out.kv.iter().map(|kv| (g.value(kv.k).clone(), g.value(kv.v).clone())).collect();
        Ok(((cache, self.feature.nrows() + self.prompt.len()), g.value(logits).iter().copied().collect()))
    }

    fn step(&self, state: &Self::State, token: usize) -> Result<(Self::State, Vec<f64>), DecoderError> {
        let mut g = Graph::new(self.ctx.store);
        let past = DecoderContext::restore(&mut g, &state.0);
        let x = self.ctx.decoder.embed_tokens(&mut g, &[token]);
        let out = self.ctx.decoder.forward(&mut g, x, Some(&past), state.1)?;
        let logits = self.ctx.decoder.last_logits(&mut g, out.hidden);
        let cache = out.kv.iter().map(|kv| (g.value(kv.k).clone(), g.value(kv.v).clone())).collect();
        Ok(((cache, state.1 + 1), g.value(logits).iter().copied().collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DecoderConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Fixture {
        store: ParamStore,
        decoder: RelationDecoder,
        vocab: TextVocabulary,
        banks: InstructionBanks,
    }

    fn fixture() -> Fixture {
        let banks = InstructionBanks::default();
        let vocab = TextVocabulary::build(&banks, ["on", "beside", "walking on", "cat", "dog", "left of"]);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = DecoderConfig {
            heads: 2,
            ..DecoderConfig::default()
        };
        let decoder = RelationDecoder::new(&mut store, &cfg, 16, vocab.len(), &mut rng);
        Fixture { store, decoder, vocab, banks }
    }

    fn ctx(f: &Fixture) -> DecoderContext<'_> {
        DecoderContext {
            decoder: &f.decoder,
            store: &f.store,
            vocab: &f.vocab,
            banks: &f.banks,
        }
    }

    fn feature(seed: u64, e: usize) -> PairFeature {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PairFeature {
            values: Mat::from_shape_fn((e, 16), |_| rng.gen_range(-1.0..1.0)),
            pair_index: (0, 1),
        }
    }

    /// Scripted logits: emits `script[i]` at step `i`.
    struct Scripted {
        script: Vec<usize>,
        vocab: usize,
    }

    impl StepModel for Scripted {
        type State = usize;
        fn start(&self) -> Result<(usize, Vec<f64>), DecoderError> {
            Ok((0, self.logits(0)))
        }
        fn step(&self, state: &usize, _token: usize) -> Result<(usize, Vec<f64>), DecoderError> {
            Ok((state + 1, self.logits(state + 1)))
        }
    }

    impl Scripted {
        fn logits(&self, i: usize) -> Vec<f64> {
            let mut l = vec![0.0; self.vocab];
            if let Some(&t) = self.script.get(i) {
                l[t] = 5.0;
            }
            l
        }
    }

    #[test]
    fn forced_single_relation() {
        let f = fixture();
        let v = &f.vocab;
        let m = Scripted {
            script: vec![v.id("on").unwrap(), v.eos()],
            vocab: v.len(),
        };
        let seq = beam_decode(&m, v.eos(), 10, 1).unwrap();
        assert!(!seq.truncated);
        let rels = split_relations(v, &seq).unwrap();
        assert_eq!(rels.len(), 1);
        assert_eq!(rels[0].text, "on");
        let expected = 5.0 - log_sum_exp([5.0].into_iter().chain(std::iter::repeat(0.0).take(v.len() - 1)));
        assert!((rels[0].score - expected).abs() < 1e-12);
    }

    #[test]
    fn forced_two_relations_split_on_sep() {
        let f = fixture();
        let v = &f.vocab;
        let m = Scripted {
            script: vec![v.id("on").unwrap(), v.sep(), v.id("beside").unwrap(), v.eos()],
            vocab: v.len(),
        };
        for beam in [1, 3] {
            let seq = beam_decode(&m, v.eos(), 10, beam).unwrap();
            let texts: Vec<_> = split_relations(v, &seq).unwrap().into_iter().map(|r| r.text).collect();
            assert_eq!(texts, ["on", "beside"]);
        }
    }

    #[test]
    fn empty_segments_are_dropped_and_truncation_flagged() {
        let f = fixture();
        let v = &f.vocab;
        let on = v.id("on").unwrap();
        let m = Scripted {
            script: vec![v.sep(), on, v.sep(), v.sep(), on, on, on],
            vocab: v.len(),
        };
        let seq = beam_decode(&m, v.eos(), 5, 1).unwrap();
        assert!(seq.truncated);
        let texts: Vec<_> = split_relations(v, &seq).unwrap().into_iter().map(|r| r.text).collect();
        assert_eq!(texts, ["on", "on"]);
    }

    #[test]
    fn yes_no_restriction() {
        let j = Judgement::from_logits(20.0, -20.0);
        assert!(j.verdict && (j.p_yes - 1.0).abs() < 1e-12);
        let j = Judgement::from_logits(1.5, 1.5);
        assert_eq!(j.p_yes, 0.5);
        assert!(!j.verdict);
        for (y, n) in [(0.3, -2.0), (-7.0, 4.0), (100.0, 99.0)] {
            let j = Judgement::from_logits(y, n);
            assert!((j.p_yes + j.p_no() - 1.0).abs() <= f64::EPSILON);
        }
    }

    #[test]
    fn prefix_cache_length_and_determinism() {
        let f = fixture();
        let c = ctx(&f);
        let feat = feature(1, 5);
        let cache = c.build_prefix(&feat, "cat", "dog", 0).unwrap();
        let n_prefix = c.judgement_prefix_ids("cat", "dog", 0).unwrap().len();
        assert_eq!(cache.len, 5 + n_prefix);
        assert_eq!(cache.layers[0].0.nrows(), cache.len);
        assert_eq!(cache, c.build_prefix(&feat, "cat", "dog", 0).unwrap());
    }

    #[test]
    fn cached_judgement_matches_full_forward() {
        let f = fixture();
        let c = ctx(&f);
        for seed in 0..5 {
            let feat = feature(seed, 4);
            let cache = c.build_prefix(&feat, "cat", "dog", 0).unwrap();
            for rel in ["on", "walking on", "left of"] {
                let cached = c.judge_logits(&cache, rel).unwrap();
                let full = c.judge_full_logits(&feat, "cat", "dog", rel, 0).unwrap();
                for (a, b) in cached.iter().zip(&full) {
                    assert!((a - b).abs() < 1e-10, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn logits_are_causal() {
        let f = fixture();
        let mut g = Graph::new(&f.store);
        let ids_a = [1usize, 7, 9, 11, 13];
        let ids_b = [1usize, 7, 9, 2, 4];
        let xa = f.decoder.embed_tokens(&mut g, &ids_a);
        let xb = f.decoder.embed_tokens(&mut g, &ids_b);
        let oa = f.decoder.forward(&mut g, xa, None, 0).unwrap();
        let ob = f.decoder.forward(&mut g, xb, None, 0).unwrap();
        let la = f.decoder.logits(&mut g, oa.hidden);
        let lb = f.decoder.logits(&mut g, ob.hidden);
        for t in 0..3 {
            assert_eq!(g.value(la).row(t), g.value(lb).row(t));
        }
        assert_ne!(g.value(la).row(3), g.value(lb).row(3));
    }

    #[test]
    fn generation_runs_and_respects_max_len() {
        let f = fixture();
        let c = ctx(&f);
        let out = c.decode_generate(&feature(3, 4), "cat", "dog", 0, 4, 1).unwrap();
        let n = f.vocab.tokenize(&out.raw).unwrap().len();
        assert!(n <= 4);
        if !out.truncated {
            assert!(n < 4 || out.raw.is_empty() || n == 4);
        }
    }

    #[test]
    fn too_long_sequences_are_rejected() {
        let f = fixture();
        let c = ctx(&f);
        let feat = feature(0, 200);
        assert!(matches!(c.build_prefix(&feat, "cat", "dog", 0), Err(DecoderError::TooLong(_, 160))));
    }

    #[test]
    fn relation_must_tokenize() {
        let f = fixture();
        let c = ctx(&f);
        let cache = c.build_prefix(&feature(0, 3), "cat", "dog", 0).unwrap();
        assert!(matches!(c.judge_relation(&cache, "pop shove-it"), Err(DecoderError::Text(_))));
        assert_eq!(c.judge_relation(&cache, "  ").unwrap_err(), DecoderError::EmptyRelation);
    }
}
