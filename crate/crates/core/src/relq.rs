//! Relation query transformer: learned pair-feature and existence queries
//! that read image tokens through instruction-conditioned self-attention
//! and mask-restricted cross-attention, plus the threshold selector.

use ndarray::Array2;
use rand::Rng;
use thiserror::Error;

use crate::config::{RelqConfig, SelectorConfig};
use crate::nn::{Attention, FeedForward, Graph, Group, LayerNorm, Linear, Mat, NodeId, ParamId, ParamStore};
use crate::segment::PairSet;
use crate::text::{InstructionBanks, InstructionKind, Mode, TextError, TextVocabulary};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelqError {
    #[error("pair mask selects no token; masked cross-attention is undefined")]
    EmptyMask,
    #[error("pair mask has {got} entries, token sequence has {expected}")]
    MaskLength { got: usize, expected: usize },
    #[error("instruction has {0} tokens, more than the {1} supported positions")]
    InstructionTooLong(usize, usize),
    #[error("{scores} existence scores for {pairs} pairs")]
    CountMismatch { scores: usize, pairs: usize },
    #[error("selector threshold {0} outside [0, 1]")]
    Theta(f64),
    #[error(transparent)]
    Text(#[from] TextError),
}

/// `E×D` features for one ordered pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeature {
    pub values: Mat,
    pub pair_index: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExistenceScore {
    pub value: f64,
    pub pair_index: (usize, usize),
}

/// One SA → Trunc → MaskCA → FFN block with pre-norm residuals.
#[derive(Debug, Clone)]
pub struct RelqLayer {
    pub ln_sa: LayerNorm,
    pub sa: Attention,
    pub ln_q: LayerNorm,
    pub ln_kv: LayerNorm,
    pub ca: Attention,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl RelqLayer {
    fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, ffn_mult: usize, rng: &mut impl Rng) -> Self {
        let g = Group::RelQ;
        Self {
            ln_sa: LayerNorm::new(store, &format!("{name}.ln_sa"), g, dim),
            sa: Attention::new(store, &format!("{name}.sa"), g, dim, heads, rng),
            ln_q: LayerNorm::new(store, &format!("{name}.ln_q"), g, dim),
            ln_kv: LayerNorm::new(store, &format!("{name}.ln_kv"), g, dim),
            ca: Attention::new(store, &format!("{name}.ca"), g, dim, heads, rng),
            ln_ffn: LayerNorm::new(store, &format!("{name}.ln_ffn"), g, dim),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), g, dim, dim * ffn_mult, rng),
        }
    }

    /// Normalized token keys and values for this layer's cross-attention.
    /// They depend only on the scene, so they are shared by every pair.
    pub fn token_kv(&self, g: &mut Graph, tokens: NodeId) -> (NodeId, NodeId) {
        let t = self.ln_kv.forward(g, tokens);
        self.ca.project_kv(g, t)
    }
}

/// Attention weights collected during a forward pass.
#[derive(Debug, Default)]
pub struct AttentionTrace {
    pub self_attention: Vec<NodeId>,
    pub cross_attention: Vec<NodeId>,
}

/// `Q×D` state → `Q×D` state.
pub fn pair_block(
    g: &mut Graph,
    layer: &RelqLayer,
    state: NodeId,
    instruction: NodeId,
    token_kv: (NodeId, NodeId),
    pair_mask: &[bool],
    mut trace: Option<&mut AttentionTrace>,
) -> Result<NodeId, RelqError> {
    let l = g.shape(token_kv.0).0;
    if pair_mask.len() != l {
        return Err(RelqError::MaskLength {
            got: pair_mask.len(),
            expected: l,
        });
    }
    if !pair_mask.iter().any(|b| *b) {
        return Err(RelqError::EmptyMask);
    }
    let q = g.shape(state).0;
    let joined = g.concat_rows(&[state, instruction]);
    let normed = layer.ln_sa.forward(g, joined);
    // Rows past `q` are truncated right after self-attention, so only the
    // query rows need outputs; keys and values still span the instruction.
    let normed_q = g.slice_rows(normed, 0, q);
    let sa = layer
        .sa
        .forward(g, normed_q, normed, None, trace.as_deref_mut().map(|t| &mut t.self_attention));
    let state = g.add(state, sa);

    let mask = Array2::from_shape_fn((q, l), |(_, c)| pair_mask[c]);
    let query = layer.ln_q.forward(g, state);
    let ca = layer.ca.attend(
        g,
        query,
        token_kv.0,
        token_kv.1,
        Some(&mask),
        trace.as_deref_mut().map(|t| &mut t.cross_attention),
    );
    let state = g.add(state, ca);
    let normed = layer.ln_ffn.forward(g, state);
    let ff = layer.ffn.forward(g, normed);
    Ok(g.add(state, ff))
}

#[derive(Debug, Clone)]
pub struct RelQFormer {
    pub tok_embed: ParamId,
    pub inst_pos: ParamId,
    pub feat_query: ParamId,
    pub exist_query: ParamId,
    pub layers: Vec<RelqLayer>,
    /// Separate existence stack; empty when the trunk is shared.
    pub exist_layers: Vec<RelqLayer>,
    pub out_norm: LayerNorm,
    pub exist_norm: LayerNorm,
    pub exist_hidden: Linear,
    pub exist_out: Linear,
    pub e: usize,
    pub dim: usize,
    pub max_instruction_len: usize,
}

/// Per-scene cross-attention keys and values for every layer.
#[derive(Debug, Clone)]
pub struct SceneKv {
    pub feat: Vec<(NodeId, NodeId)>,
    pub exist: Vec<(NodeId, NodeId)>,
}

impl RelQFormer {
    pub fn new(store: &mut ParamStore, cfg: &RelqConfig, dim: usize, vocab_size: usize, rng: &mut impl Rng) -> Self {
        let g = Group::RelQ;
        let layers = (0..cfg.layers)
            .map(|i| RelqLayer::new(store, &format!("relq.layer{i}"), dim, cfg.heads, cfg.ffn_mult, rng))
            .collect();
        let exist_layers = if cfg.share_exist_trunk {
            Vec::new()
        } else {
            (0..cfg.layers)
                .map(|i| RelqLayer::new(store, &format!("relq.exist_layer{i}"), dim, cfg.heads, cfg.ffn_mult, rng))
                .collect()
        };
        Self {
            tok_embed: store.normal("relq.tok_embed", g, (vocab_size, dim), 0.1, rng),
            inst_pos: store.normal("relq.inst_pos", g, (cfg.max_instruction_len, dim), 0.1, rng),
            feat_query: store.normal("relq.feat_query", g, (cfg.e, dim), 0.5, rng),
            exist_query: store.normal("relq.exist_query", g, (1, dim), 0.5, rng),
            layers,
            exist_layers,
            out_norm: LayerNorm::new(store, "relq.out_norm", g, dim),
            exist_norm: LayerNorm::new(store, "relq.exist_norm", g, dim),
            exist_hidden: Linear::new(store, "relq.exist_head.hidden", g, dim, dim, rng),
            exist_out: Linear::new(store, "relq.exist_head.out", g, dim, 1, rng),
            e: cfg.e,
            dim,
            max_instruction_len: cfg.max_instruction_len,
        }
    }

    fn exist_stack(&self) -> &[RelqLayer] {
        if self.exist_layers.is_empty() {
            &self.layers
        } else {
            &self.exist_layers
        }
    }

    pub fn prepare(&self, g: &mut Graph, tokens: NodeId) -> SceneKv {
        let feat: Vec<_> = self.layers.iter().map(|l| l.token_kv(g, tokens)).collect();
        let exist = if self.exist_layers.is_empty() {
            feat.clone()
        } else {
            self.exist_layers.iter().map(|l| l.token_kv(g, tokens)).collect()
        };
        SceneKv { feat, exist }
    }

    /// Token embeddings plus instruction positions, `X×D`.
    pub fn embed_ids(&self, g: &mut Graph, ids: &[usize]) -> Result<NodeId, RelqError> {
        if ids.len() > self.max_instruction_len {
            return Err(RelqError::InstructionTooLong(ids.len(), self.max_instruction_len));
        }
        let table = g.param(self.tok_embed);
        let words = g.gather(table, ids);
        let pos_table = g.param(self.inst_pos);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = g.gather(pos_table, &positions);
        Ok(g.add(words, pos))
    }

    fn run_stack(
        &self,
        g: &mut Graph,
        stack: &[RelqLayer],
        kv: &[(NodeId, NodeId)],
        mut state: NodeId,
        instruction: NodeId,
        pair_mask: &[bool],
        mut trace: Option<&mut AttentionTrace>,
    ) -> Result<NodeId, RelqError> {
        for (layer, kv) in stack.iter().zip(kv) {
            state = pair_block(g, layer, state, instruction, *kv, pair_mask, trace.as_deref_mut())?;
        }
        Ok(state)
    }

    /// `E×D` pair feature node.
    pub fn pair_features(
        &self,
        g: &mut Graph,
        kv: &SceneKv,
        instruction: NodeId,
        pair_mask: &[bool],
        trace: Option<&mut AttentionTrace>,
    ) -> Result<NodeId, RelqError> {
        let q = g.param(self.feat_query);
        let state = self.run_stack(g, &self.layers, &kv.feat, q, instruction, pair_mask, trace)?;
        Ok(self.out_norm.forward(g, state))
    }

    /// `1×1` existence logit node.
    pub fn existence_logit(
        &self,
        g: &mut Graph,
        kv: &SceneKv,
        instruction: NodeId,
        pair_mask: &[bool],
        trace: Option<&mut AttentionTrace>,
    ) -> Result<NodeId, RelqError> {
        let q = g.param(self.exist_query);
        let state = self.run_stack(g, self.exist_stack(), &kv.exist, q, instruction, pair_mask, trace)?;
        let normed = self.exist_norm.forward(g, state);
        let hidden = self.exist_hidden.forward(g, normed);
        let hidden = g.gelu(hidden);
        Ok(self.exist_out.forward(g, hidden))
    }
}

/// Token ids for a filled instruction template.
pub fn instruction_ids(
    vocab: &TextVocabulary,
    banks: &InstructionBanks,
    kind: InstructionKind,
    template: usize,
    subject: &str,
    object: &str,
) -> Result<Vec<usize>, RelqError> {
    Ok(vocab.tokenize(&banks.fill(kind, template, subject, object, None)?)?)
}

/// Context shared by the value-level helpers below.
pub struct RelqContext<'a> {
    pub relq: &'a RelQFormer,
    pub store: &'a ParamStore,
    pub vocab: &'a TextVocabulary,
    pub banks: &'a InstructionBanks,
}

impl RelqContext<'_> {
    /// Selects a template for `mode`, fills it, and embeds it (`X×D`).
    pub fn embed_instruction(
        &self,
        kind: InstructionKind,
        fill: (&str, &str),
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<Mat, RelqError> {
        let idx = self.banks.choose(kind, mode, rng);
        let ids = instruction_ids(self.vocab, self.banks, kind, idx, fill.0, fill.1)?;
        let mut g = Graph::new(self.store);
        let node = self.relq.embed_ids(&mut g, &ids)?;
        Ok(g.value(node).clone())
    }

    fn with_pair<T>(
        &self,
        tokens: &Mat,
        kind: InstructionKind,
        names: (&str, &str),
        pair_mask: &[bool],
        f: impl FnOnce(&mut Graph, &SceneKv, NodeId, &[bool]) -> Result<T, RelqError>,
    ) -> Result<T, RelqError> {
        let mut g = Graph::new(self.store);
        let t = g.constant(tokens.clone());
        let kv = self.relq.prepare(&mut g, t);
        let ids = instruction_ids(self.vocab, self.banks, kind, 0, names.0, names.1)?;
        let inst = self.relq.embed_ids(&mut g, &ids)?;
        f(&mut g, &kv, inst, pair_mask)
    }

    /// Inference-mode pair features for one pair.
    pub fn extract_pair_features(
        &self,
        pair: (usize, usize),
        names: (&str, &str),
        tokens: &Mat,
        pair_mask: &[bool],
    ) -> Result<PairFeature, RelqError> {
        self.with_pair(tokens, InstructionKind::PairFeat, names, pair_mask, |g, kv, inst, m| {
            let node = self.relq.pair_features(g, kv, inst, m, None)?;
            Ok(PairFeature {
                values: g.value(node).clone(),
                pair_index: pair,
            })
        })
    }

    pub fn estimate_existence(
        &self,
        pair: (usize, usize),
        names: (&str, &str),
        tokens: &Mat,
        pair_mask: &[bool],
    ) -> Result<ExistenceScore, RelqError> {
        self.with_pair(tokens, InstructionKind::RelExist, names, pair_mask, |g, kv, inst, m| {
            let logit = self.relq.existence_logit(g, kv, inst, m, None)?;
            let p = g.sigmoid(logit);
            Ok(ExistenceScore {
                value: g.scalar(p),
                pair_index: pair,
            })
        })
    }
}

/// Keeps the pairs whose existence score is strictly above `theta`, in order.
pub fn select_pairs(pair_set: &PairSet, scores: &[ExistenceScore], config: &SelectorConfig) -> Result<PairSet, RelqError> {
    Ok(pair_set.subset(&select_indices(scores, pair_set.len(), config)?))
}

pub fn select_indices(scores: &[ExistenceScore], n_pairs: usize, config: &SelectorConfig) -> Result<Vec<usize>, RelqError> {
    if scores.len() != n_pairs {
        return Err(RelqError::CountMismatch {
            scores: scores.len(),
            pairs: n_pairs,
        });
    }
    if !(0.0..=1.0).contains(&config.theta) {
        return Err(RelqError::Theta(config.theta));
    }
    Ok(scores
        .iter()
        .enumerate()
        .filter(|(_, s)| s.value > config.theta)
        .map(|(i, _)| i)
        .collect())
}

/// Mean of the masked tokens; reference point for the query-based extractor.
pub fn mask_pool(tokens: &Mat, mask: &[bool]) -> Option<Mat> {
    let rows: Vec<usize> = mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i).collect();
    if rows.is_empty() {
        return None;
    }
    let mut out = Mat::zeros((1, tokens.ncols()));
    for r in &rows {
        out.row_mut(0).scaled_add(1.0 / rows.len() as f64, &tokens.row(*r));
    }
    Some(out)
}
