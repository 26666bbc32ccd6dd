//! Analytic gradients of the full pair → decoder loss against central finite
//! differences.

use openrel::config::Config;
use openrel::model::ModelBundle;
use openrel::nn::{Graph, Group, NodeId, ParamId};
use openrel::relq::instruction_ids;
use openrel::scene::{BinaryMask, ObjectInstance, RelationVocabulary, RgbImage};
use openrel::text::InstructionKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_bundle() -> ModelBundle {
    let mut c = Config::default();
    c.encoder.dim = 8;
    c.patchify.p = 2;
    c.relq.e = 2;
    c.relq.heads = 2;
    c.relq.layers = 1;
    c.relq.share_exist_trunk = false;
    c.decoder.heads = 2;
    c.decoder.layers = 1;
    c.decoder.ffn_mult = 2;
    c.relq.ffn_mult = 2;
    let rel = RelationVocabulary::new(vec!["on".into(), "left of".into()], vec!["near".into()]).unwrap();
    ModelBundle::new(c, rel, vec!["cat".into(), "dog".into()]).unwrap()
}

fn scene() -> (RgbImage, Vec<ObjectInstance>) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut img = RgbImage::new(16, 16);
    for r in 0..16 {
        for c in 0..16 {
            img.put(r, c, [rng.gen(), rng.gen(), rng.gen()]);
        }
    }
    let objs = vec![
        ObjectInstance {
            instance_id: 0,
            category: "cat".into(),
            mask: BinaryMask::from_fn(16, 16, |r, c| r < 8 && c < 8),
        },
        ObjectInstance {
            instance_id: 1,
            category: "dog".into(),
            mask: BinaryMask::from_fn(16, 16, |r, c| r >= 8 && c >= 4),
        },
    ];
    (img, objs)
}

/// Existence BCE + teacher-forced LM loss for one pair, gradients flowing
/// from the decoder back through the pair features.
fn loss(bundle: &ModelBundle, g: &mut Graph, image: &RgbImage, objects: &[ObjectInstance]) -> NodeId {
    let scene = bundle.scene_tokens(g, image).unwrap();
    let pairs = bundle.pair_set(objects, scene.grid).unwrap();
    let kv = bundle.relq.prepare(g, scene.tokens);
    let (s, o) = &pairs.pair_categories[0];
    let mask = &pairs.pair_masks[0];
    let ids = instruction_ids(&bundle.vocab, &bundle.banks, InstructionKind::RelExist, 0, s, o).unwrap();
    let inst = bundle.relq.embed_ids(g, &ids).unwrap();
    let logit = bundle.relq.existence_logit(g, &kv, inst, mask, None).unwrap();
    let bce = g.bce_with_logits(logit, &[1.0]);

    let ids = instruction_ids(&bundle.vocab, &bundle.banks, InstructionKind::PairFeat, 0, s, o).unwrap();
    let inst = bundle.relq.embed_ids(g, &ids).unwrap();
    let feat = bundle.relq.pair_features(g, &kv, inst, mask, None).unwrap();
    let v = &bundle.vocab;
    let text = [v.bos(), v.id("left").unwrap(), v.id("of").unwrap(), v.eos()];
    let emb = bundle.decoder.embed_tokens(g, &text[..3]);
    let x = g.concat_rows(&[feat, emb]);
    let out = bundle.decoder.forward(g, x, None, 0).unwrap();
    let logits = bundle.decoder.logits(g, out.hidden);
    let e = bundle.config.relq.e;
    let mut targets = vec![None; e + 3];
    for (t, id) in targets[e..].iter_mut().zip(&text[1..]) {
        *t = Some(*id);
    }
    let ce = g.cross_entropy(logits, &targets);
    let bce = g.scale(bce, 0.7);
    g.add(bce, ce)
}

fn value(bundle: &ModelBundle, image: &RgbImage, objects: &[ObjectInstance]) -> f64 {
    let mut g = Graph::new(&bundle.store);
    let l = loss(bundle, &mut g, image, objects);
    g.scalar(l)
}

#[test]
fn relq_and_decoder_gradients_match_central_differences() {
    let mut bundle = tiny_bundle();
    let (image, objects) = scene();
    let grads = {
        let mut g = Graph::new(&bundle.store);
        let l = loss(&bundle, &mut g, &image, &objects);
        g.backward(l)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ids: Vec<ParamId> = bundle
        .store
        .iter()
        .filter(|(_, p)| matches!(p.group, Group::RelQ | Group::Decoder))
        .map(|(id, _)| id)
        .collect();
    let h = 1e-5;
    let (mut checked, mut zeros, mut worst) = (0, 0, 0.0f64);
    for id in ids {
        let name = bundle.store.get(id).name.clone();
        let (rows, cols) = bundle.store.get(id).value.dim();
        let analytic = grads.get(id).cloned();
        for _ in 0..3 {
            let (r, c) = (rng.gen_range(0..rows), rng.gen_range(0..cols));
            let orig = bundle.store.get(id).value[[r, c]];
            bundle.store.get_mut(id).value[[r, c]] = orig + h;
            let up = value(&bundle, &image, &objects);
            bundle.store.get_mut(id).value[[r, c]] = orig - h;
            let down = value(&bundle, &image, &objects);
            bundle.store.get_mut(id).value[[r, c]] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.as_ref().map_or(0.0, |m| m[[r, c]]);
            if a.abs().max(numeric.abs()) < 1e-8 {
                // structurally zero (e.g. key biases under softmax): the
                // difference quotient is pure round-off
                assert!((a - numeric).abs() < 1e-8, "{name}[{r},{c}]: {a:e} vs {numeric:e}");
                zeros += 1;
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
            assert!(rel < 1e-4, "{name}[{r},{c}]: analytic {a:e}, numeric {numeric:e}, rel {rel:e}");
            worst = worst.max(rel);
            checked += 1;
        }
    }
    assert!(checked > 100, "only {checked} entries checked");
    println!("{checked} entries, worst relative error {worst:e}; {zeros} structurally zero");
}

#[test]
fn unused_parameters_have_no_gradient() {
    let bundle = tiny_bundle();
    let (image, objects) = scene();
    let mut g = Graph::new(&bundle.store);
    let l = loss(&bundle, &mut g, &image, &objects);
    let grads = g.backward(l);
    // the generation loss never reads the Yes/No rows, but the embedding
    // table is still touched through gathered rows
    let id = bundle.store.id("decoder.tok_embed").unwrap();
    let gm = grads.get(id).unwrap();
    let yes = bundle.vocab.yes();
    assert!(gm.row(yes).iter().all(|v| *v == 0.0));
    assert!(gm.row(bundle.vocab.bos()).iter().any(|v| *v != 0.0));
}
