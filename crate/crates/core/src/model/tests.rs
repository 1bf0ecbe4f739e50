use super::*;
use crate::gradcheck::check_gradients;
use crate::ingest::GroundTruthEvent;
use crate::loss::{video_loss, LossWeights, VideoTarget};
use crate::ingest::DenseAnnotation;
use rand::Rng;

pub(crate) fn tiny_config() -> ModelConfig {
    ModelConfig {
        input_dim: 12,
        frames: 8,
        anchors: 2,
        topk: 3,
        d_model: 16,
        heads: 2,
        ffn_dim: 24,
        encoder_blocks: 1,
        decoder_blocks: 1,
        conv_levels: 2,
        event_queries: 3,
        max_events: 3,
        max_caption_len: 6,
        word_dim: 8,
        caption_hidden: 12,
        ..ModelConfig::default()
    }
}

fn tiny_vocab() -> Vocab {
    Vocab::from_words((0..16).map(|i| format!("w{i}")))
}

fn random_frames(c: &ModelConfig, seed: u64) -> FrameFeatures {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..c.frames * c.input_dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    FrameFeatures::new("v", c.frames, c.input_dim, data).unwrap()
}

fn random_text(c: &ModelConfig, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mat::xavier(c.anchors, c.input_dim, &mut rng)
}

fn assert_close(a: &Mat, b: &Mat, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() <= tol, "{x} vs {y}");
    }
}

#[test]
fn multiscale_row_count() {
    let c = ModelConfig { input_dim: 4, frames: 100, conv_levels: 3, d_model: 8, heads: 2, anchors: 4, ..tiny_config() };
    let m = Model::new(c.clone(), tiny_vocab(), 0).unwrap();
    let mut t = Tape::new(&m.params);
    let f = random_frames(&c, 1);
    let (all, mask, times) = m.multiscale_features(&mut t, &f).unwrap();
    assert_eq!(t.shape(all), (188, 8));
    assert_eq!(mask.len(), 188);
    assert_eq!(times.len(), 188);
}

#[test]
fn zero_frames_give_zero_levels() {
    let c = tiny_config();
    let m = Model::new(c.clone(), tiny_vocab(), 0).unwrap();
    let mut t = Tape::new(&m.params);
    let f = FrameFeatures::new("z", c.frames, c.input_dim, vec![0.0; c.frames * c.input_dim]).unwrap();
    let (levels, _) = m.multiscale_raw(&mut t, &f).unwrap();
    assert_eq!(levels.len(), 3);
    for l in levels {
        assert!(t.value(l).data().iter().all(|&v| v == 0.0));
    }
    let c0 = ModelConfig { conv_levels: 0, ..c.clone() };
    let m0 = Model::new(c0, tiny_vocab(), 0).unwrap();
    let mut t0 = Tape::new(&m0.params);
    let (all, _, _) = m0.multiscale_features(&mut t0, &random_frames(&c, 2)).unwrap();
    assert_eq!(t0.shape(all).0, c.frames);
}

#[test]
fn wrong_frame_shape_rejected() {
    let c = tiny_config();
    let m = Model::new(c.clone(), tiny_vocab(), 0).unwrap();
    let f = FrameFeatures::new("v", 7, c.input_dim, vec![0.0; 7 * c.input_dim]).unwrap();
    assert!(matches!(m.predict(&f, &random_text(&c, 0), 10.0), Err(Error::Dimension { .. })));
    assert!(Model::new(ModelConfig { frames: 2, conv_levels: 2, anchors: 2, ..c }, tiny_vocab(), 0).is_err());
}

#[test]
fn weight_sharing_is_one_function() {
    let c = tiny_config();
    let shared = Model::new(c.clone(), tiny_vocab(), 3).unwrap();
    let split = Model::new(ModelConfig { weight_shared_encoder: false, ..c.clone() }, tiny_vocab(), 3).unwrap();
    assert_eq!(split.encoder_param_count(), 2 * shared.encoder_param_count());
    let mut t = Tape::new(&shared.params);
    let x = t.constant(random_text(&ModelConfig { anchors: 5, input_dim: 16, ..c.clone() }, 9));
    let v = shared.encode_stream(&mut t, x, false);
    let y = shared.encode_stream(&mut t, x, true);
    assert_close(t.value(v), t.value(y), 1e-12);
    let mut t2 = Tape::new(&split.params);
    let x2 = t2.constant(t.value(x).clone());
    let v2 = split.encode_stream(&mut t2, x2, false);
    let y2 = split.encode_stream(&mut t2, x2, true);
    assert!(t2.value(v2).data().iter().zip(t2.value(y2).data()).any(|(a, b)| (a - b).abs() > 1e-6));
}

#[test]
fn zero_blocks_is_identity() {
    let c = ModelConfig { encoder_blocks: 0, ..tiny_config() };
    let m = Model::new(c.clone(), tiny_vocab(), 0).unwrap();
    let mut t = Tape::new(&m.params);
    let x = t.constant(random_text(&ModelConfig { input_dim: 16, ..c }, 1));
    let y = m.encode_stream(&mut t, x, true);
    assert_close(t.value(x), t.value(y), 0.0);
}

fn refined(m: &Model, frames: &FrameFeatures, text: &Mat, opts: DecodeOptions) -> Mat {
    let mut t = Tape::new(&m.params);
    let enc = m.encode(&mut t, frames, text).unwrap();
    let h = m.decode(&mut t, &enc, opts);
    t.value(h.refined).clone()
}

#[test]
fn textual_permutation_invariance() {
    for order in [CrossAttentionOrder::VcThenTc, CrossAttentionOrder::TcThenVc, CrossAttentionOrder::Parallel] {
        for joint in [false, true] {
            let c = ModelConfig { anchors: 4, cross_attention_order: order, separate_encoding: !joint, ..tiny_config() };
            let m = Model::new(c.clone(), tiny_vocab(), 5).unwrap();
            let f = random_frames(&c, 4);
            let text = random_text(&c, 6);
            let mut perm = Mat::zeros(text.rows(), text.cols());
            for (dst, src) in [3, 0, 2, 1].iter().enumerate() {
                perm.row_mut(dst).copy_from_slice(text.row(*src));
            }
            let a = refined(&m, &f, &text, DecodeOptions::default());
            let b = refined(&m, &f, &perm, DecodeOptions::default());
            assert_close(&a, &b, 1e-10);
        }
    }
}

#[test]
fn text_position_encoding_breaks_row_symmetry() {
    let c = ModelConfig { anchors: 4, text_position_encoding: true, ..tiny_config() };
    let m = Model::new(c.clone(), tiny_vocab(), 5).unwrap();
    let f = random_frames(&c, 4);
    let text = random_text(&c, 6);
    let mut swapped = text.clone();
    swapped.row_mut(0).copy_from_slice(text.row(3));
    swapped.row_mut(3).copy_from_slice(text.row(0));
    let a = refined(&m, &f, &text, DecodeOptions::default());
    let b = refined(&m, &f, &swapped, DecodeOptions::default());
    assert!(a.data().iter().zip(b.data()).any(|(x, y)| (x - y).abs() > 1e-9));
    let plain = Model::new(ModelConfig { text_position_encoding: false, ..c.clone() }, tiny_vocab(), 5).unwrap();
    assert_eq!(plain.params.scalar_count(), m.params.scalar_count());
    let zero = Mat::zeros(c.anchors, c.input_dim);
    let with = refined(&m, &f, &zero, DecodeOptions::default());
    let skipped = refined(&m, &f, &zero, DecodeOptions { skip_textual: true });
    assert!(with.data().iter().zip(skipped.data()).any(|(x, y)| (x - y).abs() > 1e-9));
}

#[test]
fn zero_text_textual_attention_is_inert() {
    for order in [CrossAttentionOrder::VcThenTc, CrossAttentionOrder::TcThenVc, CrossAttentionOrder::Parallel] {
        let c = ModelConfig { cross_attention_order: order, ..tiny_config() };
        let m = Model::new(c.clone(), tiny_vocab(), 8).unwrap();
        let f = random_frames(&c, 4);
        let zero = Mat::zeros(c.anchors, c.input_dim);
        let with = refined(&m, &f, &zero, DecodeOptions::default());
        let without = refined(&m, &f, &zero, DecodeOptions { skip_textual: true });
        assert_close(&with, &without, 0.0);
        let text = random_text(&c, 1);
        let with = refined(&m, &f, &text, DecodeOptions::default());
        let without = refined(&m, &f, &text, DecodeOptions { skip_textual: true });
        assert!(with.data().iter().zip(without.data()).any(|(a, b)| (a - b).abs() > 1e-9));
    }
}

#[test]
fn joint_cross_attention_shape() {
    let c = ModelConfig { textual_cross_attention: false, ..tiny_config() };
    let m = Model::new(c.clone(), tiny_vocab(), 2).unwrap();
    let r = refined(&m, &random_frames(&c, 1), &random_text(&c, 2), DecodeOptions::default());
    assert_eq!(r.shape(), (c.event_queries, c.d_model));
}

#[test]
fn prediction_contracts() {
    let c = tiny_config();
    let m = Model::new(c.clone(), tiny_vocab(), 11).unwrap();
    let f = random_frames(&c, 3);
    let text = random_text(&c, 4);
    let p = m.predict(&f, &text, 40.0).unwrap();
    assert!(p.count >= 1 && p.count <= c.event_queries);
    assert_eq!(p.events.len(), p.count);
    assert_eq!(p.queries.len(), c.event_queries);
    assert!((p.count_probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for e in &p.events {
        assert!(e.start <= e.end && e.start >= 0.0 && e.end <= 40.0);
        assert!(e.confidence > 0.0 && e.confidence < 1.0);
        assert!(e.sentence.len() <= c.max_caption_len);
    }
    assert_eq!(m.predict(&f, &text, 40.0).unwrap(), p);
    assert_eq!(to_seconds(0.5, 0.5, 100.0), (25.0, 75.0));
    assert_eq!(to_seconds(0.5, 0.25, 100.0), (37.5, 62.5));
    assert_eq!(to_seconds(0.875, 0.5, 8.0), (5.0, 8.0));
}

#[test]
fn teacher_forcing_shapes() {
    let c = tiny_config();
    let m = Model::new(c.clone(), tiny_vocab(), 1).unwrap();
    let mut t = Tape::new(&m.params);
    let enc = m.encode(&mut t, &random_frames(&c, 1), &random_text(&c, 1)).unwrap();
    let h = m.decode(&mut t, &enc, DecodeOptions::default());
    let targets = vec![vec![4, 5, vocab::EOS], vec![6, vocab::EOS]];
    let (nll, dists) = m.caption_nll(&mut t, &enc, &h, &[0, 2], &[(0.0, 0.5), (0.5, 1.0)], &targets);
    assert_eq!(dists.len(), 3);
    for d in &dists {
        assert_eq!(t.shape(*d), (2, m.vocab.len()));
    }
    assert!(t.value(nll).scalar() > 0.0);
}

#[test]
fn counter_bins() {
    assert_eq!(heads::count_from_probs(&[0.1, 0.7, 0.2]), 2);
    assert_eq!(heads::count_from_probs(&[1.0]), 1);
    let c = ModelConfig { max_events: 1, ..tiny_config() };
    let m = Model::new(c.clone(), tiny_vocab(), 0).unwrap();
    assert_eq!(m.predict(&random_frames(&c, 0), &random_text(&c, 0), 1.0).unwrap().count, 1);
}

#[test]
fn checkpoint_round_trip() {
    let c = tiny_config();
    let mut m = Model::new(c.clone(), tiny_vocab(), 4).unwrap();
    let meta = crate::meta::ArtifactMeta::new("h", "g");
    let bytes = checkpoint::encode_checkpoint(&m, Some(&meta)).unwrap();
    let (back, got) = checkpoint::decode_checkpoint(&bytes).unwrap();
    assert_eq!(got, Some(meta));
    checkpoint::round_to_f32(&mut m);
    assert_eq!(back.params.values(), m.params.values());
    assert_eq!(back.vocab, m.vocab);
    assert!(checkpoint::decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(checkpoint::decode_checkpoint(&bad).is_err());
}

fn tiny_target(m: &Model) -> VideoTarget {
    let ann = DenseAnnotation::new(
        "v",
        8.0,
        vec![
            GroundTruthEvent { start: 0.0, end: 3.0, sentence: vec!["w1".into(), "w2".into()] },
            GroundTruthEvent { start: 4.0, end: 7.5, sentence: vec!["w3".into()] },
        ],
    )
    .unwrap();
    VideoTarget::from_annotation(&ann, m).unwrap()
}

#[test]
fn breakdown_matches_graph_total() {
    let c = tiny_config();
    let m = Model::new(c.clone(), tiny_vocab(), 2).unwrap();
    let mut t = Tape::new(&m.params);
    let w = LossWeights::default();
    let l = video_loss(&m, &mut t, &random_frames(&c, 2), &random_text(&c, 2), &tiny_target(&m), &w, None).unwrap();
    assert_eq!(t.value(l.total).scalar(), l.breakdown.total);
    assert_eq!(l.matching.pairs.len(), 2);
    let b = l.breakdown;
    assert!(b.cls > 0.0 && b.loc > 0.0 && b.count > 0.0 && b.cap > 0.0);
}

#[test]
fn gradients_match_finite_differences_sampled() {
    let c = tiny_config();
    let m = Model::new(c.clone(), tiny_vocab(), 7).unwrap();
    let w = LossWeights { lambda_l1: 0.5, ..LossWeights::default() };
    let r = check_gradients(&m, &random_frames(&c, 5), &random_text(&c, 5), &tiny_target(&m), &w, 1e-5, 1e-6, 7).unwrap();
    assert!(r.checked > 100);
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn gradients_match_with_text_position_encoding() {
    let c = ModelConfig { text_position_encoding: true, ..tiny_config() };
    let m = Model::new(c.clone(), tiny_vocab(), 7).unwrap();
    let r = check_gradients(&m, &random_frames(&c, 5), &random_text(&c, 5), &tiny_target(&m), &LossWeights::default(), 1e-5, 1e-6, 11).unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}
