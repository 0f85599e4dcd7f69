use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::layers::{InitMode, OutputMode, TyingMode};

fn toy(tying: TyingMode, init_mode: InitMode, output_mode: OutputMode) -> ModelConfig {
    ModelConfig {
        emb_dim: 6,
        enc_hidden: 5,
        dec_hidden: 7,
        alignment_dim: 0,
        tying,
        init_mode,
        output_mode,
        dropout_p: 0.0,
        src_vocab: 11,
        tgt_vocab: 11,
        ..ModelConfig::default()
    }
}

fn all_word_configs() -> Vec<ModelConfig> {
    let mut out = Vec::new();
    for tying in [TyingMode::None, TyingMode::Tied2, TyingMode::Tied3] {
        for init in [InitMode::MeanState, InitMode::Zero] {
            for mode in [OutputMode::Conditional, OutputMode::Simple] {
                out.push(toy(tying, init, mode));
            }
        }
    }
    out
}

fn factored(h2o: H2oMode, factor_vocab: usize) -> ModelConfig {
    ModelConfig {
        factored: true,
        h2o,
        factor_vocab,
        ..toy(TyingMode::Tied2, InitMode::MeanState, OutputMode::Conditional)
    }
}

fn random_examples(rng: &mut impl Rng, n: usize, vocab: u32, factor_vocab: Option<u32>) -> Vec<Example> {
    (0..n)
        .map(|_| {
            let sl = rng.gen_range(1..6);
            let tl = rng.gen_range(1..6);
            let tgt: Vec<u32> = (0..tl).map(|_| rng.gen_range(4..vocab)).collect();
            Example {
                src: (0..sl).map(|_| rng.gen_range(4..vocab)).collect(),
                factors: factor_vocab.map(|fv| (0..tl).map(|_| rng.gen_range(4..fv)).collect()),
                tgt,
            }
        })
        .collect()
}

/// Shapes every configuration is expected to allocate, listed by hand.
fn enumerate_shapes(c: &ModelConfig) -> Vec<Vec<usize>> {
    let (e, he, hd) = (c.emb_dim, c.enc_hidden, c.dec_hidden);
    let d = 2 * he;
    let a = c.effective_alignment_dim();
    let mut s: Vec<Vec<usize>> = match c.tying {
        TyingMode::None => vec![vec![c.src_vocab, e], vec![c.tgt_vocab, e], vec![c.tgt_vocab, e]],
        TyingMode::Tied2 => vec![vec![c.src_vocab, e], vec![c.tgt_vocab, e]],
        TyingMode::Tied3 => vec![vec![c.src_vocab, e]],
    };
    let gru = |s: &mut Vec<Vec<usize>>, input: usize, h: usize, ln: bool| {
        for _ in 0..3 {
            s.extend([vec![input, h], vec![h, h], vec![h]]);
        }
        if ln {
            for _ in 0..6 {
                s.push(vec![h]);
            }
        }
    };
    gru(&mut s, e, he, true);
    gru(&mut s, e, he, true);
    if c.init_mode == InitMode::MeanState {
        s.extend([vec![d, hd], vec![hd]]);
    }
    gru(&mut s, e, hd, false);
    s.extend([vec![hd, a], vec![d, a], vec![a], vec![a, 1]]);
    gru(&mut s, d, hd, false);
    let head = |s: &mut Vec<Vec<usize>>| {
        s.push(vec![hd, e]);
        if c.output_mode == OutputMode::Conditional {
            s.push(vec![d, e]);
        }
        s.push(vec![e]);
    };
    head(&mut s);
    s.push(vec![c.tgt_vocab]);
    if c.factored {
        s.push(vec![c.factor_vocab, e]);
        if c.h2o == H2oMode::Separate {
            head(&mut s);
        }
        s.push(vec![c.factor_vocab]);
    }
    s
}

#[test]
fn same_seed_same_parameters() {
    let c = toy(TyingMode::None, InitMode::MeanState, OutputMode::Conditional);
    let a = Seq2SeqModel::<f32>::build(c.clone(), 9).unwrap();
    let b = Seq2SeqModel::<f32>::build(c.clone(), 9).unwrap();
    assert_eq!(a.store, b.store);
    let other = Seq2SeqModel::<f32>::build(c, 10).unwrap();
    assert_ne!(a.fingerprint(), other.fingerprint());
}

#[test]
fn count_matches_formula_and_enumeration() {
    let mut configs = all_word_configs();
    configs.push(factored(H2oMode::Shared, 7));
    configs.push(factored(H2oMode::Separate, 7));
    configs.push(ModelConfig {
        alignment_dim: 3,
        ..toy(TyingMode::Tied2, InitMode::Zero, OutputMode::Simple)
    });
    for c in configs {
        let m = Seq2SeqModel::<f32>::build(c.clone(), 1).unwrap();
        let shapes: Vec<Vec<usize>> = m.store.iter().map(|(_, _, t)| t.shape().to_vec()).collect();
        assert_eq!(shapes, enumerate_shapes(&c), "{c:?}");
        let enumerated: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        assert_eq!(m.count_params(), enumerated);
        assert_eq!(c.param_count(), enumerated, "{c:?}");
    }
}

#[test]
fn tied3_saves_one_table_on_random_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let v = rng.gen_range(5..500);
        let base = ModelConfig {
            emb_dim: rng.gen_range(1..64),
            enc_hidden: rng.gen_range(1..64),
            dec_hidden: rng.gen_range(1..64),
            src_vocab: v,
            tgt_vocab: v,
            ..ModelConfig::default()
        };
        let t3 = ModelConfig {
            tying: TyingMode::Tied3,
            ..base.clone()
        };
        assert_eq!(base.param_count() - t3.param_count(), v * base.emb_dim);
    }
}

fn full_scale(emb: usize, hidden: usize, src: usize, tgt: usize, tying: TyingMode) -> usize {
    ModelConfig {
        emb_dim: emb,
        enc_hidden: hidden,
        dec_hidden: hidden,
        tying,
        src_vocab: src,
        tgt_vocab: tgt,
        ..ModelConfig::default()
    }
    .param_count()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b
}

#[test]
fn en_tr_counts_near_reported_sizes() {
    let tied2 = full_scale(200, 500, 10041, 12433, TyingMode::Tied2);
    let tied3 = full_scale(200, 500, 16189, 16189, TyingMode::Tied3);
    assert_eq!(tied2, 12_221_933);
    assert_eq!(tied3, 10_968_689);
    assert!(rel(tied2 as f64, 12.0e6) < 0.05);
    assert!(rel(tied3 as f64, 10.8e6) < 0.05);
    let reduction = 1.0 - tied3 as f64 / tied2 as f64;
    let reported = 1.0 - 10.8 / 12.0;
    assert!(rel(reduction, reported) < 0.05, "{reduction}");
}

#[test]
fn en_de_and_de_en_counts_near_reported_sizes() {
    let en_de = full_scale(256, 512, 50_000, 53_000, TyingMode::Tied2);
    assert!(rel(en_de as f64, 35.0e6) < 0.01, "{en_de}");
    // 384/640 system, German source, English target
    let de_en = full_scale(384, 640, 53_000, 50_000, TyingMode::Tied2);
    assert!(rel(de_en as f64, 52.9e6) < 0.01, "{de_en}");
}

#[test]
fn tied3_requires_joint_vocabulary() {
    let c = ModelConfig {
        tgt_vocab: 12,
        ..toy(TyingMode::Tied3, InitMode::Zero, OutputMode::Simple)
    };
    assert!(matches!(Seq2SeqModel::<f32>::build(c, 0), Err(Error::Config(_))));
}

#[test]
fn initial_nll_is_near_uniform() {
    let c = ModelConfig {
        emb_dim: 16,
        enc_hidden: 16,
        dec_hidden: 16,
        src_vocab: 64,
        tgt_vocab: 64,
        ..ModelConfig::default()
    };
    let m = Seq2SeqModel::<f32>::build(c, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ex = random_examples(&mut rng, 100, 64, None);
    let mean: f64 = ex.iter().map(|e| m.loss(std::slice::from_ref(e)).unwrap()).sum::<f64>() / 100.0;
    // pad and bos are never predicted
    let uniform = (62f64).ln();
    assert!(rel(mean, uniform) < 0.15, "{mean} vs {uniform}");
}

#[test]
fn batch_loss_is_mean_of_sentence_losses() {
    for c in all_word_configs() {
        let m = Seq2SeqModel::<f64>::build(c, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ex = random_examples(&mut rng, 6, 11, None);
        let batch = m.loss(&ex).unwrap();
        let each: f64 = ex.iter().map(|e| m.loss(std::slice::from_ref(e)).unwrap()).sum::<f64>() / 6.0;
        assert!((batch - each).abs() < 1e-10, "{batch} {each}");
        let mut rev = ex.clone();
        rev.reverse();
        assert!((m.loss(&rev).unwrap() - batch).abs() < 1e-10);
    }
}

#[test]
fn step_api_agrees_with_batched_loss() {
    for c in all_word_configs() {
        let m = Seq2SeqModel::<f64>::build(c.clone(), 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for ex in random_examples(&mut rng, 5, 11, None) {
            let lp = m.sequence_logprob(&ex.src, &ex.tgt, None).unwrap();
            let loss = m.loss(std::slice::from_ref(&ex)).unwrap();
            let per_token = -lp / (ex.tgt.len() + 1) as f64;
            assert!((per_token - loss).abs() < 1e-10, "{c:?}: {per_token} vs {loss}");
        }
    }
}

#[test]
fn step_distributions_normalize_and_mask_reserved() {
    let m = Seq2SeqModel::<f32>::build(factored(H2oMode::Separate, 8), 2).unwrap();
    let enc = m.encode_source(&[4, 5, 6]).unwrap();
    let s0 = enc.initial_state().to_vec();
    let out = m.step(&enc, &[BOS, 7], &[&s0, &s0]).unwrap();
    for row in out.logprobs.iter().chain(out.factor_logprobs.as_ref().unwrap()) {
        let total: f64 = row.iter().map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }
    assert_eq!(out.logprobs[0][PAD as usize], f64::NEG_INFINITY);
    assert_eq!(out.logprobs[0][BOS as usize], f64::NEG_INFINITY);
    assert!(out.factor_logprobs.unwrap()[1][..4].iter().all(|x| *x == f64::NEG_INFINITY));
    for a in &out.attention {
        assert!((a.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn saturated_model_drives_loss_to_zero() {
    let c = ModelConfig {
        emb_dim: 11,
        ..toy(TyingMode::None, InitMode::Zero, OutputMode::Conditional)
    };
    let mut m = Seq2SeqModel::<f64>::build(c, 0).unwrap();
    let keep = ["emb.src", "emb.tgt", "out.W_o"];
    let ids: Vec<_> = m.store.iter().filter(|(_, n, _)| !keep.contains(n)).map(|(id, _, _)| id).collect();
    for id in ids {
        m.store.get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    // o_t = tanh(y_{t-1}); bos feeds e_0, token 5 feeds e_1
    let (fb, wo) = (m.store.id("emb.tgt").unwrap(), m.store.id("out.W_o").unwrap());
    for id in [fb, wo] {
        m.store.get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    m.store.get_mut(fb).data_mut()[BOS as usize * 11] = 50.0;
    m.store.get_mut(fb).data_mut()[5 * 11 + 1] = 50.0;
    m.store.get_mut(wo).data_mut()[5 * 11] = 60.0;
    m.store.get_mut(wo).data_mut()[EOS as usize * 11 + 1] = 60.0;
    let loss = m.loss(&[Example::new(vec![4], vec![5])]).unwrap();
    assert!(loss < 1e-20, "{loss}");
}

#[test]
fn tied2_update_reaches_gold_feedback_row() {
    let c = toy(TyingMode::Tied2, InitMode::MeanState, OutputMode::Conditional);
    let mut m = Seq2SeqModel::<f64>::build(c, 8).unwrap();
    let gold = 9u32;
    // gold appears only as a prediction target, never as feedback
    let ex = [Example::new(vec![4, 5], vec![gold])];
    let grads = {
        let mut g = Graph::new();
        let l = m.forward_loss(&mut g, &ex, None).unwrap();
        g.backward(l).unwrap();
        ParamStore::collect_grads(&g)
    };
    let table = m.embeddings().table(EmbeddingRole::Feedback);
    let before = m.store.get(table).data()[gold as usize * 6..(gold as usize + 1) * 6].to_vec();
    for (id, gr) in grads {
        let t = m.store.get_mut(id);
        t.data_mut().iter_mut().zip(gr).for_each(|(p, g)| *p -= 0.1 * g);
    }
    let after = &m.store.get(table).data()[gold as usize * 6..(gold as usize + 1) * 6];
    assert!(before.iter().zip(after).any(|(a, b)| a != b));
}

#[test]
fn factored_length_mismatch_is_contract_error() {
    let m = Seq2SeqModel::<f32>::build(factored(H2oMode::Shared, 7), 0).unwrap();
    let ex = Example {
        src: vec![4],
        tgt: vec![5, 6],
        factors: Some(vec![4]),
    };
    assert!(matches!(m.loss(&[ex]), Err(Error::Contract(_))));
}

#[test]
fn factored_loss_is_sum_of_streams() {
    let fc = factored(H2oMode::Separate, 8);
    let fm = Seq2SeqModel::<f64>::build(fc.clone(), 12).unwrap();
    let word = Seq2SeqModel::<f64>::build(
        ModelConfig {
            factored: false,
            factor_vocab: 0,
            ..fc
        },
        12,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let ex = random_examples(&mut rng, 4, 11, Some(8));
    for e in &ex {
        let both = fm.loss(std::slice::from_ref(e)).unwrap();
        let lemma = word.loss(&[Example::new(e.src.clone(), e.tgt.clone())]).unwrap();
        // factor NLL from the step API, per target step (eos step unscored)
        let enc = fm.encode_source(&e.src).unwrap();
        let mut state = enc.initial_state().to_vec();
        let mut prev = BOS;
        let mut factor_nll = 0.0;
        for (t, &f) in e.factors.as_ref().unwrap().iter().enumerate() {
            let out = fm.step(&enc, &[prev], &[&state]).unwrap();
            factor_nll -= out.factor_logprobs.unwrap()[0][f as usize];
            state = out.states[0].clone();
            prev = e.tgt[t];
        }
        let expect = lemma + factor_nll / (e.tgt.len() + 1) as f64;
        assert!((both - expect).abs() < 1e-10, "{both} vs {expect}");
    }
}

#[test]
fn single_tag_factor_stream_adds_nothing() {
    let fc = factored(H2oMode::Shared, 5);
    let fm = Seq2SeqModel::<f32>::build(fc.clone(), 21).unwrap();
    let word = Seq2SeqModel::<f32>::build(
        ModelConfig {
            factored: false,
            factor_vocab: 0,
            ..fc
        },
        21,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let ex = random_examples(&mut rng, 5, 11, Some(5));
    let plain: Vec<Example> = ex.iter().map(|e| Example::new(e.src.clone(), e.tgt.clone())).collect();
    let (gf, lf) = {
        let mut g = Graph::new();
        let l = fm.forward_loss(&mut g, &ex, None).unwrap();
        g.backward(l).unwrap();
        (ParamStore::collect_grads(&g), g.value(l)[0])
    };
    let (gw, lw) = {
        let mut g = Graph::new();
        let l = word.forward_loss(&mut g, &plain, None).unwrap();
        g.backward(l).unwrap();
        (ParamStore::collect_grads(&g), g.value(l)[0])
    };
    assert_eq!(lf.to_bits(), lw.to_bits());
    for (id, grad) in gw {
        let other = gf.iter().find(|(k, _)| *k == id).unwrap();
        assert!(grad.iter().zip(&other.1).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn unknown_factor_targets_are_not_scored() {
    let fm = Seq2SeqModel::<f64>::build(factored(H2oMode::Shared, 8), 2).unwrap();
    let a = Example {
        src: vec![4],
        tgt: vec![5, 6],
        factors: Some(vec![UNK, 6]),
    };
    let total = fm.loss(std::slice::from_ref(&a)).unwrap();
    let lp = fm.sequence_logprob(&a.src, &a.tgt, None).unwrap();
    let enc = fm.encode_source(&a.src).unwrap();
    let s0 = enc.initial_state().to_vec();
    let first = fm.step(&enc, &[BOS], &[&s0]).unwrap();
    let second = fm.step(&enc, &[5], &[&first.states[0]]).unwrap();
    let f = second.factor_logprobs.unwrap()[0][6];
    assert!((total - (-lp - f) / 3.0).abs() < 1e-10);
}

mod checkpoint {
    use super::*;
    use crate::corpus::Vocabulary;

    fn vocabs(n: usize, factor: Option<usize>) -> ModelVocabs {
        let words = |p: &str, n: usize| Vocabulary::from_tokens((0..n - 4).map(|i| format!("{p}{i}")));
        ModelVocabs {
            src: words("s", n),
            tgt: words("t", n),
            factor: factor.map(|f| words("F", f)),
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut configs = all_word_configs();
        configs.push(factored(H2oMode::Separate, 7));
        for (i, c) in configs.into_iter().enumerate() {
            let fv = c.factored.then_some(c.factor_vocab);
            let m = Seq2SeqModel::<f32>::build(c, i as u64)
                .unwrap()
                .with_vocabs(vocabs(11, fv))
                .unwrap();
            let p = dir.path().join(format!("m{i}.knmt"));
            m.save(&p).unwrap();
            let back = Seq2SeqModel::<f32>::load(&p).unwrap();
            assert_eq!(back.config, m.config);
            assert_eq!(back.seed, m.seed);
            assert_eq!(back.vocabs, m.vocabs);
            assert_eq!(back.store, m.store);
            assert_eq!(back.fingerprint(), m.fingerprint());
        }
    }

    #[test]
    fn trained_values_survive_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let c = toy(TyingMode::Tied2, InitMode::MeanState, OutputMode::Conditional);
        let mut m = Seq2SeqModel::<f32>::build(c, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        m.store
            .tensors_mut()
            .for_each(|t| t.data_mut().iter_mut().for_each(|x| *x += rng.gen_range(-1.0f32..1.0)));
        let p = dir.path().join("m.knmt");
        m.save(&p).unwrap();
        assert_eq!(Seq2SeqModel::<f32>::load(&p).unwrap().store, m.store);
    }

    #[test]
    fn tied2_stores_shared_table_once_and_keeps_alias() {
        let dir = tempfile::tempdir().unwrap();
        let c = toy(TyingMode::Tied2, InitMode::Zero, OutputMode::Simple);
        let m = Seq2SeqModel::<f32>::build(c, 3).unwrap();
        let p = dir.path().join("m.knmt");
        m.save(&p).unwrap();
        let raw = read_container::<f32>(&p).unwrap();
        assert!(raw.tensors.iter().all(|(n, _)| n != "out.W_o"));
        assert_eq!(raw.aliases, vec![("out.W_o".to_string(), "emb.tgt".to_string())]);
        let mut back = Seq2SeqModel::<f32>::load(&p).unwrap();
        let fb = back.embeddings().table(EmbeddingRole::Feedback);
        let out = back.embeddings().output_projection();
        back.store.get_mut(fb).data_mut()[0] = 42.0;
        assert_eq!(back.store.get(out).data()[0], 42.0);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = Seq2SeqModel::<f32>::build(toy(TyingMode::None, InitMode::Zero, OutputMode::Simple), 3).unwrap();
        let p = dir.path().join("m.knmt");
        m.save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        match Seq2SeqModel::<f32>::load(&p) {
            Err(Error::Checkpoint { field, .. }) => assert_eq!(field, "out.b_o"),
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, &bytes[..40]).unwrap();
        assert!(matches!(Seq2SeqModel::<f32>::load(&p), Err(Error::Checkpoint { .. })));
    }

    #[test]
    fn unknown_version_and_bad_shape_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let m = Seq2SeqModel::<f32>::build(toy(TyingMode::None, InitMode::Zero, OutputMode::Simple), 3).unwrap();
        let p = dir.path().join("m.knmt");
        m.save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let mut v2 = bytes.clone();
        v2[4] = b'9';
        std::fs::write(&p, &v2).unwrap();
        match Seq2SeqModel::<f32>::load(&p) {
            Err(Error::Checkpoint { field, .. }) => assert_eq!(field, "version"),
            other => panic!("{other:?}"),
        }
        let at = bytes.windows(19).position(|w| w == b"tensor emb.src 11 6").unwrap();
        let mut swapped = bytes.clone();
        swapped[at..at + 19].copy_from_slice(b"tensor emb.src 6 11");
        std::fs::write(&p, &swapped).unwrap();
        match Seq2SeqModel::<f32>::load(&p) {
            Err(Error::Checkpoint { field, .. }) => assert_eq!(field, "emb.src"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn f64_model_loads_into_f32() {
        let dir = tempfile::tempdir().unwrap();
        let m = Seq2SeqModel::<f32>::build(toy(TyingMode::Tied2, InitMode::Zero, OutputMode::Simple), 3).unwrap();
        let p = dir.path().join("m.knmt");
        m.cast::<f64>().save(&p).unwrap();
        assert_eq!(Seq2SeqModel::<f32>::load(&p).unwrap().store, m.store);
    }
}

#[test]
fn full_graph_gradients_in_all_word_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for c in all_word_configs() {
        let model = Seq2SeqModel::<f64>::build(c.clone(), 3).unwrap();
        let batch = random_examples(&mut rng, 3, 11, None);
        let mut store = model.store.clone();
        let report = crate::tensor::grad_check(&mut store, |g, s| model.forward_loss_with(g, s, &batch, None), 1e-3, 1e-4)
            .unwrap();
        assert!(
            report.passed(),
            "{} {:?} {:?}: {:?}",
            c.tying.name(),
            c.init_mode,
            c.output_mode,
            report.per_param.iter().filter(|(_, e)| *e > 1e-4).collect::<Vec<_>>()
        );
    }
}

#[test]
fn full_graph_gradients_factored() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for h2o in [H2oMode::Shared, H2oMode::Separate] {
        let c = factored(h2o, 7);
        let model = Seq2SeqModel::<f64>::build(c, 3).unwrap();
        let batch = random_examples(&mut rng, 2, 11, Some(7));
        let mut store = model.store.clone();
        let report = crate::tensor::grad_check(&mut store, |g, s| model.forward_loss_with(g, s, &batch, None), 1e-3, 1e-4)
            .unwrap();
        assert!(report.passed(), "{h2o:?}: {report:?}");
    }
}

#[test]
fn foreign_store_layout_is_rejected() {
    let a = Seq2SeqModel::<f64>::build(toy(TyingMode::Tied2, InitMode::Zero, OutputMode::Simple), 1).unwrap();
    let b = Seq2SeqModel::<f64>::build(toy(TyingMode::None, InitMode::Zero, OutputMode::Simple), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = random_examples(&mut rng, 1, 11, None);
    let mut g = Graph::inference();
    assert!(a.forward_loss_with(&mut g, &b.store, &batch, None).is_err());
}

