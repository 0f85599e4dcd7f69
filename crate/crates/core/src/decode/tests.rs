use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::UNK;
use crate::layers::{InitMode, OutputMode, TyingMode};
use crate::model::{H2oMode, ModelConfig};

fn tiny(seed: u64, vocab: usize, factor_vocab: usize, sharpen: f64) -> Seq2SeqModel<f64> {
    let config = ModelConfig {
        emb_dim: 4,
        enc_hidden: 3,
        dec_hidden: 5,
        tying: TyingMode::None,
        init_mode: if seed.is_multiple_of(2) { InitMode::MeanState } else { InitMode::Zero },
        output_mode: if seed.is_multiple_of(3) { OutputMode::Simple } else { OutputMode::Conditional },
        dropout_p: 0.0,
        src_vocab: 7,
        tgt_vocab: vocab,
        factored: factor_vocab > 0,
        factor_vocab,
        h2o: H2oMode::Shared,
        ..ModelConfig::default()
    };
    let mut m = Seq2SeqModel::<f64>::build(config, seed).unwrap();
    m.store
        .tensors_mut()
        .for_each(|t| t.data_mut().iter_mut().for_each(|x| *x *= sharpen));
    m
}

fn random_src(rng: &mut impl Rng) -> Vec<u32> {
    (0..rng.gen_range(1..5)).map(|_| rng.gen_range(4..7)).collect()
}

/// Every output sequence up to `max_len` steps with its score, by
/// recursion over `step`.
fn enumerate(m: &Seq2SeqModel<f64>, src: &[u32], max_len: usize) -> Vec<(Vec<u32>, Vec<u32>, f64)> {
    #[allow(clippy::too_many_arguments)]
    fn go(
        m: &Seq2SeqModel<f64>,
        enc: &EncodedSource<f64>,
        toks: &mut Vec<u32>,
        facs: &mut Vec<u32>,
        state: Vec<f64>,
        sum: f64,
        left: usize,
        out: &mut Vec<(Vec<u32>, Vec<u32>, f64)>,
    ) {
        if left == 0 {
            let mut t = toks.clone();
            t.push(EOS);
            let mut f = facs.clone();
            f.push(EOS);
            out.push((t, f, sum));
            return;
        }
        let prev = toks.last().copied().unwrap_or(BOS);
        let o = m.step(enc, &[prev], &[&state]).unwrap();
        for (j, &lp) in o.logprobs[0].iter().enumerate() {
            if !lp.is_finite() {
                continue;
            }
            let j = j as u32;
            if j == EOS {
                let mut t = toks.clone();
                t.push(EOS);
                let mut f = facs.clone();
                f.push(EOS);
                out.push((t, f, sum + lp));
                continue;
            }
            let fl: Vec<(u32, f64)> = match &o.factor_logprobs {
                Some(fl) => fl[0]
                    .iter()
                    .enumerate()
                    .filter(|(_, x)| x.is_finite())
                    .map(|(f, &x)| (f as u32, x))
                    .collect(),
                None => vec![(0, 0.0)],
            };
            for (f, flp) in fl {
                toks.push(j);
                if o.factor_logprobs.is_some() {
                    facs.push(f);
                }
                go(m, enc, toks, facs, o.states[0].clone(), sum + lp + flp, left - 1, out);
                toks.pop();
                if o.factor_logprobs.is_some() {
                    facs.pop();
                }
            }
        }
    }
    let enc = m.encode_source(src).unwrap();
    let mut out = Vec::new();
    go(m, &enc, &mut Vec::new(), &mut Vec::new(), enc.initial_state().to_vec(), 0.0, max_len, &mut out);
    out
}

fn opts(beam: usize, max_len: usize) -> DecodeOptions {
    DecodeOptions {
        beam,
        max_len,
        length_norm: false,
        ..DecodeOptions::default()
    }
}

#[test]
fn beam_one_equals_greedy() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..100 {
        let m = tiny(seed, 6 + (seed as usize % 4), 0, 1.0 + (seed % 5) as f64);
        let ens = Ensemble::single(&m);
        let src = random_src(&mut rng);
        let g = greedy_decode(&ens, &src, 8).unwrap();
        let b = beam_decode(&ens, &src, &opts(1, 8)).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].tokens, g.tokens, "seed {seed}");
        assert_eq!(b[0].logprob_sum, g.logprob_sum);
    }
}

#[test]
fn wide_beam_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..40 {
        let m = tiny(seed, 5 + (seed as usize % 2), 0, 3.0);
        let src = random_src(&mut rng);
        let max_len = 1 + seed as usize % 3;
        let all = enumerate(&m, &src, max_len);
        let best = all.iter().max_by(|a, b| a.2.total_cmp(&b.2)).unwrap();
        let hyps = beam_decode(&Ensemble::single(&m), &src, &opts(625, max_len)).unwrap();
        assert_eq!(hyps.len(), all.len().min(625));
        assert!((hyps[0].logprob_sum - best.2).abs() < 1e-9);
        assert_eq!(hyps[0].tokens, best.0);
    }
}

#[test]
fn hypothesis_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for seed in 0..20 {
        let m = tiny(seed, 9, 0, 2.0);
        let src = random_src(&mut rng);
        for h in beam_decode(&Ensemble::single(&m), &src, &opts(5, 6)).unwrap() {
            assert!((h.step_logprobs.iter().sum::<f64>() - h.logprob_sum).abs() < 1e-9);
            assert_eq!(h.tokens.last(), Some(&EOS));
            assert_eq!(h.tokens.iter().filter(|&&t| t == EOS).count(), 1);
            assert_eq!(h.step_logprobs.len(), h.tokens.len());
            if h.forced {
                assert_eq!(h.tokens.len(), 7);
            }
        }
    }
}

#[test]
fn forced_termination_at_max_len() {
    let mut m = tiny(1, 6, 0, 1.0);
    // make eos impossible to prefer
    let b_o = m.store.id("out.b_o").unwrap();
    m.store.get_mut(b_o).data_mut()[EOS as usize] = -50.0;
    let h = greedy_decode(&Ensemble::single(&m), &[4, 5], 3).unwrap();
    assert!(h.forced);
    assert_eq!(h.tokens.len(), 4);
    assert_eq!(h.step_logprobs[3], 0.0);
}

#[test]
fn ensemble_of_copies_equals_single() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = tiny(3, 9, 0, 2.0);
    let copies = [m.clone(), m.clone(), m.clone()];
    for combine in [Combine::Arithmetic, Combine::Geometric] {
        let ens = Ensemble::new(copies.iter().collect(), combine).unwrap();
        for _ in 0..10 {
            let src = random_src(&mut rng);
            let a = beam_decode(&Ensemble::single(&m), &src, &opts(4, 6)).unwrap();
            let b = beam_decode(&ens, &src, &opts(4, 6)).unwrap();
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.tokens, y.tokens);
                assert!((x.logprob_sum - y.logprob_sum).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn combined_distributions_normalize() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                let raw: Vec<f64> = (0..6).map(|_| rng.gen_range(-4.0..4.0)).collect();
                let lse = raw.iter().map(|x| x.exp()).sum::<f64>().ln();
                raw.iter().map(|x| x - lse).collect()
            })
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        for c in [Combine::Arithmetic, Combine::Geometric] {
            let p: f64 = combine_logprobs(&refs, c).iter().map(|x| x.exp()).sum();
            assert!((p - 1.0).abs() < 1e-6);
        }
        let mean0: f64 = (0..3).map(|i| rows[i][0].exp()).sum::<f64>() / 3.0;
        assert!((combine_logprobs(&refs, Combine::Arithmetic)[0].exp() - mean0).abs() < 1e-12);
    }
}

#[test]
fn ensemble_rejects_mismatched_vocab() {
    let a = tiny(1, 6, 0, 1.0);
    let b = tiny(1, 7, 0, 1.0);
    assert!(Ensemble::new(vec![&a, &b], Combine::Arithmetic).is_err());
    assert!(Ensemble::<f64>::new(vec![], Combine::Arithmetic).is_err());
}

#[test]
fn factored_streams_have_equal_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for seed in 0..20 {
        let m = tiny(seed, 8, 7, 2.0);
        let src = random_src(&mut rng);
        let o = DecodeOptions {
            factor_k: 2,
            ..opts(4, 5)
        };
        for h in factored_beam_decode(&Ensemble::single(&m), &src, &o).unwrap() {
            let f = h.factors.as_ref().unwrap();
            assert_eq!(f.len(), h.tokens.len());
            assert_eq!(*f.last().unwrap(), EOS);
            assert!(h.factor_words().unwrap().iter().all(|&x| x >= 4));
        }
    }
}

#[test]
fn factored_beam_matches_joint_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for seed in 0..10 {
        let m = tiny(seed, 6, 7, 3.0);
        let src = random_src(&mut rng);
        let max_len = 1 + seed as usize % 3;
        let all = enumerate(&m, &src, max_len);
        let best = all.iter().max_by(|a, b| a.2.total_cmp(&b.2)).unwrap();
        let o = DecodeOptions {
            factor_k: 3,
            ..opts(1000, max_len)
        };
        let hyps = factored_beam_decode(&Ensemble::single(&m), &src, &o).unwrap();
        assert!((hyps[0].logprob_sum - best.2).abs() < 1e-9, "seed {seed}");
        assert_eq!(hyps[0].tokens, best.0);
        assert_eq!(hyps[0].factors.as_ref().unwrap(), &best.1);
    }
}

#[test]
fn single_tag_factored_ranks_like_lemma_beam() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..10 {
        let fm = tiny(seed, 9, 5, 2.0);
        // same lemma parameters without the factor head
        let mut config = fm.config.clone();
        config.factored = false;
        config.factor_vocab = 0;
        let mut wm = Seq2SeqModel::<f64>::build(config, seed).unwrap();
        for (id, name, _) in fm.store.iter() {
            if let Some(wid) = wm.store.id(name) {
                let data = fm.store.get(id).data().to_vec();
                wm.store.get_mut(wid).data_mut().copy_from_slice(&data);
            }
        }
        let src = random_src(&mut rng);
        let a = factored_beam_decode(&Ensemble::single(&fm), &src, &opts(5, 6)).unwrap();
        let b = beam_decode(&Ensemble::single(&wm), &src, &opts(5, 6)).unwrap();
        let ta: Vec<_> = a.iter().map(|h| h.tokens.clone()).collect();
        let tb: Vec<_> = b.iter().map(|h| h.tokens.clone()).collect();
        assert_eq!(ta, tb);
    }
}

#[test]
fn wider_beam_rarely_loses() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut violations = 0;
    let mut cases = 0;
    for seed in 0..1500 {
        let m = tiny(seed, 7 + seed as usize % 5, 0, 1.0 + (seed % 4) as f64);
        let src = random_src(&mut rng);
        let ens = Ensemble::single(&m);
        let mut prev = f64::NEG_INFINITY;
        for beam in 1..=8 {
            let best = beam_decode(&ens, &src, &opts(beam, 5)).unwrap()[0].logprob_sum;
            cases += 1;
            if best < prev - 1e-12 {
                violations += 1;
            }
            prev = prev.max(best);
        }
    }
    eprintln!("wider beam found a worse best hypothesis in {violations}/{cases} cases");
    assert!(violations * 100 < cases);
}

#[test]
fn unknown_source_id_is_an_error() {
    let m = tiny(0, 6, 0, 1.0);
    assert!(matches!(
        greedy_decode(&Ensemble::single(&m), &[99], 3),
        Err(Error::Vocab { id: 99, .. })
    ));
    assert!(beam_decode(&Ensemble::single(&m), &[UNK], &opts(0, 3)).is_err());
}
