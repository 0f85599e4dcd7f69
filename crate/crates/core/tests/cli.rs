use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use knmt::corpus::Vocabulary;
use knmt::layers::{InitMode, OutputMode, TyingMode};
use knmt::model::{ModelConfig, ModelVocabs, Seq2SeqModel};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_knmt")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A random model over `w0..w24` saved to `dir`, plus an input file.
fn fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let tokens: Vec<String> = (0..25).map(|i| format!("w{i}")).collect();
    let vocab = Vocabulary::from_tokens(&tokens);
    let config = ModelConfig {
        emb_dim: 12,
        enc_hidden: 10,
        dec_hidden: 14,
        src_vocab: vocab.len(),
        tgt_vocab: vocab.len(),
        ..ModelConfig::default()
    };
    let mut model = Seq2SeqModel::<f32>::build(config, 3)
        .unwrap()
        .with_vocabs(ModelVocabs {
            src: vocab.clone(),
            tgt: vocab,
            factor: None,
        })
        .unwrap();
    model
        .store
        .tensors_mut()
        .for_each(|t| t.data_mut().iter_mut().for_each(|x| *x *= 3.0));
    let ckpt = dir.join("m.ckpt");
    model.save(&ckpt).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let text: String = (0..40)
        .map(|_| {
            let n = rng.gen_range(1..8);
            let line: Vec<&str> = (0..n).map(|_| tokens.choose(&mut rng).unwrap().as_str()).collect();
            line.join(" ") + "\n"
        })
        .collect();
    let input = dir.join("in.txt");
    fs::write(&input, text).unwrap();
    (ckpt, input)
}

#[test]
fn beam_one_is_byte_identical_to_greedy() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, input) = fixture(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["translate", "--beam", "1", "--max-len", "15", "--model", s(&ckpt), "--input", s(&input), "--output", s(&a)]);
    ok(&["translate", "--greedy", "--max-len", "15", "--model", s(&ckpt), "--input", s(&input), "--output", s(&b)]);
    let (a, b) = (fs::read(a).unwrap(), fs::read(b).unwrap());
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn ensemble_of_one_matches_single_model() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, input) = fixture(dir.path());
    let single = ok(&["translate", "--max-len", "15", "--model", s(&ckpt), "--input", s(&input)]);
    let ens = ok(&["translate", "--max-len", "15", "--ensemble", s(&ckpt), "--input", s(&input)]);
    assert_eq!(single.lines().count(), 40);
    assert_eq!(single, ens);
}

#[test]
fn nbest_lists_the_beam_best_first() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, input) = fixture(dir.path());
    let nbest = dir.path().join("nbest");
    let best = ok(&[
        "translate", "--beam", "4", "--max-len", "15", "--model", s(&ckpt), "--input", s(&input), "--nbest", s(&nbest),
    ]);
    let entries = knmt::decode::read_nbest(&nbest).unwrap();
    let groups = knmt::decode::group_nbest(entries);
    assert_eq!(groups.len(), 40);
    for (g, line) in groups.iter().zip(best.lines()) {
        assert!(g.len() <= 4);
        assert_eq!(g[0].tokens.join(" "), line);
        assert!(g.windows(2).all(|w| w[0].total >= w[1].total));
    }
}

#[test]
fn params_matches_a_built_model() {
    for (tying, init, out) in [
        ("tied2", "mean_state", "conditional"),
        ("tied3", "zero", "simple"),
        ("none", "zero", "conditional"),
    ] {
        let printed = ok(&[
            "params", "--set", "emb_dim=8", "--set", "hidden=16", "--set", &format!("tying_mode={tying}"), "--set",
            &format!("init_mode={init}"), "--set", &format!("output_mode={out}"), "--set", "src_vocab=20", "--set",
            "tgt_vocab=20",
        ]);
        let config = ModelConfig {
            emb_dim: 8,
            enc_hidden: 16,
            dec_hidden: 16,
            tying: TyingMode::parse(tying).unwrap(),
            init_mode: InitMode::parse(init).unwrap(),
            output_mode: OutputMode::parse(out).unwrap(),
            src_vocab: 20,
            tgt_vocab: 20,
            ..ModelConfig::default()
        };
        let built = Seq2SeqModel::<f32>::build(config, 1).unwrap().count_params();
        assert_eq!(printed.trim().parse::<usize>().unwrap(), built, "{tying}");
    }
}

#[test]
fn unknown_key_fails_with_one_line() {
    let out = run(&["params", "--set", "hidden_size=3"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains("hidden_size"), "{err}");
}

#[test]
fn bad_flag_and_missing_file_exit_one() {
    assert_eq!(run(&["translate", "--no-such-flag"]).status.code(), Some(1));
    let out = run(&["score-bleu", "--hyp", "/nonexistent/h", "--ref", "/nonexistent/r"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("knmt: error:"));
}

#[test]
fn config_file_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "# comment\nemb_dim = 8\nbeam = wide\n").unwrap();
    let out = run(&["--config", s(&cfg), "params"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("bad.cfg:3"), "{err}");
}

#[test]
fn score_bleu_reads_the_fixture() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/bleu");
    let out = ok(&["score-bleu", "--hyp", s(&dir.join("hyp.txt")), "--ref", s(&dir.join("ref.txt"))]);
    assert!(out.starts_with("BLEU = 24.18,"), "{out}");
    let same = ok(&["score-bleu", "--hyp", s(&dir.join("ref.txt")), "--ref", s(&dir.join("ref.txt"))]);
    assert!(same.starts_with("BLEU = 100.00,"), "{same}");
}

#[test]
fn bpe_commands_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let text = "lower lowest newer newest\nwider low new\n";
    let input = dir.path().join("text");
    fs::write(&input, text).unwrap();
    let codes = dir.path().join("codes");
    ok(&["bpe-learn", "--input", s(&input), "--merges", "10", "--output", s(&codes)]);
    let seg = dir.path().join("seg");
    ok(&["bpe-apply", "--codes", s(&codes), "--input", s(&input), "--output", s(&seg)]);
    let segmented = fs::read_to_string(&seg).unwrap();
    assert!(segmented.contains("@@"));
    let joined: String = segmented.replace("@@ ", "");
    assert_eq!(joined, text);
}
