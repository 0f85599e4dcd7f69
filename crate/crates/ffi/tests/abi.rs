use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use knmt::corpus::{tokenize, ParallelCorpus};
use knmt::decode::{decode, DecodeOptions, Ensemble};
use knmt::model::{ModelConfig, ModelVocabs, Seq2SeqModel};
use knmt_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(knmt_last_error()) }.to_str().unwrap().to_string()
}

fn toy_model(dir: &Path) -> (Seq2SeqModel<f32>, std::path::PathBuf) {
    let src: Vec<Vec<String>> = ["a b c", "b c d", "c d e a"].iter().map(|s| tokenize(s)).collect();
    let tgt: Vec<Vec<String>> = ["x y", "y z w", "z w x y"].iter().map(|s| tokenize(s)).collect();
    let corpus = ParallelCorpus::new(src, tgt).unwrap();
    let vocabs = ModelVocabs::build(&corpus, false, None);
    let config = ModelConfig {
        emb_dim: 6,
        enc_hidden: 8,
        dec_hidden: 8,
        src_vocab: vocabs.src.len(),
        tgt_vocab: vocabs.tgt.len(),
        ..ModelConfig::default()
    };
    let model = Seq2SeqModel::<f32>::build(config, 5).unwrap().with_vocabs(vocabs).unwrap();
    let path = dir.join("toy.ckpt");
    model.save(&path).unwrap();
    (model, path)
}

#[test]
fn translate_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (model, path) = toy_model(dir.path());
    let mut handle = ptr::null_mut();
    let st = unsafe { knmt_model_load(c(path.to_str().unwrap()).as_ptr(), &mut handle) };
    assert_eq!(st, KnmtStatus::Ok, "{}", last_error());
    let mut count = 0u64;
    assert_eq!(unsafe { knmt_model_param_count(handle, &mut count) }, KnmtStatus::Ok);
    assert_eq!(count as usize, model.count_params());

    let source = "a b c d";
    let mut out = ptr::null_mut();
    let st = unsafe { knmt_translate(handle, c(source).as_ptr(), 3, 10, &mut out) };
    assert_eq!(st, KnmtStatus::Ok, "{}", last_error());
    let got = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_string();
    unsafe { knmt_string_free(out) };

    let vocabs = model.vocabs.as_ref().unwrap();
    let opts = DecodeOptions {
        beam: 3,
        max_len: 10,
        ..DecodeOptions::default()
    };
    let want = decode(&Ensemble::single(&model), &vocabs.src.encode(&tokenize(source)), &opts).unwrap();
    assert_eq!(got, want[0].render(vocabs, false).join(" "));

    let mut greedy = ptr::null_mut();
    assert_eq!(unsafe { knmt_translate(handle, c(source).as_ptr(), 0, 10, &mut greedy) }, KnmtStatus::Ok);
    let mut beam1 = ptr::null_mut();
    assert_eq!(unsafe { knmt_translate(handle, c(source).as_ptr(), 1, 10, &mut beam1) }, KnmtStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(greedy) }, unsafe { CStr::from_ptr(beam1) });
    unsafe {
        knmt_string_free(greedy);
        knmt_string_free(beam1);
        knmt_model_free(handle);
    }
}

#[test]
fn errors_set_status_and_message() {
    let mut handle = ptr::null_mut();
    let st = unsafe { knmt_model_load(c("/nonexistent/model.ckpt").as_ptr(), &mut handle) };
    assert_eq!(st, KnmtStatus::Io);
    assert!(handle.is_null());
    assert!(!last_error().is_empty());

    let st = unsafe { knmt_model_load(ptr::null(), &mut handle) };
    assert_eq!(st, KnmtStatus::NullPointer);
    assert!(last_error().contains("path"));

    let mut score = 0.0;
    let bad = [0xffu8, 0xfe, 0];
    let st = unsafe { knmt_bleu(bad.as_ptr().cast(), c("a").as_ptr(), &mut score) };
    assert_eq!(st, KnmtStatus::InvalidUtf8);

    let st = unsafe { knmt_bleu(c("a b\nc").as_ptr(), c("a b").as_ptr(), &mut score) };
    assert_eq!(st, KnmtStatus::Contract);

    let st = unsafe { knmt_bleu(c("a b c d").as_ptr(), c("a b c d").as_ptr(), &mut score) };
    assert_eq!(st, KnmtStatus::Ok);
    assert!((score - 100.0).abs() < 1e-9);
    assert_eq!(last_error(), "");
}

#[test]
fn garbage_checkpoint_is_a_checkpoint_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("junk.ckpt");
    std::fs::write(&p, b"not a checkpoint").unwrap();
    let mut handle = ptr::null_mut();
    let st = unsafe { knmt_model_load(c(p.to_str().unwrap()).as_ptr(), &mut handle) };
    assert_eq!(st, KnmtStatus::Checkpoint, "{}", last_error());
}

#[test]
fn bpe_roundtrip_through_handle() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("codes");
    let merges = vec![("l".to_string(), "o".to_string()), ("lo".to_string(), "w</w>".to_string())];
    knmt::corpus::SubwordModel::from_merges(merges).save(&p).unwrap();
    let mut bpe = ptr::null_mut();
    assert_eq!(unsafe { knmt_bpe_load(c(p.to_str().unwrap()).as_ptr(), &mut bpe) }, KnmtStatus::Ok, "{}", last_error());
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { knmt_bpe_apply(bpe, c("low lower").as_ptr(), &mut out) }, KnmtStatus::Ok);
    let s = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_string();
    assert_eq!(s, "low lo@@ w@@ e@@ r");
    unsafe {
        knmt_string_free(out);
        knmt_bpe_free(bpe);
    }
}

#[test]
fn null_handles_are_rejected() {
    let mut out = ptr::null_mut();
    let st = unsafe { knmt_translate(ptr::null(), c("a").as_ptr(), 1, 5, &mut out) };
    assert_eq!(st, KnmtStatus::NullPointer);
    let mut x = 0.0;
    assert_eq!(unsafe { knmt_lm_score(ptr::null(), c("a").as_ptr(), &mut x) }, KnmtStatus::NullPointer);
    unsafe {
        knmt_model_free(ptr::null_mut());
        knmt_string_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/knmt.h")).unwrap();
    for f in [
        "knmt_last_error",
        "knmt_version",
        "knmt_string_free",
        "knmt_model_load",
        "knmt_model_free",
        "knmt_model_param_count",
        "knmt_translate",
        "knmt_bpe_load",
        "knmt_bpe_apply",
        "knmt_bpe_free",
        "knmt_lm_load",
        "knmt_lm_score",
        "knmt_lm_free",
        "knmt_bleu",
        "knmt_bleu_files",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct KnmtModel KnmtModel;"));
    assert!(header.contains("KNMT_STATUS_OK = 0"));
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("t.c");
    std::fs::write(&src, "#include \"knmt.h\"\nint main(void) { return knmt_version() == 0; }\n").unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = std::process::Command::new(cc)
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(include)
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if std::process::Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc);
        }
    }
    Err(())
}
