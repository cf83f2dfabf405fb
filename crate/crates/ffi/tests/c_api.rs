use std::ffi::{CStr, CString};
use std::ptr;

use dca::checkpoint;
use dca::config::ModelConfig;
use dca::corpus::Vocabulary;
use dca::model::Model;
use dca_ffi::*;

fn tiny_model() -> Model {
    let mut tokens: Vec<String> = dca::corpus::RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend((0..6).map(|i| format!("w{i}")));
    let vocab = Vocabulary::from_tokens(tokens).unwrap();
    let config = ModelConfig {
        agents: 2,
        hidden: 4,
        embed: 3,
        vocab_size: vocab.len(),
        per_agent_limit: 8,
        max_len_test: 6,
        beam_width: 2,
        ..Default::default()
    };
    Model::new(config, vocab, 3).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(dca_last_error()) }
        .to_str()
        .unwrap()
        .to_string()
}

fn load(path: &str) -> (DcaStatus, *mut DcaModel) {
    let p = CString::new(path).unwrap();
    let mut handle = ptr::null_mut();
    let status = unsafe { dca_model_load(p.as_ptr(), &mut handle) };
    (status, handle)
}

#[test]
fn load_summarize_and_free() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = tiny_model();
    checkpoint::save(&path, &model, 0).unwrap();

    let (status, handle) = load(path.to_str().unwrap());
    assert_eq!(status, DcaStatus::Ok, "{}", last_error());
    assert!(!handle.is_null());

    let mut agents = 0usize;
    assert_eq!(unsafe { dca_model_agents(handle, &mut agents) }, DcaStatus::Ok);
    assert_eq!(agents, 2);

    let doc = CString::new("w1 w2 unseen . w3 w4 .\nw5 w0 .").unwrap();
    let mut out = ptr::null_mut();
    let status = unsafe { dca_summarize(handle, doc.as_ptr(), 2, 5, true, &mut out) };
    assert_eq!(status, DcaStatus::Ok, "{}", last_error());
    let summary = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_string();
    unsafe { dca_string_free(out) };
    assert!(summary.split_whitespace().count() <= 5);
    assert!(!summary.contains("<unk>"));

    // same answer as the library called directly
    let ex = dca::corpus::Example {
        id: "x".into(),
        document: vec!["w1 w2 unseen . w3 w4 .".into(), "w5 w0 .".into()],
        summary: String::new(),
    };
    let c = &model.config;
    let prepared = dca::corpus::prepare(&ex, &model.vocab, c.agents, c.per_agent_limit, c.max_len_test);
    let opts = dca::inference::DecodeOptions {
        beam_width: 2,
        max_len: 5,
        block_trigrams: true,
    };
    let (words, _) = dca::inference::summarize(&model, &prepared, opts).unwrap();
    assert_eq!(summary, words.join(" "));

    unsafe { dca_model_free(handle) };
}

#[test]
fn load_errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ckpt");
    let (status, handle) = load(missing.to_str().unwrap());
    assert_eq!(status, DcaStatus::Io);
    assert!(handle.is_null());
    assert!(!last_error().is_empty());

    let bad = dir.path().join("bad.ckpt");
    let mut bytes = checkpoint::to_bytes(&tiny_model(), 0).unwrap();
    bytes.pop();
    std::fs::write(&bad, bytes).unwrap();
    assert_eq!(load(bad.to_str().unwrap()).0, DcaStatus::Checkpoint);

    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { dca_model_load(ptr::null(), &mut out) },
        DcaStatus::NullArgument
    );
    let p = CString::new("x").unwrap();
    assert_eq!(
        unsafe { dca_model_load(p.as_ptr(), ptr::null_mut()) },
        DcaStatus::NullArgument
    );
}

#[test]
fn summarize_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&path, &tiny_model(), 0).unwrap();
    let (_, handle) = load(path.to_str().unwrap());
    let mut out = ptr::null_mut();

    let empty = CString::new("\n  \n").unwrap();
    assert_eq!(
        unsafe { dca_summarize(handle, empty.as_ptr(), 0, 0, false, &mut out) },
        DcaStatus::Config
    );
    assert!(out.is_null());

    let invalid = [0xffu8, 0xfe, 0];
    let status = unsafe { dca_summarize(handle, invalid.as_ptr().cast(), 0, 0, false, &mut out) };
    assert_eq!(status, DcaStatus::InvalidUtf8);

    let doc = CString::new("w1 .").unwrap();
    assert_eq!(
        unsafe { dca_summarize(ptr::null(), doc.as_ptr(), 0, 0, false, &mut out) },
        DcaStatus::NullArgument
    );
    unsafe { dca_model_free(handle) };
}

#[test]
fn rouge_scores() {
    let h = CString::new("the cat sat").unwrap();
    let r = CString::new("the cat sat down").unwrap();
    let mut s = DcaRouge::default();
    assert_eq!(unsafe { dca_rouge(h.as_ptr(), r.as_ptr(), &mut s) }, DcaStatus::Ok);
    assert_eq!(s.rouge_1.precision, 1.0);
    assert_eq!(s.rouge_1.recall, 0.75);
    assert!((s.rouge_1.f1 - 6.0 / 7.0).abs() < 1e-12);
    assert_eq!(s.rouge_2.recall, 2.0 / 3.0);
    assert_eq!(s.rouge_l.recall, 0.75);
    assert_eq!(
        unsafe { dca_rouge(h.as_ptr(), ptr::null(), &mut s) },
        DcaStatus::NullArgument
    );
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/dca.h")).unwrap();
    for f in [
        "dca_model_load",
        "dca_model_free",
        "dca_model_agents",
        "dca_summarize",
        "dca_rouge",
        "dca_string_free",
        "dca_last_error",
        "dca_version",
        "DCA_STATUS_CHECKPOINT = 5",
        "typedef struct DcaModel DcaModel",
    ] {
        assert!(header.contains(f), "header lacks {f}");
    }
}
