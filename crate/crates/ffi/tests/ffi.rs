use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;
use std::sync::Arc;

use semshift::corpus::{DocumentRow, DocumentTermMatrix, Vocabulary};
use semshift::embed::EmbeddingSpace;
use semshift::model::{train_classifier, ClassifierConfig};
use semshift_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = ss_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

/// Ten terms on a circle, each with frequency 100.
fn write_space(dir: &Path, name: &str, turn: f32) -> PathBuf {
    let terms: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
    let vocab = Arc::new(Vocabulary::from_ordered(terms.iter().map(|t| (t.clone(), 100))).unwrap());
    let mut vectors = Vec::new();
    for i in 0..10 {
        let a = i as f32 * 0.6 + if i == 0 { turn } else { 0.0 };
        vectors.extend([a.cos(), a.sin()]);
    }
    let space = EmbeddingSpace::from_matrix(vocab, 2, vectors).unwrap();
    let path = dir.join(name);
    space.save(&path).unwrap();
    path
}

fn load(path: &Path) -> *mut SsEmbedding {
    let mut e = ptr::null_mut();
    let p = c(path.to_str().unwrap());
    assert_eq!(unsafe { ss_embedding_load(p.as_ptr(), &mut e) }, SsStatus::Ok);
    assert!(!e.is_null());
    e
}

#[test]
fn embedding_handles_and_stability() {
    let dir = tempfile::tempdir().unwrap();
    let p = load(&write_space(dir.path(), "p.bin", 0.0));
    let q = load(&write_space(dir.path(), "q.bin", 3.0));
    unsafe {
        assert_eq!(ss_embedding_len(p), 10);
        assert_eq!(ss_embedding_dim(p), 2);
        assert_eq!(ss_embedding_len(ptr::null()), 0);

        let mut s = -1.0;
        assert_eq!(ss_stability(p, p, c("t3").as_ptr(), 3, 50, 50, &mut s), SsStatus::Ok);
        assert_eq!(s, 1.0);
        assert_eq!(ss_stability(p, q, c("t0").as_ptr(), 3, 50, 50, &mut s), SsStatus::Ok);
        assert!(s < 1.0 && (s * 3.0).fract() == 0.0);

        assert_eq!(ss_stability(p, q, c("nope").as_ptr(), 3, 50, 50, &mut s), SsStatus::UnknownTerm);
        assert!(last_error().contains("nope"));
        assert_eq!(ss_stability(p, q, c("t1").as_ptr(), 3, 50, 500, &mut s), SsStatus::BelowFloor);
        assert_eq!(ss_stability(p, q, c("t1").as_ptr(), 0, 50, 50, &mut s), SsStatus::InvalidArgument);
        assert_eq!(ss_stability(p, ptr::null(), c("t1").as_ptr(), 3, 50, 50, &mut s), SsStatus::NullPointer);
        assert_eq!(ss_stability(p, q, ptr::null(), 3, 50, 50, &mut s), SsStatus::NullPointer);

        let mut csv = ptr::null_mut();
        assert_eq!(ss_stability_table_csv(p, p, 3, 50, 50, &mut csv), SsStatus::Ok);
        let text = CStr::from_ptr(csv).to_str().unwrap().to_string();
        ss_string_free(csv);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("term,S,freq_P,freq_Q"));
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 10);
        assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("1")));

        ss_embedding_free(p);
        ss_embedding_free(q);
        ss_embedding_free(ptr::null_mut());
    }
}

#[test]
fn load_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut e = ptr::null_mut();
    let missing = c(dir.path().join("missing.bin").to_str().unwrap());
    unsafe {
        assert_eq!(ss_embedding_load(missing.as_ptr(), &mut e), SsStatus::Io);
        assert!(e.is_null());
        assert!(last_error().contains("missing.bin"));
        let junk = dir.path().join("junk.bin");
        std::fs::write(&junk, b"garbage").unwrap();
        let junk = c(junk.to_str().unwrap());
        assert_eq!(ss_embedding_load(junk.as_ptr(), &mut e), SsStatus::Format);
        assert_eq!(ss_embedding_load(junk.as_ptr(), ptr::null_mut()), SsStatus::NullPointer);
        let bad = [0xffu8, 0xfe, 0];
        assert_eq!(ss_embedding_load(bad.as_ptr().cast(), &mut e), SsStatus::InvalidUtf8);
    }
}

#[test]
fn model_predicts_from_text() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = Arc::new(Vocabulary::from_ordered([("sad".to_string(), 10), ("sunny".to_string(), 10)]).unwrap());
    let docs: Vec<(String, Vec<String>, bool)> = (0..20)
        .map(|i| {
            let word = if i % 2 == 0 { "sad" } else { "sunny" };
            (format!("u{i}"), vec![word.to_string(); 3], i % 2 == 0)
        })
        .collect();
    let dtm = DocumentTermMatrix::from_rows(
        docs.iter().map(|(id, toks, l)| DocumentRow::new(id.clone(), toks.iter(), Some(*l), 1)),
        Arc::clone(&vocab),
    );
    let cfg = ClassifierConfig {
        fixed_c: Some(10.0),
        ..Default::default()
    };
    let model = train_classifier(&dtm, vocab, &cfg).unwrap();
    let path = dir.path().join("model.bin");
    model.save(&path).unwrap();

    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(ss_model_load(c(path.to_str().unwrap()).as_ptr(), &mut m), SsStatus::Ok);
        let (mut hi, mut lo) = (0.0, 1.0);
        assert_eq!(ss_model_predict_text(m, c("so sad today").as_ptr(), &mut hi), SsStatus::Ok);
        assert_eq!(ss_model_predict_text(m, c("sunny sunny").as_ptr(), &mut lo), SsStatus::Ok);
        assert!(hi > 0.5 && lo < 0.5, "{hi} {lo}");
        assert_eq!(ss_model_predict_text(ptr::null(), c("x").as_ptr(), &mut lo), SsStatus::NullPointer);
        ss_model_free(m);
    }
}

#[test]
fn tokenize_returns_json() {
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(ss_tokenize(c("Hello @bob see https://x.org").as_ptr(), &mut out), SsStatus::Ok);
        let tokens: Vec<String> = serde_json::from_str(CStr::from_ptr(out).to_str().unwrap()).unwrap();
        ss_string_free(out);
        assert_eq!(tokens, semshift::corpus::tokenize("Hello @bob see https://x.org"));
        assert!(!CStr::from_ptr(ss_version()).to_bytes().is_empty());
    }
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("semshift.h")
}

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).unwrap();
    for f in [
        "ss_embedding_load",
        "ss_embedding_free",
        "ss_embedding_len",
        "ss_embedding_dim",
        "ss_stability",
        "ss_stability_table_csv",
        "ss_model_load",
        "ss_model_free",
        "ss_model_predict_text",
        "ss_tokenize",
        "ss_string_free",
        "ss_last_error",
        "SS_STATUS_UNKNOWN_TERM",
        "typedef struct SsEmbedding SsEmbedding",
    ] {
        assert!(text.contains(f), "{f} missing from header");
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        r#"#include "semshift.h"
int main(void) {
    SsEmbedding *e = 0;
    SsStatus s = ss_embedding_load("x.bin", &e);
    double v = 0.0;
    if (s == SS_STATUS_OK) { s = ss_stability(e, e, "t", (size_t)10, 50u, 50u, &v); ss_embedding_free(e); }
    return s == SS_STATUS_OK ? 0 : 1;
}
"#,
    )
    .unwrap();
    let include = header().parent().unwrap().to_path_buf();
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let status = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg("-I")
            .arg(&include)
            .arg(&src)
            .status()
            .unwrap_or_else(|e| panic!("{compiler} not runnable: {e}"));
        assert!(status.success(), "{compiler} rejected the header");
    }
}

#[test]
fn c_program_links_and_runs() {
    let libdir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    assert!(libdir.join("libsemshift_ffi.so").is_file(), "cdylib not built in {}", libdir.display());
    let dir = tempfile::tempdir().unwrap();
    let space = write_space(dir.path(), "p.bin", 0.0);
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "semshift.h"
int main(int argc, char **argv) {
    SsEmbedding *e = NULL;
    if (ss_embedding_load(argv[1], &e) != SS_STATUS_OK) { fprintf(stderr, "%s\n", ss_last_error()); return 2; }
    double s = -1.0;
    SsStatus st = ss_stability(e, e, "t4", 3, 50, 50, &s);
    SsStatus missing = ss_stability(e, e, "zz", 3, 50, 50, &s);
    printf("%zu %d %d %.3f\n", ss_embedding_len(e), (int)st, (int)missing, s);
    ss_embedding_free(e);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let status = Command::new("cc")
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&src)
        .arg("-o")
        .arg(&exe)
        .arg("-L")
        .arg(&libdir)
        .arg("-lsemshift_ffi")
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).arg(&space).env("LD_LIBRARY_PATH", &libdir).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "10 0 6 1.000");
}
