use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use tabtext_ffi::*;
use tempfile::TempDir;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = tabtext_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

unsafe fn take(s: *mut c_char) -> String {
    let out = CStr::from_ptr(s).to_str().unwrap().to_string();
    tabtext_string_free(s);
    out
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

unsafe fn load(path: &Path) -> *mut TabtextTable {
    let mut t = ptr::null_mut();
    let p = c(path.to_str().unwrap());
    assert_eq!(tabtext_table_load_csv(p.as_ptr(), &mut t), TabtextStatus::Ok);
    t
}

#[test]
fn table_roundtrip_and_accessors() {
    let dir = TempDir::new().unwrap();
    let src = write(dir.path(), "t.csv", "age,job\n34,doctor\n,nurse\n");
    unsafe {
        let t = load(&src);
        assert_eq!((tabtext_table_rows(t), tabtext_table_cols(t)), (2, 2));
        let mut s = ptr::null_mut();
        assert_eq!(tabtext_table_cell(t, 0, 1, &mut s), TabtextStatus::Ok);
        assert_eq!(take(s), "doctor");
        assert_eq!(tabtext_table_cell(t, 1, 0, &mut s), TabtextStatus::Ok);
        assert_eq!(take(s), "");
        assert_eq!(tabtext_table_feature_name(t, 0, &mut s), TabtextStatus::Ok);
        assert_eq!(take(s), "age");
        assert_eq!(tabtext_table_cell(t, 2, 0, &mut s), TabtextStatus::OutOfRange);
        assert!(last_error().contains("outside"));
        let copy = dir.path().join("copy.csv");
        let p = c(copy.to_str().unwrap());
        assert_eq!(tabtext_table_save_csv(t, p.as_ptr()), TabtextStatus::Ok);
        assert_eq!(std::fs::read(&src).unwrap(), std::fs::read(&copy).unwrap());
        tabtext_table_free(t);
    }
}

#[test]
fn errors_are_codes_not_crashes() {
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(tabtext_table_load_csv(ptr::null(), &mut t), TabtextStatus::NullArgument);
        assert!(last_error().contains("path"));
        let missing = c("/nonexistent/file.csv");
        assert_eq!(tabtext_table_load_csv(missing.as_ptr(), &mut t), TabtextStatus::Io);
        assert!(t.is_null());
        assert_eq!(tabtext_table_rows(ptr::null()), 0);
        tabtext_table_free(ptr::null_mut());
        tabtext_checkpoint_free(ptr::null_mut());
        tabtext_string_free(ptr::null_mut());
        let bad = c(r#"{"kind":"Gmm2D","components":[],"n_rows":3}"#);
        assert_eq!(tabtext_bench_generate(bad.as_ptr(), &mut t), TabtextStatus::Config);
        let not_json = c("{");
        assert_eq!(tabtext_bench_generate(not_json.as_ptr(), &mut t), TabtextStatus::Config);
        let mut ck = ptr::null_mut();
        assert_eq!(tabtext_checkpoint_load(missing.as_ptr(), &mut ck), TabtextStatus::Io);
        let invalid = [0xffu8, 0];
        assert_eq!(tabtext_table_load_csv(invalid.as_ptr().cast(), &mut t), TabtextStatus::InvalidUtf8);
    }
    assert!(!unsafe { CStr::from_ptr(tabtext_version()) }.to_bytes().is_empty());
}

#[test]
fn dcr_through_the_boundary() {
    let dir = TempDir::new().unwrap();
    let train = write(dir.path(), "train.csv", "n,c\n1,x\n4,y\n");
    let syn = write(dir.path(), "syn.csv", "n,c\n1,x\n2,x\n7,x\n");
    unsafe {
        let t = load(&train);
        let s = load(&syn);
        let mut summary = TabtextDcrSummary::default();
        let mut d = [0.0f64; 3];
        assert_eq!(tabtext_dcr(s, t, false, d.as_mut_ptr(), &mut summary), TabtextStatus::Ok);
        // 7,x is 6 from (1,x) and 3+1 from (4,y)
        assert_eq!(d, [0.0, 1.0, 4.0]);
        assert_eq!(summary.median, 1.0);
        let other = write(dir.path(), "other.csv", "m,c\n1,x\n");
        let o = load(&other);
        assert_eq!(tabtext_dcr(o, t, false, ptr::null_mut(), &mut summary), TabtextStatus::Schema);
        tabtext_table_free(o);
        assert_eq!(tabtext_dcr(t, t, true, ptr::null_mut(), &mut summary), TabtextStatus::Ok);
        assert_eq!(summary, TabtextDcrSummary { min: 0.0, median: 0.0, mean: 0.0, zero_fraction: 1.0 });
        assert_eq!(tabtext_dcr(t, t, true, ptr::null_mut(), ptr::null_mut()), TabtextStatus::NullArgument);
        tabtext_table_free(t);
        tabtext_table_free(s);
    }
}

#[test]
fn train_sample_impute_save_load() {
    let dir = TempDir::new().unwrap();
    let spec = c(r#"{"kind":"DependentToy","n_rows":64,"seed":2,"features":[
        {"name":"size","values":["small","large"],"marginal":[0.5,0.5]},
        {"name":"shape","values":["round","square"],"parent":"size","given":{"small":[1,0],"large":[0,1]}}]}"#);
    let config = c(r#"{"model":{"vocab_size":300,"context_len":32,"n_layers":2,"n_heads":2,"d_model":32,"d_ff":64},
        "train":{"epochs":80,"batch_size":16,"learning_rate":0.003}}"#);
    unsafe {
        let mut table = ptr::null_mut();
        assert_eq!(tabtext_bench_generate(spec.as_ptr(), &mut table), TabtextStatus::Ok);
        assert_eq!(tabtext_table_rows(table), 64);
        let mut ck = ptr::null_mut();
        let bad = c(r#"{"optimizer":{}}"#);
        assert_eq!(tabtext_train(table, bad.as_ptr(), &mut ck), TabtextStatus::Config);
        assert_eq!(tabtext_train(table, config.as_ptr(), &mut ck), TabtextStatus::Ok);

        let path = dir.path().join("ck.bin");
        let p = c(path.to_str().unwrap());
        assert_eq!(tabtext_checkpoint_save(ck, p.as_ptr()), TabtextStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(tabtext_checkpoint_load(p.as_ptr(), &mut loaded), TabtextStatus::Ok);

        let sample_spec =
            c(r#"{"count":10,"seed":1,"mode":"multi_name_value","constraints":[{"feature":"size","value":"large"}]}"#);
        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        let mut report = ptr::null_mut();
        let status = tabtext_sample(ck, sample_spec.as_ptr(), &mut a, &mut report);
        assert_eq!(status, TabtextStatus::Ok, "{}", last_error());
        assert!(take(report).contains("invalid_rate"));
        assert_eq!(tabtext_sample(loaded, sample_spec.as_ptr(), &mut b, ptr::null_mut()), TabtextStatus::Ok);
        assert_eq!(tabtext_table_rows(a), 10);
        for row in 0..10 {
            let mut s = ptr::null_mut();
            assert_eq!(tabtext_table_cell(a, row, 0, &mut s), TabtextStatus::Ok);
            assert_eq!(take(s), "large");
            let (mut x, mut y) = (ptr::null_mut(), ptr::null_mut());
            tabtext_table_cell(a, row, 1, &mut x);
            tabtext_table_cell(b, row, 1, &mut y);
            assert_eq!(take(x), take(y), "loaded checkpoint samples differently");
        }

        let partial_path = write(dir.path(), "partial.csv", "size,shape\nsmall,\n,square\n");
        let pp = c(partial_path.to_str().unwrap());
        let mut partial = ptr::null_mut();
        assert_eq!(tabtext_checkpoint_load_table(ck, pp.as_ptr(), &mut partial), TabtextStatus::Ok);
        let mut filled = ptr::null_mut();
        assert_eq!(tabtext_impute(ck, partial, ptr::null(), &mut filled), TabtextStatus::Ok);
        let mut s = ptr::null_mut();
        tabtext_table_cell(filled, 0, 0, &mut s);
        assert_eq!(take(s), "small");
        tabtext_table_cell(filled, 1, 1, &mut s);
        assert_eq!(take(s), "square");

        let unsat = c(r#"{"mode":"multi_name_value","constraints":[{"feature":"size","value":"huge"}]}"#);
        let mut none = ptr::null_mut();
        assert_eq!(tabtext_sample(ck, unsat.as_ptr(), &mut none, ptr::null_mut()), TabtextStatus::Config);
        assert!(none.is_null());

        for t in [table, a, b, partial, filled] {
            tabtext_table_free(t);
        }
        tabtext_checkpoint_free(ck);
        tabtext_checkpoint_free(loaded);
    }
}

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_header() {
    let lib = target_dir().join("libtabtext_ffi.a");
    let have_cc = Command::new("cc").arg("--version").output().is_ok();
    if !have_cc || !lib.exists() {
        eprintln!("skipping: cc available {have_cc}, {} exists {}", lib.display(), lib.exists());
        return;
    }
    let dir = TempDir::new().unwrap();
    let src = write(
        dir.path(),
        "main.c",
        r#"
#include <stdio.h>
#include <string.h>
#include "tabtext.h"

int main(void) {
    const char *spec = "{\"kind\":\"Gmm2D\",\"n_rows\":50,\"seed\":1,"
        "\"components\":[{\"weight\":1,\"mean\":[0,0],\"cov\":[[1,0],[0,1]]}]}";
    TabtextTable *t = NULL;
    if (tabtext_bench_generate(spec, &t) != TABTEXT_STATUS_OK) return 1;
    if (tabtext_table_rows(t) != 50 || tabtext_table_cols(t) != 2) return 2;
    TabtextDcrSummary s;
    if (tabtext_dcr(t, t, false, NULL, &s) != TABTEXT_STATUS_OK || s.zero_fraction != 1.0) return 3;
    char *name = NULL;
    if (tabtext_table_feature_name(t, 1, &name) != TABTEXT_STATUS_OK || strcmp(name, "y") != 0) return 4;
    tabtext_string_free(name);
    if (tabtext_table_load_csv(NULL, &t) != TABTEXT_STATUS_NULL_ARGUMENT) return 5;
    printf("%s\n", tabtext_last_error());
    tabtext_table_free(t);
    return 0;
}
"#,
    );
    let bin = dir.path().join("main");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile/link failed");
    let out = Command::new(&bin).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("path is null"));
}
