use std::ffi::{CStr, CString};
use std::ptr;

use tabsynth_ffi::*;

fn last_error() -> String {
    let p = tabsynth_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn take(s: *mut libc::c_char) -> String {
    assert!(!s.is_null());
    let text = unsafe { CStr::from_ptr(s) }.to_string_lossy().into_owned();
    unsafe { tabsynth_string_free(s) };
    text
}

const CONFIG: &str = "[data]\ndataset = planted\nrows = 40\nseed = 1\n\n[codec]\nformat = pairs\n\n[model]\ncontext_length = 48\nn_layers = 1\nn_heads = 2\nd_model = 16\nd_ff = 32\n\n[train]\nepochs = 2\nbatch_size = 8\n";

fn trained() -> *mut TabsynthCheckpoint {
    let cfg = CString::new(CONFIG).unwrap();
    let mut h = ptr::null_mut();
    let status = unsafe { tabsynth_train(cfg.as_ptr(), ptr::null(), &mut h) };
    assert_eq!(status, TabsynthStatus::Ok);
    assert!(!h.is_null());
    h
}

#[test]
fn train_save_load_and_sample() {
    let dir = tempfile::tempdir().unwrap();
    let h = trained();
    assert!(unsafe { tabsynth_checkpoint_vocab_size(h) } > 5);

    let mut cols = ptr::null_mut();
    assert_eq!(unsafe { tabsynth_checkpoint_columns(h, &mut cols) }, TabsynthStatus::Ok);
    assert_eq!(take(cols), "Color,Shape,X,Y");

    let path = dir.path().join("m.ckpt");
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { tabsynth_checkpoint_save(h, cpath.as_ptr()) }, TabsynthStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { tabsynth_checkpoint_load(cpath.as_ptr(), &mut loaded) }, TabsynthStatus::Ok);

    let bytes = std::fs::read(&path).unwrap();
    let mut from_mem = ptr::null_mut();
    assert_eq!(
        unsafe { tabsynth_checkpoint_from_bytes(bytes.as_ptr(), bytes.len(), &mut from_mem) },
        TabsynthStatus::Ok
    );

    let mut a = ptr::null_mut();
    let mut b = ptr::null_mut();
    assert_eq!(unsafe { tabsynth_sample_csv(h, 5, 7, 1.0, ptr::null(), &mut a) }, TabsynthStatus::Ok);
    assert_eq!(unsafe { tabsynth_sample_csv(loaded, 5, 7, 1.0, ptr::null(), &mut b) }, TabsynthStatus::Ok);
    let (a, b) = (take(a), take(b));
    assert!(a.starts_with("Color,Shape,X,Y\n"), "{a}");
    assert_eq!(a, b);

    unsafe {
        tabsynth_checkpoint_free(h);
        tabsynth_checkpoint_free(loaded);
        tabsynth_checkpoint_free(from_mem);
        tabsynth_checkpoint_free(ptr::null_mut());
        tabsynth_string_free(ptr::null_mut());
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { tabsynth_checkpoint_load(ptr::null(), &mut h) }, TabsynthStatus::NullPointer);
    assert!(h.is_null());

    let missing = CString::new("/nonexistent/x.ckpt").unwrap();
    assert_eq!(unsafe { tabsynth_checkpoint_load(missing.as_ptr(), &mut h) }, TabsynthStatus::Io);
    assert!(last_error().contains("/nonexistent/x.ckpt"));

    let junk = b"not a checkpoint";
    let status = unsafe { tabsynth_checkpoint_from_bytes(junk.as_ptr(), junk.len(), &mut h) };
    assert_eq!(status, TabsynthStatus::CorruptCheckpoint);

    let bad = CString::new("[train]\nbogus = 1\n").unwrap();
    assert_eq!(unsafe { tabsynth_train(bad.as_ptr(), ptr::null(), &mut h) }, TabsynthStatus::InvalidArgument);
    assert!(last_error().contains("bogus"));

    let h = trained();
    let cond = CString::new("Color").unwrap();
    let mut out = ptr::null_mut();
    let status = unsafe { tabsynth_sample_csv(h, 2, 0, 1.0, cond.as_ptr(), &mut out) };
    assert_eq!(status, TabsynthStatus::InvalidArgument);
    assert!(out.is_null());
    unsafe { tabsynth_checkpoint_free(h) };
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/tabsynth.h")).unwrap();
    for name in
        ["TabsynthCheckpoint", "TABSYNTH_STATUS_OK", "tabsynth_sample_csv", "tabsynth_last_error", "tabsynth_train"]
    {
        assert!(header.contains(name), "{name}");
    }
    let v = unsafe { CStr::from_ptr(tabsynth_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
