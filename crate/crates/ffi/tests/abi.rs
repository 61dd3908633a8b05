use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use onestream_ffi::*;

const CONFIG: &str = "[model]\nn_template = 32\nn_search = 64\nfeat_dim = 8\nheads = 2\ngcn_neighbors = 8\nmfa_samples = [16, 32]\n";

fn last_error() -> Option<String> {
    let p = ost_last_error();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

#[test]
fn iou_and_error_reporting() {
    let a = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0];
    let b = [0.5, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0];
    let mut out = 0.0;
    unsafe {
        assert_eq!(ost_box_iou(a.as_ptr(), b.as_ptr(), &mut out), OstStatus::Ok);
        assert!((out - 1.0 / 3.0).abs() < 1e-12);
        assert!(last_error().is_none());
        assert_eq!(ost_box_iou(a.as_ptr(), ptr::null(), &mut out), OstStatus::NullPointer);
        assert!(last_error().unwrap().contains("`b`"));
        let bad = [0.0, 0.0, 0.0, 1.0, f64::NAN, 1.0, 0.0];
        assert_eq!(ost_box_iou(a.as_ptr(), bad.as_ptr(), &mut out), OstStatus::InvalidArgument);
        assert_eq!(ost_box_iou(a.as_ptr(), b.as_ptr(), ptr::null_mut()), OstStatus::NullPointer);
    }
}

#[test]
fn model_lifecycle_and_tracking() {
    let cfg = CString::new(CONFIG).unwrap();
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(ost_model_init(cfg.as_ptr(), 1, &mut model), OstStatus::Ok);
        let mut n = 0u64;
        assert_eq!(ost_model_param_count(model, &mut n), OstStatus::Ok);
        assert!(n > 0);
        let first = [0.0, 0.0, 0.75, 3.9, 1.6, 1.5, 0.0];
        let pts: Vec<f64> = (0..50).flat_map(|i| [i as f64 * 0.05 - 1.2, 0.3, 0.7]).collect();
        let mut tracker = ptr::null_mut();
        assert_eq!(ost_tracker_new(model, pts.as_ptr(), 50, first.as_ptr(), &mut tracker), OstStatus::Ok);
        ost_model_free(model);
        let mut out = [0.0; 7];
        assert_eq!(ost_tracker_update(tracker, pts.as_ptr(), 50, out.as_mut_ptr()), OstStatus::Ok);
        assert_eq!(&out[3..6], &first[3..6]);
        assert_eq!(ost_tracker_update(tracker, ptr::null(), 0, out.as_mut_ptr()), OstStatus::Ok);
        assert_eq!(ost_tracker_update(tracker, ptr::null(), 3, out.as_mut_ptr()), OstStatus::NullPointer);
        assert_eq!(ost_tracker_update(ptr::null_mut(), pts.as_ptr(), 50, out.as_mut_ptr()), OstStatus::NullPointer);
        ost_tracker_free(tracker);
        ost_tracker_free(ptr::null_mut());

        let bad = CString::new("[model]\nfeat_dims = 3").unwrap();
        assert_eq!(ost_model_init(bad.as_ptr(), 0, &mut model), OstStatus::InvalidArgument);
        let missing = CString::new("/nonexistent/model.json").unwrap();
        assert_eq!(ost_model_load(missing.as_ptr(), &mut model), OstStatus::Io);
    }
}

#[test]
fn evaluate_examples() {
    let gts: Vec<f64> = (0..11).flat_map(|t| [t as f64, 0.0, 0.0, 0.5, 0.5, 0.5, 0.0]).collect();
    let mut shifted = gts.clone();
    for t in 1..11 {
        shifted[7 * t + 1] = 1.0;
    }
    let (mut s, mut p) = (0.0, 0.0);
    unsafe {
        assert_eq!(ost_evaluate(gts.as_ptr(), gts.as_ptr(), 11, &mut s, &mut p), OstStatus::Ok);
        assert_eq!((s, p), (100.0, 100.0));
        assert_eq!(ost_evaluate(shifted.as_ptr(), gts.as_ptr(), 11, &mut s, &mut p), OstStatus::Ok);
        assert_eq!(s, 0.0);
        assert!((p - 50.0).abs() <= 0.5);
        assert_eq!(ost_evaluate(ptr::null(), gts.as_ptr(), 11, &mut s, &mut p), OstStatus::NullPointer);
    }
}

#[test]
fn header_is_current_and_c_program_links() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(root.join("include/onestream.h")).unwrap();
    for name in ["ost_box_iou", "ost_model_load", "ost_tracker_update", "ost_evaluate", "OST_STATUS_PANIC"] {
        assert!(header.contains(name), "{name} missing from header");
    }
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libonestream_ffi.a");
    assert!(lib.is_file(), "static library not built at {}", lib.display());
    let exe = tempfile::tempdir().unwrap();
    let bin = exe.path().join("smoke");
    let status = Command::new("cc")
        .arg("-std=c11")
        .arg("-Wall")
        .arg("-Werror")
        .arg(root.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}
