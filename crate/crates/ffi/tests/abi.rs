use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use wsbart_ffi::*;

fn small_options() -> WsbFitOptions {
    WsbFitOptions {
        trees: 5,
        iterations: 60,
        burn_in: 10,
        seed: 3,
        ..wsb_fit_options_default()
    }
}

/// Three subjects with `y = 2x + t` observed at slightly shifted times.
unsafe fn build_dataset() -> *mut WsbDataset {
    let ds = wsb_dataset_new();
    for k in 0..3 {
        let id = CString::new(format!("s{k}")).unwrap();
        let t = [0.1, 0.4, 0.7, 0.9];
        let s: Vec<f64> = t.iter().map(|v| v - 0.02).collect();
        let x: Vec<f64> = s.iter().map(|v| (v * 7.0 + k as f64).sin()).collect();
        let y: Vec<f64> = x.iter().zip(&t).map(|(a, b)| 2.0 * a + b).collect();
        let status = wsb_dataset_add_subject(ds, id.as_ptr(), t.as_ptr(), y.as_ptr(), 4, s.as_ptr(), x.as_ptr(), 4, 1);
        assert_eq!(status, WsbStatus::Ok);
    }
    ds
}

fn last_error() -> String {
    let p = wsb_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn fit_predict_save_load() {
    unsafe {
        let ds = build_dataset();
        assert_eq!(wsb_dataset_len(ds), 3);
        let method = CString::new("wsb-st").unwrap();
        let mut model = ptr::null_mut();
        assert_eq!(wsb_fit(ds, method.as_ptr(), small_options(), &mut model), WsbStatus::Ok);
        assert_eq!(wsb_model_covariate_dim(model), 1);
        assert!(wsb_model_bandwidth(model) > 0.0);
        assert_eq!(wsb_model_lag(model), 0.0);

        let x = [0.1, -0.3];
        let t = [0.2, 0.6];
        let mut out = [0.0; 2];
        assert_eq!(
            wsb_model_predict(model, x.as_ptr(), t.as_ptr(), 2, out.as_mut_ptr()),
            WsbStatus::Ok
        );
        assert!(out.iter().all(|v| v.is_finite()));

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("m.wsb").to_str().unwrap()).unwrap();
        assert_eq!(wsb_model_save(model, path.as_ptr()), WsbStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(wsb_model_load(path.as_ptr(), &mut loaded), WsbStatus::Ok);
        let mut again = [0.0; 2];
        assert_eq!(
            wsb_model_predict(loaded, x.as_ptr(), t.as_ptr(), 2, again.as_mut_ptr()),
            WsbStatus::Ok
        );
        assert_eq!(out, again);

        wsb_model_free(loaded);
        wsb_model_free(model);
        wsb_dataset_free(ds);
    }
}

#[test]
fn hard_method_has_no_bandwidth() {
    unsafe {
        let ds = build_dataset();
        let method = CString::new("locf-b").unwrap();
        let mut model = ptr::null_mut();
        assert_eq!(wsb_fit(ds, method.as_ptr(), small_options(), &mut model), WsbStatus::Ok);
        assert!(wsb_model_bandwidth(model).is_nan());
        wsb_model_free(model);
        wsb_dataset_free(ds);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut model = ptr::null_mut();
        let method = CString::new("wsb-st").unwrap();
        assert_eq!(
            wsb_fit(ptr::null(), method.as_ptr(), small_options(), &mut model),
            WsbStatus::NullArgument
        );
        assert!(last_error().contains("dataset"));

        let ds = build_dataset();
        let bogus = CString::new("bart").unwrap();
        assert_eq!(
            wsb_fit(ds, bogus.as_ptr(), small_options(), &mut model),
            WsbStatus::Usage
        );
        assert!(last_error().contains("bart"));

        let empty = wsb_dataset_new();
        assert_eq!(
            wsb_fit(empty, method.as_ptr(), small_options(), &mut model),
            WsbStatus::Usage
        );
        assert!(model.is_null());

        let missing = CString::new("/nonexistent/data.csv").unwrap();
        let mut loaded = ptr::null_mut();
        assert_eq!(wsb_dataset_load_csv(missing.as_ptr(), &mut loaded), WsbStatus::Data);

        // Unsorted response times are a data error.
        let id = CString::new("bad").unwrap();
        let t = [0.5, 0.1];
        let v = [1.0, 2.0];
        let status = wsb_dataset_add_subject(ds, id.as_ptr(), t.as_ptr(), v.as_ptr(), 2, t.as_ptr(), v.as_ptr(), 2, 1);
        assert_ne!(status, WsbStatus::Ok);
        assert_eq!(wsb_dataset_len(ds), 3);

        let zero_dim =
            wsb_dataset_add_subject(ds, id.as_ptr(), t.as_ptr(), v.as_ptr(), 1, t.as_ptr(), v.as_ptr(), 1, 0);
        assert_eq!(zero_dim, WsbStatus::Usage);

        assert_eq!(wsb_model_covariate_dim(ptr::null()), 0);
        assert!(wsb_model_lag(ptr::null()).is_nan());
        wsb_model_free(ptr::null_mut());
        wsb_dataset_free(ptr::null_mut());
        wsb_dataset_free(empty);
        wsb_dataset_free(ds);
    }
}

#[test]
fn loads_long_format_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    std::fs::write(
        &path,
        "subject_id,kind,time,v1\na,response,0.5,1\na,covariate,0.4,2\nb,response,0.3,0\nb,covariate,0.35,1\n",
    )
    .unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(wsb_dataset_load_csv(c.as_ptr(), &mut ds), WsbStatus::Ok);
        assert_eq!(wsb_dataset_len(ds), 2);
        wsb_dataset_free(ds);
    }
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

/// Target profile directory holding the static library, found from the test
/// executable's location (`target/<profile>/deps/`).
fn profile_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

const C_PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "wsbart.h"

int main(void) {
    WsbDataset *ds = wsb_dataset_new();
    double t[4] = {0.1, 0.4, 0.7, 0.9};
    for (int k = 0; k < 3; k++) {
        double s[4], x[4], y[4];
        char id[8];
        snprintf(id, sizeof id, "s%d", k);
        for (int i = 0; i < 4; i++) {
            s[i] = t[i] - 0.02;
            x[i] = sin(7.0 * s[i] + k);
            y[i] = 2.0 * x[i] + t[i];
        }
        if (wsb_dataset_add_subject(ds, id, t, y, 4, s, x, 4, 1) != WSB_STATUS_OK) return 10;
    }
    WsbFitOptions opt = wsb_fit_options_default();
    opt.trees = 5;
    opt.iterations = 60;
    opt.burn_in = 10;
    WsbModel *model = NULL;
    if (wsb_fit(ds, "wsb-dt", opt, &model) != WSB_STATUS_OK) return 11;
    double qx[1] = {0.2}, qt[1] = {0.5}, out[1] = {NAN};
    if (wsb_model_predict(model, qx, qt, 1, out) != WSB_STATUS_OK) return 12;
    if (!isfinite(out[0])) return 13;
    if (wsb_fit(ds, "nope", opt, &model) != WSB_STATUS_USAGE) return 14;
    if (wsb_last_error() == NULL) return 15;
    wsb_model_free(model);
    wsb_dataset_free(ds);
    printf("ok\n");
    return 0;
}
"#;

#[test]
fn header_is_current_and_compiles_in_c() {
    let header = crate_dir().join("include/wsbart.h");
    let text = std::fs::read_to_string(&header).expect("build script writes the header");
    for name in [
        "wsb_fit",
        "wsb_model_predict",
        "wsb_last_error",
        "WSB_STATUS_NUMERIC",
        "typedef struct WsbModel",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping link check");
        return;
    };
    let lib = profile_dir().join("libwsbart_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping link check", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let exe = dir.path().join("main");
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C program failed to build");
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "C program exited with {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc)
            .arg("--version")
            .output()
            .is_ok_and(|o| o.status.success())
        {
            return Ok(cc.to_string());
        }
    }
    Err(())
}
