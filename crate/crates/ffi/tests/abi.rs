use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use lfns_ffi::*;

fn load(name: &str) -> *mut LfnsModelHandle {
    let name = CString::new(name).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { lfns_model_load(name.as_ptr(), &mut model) }, LfnsStatus::Ok);
    model
}

fn last_error() -> String {
    let p = lfns_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(lfns_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn stationary_round_trip() {
    let model = load("auv-paper");
    let (mut n, mut m1, mut m2) = (0, 0, 0);
    assert_eq!(unsafe { lfns_model_dims(model, &mut n, &mut m1, &mut m2) }, LfnsStatus::Ok);
    assert_eq!((n, m1, m2), (6, 3, 3));

    let mut sol = ptr::null_mut();
    assert_eq!(unsafe { lfns_stationary_solve(model, &mut sol) }, LfnsStatus::Ok);
    let mut h = vec![0.0; 6 * 12];
    assert_eq!(unsafe { lfns_stationary_gain(sol, h.as_mut_ptr(), h.len()) }, LfnsStatus::Ok);
    assert!((h[0] + 0.50).abs() < 0.01);
    let mut small = [0.0; 3];
    assert_eq!(
        unsafe { lfns_stationary_gain(sol, small.as_mut_ptr(), small.len()) },
        LfnsStatus::BufferTooSmall
    );
    assert!(last_error().contains("72"));

    let mut verdict = LfnsVerdict::default();
    assert_eq!(unsafe { lfns_stationary_verdict(sol, model, &mut verdict) }, LfnsStatus::Ok);
    assert_eq!(verdict.closed_loop_stable, 1);
    assert!(verdict.spectral_radius < 1.0);

    let mut cost = 0.0;
    assert_eq!(unsafe { lfns_stationary_cost(sol, model, &mut cost) }, LfnsStatus::Ok);
    let mut mc = LfnsMonteCarlo::default();
    assert_eq!(unsafe { lfns_stationary_monte_carlo(sol, model, 150, 400, 7, &mut mc) }, LfnsStatus::Ok);
    assert!((mc.mean_cost - cost).abs() < 4.0 * mc.standard_error);

    unsafe {
        lfns_stationary_free(sol);
        lfns_model_free(model);
    }
}

#[test]
fn finite_gain_at_first_step() {
    let model = load("scalar-demo");
    let mut sol = ptr::null_mut();
    assert_eq!(unsafe { lfns_finite_solve(model, 1, 0, &mut sol) }, LfnsStatus::Ok);
    let mut k = [0.0; 4];
    assert_eq!(unsafe { lfns_finite_gain(sol, 0, k.as_mut_ptr(), 4) }, LfnsStatus::Ok);
    assert!((k[0] - 0.6).abs() < 1e-12);
    assert_eq!(unsafe { lfns_finite_gain(sol, 2, k.as_mut_ptr(), 4) }, LfnsStatus::InvalidArgument);
    let mut cost = 0.0;
    assert_eq!(unsafe { lfns_finite_cost(sol, model, &mut cost) }, LfnsStatus::Ok);
    assert!(cost.is_finite());
    unsafe {
        lfns_finite_free(sol);
        lfns_model_free(model);
    }
}

#[test]
fn error_codes() {
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { lfns_model_load(ptr::null(), &mut model) }, LfnsStatus::NullPointer);
    let missing = CString::new("/nonexistent/model.json").unwrap();
    assert_eq!(unsafe { lfns_model_load(missing.as_ptr(), &mut model) }, LfnsStatus::Io);
    let bad = CString::new("{not json").unwrap();
    assert_eq!(unsafe { lfns_model_from_json(bad.as_ptr(), &mut model) }, LfnsStatus::Parse);
    let invalid = CString::new(
        r#"{"n":1,"m1":1,"m2":1,"a00":[[1]],"a10":[[0]],"a11":[[1]],"b00":[[1]],"b10":[[0]],"b11":[[1]],
            "q":[[1,0],[0,1]],"r":[[-1,0],[0,1]]}"#,
    )
    .unwrap();
    assert_eq!(unsafe { lfns_model_from_json(invalid.as_ptr(), &mut model) }, LfnsStatus::InvalidModel);
    assert!(last_error().contains("not admissible"));
    assert!(model.is_null());
    // missing discount factor
    let model = load("scalar-demo");
    let no_gamma = CString::new(
        r#"{"n":1,"m1":1,"m2":1,"a00":[[1]],"a10":[[0]],"a11":[[1]],"b00":[[1]],"b10":[[0]],"b11":[[1]],
            "q":[[1,0],[0,1]],"r":[[1,0],[0,1]]}"#,
    )
    .unwrap();
    let mut plain = ptr::null_mut();
    assert_eq!(unsafe { lfns_model_from_json(no_gamma.as_ptr(), &mut plain) }, LfnsStatus::Ok);
    let mut sol = ptr::null_mut();
    assert_eq!(unsafe { lfns_stationary_solve(plain, &mut sol) }, LfnsStatus::InvalidArgument);
    assert_eq!(unsafe { lfns_stationary_solve(ptr::null(), &mut sol) }, LfnsStatus::NullPointer);
    unsafe {
        lfns_model_free(plain);
        lfns_model_free(model);
        lfns_model_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/lfns.h")).unwrap();
    for name in [
        "lfns_model_load",
        "lfns_model_free",
        "lfns_stationary_solve",
        "lfns_stationary_gain",
        "lfns_finite_solve",
        "lfns_last_error_message",
        "LFNS_STATUS_BUFFER_TOO_SMALL",
        "typedef struct LfnsModelHandle LfnsModelHandle",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

/// Builds the C smoke program against the shared library when a C compiler
/// is on the path.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/abi-* -> target/<profile>
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join(format!("{}lfns_ffi{}", std::env::consts::DLL_PREFIX, std::env::consts::DLL_SUFFIX));
    if !lib.exists() {
        eprintln!("shared library not built at {}; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new(&cc)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg("-L")
        .arg(&profile_dir)
        .arg("-llfns_ffi")
        .arg("-o")
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).env("LD_LIBRARY_PATH", &profile_dir).output().unwrap();
    assert!(out.status.success(), "smoke exited with {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    let fields: Vec<f64> = text.split_whitespace().map(|f| f.parse().unwrap()).collect();
    assert!((fields[0] + 0.50).abs() < 0.01);
    assert_eq!(fields[3], 1.0);
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Ok(cc.to_string());
        }
    }
    Err(())
}
