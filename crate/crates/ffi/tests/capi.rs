use std::ffi::{CStr, CString};
use std::ptr;

use evodpo_ffi::*;

fn last_error() -> String {
    let p = evodpo_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take(s: *mut std::ffi::c_char) -> String {
    let out = CStr::from_ptr(s).to_string_lossy().into_owned();
    evodpo_string_free(s);
    out
}

#[test]
fn gate_quadrants() {
    let cases = [
        (0.001, 0.001, 1),
        (0.0, 0.001, 0),
        (0.001, 0.003, 0),
        (0.0, 0.003, 0),
        (0.0007, 0.002, 1),
    ];
    for (ds, k, want) in cases {
        let mut acc = -1;
        let st = unsafe { evodpo_gate(ds, k, 0.0007, 0.002, &mut acc) };
        assert_eq!(st, EvodpoStatus::Ok);
        assert_eq!(acc, want, "({ds}, {k})");
    }
    let st = unsafe { evodpo_gate(0.0, 0.0, 0.0007, -1.0, &mut 0) };
    assert_eq!(st, EvodpoStatus::InvalidArgument);
    assert!(last_error().contains("delta_H"));
}

#[test]
fn null_outputs_are_reported() {
    let st = unsafe { evodpo_gate(0.0, 0.0, 0.0, 1.0, ptr::null_mut()) };
    assert_eq!(st, EvodpoStatus::NullPointer);
    assert!(last_error().contains("null"));
}

#[test]
fn gibbs_and_kl_round_trip() {
    let pi = [0.25; 4];
    let u = [0.3, -0.1, 0.0, 0.2];
    let mut p = [0.0; 4];
    assert_eq!(unsafe { evodpo_gibbs(pi.as_ptr(), u.as_ptr(), 4, 0.6, p.as_mut_ptr()) }, EvodpoStatus::Ok);
    let z: f64 = u.iter().map(|x| (x / 0.6f64).exp()).sum();
    for i in 0..4 {
        assert!((p[i] - (u[i] / 0.6f64).exp() / z).abs() < 1e-15);
    }
    let mut d = f64::NAN;
    assert_eq!(unsafe { evodpo_kl(p.as_ptr(), pi.as_ptr(), 4, &mut d) }, EvodpoStatus::Ok);
    let want: f64 = p.iter().map(|a| a * (a / 0.25).ln()).sum();
    assert!((d - want).abs() < 1e-15);
    assert_eq!(unsafe { evodpo_kl(p.as_ptr(), p.as_ptr(), 4, &mut d) }, EvodpoStatus::Ok);
    assert_eq!(d, 0.0);
    let st = unsafe { evodpo_gibbs(pi.as_ptr(), u.as_ptr(), 4, 0.0, p.as_mut_ptr()) };
    assert_eq!(st, EvodpoStatus::InvalidArgument);
}

#[test]
fn config_errors_carry_line_numbers() {
    let text = CString::new("H = 100\nbogus = 1\n").unwrap();
    let mut cfg = ptr::null_mut();
    let st = unsafe { evodpo_config_parse(text.as_ptr(), &mut cfg) };
    assert_eq!(st, EvodpoStatus::Config);
    assert!(cfg.is_null());
    assert!(last_error().contains("line 2"));
}

#[test]
fn run_handle_is_deterministic() {
    let text = CString::new("mode = evodpo\nH = 200\n").unwrap();
    let mut cfg = ptr::null_mut();
    unsafe {
        assert_eq!(evodpo_config_parse(text.as_ptr(), &mut cfg), EvodpoStatus::Ok);
        let mut bodies = Vec::new();
        for _ in 0..2 {
            let mut run = ptr::null_mut();
            assert_eq!(evodpo_run(cfg, 7, &mut run), EvodpoStatus::Ok);
            let mut m = f64::NAN;
            assert_eq!(evodpo_run_final_metric(run, &mut m), EvodpoStatus::Ok);
            assert!(m.is_finite() && m >= 0.0);
            let mut s = ptr::null_mut();
            assert_eq!(evodpo_run_ledger_csv(run, &mut s), EvodpoStatus::Ok);
            let ledger = take(s);
            assert_eq!(ledger.lines().count(), 201);
            assert!(ledger.starts_with("t,phase,bias,error,regret_step,regret_cum,oracle_arm,switch\n"));
            assert_eq!(evodpo_run_phases_csv(run, &mut s), EvodpoStatus::Ok);
            let phases = take(s);
            assert!(phases.starts_with("k,n_pairs,delta_S,kl_hat,accepted,beta,eps_s,delta_H\n"));
            bodies.push((m.to_bits(), ledger, phases));
            evodpo_run_free(run);
        }
        assert_eq!(bodies[0], bodies[1]);
        evodpo_config_free(cfg);
    }
}

#[test]
fn verify_json_lists_every_check() {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { evodpo_verify_json(3, &mut s) }, EvodpoStatus::Ok);
    let body = unsafe { take(s) };
    for id in ["kl-bound", "switching-budget", "local-variation", "self-normalized", "estimation-error"] {
        assert!(body.contains(&format!("\"lemma\": \"{id}\"")), "{id}");
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/evodpo.h")).unwrap();
    for sym in [
        "evodpo_last_error",
        "evodpo_string_free",
        "evodpo_gate",
        "evodpo_gibbs",
        "evodpo_kl",
        "evodpo_config_parse",
        "evodpo_config_free",
        "evodpo_run",
        "evodpo_run_free",
        "evodpo_verify_json",
        "typedef struct EvodpoRun EvodpoRun",
        "EVODPO_STATUS_OK = 0",
    ] {
        assert!(header.contains(sym), "{sym}");
    }
}

#[test]
fn free_functions_accept_null() {
    unsafe {
        evodpo_string_free(ptr::null_mut());
        evodpo_config_free(ptr::null_mut());
        evodpo_run_free(ptr::null_mut());
    }
}

const C_SMOKE: &str = r#"
#include <stdio.h>
#include <string.h>
#include "evodpo.h"

int main(void) {
    int32_t acc = -1;
    if (evodpo_gate(0.001, 0.001, 0.0007, 0.002, &acc) != EVODPO_STATUS_OK || acc != 1) return 1;
    if (evodpo_gate(0.001, 0.003, 0.0007, 0.002, &acc) != EVODPO_STATUS_OK || acc != 0) return 2;
    double pi[3] = {0.2, 0.3, 0.5}, u[3] = {0.0, 0.0, 0.0}, out[3];
    if (evodpo_gibbs(pi, u, 3, 0.6, out) != EVODPO_STATUS_OK) return 3;
    for (int i = 0; i < 3; i++) if (out[i] < pi[i] - 1e-12 || out[i] > pi[i] + 1e-12) return 4;
    EvodpoConfig *cfg = NULL;
    if (evodpo_config_parse("K = 1\n", &cfg) != EVODPO_STATUS_CONFIG) return 5;
    if (strstr(evodpo_last_error(), "line 1") == NULL) return 6;
    printf("ok\n");
    return 0;
}
"#;

/// Compiles and runs a C program against the generated header and the
/// static library.
#[test]
fn c_program_links_against_static_library() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libevodpo_ffi.a");
    assert!(lib.exists(), "missing {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let bin = dir.path().join("smoke");
    std::fs::write(&src, C_SMOKE).unwrap();
    let status = std::process::Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success());
    let out = std::process::Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout), "ok\n");
}
