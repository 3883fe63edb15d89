//! The C entry points called from Rust, checked against the library.

use std::ffi::{c_char, CString};
use std::ptr;

use domo_lab::mdp::{exact_value, gen_random_mdp};
use domo_lab::operators::{apply_operator, contraction_rate};
use domo_lab::{TabularPolicy, TraceSpec, ValueFunction};
use domo_lab_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { domo_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|c| *c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

struct Handles {
    mdp: *mut DomoMdp,
    pi: *mut DomoPolicy,
    mu: *mut DomoPolicy,
}

impl Drop for Handles {
    fn drop(&mut self) {
        unsafe {
            domo_mdp_free(self.mdp);
            domo_policy_free(self.pi);
            domo_policy_free(self.mu);
        }
    }
}

const PI: [f64; 12] = [0.7, 0.2, 0.1, 0.1, 0.1, 0.8, 0.3, 0.3, 0.4, 1.0, 0.0, 0.0];

fn handles() -> Handles {
    let mut h = Handles { mdp: ptr::null_mut(), pi: ptr::null_mut(), mu: ptr::null_mut() };
    unsafe {
        assert_eq!(domo_mdp_random(4, 3, 0.5, 0.9, 7, &mut h.mdp), DomoStatus::Ok);
        assert_eq!(domo_policy_new(4, 3, PI.as_ptr(), &mut h.pi), DomoStatus::Ok);
        assert_eq!(domo_policy_uniform(4, 3, &mut h.mu), DomoStatus::Ok);
    }
    h
}

#[test]
fn operator_and_rate_match_library() {
    let h = handles();
    let mdp = gen_random_mdp(4, 3, 0.5, 0.9, 7).unwrap();
    let pi = TabularPolicy::new(4, 3, PI.to_vec()).unwrap();
    let mu = TabularPolicy::uniform(4, 3);
    let v = [1.0, -2.0, 0.5, 3.0];
    let cases = [
        (DomoTraceKind::VTrace, 1.0, TraceSpec::vtrace(1.0)),
        (DomoTraceKind::TreeBackup, 0.0, TraceSpec::tree_backup()),
        (DomoTraceKind::QLambda, 0.4, TraceSpec::q_lambda(0.4)),
        (DomoTraceKind::PengLambda, 0.6, TraceSpec::peng_lambda(0.6)),
    ];
    for (kind, param, spec) in cases {
        let mut out = [0.0; 4];
        let status = unsafe { domo_apply_operator(h.mdp, h.pi, h.mu, kind as u32, param, v.as_ptr(), 4, out.as_mut_ptr(), 4) };
        assert_eq!(status, DomoStatus::Ok, "{kind:?}: {}", last_error());
        let expected = apply_operator(&mdp, &pi, &mu, &spec, &ValueFunction(v.to_vec())).unwrap();
        assert_eq!(out.as_slice(), expected.as_slice());
    }
    let mut eta = f64::NAN;
    let status = unsafe { domo_contraction_rate(h.mdp, h.pi, h.mu, DomoTraceKind::VTrace as u32, 0.5, &mut eta) };
    assert_eq!(status, DomoStatus::Ok);
    assert_eq!(eta, contraction_rate(&mdp, &pi, &mu, &TraceSpec::vtrace(0.5)).unwrap().eta);

    let mut value = [0.0; 6];
    assert_eq!(unsafe { domo_exact_value(h.mdp, h.pi, value.as_mut_ptr(), 6) }, DomoStatus::Ok);
    assert_eq!(&value[..4], exact_value(&mdp, &pi).unwrap().as_slice());
}

#[test]
fn shape_and_json_round_trip() {
    let h = handles();
    let (mut n, mut na, mut gamma) = (0usize, 0usize, 0.0);
    assert_eq!(unsafe { domo_mdp_shape(h.mdp, &mut n, &mut na, &mut gamma) }, DomoStatus::Ok);
    assert_eq!((n, na, gamma), (4, 3, 0.9));
    assert_eq!(unsafe { domo_mdp_shape(h.mdp, ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) }, DomoStatus::Ok);

    let json = CString::new(gen_random_mdp(4, 3, 0.5, 0.9, 7).unwrap().to_json().unwrap()).unwrap();
    let mut parsed = ptr::null_mut();
    assert_eq!(unsafe { domo_mdp_from_json(json.as_ptr(), &mut parsed) }, DomoStatus::Ok);
    let v = [0.0; 4];
    let (mut a, mut b) = ([0.0; 4], [0.0; 4]);
    unsafe {
        domo_apply_operator(h.mdp, h.pi, h.mu, 0, 1.0, v.as_ptr(), 4, a.as_mut_ptr(), 4);
        domo_apply_operator(parsed, h.pi, h.mu, 0, 1.0, v.as_ptr(), 4, b.as_mut_ptr(), 4);
        domo_mdp_free(parsed);
    }
    assert_eq!(a, b);
}

#[test]
fn errors_carry_codes_and_messages() {
    let h = handles();
    let mut out: *mut DomoMdp = ptr::null_mut();
    assert_eq!(unsafe { domo_mdp_random(4, 3, 0.5, 1.0, 0, &mut out) }, DomoStatus::InvalidArgument);
    assert!(out.is_null());
    assert!(last_error().contains("gamma"), "{}", last_error());

    assert_eq!(unsafe { domo_mdp_random(4, 3, 0.5, 0.9, 0, ptr::null_mut()) }, DomoStatus::NullPointer);

    let bad_rows = [0.5; 12];
    let mut p = ptr::null_mut();
    assert_ne!(unsafe { domo_policy_new(4, 3, bad_rows.as_ptr(), &mut p) }, DomoStatus::Ok);
    assert!(p.is_null());

    let v = [0.0; 4];
    let mut small = [0.0; 2];
    let status = unsafe { domo_apply_operator(h.mdp, h.pi, h.mu, 0, 1.0, v.as_ptr(), 4, small.as_mut_ptr(), 2) };
    assert_eq!(status, DomoStatus::BufferTooSmall);
    let status = unsafe { domo_apply_operator(h.mdp, h.pi, h.mu, 9, 1.0, v.as_ptr(), 4, small.as_mut_ptr(), 2) };
    assert_eq!(status, DomoStatus::InvalidArgument);
    assert!(last_error().contains("trace kind"));
    let status = unsafe { domo_apply_operator(h.mdp, h.pi, h.mu, 0, -1.0, v.as_ptr(), 4, small.as_mut_ptr(), 2) };
    assert_eq!(status, DomoStatus::InvalidArgument);
    let mut eta = 0.0;
    let status = unsafe { domo_contraction_rate(h.mdp, h.pi, h.mu, DomoTraceKind::PengLambda as u32, 0.5, &mut eta) };
    assert_ne!(status, DomoStatus::Ok);

    // A success clears the message; truncation still reports the full length.
    unsafe { domo_mdp_random(4, 3, 0.5, 2.0, 0, &mut out) };
    let full = unsafe { domo_last_error(ptr::null_mut(), 0) };
    let mut tiny = [1 as c_char; 4];
    assert_eq!(unsafe { domo_last_error(tiny.as_mut_ptr(), 4) }, full);
    assert_eq!(tiny[3], 0);
    assert_eq!(unsafe { domo_policy_uniform(2, 2, &mut p) }, DomoStatus::Ok);
    unsafe { domo_policy_free(p) };
    assert_eq!(last_error(), "");
}

#[test]
fn experiment_writes_csv_and_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("out.csv").to_str().unwrap()).unwrap();
    let cfg = CString::new("n_mdps = 1\niterations = 2\n[mdp]\nn_states = 5\nn_actions = 2\n").unwrap();
    let mut failed = usize::MAX;
    let status = unsafe { domo_run_experiment(cfg.as_ptr(), 2, path.as_ptr(), &mut failed) };
    assert_eq!(status, DomoStatus::Ok, "{}", last_error());
    assert_eq!(failed, 0);
    let text = std::fs::read_to_string(dir.path().join("out.csv")).unwrap();
    assert!(text.starts_with("experiment,"), "{text}");

    let bad = CString::new("[mdp]\ngamma = 1.5\n").unwrap();
    let status = unsafe { domo_run_experiment(bad.as_ptr(), 1, path.as_ptr(), ptr::null_mut()) };
    assert_eq!(status, DomoStatus::Config);
    assert_eq!(unsafe { domo_run_experiment(cfg.as_ptr(), 0, path.as_ptr(), ptr::null_mut()) }, DomoStatus::InvalidArgument);
}

#[test]
fn version_matches_package() {
    let v = unsafe { std::ffi::CStr::from_ptr(domo_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
