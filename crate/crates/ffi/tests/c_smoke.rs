//! Compiles a C program against the generated header and the static library.

use std::path::PathBuf;
use std::process::Command;

#[test]
fn c_program_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/<test binary>
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libdomo_lab_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());

    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let built = Command::new(&cc)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap_or_else(|e| panic!("running {cc}: {e}"));
    assert!(built.status.success(), "{}", String::from_utf8_lossy(&built.stderr));

    let run = Command::new(&exe).output().unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert_eq!(stdout.trim(), format!("ok {}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/domo_lab.h")).unwrap();
    for name in [
        "domo_version",
        "domo_last_error",
        "domo_mdp_random",
        "domo_mdp_new",
        "domo_mdp_from_json",
        "domo_mdp_shape",
        "domo_mdp_free",
        "domo_policy_new",
        "domo_policy_uniform",
        "domo_policy_free",
        "domo_exact_value",
        "domo_apply_operator",
        "domo_contraction_rate",
        "domo_run_experiment",
        "typedef struct DomoMdp DomoMdp",
        "DOMO_TRACE_KIND_PENG_LAMBDA = 3",
        "DOMO_STATUS_PANIC = 8",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
