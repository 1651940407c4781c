//! Compiles a C program against the generated header and the static library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "layerforge.h"

int main(void) {
    LfProfile *p = NULL;
    if (lf_profile_new(3.0, 20.0, 2000, &p) != LF_STATUS_OK) return 1;
    double w0 = 0.0;
    if (lf_profile_w(p, 0.0, &w0) != LF_STATUS_OK) return 2;
    lf_profile_free(p);
    if (fabs(w0 - sqrt(2.0)) > 1e-12) return 3;
    LfExpr *e = NULL;
    if (lf_expr_parse("1 + exp(sin(y2)", &e) != LF_STATUS_PARSE) return 4;
    char msg[128];
    if (lf_last_error_message(msg, sizeof msg) == 0) return 5;
    size_t j = 0;
    if (lf_gap_check(0.05, 3.0 / (M_PI * M_PI), 0.1, &j) != LF_STATUS_OK || j != 11) return 6;
    printf("ok\n");
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // tests/<exe> lives in target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links() {
    let lib = target_dir().join("liblayerforge_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let exe = dir.path().join("main");
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let out = Command::new("cc")
        .arg("-std=c11")
        .arg("-D_DEFAULT_SOURCE")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout), "ok\n");
}
