use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use dre_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(dre_last_error()).to_string_lossy().into_owned() }
}

#[test]
fn sample_query_free() {
    let model = CString::new("NE-SW").unwrap();
    let mut env = ptr::null_mut();
    unsafe {
        assert_eq!(dre_env_sample(model.as_ptr(), 0.9, 2, 20, 3, &mut env), DreStatus::Ok);
        let mut n = 0;
        assert_eq!(dre_env_len(env, &mut n), DreStatus::Ok);
        assert_eq!(n, 41 * 41);
        let o = [0i64, 0];
        let mut a = 0u16;
        assert_eq!(dre_env_arrows(env, o.as_ptr(), &mut a), DreStatus::Ok);
        assert!(a == 0b0011 || a == 0b1100, "{a:#b}");
        let (mut size, mut touches) = (0u64, 0i32);
        assert_eq!(dre_cluster(env, o.as_ptr(), DreClusterKind::Forward as i32, &mut size, &mut touches), DreStatus::Ok);
        assert!(size >= 1);
        assert_eq!(dre_cluster(env, o.as_ptr(), 7, &mut size, &mut touches), DreStatus::InvalidArgument);
        let mut shape = DreShape::Indeterminate;
        assert_eq!(dre_classify(env, 0, 0, &mut shape), DreStatus::Ok);
        let far = [100i64, 0];
        assert_eq!(dre_env_arrows(env, far.as_ptr(), &mut a), DreStatus::OutsideWindow);
        assert!(last_error().contains("outside"));
        dre_env_free(env);
    }
}

#[test]
fn errors_map_to_codes() {
    let mut env = ptr::null_mut();
    let bad = CString::new("XX-YY").unwrap();
    let good = CString::new("NE-0").unwrap();
    unsafe {
        assert_eq!(dre_env_sample(bad.as_ptr(), 0.5, 2, 5, 1, &mut env), DreStatus::UnknownModel);
        assert!(env.is_null());
        assert_eq!(dre_env_sample(good.as_ptr(), 1.5, 2, 5, 1, &mut env), DreStatus::InvalidArgument);
        assert_eq!(dre_env_sample(ptr::null(), 0.5, 2, 5, 1, &mut env), DreStatus::NullPointer);
        assert_eq!(dre_env_len(ptr::null(), ptr::null_mut()), DreStatus::NullPointer);
        dre_env_free(ptr::null_mut());
    }
}

#[test]
fn snapshot_round_trip_and_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("env.txt").to_str().unwrap()).unwrap();
    let model = CString::new("NE-0").unwrap();
    unsafe {
        let mut a = ptr::null_mut();
        assert_eq!(dre_env_sample(model.as_ptr(), 0.7, 2, 6, 9, &mut a), DreStatus::Ok);
        assert_eq!(dre_env_save(a, path.as_ptr()), DreStatus::Ok);
        let mut b = ptr::null_mut();
        assert_eq!(dre_env_load(path.as_ptr(), &mut b), DreStatus::Ok);
        for x in -6..=6 {
            for y in -6..=6 {
                let c = [x, y];
                let (mut u, mut v) = (0u16, 0u16);
                dre_env_arrows(a, c.as_ptr(), &mut u);
                dre_env_arrows(b, c.as_ptr(), &mut v);
                assert_eq!(u, v);
            }
        }
        dre_env_free(a);
        dre_env_free(b);
        let (mut e, mut se) = (0.0, 0.0);
        let st = dre_estimate(model.as_ptr(), 0.7, 2, 10, 200, 1, DreStatistic::ReachC as i32, &mut e, &mut se);
        assert_eq!(st, DreStatus::Ok);
        assert!((0.0..=1.0).contains(&e) && se >= 0.0);
        assert_eq!(dre_estimate(model.as_ptr(), 0.7, 2, 10, 200, 1, 99, &mut e, &mut se), DreStatus::InvalidArgument);
    }
    assert!((dre_cubic_root(0) - 0.4534).abs() < 1e-4);
    assert!(unsafe { CStr::from_ptr(dre_version()) }.to_str().unwrap().starts_with("0."));
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/dre.h");
    let src = format!("#include \"{header}\"\nint main(void) {{ DreEnv *e = 0; dre_env_free(e); return DRE_STATUS_OK; }}\n");
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("t.c");
    std::fs::write(&file, src).unwrap();
    let Ok(out) = Command::new("cc").args(["-std=c11", "-Wall", "-Werror", "-fsyntax-only"]).arg(&file).output() else {
        eprintln!("no C compiler; skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
