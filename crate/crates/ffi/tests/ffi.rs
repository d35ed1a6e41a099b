use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use stressbench::interchange::write_problems;
use stressbench::model::{Level, Payload, Problem, SolutionProgram, TestCase};
use stressbench_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(sb_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn metrics_through_the_c_abi() {
    let mut v = f64::NAN;
    assert_eq!(sb_pass_at_k(3, 2, 1, &mut v), SbStatus::Ok);
    assert!((v - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(sb_efficient_at_k(3, 1, 1, &mut v), SbStatus::Ok);
    assert!((v - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(sb_speedup(1000.0, 500.0, &mut v), SbStatus::Ok);
    assert_eq!(v, 2.0);

    let samples: Vec<f64> = (1..=12).map(f64::from).collect();
    assert_eq!(unsafe { sb_trimmed_mean(samples.as_ptr(), samples.len(), &mut v) }, SbStatus::Ok);
    assert_eq!(v, 6.5);
    assert_eq!(unsafe { sb_rsd([10.0, 10.0, 10.0].as_ptr(), 3, &mut v) }, SbStatus::Ok);
    assert_eq!(v, 0.0);
    let ys: Vec<f64> = samples.iter().map(|x| 3.0 * x + 1.0).collect();
    assert_eq!(unsafe { sb_pearson(samples.as_ptr(), ys.as_ptr(), 12, &mut v) }, SbStatus::Ok);
    assert!((v - 1.0).abs() < 1e-12);
}

#[test]
fn errors_are_coded_and_described() {
    let mut v = 0.0;
    assert_eq!(sb_pass_at_k(3, 2, 4, &mut v), SbStatus::OutOfRange);
    assert!(last_error().contains("k=4"), "{}", last_error());
    assert_eq!(sb_pass_at_k(3, 4, 1, &mut v), SbStatus::OutOfRange);
    assert_eq!(sb_speedup(0.0, 1.0, &mut v), SbStatus::Domain);
    assert_eq!(sb_pass_at_k(3, 1, 1, ptr::null_mut()), SbStatus::NullPointer);
    assert_eq!(unsafe { sb_trimmed_mean([1.0, 2.0].as_ptr(), 2, &mut v) }, SbStatus::Domain);
    assert_eq!(unsafe { sb_rsd(ptr::null(), 3, &mut v) }, SbStatus::NullPointer);
    assert_eq!(unsafe { sb_pearson([1.0, 1.0].as_ptr(), [1.0, 2.0].as_ptr(), 2, &mut v) }, SbStatus::Domain);
}

fn fixture(dir: &Path) -> PathBuf {
    let p = Problem {
        id: "sum-1".into(),
        level: Level::File,
        description: String::new(),
        entry_point: None,
        ground_truths: vec![SolutionProgram::ground_truth("gt", "print(int(input()) + 1)\n")],
        correctness_tests: vec![TestCase::new("c0", Payload::Stdin("1\n".into())).with_expected("2")],
        stressful_tests: vec![
            TestCase::new("s0", Payload::Stdin("5\n".into())).with_expected("6"),
            TestCase::new("s1", Payload::Stdin("7\n".into())).with_expected("8"),
        ],
    };
    let path = dir.join("bench.json");
    write_problems(&path, &[p]).unwrap();
    path
}

#[test]
fn benchmark_handle_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(fixture(dir.path()).to_str().unwrap()).unwrap();
    let mut bench = ptr::null_mut();
    assert_eq!(unsafe { sb_benchmark_load(path.as_ptr(), &mut bench) }, SbStatus::Ok);
    assert_eq!(unsafe { sb_benchmark_len(bench) }, 1);
    let mut id = ptr::null();
    assert_eq!(unsafe { sb_benchmark_problem_id(bench, 0, &mut id) }, SbStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(id) }.to_str().unwrap(), "sum-1");
    let mut n = 0usize;
    assert_eq!(unsafe { sb_benchmark_stressful_count(bench, 0, &mut n) }, SbStatus::Ok);
    assert_eq!(n, 2);
    assert_eq!(unsafe { sb_benchmark_problem_id(bench, 1, &mut id) }, SbStatus::OutOfRange);
    unsafe { sb_benchmark_free(bench) };
    unsafe { sb_benchmark_free(ptr::null_mut()) };
    assert_eq!(unsafe { sb_benchmark_len(ptr::null()) }, 0);

    let missing = CString::new(dir.path().join("nope.json").to_str().unwrap()).unwrap();
    let mut other = ptr::null_mut();
    assert_eq!(unsafe { sb_benchmark_load(missing.as_ptr(), &mut other) }, SbStatus::Io);
    assert!(other.is_null());
    assert!(last_error().contains("nope.json"));
    let garbage = dir.path().join("bad.json");
    std::fs::write(&garbage, "{not json").unwrap();
    let garbage = CString::new(garbage.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { sb_benchmark_load(garbage.as_ptr(), &mut other) }, SbStatus::Parse);
}

#[test]
fn header_compiles_and_links_from_c() {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = crate_dir.join("include").join("stressbench.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["sb_pass_at_k", "sb_benchmark_load", "sb_benchmark_free", "SB_STATUS_OUT_OF_RANGE", "typedef struct SbBenchmark SbBenchmark"] {
        assert!(text.contains(name), "header lacks {name}");
    }
    // The archive built alongside this test sits next to it in deps/.
    let exe = std::env::current_exe().unwrap();
    let lib = exe.parent().unwrap().join("libstressbench_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let bench = fixture(dir.path());
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "stressbench.h"
int main(int argc, char **argv) {
    double v = 0;
    if (sb_pass_at_k(10, 3, 1, &v) != SB_STATUS_OK) return 1;
    if (v < 0.2999 || v > 0.3001) return 2;
    if (sb_pass_at_k(1, 1, 2, &v) != SB_STATUS_OUT_OF_RANGE || sb_last_error() == NULL) return 3;
    SbBenchmark *b = NULL;
    if (sb_benchmark_load(argv[1], &b) != SB_STATUS_OK) return 4;
    const char *id = NULL;
    if (sb_benchmark_problem_id(b, 0, &id) != SB_STATUS_OK) return 5;
    printf("%zu %s\n", sb_benchmark_len(b), id);
    sb_benchmark_free(b);
    return argc == 2 ? 0 : 6;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let cc = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .expect("C compiler available");
    assert!(cc.status.success(), "{}", String::from_utf8_lossy(&cc.stderr));
    let run = Command::new(&bin).arg(&bench).output().unwrap();
    assert_eq!(run.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&run.stdout), "1 sum-1\n");
}
