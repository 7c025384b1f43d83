//! End-to-end runs of the `linlay` binary: building layouts, planning and
//! checking conversions, inspecting properties, and propagating through a
//! graph. Each test drives the real executable in a scratch directory.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use linlay::constructors::{blocked, BlockedSpec};
use tempfile::TempDir;

fn linlay(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_linlay"))
        .args(args)
        .current_dir(dir)
        .env_remove("LINLAY_BANKS")
        .env_remove("LINLAY_BANK_BYTES")
        .output()
        .expect("failed to launch the binary")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

/// Two layouts over one 64-element dimension that differ in their warp
/// direction, forcing the planner through shared memory.
const SMEM_A: &str = "layout A in(reg:2,thread:3,warp:1) out(dim0:6)\n\
                      reg: (1) (2)\n\
                      thread: (4) (8) (16)\n\
                      warp: (32)\n";
const SMEM_B: &str = "layout B in(reg:2,thread:3,warp:1) out(dim0:6)\n\
                      reg: (1) (2)\n\
                      thread: (4) (8) (32)\n\
                      warp: (16)\n";

/// The two-round shuffle pair: stride-4 register pairs to adjacent pairs.
const SHUF_A: &str =
    "layout A in(reg:1,thread:2,warp:0) out(dim0:3)\nreg: (4)\nthread: (1) (2)\n";
const SHUF_B: &str =
    "layout B in(reg:1,thread:2,warp:0) out(dim0:3)\nreg: (1)\nthread: (4) (2)\n";

#[test]
fn build_blocked_prints_the_library_layout() {
    let tmp = TempDir::new().unwrap();
    let out = stdout(&linlay(
        tmp.path(),
        &[
            "build", "blocked", "--shape", "16,16", "--reg", "2,2", "--threads", "4,8",
            "--warps", "2,1", "--name", "tile",
        ],
    ));
    let expected = blocked(&BlockedSpec {
        shape: vec![4, 4],
        size_per_thread: vec![1, 1],
        threads_per_warp: vec![2, 3],
        warps_per_cta: vec![1, 0],
        order: vec![1, 0],
    })
    .unwrap();
    assert_eq!(out, expected.to_text("tile"));
}

#[test]
fn build_rejects_non_power_of_two_counts() {
    let tmp = TempDir::new().unwrap();
    let out = linlay(
        tmp.path(),
        &["build", "blocked", "--shape", "15,16", "--threads", "4,8"],
    );
    assert!(!out.status.success());
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("power of two"),
        "unexpected stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn convert_then_check_round_trips_through_a_plan_file() {
    let tmp = TempDir::new().unwrap();
    stdout(&linlay(
        tmp.path(),
        &[
            "build", "blocked", "--shape", "32", "--reg", "2", "--threads", "8", "--warps",
            "2", "--name", "a", "-o", "a.txt",
        ],
    ));
    stdout(&linlay(
        tmp.path(),
        &[
            "build", "blocked", "--shape", "32", "--reg", "4", "--threads", "8", "--name",
            "b", "-o", "b.txt",
        ],
    ));
    let summary = stdout(&linlay(
        tmp.path(),
        &["convert", "a.txt", "b.txt", "--elem-bits", "16", "--emit", "plan.json"],
    ));
    assert!(summary.contains("kind:"), "summary: {summary}");
    assert!(summary.contains("plan written to plan.json"));

    let check = stdout(&linlay(tmp.path(), &["check", "plan.json"]));
    assert!(check.contains("result: OK"), "check output: {check}");
}

#[test]
fn check_fails_on_a_corrupted_plan() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "a.txt", SHUF_A);
    write(tmp.path(), "b.txt", SHUF_B);
    let summary = stdout(&linlay(
        tmp.path(),
        &["convert", "a.txt", "b.txt", "--elem-bits", "32", "--emit", "plan.json"],
    ));
    assert!(summary.contains("kind: warp_shuffle"), "summary: {summary}");

    // Cross two source lanes in the second shuffle round: the plan still
    // parses, but the replay routes the wrong elements.
    let text = std::fs::read_to_string(tmp.path().join("plan.json")).unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    let lanes = doc["shuffle"]["rounds"][1]["lanes"].as_array_mut().unwrap();
    let swapped = lanes[0][1].clone();
    lanes[0][1] = lanes[1][1].clone();
    lanes[1][1] = swapped;
    assert_ne!(lanes[0][1], lanes[1][1], "corruption must change the routing");
    write(tmp.path(), "bad.json", &serde_json::to_string(&doc).unwrap());

    let out = linlay(tmp.path(), &["check", "bad.json"]);
    assert!(!out.status.success(), "corrupted plan passed the check");
    let printed = format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(
        printed.contains("MISMATCH") && printed.contains("does not verify"),
        "unexpected diagnostics: {printed}"
    );
}

#[test]
fn bank_geometry_env_vars_match_the_flags() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "a.txt", SMEM_A);
    write(tmp.path(), "b.txt", SMEM_B);
    let flags = stdout(&linlay(
        tmp.path(),
        &[
            "convert", "a.txt", "b.txt", "--elem-bits", "32", "--banks", "16",
            "--bank-bytes", "8",
        ],
    ));
    let env = {
        let out = Command::new(env!("CARGO_BIN_EXE_linlay"))
            .args(["convert", "a.txt", "b.txt", "--elem-bits", "32"])
            .current_dir(tmp.path())
            .env("LINLAY_BANKS", "16")
            .env("LINLAY_BANK_BYTES", "8")
            .output()
            .unwrap();
        stdout(&out)
    };
    assert_eq!(env, flags, "environment fallback disagrees with explicit flags");

    let bad = Command::new(env!("CARGO_BIN_EXE_linlay"))
        .args(["convert", "a.txt", "b.txt", "--elem-bits", "32"])
        .current_dir(tmp.path())
        .env("LINLAY_BANKS", "plenty")
        .output()
        .unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("LINLAY_BANKS"));
}

#[test]
fn props_reports_the_layout_classification() {
    let tmp = TempDir::new().unwrap();
    stdout(&linlay(
        tmp.path(),
        &[
            "build", "mma", "--operand", "lhs", "--bits", "16", "--warps", "1,1", "-o",
            "mma.txt",
        ],
    ));
    let props = stdout(&linlay(tmp.path(), &["props", "mma.txt"]));
    assert!(props.contains("layout: mma"), "props: {props}");
    assert!(props.contains("distributed: yes"));
    assert!(props.contains("memory: no"));
    assert!(props.contains("contiguous_log2:"));
}

#[test]
fn propagate_assigns_a_layout_to_every_value() {
    let tmp = TempDir::new().unwrap();
    write(
        tmp.path(),
        "graph.txt",
        "%0 = input() shape=[16,16]\n\
         %1 = trans(%0) perm=[1,0] shape=[16,16]\n\
         %2 = add(%0, %1) shape=[16,16]\n\
         anchor %2 acc\n",
    );
    stdout(&linlay(
        tmp.path(),
        &[
            "build", "blocked", "--shape", "16,16", "--reg", "2,2", "--threads", "4,8",
            "--warps", "2,1", "--name", "acc", "-o", "acc.txt",
        ],
    ));
    let out = stdout(&linlay(
        tmp.path(),
        &["propagate", "graph.txt", "--layout", "acc=acc.txt"],
    ));
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["version"], 1);
    let values = report["values"].as_array().unwrap();
    assert_eq!(values.len(), 3);
    for v in values {
        assert!(
            v["layout"].as_str().unwrap().starts_with("layout"),
            "value without a layout: {v}"
        );
    }
    assert_eq!(values[2]["anchor"], "acc");
}
