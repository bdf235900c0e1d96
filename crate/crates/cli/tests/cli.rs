use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn emi(out: &Path, args: &[&str]) -> Output {
    let config = repo().join("data/sample/run.toml");
    Command::new(env!("CARGO_BIN_EXE_emi"))
        .args(["-q", "-c", config.to_str().unwrap(), "-o", out.to_str().unwrap()])
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Server(std::process::Child, String);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn mockserve() -> Server {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let rules = repo().join("data/mock_rules.toml");
    let child = Command::new(env!("CARGO_BIN_EXE_emi"))
        .args(["-q", "mockserve", "--rules", rules.to_str().unwrap(), "--addr", &addr])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let t = Instant::now();
    while TcpStream::connect(&addr).is_err() {
        assert!(t.elapsed() < Duration::from_secs(10), "mockserve did not start");
        std::thread::sleep(Duration::from_millis(20));
    }
    Server(child, format!("http://{addr}"))
}

#[test]
fn stage_without_upstream_names_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let o = emi(dir.path(), &["fuse"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("run `rate` first"), "{}", stderr(&o));
}

#[test]
fn bad_override_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = emi(dir.path(), &["--set", "preprocess.ratio_threshold=1.5", "ingest"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("ratio threshold"), "{}", stderr(&o));
}

#[test]
fn stages_one_by_one_match_run_all_and_resume_is_guarded() {
    let server = mockserve();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let common = ["--limit", "80", "--endpoint-url", server.1.as_str(), "--set", "analyze.bootstrap_iters=200"];
    for stage in ["ingest", "preprocess", "rate", "embed", "fuse", "panel", "analyze", "validate", "plot"] {
        let o = emi(a.path(), &[&common[..], &[stage]].concat());
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    let o = emi(b.path(), &[&common[..], &["run-all"]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    for rel in ["panel/panel.csv", "analyze/report.json", "validate/report.json", "plot/scatter_emi_ddi.svg"] {
        assert_eq!(std::fs::read(a.path().join(rel)).unwrap(), std::fs::read(b.path().join(rel)).unwrap(), "{rel}");
    }
    let segments = std::fs::read_to_string(a.path().join("preprocess/segments.jsonl")).unwrap().lines().count();
    assert_eq!(segments, 80);

    // A changed fusion setting invalidates everything from `fuse` on.
    let changed = [&common[..], &["--set", "fuse.z_scope=global", "panel"]].concat();
    let o = emi(a.path(), &changed);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--force"), "{}", stderr(&o));
    let forced = [&common[..], &["--set", "fuse.z_scope=global", "--force", "panel"]].concat();
    assert!(emi(a.path(), &forced).status.success());

    // Edited upstream output is detected.
    let panel = a.path().join("panel/panel.csv");
    let mut text = std::fs::read_to_string(&panel).unwrap();
    text.push('\n');
    std::fs::write(&panel, text).unwrap();
    let o = emi(a.path(), &[&common[..], &["--set", "fuse.z_scope=global", "analyze"]].concat());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("changed after the stage ran"), "{}", stderr(&o));
}
