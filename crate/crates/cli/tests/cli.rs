//! The `cnndiff` binary end to end.

mod common;

use std::io::{Read, Write};
use std::net::TcpStream;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use cnndiff_cli::commands::{layer_diff, LayerDiff};
use common::{fixture, foreign_checkpoint};

fn cnndiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cnndiff"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn diff_and_report() {
    let fx = fixture();
    let (a, b) = (fx.path("a.cndf"), fx.path("b.cndf"));
    let (a, b) = (a.to_str().unwrap(), b.to_str().unwrap());

    // JSON re-parsed equals the in-process values exactly
    let out = cnndiff(&[
        "diff", "--a", a, "--b", b, "--layer", "conv2", "--bins", "9", "--levels", "3",
    ]);
    assert!(out.status.success());
    let parsed: LayerDiff = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(parsed, layer_diff(&fx.a, &fx.b, "conv2", 9, 3).unwrap());

    // self-diff is zero everywhere
    let out = cnndiff(&["diff", "--a", a, "--b", a, "--layer", "conv1"]);
    let parsed: LayerDiff = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(parsed.summary.kernel_distance, 0.0);
    assert_eq!(parsed.summary.bias_distance, 0.0);
    assert!(parsed
        .pixel_map
        .unwrap()
        .cells
        .iter()
        .flatten()
        .all(|&c| c == 0.0));
    assert_eq!(parsed.histogram.counts[0][0], 216);

    let out = cnndiff(&[
        "diff", "--a", a, "--b", b, "--layer", "fc1", "--format", "csv",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    let tables: Vec<&str> = text.split("\n\n").collect();
    assert_eq!(tables.len(), 2, "dense layers have no pixel map");
    assert!(tables[0].starts_with("layer,weight_shape,kernel_distance"));
    assert!(tables[0].contains("fc1,4x1024,"));
    assert_eq!(tables[1].lines().count(), 1 + 16 * 4);

    let out = cnndiff(&["report", "--a", a, "--b", b, "--format", "csv"]);
    let text = stdout(&out);
    let layers: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(layers, ["conv1", "conv2", "fc1"]);
    let out = cnndiff(&["report", "--a", a, "--b", b]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["layers"].as_array().unwrap().len(), 3);
    assert_eq!(v["epochs"]["b"], 3);
}

#[test]
fn exit_codes() {
    let fx = fixture();
    let a = fx.path("a.cndf");
    let a = a.to_str().unwrap();

    let out = cnndiff(&["diff", "--a", a, "--b", a, "--layer", "conv7"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("conv7"));
    assert!(out.stdout.is_empty());

    let foreign = foreign_checkpoint(fx.dir.path());
    let out = cnndiff(&["report", "--a", a, "--b", foreign.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("incomparable"));

    let out = cnndiff(&[
        "diff",
        "--a",
        a,
        "--b",
        "/nonexistent.cndf",
        "--layer",
        "conv1",
    ]);
    assert_eq!(out.status.code(), Some(1));

    let bad = fx.path("bad.cndf");
    std::fs::write(&bad, b"CNDX garbage").unwrap();
    let out = cnndiff(&["report", "--a", a, "--b", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("format_error"));
}

#[test]
fn train_writes_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = cnndiff(&[
        "train",
        "--epochs",
        "2",
        "--checkpoint-at",
        "1,2",
        "--samples",
        "32",
        "--seed",
        "5",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in ["arch.json", "epoch_1.cndf", "epoch_2.cndf", "trainlog.csv"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    assert!(stdout(&out).lines().next().unwrap().starts_with("epoch"));

    let out = cnndiff(&[
        "train",
        "--epochs",
        "2",
        "--checkpoint-at",
        "3",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

fn http_get(port: u16, path: &str) -> Option<String> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    write!(
        s,
        "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n"
    )
    .ok()?;
    let mut buf = String::new();
    s.read_to_string(&mut buf).ok()?;
    Some(buf)
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

#[test]
fn serve_honors_port_env_and_refuses_mismatch() {
    let fx = fixture();
    let port = free_port();
    let arch = fx.path("arch.json");
    let (a, b, images) = (fx.path("a.cndf"), fx.path("b.cndf"), fx.images());
    let args = |b: &str| {
        vec![
            "serve".to_string(),
            "--arch".into(),
            arch.to_str().unwrap().into(),
            "--a".into(),
            a.to_str().unwrap().into(),
            "--b".into(),
            b.into(),
            "--images".into(),
            images.to_str().unwrap().into(),
            "--port".into(),
            "1".into(),
        ]
    };
    let mut child = Command::new(env!("CARGO_BIN_EXE_cnndiff"))
        .args(args(b.to_str().unwrap()))
        .env("CNNDIFF_PORT", port.to_string())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let reply = loop {
        if let Some(r) = http_get(port, "/api/layers") {
            break r;
        }
        assert!(Instant::now() < deadline, "server did not come up");
        std::thread::sleep(Duration::from_millis(100));
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.contains("\"conv1\""));

    let foreign = foreign_checkpoint(fx.dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_cnndiff"))
        .args(args(foreign.to_str().unwrap()))
        .env("CNNDIFF_PORT", free_port().to_string())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("incomparable"));
}
