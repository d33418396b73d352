use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::process::{Child, Command, Stdio};

struct Server {
    child: Child,
    base: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn start(data: &std::path::Path) -> Server {
    let mut child = Command::new(env!("CARGO_BIN_EXE_celltrace"))
        .args(["serve", "--port", "0", "--data-dir"])
        .arg(data)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let base = line
        .trim()
        .strip_prefix("listening on ")
        .expect("address line")
        .to_string();
    Server { child, base }
}

#[test]
fn fresh_service_has_no_areas() {
    let tmp = tempfile::tempdir().unwrap();
    let server = start(tmp.path());
    let body: serde_json::Value = reqwest::blocking::get(format!("{}/v1/areas", server.base))
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(body, serde_json::json!([]));
}

#[test]
fn records_survive_restart() {
    let tmp = tempfile::tempdir().unwrap();
    let client = reqwest::blocking::Client::new();
    {
        let server = start(tmp.path());
        let r = client
            .post(format!("{}/v1/tests", server.base))
            .json(&serde_json::json!({"address": "geo:23.81,90.41", "numbers": ["+8801711000001"]}))
            .send()
            .unwrap();
        assert_eq!(r.status().as_u16(), 201);
        let r = client
            .post(format!("{}/v1/tests/1/positive", server.base))
            .send()
            .unwrap();
        assert_eq!(r.status().as_u16(), 200);
    }
    let server = start(tmp.path());
    let body: serde_json::Value = client
        .get(format!("{}/v1/areas", server.base))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(body[0]["positive_count"], 1);
}

#[test]
fn port_in_use_exits_1() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_celltrace"))
        .args(["serve", "--port", &port, "--data-dir"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&port));
}

#[test]
fn bad_rules_file_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let rules = tmp.path().join("rules.json");
    std::fs::write(&rules, r#"{"rules":[{"name":"x","kind":"min_yes","min":0}]}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_celltrace"))
        .args(["serve", "--port", "0", "--rules"])
        .arg(&rules)
        .arg("--data-dir")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rules.json"));
}
