use std::process::Command;

fn opsrf(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_opsrf")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn value(text: &str, key: &str) -> f64 {
    let line = text.lines().find(|l| l.starts_with(key)).unwrap();
    line[key.len()..].trim().parse().unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(opsrf(&["--help"]).0, 0);
    assert_eq!(opsrf(&["simulate", "--bogus"]).0, 2);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "0.5 0\n0 3\n").unwrap();
    let (code, _, err) = opsrf(&["polar", "--matrix", bad.to_str().unwrap(), "--point", "0.3,0.4"]);
    assert_eq!(code, 2, "{err}");
    let missing = dir.path().join("nope.csv");
    assert_ne!(opsrf(&["estimate", "boxdim", "--input", missing.to_str().unwrap()]).0, 0);
}

#[test]
fn polar_is_homogeneous_and_accepts_block_files() {
    let dir = tempfile::tempdir().unwrap();
    let plain = dir.path().join("E.txt");
    std::fs::write(&plain, "2\n2 0\n0 3\n").unwrap();
    let (code, out, err) = opsrf(&["polar", "--matrix", plain.to_str().unwrap(), "--point", "1,0"]);
    assert_eq!(code, 0, "{err}");
    let t1 = value(&out, "tau");
    let (_, out4, _) = opsrf(&["polar", "--matrix", plain.to_str().unwrap(), "--point", "4,0"]);
    // (4, 0) = 2^E (1, 0) for E = diag(2, 3)
    assert!((value(&out4, "tau") / t1 - 2.0).abs() < 1e-9);

    std::fs::write(dir.path().join("P.txt"), "2\n1 0\n0 1\n").unwrap();
    let blocks = dir.path().join("blocks.txt");
    std::fs::write(&blocks, "real 2 1\nreal 3 1\nP P.txt\n").unwrap();
    let (code, same, err) = opsrf(&["polar", "--matrix", blocks.to_str().unwrap(), "--point", "1,0"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(value(&same, "tau"), t1);
}

#[test]
fn selftest_passes() {
    let (code, out, err) = opsrf(&["selftest"]);
    assert_eq!(code, 0, "{out}{err}");
    assert!(!out.contains("FAIL"));
}
