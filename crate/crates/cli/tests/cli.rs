use std::path::Path;
use std::process::{Command, Output};

use splatter_core::splatter::SplatterImage;
use splatter_core::train::initial_splatter;

fn splatter(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splatter"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn make_scene(dir: &Path, name: &str) -> String {
    let path = dir.join(name);
    let p = path.to_str().unwrap();
    let o = splatter(&["make-dataset", "--seed", "3", "--size", "16x16", "--gaussians", "2", "--views", "4", "--out", p]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    p.to_string()
}

#[test]
fn make_dataset_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = make_scene(dir.path(), "a.json");
    let b = make_scene(dir.path(), "b.json");
    let strip = |s: String| s.replace("a_view", "X").replace("b_view", "X");
    assert_eq!(
        strip(std::fs::read_to_string(&a).unwrap()),
        strip(std::fs::read_to_string(&b).unwrap())
    );
    for k in 0..4 {
        let fa = std::fs::read(dir.path().join(format!("a_view{k:02}.imgf32"))).unwrap();
        let fb = std::fs::read(dir.path().join(format!("b_view{k:02}.imgf32"))).unwrap();
        assert_eq!(fa, fb);
    }
}

#[test]
fn fit_with_zero_steps_writes_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let scene = make_scene(dir.path(), "s.json");
    let out = dir.path().join("init.splt");
    let o = splatter(&["fit", "--scene", &scene, "--steps", "0", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let expected = initial_splatter(16, 16, 12, (0.8, 3.2)).unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), expected.to_bytes());
    assert_eq!(SplatterImage::from_bytes(&std::fs::read(&out).unwrap()).unwrap(), expected);
}

#[test]
fn fit_eval_and_render() {
    let dir = tempfile::tempdir().unwrap();
    let scene = make_scene(dir.path(), "s.json");
    let pred = dir.path().join("fit.splt");
    let pred = pred.to_str().unwrap();
    let run = || splatter(&["fit", "--scene", &scene, "--steps", "5", "--out", pred]);
    assert!(run().status.success());
    let first = std::fs::read(pred).unwrap();
    assert!(run().status.success());
    assert_eq!(std::fs::read(pred).unwrap(), first);

    let o = splatter(&["eval", "--scene", &scene, "--pred", pred]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("view")).count(), 4);
    assert!(text.contains("view03 held-out: psnr"));
    assert!(text.contains("mean: psnr"));
    assert!(text.contains("held-out mean: psnr"));

    let out = dir.path().join("renders");
    let o = splatter(&["render", "--scene", &scene, "--pred", pred, "--f64", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(out.join("view00.png").exists());
    assert!(out.join("view03.imgf32").exists());
}

#[test]
fn train_then_eval_network() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.json");
    let data = data.to_str().unwrap();
    let o = splatter(&[
        "make-dataset", "--seed", "1", "--size", "12x12", "--gaussians", "2", "--views", "3", "--scenes", "2", "--out", data,
    ]);
    assert!(o.status.success());
    let net = dir.path().join("n.spnt");
    let net = net.to_str().unwrap();
    let o = splatter(&["train", "--scene", data, "--steps", "1", "--out", net]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(&std::fs::read(net).unwrap()[..4], b"SPNT");
    let scene = dir.path().join("d_000.json");
    let o = splatter(&["eval", "--scene", scene.to_str().unwrap(), "--net", net]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("view")).count(), 2);
}

#[test]
fn gradcheck_passes() {
    let o = splatter(&["gradcheck", "--seed", "7"]);
    assert!(o.status.success(), "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let err: f64 = text
        .split("max relative error ")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(err <= 1e-3);
}

#[test]
fn exit_codes() {
    assert_eq!(splatter(&["gradcheck", "--bogus"]).status.code(), Some(2));
    assert_eq!(splatter(&["eval", "--scene", "/nonexistent/s.json", "--pred", "x.splt"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.json");
    let o = splatter(&["make-dataset", "--views", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(splatter(&["make-dataset", "--size", "4", "--out", "x"]).status.code(), Some(2));
}
