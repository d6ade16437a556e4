#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

pub fn compact_config() -> PathBuf {
    workspace_root().join("configs/compact.json")
}

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn afpnkit<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_afpnkit"))
        .args(args)
        .env_remove("AFPNKIT_THREADS")
        .output()
        .expect("spawn afpnkit")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

/// Panics with every violation when `instance` does not match the named schema.
pub fn assert_schema(schema: &str, instance: &Value) {
    let schema_path = workspace_root().join("schemas").join(schema);
    let schema = read_json(&schema_path);
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = validator.iter_errors(instance).map(|e| format!("{e} at {}", e.instance_path())).collect();
    assert!(errors.is_empty(), "{} violations:\n{}", schema_path.display(), errors.join("\n"));
}

/// `(relative path, bytes)` of every file under `dir`, sorted.
pub fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[derive(serde::Serialize)]
struct Image {
    image_id: usize,
    path: String,
    width: u32,
    height: u32,
}

#[derive(serde::Serialize)]
struct Gt {
    image_id: usize,
    bbox: [f64; 4],
    class: &'static str,
}

#[derive(serde::Serialize)]
struct Annotations {
    categories: [&'static str; 2],
    images: Vec<Image>,
    ground_truths: Vec<Gt>,
}

/// Writes `n` seeded RGB PNGs of `w x h` under `dir/images` and an annotation
/// set with two boxes per image at `dir/annotations.json`, laid out the way
/// the CLI writes annotation files.
pub fn write_dataset(dir: &Path, n: usize, w: u32, h: u32) -> PathBuf {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    std::fs::create_dir_all(dir.join("images")).unwrap();
    let mut images = Vec::new();
    let mut ground_truths = Vec::new();
    for i in 0..n {
        let img = image::RgbImage::from_fn(w, h, |_, _| image::Rgb([rng.random(), rng.random(), rng.random()]));
        let path = format!("images/{i:02}.png");
        img.save(dir.join(&path)).unwrap();
        images.push(Image { image_id: i, path, width: w, height: h });
        ground_truths.push(Gt { image_id: i, bbox: [2.5, 3.0, 12.25, 15.5], class: "stop" });
        ground_truths.push(Gt { image_id: i, bbox: [w as f64 - 14.0, 1.0, w as f64 - 2.0, 9.0], class: "yield" });
    }
    let set = Annotations { categories: ["stop", "yield"], images, ground_truths };
    let path = dir.join("annotations.json");
    let mut bytes = serde_json::to_vec_pretty(&set).unwrap();
    bytes.push(b'\n');
    std::fs::write(&path, bytes).unwrap();
    path
}

/// A policy with every slot set to one op.
pub fn uniform_policy(kind: &str, prob_level: u8, mag_level: u8) -> Value {
    let op = serde_json::json!({"kind": kind, "prob_level": prob_level, "mag_level": mag_level});
    serde_json::json!([[op, op], [op, op], [op, op], [op, op], [op, op]])
}

pub fn write_json(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_vec_pretty(v).unwrap()).unwrap();
}
