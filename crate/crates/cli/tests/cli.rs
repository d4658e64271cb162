use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const STATS_KEYS: [&str; 9] = [
    "energy",
    "lower_bound",
    "gap",
    "status",
    "cuts_added",
    "separation_rounds",
    "nodes_explored",
    "time_seconds",
    "unlabeled_fraction",
];

/// 20x14 colour image: red left block, green top right, blue bottom right,
/// with a deterministic speckle.
fn write_inputs(dir: &Path) -> (PathBuf, PathBuf) {
    let (w, h) = (20usize, 14usize);
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            let mut px: [u8; 3] = if x < 7 {
                [200, 40, 40]
            } else if y < 7 {
                [40, 190, 60]
            } else {
                [50, 60, 210]
            };
            if (x * 7 + y * 13) % 11 == 0 {
                px = px.map(|c| c.saturating_add(40));
            }
            bytes.extend_from_slice(&px);
        }
    }
    let img = dir.join("img.ppm");
    fs::write(&img, bytes).unwrap();
    let scr = dir.join("scribbles.json");
    fs::write(
        &scr,
        r#"{"labels":[
            {"id":1,"pixels":[[2,2],[3,2],[4,2],[5,2],[6,2],[7,2],[8,2],[9,2]]},
            {"id":2,"background":true,"pixels":[[2,11],[2,12],[2,13],[2,14],[2,15]]},
            {"id":3,"pixels":[[11,11],[11,12],[11,13],[11,14],[11,15]]}]}"#,
    )
    .unwrap();
    (img, scr)
}

fn mrfseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrfseg"))
        .args(args)
        .output()
        .expect("failed to launch mrfseg")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn solve(dir: &Path, model: &str, extra: &[&str]) -> (Output, PathBuf, PathBuf) {
    let (img, scr) = write_inputs(dir);
    let labels = dir.join(format!("{model}.pgm"));
    let stats = dir.join(format!("{model}.json"));
    let mut args = vec![
        "solve",
        "--image",
        path_str(&img),
        "--scribbles",
        path_str(&scr),
        "--model",
        model,
        "--superpixels",
        "40",
        "--out-labels",
        path_str(&labels),
        "--out-stats",
        path_str(&stats),
    ];
    args.extend_from_slice(extra);
    let out = mrfseg(&args);
    (out, labels, stats)
}

fn read_stats(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Header and sample bytes of a binary 8-bit PGM.
fn read_pgm(path: &Path) -> (usize, usize, Vec<u8>) {
    let bytes = fs::read(path).unwrap();
    let text = String::from_utf8_lossy(&bytes[..bytes.len().min(32)]).to_string();
    let mut fields = text.split_ascii_whitespace();
    assert_eq!(fields.next(), Some("P5"));
    let w: usize = fields.next().unwrap().parse().unwrap();
    let h: usize = fields.next().unwrap().parse().unwrap();
    assert_eq!(fields.next(), Some("255"));
    (w, h, bytes[bytes.len() - w * h..].to_vec())
}

#[test]
fn solve_writes_stats_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.csv");
    let (out, labels, stats) = solve(dir.path(), "ilp-pc", &["--log", path_str(&log)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let s = read_stats(&stats);
    for key in STATS_KEYS {
        assert!(s.get(key).is_some(), "missing {key}");
    }
    assert_eq!(s["status"], "optimal");
    assert_eq!(s["unlabeled_fraction"], 0.0);
    let energy = s["energy"].as_f64().unwrap();
    let bound = s["lower_bound"].as_f64().unwrap();
    assert!(bound <= energy + 1e-9);
    assert!(s["gap"].as_f64().unwrap() <= 1e-4);
    let (w, h, px) = read_pgm(&labels);
    assert_eq!((w, h), (20, 14));
    // every pixel labeled, scribbled pixels keep their label
    assert!(px.iter().all(|&v| (1..=3).contains(&v)));
    assert_eq!(px[2 * w + 2], 1);
    assert_eq!(px[2 * w + 14], 2);
    assert_eq!(px[11 * w + 14], 3);
    assert!(fs::read_to_string(&log)
        .unwrap()
        .starts_with("time_seconds,"));
}

#[test]
fn every_model_solves() {
    let dir = tempfile::tempdir().unwrap();
    let mut energies = std::collections::BTreeMap::new();
    for model in ["ilp-pc", "ilp-pcb", "ilp-p", "lp-pc", "l0h"] {
        let (out, _, stats) = solve(dir.path(), model, &[]);
        assert!(
            out.status.success(),
            "{model}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let s = read_stats(&stats);
        assert_eq!(s["model"], model);
        energies.insert(model, s["energy"].as_f64().unwrap());
        if model == "l0h" {
            assert_eq!(s["status"], "heuristic");
            assert!(s["lower_bound"].is_null() && s["gap"].is_null());
        }
    }
    let pc = energies["ilp-pc"];
    assert!(energies["ilp-p"] <= pc + 1e-9);
    assert!(energies["ilp-pcb"] <= pc + 1e-9);
    assert!(energies["lp-pc"] <= pc + 1e-9);
    assert!(energies["l0h"] >= pc - 1e-9);
}

#[test]
fn warm_start_does_not_change_the_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let (a, _, sa) = solve(dir.path(), "ilp-pc", &["--gap-tol", "0"]);
    let warm = read_stats(&sa)["energy"].as_f64().unwrap();
    let cold_dir = tempfile::tempdir().unwrap();
    let (b, _, sb) = solve(
        cold_dir.path(),
        "ilp-pc",
        &["--gap-tol", "0", "--no-warm-start"],
    );
    assert!(a.status.success() && b.status.success());
    let cold = read_stats(&sb)["energy"].as_f64().unwrap();
    assert!((warm - cold).abs() <= 1e-9, "{warm} vs {cold}");
}

#[test]
fn compare_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (img, scr) = write_inputs(dir.path());
    let run = |name: &str| {
        let csv = dir.path().join(name);
        let stats_dir = dir.path().join(format!("{name}.stats"));
        let out = mrfseg(&[
            "compare",
            "--image",
            path_str(&img),
            "--scribbles",
            path_str(&scr),
            "--superpixels",
            "40",
            "--models",
            "ilp-pc,ilp-pcb,ilp-p,lp-pc,l0h",
            "--out-csv",
            path_str(&csv),
            "--stats-dir",
            path_str(&stats_dir),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(stats_dir.join("ilp-pc.json").exists());
        let text = fs::read_to_string(csv).unwrap();
        let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
        let t = header.iter().position(|&c| c == "time_seconds").unwrap();
        text.lines()
            .map(|line| {
                let mut cells: Vec<&str> = line.split(',').collect();
                cells.remove(t);
                cells.join(",")
            })
            .collect::<Vec<_>>()
    };
    let first = run("a.csv");
    let second = run("b.csv");
    assert_eq!(first.len(), 6);
    assert!(first[1..].iter().all(|row| row.ends_with(",ok")));
    assert_eq!(first, second);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let (out, _, _) = solve(dir.path(), "ilp-pc", &["--lambda", "1.5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    let missing = dir.path().join("nope.ppm");
    let out = mrfseg(&[
        "solve",
        "--image",
        path_str(&missing),
        "--scribbles",
        path_str(&missing),
        "--model",
        "l0h",
        "--out-labels",
        "x.pgm",
        "--out-stats",
        "x.json",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.ppm"));

    let out = mrfseg(&["solve", "--model", "ilp-x"]);
    assert!(!out.status.success());
}
