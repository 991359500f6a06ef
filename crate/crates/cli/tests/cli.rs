use std::path::Path;
use std::process::{Command, Output};

use qaenet::data::{write_idx, Dataset};
use qaenet::experiment::read_metrics;
use qaenet::nn::Tensor;

fn qaenet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qaenet"))
        .args(args)
        .env_remove("QAE_DATA_ROOT")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// A few dozen 28×28 images whose label is the row holding a bright bar.
fn write_tiny_mnist(dir: &Path) {
    for (stem, n) in [("train", 40), ("t10k", 20)] {
        let mut pixels = vec![0.0; n * 28 * 28];
        let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
        for (i, &label) in labels.iter().enumerate() {
            let row = 2 + 2 * label;
            for c in 4..24 {
                pixels[i * 784 + row * 28 + c] = 1.0;
            }
        }
        let ds = Dataset {
            images: Tensor::new(vec![n, 1, 28, 28], pixels).unwrap(),
            labels,
            name: "tiny".into(),
            split: stem.into(),
        };
        write_idx(
            &ds,
            &dir.join(format!("{stem}-images-idx3-ubyte")),
            &dir.join(format!("{stem}-labels-idx1-ubyte")),
        )
        .unwrap();
    }
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(qaenet(&["--help"]).status.code(), Some(0));
    assert_eq!(qaenet(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(qaenet(&[]).status.code(), Some(1));
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[model]\nqubits = 3\n").unwrap();
    let out = qaenet(&["inspect", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("qubits"));
    // No data directory and no dataset root.
    assert_eq!(qaenet(&["train", "--epochs", "1"]).status.code(), Some(1));
}

#[test]
fn missing_data_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing-here");
    let out = qaenet(&[
        "train",
        "--data-dir",
        missing.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = qaenet(&[
        "train",
        "--data-dir",
        empty.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_catches_faults() {
    let out = qaenet(&["gradcheck", "--draws", "6"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    for class in ["attn.vqc.theta", "encoding angles", "conv2d", "fc1.weight"] {
        assert!(text.contains(class), "{class} missing from\n{text}");
    }
    assert!(!text.contains("FAIL"));
    let out = qaenet(&["gradcheck", "--draws", "3", "--inject-fault", "sign-flip"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn inspect_dumps_circuit_and_counts() {
    let out = qaenet(&["inspect"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let gates: Vec<&str> = text
        .lines()
        .filter(|l| {
            ["H ", "RZ ", "RY ", "CNOT "]
                .iter()
                .any(|p| l.starts_with(p))
        })
        .collect();
    assert_eq!(gates.len(), 4 + 12 + 12 + 3);
    assert!(text.contains("total"));
    let ring = stdout(&qaenet(&["inspect-circuit", "--entanglement", "ring"]));
    assert!(ring.lines().any(|l| l == "CNOT 4 1"));
}

#[test]
fn train_eval_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    write_tiny_mnist(&data);
    let run = |out: &Path| {
        let o = qaenet(&[
            "train",
            "--data-dir",
            data.to_str().unwrap(),
            "--epochs",
            "2",
            "--batch-size",
            "8",
            "--seed",
            "5",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run(&a);
    run(&b);

    let records = read_metrics(&a.join("metrics.jsonl")).unwrap();
    assert_eq!(records.len(), 4);
    assert!(records
        .iter()
        .all(|r| r.seed == 5 && r.wall_clock_seconds.is_none()));
    for file in ["metrics.jsonl", "model.ckpt", "summary.txt"] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }

    let ckpt = a.join("model.ckpt");
    let eval = |extra: &[&str]| {
        let mut args = vec![
            "eval",
            "--data-dir",
            data.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        qaenet(&args)
    };
    let e1 = eval(&["--out", a.to_str().unwrap()]);
    assert_eq!(e1.status.code(), Some(0));
    assert_eq!(stdout(&e1), stdout(&eval(&["--out", a.to_str().unwrap()])));
    let evals = read_metrics(&a.join("eval.jsonl")).unwrap();
    assert_eq!(evals.len(), 2);
    assert_eq!(evals[0].loss, records[3].loss);
    assert_eq!(evals[0].accuracy, records[3].accuracy);

    let wrong = eval(&["--attention", "se", "--out", a.to_str().unwrap()]);
    assert_eq!(wrong.status.code(), Some(1));

    let csv = stdout(&qaenet(&[
        "export-csv",
        a.join("metrics.jsonl").to_str().unwrap(),
    ]));
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("epoch,split,loss,accuracy"));
}
