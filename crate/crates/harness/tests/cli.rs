//! The `gres` binary: subcommands, artifacts and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gres(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gres"))
        .args(args)
        .output()
        .expect("failed to launch gres")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn generate(dir: &Path, seed: u64, train: usize, val: usize) {
    let out = gres(&[
        "generate",
        "--out",
        path(dir),
        "--seed",
        &seed.to_string(),
        "--train",
        &train.to_string(),
        "--val",
        &val.to_string(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn generate_writes_the_documented_layout() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), 2, 10, 5);
    for split in ["train", "val"] {
        let manifest = fs::read_to_string(dir.path().join(split).join("manifest.tsv")).unwrap();
        let rows: Vec<&str> = manifest.lines().collect();
        assert_eq!(rows.len(), if split == "train" { 10 } else { 5 });
        for row in rows {
            let fields: Vec<&str> = row.splitn(4, '\t').collect();
            assert_eq!(fields.len(), 4, "{row}");
            assert!(fields[0].ends_with(".ppm") && fields[1].ends_with(".pgm"));
            assert!(fields[2] == "0" || fields[2] == "1");
            assert!(!fields[3].is_empty());
            assert!(fs::read(dir.path().join(split).join(fields[0]))
                .unwrap()
                .starts_with(b"P6"));
            assert!(fs::read(dir.path().join(split).join(fields[1]))
                .unwrap()
                .starts_with(b"P5"));
        }
    }
}

#[test]
fn train_eval_and_ablate_produce_reports() {
    let data = tempfile::tempdir().unwrap();
    generate(data.path(), 3, 12, 6);
    let run = tempfile::tempdir().unwrap();
    let cfg = run.path().join("run.cfg");
    fs::write(&cfg, "# quick run\nepochs = 1\nchannels = 16\n").unwrap();
    let out_dir = run.path().join("full");
    let out = gres(&[
        "train",
        "--data",
        path(data.path()),
        "--out",
        path(&out_dir),
        "--config",
        path(&cfg),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("epoch 1 "));

    let report = run.path().join("report.txt");
    let rows = run.path().join("rows.tsv");
    let ckpt = out_dir.join("checkpoint.grela");
    let out = gres(&[
        "eval",
        "--checkpoint",
        path(&ckpt),
        "--data",
        path(data.path()),
        "--split",
        "val",
        "--report",
        path(&report),
        "--samples",
        path(&rows),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let kv = fs::read_to_string(&report).unwrap();
    for key in [
        "samples=6",
        "ciou=",
        "giou=",
        "pr@0.7=",
        "pr@0.8=",
        "pr@0.9=",
        "n_acc=",
        "t_acc=",
    ] {
        assert!(kv.contains(key), "{key} missing from {kv}");
    }
    assert_eq!(fs::read_to_string(&rows).unwrap().lines().count(), 7);

    let out = gres(&[
        "eval",
        "--checkpoint",
        path(&ckpt),
        "--data",
        path(data.path()),
        "--mode",
        "50pix",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let ablated = run.path().join("no_minimap");
    let out = gres(&[
        "ablate",
        "--preset",
        "no_minimap",
        "--data",
        path(data.path()),
        "--out",
        path(&ablated),
        "--config",
        path(&cfg),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(fs::read_to_string(ablated.join("report.txt"))
        .unwrap()
        .contains("giou="));
    assert!(fs::read_to_string(ablated.join("config.txt"))
        .unwrap()
        .contains("disable_minimap = true"));
}

#[test]
fn configuration_errors_exit_with_2() {
    let data = tempfile::tempdir().unwrap();
    generate(data.path(), 4, 4, 2);
    let run = tempfile::tempdir().unwrap();
    let out_dir = run.path().join("out");

    let unknown = run.path().join("unknown.cfg");
    fs::write(&unknown, "epochs = 1\nlearning_rat = 0.1\n").unwrap();
    let out = gres(&[
        "train",
        "--data",
        path(data.path()),
        "--out",
        path(&out_dir),
        "--config",
        path(&unknown),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("learning_rat"), "{}", stderr(&out));

    let zero_p = run.path().join("zero_p.cfg");
    fs::write(&zero_p, "regions_p = 0\n").unwrap();
    let out = gres(&[
        "train",
        "--data",
        path(data.path()),
        "--out",
        path(&out_dir),
        "--config",
        path(&zero_p),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    let contradictory = run.path().join("contra.cfg");
    fs::write(&contradictory, "disable_minimap = false\n").unwrap();
    let out = gres(&[
        "ablate",
        "--preset",
        "no_minimap",
        "--data",
        path(data.path()),
        "--out",
        path(&out_dir),
        "--config",
        path(&contradictory),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    let out = gres(&["train", "--out", path(&out_dir)]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    let missing = run.path().join("nowhere");
    let out = gres(&[
        "train",
        "--data",
        path(&missing),
        "--out",
        path(&out_dir),
        "--epochs",
        "1",
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    let out = gres(&[
        "eval",
        "--checkpoint",
        path(&missing.join("c.grela")),
        "--data",
        path(data.path()),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    let out = gres(&[
        "generate",
        "--out",
        path(&missing),
        "--mix",
        "single=1,many=2",
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn non_finite_loss_exits_with_3_and_names_the_term() {
    let data = tempfile::tempdir().unwrap();
    generate(data.path(), 5, 16, 2);
    let run = tempfile::tempdir().unwrap();
    let cfg = run.path().join("explode.cfg");
    fs::write(&cfg, "learning_rate = 1e300\nepochs = 3\n").unwrap();
    let out = gres(&[
        "train",
        "--data",
        path(data.path()),
        "--out",
        path(&run.path().join("o")),
        "--config",
        path(&cfg),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    let err = stderr(&out);
    assert!(
        ["l_mask", "l_minimap", "l_nt"]
            .iter()
            .any(|t| err.contains(t)),
        "{err}"
    );
}
