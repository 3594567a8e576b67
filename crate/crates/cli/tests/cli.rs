use std::path::Path;

use clap::Parser;
use flowvae_cli::{run, Cli, Command, EXIT_CONFIG, EXIT_DATA, EXIT_OK};

fn flowvae(args: &[&str]) -> i32 {
    run(std::iter::once("flowvae").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[run]\npreset = 4a\nseed = 3\n\n[train]\nsteps = 9 # short\nlr = 0.01\n",
    )
    .unwrap();
    let cli = Cli::try_parse_from(["flowvae", "train-llc", "--config", p(&cfg), "--steps", "11"])
        .unwrap();
    let Command::TrainLlc(args) = cli.command else {
        panic!("wrong command")
    };
    let s = args.settings().unwrap();
    assert_eq!(s.preset.as_deref(), Some("4a"));
    assert_eq!(s.seed, Some(3));
    assert_eq!(s.steps, Some(11));
    assert_eq!(s.lr, Some(0.01));
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(
        flowvae(&[
            "train-llc",
            "--preset",
            "nope",
            "--seed",
            "1",
            "--synthetic",
            "demo"
        ]),
        EXIT_CONFIG
    );
    assert_eq!(flowvae(&["train-llc", "--bogus-flag"]), EXIT_CONFIG);
    assert_eq!(
        flowvae(&[
            "evaluate",
            "--seed",
            "1",
            "--synthetic",
            "demo",
            "--out",
            p(&out)
        ]),
        EXIT_CONFIG
    );
    let missing = dir.path().join("missing.csv");
    assert_eq!(
        flowvae(&[
            "train-llc",
            "--seed",
            "1",
            "--train",
            p(&missing),
            "--out",
            p(&out)
        ]),
        EXIT_DATA
    );
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nmomentum = 3\n").unwrap();
    assert_eq!(
        flowvae(&["train-llc", "--seed", "1", "--config", p(&cfg)]),
        EXIT_CONFIG
    );
}

#[test]
fn gen_synth_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let read = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let code = flowvae(&[
            "gen-synth",
            "--synthetic",
            "binary",
            "--seed",
            seed,
            "--out",
            p(&out),
        ]);
        assert_eq!(code, EXIT_OK);
        std::fs::read(out.join("flows.csv")).unwrap()
    };
    let a = read("a", "4");
    assert_eq!(a, read("b", "4"));
    assert_ne!(a, read("c", "5"));
}

#[test]
fn trained_checkpoint_evaluates_and_simulates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let common = ["--synthetic", "binary", "--seed", "2", "--out", p(&out)];
    let with = |cmd: &str, extra: &[&str]| {
        let mut args = vec![cmd];
        args.extend(common);
        args.extend(extra);
        flowvae(&args)
    };
    assert_eq!(
        with(
            "train-llc",
            &[
                "--preset",
                "4b",
                "--steps",
                "30",
                "--batch-size",
                "64",
                "--log-interval",
                "10"
            ]
        ),
        EXIT_OK
    );
    let ckpt = out.join("model.fvae");
    assert!(ckpt.exists());
    assert!(out.join("train_log.csv").exists());
    let ckpt = ckpt.to_str().unwrap().to_string();
    assert_eq!(with("evaluate", &["--checkpoint", &ckpt]), EXIT_OK);
    assert_eq!(
        with(
            "gate-sim",
            &[
                "--checkpoint",
                &ckpt,
                "--threshold",
                "0.7",
                "--capacity",
                "100"
            ]
        ),
        EXIT_OK
    );
    assert!(out.join("gate_report.txt").exists());
}
