use std::fs;
use std::path::Path;

use zol::cli::{cmd_adapt, cmd_collect, cmd_pretrain, cmd_verify, run, RunConfig};
use zol::envs::{read_dataset, DATASET_MAGIC};
use zol::fbmodel::{load_model, CHECKPOINT_MAGIC};

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn exit(args: &[&str]) -> i32 {
    run(std::iter::once("zol").chain(args.iter().copied()))
}

const SMALL: &str = "n_records = 600\nd = 4\nf_hidden = 8\nb_hidden = 8\nfb_batch_size = 32\nfb_steps = 5\n\
steps = 3\nreset_samples = 8\nbatch_size = 32\nseeds = 0, 1\n";

#[test]
fn collect_writes_dataset_and_stats() {
    let out = tempfile::tempdir().unwrap();
    let cfg = RunConfig::parse("n_records = 300\nseed = 4\n").unwrap();
    let res = cmd_collect(&cfg, out.path()).unwrap();
    assert_eq!(res.run_dir, out.path().join("collect-seed4"));
    let bytes = fs::read(res.run_dir.join("dataset.zold")).unwrap();
    assert_eq!(&bytes[..4], DATASET_MAGIC);
    assert!(res.summary.contains("300 records") && res.summary.contains("annulus coverage = 1.0000"));
    assert!(res.warnings.is_empty());
}

#[test]
fn empty_collection_warns() {
    let out = tempfile::tempdir().unwrap();
    let res = cmd_collect(&RunConfig::parse("n_records = 0").unwrap(), out.path()).unwrap();
    assert_eq!(res.warnings.len(), 1);
    assert!(read_dataset(&res.run_dir.join("dataset.zold")).unwrap().is_empty());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    let missing = dir.path().join("nope").to_string_lossy().into_owned();
    let good = write_config(dir.path(), "good.cfg", "n_records = 50\n");
    let bad_key = write_config(dir.path(), "bad.cfg", "n_records = 50\nlearnrate = 1\n");
    let bad_task = write_config(dir.path(), "task.cfg", "task = spiral\ncheckpoint = x.zolm\n");
    let no_ckpt = write_config(
        dir.path(),
        "ckpt.cfg",
        "task = cross\ncheckpoint = /nonexistent/m.zolm\n",
    );
    let bad_verify = write_config(dir.path(), "tol.cfg", "instances = 3\ntolerance = 1e-300\n");

    assert_eq!(exit(&["collect", "--config", &good, "--out", &out]), 0);
    assert_eq!(exit(&["collect", "--config", &good, "--out", &missing]), 3);
    assert_eq!(exit(&["collect", "--config", &bad_key, "--out", &out]), 2);
    assert_eq!(exit(&["adapt", "--config", &bad_task, "--out", &out]), 2);
    assert_eq!(exit(&["adapt", "--config", &no_ckpt, "--out", &out]), 3);
    assert_eq!(exit(&["verify", "--config", &bad_verify, "--out", &out]), 5);
    assert_eq!(exit(&["collect", "--config", "/nonexistent.cfg", "--out", &out]), 3);
    assert_eq!(exit(&["frobnicate"]), 2);
}

#[test]
fn messages_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent");
    let err = cmd_collect(&RunConfig::default(), &missing).unwrap_err();
    assert!(err.to_string().contains(&*missing.to_string_lossy()));
    let cfg = RunConfig::parse("task = spiral").unwrap();
    let err = cmd_adapt(&cfg, dir.path()).unwrap_err();
    assert!(err.to_string().contains("square, twocircles, cross"), "{err}");
}

#[test]
fn pretrain_with_zero_steps_saves_the_initial_model() {
    let out = tempfile::tempdir().unwrap();
    let cfg = RunConfig::parse(&format!("{SMALL}fb_steps = 0\n")).unwrap();
    let res = cmd_pretrain(&cfg, out.path()).unwrap();
    let bytes = fs::read(res.run_dir.join("model.zolm")).unwrap();
    assert_eq!(&bytes[..4], CHECKPOINT_MAGIC);
    let model = load_model(&res.run_dir.join("model.zolm")).unwrap();
    let fresh = zol::fbmodel::FbModel::new(&cfg.arch, 2, zol::fbmodel::ActionSpace::Compass { step: 0.1 }, 0).unwrap();
    assert_eq!(model, fresh);
    assert_eq!(fs::read_to_string(res.run_dir.join("loss.csv")).unwrap(), "step,loss\n");
}

#[test]
fn pipeline_is_deterministic_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let run_once = |sub: &str| {
        let out = dir.path().join(sub);
        fs::create_dir(&out).unwrap();
        let collect = cmd_collect(&RunConfig::parse(SMALL).unwrap(), &out).unwrap();
        let data = collect.run_dir.join("dataset.zold");
        let cfg = RunConfig::parse(&format!("{SMALL}dataset = {}\n", data.display())).unwrap();
        let pre = cmd_pretrain(&cfg, &out).unwrap();
        let ckpt = pre.run_dir.join("model.zolm");
        let cfg = RunConfig::parse(&format!(
            "{SMALL}dataset = {}\ncheckpoint = {}\ntask = cross\n",
            data.display(),
            ckpt.display()
        ))
        .unwrap();
        let adapt = cmd_adapt(&cfg, &out).unwrap();
        (data, ckpt, adapt.run_dir)
    };
    let (d1, c1, a1) = run_once("a");
    let (d2, c2, a2) = run_once("b");
    assert_eq!(fs::read(d1).unwrap(), fs::read(d2).unwrap());
    assert_eq!(fs::read(c1).unwrap(), fs::read(c2).unwrap());
    let report = fs::read_to_string(a1.join("report.csv")).unwrap();
    assert_eq!(report, fs::read_to_string(a2.join("report.csv")).unwrap());
    assert_eq!(report.lines().count(), 4);
    for seed in ["seed0", "seed1"] {
        for f in [
            "z_fb.csv",
            "z_zol.csv",
            "trace.csv",
            "heatmap_fb.csv",
            "heatmap_fb.pgm",
            "heatmap_zol.csv",
            "heatmap_zol.pgm",
        ] {
            let p = a1.join(seed).join(f);
            assert_eq!(
                fs::read(&p).unwrap(),
                fs::read(a2.join(seed).join(f)).unwrap(),
                "{}",
                p.display()
            );
        }
    }
    let trace = fs::read_to_string(a1.join("seed0/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 4);
}

#[test]
fn zero_adaptation_steps_give_zero_deltas() {
    let out = tempfile::tempdir().unwrap();
    let pre = cmd_pretrain(&RunConfig::parse(SMALL).unwrap(), out.path()).unwrap();
    let cfg = RunConfig::parse(&format!(
        "{SMALL}steps = 0\ntask = square\ncheckpoint = {}\n",
        pre.run_dir.join("model.zolm").display()
    ))
    .unwrap();
    let res = cmd_adapt(&cfg, out.path()).unwrap();
    let report = fs::read_to_string(res.run_dir.join("report.csv")).unwrap();
    for line in report.lines().skip(1) {
        assert_eq!(line.rsplit(',').next().unwrap().parse::<f64>().unwrap(), 0.0, "{line}");
    }
}

#[test]
fn verify_default_passes_and_is_reproducible() {
    let out = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default();
    let a = cmd_verify(&cfg, out.path()).unwrap();
    let b = cmd_verify(&cfg, out.path()).unwrap();
    assert_eq!(a.summary, b.summary);
    assert_eq!(a.summary, fs::read_to_string(a.run_dir.join("report.txt")).unwrap());
    for name in zol::mdporacle::suite::CHECK_NAMES {
        assert_eq!(a.summary.matches(name).count(), 2, "{name}");
    }
}
