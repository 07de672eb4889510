use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use srgan_cli::manifest::{RunManifest, RunStatus, MANIFEST_NAME};
use srgan_cli::train::resolve_config;
use srgan_cli::{Cli, Command as Sub};
use srgan_core::data::downscale_bicubic;
use srgan_core::losses::LossBreakdown;
use srgan_core::metrics::bicubic_reconstruction;
use srgan_core::trainer::Preset;
use srgan_core::Image;
use srgan_mos::{Phase, Study, StudyPlan};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/natural")
}

fn srgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srgan"))
        .args(args)
        .env("SRGAN_LOG", "info")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_json_log(o: &Output) {
    for line in stderr(o).lines().filter(|l| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap_or_else(|_| panic!("not a JSON log line: {line}"));
        assert!(v.get("level").is_some() && v.get("timestamp").is_some(), "{line}");
    }
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = srgan(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_and_help() {
    let o = srgan(&["evaluate", "--sr-dir", "a", "--hr-dir", "b", "--out", "c", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    let o = srgan(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("prepare-data"));
    let o = srgan(&["evaluate", "--sr-dir", "a", "--hr-dir", "b", "--out", "c", "--channel", "cmyk"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    let o = srgan(&["evaluate", "--sr-dir", s(&missing), "--hr-dir", s(&missing), "--out", s(&dir.path().join("r.json"))]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("command failed"));
    assert_json_log(&o);
}

#[test]
fn evaluate_writes_report_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (hr_dir, sr_dir) = (dir.path().join("hr"), dir.path().join("sr"));
    std::fs::create_dir_all(&hr_dir).unwrap();
    std::fs::create_dir_all(&sr_dir).unwrap();
    for name in ["camera", "coffee"] {
        let img = Image::load(fixtures().join(format!("{name}.png"))).unwrap();
        let (hr, sr) = bicubic_reconstruction(&img.crop(0, 0, 96, 128).unwrap(), 4, true).unwrap();
        hr.save(hr_dir.join(format!("{name}.png"))).unwrap();
        sr.save(sr_dir.join(format!("{name}_x4.png"))).unwrap();
    }
    let out = dir.path().join("report.json");
    let o = srgan(&["evaluate", "--sr-dir", s(&sr_dir), "--hr-dir", s(&hr_dir), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_json_log(&o);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["images"].as_array().unwrap().len(), 2);
    assert_eq!(report["dataset"], "hr");
    let psnr = report["mean"]["psnr_db"].as_f64().unwrap();
    assert!(psnr > 15.0 && psnr < 60.0, "{psnr}");

    let mut csv = csv::Reader::from_path(dir.path().join("report.csv")).unwrap();
    assert_eq!(csv.headers().unwrap().iter().collect::<Vec<_>>(), vec!["image", "psnr_db", "ssim", "vif"]);
    assert_eq!(csv.records().count(), 2);

    let m = RunManifest::load(&dir.path().join("report.json.manifest.json")).unwrap();
    assert_eq!(m.command, "evaluate");
    assert_eq!(m.status, RunStatus::Ok);
    assert!(m.wall_clock_secs.is_some());
    assert_eq!(m.input("hr_dir").unwrap().files, 2);
    assert_eq!(m.outputs, vec![out.clone(), dir.path().join("report.csv")]);

    // the manifest alone re-runs the command
    let again = dir.path().join("again.json");
    let o = srgan(&["replay", "--manifest", s(&dir.path().join("report.json.manifest.json")), "--out", s(&again)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let second: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&again).unwrap()).unwrap();
    assert_eq!(second["images"], report["images"]);
}

fn parse(args: &[&str]) -> srgan_cli::TrainArgs {
    let cli = <Cli as clap::Parser>::try_parse_from(std::iter::once("srgan").chain(args.iter().copied())).unwrap();
    match cli.command {
        Sub::Train(a) => a,
        other => panic!("{other:?}"),
    }
}

#[test]
fn flags_override_set_which_overrides_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.toml");
    std::fs::write(&cfg, "preset = \"M_pca\"\nseed = 1\nbatch_size = 2\nlearning_rate = 3e-4\n").unwrap();
    let c = s(&cfg);
    let base = resolve_config(&parse(&["train", "--config", c, "--out", "x", "--data", "d"])).unwrap();
    assert_eq!((base.preset, base.seed, base.batch_size, base.learning_rate), (Preset::Pca, 1, 2, 3e-4));
    assert_eq!(base.gen_blocks, 16);

    let c2 = resolve_config(&parse(&[
        "train", "--config", c, "--profile", "tiny", "--set", "seed=5", "--set", "batch_size=3", "--seed", "9",
        "--preset", "M_pcσva", "--out", "x", "--data", "d",
    ]))
    .unwrap();
    assert_eq!((c2.preset, c2.seed, c2.batch_size), (Preset::PcSva, 9, 3));
    assert_eq!(c2.gen_blocks, 2);
    assert_eq!(c2.learning_rate, 3e-4);

    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let err = resolve_config(&parse(&["train", "--config", c, "--out", "x", "--data", "d"])).unwrap_err();
    assert_eq!(srgan_cli::exit_code(&err), 2);
    assert!(err.to_string().contains("no_such_key"), "{err}");
}

fn first_loss_line(run: &Path) -> LossBreakdown {
    let text = std::fs::read_to_string(run.join("losses.jsonl")).unwrap();
    serde_json::from_str(text.lines().next().unwrap()).unwrap()
}

#[test]
fn train_then_replay_gives_the_same_first_step() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir_all(&data).unwrap();
    for name in ["astronaut", "chelsea", "coffee", "rocket"] {
        std::fs::copy(fixtures().join(format!("{name}.png")), data.join(format!("{name}.png"))).unwrap();
    }
    let index = dir.path().join("index.json");
    let o = srgan(&["prepare-data", "--root", s(&data), "--split", "train", "--out", s(&index)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ex = dir.path().join("ex.safetensors");
    let o = srgan(&[
        "init-extractor", "--out", s(&ex), "--layout", "C,R,C,R,P,C", "--channels", "8,8,16", "--seed", "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    // without perceptual weights the preset is refused as a usage error
    let run0 = dir.path().join("run0");
    let o = srgan(&["train", "--preset", "M_pva", "--profile", "tiny", "--index", s(&index), "--out", s(&run0)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let run1 = dir.path().join("run1");
    let o = srgan(&[
        "train", "--preset", "M_pva", "--profile", "tiny", "--index", s(&index), "--vgg-weights", s(&ex),
        "--set", "vgg_layer=5", "--set", "log_interval=1", "--total-updates", "3", "--seed", "11", "--out", s(&run1),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_json_log(&o);
    let manifests: Vec<_> = std::fs::read_dir(&run1)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.contains("manifest"))
        .collect();
    assert_eq!(manifests, vec![MANIFEST_NAME.to_string()]);
    let m = RunManifest::load(&run1.join(MANIFEST_NAME)).unwrap();
    assert_eq!((m.command.as_str(), m.seed, m.status), ("train", Some(11), RunStatus::Ok));
    assert_eq!(m.config["preset"], "M_pva");
    assert!(m.input("index").is_some() && m.input("vgg_weights").is_some());
    assert!(run1.join("final.safetensors").exists());
    assert_eq!(std::fs::read_to_string(run1.join("losses.jsonl")).unwrap().lines().count(), 3);

    let run2 = dir.path().join("run2");
    let o = srgan(&["replay", "--manifest", s(&run1.join(MANIFEST_NAME)), "--out", s(&run2)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (a, b) = (first_loss_line(&run1), first_loss_line(&run2));
    assert_eq!(a, b);
    assert!(a.vgg > 0.0 && a.adv > 0.0);
    let m2 = RunManifest::load(&run2.join(MANIFEST_NAME)).unwrap();
    assert_eq!(m2.config, m.config);
    assert_eq!(m2.inputs, m.inputs);

    // inference with the trained checkpoint
    let lr = downscale_bicubic(&Image::load(fixtures().join("camera.png")).unwrap().crop(0, 0, 64, 48).unwrap(), 4).unwrap();
    let lr_path = dir.path().join("lr.png");
    lr.save(&lr_path).unwrap();
    let sr_path = dir.path().join("sr.png");
    let o = srgan(&[
        "super-resolve", "--ckpt", s(&run1.join("final.safetensors")), "--in", s(&lr_path), "--out", s(&sr_path),
        "--tile", "5",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(Image::load(&sr_path).unwrap().dims(), (64, 48, 3));
    assert!(dir.path().join("sr.png.manifest.json").exists());
}

#[test]
fn mos_plan_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let stimuli = dir.path().join("stimuli");
    let plan0 = StudyPlan::default();
    for v in &plan0.versions {
        std::fs::create_dir_all(stimuli.join(v)).unwrap();
        for i in 0..20 {
            Image::constant(8, 8, 3, 0.5).save(stimuli.join(v).join(format!("im{i:02}.png"))).unwrap();
        }
    }
    let plan_path = dir.path().join("plan.json");
    let o = srgan(&["mos-plan", "--images", s(&stimuli), "--out", s(&plan_path), "--seed", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let plan = StudyPlan::load(&plan_path).unwrap();
    assert_eq!((plan.images.len(), plan.seed), (20, 4));

    // one rater scores HR 5 and everything else 2
    let log = dir.path().join("ratings.jsonl");
    {
        let mut study = Study::open(plan.clone(), &log).unwrap();
        let (info, _) = study.create_session("r0").unwrap();
        loop {
            let next = study.next(&info.session_id).unwrap();
            let Some(item) = next.item else { break };
            let score = match item.phase {
                Phase::Calibration => None,
                Phase::Rating => Some(if study.resolve_token(&item.item_id).unwrap().1 == "HR" { 5 } else { 2 }),
            };
            study.submit(&info.session_id, &item.item_id, score).unwrap();
        }
    }
    let out = dir.path().join("mos.csv");
    let o = srgan(&["mos-report", "--plan", s(&plan_path), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("HR"));
    let mut csv = csv::Reader::from_path(&out).unwrap();
    let rows: Vec<csv::StringRecord> = csv.records().map(|r| r.unwrap()).collect();
    let hr = rows.iter().find(|r| &r[0] == "HR").unwrap();
    assert_eq!((&hr[1], &hr[2]), ("20", "5.000000"));
    let nn = rows.iter().find(|r| &r[0] == "NN").unwrap();
    assert_eq!(&nn[2], "2.000000");

    // a stimulus set with a hole is refused
    std::fs::remove_file(stimuli.join("bicubic/im03.png")).unwrap();
    let o = srgan(&["mos-plan", "--images", s(&stimuli), "--out", s(&dir.path().join("p2.json"))]);
    assert_eq!(o.status.code(), Some(1));
}
