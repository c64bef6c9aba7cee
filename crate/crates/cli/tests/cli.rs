use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use platewave::locator::{synthesize_impact, ImpactBurst, MicArrayGeometry};
use platewave::recognizer::{random_commands, train_recognizer, RecognizerTrainingSpec, Vocabulary};
use platewave::uap::{evaluate_defense, half_offset_shifts, held_out_freqs, padded_length, Perturbation};
use platewave::wav::write_wav;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_platewave"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("PLATEWAVE_PRESET_DIR").output().expect("spawn platewave")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// One trained recognizer per test binary, written to a fixed temp file.
fn recognizer_path() -> &'static Path {
    static PATH: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    let (_, p) = PATH.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let (model, _) = train_recognizer(&Vocabulary::standard(), &RecognizerTrainingSpec::default(), 1).unwrap();
        let p = dir.path().join("recognizer.txt");
        model.save(&p).unwrap();
        (dir, p)
    });
    p
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn attack_scenario(dir: &Path) -> PathBuf {
    let text = format!(
        "[material]\npreset = \"glass\"\n\n[channel]\ndistance_m = 0.4\n\n[recognizer]\nmodel = {:?}\n\n\
         [attack]\nnum_commands = 3\nprecompensate = true\ndistances_m = [0.2, 0.6]\n",
        recognizer_path()
    );
    write(dir, "attack.toml", &text)
}

#[test]
fn help_exits_zero_everywhere() {
    for sub in [None, Some("simulate-attack"), Some("locate"), Some("train-recognizer"), Some("train-uap"), Some("eval-defense")] {
        let mut args: Vec<&str> = sub.into_iter().collect();
        args.push("--help");
        let o = run(&args);
        assert_eq!(code(&o), 0, "{args:?}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"));
    }
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&run(&["simulate-attack", "--bogus"])), 2);
    assert_eq!(code(&run(&["no-such-command"])), 2);
    assert_eq!(code(&run(&["simulate-attack", "--scenario", "x.toml", "--out", "o", "--format", "json"])), 2);
    assert_eq!(code(&run(&[])), 2);
}

#[test]
fn scenario_errors_exit_two_with_a_reason() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let s = write(dir.path(), "a.toml", "[channel]\ndistance_m = 0.5\n");
    let o = run(&["simulate-attack", "--scenario", s.to_str().unwrap(), "--out", out]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("[material]"), "{}", stderr(&o));

    let s = write(dir.path(), "b.toml", "[material]\npreset = \"steel\"\ncolour = \"red\"\n");
    let o = run(&["simulate-attack", "--scenario", s.to_str().unwrap(), "--out", out]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));

    let s = write(dir.path(), "c.toml", "[recognizer]\nmodel = \"missing.txt\"\n");
    let o = run(&["train-uap", "--scenario", s.to_str().unwrap(), "--out", out]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing.txt"), "{}", stderr(&o));

    let s = write(dir.path(), "d.toml", "[material]\npreset = \"steel\"\n[channel]\ndistance_m = -1.0\n");
    assert_eq!(code(&run(&["simulate-attack", "--scenario", s.to_str().unwrap(), "--out", out])), 2);

    let s = write(dir.path(), "e.toml", "[material]\npreset = \"granite\"\n[channel]\ndistance_m = 1.0\n");
    let o = run(&["simulate-attack", "--scenario", s.to_str().unwrap(), "--out", out]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("granite"));

    let s = write(dir.path(), "f.toml", "[defense]\nepsilon = 0.5\n");
    assert_eq!(code(&run(&["train-uap", "--scenario", s.to_str().unwrap(), "--out", out])), 2);

    let o = run(&["simulate-attack", "--scenario", "/nonexistent/s.toml", "--out", out]);
    assert_eq!(code(&o), 2);
}

#[test]
fn preset_directory_comes_from_the_environment() {
    let dir = TempDir::new().unwrap();
    let presets = dir.path().join("presets");
    std::fs::create_dir(&presets).unwrap();
    write(
        &presets,
        "materials.toml",
        "[[material]]\nname = \"slate\"\nyoungs_modulus_pa = 50e9\ndensity_kg_m3 = 2700.0\n\
         thickness_m = 0.02\npoisson_ratio = 0.25\nsolid_speed_m_s = 2500.0\n",
    );
    let text = format!(
        "[material]\npreset = \"slate\"\n[channel]\ndistance_m = 0.3\n[recognizer]\nmodel = {:?}\n[attack]\nnum_commands = 1\n",
        recognizer_path()
    );
    let s = write(dir.path(), "s.toml", &text);
    let out = dir.path().join("out");
    let args = ["simulate-attack", "--scenario", s.to_str().unwrap(), "--out", out.to_str().unwrap()];
    assert_eq!(code(&run(&args)), 2);
    let o = bin().args(args).env("PLATEWAVE_PRESET_DIR", &presets).output().unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn simulate_attack_writes_deterministic_artifacts() {
    let dir = TempDir::new().unwrap();
    let s = attack_scenario(dir.path());
    let mut outs = Vec::new();
    for name in ["run1", "run2"] {
        let out = dir.path().join(name);
        let o = run(&["simulate-attack", "--scenario", s.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "4"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        outs.push(out);
    }
    for f in ["outcomes.csv", "distance_sweep.csv", "received_000.wav", "manifest.toml"] {
        let a = std::fs::read(outs[0].join(f)).unwrap();
        let b = std::fs::read(outs[1].join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{f} differs between runs");
    }
    let csv = std::fs::read_to_string(outs[0].join("outcomes.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("command_id,command,decoded,cer,success"));
    let sweep = std::fs::read_to_string(outs[0].join("distance_sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
    let manifest = std::fs::read_to_string(outs[0].join("manifest.toml")).unwrap();
    for key in ["config_hash", "seed = 4", "version", "outcomes.csv", "recognizer"] {
        assert!(manifest.contains(key), "manifest lacks {key}");
    }
}

#[test]
fn eval_defense_on_zero_perturbation_matches_the_library() {
    let dir = TempDir::new().unwrap();
    let rec = platewave::recognizer::Recognizer::load(recognizer_path()).unwrap();
    let train = random_commands(2, 2, 3, 9);
    let len = padded_length(&train, &rec).unwrap();
    let p = Perturbation::zeros(len / 12, 0.05, 18_000.0).unwrap();
    let pp = dir.path().join("zero.txt");
    p.save(&pp).unwrap();
    let text = format!(
        "[recognizer]\nmodel = {:?}\n[defense]\nheld_out_commands = 2\nheld_out_shifts = 2\nmin_words = 2\nmax_words = 2\n",
        recognizer_path()
    );
    let s = write(dir.path(), "s.toml", &text);
    let out = dir.path().join("out");
    let o = run(&[
        "eval-defense",
        "--scenario",
        s.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--perturbation",
        pp.to_str().unwrap(),
        "--seed",
        "5",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let expected = evaluate_defense(
        &p,
        &random_commands(2, 2, 2, 5),
        &half_offset_shifts(p.incident_len(), 2),
        &held_out_freqs(),
        0.7,
        &rec,
    )
    .unwrap();
    let csv = std::fs::read_to_string(out.join("defense_report.csv")).unwrap();
    let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row[0], expected.defense_success_rate);
    assert_eq!(row[1], expected.clean_cer_delta);
    assert_eq!(row[3] as usize, expected.triples);
    assert!(expected.defense_success_rate <= 0.1);
    assert_eq!(expected.clean_cer_delta, 0.0);
}

#[test]
fn train_uap_emits_perturbation_log_and_manifest() {
    let dir = TempDir::new().unwrap();
    let text = format!(
        "[recognizer]\nmodel = {:?}\n[defense]\nepsilon = 0.1\nmax_iters = 3\nnum_shifts = 1\n\
         carriers_hz = [21000.0]\ntrain_commands = 1\nmin_words = 2\nmax_words = 2\nmax_passes = 1\n",
        recognizer_path()
    );
    let s = write(dir.path(), "s.toml", &text);
    let out = dir.path().join("out");
    let o = run(&["train-uap", "--scenario", s.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let p = Perturbation::load(out.join("perturbation.txt")).unwrap();
    assert!(p.delta().samples().iter().all(|v| v.abs() <= 0.1));
    let log = std::fs::read_to_string(out.join("training_log.csv")).unwrap();
    assert!(log.starts_with("pass,x_id,tau_samples,carrier_hz,iterations,final_cer"));
    assert!(out.join("perturbation.wav").is_file());
    assert!(std::fs::read_to_string(out.join("manifest.toml")).unwrap().contains("perturbation.txt"));
}

#[test]
fn locate_recovers_a_synthetic_impact() {
    let dir = TempDir::new().unwrap();
    let geometry = MicArrayGeometry::hexagon([0.0, 0.0], 0.3, 2000.0).unwrap();
    let source = [0.12, -0.07];
    let channels = synthesize_impact(&geometry, source, &ImpactBurst::default(), 0.01, 0.03, 192_000.0).unwrap();
    let rec_dir = dir.path().join("rec");
    std::fs::create_dir(&rec_dir).unwrap();
    for (i, c) in channels.iter().enumerate() {
        write_wav(rec_dir.join(format!("mic{i}.wav")), &c.scaled(0.5)).unwrap();
    }
    let g = write(
        dir.path(),
        "geometry.toml",
        "[array]\nradius_m = 0.3\nsolid_speed_m_s = 2000.0\nenergy_threshold = 1e-4\nanchor = [0.0, 0.0]\n",
    );
    let out = dir.path().join("out");
    let o = run(&[
        "locate",
        "--recordings",
        rec_dir.to_str().unwrap(),
        "--geometry",
        g.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("location.csv")).unwrap();
    let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    let err = ((row[0] - source[0]).powi(2) + (row[1] - source[1]).powi(2)).sqrt();
    assert!(err < 3.0 * 2000.0 / 192_000.0, "error {err}");
    assert!(String::from_utf8_lossy(&o.stdout).contains("impact at"));

    for (i, c) in channels.iter().enumerate() {
        write_wav(rec_dir.join(format!("mic{i}.wav")), &c.scaled(0.0)).unwrap();
    }
    let o = run(&[
        "locate",
        "--recordings",
        rec_dir.to_str().unwrap(),
        "--geometry",
        g.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3, "silent recordings are a runtime failure: {}", stderr(&o));

    std::fs::remove_file(rec_dir.join("mic5.wav")).unwrap();
    let o = run(&[
        "locate",
        "--recordings",
        rec_dir.to_str().unwrap(),
        "--geometry",
        g.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("mic5.wav"));
}
