//! Subcommand bodies. Loading and validation failures map to exit code 2,
//! failures during simulation or training to exit code 3.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, Context};
use rayon::prelude::*;

use platewave::attack::{
    noise_csv, run_attack, sweep_distance, sweep_material, sweep_noise, AttackScenario, SweepConfig,
    default_distances,
};
use platewave::locator::{attack_distance, ImpactRecording, SolverOptions, NUM_MICS};
use platewave::recognizer::{random_commands, train_recognizer as fit_recognizer, Vocabulary};
use platewave::uap::{
    evaluate_defense, half_offset_shifts, padded_length, train_uap as fit_uap, uniform_shifts, Perturbation,
    TrainConfig,
};
use platewave::wav::{read_wav, write_wav};

use crate::manifest::Manifest;
use crate::scenario::{attack_commands, LoadedScenario};
use crate::{Common, EXIT_CONFIG, EXIT_RUNTIME};

#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Runtime(e) => e,
        }
    }
}

/// Library configuration and parse errors are the caller's fault; everything else is a runtime failure.
fn classify(e: anyhow::Error) -> Failure {
    let is_config = e.chain().any(|c| {
        matches!(
            c.downcast_ref::<platewave::Error>(),
            Some(platewave::Error::Config(_) | platewave::Error::Parse { .. })
        )
    });
    if is_config {
        Failure::Config(e)
    } else {
        Failure::Runtime(e)
    }
}

type Outcome = Result<(), Failure>;

trait ConfigErr<T> {
    fn cfg(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ConfigErr<T> for Result<T, E> {
    fn cfg(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }
}

trait RuntimeErr<T> {
    fn run(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> RuntimeErr<T> for Result<T, E> {
    fn run(self) -> Result<T, Failure> {
        self.map_err(|e| classify(e.into()))
    }
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .cfg()
}

fn load(common: &Common) -> Result<LoadedScenario, Failure> {
    let s = LoadedScenario::load(&common.scenario).cfg()?;
    prepare_out(&common.out)?;
    Ok(s)
}

fn manifest_for(name: &'static str, common: &Common, s: &LoadedScenario) -> Manifest {
    let mut m = Manifest::new(name, common.seed);
    m.input("scenario", &s.raw);
    m
}

fn bool01(b: bool) -> u8 {
    u8::from(b)
}

pub fn simulate_attack(common: &Common) -> Outcome {
    let s = load(common)?;
    let channel = s.channel().cfg()?;
    let recognizer = s.recognizer().cfg()?;
    let attack = s.scenario.attack.as_ref();
    let snr = s.channel_section().cfg()?.snr_db;
    let mut manifest = manifest_for("simulate-attack", common, &s);
    manifest.input("recognizer", recognizer.to_text().as_bytes());

    let (carrier, precompensate, commands) = match attack {
        Some(a) => (a.carrier_hz, a.precompensate, attack_commands(a, common.seed)),
        None => (platewave::attack::DEFAULT_CARRIER_HZ, false, random_commands(20, 3, 7, common.seed)),
    };
    let scenarios: Vec<AttackScenario> = commands
        .iter()
        .enumerate()
        .map(|(i, c)| AttackScenario {
            carrier_hz: carrier,
            precompensate,
            snr_db: snr,
            seed: common.seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
            ..AttackScenario::new(c.clone(), channel.clone())
        })
        .collect();
    for sc in &scenarios {
        sc.validate(&recognizer).cfg()?;
    }
    let outcomes = scenarios
        .par_iter()
        .map(|sc| run_attack(sc, &recognizer))
        .collect::<platewave::Result<Vec<_>>>()
        .run()?;

    let vocab = recognizer.vocabulary();
    let mut csv = String::from("command_id,command,decoded,cer,success,precompensate,distance_m,material\n");
    for (i, (sc, o)) in scenarios.iter().zip(&outcomes).enumerate() {
        writeln!(
            csv,
            "{i},{},{},{},{},{},{},{}",
            vocab.render(&sc.command),
            vocab.render(&o.decoded),
            o.cer_vs_command,
            bool01(o.success),
            bool01(precompensate),
            channel.distance_m,
            channel.material.name
        )
        .expect("string write");
        let wav = format!("received_{i:03}.wav");
        write_wav(common.out.join(&wav), &o.received_baseband).run()?;
        manifest.record(&common.out, &wav).run()?;
    }
    manifest.write(&common.out, "outcomes.csv", csv.as_bytes()).run()?;

    if let Some(a) = attack {
        let cfg = SweepConfig {
            commands_per_seed: a.num_commands,
            seeds: a.seeds.clone().unwrap_or_else(|| vec![common.seed]),
            min_words: a.min_words,
            max_words: a.max_words,
            carrier_hz: a.carrier_hz,
            snr_db: snr,
        };
        cfg.validate().cfg()?;
        let distances = a.distances_m.clone().unwrap_or_else(default_distances);
        if a.distances_m.is_some() {
            let sweep = sweep_distance(&channel.material, &distances, &cfg, &recognizer).run()?;
            manifest.write(&common.out, "distance_sweep.csv", sweep.to_csv().as_bytes()).run()?;
        }
        if let Some(names) = &a.materials {
            let presets = s.presets().cfg()?;
            let materials = names
                .iter()
                .map(|n| presets.get(n).cloned())
                .collect::<platewave::Result<Vec<_>>>()
                .cfg()?;
            let sweep = sweep_material(&materials, &distances, &cfg, &recognizer).run()?;
            manifest.write(&common.out, "material_sweep.csv", sweep.to_csv().as_bytes()).run()?;
        }
        if let Some(grid) = &a.snr_grid_db {
            let mut points = vec![None];
            points.extend(grid.iter().map(|v| Some(*v)));
            let rows = sweep_noise(&channel, &points, &cfg, &recognizer).run()?;
            manifest.write(&common.out, "noise_sweep.csv", noise_csv(&rows).as_bytes()).run()?;
        }
    }
    let ok = outcomes.iter().filter(|o| o.success).count();
    println!("{ok}/{} attacks succeeded", outcomes.len());
    manifest.finish(&common.out).run()
}

pub fn locate(recordings: &Path, geometry: &Path, out: &Path) -> Outcome {
    let s = LoadedScenario::load(geometry).cfg()?;
    prepare_out(out)?;
    let (geom, anchor, mode, threshold) = s.array().cfg()?;
    let mut manifest = Manifest::new("locate", 0);
    manifest.input("geometry", &s.raw);
    let mut channels = Vec::with_capacity(NUM_MICS);
    for i in 0..NUM_MICS {
        let path = recordings.join(format!("mic{i}.wav"));
        if !path.is_file() {
            return Err(Failure::Config(anyhow!("missing recording {}", path.display())));
        }
        manifest.input_file(&format!("mic{i}.wav"), &path).cfg()?;
        channels.push(read_wav(&path).cfg()?);
    }
    let recording = ImpactRecording::new(channels, threshold).cfg()?;
    let est = attack_distance(&recording, &geom, anchor, mode, &SolverOptions::default()).run()?;
    let mut csv = String::from("x_m,y_m,distance_m,residual_m,low_confidence,iterations");
    for i in 1..NUM_MICS {
        write!(csv, ",tdoa_{i}_s").expect("string write");
    }
    csv.push('\n');
    write!(
        csv,
        "{},{},{},{},{},{}",
        est.position[0],
        est.position[1],
        est.distance_m,
        est.residual,
        bool01(est.low_confidence),
        est.iterations
    )
    .expect("string write");
    for t in est.tdoas_s {
        write!(csv, ",{t:e}").expect("string write");
    }
    csv.push('\n');
    println!(
        "impact at ({:.4}, {:.4}) m, {:.4} m from anchor, residual {:.2e} m{}",
        est.position[0],
        est.position[1],
        est.distance_m,
        est.residual,
        if est.low_confidence { " (low confidence)" } else { "" }
    );
    manifest.write(out, "location.csv", csv.as_bytes()).run()?;
    manifest.finish(out).run()
}

pub fn train_recognizer(common: &Common) -> Outcome {
    let s = load(common)?;
    let spec = s.training_spec();
    spec.validate().cfg()?;
    let mut manifest = manifest_for("train-recognizer", common, &s);
    let (model, report) = fit_recognizer(&Vocabulary::standard(), &spec, common.seed).run()?;
    manifest.write(&common.out, "recognizer.txt", model.to_text().as_bytes()).run()?;
    let csv = format!(
        "epochs,held_out_cer,final_loss\n{},{},{}\n",
        report.epochs, report.held_out_cer, report.final_loss
    );
    manifest.write(&common.out, "training_report.csv", csv.as_bytes()).run()?;
    println!("trained {} epochs, held-out CER {:.4}", report.epochs, report.held_out_cer);
    manifest.finish(&common.out).run()
}

fn uap_config(s: &LoadedScenario, len: usize) -> Result<TrainConfig, Failure> {
    let d = s.defense_section().cfg()?;
    let cfg = TrainConfig {
        epsilon: d.epsilon,
        step: d.step.unwrap_or(d.epsilon / 20.0),
        max_iters: d.max_iters,
        delay_set: uniform_shifts(len, d.num_shifts),
        freq_set: d.carriers_hz.clone(),
        perturb_carrier_hz: d.perturb_carrier_hz,
        cer_threshold: d.cer_threshold,
        target_rate: d.target_rate,
        max_passes: d.max_passes,
    };
    cfg.validate().cfg()?;
    Ok(cfg)
}

pub fn train_uap(common: &Common) -> Outcome {
    let s = load(common)?;
    let recognizer = s.recognizer().cfg()?;
    let d = s.defense_section().cfg()?;
    let commands = random_commands(d.train_commands, d.min_words, d.max_words, common.seed);
    let len = padded_length(&commands, &recognizer).cfg()?;
    let cfg = uap_config(&s, len)?;
    let mut manifest = manifest_for("train-uap", common, &s);
    manifest.input("recognizer", recognizer.to_text().as_bytes());

    let out = fit_uap(&commands, &cfg, &recognizer, common.seed).run()?;
    manifest
        .write(&common.out, "perturbation.txt", out.perturbation.to_text().as_bytes())
        .run()?;
    out.perturbation.write_emitted_wav(common.out.join("perturbation.wav")).run()?;
    manifest.record(&common.out, "perturbation.wav").run()?;
    manifest.write(&common.out, "training_log.csv", out.log_csv().as_bytes()).run()?;
    let mut passes = String::from("pass,training_success_rate\n");
    for (i, r) in out.pass_success.iter().enumerate() {
        writeln!(passes, "{i},{r}").expect("string write");
    }
    manifest.write(&common.out, "pass_success.csv", passes.as_bytes()).run()?;
    if let Some(rate) = out.shortfall {
        eprintln!(
            "warning: training success {rate:.3} stayed below the target {} after {} pass(es)",
            cfg.target_rate,
            out.pass_success.len()
        );
    }
    println!("trained perturbation over {} samples", out.perturbation.delta().len());
    manifest.finish(&common.out).run()
}

pub fn eval_defense(common: &Common, perturbation: &Path) -> Outcome {
    let s = load(common)?;
    let recognizer = s.recognizer().cfg()?;
    let d = s.defense_section().cfg()?;
    if !perturbation.is_file() {
        return Err(Failure::Config(anyhow!("perturbation {} does not exist", perturbation.display())));
    }
    let p = Perturbation::load(perturbation).cfg()?;
    let mut manifest = manifest_for("eval-defense", common, &s);
    manifest.input("recognizer", recognizer.to_text().as_bytes());
    manifest.input_file("perturbation", perturbation).cfg()?;

    let commands = random_commands(d.held_out_commands, d.min_words, d.max_words, common.seed);
    let shifts = half_offset_shifts(p.incident_len(), d.held_out_shifts);
    let report = evaluate_defense(&p, &commands, &shifts, &d.held_out_carriers_hz, d.cer_threshold, &recognizer).run()?;
    let csv = format!(
        "defense_success_rate,clean_cer_delta,clean_cer_without,triples\n{},{},{},{}\n",
        report.defense_success_rate, report.clean_cer_delta, report.clean_cer_without, report.triples
    );
    manifest.write(&common.out, "defense_report.csv", csv.as_bytes()).run()?;
    println!(
        "defense success {:.3} over {} triples, clean CER change {:+.3}",
        report.defense_success_rate, report.triples, report.clean_cer_delta
    );
    manifest.finish(&common.out).run()
}
