use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use openrel::checkpoint::Checkpoint;
use openrel::config::{Config, DecodeMode, EvalConfig};
use openrel::eval::{canonicalize_relation, parse_sweep, run_eval, sweep_csv, theta_sweep, EvalOptions, SweepRow};
use openrel::scene::{load_dataset, save_dataset};
use openrel::synth::{generate, manifest, SynthConfig};
use openrel::train::train;

use crate::args::{Cli, Command, EvalArgs, PredictArgs, SynthArgs, TrainArgs};
use crate::manifest::{now_ms, RunManifest};
use crate::{overlay, CliError};

pub const DATASET_FILE: &str = "dataset.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

pub fn run(cli: Cli) -> Result<RunManifest, CliError> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Predict(a) => cmd_predict(&a),
    }
}

/// TOML unless the extension is `.json`.
fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>, outputs: &mut Vec<PathBuf>) -> Result<(), CliError> {
    fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
    outputs.push(path);
    Ok(())
}

fn json(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("output serializes")
}

fn check_theta(theta: Option<f64>) -> Result<(), CliError> {
    match theta {
        Some(t) if !(0.0..=1.0).contains(&t) => Err(CliError::Validation(format!("--theta {t} outside [0, 1]"))),
        _ => Ok(()),
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<RunManifest, CliError> {
    let started = now_ms();
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_config(p)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let dataset = generate(&cfg)?;
    create_dir(&a.out)?;
    let mut m = RunManifest::new("synth", cfg.hash(), cfg.seed, started);
    let path = a.out.join(DATASET_FILE);
    save_dataset(&path, &dataset)?;
    m.outputs.push(path);
    write(a.out.join("synth_manifest.json"), json(&manifest(&cfg, &dataset)), &mut m.outputs)?;
    let stats = manifest(&cfg, &dataset);
    eprintln!(
        "{} scenes, {} triplets, {}/{} ordered pairs related",
        stats.scenes, stats.triplets, stats.pairs_with_relation, stats.pairs
    );
    m.write(&a.out)?;
    Ok(m)
}

pub fn cmd_train(a: &TrainArgs) -> Result<RunManifest, CliError> {
    let started = now_ms();
    let mut config = Config::load(&a.config)?;
    if let Some(s) = a.seed {
        config.seed = s;
        config.train.seed = s;
    }
    if let Some(mode) = a.mode {
        config.decoder.mode = mode.into();
    }
    if a.open_set {
        config.train.open_set = true;
    }
    if a.closed_set {
        config.train.open_set = false;
    }
    config.validate()?;
    let dataset = load_dataset(&a.dataset)?;
    create_dir(&a.out)?;
    let mut m = RunManifest::new("train", config.hash(), config.seed, started);
    let ck = train(&dataset, config, |s| {
        eprintln!(
            "epoch {:>3}  lr {:.1e}  loss {:.4}  exist {:.4}  lm {:.4}  |g| {:.3}",
            s.epoch, s.lr, s.loss, s.exist_loss, s.lm_loss, s.mean_grad_norm
        )
    })?;
    let path = a.out.join(CHECKPOINT_FILE);
    ck.save(&path)?;
    m.outputs.push(path);
    write(a.out.join("history.json"), json(&ck.history), &mut m.outputs)?;
    m.write(&a.out)?;
    Ok(m)
}

#[derive(Serialize)]
struct SceneTiming<'a> {
    scene_id: &'a str,
    relq_ms: f64,
    decode_ms: f64,
    total_ms: f64,
}

#[derive(Serialize)]
struct TimingFile<'a> {
    theta: f64,
    mean_relq_ms: f64,
    mean_decode_ms: f64,
    mean_total_ms: f64,
    scenes: Vec<SceneTiming<'a>>,
    sweep: Option<&'a [SweepRow]>,
}

pub fn cmd_eval(a: &EvalArgs) -> Result<RunManifest, CliError> {
    let started = now_ms();
    check_theta(a.theta)?;
    let sweep = a.theta_sweep.as_deref().map(parse_sweep).transpose()?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let bundle = ck.bundle;
    let mut options = EvalOptions::from_bundle(&bundle);
    if let Some(p) = &a.config {
        let cfg: EvalConfig = read_config(p)?;
        options.config = cfg;
    }
    options.config.validate()?;
    if let Some(t) = a.theta {
        options.theta = t;
    }
    if let Some(mode) = a.mode {
        options.mode = mode.into();
    }
    if let Some(s) = a.seed {
        options.seed = s;
    }
    let dataset = load_dataset(&a.dataset)?;
    if dataset.relations != bundle.relations {
        eprintln!("warning: dataset relation vocabulary differs from the checkpoint's; scoring uses the checkpoint's");
    }
    create_dir(&a.out)?;
    let mut m = RunManifest::new("eval", bundle.config.hash(), options.seed, started);
    let out = run_eval(&bundle, &dataset.scenes, &options)?;
    let r = &out.report;
    print!("{}", r.to_table());
    println!(
        "{:.2} ms/scene relq, {:.2} ms/scene decode, {:.2} ms/scene total",
        r.timing.mean_relq_ms, r.timing.mean_decode_ms, r.timing.mean_total_ms
    );
    write(a.out.join("metrics.json"), r.to_json(), &mut m.outputs)?;
    write(a.out.join("metrics.txt"), r.to_table(), &mut m.outputs)?;
    write(a.out.join("per_relation.csv"), r.per_relation_csv(), &mut m.outputs)?;
    write(a.out.join("predictions.json"), json(&out.scenes), &mut m.outputs)?;
    let rows = match &sweep {
        Some(thetas) => {
            let rows = theta_sweep(&bundle, &dataset.scenes, &options, thetas)?;
            write(a.out.join("sweep.csv"), sweep_csv(&rows), &mut m.outputs)?;
            Some(rows)
        }
        None => None,
    };
    let timing = TimingFile {
        theta: options.theta,
        mean_relq_ms: r.timing.mean_relq_ms,
        mean_decode_ms: r.timing.mean_decode_ms,
        mean_total_ms: r.timing.mean_total_ms,
        scenes: out
            .scenes
            .iter()
            .map(|l| SceneTiming {
                scene_id: &l.scene_id,
                relq_ms: l.relq_ms,
                decode_ms: l.decode_ms,
                total_ms: l.total_ms,
            })
            .collect(),
        sweep: rows.as_deref(),
    };
    write(a.out.join("timing.json"), json(&timing), &mut m.outputs)?;
    m.write(&a.out)?;
    Ok(m)
}

#[derive(Serialize)]
struct PredictedRelation {
    relation: String,
    score: f64,
    verdict: bool,
    /// Vocabulary name, or null for an open-set string outside it.
    canonical: Option<String>,
}

#[derive(Serialize)]
struct PredictedPair {
    subject_id: usize,
    object_id: usize,
    subject: String,
    object: String,
    existence: f64,
    selected: bool,
    relations: Vec<PredictedRelation>,
    raw: Option<String>,
    truncated: bool,
}

#[derive(Serialize)]
struct PredictedObject {
    id: usize,
    category: String,
}

#[derive(Serialize)]
struct SceneGraph {
    scene_id: String,
    mode: DecodeMode,
    theta: f64,
    objects: Vec<PredictedObject>,
    pairs: Vec<PredictedPair>,
}

pub fn cmd_predict(a: &PredictArgs) -> Result<RunManifest, CliError> {
    let started = now_ms();
    check_theta(a.theta)?;
    let bundle = Checkpoint::load(&a.checkpoint)?.bundle;
    let dataset = load_dataset(&a.scene)?;
    let scene = match &a.scene_id {
        Some(id) => dataset
            .scenes
            .iter()
            .find(|s| &s.scene_id == id)
            .ok_or_else(|| CliError::Validation(format!("{}: no scene `{id}`", a.scene.display())))?,
        None => dataset
            .scenes
            .first()
            .ok_or_else(|| CliError::Validation(format!("{}: file holds no scenes", a.scene.display())))?,
    };
    let theta = a.theta.unwrap_or(bundle.config.selector.theta);
    let mode = a.mode.map_or(bundle.config.decoder.mode, Into::into);
    let probes: Vec<String> = bundle.relations.all().cloned().collect();
    let prediction = bundle.predict_scene(&scene.image, &scene.objects, &probes, theta, mode)?;
    let graph = SceneGraph {
        scene_id: scene.scene_id.clone(),
        mode,
        theta,
        objects: scene
            .objects
            .iter()
            .map(|o| PredictedObject {
                id: o.instance_id,
                category: o.category.clone(),
            })
            .collect(),
        pairs: prediction
            .pairs
            .iter()
            .map(|p| PredictedPair {
                subject_id: scene.objects[p.pair.0].instance_id,
                object_id: scene.objects[p.pair.1].instance_id,
                subject: p.subject.clone(),
                object: p.object.clone(),
                existence: p.existence,
                selected: p.selected,
                relations: p
                    .relations
                    .iter()
                    .map(|r| PredictedRelation {
                        relation: r.relation.clone(),
                        score: r.score,
                        verdict: r.verdict,
                        canonical: canonicalize_relation(&r.relation, &bundle.relations),
                    })
                    .collect(),
                raw: p.raw.clone(),
                truncated: p.truncated,
            })
            .collect(),
    };
    create_dir(&a.out)?;
    let mut m = RunManifest::new("predict", bundle.config.hash(), bundle.config.seed, started);
    write(a.out.join("scene_graph.json"), json(&graph), &mut m.outputs)?;
    if !a.no_overlay {
        let path = a.out.join("overlay.png");
        overlay::render(&scene.image, &scene.objects, &prediction)
            .save(&path)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        m.outputs.push(path);
    }
    m.write(&a.out)?;
    Ok(m)
}
