use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dsfec_core::analyzer::{ablation_report, analyze as analyze_model, paired_benchmark, AblationAxis, BenchmarkStats};
use dsfec_core::config::ModelConfig;
use dsfec_core::graph::build_graph;
use dsfec_core::io::{
    detections_from_json, detections_to_json, ground_truth_from_json, ground_truth_to_json, group_by_frame,
    load_frame_csv, save_frame_csv, FramedDetection,
};
use dsfec_core::metrics::{evaluate, FrameGroundTruth};
use dsfec_core::pillar::RadarFrame;
use dsfec_core::synth::{generate_scene, oracle_detector, ObjectCounts, SceneSpec, ScoreModel};
use dsfec_core::{Detector, Error, PostprocessConfig, WeightStore};
use rayon::prelude::*;
use serde::Serialize;

use crate::{AnalyzeArgs, BenchArgs, EvalArgs, Format, InferArgs, InitWeightsArgs, ModelArgs, SynthArgs};

fn load_config(args: &ModelArgs) -> Result<(ModelConfig, String)> {
    if let Some(preset) = args.preset {
        return Ok((preset.config(), preset.name().to_owned()));
    }
    let path = args.config.as_deref().expect("clap requires --preset or --config");
    let text =
        fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let config = ModelConfig::from_json(&text).with_context(|| format!("config {}", path.display()))?;
    Ok((config, path.display().to_string()))
}

fn load_weights(path: &Path) -> Result<WeightStore> {
    WeightStore::load(path).with_context(|| format!("weights {}", path.display()))
}

fn frame_id(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn thread_pool(jobs: std::num::NonZeroUsize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs.get()).build()?)
}

fn load_frames(paths: &[PathBuf], pool: &rayon::ThreadPool) -> Result<Vec<RadarFrame>> {
    pool.install(|| {
        paths.par_iter().map(|p| load_frame_csv(p).with_context(|| format!("frame {}", p.display()))).collect()
    })
}

/// Writes `text` to `path`, or to stdout when there is no path.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(Error::Io).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().lock().write_all(text.as_bytes()).map_err(Error::Io)?;
            Ok(())
        }
    }
}

fn to_json(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn parse_ablation(spec: &str) -> Result<(AblationAxis, Vec<usize>)> {
    let usage = || Error::Usage(format!("--ablate expects AXIS=V1,V2,.. (got `{spec}`)"));
    let (axis, values) = spec.split_once('=').ok_or_else(usage)?;
    let values = values.split(',').map(|v| v.trim().parse::<usize>().map_err(|_| usage())).collect::<Result<_, _>>()?;
    Ok((axis.trim().parse()?, values))
}

pub fn analyze(args: AnalyzeArgs) -> Result<()> {
    let (config, name) = load_config(&args.model)?;
    let text = if let Some(spec) = &args.ablate {
        let (axis, values) = parse_ablation(spec)?;
        let report = ablation_report(&config, axis, &values)?;
        match args.format {
            Format::Json => to_json(&report),
            Format::Text => report.to_string(),
        }
    } else {
        let report = analyze_model(&config, args.input, name)?;
        match args.format {
            Format::Json => to_json(&report),
            Format::Text => report.to_text(),
        }
    };
    emit(args.output.as_deref(), &text)
}

pub fn infer(args: InferArgs) -> Result<()> {
    let (config, _) = load_config(&args.model)?;
    let weights = load_weights(&args.weights)?;
    let post = PostprocessConfig {
        score_threshold: args.score_threshold,
        iou_threshold: args.iou_threshold,
        per_class: !args.global_nms,
    };
    let detector = Detector::new(config, &weights, post)?;
    let pool = thread_pool(args.jobs)?;
    let frames = load_frames(&args.input, &pool)?;
    let per_frame: Vec<Vec<FramedDetection>> = pool.install(|| {
        frames
            .par_iter()
            .zip(&args.input)
            .map(|(frame, path)| {
                let id = frame_id(path);
                let dets = detector.detect(frame).with_context(|| format!("frame {}", path.display()))?;
                Ok(dets.into_iter().map(|detection| FramedDetection { frame_id: id.clone(), detection }).collect())
            })
            .collect::<Result<_>>()
    })?;
    let all: Vec<FramedDetection> = per_frame.into_iter().flatten().collect();
    emit(args.output.as_deref(), &detections_to_json(&all))?;
    let summary = format!("{} detections from {} frame(s)", all.len(), frames.len());
    if args.output.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchRow<'a> {
    model: &'a str,
    #[serde(flatten)]
    stats: &'a BenchmarkStats,
}

fn bench_frames(args: &BenchArgs, config: &ModelConfig, pool: &rayon::ThreadPool) -> Result<Vec<RadarFrame>> {
    let frames = match (args.synthetic, &args.frames) {
        (Some(n), _) => {
            let spec = SceneSpec {
                seed: args.seed,
                point_features: config.point_features,
                grid: config.grid,
                ..SceneSpec::default()
            };
            pool.install(|| {
                (0..n).into_par_iter().map(|i| Ok(generate_scene(&spec.for_frame(i))?.0)).collect::<Result<Vec<_>>>()
            })?
        }
        (None, Some(dir)) => {
            let mut paths: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(Error::Io)
                .with_context(|| format!("frames directory {}", dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            paths.sort();
            load_frames(&paths, pool)?
        }
        (None, None) => return Err(Error::Usage("bench needs --synthetic N or --frames DIR".into()).into()),
    };
    if frames.is_empty() {
        return Err(Error::Usage("bench needs at least one frame".into()).into());
    }
    Ok(frames)
}

pub fn bench(args: BenchArgs) -> Result<()> {
    if args.reps == 0 {
        return Err(Error::Usage("--reps must be at least 1".into()).into());
    }
    let models: Vec<(ModelConfig, String)> = match &args.config {
        Some(path) => vec![load_config(&ModelArgs { preset: None, config: Some(path.clone()) })?],
        None => args.preset.iter().map(|p| (p.config(), p.name().to_owned())).collect(),
    };
    if args.weights.is_some() && models.len() > 1 {
        return Err(Error::Usage("--weights fits one model; time presets one at a time".into()).into());
    }
    let pool = thread_pool(args.jobs)?;
    let frames = bench_frames(&args, &models[0].0, &pool)?;
    let post = PostprocessConfig::default();
    let detectors = models
        .iter()
        .map(|(config, _)| match &args.weights {
            Some(path) => Ok(Detector::new(config.clone(), &load_weights(path)?, post)?),
            None => Ok(Detector::seeded(config.clone(), args.seed, post)?),
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Detector> = detectors.iter().collect();
    let stats = paired_benchmark(&refs, &frames, args.warmup, args.reps)?;
    let text = match args.format {
        Format::Json => {
            let rows: Vec<BenchRow> =
                models.iter().zip(&stats).map(|((_, model), stats)| BenchRow { model, stats }).collect();
            to_json(&rows)
        }
        Format::Text => models.iter().zip(&stats).map(|((_, name), s)| format!("{name}\n{s}\n")).collect(),
    };
    emit(None, &text)
}

fn read_eval_input(path: &Path, what: &str) -> Result<String> {
    Ok(fs::read_to_string(path).map_err(|e| Error::Eval(format!("cannot read {what} {}: {e}", path.display())))?)
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let gts = ground_truth_from_json(&read_eval_input(&args.gt, "ground truth")?)?;
    let flat = detections_from_json(&read_eval_input(&args.dets, "detections")?)?;
    let dets = group_by_frame(flat, &gts)?;
    let result = evaluate(&dets, &gts, &args.thresholds)?;
    let text = match args.format {
        Format::Json => to_json(&result),
        Format::Text => result.to_string(),
    };
    emit(None, &text)
}

pub fn synth(args: SynthArgs) -> Result<()> {
    if args.frames == 0 {
        return Err(Error::Usage("--frames must be at least 1".into()).into());
    }
    let spec = SceneSpec {
        seed: args.seed,
        objects: ObjectCounts {
            car: args.cars,
            truck: args.trucks,
            pedestrian: args.pedestrians,
            bicycle: args.bicycles,
        },
        points_per_object: [args.points_per_object[0], args.points_per_object[1]],
        clutter_points: args.clutter,
        min_separation: args.min_separation,
        point_features: args.features,
        ..SceneSpec::default()
    };
    spec.validate()?;
    fs::create_dir_all(&args.out).map_err(Error::Io).with_context(|| format!("creating {}", args.out.display()))?;
    let pool = thread_pool(args.jobs)?;
    let scenes = pool.install(|| {
        (0..args.frames)
            .into_par_iter()
            .map(|i| {
                let (frame, boxes) = generate_scene(&spec.for_frame(i))?;
                let path = args.out.join(format!("frame_{i}.csv"));
                save_frame_csv(&path, &frame).with_context(|| format!("writing {}", path.display()))?;
                Ok(FrameGroundTruth { frame_id: format!("frame_{i}"), boxes })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    emit(Some(&args.out.join("gt.json")), &ground_truth_to_json(&scenes))?;
    if let Some(noise) = args.oracle_noise {
        let mut dets = Vec::new();
        for (i, gt) in scenes.iter().enumerate() {
            let scores = ScoreModel::Uniform { low: 0.1, high: 1.0 };
            for detection in oracle_detector(&gt.boxes, noise, scores, spec.for_frame(i).seed)? {
                dets.push(FramedDetection { frame_id: gt.frame_id.clone(), detection });
            }
        }
        emit(Some(&args.out.join("dets.json")), &detections_to_json(&dets))?;
    }
    println!("wrote {} frame(s) to {}", args.frames, args.out.display());
    Ok(())
}

pub fn init_weights(args: InitWeightsArgs) -> Result<()> {
    let (config, name) = load_config(&args.model)?;
    let graph = build_graph(&config)?;
    let store = WeightStore::seeded(&graph, args.seed);
    store.save(&args.output).with_context(|| format!("writing {}", args.output.display()))?;
    println!("{name}: {} tensors written to {}", store.len(), args.output.display());
    Ok(())
}
