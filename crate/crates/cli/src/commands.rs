use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::info;
use serde::{Deserialize, Serialize};
use wakeword_core::checkpoint::{load_checkpoint, save_checkpoint};
use wakeword_core::corpus::{
    augment, balance_speakers, generate_synthetic_corpus, normalized_hash, split_ab, CorpusManifest, NoiseBank,
    SplitSpec,
};
use wakeword_core::decode::{trigger_events, DecoderConfig, ScoreTrajectory};
use wakeword_core::eval::{latency_report, FRAME_MS};
use wakeword_core::pipeline::{decode_manifest, summarize, StreamResult};
use wakeword_core::train::{train_regime, EpochMetrics, LossKind, Regime};

use crate::config::{input, ExperimentConfig};
use crate::error::{Failure, EXIT_CONFIG, EXIT_INFEASIBLE};
use crate::plot::{det_svg, trajectory_svg, Series};
use crate::{
    Cli, Command, DecodeArgs, EvalArgs, LatencyArgs, PlotArgs, PlotKind, PrepareArgs, SplitArgs, SynthArgs, TrainArgs,
};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::Synth(a) => synth(cfg, a),
        Command::Prepare(a) => prepare(cfg, a),
        Command::Split(a) => split(cfg, a),
        Command::Train(a) => train(cfg, a),
        Command::Decode(a) => decode(cfg, a),
        Command::Eval(a) => eval(cfg, a),
        Command::Latency(a) => latency(cfg, a),
        Command::Plot(a) => plot(cfg, a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_manifest(m: &CorpusManifest, path: &Path) -> Result<()> {
    m.write_jsonl(path).with_context(|| format!("writing {}", path.display()))
}

fn read_manifest(path: &Path) -> Result<CorpusManifest> {
    CorpusManifest::read_jsonl(path).with_context(|| format!("reading manifest {}", path.display()))
}

fn synth(mut cfg: ExperimentConfig, a: SynthArgs) -> Result<()> {
    let out = cfg.out_dir(a.out)?;
    let s = &mut cfg.synth;
    s.n_speakers = a.speakers.unwrap_or(s.n_speakers);
    s.n_pos = a.positives.unwrap_or(s.n_pos);
    s.n_neg = a.negatives.unwrap_or(s.n_neg);
    s.neg_duration_s = (a.neg_min_s.unwrap_or(s.neg_duration_s.0), a.neg_max_s.unwrap_or(s.neg_duration_s.1));
    cfg.output_dir = Some(out.clone());
    create_dir(&out)?;

    let corpus = generate_synthetic_corpus(&out, &cfg.synth.to_core(cfg.seed)).context("generating corpus")?;
    let manifest_path = out.join("manifest.jsonl");
    write_manifest(&corpus.manifest, &manifest_path)?;
    let mut noise = create(&out.join("noise.txt"))?;
    for p in &corpus.noise_bank {
        writeln!(noise, "{}", p.strip_prefix(&out).unwrap_or(p).display())?;
    }
    noise.flush()?;
    cfg.corpus.manifest = Some(manifest_path);
    cfg.corpus.noise_list = Some(out.join("noise.txt"));
    cfg.echo(&out, "synth.config.toml")?;
    info!(
        "{} positives, {} negatives ({:.2} h) in {}",
        corpus.manifest.positives().count(),
        corpus.manifest.negatives().count(),
        corpus.manifest.total_hours(),
        out.display()
    );
    Ok(())
}

/// Noise list entries are relative to the list's directory.
fn read_noise_list(path: &Path) -> Result<Vec<PathBuf>> {
    let base = path.parent().unwrap_or(Path::new(""));
    let f = File::open(path).with_context(|| format!("reading noise list {}", path.display()))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        let line = line.trim();
        if !line.is_empty() {
            out.push(base.join(line));
        }
    }
    Ok(out)
}

fn prepare(mut cfg: ExperimentConfig, a: PrepareArgs) -> Result<()> {
    let path = input(a.manifest, &cfg.corpus.manifest, "manifest")?;
    let out = cfg.out_dir(a.out)?;
    let p = &mut cfg.prepare;
    p.augment_copies = a.augment_copies.unwrap_or(p.augment_copies);
    p.min_holdout = a.min_holdout.unwrap_or(p.min_holdout);
    p.train_cap = a.train_cap.unwrap_or(p.train_cap);
    p.eval_cap = a.eval_cap.unwrap_or(p.eval_cap);
    cfg.corpus.manifest = Some(path.clone());
    cfg.output_dir = Some(out.clone());
    create_dir(&out)?;

    let manifest = read_manifest(&path)?;
    let positives = manifest.with_utterances(manifest.positives().cloned().collect());
    let (train_pos, eval_pos) =
        balance_speakers(&positives, &cfg.prepare.balance(cfg.seed)).context("balancing speakers")?;

    // Negatives follow their speaker's side; speakers without positives are
    // split by hash.
    let train_spk: HashSet<&str> = train_pos.utterances.iter().map(|u| u.speaker_id.as_str()).collect();
    let eval_spk: HashSet<&str> = eval_pos.utterances.iter().map(|u| u.speaker_id.as_str()).collect();
    let mut train = train_pos.utterances.clone();
    let mut eval = eval_pos.utterances.clone();
    for u in manifest.negatives() {
        let to_eval = if train_spk.contains(u.speaker_id.as_str()) {
            false
        } else if eval_spk.contains(u.speaker_id.as_str()) {
            true
        } else {
            normalized_hash(&u.speaker_id, cfg.seed) < 0.5
        };
        if to_eval { &mut eval } else { &mut train }.push(u.clone());
    }

    if cfg.prepare.augment_copies > 0 {
        let list = input(a.noise_list, &cfg.corpus.noise_list, "noise list")?;
        cfg.corpus.noise_list = Some(list.clone());
        let bank = NoiseBank::load(&read_noise_list(&list)?).context("loading noise bank")?;
        let aug_cfg = cfg.prepare.augment();
        let aug_dir = out.join("augmented");
        for u in &train_pos.utterances {
            train.extend(augment(&manifest, u, &aug_cfg, &bank, cfg.seed, &aug_dir)?);
        }
    }

    let train = CorpusManifest::new(train, manifest.root.clone())?;
    let eval = CorpusManifest::new(eval, manifest.root.clone())?;
    cfg.corpus.train = Some(out.join("train.jsonl"));
    cfg.corpus.eval = Some(out.join("eval.jsonl"));
    write_manifest(&train, &out.join("train.jsonl"))?;
    write_manifest(&eval, &out.join("eval.jsonl"))?;
    cfg.echo(&out, "prepare.config.toml")?;
    info!("train: {} utterances, eval: {} utterances", train.len(), eval.len());
    Ok(())
}

fn split(mut cfg: ExperimentConfig, a: SplitArgs) -> Result<()> {
    let path = input(a.manifest, &cfg.corpus.train, "training manifest")?;
    let out = cfg.out_dir(a.out)?;
    cfg.split.x_percent = a.x_percent.unwrap_or(cfg.split.x_percent);
    cfg.corpus.train = Some(path.clone());
    cfg.output_dir = Some(out.clone());
    let spec =
        SplitSpec::new(cfg.split.x_percent, cfg.seed).map_err(|e| Failure::new(EXIT_CONFIG, format!("split: {e}")))?;
    create_dir(&out)?;

    let (a_view, b_view) = split_ab(&read_manifest(&path)?, spec);
    let a_path = out.join(format!("A{}.jsonl", spec.x_percent));
    let b_path = out.join(format!("B{}.jsonl", spec.b_percent()));
    write_manifest(&a_view, &a_path)?;
    write_manifest(&b_view, &b_path)?;
    cfg.corpus.train_a = Some(a_path);
    cfg.corpus.train_b = Some(b_path);
    cfg.echo(&out, &format!("split-x{}.config.toml", spec.x_percent))?;
    info!("A[{}]: {} utterances, B[{}]: {}", spec.x_percent, a_view.len(), spec.b_percent(), b_view.len());
    Ok(())
}

fn train(mut cfg: ExperimentConfig, a: TrainArgs) -> Result<()> {
    let out = cfg.out_dir(a.out)?;
    let t = &mut cfg.train;
    if let Some(r) = a.regime {
        t.regime = r.into();
    }
    t.total_epochs = a.epochs.unwrap_or(t.total_epochs);
    t.hybrid_switch_epoch = a.switch_epoch.unwrap_or(t.hybrid_switch_epoch);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.checkpoint_every = a.checkpoint_every.unwrap_or(t.checkpoint_every);
    t.seed = cfg.seed;
    t.validate()?;
    let a_path = input(a.train_a, &cfg.corpus.train_a, "phase-A manifest")?;
    cfg.corpus.train_a = Some(a_path.clone());
    let train_a = read_manifest(&a_path)?;
    let train_b = if cfg.train.regime == Regime::Hybrid {
        let b_path = input(a.train_b, &cfg.corpus.train_b, "phase-B manifest")?;
        cfg.corpus.train_b = Some(b_path.clone());
        read_manifest(&b_path)?
    } else {
        CorpusManifest::empty(".")
    };
    cfg.output_dir = Some(out.clone());
    let ckpt_dir = out.join("checkpoints");
    create_dir(&ckpt_dir)?;
    cfg.echo(&out, "train.config.toml")?;

    let mut metrics = create(&out.join("metrics.jsonl"))?;
    let mut failed: Option<anyhow::Error> = None;
    let every = cfg.train.checkpoint_every;
    let hybrid = cfg.train.regime == Regime::Hybrid;
    let mut observer = |m: &EpochMetrics, params: &_, phase_end: bool| {
        if failed.is_some() {
            return;
        }
        info!("epoch {} {} lr {:.3e} loss {:.5}", m.epoch, m.regime_phase, m.lr, m.mean_loss);
        let mut step = || -> Result<()> {
            writeln!(metrics, "{}", serde_json::to_string(m)?)?;
            if every > 0 && (m.epoch + 1).is_multiple_of(every) {
                save_checkpoint(params, &ckpt_dir.join(format!("epoch_{:04}.wwd", m.epoch + 1)))?;
            }
            if hybrid && phase_end && m.regime_phase == LossKind::Ce {
                save_checkpoint(params, &ckpt_dir.join("switch.wwd"))?;
            }
            Ok(())
        };
        if let Err(e) = step() {
            failed = Some(e);
        }
    };
    let outcome = train_regime(&train_a, &train_b, &cfg.train, &mut observer).context("training")?;
    if let Some(e) = failed {
        return Err(e.context("writing training outputs"));
    }
    metrics.flush()?;
    save_checkpoint(&outcome.params, &out.join("final.wwd")).context("writing final checkpoint")?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StreamRecord {
    id: String,
    positive: bool,
    duration_s: f64,
    frames: usize,
    mean_blank_prob: f64,
    peak: Option<f64>,
    /// Trigger events at the configured threshold.
    events: usize,
    /// Trajectory CSV, relative to the decode directory.
    trajectory: PathBuf,
}

fn file_stem_for(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

fn decode(mut cfg: ExperimentConfig, a: DecodeArgs) -> Result<()> {
    let ckpt = input(a.checkpoint, &cfg.checkpoint, "checkpoint")?;
    let manifest_path = input(a.manifest, &cfg.corpus.eval, "evaluation manifest")?;
    let out = cfg.out_dir(a.out)?;
    let d = &mut cfg.decoder;
    d.window_frames = a.window.unwrap_or(d.window_frames);
    d.window_hop_frames = a.hop.unwrap_or(d.window_hop_frames);
    d.smooth_frames = a.smooth.unwrap_or(d.smooth_frames);
    d.trigger_threshold = a.threshold.unwrap_or(d.trigger_threshold);
    d.refractory_frames = a.refractory.unwrap_or(d.refractory_frames);
    cfg.checkpoint = Some(ckpt.clone());
    cfg.corpus.eval = Some(manifest_path.clone());
    cfg.output_dir = Some(out.clone());

    let params = load_checkpoint(&ckpt, &cfg.features()).with_context(|| format!("loading {}", ckpt.display()))?;
    let manifest = read_manifest(&manifest_path)?;
    let results = decode_manifest(&params, &manifest, &cfg.decoder).context("decoding")?;

    let traj_dir = out.join("trajectories");
    create_dir(&traj_dir)?;
    let mut streams = create(&out.join("streams.jsonl"))?;
    let mut events_csv = create(&out.join("events.csv"))?;
    writeln!(events_csv, "stream,frame,peak")?;
    let mut stems = HashSet::new();
    for r in &results {
        let stem = file_stem_for(&r.id);
        if !stems.insert(stem.clone()) {
            anyhow::bail!("utterance ids {} collide as file names", r.id);
        }
        let rel = PathBuf::from("trajectories").join(format!("{stem}.csv"));
        let mut w = create(&out.join(&rel))?;
        r.trajectory.write_csv(&mut w)?;
        w.flush()?;
        let d = &cfg.decoder;
        let events = trigger_events(&r.id, &r.trajectory, d.trigger_threshold, d.refractory_frames);
        for e in &events {
            writeln!(events_csv, "{},{},{}", e.stream, e.frame, e.peak)?;
        }
        let rec = StreamRecord {
            id: r.id.clone(),
            positive: r.positive,
            duration_s: r.duration_s,
            frames: r.frames,
            mean_blank_prob: r.mean_blank_prob,
            peak: r.trajectory.peak(),
            events: events.len(),
            trajectory: rel,
        };
        writeln!(streams, "{}", serde_json::to_string(&rec)?)?;
    }
    streams.flush()?;
    events_csv.flush()?;
    cfg.echo(&out, "decode.config.toml")?;
    info!("decoded {} streams into {}", results.len(), out.display());
    Ok(())
}

/// Streams of a decode run and the decoder settings that produced them.
fn read_decoded(dir: &Path) -> Result<(Vec<StreamResult>, DecoderConfig)> {
    let echo = dir.join("decode.config.toml");
    let streams = dir.join("streams.jsonl");
    for p in [&echo, &streams] {
        if !p.exists() {
            return Err(Failure::new(
                crate::error::EXIT_MISSING,
                format!("{} is not a decode output ({} missing)", dir.display(), p.display()),
            )
            .into());
        }
    }
    let decoder = ExperimentConfig::load(Some(&echo))?.decoder;
    let f = File::open(&streams).with_context(|| format!("reading {}", streams.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StreamRecord =
            serde_json::from_str(&line).with_context(|| format!("{}:{}", streams.display(), i + 1))?;
        let path = dir.join(&rec.trajectory);
        let f = File::open(&path).with_context(|| format!("reading {}", path.display()))?;
        let trajectory =
            ScoreTrajectory::read_csv(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
        out.push(StreamResult {
            id: rec.id,
            positive: rec.positive,
            duration_s: rec.duration_s,
            trajectory,
            mean_blank_prob: rec.mean_blank_prob,
            frames: rec.frames,
        });
    }
    Ok((out, decoder))
}

#[derive(Debug, Serialize)]
struct EvalReport {
    target_fah: f64,
    frr_at_target: f64,
    threshold_at_target: f64,
    positives: usize,
    negatives: usize,
    negative_hours: f64,
    mean_blank_prob: f64,
    det_points: usize,
}

fn eval(mut cfg: ExperimentConfig, a: EvalArgs) -> Result<()> {
    let decoded = input(a.decoded, &cfg.eval.decoded, "decode directory")?;
    cfg.eval.target_fah = a.target_fah.unwrap_or(cfg.eval.target_fah);
    let out = cfg.out_dir(a.out)?;
    cfg.eval.decoded = Some(decoded.clone());
    cfg.output_dir = Some(out.clone());

    let (results, decoder) = read_decoded(&decoded)?;
    cfg.decoder = decoder;
    let negatives = results.iter().filter(|r| !r.positive).count();
    if negatives == 0 {
        return Err(Failure::new(
            EXIT_INFEASIBLE,
            format!(
                "{} has no negative streams: 0 h of negative audio leaves FAh without a denominator",
                decoded.display()
            ),
        )
        .into());
    }
    let summary = summarize(&results, &cfg.decoder, cfg.eval.target_fah).context("evaluating")?;
    create_dir(&out)?;
    let mut det = create(&out.join("det.csv"))?;
    summary.curve.write_csv(&mut det)?;
    det.flush()?;
    let report = EvalReport {
        target_fah: summary.target_fah,
        frr_at_target: summary.frr_at_target,
        threshold_at_target: summary.threshold_at_target,
        positives: summary.positives,
        negatives,
        negative_hours: summary.negative_hours,
        mean_blank_prob: summary.mean_blank_prob,
        det_points: summary.curve.points.len(),
    };
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    cfg.echo(&out, "eval.config.toml")?;
    println!(
        "FRR {:.2}% at {} FAh (threshold {:.4}; {} positives, {:.3} h negatives)",
        100.0 * report.frr_at_target,
        report.target_fah,
        report.threshold_at_target,
        report.positives,
        report.negative_hours
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct LatencySummary {
    utterances: usize,
    measured: usize,
    mean_ms: Option<f64>,
    std_ms: Option<f64>,
    ce_miss_rate: f64,
    ctc_miss_rate: f64,
}

fn positives(results: Vec<StreamResult>) -> Vec<(String, ScoreTrajectory)> {
    results.into_iter().filter(|r| r.positive).map(|r| (r.id, r.trajectory)).collect()
}

fn latency(mut cfg: ExperimentConfig, a: LatencyArgs) -> Result<()> {
    let ce_dir = input(a.ce, &cfg.latency.ce_decoded, "CE decode directory")?;
    let ctc_dir = input(a.ctc, &cfg.latency.ctc_decoded, "CTC decode directory")?;
    let out = cfg.out_dir(a.out)?;
    cfg.latency.ce_decoded = Some(ce_dir.clone());
    cfg.latency.ctc_decoded = Some(ctc_dir.clone());
    cfg.output_dir = Some(out.clone());

    let (ce, ce_decoder) = read_decoded(&ce_dir)?;
    let (ctc, ctc_decoder) = read_decoded(&ctc_dir)?;
    if ce_decoder != ctc_decoder {
        return Err(Failure::new(EXIT_CONFIG, "CE and CTC streams were decoded with different decoder settings").into());
    }
    cfg.decoder = ce_decoder;
    let report = latency_report(&positives(ce), &positives(ctc)).context("latency")?;
    create_dir(&out)?;
    let mut w = create(&out.join("latency.csv"))?;
    report.write_csv(&mut w)?;
    w.flush()?;
    let summary = LatencySummary {
        utterances: report.rows.len(),
        measured: report.rows.iter().filter(|r| r.latency_ms.is_some()).count(),
        mean_ms: report.mean_ms,
        std_ms: report.std_ms,
        ce_miss_rate: report.ce_miss_rate,
        ctc_miss_rate: report.ctc_miss_rate,
    };
    fs::write(out.join("latency_summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    cfg.echo(&out, "latency.config.toml")?;
    match (summary.mean_ms, summary.std_ms) {
        (Some(m), Some(s)) => println!("latency {m:.1} ± {s:.1} ms over {} utterances", summary.measured),
        _ => println!("latency undefined: no utterance triggered under both models"),
    }
    Ok(())
}

fn read_det_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let f = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = BufReader::new(f).lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != "threshold,fah,frr" {
        anyhow::bail!("{}: not a DET CSV (header {header:?})", path.display());
    }
    let mut pts = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let cols: Vec<&str> = line.trim().split(',').collect();
        let parse =
            |s: &str| s.parse::<f64>().with_context(|| format!("{}:{}: bad number {s:?}", path.display(), i + 2));
        if cols.len() != 3 {
            anyhow::bail!("{}:{}: expected 3 columns", path.display(), i + 2);
        }
        pts.push((parse(cols[1])?, parse(cols[2])?));
    }
    Ok(pts)
}

fn plot(cfg: ExperimentConfig, a: PlotArgs) -> Result<()> {
    if !a.labels.is_empty() && a.labels.len() != a.inputs.len() {
        return Err(Failure::new(EXIT_CONFIG, "give one --label per --input or none").into());
    }
    let mut series = Vec::new();
    for (i, path) in a.inputs.iter().enumerate() {
        let path = input(Some(path.clone()), &None, "plot input")?;
        let label = a
            .labels
            .get(i)
            .cloned()
            .unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
        let points = match a.kind {
            PlotKind::Det => read_det_csv(&path)?,
            PlotKind::Trajectory => {
                let f = File::open(&path).with_context(|| format!("reading {}", path.display()))?;
                let traj = ScoreTrajectory::read_csv(BufReader::new(f))
                    .with_context(|| format!("reading {}", path.display()))?;
                traj.points.iter().map(|&(t, s)| ((t + 1) as f64 * FRAME_MS / 1000.0, s)).collect()
            }
        };
        series.push(Series { label, points });
    }
    let svg = match a.kind {
        PlotKind::Det => det_svg(series),
        PlotKind::Trajectory => trajectory_svg(series, a.threshold),
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    fs::write(&a.out, svg).with_context(|| format!("writing {}", a.out.display()))?;
    let stem = a.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "plot".into());
    cfg.echo(a.out.parent().unwrap_or(Path::new("")), &format!("{stem}.config.toml"))
}
