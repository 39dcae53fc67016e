//! Pipeline driver: dataset generation, teacher training, distillation,
//! latent export, flow training, streaming rollouts, evaluation, and the
//! merged metric report. Every stage writes into `runs/<name>/<stage>/`
//! with its resolved `config.json` alongside the artifacts, and every
//! binary artifact embeds the config hash so `report` can verify that one
//! configuration produced the whole table.

use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use daji::act::{
    distill_train, export_latents, sample_intent, ActPolicy, DecodeNoise, LatentTrajectory,
    TeacherSource,
};
use daji::config::{load_config, Config};
use daji::deploy::{
    latency_report, run_stream, save_rollout, FlowChunkSource, InstructionStream, Mode,
    RolloutRecord,
};
use daji::eval::{
    diversity, execution_metrics, fid, latent_corr, multimodality, probe_future,
    retrieval_metrics, train_evaluator, transition_metrics, Evaluator, FeatureSet,
};
use daji::flow::{train_flow, FlowModel};
use daji::io::{load_checkpoint_into, read_latent, read_motion, write_checkpoint, write_latent, write_motion};
use daji::numerics::RngStream;
use daji::sim::{
    gen_reference_dataset, BipedModel, DatasetManifest, Frame, MotionClip, OffsetSet, Termination,
    FPS,
};
use daji::teacher::{train_teacher, TeacherPolicy, TrackingEnv};

type CliResult<T = ()> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "daji", about = "Hierarchical instruction-to-motion pipeline on a planar biped")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Base config file (JSON). Defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. --set flow.total_steps=200. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run name; artifacts land in <runs-dir>/<run>/<stage>/.
    #[arg(long, default_value = "default")]
    run: String,
    /// Root directory for run artifacts.
    #[arg(long, default_value = "runs")]
    runs_dir: PathBuf,
    /// Force bit-reproducible execution (lockstep streaming, zero-init
    /// decode noise).
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the scripted reference dataset.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the privileged tracking teacher (or register the scripted
    /// oracle controller as the teacher).
    TrainTeacher {
        #[command(flatten)]
        common: Common,
        /// Use the scripted oracle controller instead of PPO training.
        #[arg(long)]
        oracle: bool,
    },
    /// Distill the teacher into the joint-intent diffusion policy.
    DistillAct {
        #[command(flatten)]
        common: Common,
    },
    /// Export per-frame mean-code latent trajectories for every clip.
    ExportLatents {
        #[command(flatten)]
        common: Common,
    },
    /// Train the flow-matching chunk generator on exported latents.
    TrainFlow {
        #[command(flatten)]
        common: Common,
    },
    /// Run streaming rollouts from an instruction stream.
    Rollout {
        #[command(flatten)]
        common: Common,
        /// Instruction stream JSON: {"entries": [[frame, instruction], ...]}.
        #[arg(long)]
        stream: Option<PathBuf>,
        /// Rollout horizon in seconds (default from config).
        #[arg(long)]
        horizon: Option<f64>,
        /// Streaming mode: lockstep | async (default from config).
        #[arg(long)]
        mode: Option<String>,
    },
    /// Compute the full metric table over dataset and rollouts.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Latent diagnostics: future-state probe and temporal correlation.
    Probe {
        #[command(flatten)]
        common: Common,
        /// Probe horizon in frames.
        #[arg(long, default_value_t = 40)]
        horizon: usize,
        /// Ridge regularizer for the linear probe.
        #[arg(long, default_value_t = 0.1)]
        ridge: f64,
    },
    /// Merge stage reports, verify a single config hash, print the table.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn main() {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::GenData { common } => cmd_gen_data(&common),
        Cmd::TrainTeacher { common, oracle } => cmd_train_teacher(&common, oracle),
        Cmd::DistillAct { common } => cmd_distill_act(&common),
        Cmd::ExportLatents { common } => cmd_export_latents(&common),
        Cmd::TrainFlow { common } => cmd_train_flow(&common),
        Cmd::Rollout { common, stream, horizon, mode } => cmd_rollout(&common, stream.as_deref(), horizon, mode.as_deref()),
        Cmd::Eval { common } => cmd_eval(&common),
        Cmd::Probe { common, horizon, ridge } => cmd_probe(&common, horizon, ridge),
        Cmd::Report { common } => cmd_report(&common),
    };
    if let Err(e) = r {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn err(msg: String) -> Box<dyn Error> {
    msg.into()
}

fn resolve_config(common: &Common) -> CliResult<Config> {
    Ok(load_config(common.config.as_deref(), &common.set)?)
}

fn stage_dir(common: &Common, stage: &str) -> PathBuf {
    common.runs_dir.join(&common.run).join(stage)
}

fn prepare_stage(common: &Common, stage: &str, cfg: &Config) -> CliResult<PathBuf> {
    let dir = stage_dir(common, stage);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.json"), cfg.to_json())?;
    Ok(dir)
}

/// Explicit dependency error naming the missing upstream stage.
fn require_artifact(path: &Path, produced_by: &str) -> CliResult {
    if !path.exists() {
        return Err(err(format!(
            "missing artifact {} — run `daji {produced_by}` first",
            path.display()
        )));
    }
    Ok(())
}

fn offsets_from(cfg: &Config) -> CliResult<OffsetSet> {
    OffsetSet::parse(&cfg.obs.variant)
        .ok_or_else(|| err(format!("unknown observation variant {:?}", cfg.obs.variant)))
}

fn load_dataset(common: &Common) -> CliResult<(DatasetManifest, Vec<MotionClip>)> {
    let dir = stage_dir(common, "dataset");
    let manifest_path = dir.join("manifest.json");
    require_artifact(&manifest_path, "gen-data")?;
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    let mut clips = Vec::with_capacity(manifest.clips.len());
    for meta in &manifest.clips {
        let path = dir.join(format!("clip_{:03}.dajm", meta.index));
        require_artifact(&path, "gen-data")?;
        let (clip, _fps) = read_motion(&path)?;
        clips.push(clip);
    }
    Ok((manifest, clips))
}

fn load_latents(common: &Common) -> CliResult<Vec<LatentTrajectory>> {
    let dir = stage_dir(common, "latents");
    require_artifact(&dir.join("clip_000.dajz"), "export-latents")?;
    let mut out = Vec::new();
    for i in 0.. {
        let path = dir.join(format!("clip_{i:03}.dajz"));
        if !path.exists() {
            break;
        }
        // The latent container does not persist the clip index; files are
        // written in clip order.
        let mut traj = read_latent(&path)?;
        traj.clip_index = i;
        out.push(traj);
    }
    Ok(out)
}

fn build_env(cfg: &Config, clips: Vec<MotionClip>) -> CliResult<(BipedModel, TrackingEnv)> {
    let model = BipedModel::new(cfg.sim.clone());
    let offsets = offsets_from(cfg)?;
    let mut env = TrackingEnv::new(model.clone(), clips, offsets);
    env.reward_cfg = cfg.reward.clone();
    Ok((model, env))
}

fn warn_hash(loaded: &[u8; 32], cfg: &Config, what: &str) {
    if loaded != &cfg.hash() {
        eprintln!("warning: {what} checkpoint was produced under a different config (hash mismatch)");
    }
}

fn load_act_policy(common: &Common, cfg: &Config) -> CliResult<ActPolicy> {
    let path = stage_dir(common, "act").join("checkpoint.dajc");
    require_artifact(&path, "distill-act")?;
    let mut policy = ActPolicy::new(cfg.act.clone(), offsets_from(cfg)?, cfg.seed);
    let (_step, hash) = load_checkpoint_into(&path, &mut policy.params, &mut policy.opt)?;
    warn_hash(&hash, cfg, "policy");
    policy.trained = true;
    Ok(policy)
}

fn load_flow_model(common: &Common, cfg: &Config) -> CliResult<FlowModel> {
    let path = stage_dir(common, "flow").join("checkpoint.dajc");
    require_artifact(&path, "train-flow")?;
    let mut model = FlowModel::new(cfg.flow.clone(), cfg.seed);
    let (_step, hash) = load_checkpoint_into(&path, &mut model.params, &mut model.opt)?;
    warn_hash(&hash, cfg, "generator");
    model.trained = true;
    Ok(model)
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> CliResult {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(r);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

fn cmd_gen_data(common: &Common) -> CliResult {
    let cfg = resolve_config(common)?;
    let dir = prepare_stage(common, "dataset", &cfg)?;
    let model = BipedModel::new(cfg.sim.clone());
    let ds = gen_reference_dataset(&cfg.dataset, &model, cfg.seed);
    for (i, clip) in ds.clips.iter().enumerate() {
        write_motion(&dir.join(format!("clip_{i:03}.dajm")), clip, FPS)?;
    }
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&ds.manifest)?)?;
    let frames: usize = ds.clips.iter().map(|c| c.len()).sum();
    println!(
        "dataset: {} clips ({} multi-segment), {} frames, {} instructions -> {}",
        ds.clips.len(),
        ds.manifest.clips.iter().filter(|m| m.multi_segment).count(),
        frames,
        ds.manifest.instructions.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_train_teacher(common: &Common, oracle: bool) -> CliResult {
    let cfg = resolve_config(common)?;
    let dir = prepare_stage(common, "teacher", &cfg)?;
    if oracle {
        fs::write(
            dir.join("teacher.json"),
            serde_json::to_string_pretty(&serde_json::json!({
                "kind": "oracle",
                "config_hash": cfg.hash_hex(),
            }))?,
        )?;
        println!("teacher: registered scripted oracle controller -> {}", dir.display());
        return Ok(());
    }
    let (_manifest, clips) = load_dataset(common)?;
    let (_model, env) = build_env(&cfg, clips)?;
    let (policy, log) = train_teacher(&env, &cfg.teacher, &cfg.ppo, cfg.seed)?;
    write_checkpoint(
        &dir.join("checkpoint.dajc"),
        &policy.params,
        &policy.opt,
        log.len() as u64,
        &cfg.hash(),
    )?;
    fs::write(
        dir.join("teacher.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "kind": "policy",
            "config_hash": cfg.hash_hex(),
        }))?,
    )?;
    let rows: Vec<String> = log
        .iter()
        .enumerate()
        .map(|(i, r)| {
            format!(
                "{i},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.frames,
                r.stats.mean_reward,
                r.stats.policy_loss,
                r.stats.value_loss,
                r.stats.entropy,
                r.stats.clip_fraction
            )
        })
        .collect();
    write_csv(
        &dir.join("log.csv"),
        "step,frames,mean_reward,policy_loss,value_loss,entropy,clip_fraction",
        &rows,
    )?;
    let last = log.last().map(|r| r.stats.mean_reward).unwrap_or(f64::NAN);
    println!("teacher: {} updates, final mean reward {last:.4} -> {}", log.len(), dir.display());
    Ok(())
}

fn load_teacher_source(common: &Common, cfg: &Config, model: &BipedModel) -> CliResult<TeacherSource> {
    let dir = stage_dir(common, "teacher");
    let marker = dir.join("teacher.json");
    require_artifact(&marker, "train-teacher")?;
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(&marker)?)?;
    match meta["kind"].as_str() {
        Some("oracle") => Ok(TeacherSource::oracle()),
        Some("policy") => {
            let path = dir.join("checkpoint.dajc");
            require_artifact(&path, "train-teacher")?;
            let mut policy =
                TeacherPolicy::new(cfg.teacher.clone(), offsets_from(cfg)?, model.nominal_q, cfg.seed);
            let (_step, hash) = load_checkpoint_into(&path, &mut policy.params, &mut policy.opt)?;
            warn_hash(&hash, cfg, "teacher");
            Ok(TeacherSource::Policy(Box::new(policy)))
        }
        other => Err(err(format!("teacher.json has unknown kind {other:?}"))),
    }
}

fn cmd_distill_act(common: &Common) -> CliResult {
    let cfg = resolve_config(common)?;
    let (_manifest, clips) = load_dataset(common)?;
    let (model, env) = build_env(&cfg, clips)?;
    let teacher = load_teacher_source(common, &cfg, &model)?;
    let dir = prepare_stage(common, "act", &cfg)?;
    let (policy, log) = distill_train(&env, &teacher, &cfg.act, cfg.seed)?;
    write_checkpoint(
        &dir.join("checkpoint.dajc"),
        &policy.params,
        &policy.opt,
        log.len() as u64,
        &cfg.hash(),
    )?;
    let rows: Vec<String> = log
        .iter()
        .enumerate()
        .map(|(i, r)| {
            format!(
                "{i},{},{:.6},{:.6},{:.6},{:.6}",
                r.frames, r.denoise_loss, r.kl, r.total_loss, r.mean_reward
            )
        })
        .collect();
    write_csv(&dir.join("log.csv"), "step,frames,denoise_loss,kl,total_loss,mean_reward", &rows)?;
    let last = log.last().map(|r| r.mean_reward).unwrap_or(f64::NAN);
    println!("act: {} updates, final mean reward {last:.4} -> {}", log.len(), dir.display());
    Ok(())
}

fn cmd_export_latents(common: &Common) -> CliResult {
    let cfg = resolve_config(common)?;
    let (_manifest, clips) = load_dataset(common)?;
    let policy = load_act_policy(common, &cfg)?;
    let dir = prepare_stage(common, "latents", &cfg)?;
    let trajs = export_latents(&clips, &policy);
    for (i, t) in trajs.iter().enumerate() {
        write_latent(&dir.join(format!("clip_{i:03}.dajz")), t)?;
    }
    let frames: usize = trajs.iter().map(|t| t.frames()).sum();
    println!("latents: {} trajectories, {frames} frames, d_z={} -> {}", trajs.len(), cfg.act.dz, dir.display());
    Ok(())
}

fn cmd_train_flow(common: &Common) -> CliResult {
    let cfg = resolve_config(common)?;
    let corpus = load_latents(common)?;
    let dir = prepare_stage(common, "flow", &cfg)?;
    let (model, log) = train_flow(&corpus, &cfg.flow, cfg.seed)?;
    write_checkpoint(
        &dir.join("checkpoint.dajc"),
        &model.params,
        &model.opt,
        log.len() as u64,
        &cfg.hash(),
    )?;
    let rows: Vec<String> = log
        .iter()
        .map(|r| {
            format!(
                "{},{:.8},{:.4},{},{:.6},{:.6},{:.6}",
                r.step, r.lr, r.p_sc, r.used_sc as u8, r.loss, r.l1, r.lsc
            )
        })
        .collect();
    write_csv(&dir.join("log.csv"), "step,lr,p_sc,used_sc,loss,l1,lsc", &rows)?;
    let last = log.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!("flow: {} steps, final loss {last:.6} -> {}", log.len(), dir.display());
    Ok(())
}

#[derive(serde::Deserialize)]
struct StreamFile {
    entries: Vec<(usize, u32)>,
}

fn resolve_stream(
    path: Option<&Path>,
    horizon_s: f64,
    n_instructions: usize,
) -> CliResult<InstructionStream> {
    let entries = match path {
        Some(p) => {
            require_artifact(p, "<author the stream file>")?;
            let f: StreamFile = serde_json::from_str(&fs::read_to_string(p)?)?;
            f.entries
        }
        None => {
            // Default: three equal segments cycling through instructions.
            let frames = (horizon_s * FPS) as usize;
            (0..3).map(|k| (k * frames / 3, (k % n_instructions) as u32)).collect()
        }
    };
    Ok(InstructionStream::new(entries)?)
}

fn termination_str(t: Termination) -> &'static str {
    match t {
        Termination::Ok => "ok",
        Termination::FellHeight => "fell_height",
        Termination::FellOrientation => "fell_orientation",
    }
}

fn save_rollout_summary(dir: &Path, record: &RolloutRecord) -> CliResult {
    let summary = serde_json::json!({
        "termination": termination_str(record.termination),
        "boundaries": record.boundaries,
        "underruns": record.underruns,
        "encode_count": record.encode_count,
        "mode": if record.mode == Mode::Async { "async" } else { "lockstep" },
        "decode_ms": record.decode_ms,
        "chunk_ms": record.chunk_ms,
    });
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

fn load_rollout_records(common: &Common) -> CliResult<Vec<RolloutRecord>> {
    let dir = stage_dir(common, "rollout");
    require_artifact(&dir.join("roll_000").join("summary.json"), "rollout")?;
    let mut out = Vec::new();
    for i in 0.. {
        let rd = dir.join(format!("roll_{i:03}"));
        if !rd.join("summary.json").exists() {
            break;
        }
        let (motion, _fps) = read_motion(&rd.join("motion.dajm"))?;
        let latents = read_latent(&rd.join("latents.dajz"))?;
        let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(rd.join("summary.json"))?)?;
        let vecf = |key: &str| -> Vec<f64> {
            s[key].as_array().map(|a| a.iter().filter_map(|v| v.as_f64()).collect()).unwrap_or_default()
        };
        let termination = match s["termination"].as_str() {
            Some("ok") => Termination::Ok,
            Some("fell_orientation") => Termination::FellOrientation,
            _ => Termination::FellHeight,
        };
        out.push(RolloutRecord {
            motion,
            latents,
            decode_ms: vecf("decode_ms"),
            chunk_ms: vecf("chunk_ms"),
            termination,
            boundaries: s["boundaries"]
                .as_array()
                .map(|a| a.iter().filter_map(|v| v.as_u64().map(|u| u as usize)).collect())
                .unwrap_or_default(),
            underruns: s["underruns"].as_u64().unwrap_or(0) as usize,
            encode_count: s["encode_count"].as_u64().unwrap_or(0) as usize,
            mode: if s["mode"] == "async" { Mode::Async } else { Mode::Lockstep },
        });
    }
    Ok(out)
}

fn cmd_rollout(
    common: &Common,
    stream_path: Option<&Path>,
    horizon: Option<f64>,
    mode: Option<&str>,
) -> CliResult {
    let cfg = resolve_config(common)?;
    let act = load_act_policy(common, &cfg)?;
    let flow = load_flow_model(common, &cfg)?;
    let dir = prepare_stage(common, "rollout", &cfg)?;
    let model = BipedModel::new(cfg.sim.clone());

    let horizon_s = horizon.unwrap_or(cfg.deploy.horizon_s);
    let mode_name = mode.unwrap_or(&cfg.deploy.mode);
    let mode = match (common.deterministic, mode_name) {
        (true, _) | (false, "lockstep") => Mode::Lockstep,
        (false, "async") => Mode::Async,
        (false, other) => return Err(err(format!("unknown mode {other:?} (lockstep | async)"))),
    };
    let stream = resolve_stream(stream_path, horizon_s, flow.config.n_instructions)?;
    fs::write(
        dir.join("stream.json"),
        serde_json::to_string_pretty(&serde_json::json!({ "entries": stream.entries }))?,
    )?;

    let mut ok = 0usize;
    let mut rows = Vec::new();
    for i in 0..cfg.deploy.rollouts {
        let seed = cfg.seed.wrapping_add(i as u64);
        let mut source = FlowChunkSource::new(flow.clone(), seed);
        let record = run_stream(&mut source, &act, &model, &stream, horizon_s, mode, seed)?;
        let rd = dir.join(format!("roll_{i:03}"));
        save_rollout(&rd, &record)?;
        save_rollout_summary(&rd, &record)?;
        let lat = latency_report(&record);
        ok += record.succeeded() as usize;
        rows.push(format!(
            "{i},{seed},{},{},{},{:.4},{:.4},{:.4},{:.4}",
            record.motion.len(),
            termination_str(record.termination),
            lat.underruns,
            lat.decode_mean_ms,
            lat.decode_p95_ms,
            lat.chunk_mean_ms,
            lat.realtime_margin_ms,
        ));
    }
    write_csv(
        &dir.join("rollouts.csv"),
        "rollout,seed,frames,termination,underruns,decode_mean_ms,decode_p95_ms,chunk_mean_ms,realtime_margin_ms",
        &rows,
    )?;
    println!(
        "rollout: {}/{} survived {horizon_s:.0}s ({:?}) -> {}",
        ok,
        cfg.deploy.rollouts,
        mode,
        dir.display()
    );
    Ok(())
}

/// Tracking rollouts of the distilled policy against reference clips,
/// used for the tracking-error column of the metric table.
fn tracking_records(
    cfg: &Config,
    clips: &[MotionClip],
    act: &ActPolicy,
    max_clips: usize,
) -> CliResult<(Vec<RolloutRecord>, Vec<MotionClip>)> {
    let (model, mut env) = build_env(cfg, clips.to_vec())?;
    let mut records = Vec::new();
    let mut refs = Vec::new();
    let mut rng = RngStream::new(cfg.seed, 97);
    for idx in 0..clips.len().min(max_clips) {
        let mut obs = env.reset(idx);
        let mut frames = vec![Frame::from_state(&model, env.state())];
        let mut zs: Vec<f64> = Vec::new();
        let mut termination = Termination::Ok;
        loop {
            let posterior = act.intent_posterior(&obs.reference);
            let z = sample_intent(&posterior, &mut rng, true);
            zs.extend_from_slice(&z);
            let action = act.act_decode(&obs.prop, &z, DecodeNoise::Seeded(&mut rng));
            let out = env.step(action);
            frames.push(Frame::from_state(&model, env.state()));
            if out.terminated {
                termination = Termination::FellHeight;
            }
            if out.done {
                break;
            }
            obs = out.obs;
        }
        let n = frames.len();
        zs.resize(n * cfg.act.dz, 0.0);
        records.push(RolloutRecord {
            motion: MotionClip { frames, segments: clips[idx].segments.clone() },
            latents: LatentTrajectory {
                clip_index: idx,
                dz: cfg.act.dz,
                latents: zs,
                instruction_ids: vec![0; n],
            },
            decode_ms: vec![0.0],
            chunk_ms: vec![],
            termination,
            boundaries: vec![],
            underruns: 0,
            encode_count: 0,
            mode: Mode::Lockstep,
        });
        refs.push(clips[idx].clone());
    }
    Ok((records, refs))
}

fn metric_rows(
    rows: &mut Vec<String>,
    items: &[(&str, f64, &str)],
    seed: u64,
    hash: &str,
) {
    for (metric, value, split) in items {
        rows.push(format!("{metric},{value:.6},{split},{seed},{hash}"));
    }
}

fn single_segment_pairs(
    manifest: &DatasetManifest,
    clips: &[MotionClip],
) -> (Vec<(u32, MotionClip)>, Vec<MotionClip>) {
    let mut pairs = Vec::new();
    let mut multi = Vec::new();
    for (meta, clip) in manifest.clips.iter().zip(clips) {
        if meta.multi_segment {
            multi.push(clip.clone());
        } else {
            pairs.push((meta.instruction_ids[0], clip.clone()));
        }
    }
    (pairs, multi)
}

fn pair_features(ev: &Evaluator, pairs: &[(u32, MotionClip)]) -> (FeatureSet, FeatureSet) {
    let d = ev.config.d_e;
    let mut trows = Vec::new();
    let mut mrows = Vec::new();
    for (id, clip) in pairs {
        trows.extend(ev.embed_text(*id));
        mrows.extend(ev.embed_motion(clip));
    }
    (FeatureSet::new(trows, d, "text"), FeatureSet::new(mrows, d, "motion"))
}

fn cmd_eval(common: &Common) -> CliResult {
    let cfg = resolve_config(common)?;
    let (manifest, clips) = load_dataset(common)?;
    let records = load_rollout_records(common)?;
    let act = load_act_policy(common, &cfg)?;
    let flow = load_flow_model(common, &cfg)?;
    let dir = prepare_stage(common, "eval", &cfg)?;
    let model = BipedModel::new(cfg.sim.clone());
    let hash = cfg.hash_hex();
    let mut rng = RngStream::new(cfg.seed, 91);

    let (pairs, multi_clips) = single_segment_pairs(&manifest, &clips);
    let ev = train_evaluator(&pairs, &cfg.eval, cfg.seed)?;
    let mut rows: Vec<String> = Vec::new();

    // Text-motion alignment on the reference corpus.
    let (text_fs, motion_fs) = pair_features(&ev, &pairs);
    let batch = cfg.eval.retrieval_batch.min(pairs.len());
    let ret = retrieval_metrics(&text_fs, &motion_fs, batch, &mut rng)?;
    metric_rows(
        &mut rows,
        &[
            ("mm_d", ret.mm_d, "reference"),
            ("r_precision_1", ret.r1, "reference"),
            ("r_precision_2", ret.r2, "reference"),
            ("r_precision_3", ret.r3, "reference"),
        ],
        cfg.seed,
        &hash,
    );

    // Feature-space metrics of the generated rollouts against references.
    let gen_clips: Vec<&MotionClip> = records.iter().map(|r| &r.motion).collect();
    let ref_clips: Vec<&MotionClip> = clips.iter().collect();
    let gen_fs = FeatureSet::from_clips(&ev, &gen_clips, "generated");
    let ref_fs = FeatureSet::from_clips(&ev, &ref_clips, "reference");
    let fid_v = fid(&gen_fs, &ref_fs)?;
    let div_v = diversity(&gen_fs, 1000, &mut rng)?;
    metric_rows(
        &mut rows,
        &[("fid", fid_v, "generated"), ("diversity", div_v, "generated")],
        cfg.seed,
        &hash,
    );

    // MultiModality: repeated short generations per instruction.
    let mut labels: Vec<u32> = pairs.iter().map(|(id, _)| *id).collect();
    labels.sort_unstable();
    labels.dedup();
    labels.truncate(2);
    let mm_horizon = 3.0;
    let generate = |text: u32, rep: u64| -> Option<MotionClip> {
        let seed = cfg.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(rep + 1 + text as u64));
        let stream = InstructionStream::new(vec![(0, text)]).ok()?;
        let mut source = FlowChunkSource::new(flow.clone(), seed);
        let rec = run_stream(&mut source, &act, &model, &stream, mm_horizon, Mode::Lockstep, seed).ok()?;
        (rec.motion.len() >= 30).then_some(rec.motion)
    };
    let (mm_v, mm_failures) = multimodality(&ev, &labels, generate, 3, &mut rng)?;
    metric_rows(
        &mut rows,
        &[("multimodality", mm_v, "generated"), ("multimodality_failures", mm_failures as f64, "generated")],
        cfg.seed,
        &hash,
    );

    // Transition quality around instruction switches.
    match transition_metrics(&records, &multi_clips, &ev, &mut rng)? {
        Some(t) => metric_rows(
            &mut rows,
            &[
                ("t_fid", t.t_fid, "generated"),
                ("t_div", t.t_div, "generated"),
                ("peak_jerk", t.pj, "generated"),
                ("mean_jerk", t.mj, "generated"),
            ],
            cfg.seed,
            &hash,
        ),
        None => eprintln!("warning: no usable transition windows in rollouts; skipping t_fid/t_div/jerk"),
    }

    // Execution metrics: success/fall/skate from streaming rollouts,
    // tracking error from reference-conditioned rollouts.
    let exec = execution_metrics(&records, None);
    let (track_recs, track_refs) = tracking_records(&cfg, &clips, &act, 4)?;
    let track = execution_metrics(&track_recs, Some(&track_refs));
    metric_rows(
        &mut rows,
        &[
            ("success_pct", exec.succ_pct, "generated"),
            ("fall_pct", exec.fall_pct, "generated"),
            ("l_mpjpe_mm", track.l_mpjpe_mm, "tracking"),
            ("skate_mm_s", exec.skate_mm_s, "generated"),
        ],
        cfg.seed,
        &hash,
    );

    // Latency of the streaming runtime.
    let lat: Vec<_> = records.iter().map(latency_report).collect();
    let mean = |f: fn(&daji::deploy::LatencyReport) -> f64| {
        lat.iter().map(f).sum::<f64>() / lat.len() as f64
    };
    let underruns: usize = records.iter().map(|r| r.underruns).sum();
    metric_rows(
        &mut rows,
        &[
            ("decode_mean_ms", mean(|l| l.decode_mean_ms), "generated"),
            ("decode_p95_ms", mean(|l| l.decode_p95_ms), "generated"),
            ("chunk_mean_ms", mean(|l| l.chunk_mean_ms), "generated"),
            ("realtime_margin_ms", mean(|l| l.realtime_margin_ms), "generated"),
            ("underruns", underruns as f64, "generated"),
        ],
        cfg.seed,
        &hash,
    );

    write_csv(&dir.join("report.csv"), "metric,value,split,seed,config_hash", &rows)?;
    println!("eval: {} metrics -> {}", rows.len(), dir.join("report.csv").display());
    Ok(())
}

fn cmd_probe(common: &Common, horizon: usize, ridge: f64) -> CliResult {
    let cfg = resolve_config(common)?;
    let (_manifest, clips) = load_dataset(common)?;
    let trajs = load_latents(common)?;
    let dir = prepare_stage(common, "probe", &cfg)?;
    let hash = cfg.hash_hex();

    let seqs: Vec<daji::eval::ProbeSeq> = trajs
        .iter()
        .map(|t| daji::eval::ProbeSeq {
            dz: t.dz,
            latents: t.latents.clone(),
            q: clips[t.clip_index].frames.iter().map(|f| f.q).collect(),
        })
        .collect();
    let report = probe_future(&seqs, horizon, ridge, 4, 0.75, cfg.seed)?;
    let (corr, excluded) = latent_corr(&trajs, horizon)?;

    let probe_name = format!("probe_at_{horizon}");
    let corr_name = format!("latent_corr_{horizon}");
    let mut rows = Vec::new();
    metric_rows(
        &mut rows,
        &[
            (probe_name.as_str(), report.score, "latents"),
            ("probe_components", report.components as f64, "latents"),
            ("probe_train_rows", report.train_rows as f64, "latents"),
            ("probe_test_rows", report.test_rows as f64, "latents"),
            (corr_name.as_str(), corr, "latents"),
            ("latent_corr_excluded", excluded as f64, "latents"),
        ],
        cfg.seed,
        &hash,
    );
    write_csv(&dir.join("report.csv"), "metric,value,split,seed,config_hash", &rows)?;
    println!(
        "probe: score {:.4} ({} components), latent corr {corr:.4} -> {}",
        report.score,
        report.components,
        dir.join("report.csv").display()
    );
    Ok(())
}

fn cmd_report(common: &Common) -> CliResult {
    let cfg = resolve_config(common)?;
    let eval_csv = stage_dir(common, "eval").join("report.csv");
    require_artifact(&eval_csv, "eval")?;
    let mut merged: Vec<String> = Vec::new();
    let mut hashes: Vec<String> = Vec::new();
    for path in [eval_csv, stage_dir(common, "probe").join("report.csv")] {
        if !path.exists() {
            continue;
        }
        for line in fs::read_to_string(&path)?.lines().skip(1) {
            if line.is_empty() {
                continue;
            }
            let hash = line.rsplit(',').next().unwrap_or("").to_string();
            if !hashes.contains(&hash) {
                hashes.push(hash);
            }
            merged.push(line.to_string());
        }
    }
    if hashes.len() > 1 {
        return Err(err(format!(
            "metric reports span {} different config hashes; regenerate all stages under one config",
            hashes.len()
        )));
    }
    let dir = prepare_stage(common, "report", &cfg)?;
    write_csv(&dir.join("report.csv"), "metric,value,split,seed,config_hash", &merged)?;
    println!("{:<24} {:>14}  {}", "metric", "value", "split");
    for line in &merged {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() >= 3 {
            println!("{:<24} {:>14}  {}", cols[0], cols[1], cols[2]);
        }
    }
    println!("report: {} metrics, config {} -> {}", merged.len(), hashes.first().map(String::as_str).unwrap_or("?"), dir.display());
    Ok(())
}
