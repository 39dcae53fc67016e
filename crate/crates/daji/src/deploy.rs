//! Streaming runtime: the chunk generator and the 50 Hz controller run at
//! two rates against a shared chunk buffer. Lockstep mode is the
//! single-threaded ground truth; async mode moves generation to a worker
//! thread with a wait-free controller that holds the last action on
//! underrun.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::act::{ActPolicy, DecodeNoise, LatentTrajectory};
use crate::flow::{generate_chunk, FlowModel, LatentChunk};
use crate::io::{write_latent, write_motion, IoError};
use crate::numerics::RngStream;
use crate::sim::{
    check_termination, sim_step, BipedModel, Frame, MotionClip, Segment, SimHistory, Termination,
    FPS, N_JOINTS,
};

#[derive(Debug, Error)]
pub enum DeployError {
    #[error("invalid instruction stream: {0}")]
    BadStream(String),
    #[error("artifact io: {0}")]
    Io(#[from] IoError),
}

/// Ordered (switch_frame, instruction_id) pairs; the first entry must be
/// at frame 0 and switch frames strictly increase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionStream {
    pub entries: Vec<(usize, u32)>,
}

impl InstructionStream {
    pub fn new(entries: Vec<(usize, u32)>) -> Result<Self, DeployError> {
        if entries.first().map(|e| e.0) != Some(0) {
            return Err(DeployError::BadStream("first entry must be at frame 0".into()));
        }
        for w in entries.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(DeployError::BadStream(format!(
                    "switch frames must strictly increase ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        Ok(InstructionStream { entries })
    }

    pub fn instruction_at(&self, frame: usize) -> u32 {
        self.entries
            .iter()
            .rev()
            .find(|(f, _)| *f <= frame)
            .map(|(_, id)| *id)
            .expect("stream starts at frame 0")
    }

    /// Frames at which the active instruction changes (excludes frame 0).
    pub fn switch_frames(&self) -> Vec<usize> {
        self.entries.iter().skip(1).map(|(f, _)| *f).collect()
    }
}

/// Producer/consumer queue of latent chunks with a consumed-frame cursor.
#[derive(Debug, Default)]
pub struct ChunkBuffer {
    queue: VecDeque<LatentChunk>,
    cursor: usize,
    pub produced_frames: usize,
    pub consumed_frames: usize,
    pub underruns: usize,
}

impl ChunkBuffer {
    pub fn new() -> Self {
        ChunkBuffer::default()
    }

    pub fn push(&mut self, chunk: LatentChunk) {
        self.produced_frames += chunk.h;
        self.queue.push_back(chunk);
    }

    pub fn available(&self) -> usize {
        self.produced_frames - self.consumed_frames
    }

    /// Pops one latent frame; `None` is an underrun (counted).
    pub fn pop_frame(&mut self) -> Option<Vec<f64>> {
        let front = match self.queue.front() {
            Some(c) => c,
            None => {
                self.underruns += 1;
                return None;
            }
        };
        let dz = front.dz;
        let frame = front.data[self.cursor * dz..(self.cursor + 1) * dz].to_vec();
        self.cursor += 1;
        self.consumed_frames += 1;
        if self.cursor == front.h {
            self.queue.pop_front();
            self.cursor = 0;
        }
        Some(frame)
    }
}

/// A source of latent chunks driven by the executed history; abstracts the
/// flow model so tests can substitute a zero-latency fake.
pub trait ChunkSource: Send {
    /// Generates chunk `chunk_index` conditioned on the instruction and
    /// the executed latent history (most recent frame last).
    fn generate(&mut self, instruction: u32, history: &[f64], chunk_index: usize) -> LatentChunk;
    /// Instruction-encoding invocations so far (cache misses).
    fn encode_count(&self) -> usize;
    fn chunk_len(&self) -> usize;
    fn dz(&self) -> usize;
}

/// The real generator: encode-once instruction caching plus flow sampling
/// seeded per chunk index (so lockstep and async draw identical noise).
pub struct FlowChunkSource {
    model: FlowModel,
    seed: u64,
    cached: Option<(u32, Vec<f64>)>,
    encodes: usize,
}

impl FlowChunkSource {
    pub fn new(model: FlowModel, seed: u64) -> Self {
        assert!(model.trained, "streaming requires a trained flow model");
        FlowChunkSource { model, seed, cached: None, encodes: 0 }
    }
}

impl ChunkSource for FlowChunkSource {
    fn generate(&mut self, instruction: u32, history: &[f64], chunk_index: usize) -> LatentChunk {
        let text = match &self.cached {
            Some((id, t)) if *id == instruction => t.clone(),
            _ => {
                let t = self
                    .model
                    .text_embedding(instruction)
                    .expect("instruction id validated before streaming")
                    .to_vec();
                self.encodes += 1;
                self.cached = Some((instruction, t.clone()));
                t
            }
        };
        let cond = self.model.encode_condition_plain(&text, history);
        let mut rng = RngStream::new(self.seed, 1000 + chunk_index as u64);
        generate_chunk(&cond, &self.model, self.model.config.m_euler, &mut rng)
    }

    fn encode_count(&self) -> usize {
        self.encodes
    }

    fn chunk_len(&self) -> usize {
        self.model.config.h_chunk
    }

    fn dz(&self) -> usize {
        self.model.config.dz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Lockstep,
    Async,
}

/// Everything the evaluation suite needs from one streaming rollout.
#[derive(Debug, Clone)]
pub struct RolloutRecord {
    pub motion: MotionClip,
    pub latents: LatentTrajectory,
    pub decode_ms: Vec<f64>,
    pub chunk_ms: Vec<f64>,
    pub termination: Termination,
    pub boundaries: Vec<usize>,
    pub underruns: usize,
    pub encode_count: usize,
    pub mode: Mode,
}

impl RolloutRecord {
    pub fn succeeded(&self) -> bool {
        self.termination == Termination::Ok
    }
}

/// Latent history frames the generator may condition on (the flow model's
/// observation window).
const HISTORY_CAP: usize = 120;
const CHUNK_PERIOD_MS: f64 = 300.0;

struct Controller<'a> {
    model: &'a BipedModel,
    act: &'a ActPolicy,
    history: SimHistory,
    latent_history: Vec<f64>,
    executed: Vec<f64>,
    motion: Vec<Frame>,
    decode_ms: Vec<f64>,
    decode_rng: RngStream,
    last_action: [f64; N_JOINTS],
    termination: Termination,
}

impl<'a> Controller<'a> {
    fn new(model: &'a BipedModel, act: &'a ActPolicy, seed: u64) -> Self {
        let state = model.nominal_state();
        let mut history = SimHistory::new();
        history.push(state, [0.0; N_JOINTS]);
        Controller {
            model,
            act,
            history,
            latent_history: Vec::new(),
            executed: Vec::new(),
            motion: Vec::new(),
            decode_ms: Vec::new(),
            decode_rng: RngStream::new(seed, 77),
            last_action: model.nominal_state().q,
            termination: Termination::Ok,
        }
    }

    /// One 50 Hz tick. `frame` is `None` on buffer underrun (hold last
    /// action). Returns false when termination fires.
    fn tick(&mut self, act_cfg_dz: usize, frame: Option<Vec<f64>>) -> bool {
        let action = match frame {
            Some(z) => {
                assert_eq!(z.len(), act_cfg_dz);
                let prop = self.prop_obs();
                let t0 = Instant::now();
                let a = self.act.act_decode(&prop, &z, DecodeNoise::Seeded(&mut self.decode_rng));
                self.decode_ms.push(t0.elapsed().as_secs_f64() * 1e3);
                self.executed.extend_from_slice(&z);
                self.latent_history.extend_from_slice(&z);
                let frames = self.latent_history.len() / act_cfg_dz;
                if frames > HISTORY_CAP {
                    self.latent_history.drain(0..(frames - HISTORY_CAP) * act_cfg_dz);
                }
                a
            }
            None => self.last_action,
        };
        self.last_action = action;
        let next = sim_step(self.model, self.history.current(), &action);
        self.history.push(next.clone(), action);
        self.motion.push(Frame::from_state(self.model, &next));
        self.termination = check_termination(self.model, &next);
        self.termination == Termination::Ok
    }

    fn prop_obs(&self) -> Vec<f64> {
        // o_prop is the history-only block of the full observation
        // builder; streaming has no reference clip.
        use crate::sim::build_observations;
        use crate::sim::{OffsetSet, OffsetVariant};
        // A one-frame dummy clip satisfies the builder; only the prop
        // block is consumed.
        thread_local! {
            static DUMMY: MotionClip = MotionClip {
                frames: vec![Frame::from_channels(&[0.0; crate::sim::CLIP_CHANNELS])],
                segments: vec![Segment { start: 0, end: 1, instruction_id: 0 }],
            };
        }
        DUMMY.with(|clip| {
            build_observations(&self.history, clip, 0, &OffsetSet::variant(OffsetVariant::NoFuture)).prop
        })
    }
}

/// Runs one streaming rollout at 50 Hz for `horizon_s` seconds.
pub fn run_stream(
    source: &mut dyn ChunkSource,
    act: &ActPolicy,
    model: &BipedModel,
    stream: &InstructionStream,
    horizon_s: f64,
    mode: Mode,
    seed: u64,
) -> Result<RolloutRecord, DeployError> {
    assert!(horizon_s > 0.0, "horizon must be positive");
    if stream.entries.is_empty() {
        return Err(DeployError::BadStream("empty stream".into()));
    }
    let total_frames = (horizon_s * FPS).round() as usize;
    match mode {
        Mode::Lockstep => run_lockstep(source, act, model, stream, total_frames, seed),
        Mode::Async => run_async(source, act, model, stream, total_frames, seed),
    }
}

fn finish(
    ctl: Controller,
    buffer_underruns: usize,
    chunk_ms: Vec<f64>,
    encode_count: usize,
    stream: &InstructionStream,
    mode: Mode,
    dz: usize,
) -> RolloutRecord {
    let executed_frames = ctl.executed.len() / dz;
    let ids: Vec<u32> = (0..executed_frames).map(|f| stream.instruction_at(f)).collect();
    let boundaries: Vec<usize> =
        stream.switch_frames().into_iter().filter(|&f| f < ctl.motion.len()).collect();
    let mut segments = Vec::new();
    let mut start = 0;
    for &b in &boundaries {
        segments.push(Segment { start, end: b, instruction_id: stream.instruction_at(start) });
        start = b;
    }
    segments.push(Segment {
        start,
        end: ctl.motion.len(),
        instruction_id: stream.instruction_at(start),
    });
    RolloutRecord {
        motion: MotionClip { frames: ctl.motion, segments },
        latents: LatentTrajectory { clip_index: 0, dz, latents: ctl.executed, instruction_ids: ids },
        decode_ms: ctl.decode_ms,
        chunk_ms,
        termination: ctl.termination,
        boundaries,
        underruns: buffer_underruns,
        encode_count,
        mode,
    }
}

fn run_lockstep(
    source: &mut dyn ChunkSource,
    act: &ActPolicy,
    model: &BipedModel,
    stream: &InstructionStream,
    total_frames: usize,
    seed: u64,
) -> Result<RolloutRecord, DeployError> {
    let dz = source.dz();
    let mut ctl = Controller::new(model, act, seed);
    let mut buffer = ChunkBuffer::new();
    let mut chunk_ms = Vec::new();
    let mut chunk_index = 0;
    for frame in 0..total_frames {
        if buffer.available() == 0 {
            let t0 = Instant::now();
            let chunk = source.generate(stream.instruction_at(frame), &ctl.latent_history, chunk_index);
            chunk_ms.push(t0.elapsed().as_secs_f64() * 1e3);
            chunk_index += 1;
            buffer.push(chunk);
        }
        let z = buffer.pop_frame().expect("lockstep refills synchronously");
        if !ctl.tick(dz, Some(z)) {
            break;
        }
    }
    assert_eq!(buffer.underruns, 0, "lockstep cannot underrun");
    Ok(finish(ctl, 0, chunk_ms, source.encode_count(), stream, Mode::Lockstep, dz))
}

enum WorkerMsg {
    Chunk(LatentChunk, f64, usize),
    Done(usize),
}

fn run_async(
    source: &mut dyn ChunkSource,
    act: &ActPolicy,
    model: &BipedModel,
    stream: &InstructionStream,
    total_frames: usize,
    seed: u64,
) -> Result<RolloutRecord, DeployError> {
    let dz = source.dz();
    let chunk_len = source.chunk_len();
    let mut ctl = Controller::new(model, act, seed);
    let mut buffer = ChunkBuffer::new();
    let mut chunk_ms = Vec::new();

    let (req_tx, req_rx) = mpsc::channel::<(u32, Vec<f64>, usize)>();
    let (rsp_tx, rsp_rx) = mpsc::channel::<WorkerMsg>();

    let record = std::thread::scope(|scope| {
        let source = &mut *source;
        scope.spawn(move || {
            while let Ok((instr, history, idx)) = req_rx.recv() {
                let t0 = Instant::now();
                let chunk = source.generate(instr, &history, idx);
                let ms = t0.elapsed().as_secs_f64() * 1e3;
                if rsp_tx.send(WorkerMsg::Chunk(chunk, ms, idx)).is_err() {
                    break;
                }
            }
            let _ = rsp_tx.send(WorkerMsg::Done(0));
        });

        let mut next_chunk = 0usize;
        // Prime the first chunk request before the loop; the controller
        // still never blocks after startup.
        req_tx
            .send((stream.instruction_at(0), ctl.latent_history.clone(), next_chunk))
            .expect("worker alive");
        let mut pending = true;
        next_chunk += 1;
        // Wait for the very first chunk so the rollout has an action at
        // all; thereafter the controller is wait-free.
        if let WorkerMsg::Chunk(c, ms, _) = rsp_rx.recv().expect("worker alive") {
            chunk_ms.push(ms);
            buffer.push(c);
            pending = false;
        }

        // Async mode paces the controller at real-time 50 Hz; the worker's
        // budget is the wall-clock frame period, as at deployment.
        let t_start = Instant::now();
        let frame_period = std::time::Duration::from_secs_f64(1.0 / FPS);
        for frame in 0..total_frames {
            let target = t_start + frame_period * frame as u32;
            let now = Instant::now();
            if now < target {
                std::thread::sleep(target - now);
            }
            // Drain finished chunks without blocking.
            while let Ok(msg) = rsp_rx.try_recv() {
                if let WorkerMsg::Chunk(c, ms, _) = msg {
                    chunk_ms.push(ms);
                    buffer.push(c);
                    pending = false;
                }
            }
            // Keep one chunk of lookahead in flight.
            if !pending && buffer.available() <= chunk_len {
                // History snapshot: only frames the controller has already
                // executed (causality).
                req_tx
                    .send((stream.instruction_at(frame), ctl.latent_history.clone(), next_chunk))
                    .expect("worker alive");
                pending = true;
                next_chunk += 1;
            }
            let z = buffer.pop_frame();
            if !ctl.tick(dz, z) {
                break;
            }
        }
        drop(req_tx);
        // Drain the worker's farewell so the scope can join.
        for msg in rsp_rx.iter() {
            match msg {
                WorkerMsg::Chunk(c, ms, _) => {
                    chunk_ms.push(ms);
                    buffer.push(c);
                }
                WorkerMsg::Done(_) => break,
            }
        }
        (ctl, buffer.underruns, chunk_ms)
    });
    let (ctl, underruns, chunk_ms) = record;
    Ok(finish(ctl, underruns, chunk_ms, source.encode_count(), stream, Mode::Async, dz))
}

/// Decode/generation latency summary of one rollout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencyReport {
    pub decode_mean_ms: f64,
    pub decode_p95_ms: f64,
    pub decode_max_ms: f64,
    pub chunk_mean_ms: f64,
    pub underruns: usize,
    /// Chunk period (300 ms) minus mean chunk latency.
    pub realtime_margin_ms: f64,
}

pub fn latency_report(record: &RolloutRecord) -> LatencyReport {
    assert!(!record.decode_ms.is_empty(), "empty rollout record");
    let mut sorted = record.decode_ms.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let p95 = sorted[((sorted.len() as f64 * 0.95).ceil() as usize).min(sorted.len()) - 1];
    let max = *sorted.last().unwrap();
    let chunk_mean = if record.chunk_ms.is_empty() {
        0.0
    } else {
        record.chunk_ms.iter().sum::<f64>() / record.chunk_ms.len() as f64
    };
    LatencyReport {
        decode_mean_ms: mean,
        decode_p95_ms: p95,
        decode_max_ms: max,
        chunk_mean_ms: chunk_mean,
        underruns: record.underruns,
        realtime_margin_ms: CHUNK_PERIOD_MS - chunk_mean,
    }
}

/// Serializes a rollout as motion + latent files and a CSV latency
/// sidecar.
pub fn save_rollout(dir: &Path, record: &RolloutRecord) -> Result<(), DeployError> {
    std::fs::create_dir_all(dir).map_err(IoError::Io)?;
    write_motion(&dir.join("motion.dajm"), &record.motion, FPS)?;
    write_latent(&dir.join("latents.dajz"), &record.latents)?;
    let mut csv = String::from("step,decode_ms\n");
    for (i, ms) in record.decode_ms.iter().enumerate() {
        csv.push_str(&format!("{i},{ms:.6}\n"));
    }
    csv.push_str("chunk,generate_ms\n");
    for (i, ms) in record.chunk_ms.iter().enumerate() {
        csv.push_str(&format!("{i},{ms:.6}\n"));
    }
    std::fs::write(dir.join("latency.csv"), csv).map_err(IoError::Io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::act::ActConfig;
    use crate::sim::{OffsetSet, OffsetVariant, SimConfig};
    use std::sync::{Arc, Mutex};

    /// Deterministic zero-latency generator: chunk values depend only on
    /// (instruction, history tail, chunk index). Records the executed
    /// history length seen at each generation for causality checks.
    struct FakeSource {
        h: usize,
        dz: usize,
        use_history: bool,
        encodes: usize,
        last_instr: Option<u32>,
        log: Arc<Mutex<Vec<(usize, usize)>>>,
    }

    impl FakeSource {
        fn new(h: usize, dz: usize) -> Self {
            FakeSource {
                h,
                dz,
                use_history: true,
                encodes: 0,
                last_instr: None,
                log: Arc::new(Mutex::new(Vec::new())),
            }
        }

        /// Async lookahead legitimately conditions chunk k on a shorter
        /// executed history than lockstep, so the async/lockstep
        /// equivalence check needs a history-free generator.
        fn history_free(h: usize, dz: usize) -> Self {
            FakeSource { use_history: false, ..FakeSource::new(h, dz) }
        }
    }

    impl ChunkSource for FakeSource {
        fn generate(&mut self, instruction: u32, history: &[f64], chunk_index: usize) -> LatentChunk {
            if self.last_instr != Some(instruction) {
                self.encodes += 1;
                self.last_instr = Some(instruction);
            }
            self.log.lock().unwrap().push((chunk_index, history.len() / self.dz));
            let tail: f64 = if self.use_history {
                history.iter().rev().take(self.dz).sum()
            } else {
                0.0
            };
            let data: Vec<f64> = (0..self.h * self.dz)
                .map(|i| 0.05 * ((i + chunk_index) as f64 * 0.3 + tail).sin())
                .collect();
            LatentChunk::new(self.h, self.dz, data)
        }

        fn encode_count(&self) -> usize {
            self.encodes
        }

        fn chunk_len(&self) -> usize {
            self.h
        }

        fn dz(&self) -> usize {
            self.dz
        }
    }

    /// A stable stand-in controller: every parameter zeroed except the
    /// output-projection bias, pinned to the nominal pose, so the decoded
    /// action always targets a standing posture and rollouts survive.
    fn tiny_act(dz: usize) -> ActPolicy {
        let cfg = ActConfig { dz, hidden: 16, denoiser_width: 16, denoiser_blocks: 2, ..ActConfig::default() };
        let mut policy = ActPolicy::new(cfg, OffsetSet::variant(OffsetVariant::Full), 5);
        for a in policy.params.arrays_mut() {
            a.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let nominal = model().nominal_state().q;
        policy.params.get_mut("den_base.b").data.clone_from_slice(&nominal);
        policy.trained = true;
        policy
    }

    fn model() -> BipedModel {
        BipedModel::new(SimConfig::default())
    }

    #[test]
    fn instruction_stream_validation_and_lookup() {
        assert!(InstructionStream::new(vec![(3, 0)]).is_err());
        assert!(InstructionStream::new(vec![(0, 0), (5, 1), (5, 2)]).is_err());
        let s = InstructionStream::new(vec![(0, 4), (10, 1), (25, 2)]).unwrap();
        assert_eq!(s.instruction_at(0), 4);
        assert_eq!(s.instruction_at(9), 4);
        assert_eq!(s.instruction_at(10), 1);
        assert_eq!(s.instruction_at(999), 2);
        assert_eq!(s.switch_frames(), vec![10, 25]);
    }

    #[test]
    fn chunk_buffer_cursor_and_underrun() {
        let mut b = ChunkBuffer::new();
        b.push(LatentChunk::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        assert_eq!(b.available(), 2);
        assert_eq!(b.pop_frame().unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(b.pop_frame().unwrap(), vec![4.0, 5.0, 6.0]);
        assert!(b.pop_frame().is_none());
        assert_eq!(b.underruns, 1);
        assert_eq!(b.consumed_frames, 2);
    }

    #[test]
    fn lockstep_is_bit_reproducible() {
        let act = tiny_act(4);
        let stream = InstructionStream::new(vec![(0, 0), (30, 1)]).unwrap();
        let run = || {
            let mut src = FakeSource::new(15, 4);
            run_stream(&mut src, &act, &model(), &stream, 1.5, Mode::Lockstep, 11).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.motion, b.motion);
        assert_eq!(a.latents.latents, b.latents.latents);
        assert_eq!(a.underruns, 0);
    }

    #[test]
    fn three_segments_three_encodings() {
        let act = tiny_act(4);
        let stream = InstructionStream::new(vec![(0, 0), (30, 1), (60, 2)]).unwrap();
        let mut src = FakeSource::new(15, 4);
        let rec = run_stream(&mut src, &act, &model(), &stream, 2.0, Mode::Lockstep, 1).unwrap();
        assert_eq!(rec.encode_count, 3, "encode-once rule violated");
        assert!(rec.motion.len() <= 100);
    }

    #[test]
    fn horizon_frame_bound() {
        let act = tiny_act(4);
        let stream = InstructionStream::new(vec![(0, 0)]).unwrap();
        let mut src = FakeSource::new(15, 4);
        let rec = run_stream(&mut src, &act, &model(), &stream, 20.0, Mode::Lockstep, 2).unwrap();
        assert!(rec.motion.len() <= 1000, "20 s at 50 Hz exceeded 1000 frames");
        assert_eq!(rec.motion.len(), rec.latents.frames(), "motion frames != consumed latents");
    }

    #[test]
    fn async_matches_lockstep_with_zero_latency_generator() {
        let act = tiny_act(4);
        let stream = InstructionStream::new(vec![(0, 0), (25, 1)]).unwrap();
        let mut lock_src = FakeSource::history_free(15, 4);
        let lock = run_stream(&mut lock_src, &act, &model(), &stream, 1.2, Mode::Lockstep, 7).unwrap();
        let mut async_src = FakeSource::history_free(15, 4);
        let asy = run_stream(&mut async_src, &act, &model(), &stream, 1.2, Mode::Async, 7).unwrap();
        assert_eq!(asy.underruns, 0, "zero-latency generator must not underrun");
        assert_eq!(lock.motion, asy.motion, "async diverged from lockstep ground truth");
        assert_eq!(lock.latents.latents, asy.latents.latents);
    }

    #[test]
    fn causality_generator_never_sees_future_history() {
        let act = tiny_act(4);
        let stream = InstructionStream::new(vec![(0, 0)]).unwrap();
        let mut src = FakeSource::new(15, 4);
        let log = src.log.clone();
        let rec = run_stream(&mut src, &act, &model(), &stream, 2.0, Mode::Lockstep, 3).unwrap();
        // Chunk k starts being consumed at frame k·15; the history it was
        // generated from must not extend beyond that frame.
        for (idx, hist_frames) in log.lock().unwrap().iter() {
            assert!(
                *hist_frames <= (idx * 15).min(HISTORY_CAP),
                "chunk {idx} generated from {hist_frames} future frames"
            );
        }
        assert!(rec.latents.frames() <= 100);
    }

    #[test]
    fn history_capped_at_120_frames() {
        let act = tiny_act(4);
        let stream = InstructionStream::new(vec![(0, 0)]).unwrap();
        let mut src = FakeSource::new(15, 4);
        let log = src.log.clone();
        run_stream(&mut src, &act, &model(), &stream, 6.0, Mode::Lockstep, 3).unwrap();
        let entries = log.lock().unwrap();
        assert!(entries.iter().any(|(_, h)| *h == HISTORY_CAP), "cap never reached in 6 s");
        assert!(entries.iter().all(|(_, h)| *h <= HISTORY_CAP), "history exceeded 120 frames");
    }

    #[test]
    fn latency_report_constant_decode() {
        let rec = RolloutRecord {
            motion: MotionClip {
                frames: vec![Frame::from_channels(&[0.0; crate::sim::CLIP_CHANNELS])],
                segments: vec![Segment { start: 0, end: 1, instruction_id: 0 }],
            },
            latents: LatentTrajectory { clip_index: 0, dz: 1, latents: vec![0.0], instruction_ids: vec![0] },
            decode_ms: vec![4.0; 50],
            chunk_ms: vec![10.0; 4],
            termination: Termination::Ok,
            boundaries: vec![],
            underruns: 0,
            encode_count: 1,
            mode: Mode::Lockstep,
        };
        let rep = latency_report(&rec);
        assert_eq!(rep.decode_mean_ms, 4.0);
        assert_eq!(rep.decode_p95_ms, 4.0);
        assert_eq!(rep.decode_max_ms, 4.0);
        assert_eq!(rep.chunk_mean_ms, 10.0);
        assert_eq!(rep.realtime_margin_ms, 290.0);
        assert_eq!(rep.underruns, 0);
    }

    #[test]
    fn save_rollout_writes_all_artifacts() {
        let act = tiny_act(4);
        let stream = InstructionStream::new(vec![(0, 0)]).unwrap();
        let mut src = FakeSource::new(15, 4);
        let rec = run_stream(&mut src, &act, &model(), &stream, 0.6, Mode::Lockstep, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_rollout(dir.path(), &rec).unwrap();
        let (motion, fps) = crate::io::read_motion(&dir.path().join("motion.dajm")).unwrap();
        assert_eq!(fps, FPS);
        assert_eq!(motion.len(), rec.motion.len());
        let z = crate::io::read_latent(&dir.path().join("latents.dajz")).unwrap();
        assert_eq!(z.frames(), rec.latents.frames());
        assert!(dir.path().join("latency.csv").exists());
    }
}
