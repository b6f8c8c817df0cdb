//! Kinematic benchtop simulator for the six-plane resection task.
//!
//! Commands act on a [`SafetyContext`]-backed world: Move teleports the tool
//! and meters the straight-line distance, Align parks it on a plane's entry
//! pose (plus the commanded orientation offset and sensor jitter) and opens
//! the cut gate only when the resulting alignment error is inside tolerance,
//! and Cut sweeps the window, emitting an executed surface patch — the
//! planned patch carried through the tool's residual pose error plus
//! per-point jitter. There are no dynamics and no collisions; surface
//! fidelity and path length are the contract.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{GrammarConfig, NoiseConfig, PlanConfig};
use crate::decoder::{
    self, AlignTolerance, DecodeConfig, DecoderState, Phase, PlaneStatus, SafetyContext,
    ViolationKind,
};
use crate::geometry::{alignment_error, sample_plane_patch, ResectionPlane, Se3};
use crate::grammar::{
    serialize_prefix, ActionCommand, PitBlock, RobotStateSample, SpecId, TokenId, Vocabulary,
};
use crate::policy::{Observation, PolicyBackend, PolicyRequest, WIRE_SCHEMA_VERSION};
use crate::rng;

pub const RESULT_SCHEMA_VERSION: u32 = 1;
/// Planned patches are shared between simulator and evaluator; both default
/// to this seed so a noiseless cut scores zero deviation.
pub const DEFAULT_PATCH_SEED: u64 = 0x7061_7463;
pub const DEFAULT_PATCH_SAMPLES: usize = 2048;
pub const DEFAULT_TOKEN_BUDGET: usize = 512;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("plan error: {0}")]
    Plan(String),
    #[error("noise config invalid: {0}")]
    Noise(String),
    #[error("grammar error: {0}")]
    Grammar(#[from] crate::grammar::GrammarError),
    #[error("decode error: {0}")]
    Decode(#[from] crate::decoder::DecodeError),
}

/// The bench setup: plan, planes in execution order, initial tool pose.
#[derive(Debug, Clone)]
pub struct ProsthesisModel {
    plan: PlanConfig,
    planes: Vec<ResectionPlane>,
    ordered: Vec<ResectionPlane>,
}

impl ProsthesisModel {
    pub fn new(plan: PlanConfig) -> Result<Self, SimError> {
        plan.validate().map_err(|e| SimError::Plan(e.to_string()))?;
        let planes = plan
            .resection_planes()
            .map_err(|e| SimError::Plan(e.to_string()))?;
        let ordered = plan
            .ordered_planes()
            .map_err(|e| SimError::Plan(e.to_string()))?;
        Ok(Self {
            plan,
            planes,
            ordered,
        })
    }

    pub fn plan(&self) -> &PlanConfig {
        &self.plan
    }

    /// Planes sorted by id.
    pub fn planes(&self) -> &[ResectionPlane] {
        &self.planes
    }

    /// Planes in the fixed execution/reporting order.
    pub fn ordered_planes(&self) -> &[ResectionPlane] {
        &self.ordered
    }

    pub fn plane_by_id(&self, id: u32) -> Option<&ResectionPlane> {
        self.planes.iter().find(|p| p.id == id)
    }

    pub fn initial_pose(&self) -> Se3 {
        self.plan.initial_pose()
    }
}

/// Pose jitter and per-point scatter, seeded per episode. Plane difficulty
/// multiplies every sigma, so thin cuts destabilize first as noise grows.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    cfg: NoiseConfig,
    rng: ChaCha8Rng,
}

impl NoiseModel {
    pub fn new(cfg: &NoiseConfig, master_seed: u64, episode: u64) -> Result<Self, SimError> {
        cfg.validate().map_err(|e| SimError::Noise(e.to_string()))?;
        Ok(Self {
            cfg: cfg.clone(),
            rng: rng::stream(master_seed, rng::TAG_NOISE, episode),
        })
    }

    pub fn config(&self) -> &NoiseConfig {
        &self.cfg
    }

    fn normal(&mut self, sigma: f64) -> f64 {
        if sigma <= 0.0 {
            return 0.0;
        }
        Normal::new(0.0, sigma).unwrap().sample(&mut self.rng)
    }

    /// World-frame pose perturbation: per-axis translation jitter plus a
    /// small-angle rotation jitter.
    fn pose_jitter(&mut self, difficulty: f64) -> (Vector3<f64>, nalgebra::UnitQuaternion<f64>) {
        let st = self.cfg.sigma_translation_mm * difficulty;
        let sr = self.cfg.sigma_rotation_deg * difficulty;
        let dt = Vector3::new(self.normal(st), self.normal(st), self.normal(st));
        let dr = Se3::rotation_rpy_deg(self.normal(sr), self.normal(sr), self.normal(sr));
        (dt, dr)
    }

    fn point_jitter(&mut self, difficulty: f64) -> Vector3<f64> {
        let s = self.cfg.point_jitter_mm * difficulty;
        Vector3::new(self.normal(s), self.normal(s), self.normal(s))
    }

    fn dropout(&mut self) -> bool {
        self.cfg.dropout_prob > 0.0 && self.rng.gen::<f64>() < self.cfg.dropout_prob
    }
}

/// Points swept on a cut plane, in execution pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutedPatch {
    pub plane_id: u32,
    pub speed_mm_s: f64,
    pub points: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum SimEvent {
    Moved {
        distance_mm: f64,
    },
    AlignSucceeded {
        plane_id: u32,
        angle_deg: f64,
        dist_mm: f64,
    },
    AlignFailed {
        plane_id: u32,
        angle_deg: f64,
        dist_mm: f64,
        dropout: bool,
    },
    CutExecuted {
        plane_id: u32,
        sweep_mm: f64,
        points: usize,
    },
    ViolationRecorded {
        kind: ViolationKind,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimViolation {
    pub command_index: usize,
    pub kind: ViolationKind,
    pub message: String,
}

/// World state for one episode. The embedded [`SafetyContext`] is the same
/// object the decoder masks read, so gate decisions always see sim truth.
#[derive(Debug, Clone)]
pub struct SimState {
    pub ctx: SafetyContext,
    pub executed: BTreeMap<u32, ExecutedPatch>,
    pub path_length_mm: f64,
    pub commands_applied: usize,
    pub violations: Vec<SimViolation>,
}

impl SimState {
    pub fn new(model: &ProsthesisModel, tolerance: AlignTolerance) -> Result<Self, SimError> {
        let ctx = SafetyContext::from_plan(model.plan(), tolerance)?;
        Ok(Self {
            ctx,
            executed: BTreeMap::new(),
            path_length_mm: 0.0,
            commands_applied: 0,
            violations: Vec::new(),
        })
    }

    pub fn cut_plane_ids(&self) -> Vec<u32> {
        self.executed.keys().copied().collect()
    }

    fn record_violation(&mut self, kind: ViolationKind, message: String) -> SimEvent {
        self.violations.push(SimViolation {
            command_index: self.commands_applied,
            kind,
            message,
        });
        SimEvent::ViolationRecorded { kind }
    }
}

/// Shared planned-patch parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub samples: usize,
    pub seed: u64,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self {
            samples: DEFAULT_PATCH_SAMPLES,
            seed: DEFAULT_PATCH_SEED,
        }
    }
}

/// Planned surface points for one plane under a patch spec; the evaluator
/// regenerates the identical set.
pub fn planned_patch(plane: &ResectionPlane, patch: &PatchSpec) -> Vec<Vector3<f64>> {
    sample_plane_patch(plane, patch.samples, patch.seed)
}

/// Applies one command, mutating `state` and returning what happened.
///
/// Violating commands (cut with the gate closed, align onto a cut plane,
/// move leaving the workspace) are recorded in the violation log; geometry
/// changes are best-effort, matching the validator's replay semantics.
pub fn apply_action(
    state: &mut SimState,
    cmd: &ActionCommand,
    model: &ProsthesisModel,
    vocab: &Vocabulary,
    noise: &mut NoiseModel,
    patch: &PatchSpec,
) -> Vec<SimEvent> {
    let mut events = Vec::new();
    match *cmd {
        ActionCommand::Move { x, y, z } => {
            let spec = vocab.spec(SpecId::Position);
            let target = Vector3::new(
                spec.dequantize(x).unwrap_or(0.0),
                spec.dequantize(y).unwrap_or(0.0),
                spec.dequantize(z).unwrap_or(0.0),
            );
            if !model.plan().workspace.contains(&target) {
                let ev = state.record_violation(
                    ViolationKind::MoveOutOfWorkspace,
                    format!("move target {target:?} outside workspace"),
                );
                events.push(ev);
            }
            let distance = (target - state.ctx.tool_pose.translation).norm();
            state.path_length_mm += distance;
            state.ctx.tool_pose = Se3::new(*state.ctx.tool_pose.rotation(), target);
            events.push(SimEvent::Moved {
                distance_mm: distance,
            });
        }
        ActionCommand::Align {
            plane,
            yaw,
            pitch,
            roll,
        } => {
            let Some(target) = model.plane_by_id(plane + 1).cloned() else {
                let ev = state.record_violation(
                    ViolationKind::AlignCutPlane,
                    format!("align names nonexistent plane bin {plane}"),
                );
                events.push(ev);
                return events;
            };
            if state.ctx.status_of(target.id) == Some(PlaneStatus::Cut) {
                let ev = state.record_violation(
                    ViolationKind::AlignCutPlane,
                    format!("align names already-cut plane {}", target.id),
                );
                events.push(ev);
                return events;
            }
            let yaw_deg = vocab.spec(SpecId::Yaw).dequantize(yaw).unwrap_or(0.0);
            let pitch_deg = vocab.spec(SpecId::Pitch).dequantize(pitch).unwrap_or(0.0);
            let roll_deg = vocab.spec(SpecId::Roll).dequantize(roll).unwrap_or(0.0);
            let offset = Se3::rotation_rpy_deg(yaw_deg, pitch_deg, roll_deg);
            let entry = target.entry_pose();
            let (dt, dr) = noise.pose_jitter(target.difficulty);
            let rotation = dr * (entry.rotation() * offset);
            let translation = entry.translation + dt;
            let distance = (translation - state.ctx.tool_pose.translation).norm();
            state.path_length_mm += distance;
            state.ctx.tool_pose = Se3::new(rotation, translation);
            let (angle, dist) = alignment_error(&state.ctx.tool_pose, &target);
            let dropped = noise.dropout();
            if !dropped && angle <= state.ctx.tolerance.angle_deg && dist <= state.ctx.tolerance.dist_mm
            {
                state.ctx.set_aligned(target.id);
                events.push(SimEvent::AlignSucceeded {
                    plane_id: target.id,
                    angle_deg: angle,
                    dist_mm: dist,
                });
            } else {
                state.ctx.clear_aligned();
                events.push(SimEvent::AlignFailed {
                    plane_id: target.id,
                    angle_deg: angle,
                    dist_mm: dist,
                    dropout: dropped,
                });
            }
        }
        ActionCommand::Cut { speed } => {
            if !state.ctx.cut_gate_open() {
                let ev = state.record_violation(
                    ViolationKind::CutWithoutAlign,
                    "cut with no aligned plane within tolerance".into(),
                );
                events.push(ev);
                return events;
            }
            let plane = state
                .ctx
                .aligned_plane()
                .expect("gate open implies aligned")
                .clone();
            let speed_mm_s = vocab.spec(SpecId::Speed).dequantize(speed).unwrap_or(0.0);
            // Residual pose error carries the planned patch into execution.
            let residual = state.ctx.tool_pose.compose(&plane.entry_pose().invert());
            let points: Vec<[f64; 3]> = planned_patch(&plane, patch)
                .into_iter()
                .map(|p| {
                    let q = residual.apply(&p) + noise.point_jitter(plane.difficulty);
                    [q.x, q.y, q.z]
                })
                .collect();
            state.path_length_mm += plane.sweep_length();
            state.ctx.tool_pose = Se3::new(
                *state.ctx.tool_pose.rotation(),
                plane.sweep_end_point(),
            );
            state.ctx.set_cut(plane.id);
            events.push(SimEvent::CutExecuted {
                plane_id: plane.id,
                sweep_mm: plane.sweep_length(),
                points: points.len(),
            });
            state.executed.insert(
                plane.id,
                ExecutedPatch {
                    plane_id: plane.id,
                    speed_mm_s,
                    points,
                },
            );
        }
    }
    state.commands_applied += 1;
    events
}

/// Noiseless lower bound on path length: visit the planes in execution
/// order, each leg being the straight line to the entry point plus the
/// sweep. The accumulation order matches [`apply_action`] exactly so an
/// oracle episode reproduces this value bit for bit.
pub fn shortest_path_length(model: &ProsthesisModel) -> f64 {
    let mut total = 0.0;
    let mut prev = model.initial_pose().translation;
    for plane in model.ordered_planes() {
        total += (plane.entry_point() - prev).norm();
        total += plane.sweep_length();
        prev = plane.sweep_end_point();
    }
    total
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum EpisodeStatus {
    /// Terminated by EOS or by cutting every plane.
    Completed,
    BudgetExhausted,
    /// Policy backend failure; distinct from metric failure.
    Aborted { reason: String },
}

/// Everything an episode produced. Serialized byte-identically for the same
/// config and seeds; wall-clock timings deliberately live outside, in
/// [`EpisodeRun::step_micros`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub schema_version: u32,
    pub episode_id: u64,
    pub master_seed: u64,
    pub backend: String,
    pub noise: NoiseConfig,
    pub patch_seed: u64,
    pub patch_samples: usize,
    pub status: EpisodeStatus,
    pub tokens: Vec<TokenId>,
    pub commands: Vec<ActionCommand>,
    pub planes_cut: Vec<u32>,
    pub path_length_mm: f64,
    pub shortest_path_mm: f64,
    pub backend_retries: u32,
    pub violations: Vec<SimViolation>,
    pub events: Vec<SimEvent>,
    pub patches: Vec<ExecutedPatch>,
}

/// Result plus per-step decode latency (prefix build + mask + sample), µs.
#[derive(Debug, Clone)]
pub struct EpisodeRun {
    pub result: EpisodeResult,
    pub step_micros: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub episode_id: u64,
    pub master_seed: u64,
    pub token_budget: usize,
    pub decode: DecodeConfig,
    pub tolerance: AlignTolerance,
    pub patch: PatchSpec,
}

impl EpisodeConfig {
    pub fn new(episode_id: u64, master_seed: u64) -> Self {
        Self {
            episode_id,
            master_seed,
            token_budget: DEFAULT_TOKEN_BUDGET,
            decode: DecodeConfig::default(),
            tolerance: AlignTolerance::default(),
            patch: PatchSpec::default(),
        }
    }
}

/// Drives one episode: serialize the prefix, query the policy, take one
/// constrained decode step, and apply completed commands to the sim.
///
/// Terminates on EOS, on all planes cut, or on the token budget. A policy
/// failure aborts the episode (recorded as such, not as a metric failure).
pub fn run_episode(
    model: &ProsthesisModel,
    grammar: &GrammarConfig,
    vocab: &Vocabulary,
    policy: &mut dyn PolicyBackend,
    noise_cfg: &NoiseConfig,
    ecfg: &EpisodeConfig,
) -> Result<EpisodeRun, SimError> {
    let mut noise = NoiseModel::new(noise_cfg, ecfg.master_seed, ecfg.episode_id)?;
    let mut decode_rng = rng::stream(ecfg.master_seed, rng::TAG_EPISODE, ecfg.episode_id);
    let mut state = SimState::new(model, ecfg.tolerance)?;
    let mut fsm = DecoderState::new();

    let (landmarks, plane_anchors) = model.plan().pit_parts();
    let (pit, _clamps) =
        PitBlock::from_parts(vocab, &grammar.blocks, &landmarks, &plane_anchors)?;
    let robot = RobotStateSample::zeros(grammar.n_joints);

    policy.begin_episode(ecfg.episode_id);

    let mut tokens = Vec::new();
    let mut commands = Vec::new();
    let mut events = Vec::new();
    let mut step_micros = Vec::new();
    let mut prev_cmd: Option<ActionCommand> = None;
    let mut status = EpisodeStatus::BudgetExhausted;

    for step in 0..ecfg.token_budget {
        let started = Instant::now();
        let prefix = serialize_prefix(
            vocab,
            &grammar.blocks,
            grammar.n_joints,
            &pit,
            &robot,
            prev_cmd.as_ref(),
        )?;
        let request = PolicyRequest {
            schema_version: WIRE_SCHEMA_VERSION,
            episode_id: ecfg.episode_id,
            step,
            vocab_size: vocab.size(),
            prefix: prefix.tokens,
        };
        let observation = Observation {
            ctx: &state.ctx,
            phase: fsm.phase,
        };
        let logits = match policy.logits(&request, &observation) {
            Ok(l) => l,
            Err(e) => {
                status = EpisodeStatus::Aborted {
                    reason: e.to_string(),
                };
                break;
            }
        };
        let out = decoder::step(
            vocab,
            &logits,
            &mut fsm,
            &state.ctx,
            &ecfg.decode,
            &mut decode_rng,
        )?;
        step_micros.push(started.elapsed().as_secs_f64() * 1e6);
        tokens.push(out.token);
        if let Some(cmd) = out.completed {
            events.extend(apply_action(&mut state, &cmd, model, vocab, &mut noise, &ecfg.patch));
            commands.push(cmd);
            prev_cmd = Some(cmd);
        }
        if fsm.phase == Phase::Terminal || state.ctx.all_cut() {
            status = EpisodeStatus::Completed;
            break;
        }
    }

    let result = EpisodeResult {
        schema_version: RESULT_SCHEMA_VERSION,
        episode_id: ecfg.episode_id,
        master_seed: ecfg.master_seed,
        backend: policy.name().to_string(),
        noise: noise_cfg.clone(),
        patch_seed: ecfg.patch.seed,
        patch_samples: ecfg.patch.samples,
        status,
        tokens,
        commands,
        planes_cut: state.cut_plane_ids(),
        path_length_mm: state.path_length_mm,
        shortest_path_mm: shortest_path_length(model),
        backend_retries: policy.retries(),
        violations: state.violations,
        events,
        patches: state.executed.into_values().collect(),
    };
    Ok(EpisodeRun {
        result,
        step_micros,
    })
}
