//! Grammar- and safety-constrained token decoding.
//!
//! Two masks combine conjunctively at every step. The grammar mask tracks a
//! small FSM (primitive expected, parameter slot expected, terminal) and is
//! purely syntactic. The safety mask reads a [`SafetyContext`] snapshot of
//! the world: it refuses Cut before a within-tolerance Align, refuses Align
//! onto planes already cut, and clips Move targets to the workspace. The
//! Move primitive with its in-workspace bins is never masked, so the
//! combined admissible set of a reachable state is provably non-empty; an
//! empty set is a decoder bug and surfaces as a hard error.

use nalgebra::Vector3;
use rand::distributions::{Distribution, WeightedIndex};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{PlanConfig, Workspace};
use crate::geometry::{alignment_error, ResectionPlane, Se3};
use crate::grammar::{
    ActionCommand, Control, Primitive, SpecId, TokenClass, TokenId, Vocabulary,
};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("logits length {got} does not match vocabulary size {want}")]
    LogitLength { got: usize, want: usize },
    #[error("combined admissible set is empty in {state}")]
    EmptyMask { state: String },
    #[error("no admissible token has a finite logit")]
    DegenerateLogits,
    #[error("invalid sampling config: {0}")]
    InvalidConfig(String),
    #[error("token {token} is not grammatically admissible in {state}")]
    Inadmissible { token: TokenId, state: String },
    #[error("plan error: {0}")]
    Plan(String),
}

/// Decoder FSM phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    ExpectPrimitive,
    ExpectParam { primitive: Primitive, slot: usize },
    Terminal,
}

/// FSM phase plus the partially decoded command and an emitted-command
/// count.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub phase: Phase,
    pub emitted: usize,
    partial: Vec<u32>,
}

impl Default for DecoderState {
    fn default() -> Self {
        Self::new()
    }
}

impl DecoderState {
    pub fn new() -> Self {
        Self {
            phase: Phase::ExpectPrimitive,
            emitted: 0,
            partial: Vec::with_capacity(4),
        }
    }

    fn describe(&self) -> String {
        match self.phase {
            Phase::ExpectPrimitive => "ExpectPrimitive".into(),
            Phase::ExpectParam { primitive, slot } => {
                format!("ExpectParam({primitive:?}, {slot})")
            }
            Phase::Terminal => "Terminal".into(),
        }
    }
}

/// Fixed-size bit set over token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMask {
    words: Vec<u64>,
    vocab: u32,
}

impl TokenMask {
    pub fn none(vocab: u32) -> Self {
        Self {
            words: vec![0; (vocab as usize + 63) / 64],
            vocab,
        }
    }

    pub fn all(vocab: u32) -> Self {
        let mut mask = Self::none(vocab);
        for (i, word) in mask.words.iter_mut().enumerate() {
            *word = !0u64;
            let base = (i * 64) as u32;
            if base + 64 > vocab {
                // Clear bits beyond the vocabulary.
                *word &= (1u64 << (vocab - base)) - 1;
            }
        }
        mask
    }

    pub fn allow(&mut self, id: TokenId) {
        debug_assert!(id < self.vocab);
        self.words[id as usize / 64] |= 1 << (id % 64);
    }

    pub fn forbid(&mut self, id: TokenId) {
        debug_assert!(id < self.vocab);
        self.words[id as usize / 64] &= !(1 << (id % 64));
    }

    pub fn allow_range(&mut self, range: std::ops::Range<TokenId>) {
        for id in range {
            self.allow(id);
        }
    }

    pub fn is_allowed(&self, id: TokenId) -> bool {
        id < self.vocab && self.words[id as usize / 64] & (1 << (id % 64)) != 0
    }

    pub fn and(&self, other: &TokenMask) -> TokenMask {
        debug_assert_eq!(self.vocab, other.vocab);
        TokenMask {
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a & b)
                .collect(),
            vocab: self.vocab,
        }
    }

    pub fn count(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.vocab).filter(move |&id| self.is_allowed(id))
    }
}

/// Purely syntactic admissibility for the current phase.
pub fn grammar_mask(vocab: &Vocabulary, phase: Phase) -> TokenMask {
    let mut mask = TokenMask::none(vocab.size());
    match phase {
        Phase::ExpectPrimitive => {
            mask.allow(Control::Move.token());
            mask.allow(Control::Align.token());
            mask.allow(Control::Cut.token());
            mask.allow(Control::Eos.token());
        }
        Phase::ExpectParam { primitive, slot } => {
            mask.allow_range(vocab.param_range(primitive.slot_spec(slot)));
        }
        Phase::Terminal => {
            mask.allow(Control::Eos.token());
        }
    }
    mask
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaneStatus {
    Pending,
    Aligned,
    Cut,
}

/// Alignment gate: a plane counts as reachable for Cut only when the tool is
/// within both bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignTolerance {
    pub angle_deg: f64,
    pub dist_mm: f64,
}

impl Default for AlignTolerance {
    fn default() -> Self {
        Self {
            angle_deg: 1.0,
            dist_mm: 0.5,
        }
    }
}

/// World snapshot the safety mask reads: per-plane progress, current tool
/// pose, workspace bounds, and the alignment tolerance.
///
/// At most one plane is Aligned at a time; a later Align clears the earlier
/// one. Cut is absorbing.
#[derive(Debug, Clone)]
pub struct SafetyContext {
    planes: Vec<(ResectionPlane, PlaneStatus)>,
    pub tool_pose: Se3,
    pub workspace: Workspace,
    pub tolerance: AlignTolerance,
}

impl SafetyContext {
    pub fn from_plan(plan: &PlanConfig, tolerance: AlignTolerance) -> Result<Self, DecodeError> {
        let planes = plan
            .resection_planes()
            .map_err(|e| DecodeError::Plan(e.to_string()))?
            .into_iter()
            .map(|p| (p, PlaneStatus::Pending))
            .collect();
        Ok(Self {
            planes,
            tool_pose: plan.initial_pose(),
            workspace: plan.workspace,
            tolerance,
        })
    }

    pub fn planes(&self) -> &[(ResectionPlane, PlaneStatus)] {
        &self.planes
    }

    pub fn status_of(&self, plane_id: u32) -> Option<PlaneStatus> {
        self.planes
            .iter()
            .find(|(p, _)| p.id == plane_id)
            .map(|(_, s)| *s)
    }

    /// Plane addressed by a plane-index bin (`bin = id - 1`).
    pub fn plane_for_bin(&self, bin: u32) -> Option<&(ResectionPlane, PlaneStatus)> {
        self.planes.iter().find(|(p, _)| p.id == bin + 1)
    }

    pub fn aligned_plane(&self) -> Option<&ResectionPlane> {
        self.planes
            .iter()
            .find(|(_, s)| *s == PlaneStatus::Aligned)
            .map(|(p, _)| p)
    }

    pub fn all_cut(&self) -> bool {
        self.planes.iter().all(|(_, s)| *s == PlaneStatus::Cut)
    }

    pub fn cut_count(&self) -> usize {
        self.planes
            .iter()
            .filter(|(_, s)| *s == PlaneStatus::Cut)
            .count()
    }

    /// Marks `plane_id` Aligned, clearing any other Aligned plane.
    pub fn set_aligned(&mut self, plane_id: u32) {
        for (p, s) in &mut self.planes {
            if *s == PlaneStatus::Aligned {
                *s = PlaneStatus::Pending;
            }
            if p.id == plane_id {
                *s = PlaneStatus::Aligned;
            }
        }
    }

    /// Clears the Aligned plane, if any, back to Pending.
    pub fn clear_aligned(&mut self) {
        for (_, s) in &mut self.planes {
            if *s == PlaneStatus::Aligned {
                *s = PlaneStatus::Pending;
            }
        }
    }

    pub fn set_cut(&mut self, plane_id: u32) {
        for (p, s) in &mut self.planes {
            if p.id == plane_id {
                *s = PlaneStatus::Cut;
            }
        }
    }

    /// True when Cut is currently admissible: some plane is Aligned and the
    /// tool is within tolerance of it.
    pub fn cut_gate_open(&self) -> bool {
        self.aligned_plane().is_some_and(|plane| {
            let (angle, dist) = alignment_error(&self.tool_pose, plane);
            angle <= self.tolerance.angle_deg && dist <= self.tolerance.dist_mm
        })
    }

    fn any_uncut(&self) -> bool {
        self.planes.iter().any(|(_, s)| *s != PlaneStatus::Cut)
    }
}

/// Semantic result of applying one command to a [`SafetyContext`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ApplyEvent {
    Moved,
    Aligned { plane_id: u32 },
    AlignFailed { plane_id: u32 },
    CutExecuted { plane_id: u32 },
    CutRefused,
}

/// Noiseless kinematic semantics shared by the validator; the simulator
/// layers noise on the same transitions.
///
/// Move teleports to the dequantized bin centers. Align parks the tool at
/// the target plane's entry pose composed with the dequantized orientation
/// offset and marks the plane Aligned when within tolerance. Cut requires an
/// Aligned plane within tolerance; it marks the plane Cut and leaves the
/// tool at the sweep end.
pub fn apply_command(
    ctx: &mut SafetyContext,
    vocab: &Vocabulary,
    cmd: &ActionCommand,
) -> ApplyEvent {
    match *cmd {
        ActionCommand::Move { x, y, z } => {
            let spec = vocab.spec(SpecId::Position);
            let target = Vector3::new(
                spec.dequantize(x).unwrap_or(0.0),
                spec.dequantize(y).unwrap_or(0.0),
                spec.dequantize(z).unwrap_or(0.0),
            );
            ctx.tool_pose = Se3::new(*ctx.tool_pose.rotation(), target);
            ApplyEvent::Moved
        }
        ActionCommand::Align {
            plane,
            yaw,
            pitch,
            roll,
        } => {
            let Some((target, status)) = ctx.plane_for_bin(plane).map(|(p, s)| (p.clone(), *s))
            else {
                return ApplyEvent::AlignFailed { plane_id: plane + 1 };
            };
            if status == PlaneStatus::Cut {
                return ApplyEvent::AlignFailed { plane_id: target.id };
            }
            let yaw_deg = vocab.spec(SpecId::Yaw).dequantize(yaw).unwrap_or(0.0);
            let pitch_deg = vocab.spec(SpecId::Pitch).dequantize(pitch).unwrap_or(0.0);
            let roll_deg = vocab.spec(SpecId::Roll).dequantize(roll).unwrap_or(0.0);
            let offset = Se3::rotation_rpy_deg(yaw_deg, pitch_deg, roll_deg);
            let entry = target.entry_pose();
            ctx.tool_pose = Se3::new(entry.rotation() * offset, entry.translation);
            let (angle, dist) = alignment_error(&ctx.tool_pose, &target);
            if angle <= ctx.tolerance.angle_deg && dist <= ctx.tolerance.dist_mm {
                ctx.set_aligned(target.id);
                ApplyEvent::Aligned { plane_id: target.id }
            } else {
                ctx.clear_aligned();
                ApplyEvent::AlignFailed { plane_id: target.id }
            }
        }
        ActionCommand::Cut { .. } => {
            if !ctx.cut_gate_open() {
                return ApplyEvent::CutRefused;
            }
            let plane = ctx.aligned_plane().expect("gate open implies aligned").clone();
            ctx.tool_pose = Se3::new(*ctx.tool_pose.rotation(), plane.sweep_end_point());
            ctx.set_cut(plane.id);
            ApplyEvent::CutExecuted { plane_id: plane.id }
        }
    }
}

/// Physical admissibility for the current phase and world snapshot.
///
/// Everything is admissible except: Cut while the gate is closed, Align when
/// no uncut plane remains, plane-index bins naming cut or nonexistent
/// planes, and Move position bins whose centers leave the workspace on the
/// axis being filled.
pub fn safety_mask(vocab: &Vocabulary, phase: Phase, ctx: &SafetyContext) -> TokenMask {
    let mut mask = TokenMask::all(vocab.size());
    if !ctx.cut_gate_open() {
        mask.forbid(Control::Cut.token());
    }
    if !ctx.any_uncut() {
        mask.forbid(Control::Align.token());
    }
    match phase {
        Phase::ExpectParam {
            primitive: Primitive::Align,
            slot: 0,
        } => {
            for (offset, id) in vocab.param_range(SpecId::PlaneIndex).enumerate() {
                let usable = ctx
                    .plane_for_bin(offset as u32)
                    .is_some_and(|(_, s)| *s != PlaneStatus::Cut);
                if !usable {
                    mask.forbid(id);
                }
            }
        }
        Phase::ExpectParam {
            primitive: Primitive::Move,
            slot,
        } => {
            let spec = vocab.spec(SpecId::Position);
            let (lo, hi) = ctx.workspace.axis_range(slot);
            for (bin, id) in vocab.param_range(SpecId::Position).enumerate() {
                let center = spec.dequantize(bin as u32).expect("bin in range");
                if center < lo || center > hi {
                    mask.forbid(id);
                }
            }
        }
        _ => {}
    }
    mask
}

/// Sampling strategy for [`step`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "strategy")]
pub enum Strategy {
    Greedy,
    Temperature { temperature: f64 },
    Nucleus { temperature: f64, top_p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub strategy: Strategy,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Greedy,
        }
    }
}

impl DecodeConfig {
    fn validate(&self) -> Result<(), DecodeError> {
        match self.strategy {
            Strategy::Greedy => Ok(()),
            Strategy::Temperature { temperature } if temperature > 0.0 => Ok(()),
            Strategy::Nucleus { temperature, top_p }
                if temperature > 0.0 && top_p > 0.0 && top_p <= 1.0 =>
            {
                Ok(())
            }
            _ => Err(DecodeError::InvalidConfig(format!("{:?}", self.strategy))),
        }
    }
}

/// One decoded token plus the command it completed, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub token: TokenId,
    pub completed: Option<ActionCommand>,
}

fn masked_argmax(logits: &[f64], mask: &TokenMask) -> Result<TokenId, DecodeError> {
    let mut best: Option<(f64, TokenId)> = None;
    for id in mask.iter() {
        let l = logits[id as usize];
        if !l.is_finite() {
            continue;
        }
        // Strictly-greater keeps the lowest id on ties.
        if best.map_or(true, |(b, _)| l > b) {
            best = Some((l, id));
        }
    }
    best.map(|(_, id)| id).ok_or(DecodeError::DegenerateLogits)
}

fn masked_sample(
    logits: &[f64],
    mask: &TokenMask,
    temperature: f64,
    top_p: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<TokenId, DecodeError> {
    let mut entries: Vec<(TokenId, f64)> = mask
        .iter()
        .map(|id| (id, logits[id as usize]))
        .filter(|(_, l)| l.is_finite())
        .collect();
    if entries.is_empty() {
        return Err(DecodeError::DegenerateLogits);
    }
    let max = entries
        .iter()
        .map(|(_, l)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = entries
        .iter()
        .map(|(_, l)| ((l - max) / temperature).exp())
        .collect();
    if let Some(p) = top_p {
        // Highest probability first; ties keep the lower id first.
        let mut order: Vec<usize> = (0..entries.len()).collect();
        order.sort_by(|&a, &b| {
            weights[b]
                .partial_cmp(&weights[a])
                .unwrap()
                .then(entries[a].0.cmp(&entries[b].0))
        });
        let total: f64 = weights.iter().sum();
        let mut kept = vec![false; entries.len()];
        let mut cum = 0.0;
        for &i in &order {
            kept[i] = true;
            cum += weights[i] / total;
            if cum >= p {
                break;
            }
        }
        for (i, keep) in kept.iter().enumerate() {
            if !keep {
                weights[i] = 0.0;
            }
        }
    }
    let dist = WeightedIndex::new(&weights).map_err(|_| DecodeError::DegenerateLogits)?;
    let idx = dist.sample(rng);
    Ok(entries.swap_remove(idx).0)
}

/// Applies both masks to `logits`, samples a token per `cfg`, and advances
/// the FSM. Inadmissible tokens are removed before sampling, never
/// renormalized back in; greedy ties resolve to the lowest token id.
pub fn step(
    vocab: &Vocabulary,
    logits: &[f64],
    state: &mut DecoderState,
    ctx: &SafetyContext,
    cfg: &DecodeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StepOutcome, DecodeError> {
    cfg.validate()?;
    if logits.len() != vocab.size() as usize {
        return Err(DecodeError::LogitLength {
            got: logits.len(),
            want: vocab.size() as usize,
        });
    }
    let combined = grammar_mask(vocab, state.phase).and(&safety_mask(vocab, state.phase, ctx));
    if combined.is_empty() {
        return Err(DecodeError::EmptyMask {
            state: state.describe(),
        });
    }
    let token = match cfg.strategy {
        Strategy::Greedy => masked_argmax(logits, &combined)?,
        Strategy::Temperature { temperature } => {
            masked_sample(logits, &combined, temperature, None, rng)?
        }
        Strategy::Nucleus { temperature, top_p } => {
            masked_sample(logits, &combined, temperature, Some(top_p), rng)?
        }
    };
    let completed = advance(vocab, state, token)?;
    Ok(StepOutcome { token, completed })
}

/// FSM transition for one token. Returns the completed command when `token`
/// fills the last parameter slot. Errors on grammatically impossible tokens.
pub fn advance(
    vocab: &Vocabulary,
    state: &mut DecoderState,
    token: TokenId,
) -> Result<Option<ActionCommand>, DecodeError> {
    let inadmissible = || DecodeError::Inadmissible {
        token,
        state: state.describe(),
    };
    let class = vocab.classify(token).map_err(|_| inadmissible())?;
    match (state.phase, class) {
        (Phase::ExpectPrimitive, TokenClass::Control(Control::Eos))
        | (Phase::Terminal, TokenClass::Control(Control::Eos)) => {
            state.phase = Phase::Terminal;
            Ok(None)
        }
        (Phase::ExpectPrimitive, TokenClass::Control(c)) => {
            let primitive = match c {
                Control::Move => Primitive::Move,
                Control::Align => Primitive::Align,
                Control::Cut => Primitive::Cut,
                _ => return Err(inadmissible()),
            };
            state.partial.clear();
            state.phase = Phase::ExpectParam { primitive, slot: 0 };
            Ok(None)
        }
        (Phase::ExpectParam { primitive, slot }, TokenClass::Param { spec, bin })
            if spec == primitive.slot_spec(slot) =>
        {
            state.partial.push(bin);
            if state.partial.len() == primitive.arity() {
                let cmd = ActionCommand::from_parts(primitive, &state.partial)
                    .expect("arity matches partial length");
                state.partial.clear();
                state.phase = Phase::ExpectPrimitive;
                state.emitted += 1;
                Ok(Some(cmd))
            } else {
                state.phase = Phase::ExpectParam {
                    primitive,
                    slot: slot + 1,
                };
                Ok(None)
            }
        }
        _ => Err(inadmissible()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Grammar,
    UnknownToken,
    CutWithoutAlign,
    AlignUnknownPlane,
    AlignCutPlane,
    MoveOutOfWorkspace,
    AfterEos,
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub token_index: usize,
    pub kind: ViolationKind,
    pub message: String,
}

pub type ViolationLog = Vec<Violation>;

fn classify_mask_failure(
    vocab: &Vocabulary,
    phase: Phase,
    token: TokenId,
) -> (ViolationKind, String) {
    let class = vocab.classify(token);
    match (phase, class) {
        (Phase::ExpectPrimitive, Ok(TokenClass::Control(Control::Cut))) => (
            ViolationKind::CutWithoutAlign,
            "cut requested with no aligned plane within tolerance".into(),
        ),
        (Phase::ExpectParam { primitive: Primitive::Align, slot: 0 }, Ok(_)) => (
            ViolationKind::AlignCutPlane,
            "align names a cut or nonexistent plane".into(),
        ),
        (Phase::ExpectParam { primitive: Primitive::Move, slot }, Ok(_)) => (
            ViolationKind::MoveOutOfWorkspace,
            format!("move target leaves the workspace on axis {slot}"),
        ),
        (Phase::Terminal, Ok(_)) => (
            ViolationKind::AfterEos,
            "token after end of sequence".into(),
        ),
        _ => (ViolationKind::Grammar, "token not admissible here".into()),
    }
}

/// Replays the full mask pipeline over `tokens` as a checker, collecting
/// every step where a token would have been masked. The context evolves via
/// [`apply_command`]; a sequence produced by [`step`] against the same
/// initial context replays clean.
pub fn validate_sequence(
    vocab: &Vocabulary,
    tokens: &[TokenId],
    mut ctx: SafetyContext,
) -> ViolationLog {
    let mut log = ViolationLog::new();
    let mut state = DecoderState::new();
    for (index, &token) in tokens.iter().enumerate() {
        if vocab.classify(token).is_err() {
            log.push(Violation {
                token_index: index,
                kind: ViolationKind::UnknownToken,
                message: format!("token id {token} outside vocabulary"),
            });
            return log;
        }
        let combined =
            grammar_mask(vocab, state.phase).and(&safety_mask(vocab, state.phase, &ctx));
        if !combined.is_allowed(token) {
            let (kind, message) = classify_mask_failure(vocab, state.phase, token);
            log.push(Violation {
                token_index: index,
                kind,
                message,
            });
        }
        match advance(vocab, &mut state, token) {
            Ok(Some(cmd)) => {
                apply_command(&mut ctx, vocab, &cmd);
            }
            Ok(None) => {}
            Err(_) => {
                // Grammar is broken beyond this point; stop replaying.
                return log;
            }
        }
    }
    if matches!(state.phase, Phase::ExpectParam { .. }) {
        log.push(Violation {
            token_index: tokens.len(),
            kind: ViolationKind::Truncated,
            message: "stream ends inside a command".into(),
        });
    }
    log
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PlanConfig;
    use crate::grammar::encode_command;
    use crate::rng;

    fn setup() -> (Vocabulary, SafetyContext) {
        let vocab = Vocabulary::default();
        let plan = PlanConfig::default();
        let ctx = SafetyContext::from_plan(&plan, AlignTolerance::default()).unwrap();
        (vocab, ctx)
    }

    fn align_zero(ctx: &SafetyContext, vocab: &Vocabulary, plane_id: u32) -> ActionCommand {
        let zero = |spec: SpecId| vocab.spec(spec).quantize(0.0).unwrap().0;
        let _ = ctx;
        ActionCommand::Align {
            plane: plane_id - 1,
            yaw: zero(SpecId::Yaw),
            pitch: zero(SpecId::Pitch),
            roll: zero(SpecId::Roll),
        }
    }

    #[test]
    fn grammar_mask_expect_primitive() {
        let (vocab, _) = setup();
        let mask = grammar_mask(&vocab, Phase::ExpectPrimitive);
        assert_eq!(mask.count(), 4);
        for c in [Control::Move, Control::Align, Control::Cut, Control::Eos] {
            assert!(mask.is_allowed(c.token()));
        }
    }

    #[test]
    fn grammar_mask_cut_slot_admits_exactly_the_speed_bins() {
        let (vocab, _) = setup();
        let mask = grammar_mask(
            &vocab,
            Phase::ExpectParam {
                primitive: Primitive::Cut,
                slot: 0,
            },
        );
        assert_eq!(mask.count(), 64);
        for id in vocab.param_range(SpecId::Speed) {
            assert!(mask.is_allowed(id));
        }
    }

    #[test]
    fn grammar_mask_terminal_allows_only_eos() {
        let (vocab, _) = setup();
        let mask = grammar_mask(&vocab, Phase::Terminal);
        assert_eq!(mask.count(), 1);
        assert!(mask.is_allowed(Control::Eos.token()));
    }

    #[test]
    fn cut_masked_until_a_plane_is_aligned_within_tolerance() {
        let (vocab, mut ctx) = setup();
        let mask = safety_mask(&vocab, Phase::ExpectPrimitive, &ctx);
        assert!(!mask.is_allowed(Control::Cut.token()));

        // Park the tool on plane 2's entry pose and mark it aligned.
        let plane = ctx.planes()[1].0.clone();
        ctx.tool_pose = plane.entry_pose();
        ctx.set_aligned(plane.id);
        let mask = safety_mask(&vocab, Phase::ExpectPrimitive, &ctx);
        assert!(mask.is_allowed(Control::Cut.token()));

        // Drift beyond tolerance closes the gate again.
        let mut off = plane.entry_pose();
        off.translation += plane.normal * 2.0;
        ctx.tool_pose = off;
        let mask = safety_mask(&vocab, Phase::ExpectPrimitive, &ctx);
        assert!(!mask.is_allowed(Control::Cut.token()));
    }

    #[test]
    fn all_planes_cut_leaves_move_and_eos() {
        let (vocab, mut ctx) = setup();
        let ids: Vec<u32> = ctx.planes().iter().map(|(p, _)| p.id).collect();
        for id in ids {
            ctx.set_cut(id);
        }
        let combined = grammar_mask(&vocab, Phase::ExpectPrimitive)
            .and(&safety_mask(&vocab, Phase::ExpectPrimitive, &ctx));
        assert!(combined.is_allowed(Control::Move.token()));
        assert!(combined.is_allowed(Control::Eos.token()));
        assert!(!combined.is_allowed(Control::Align.token()));
        assert!(!combined.is_allowed(Control::Cut.token()));
        assert_eq!(combined.count(), 2);
    }

    #[test]
    fn align_slot_masks_cut_and_reserved_planes() {
        let (vocab, mut ctx) = setup();
        ctx.set_cut(3);
        let phase = Phase::ExpectParam {
            primitive: Primitive::Align,
            slot: 0,
        };
        let combined = grammar_mask(&vocab, phase).and(&safety_mask(&vocab, phase, &ctx));
        let range = vocab.param_range(SpecId::PlaneIndex);
        let start = range.start;
        // Six real planes minus one cut; reserved bins 6 and 7 masked.
        assert_eq!(combined.count(), 5);
        assert!(!combined.is_allowed(start + 2)); // plane id 3
        assert!(!combined.is_allowed(start + 6));
        assert!(!combined.is_allowed(start + 7));
        assert!(combined.is_allowed(start)); // plane id 1
    }

    #[test]
    fn move_slots_mask_bins_outside_workspace() {
        let (vocab, ctx) = setup();
        let phase = Phase::ExpectParam {
            primitive: Primitive::Move,
            slot: 0,
        };
        let combined = grammar_mask(&vocab, phase).and(&safety_mask(&vocab, phase, &ctx));
        let spec = *vocab.spec(SpecId::Position);
        let expected = (0..spec.bins)
            .filter(|&b| {
                let c = spec.dequantize(b).unwrap();
                (-200.0..=200.0).contains(&c)
            })
            .count() as u32;
        assert_eq!(combined.count(), expected);
        assert!(expected > 0 && expected < spec.bins);
    }

    #[test]
    fn greedy_ties_resolve_to_lowest_id() {
        let (vocab, ctx) = setup();
        let logits = vec![0.0; vocab.size() as usize];
        let mut state = DecoderState::new();
        let mut rng = rng::stream(0, rng::TAG_EPISODE, 0);
        let out = step(
            &vocab,
            &logits,
            &mut state,
            &ctx,
            &DecodeConfig::default(),
            &mut rng,
        )
        .unwrap();
        // Lowest admissible id: Eos (1) < Move (3) < Align (4).
        assert_eq!(out.token, Control::Eos.token());
    }

    #[test]
    fn step_rejects_wrong_logit_length() {
        let (vocab, ctx) = setup();
        let logits = vec![0.0; 5];
        let mut state = DecoderState::new();
        let mut rng = rng::stream(0, rng::TAG_EPISODE, 0);
        assert!(matches!(
            step(&vocab, &logits, &mut state, &ctx, &DecodeConfig::default(), &mut rng),
            Err(DecodeError::LogitLength { got: 5, .. })
        ));
    }

    #[test]
    fn empty_combined_mask_is_a_hard_error() {
        let (vocab, mut ctx) = setup();
        let ids: Vec<u32> = ctx.planes().iter().map(|(p, _)| p.id).collect();
        for id in ids {
            ctx.set_cut(id);
        }
        // Force the unreachable state: mid-ALIGN with every plane cut.
        let mut state = DecoderState::new();
        state.phase = Phase::ExpectParam {
            primitive: Primitive::Align,
            slot: 0,
        };
        let logits = vec![0.0; vocab.size() as usize];
        let mut rng = rng::stream(0, rng::TAG_EPISODE, 0);
        assert!(matches!(
            step(&vocab, &logits, &mut state, &ctx, &DecodeConfig::default(), &mut rng),
            Err(DecodeError::EmptyMask { .. })
        ));
    }

    #[test]
    fn masking_never_changes_an_admissible_argmax() {
        let (vocab, ctx) = setup();
        use rand::Rng;
        let mut rng = rng::stream(42, rng::TAG_EPISODE, 9);
        for _ in 0..200 {
            let logits: Vec<f64> = (0..vocab.size()).map(|_| rng.gen::<f64>()).collect();
            let mut state = DecoderState::new();
            let combined = grammar_mask(&vocab, state.phase)
                .and(&safety_mask(&vocab, state.phase, &ctx));
            let global_argmax = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i as u32)
                .unwrap();
            let mut step_rng = rng.clone();
            let out = step(
                &vocab,
                &logits,
                &mut state,
                &ctx,
                &DecodeConfig::default(),
                &mut step_rng,
            )
            .unwrap();
            if combined.is_allowed(global_argmax) {
                assert_eq!(out.token, global_argmax);
            } else {
                assert!(combined.is_allowed(out.token));
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let (vocab, ctx) = setup();
        use rand::Rng;
        let cfg = DecodeConfig {
            strategy: Strategy::Temperature { temperature: 1.0 },
        };
        let run = |seed: u64| {
            let mut rng = rng::stream(seed, rng::TAG_EPISODE, 0);
            let mut logits_rng = rng::stream(99, rng::TAG_POLICY, 0);
            let mut state = DecoderState::new();
            let ctx = ctx.clone();
            let mut toks = Vec::new();
            for _ in 0..32 {
                let logits: Vec<f64> =
                    (0..vocab.size()).map(|_| logits_rng.gen::<f64>()).collect();
                let out = step(&vocab, &logits, &mut state, &ctx, &cfg, &mut rng).unwrap();
                toks.push(out.token);
                if state.phase == Phase::Terminal {
                    break;
                }
            }
            toks
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn nucleus_sampling_stays_within_mask() {
        let (vocab, ctx) = setup();
        use rand::Rng;
        let cfg = DecodeConfig {
            strategy: Strategy::Nucleus {
                temperature: 0.8,
                top_p: 0.9,
            },
        };
        let mut rng = rng::stream(3, rng::TAG_EPISODE, 1);
        let mut logits_rng = rng::stream(4, rng::TAG_POLICY, 1);
        for _ in 0..64 {
            let mut state = DecoderState::new();
            let logits: Vec<f64> =
                (0..vocab.size()).map(|_| logits_rng.gen::<f64>()).collect();
            let combined = grammar_mask(&vocab, state.phase)
                .and(&safety_mask(&vocab, state.phase, &ctx));
            let out = step(&vocab, &logits, &mut state, &ctx, &cfg, &mut rng).unwrap();
            assert!(combined.is_allowed(out.token));
        }
    }

    #[test]
    fn advance_completes_commands_and_counts_them() {
        let (vocab, _) = setup();
        let mut state = DecoderState::new();
        let cmd = ActionCommand::Move { x: 250, y: 260, z: 200 };
        for (i, tok) in encode_command(&vocab, &cmd).unwrap().into_iter().enumerate() {
            let done = advance(&vocab, &mut state, tok).unwrap();
            if i < 3 {
                assert!(done.is_none());
            } else {
                assert_eq!(done, Some(cmd));
            }
        }
        assert_eq!(state.emitted, 1);
        assert_eq!(state.phase, Phase::ExpectPrimitive);
    }

    #[test]
    fn advance_rejects_wrong_spec_param() {
        let (vocab, _) = setup();
        let mut state = DecoderState::new();
        advance(&vocab, &mut state, Control::Cut.token()).unwrap();
        let pos_bin = vocab.param_token(SpecId::Position, 0).unwrap();
        assert!(matches!(
            advance(&vocab, &mut state, pos_bin),
            Err(DecodeError::Inadmissible { .. })
        ));
    }

    #[test]
    fn apply_semantics_align_then_cut() {
        let (vocab, mut ctx) = setup();
        let align = align_zero(&ctx, &vocab, 2);
        let ev = apply_command(&mut ctx, &vocab, &align);
        assert_eq!(ev, ApplyEvent::Aligned { plane_id: 2 });
        assert_eq!(ctx.status_of(2), Some(PlaneStatus::Aligned));
        assert!(ctx.cut_gate_open());

        let ev = apply_command(&mut ctx, &vocab, &ActionCommand::Cut { speed: 10 });
        assert_eq!(ev, ApplyEvent::CutExecuted { plane_id: 2 });
        assert_eq!(ctx.status_of(2), Some(PlaneStatus::Cut));
        assert!(ctx.aligned_plane().is_none());
    }

    #[test]
    fn realign_clears_previous_alignment() {
        let (vocab, mut ctx) = setup();
        let first = align_zero(&ctx, &vocab, 2);
        apply_command(&mut ctx, &vocab, &first);
        let second = align_zero(&ctx, &vocab, 4);
        apply_command(&mut ctx, &vocab, &second);
        assert_eq!(ctx.status_of(2), Some(PlaneStatus::Pending));
        assert_eq!(ctx.status_of(4), Some(PlaneStatus::Aligned));
    }

    #[test]
    fn align_with_large_offset_fails_but_is_not_a_violation() {
        let (vocab, mut ctx) = setup();
        let yaw90 = vocab.spec(SpecId::Yaw).quantize(0.0).unwrap().0;
        let pitch90 = vocab.spec(SpecId::Pitch).quantize(90.0).unwrap().0;
        let cmd = ActionCommand::Align {
            plane: 1,
            yaw: yaw90,
            pitch: pitch90,
            roll: vocab.spec(SpecId::Roll).quantize(0.0).unwrap().0,
        };
        let ev = apply_command(&mut ctx, &vocab, &cmd);
        assert_eq!(ev, ApplyEvent::AlignFailed { plane_id: 2 });
        assert!(ctx.aligned_plane().is_none());
    }

    #[test]
    fn validate_flags_cut_first_at_token_zero() {
        let (vocab, ctx) = setup();
        let mut tokens = vec![Control::Cut.token()];
        tokens.push(vocab.param_token(SpecId::Speed, 0).unwrap());
        let log = validate_sequence(&vocab, &tokens, ctx);
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].token_index, 0);
        assert_eq!(log[0].kind, ViolationKind::CutWithoutAlign);
    }

    #[test]
    fn validate_passes_a_well_formed_episode() {
        let (vocab, ctx) = setup();
        let mut tokens = Vec::new();
        for plane_id in [5u32, 2, 3] {
            tokens.extend(encode_command(&vocab, &align_zero(&ctx, &vocab, plane_id)).unwrap());
            tokens.extend(encode_command(&vocab, &ActionCommand::Cut { speed: 20 }).unwrap());
        }
        tokens.push(Control::Eos.token());
        let log = validate_sequence(&vocab, &tokens, ctx);
        assert!(log.is_empty(), "{log:?}");
    }

    #[test]
    fn validate_flags_truncated_streams() {
        let (vocab, ctx) = setup();
        let mut tokens = encode_command(
            &vocab,
            &ActionCommand::Move { x: 250, y: 250, z: 250 },
        )
        .unwrap();
        tokens.pop();
        let log = validate_sequence(&vocab, &tokens, ctx);
        assert_eq!(log.last().unwrap().kind, ViolationKind::Truncated);
    }

    #[test]
    fn validate_flags_move_out_of_workspace() {
        let (vocab, ctx) = setup();
        // Bin 0 centers at -249.5ish, outside the ±200 workspace.
        let tokens = encode_command(&vocab, &ActionCommand::Move { x: 0, y: 256, z: 256 }).unwrap();
        let log = validate_sequence(&vocab, &tokens, ctx);
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].kind, ViolationKind::MoveOutOfWorkspace);
        assert_eq!(log[0].token_index, 1);
    }

    #[test]
    fn constrained_rollouts_validate_clean() {
        let (vocab, ctx0) = setup();
        use rand::Rng;
        for seed in 0..50u64 {
            let mut rng = rng::stream(seed, rng::TAG_EPISODE, seed);
            let mut logits_rng = rng::stream(seed, rng::TAG_POLICY, seed);
            let cfg = DecodeConfig {
                strategy: Strategy::Temperature { temperature: 1.5 },
            };
            let mut state = DecoderState::new();
            let mut ctx = ctx0.clone();
            let mut tokens = Vec::new();
            for _ in 0..120 {
                let logits: Vec<f64> = (0..vocab.size())
                    .map(|_| logits_rng.gen_range(-3.0..3.0))
                    .collect();
                let out = step(&vocab, &logits, &mut state, &ctx, &cfg, &mut rng).unwrap();
                tokens.push(out.token);
                if let Some(cmd) = out.completed {
                    apply_command(&mut ctx, &vocab, &cmd);
                }
                if state.phase == Phase::Terminal {
                    break;
                }
            }
            let log = validate_sequence(&vocab, &tokens, ctx0.clone());
            assert!(log.is_empty(), "seed {seed}: {log:?}");
        }
    }

    #[test]
    fn unconstrained_rollouts_violate() {
        let (vocab, ctx0) = setup();
        use rand::Rng;
        let mut dirty = 0;
        for seed in 0..50u64 {
            let mut logits_rng = rng::stream(seed, rng::TAG_POLICY, 1000 + seed);
            let tokens: Vec<TokenId> = (0..40)
                .map(|_| {
                    let logits: Vec<f64> =
                        (0..vocab.size()).map(|_| logits_rng.gen::<f64>()).collect();
                    logits
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                        .map(|(i, _)| i as u32)
                        .unwrap()
                })
                .collect();
            if !validate_sequence(&vocab, &tokens, ctx0.clone()).is_empty() {
                dirty += 1;
            }
        }
        assert!(dirty >= 49, "only {dirty}/50 unconstrained rollouts violated");
    }

    #[test]
    fn fallback_liveness_over_reachable_states() {
        let (vocab, ctx0) = setup();
        // Every plane-status assignment with at most one Aligned plane.
        let ids: Vec<u32> = ctx0.planes().iter().map(|(p, _)| p.id).collect();
        let n = ids.len();
        for code in 0..3usize.pow(6) {
            let mut statuses = Vec::with_capacity(n);
            let mut c = code;
            for _ in 0..n {
                statuses.push(c % 3);
                c /= 3;
            }
            if statuses.iter().filter(|&&s| s == 1).count() > 1 {
                continue;
            }
            let mut ctx = ctx0.clone();
            for (i, &s) in statuses.iter().enumerate() {
                match s {
                    1 => ctx.set_aligned(ids[i]),
                    2 => ctx.set_cut(ids[i]),
                    _ => {}
                }
            }
            // Primitive level is always live.
            let base = grammar_mask(&vocab, Phase::ExpectPrimitive)
                .and(&safety_mask(&vocab, Phase::ExpectPrimitive, &ctx));
            assert!(!base.is_empty(), "statuses {statuses:?}");
            // Walk each admissible primitive through all its slots.
            for primitive in Primitive::ALL {
                if !base.is_allowed(primitive.control().token()) {
                    continue;
                }
                for slot in 0..primitive.arity() {
                    let phase = Phase::ExpectParam { primitive, slot };
                    let m =
                        grammar_mask(&vocab, phase).and(&safety_mask(&vocab, phase, &ctx));
                    assert!(
                        !m.is_empty(),
                        "empty mask for {primitive:?} slot {slot} statuses {statuses:?}"
                    );
                }
            }
            // Terminal is live.
            let term = grammar_mask(&vocab, Phase::Terminal)
                .and(&safety_mask(&vocab, Phase::Terminal, &ctx));
            assert!(!term.is_empty());
        }
    }
}
