//! Action grammar: quantization specs, the token vocabulary, command
//! encoding, prefix serialization, window packing, and target shifting.
//!
//! Continuous action parameters are discretized into symbolic bins. Each
//! parameter kind owns a [`QuantSpec`] and a contiguous token-id range, so a
//! token id maps back to exactly one `(spec, bin)` pair. Control tokens sit
//! below all parameter ranges at fixed ids.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TokenId = u32;

#[derive(Debug, Error, PartialEq)]
pub enum GrammarError {
    #[error("invalid quantization spec: lo {lo} must be finite and < hi {hi}, bins {bins} must be >= 1")]
    InvalidSpec { lo: f64, hi: f64, bins: u32 },
    #[error("cannot quantize a non-finite value")]
    NonFinite,
    #[error("bin {bin} out of range for {spec:?} with {bins} bins")]
    BinOutOfRange { spec: SpecId, bin: u32, bins: u32 },
    #[error("token id {id} outside vocabulary of size {size}")]
    UnknownToken { id: TokenId, size: u32 },
    #[error("decode error at index {index}: expected {expected}, found {found}")]
    Decode {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("window of {len} tokens cannot fit budget {budget}")]
    WindowOverBudget { len: usize, budget: usize },
    #[error("window may not contain the packing separator")]
    SeparatorInWindow,
    #[error("robot state has {got} joints, grammar expects {expected}")]
    JointCountMismatch { got: usize, expected: usize },
    #[error("target shift {dt} must be < sequence length {len}")]
    ShiftTooLarge { dt: usize, len: usize },
}

/// Uniform binning of a closed interval `[lo, hi]` into `bins` cells.
///
/// `quantize` floors into a cell and clamps to the edge cells, reporting
/// whether clamping happened. `dequantize` returns the cell center, so one
/// round trip costs at most half a cell width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub lo: f64,
    pub hi: f64,
    pub bins: u32,
}

impl QuantSpec {
    pub fn new(lo: f64, hi: f64, bins: u32) -> Result<Self, GrammarError> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi && bins >= 1) {
            return Err(GrammarError::InvalidSpec { lo, hi, bins });
        }
        Ok(Self { lo, hi, bins })
    }

    pub fn validate(&self) -> Result<(), GrammarError> {
        Self::new(self.lo, self.hi, self.bins).map(|_| ())
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    /// Returns `(bin, clamped)`. NaN and infinities are rejected. Cells are
    /// half-open except the last, which closes at `hi`, so boundary inputs
    /// like unit-normal components of exactly ±1 do not count as clamps.
    pub fn quantize(&self, x: f64) -> Result<(u32, bool), GrammarError> {
        if !x.is_finite() {
            return Err(GrammarError::NonFinite);
        }
        let raw = ((x - self.lo) / self.width()).floor();
        let max = (self.bins - 1) as f64;
        let clamped = x < self.lo || x > self.hi;
        Ok((raw.clamp(0.0, max) as u32, clamped))
    }

    /// Center of `bin`.
    pub fn dequantize(&self, bin: u32) -> Result<f64, GrammarError> {
        if bin >= self.bins {
            return Err(GrammarError::BinOutOfRange {
                spec: SpecId::Position,
                bin,
                bins: self.bins,
            });
        }
        Ok(self.lo + (bin as f64 + 0.5) * self.width())
    }

    /// Quantize-then-dequantize, snapping a value onto its bin center.
    pub fn snap(&self, x: f64) -> Result<f64, GrammarError> {
        let (bin, _) = self.quantize(x)?;
        self.dequantize(bin)
    }
}

/// Parameter kinds, each backed by one spec and one token-id range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecId {
    Position,
    Yaw,
    Pitch,
    Roll,
    PlaneIndex,
    Speed,
    Normal,
    JointAngle,
    JointVelocity,
    JointTorque,
}

impl SpecId {
    pub const ALL: [SpecId; 10] = [
        SpecId::Position,
        SpecId::Yaw,
        SpecId::Pitch,
        SpecId::Roll,
        SpecId::PlaneIndex,
        SpecId::Speed,
        SpecId::Normal,
        SpecId::JointAngle,
        SpecId::JointVelocity,
        SpecId::JointTorque,
    ];
}

/// One spec per parameter kind. Defaults give sub-millimeter position cells
/// and sub-degree orientation cells at a vocabulary of about 2,400 tokens.
///
/// Orientation axes use an odd bin count: with 255 bins over a symmetric
/// range the middle bin's center is the exact zero offset, which keeps a
/// nominal alignment free of quantization residue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecTable {
    pub position: QuantSpec,
    pub yaw: QuantSpec,
    pub pitch: QuantSpec,
    pub roll: QuantSpec,
    pub plane_index: QuantSpec,
    pub speed: QuantSpec,
    pub normal: QuantSpec,
    pub joint_angle: QuantSpec,
    pub joint_velocity: QuantSpec,
    pub joint_torque: QuantSpec,
}

impl Default for SpecTable {
    fn default() -> Self {
        let orient = QuantSpec {
            lo: -180.0,
            hi: 180.0,
            bins: 255,
        };
        Self {
            position: QuantSpec {
                lo: -250.0,
                hi: 250.0,
                bins: 512,
            },
            yaw: orient,
            pitch: orient,
            roll: orient,
            plane_index: QuantSpec {
                lo: 0.0,
                hi: 8.0,
                bins: 8,
            },
            speed: QuantSpec {
                lo: 0.0,
                hi: 50.0,
                bins: 64,
            },
            normal: QuantSpec {
                lo: -1.0,
                hi: 1.0,
                bins: 256,
            },
            joint_angle: QuantSpec {
                lo: -std::f64::consts::PI,
                hi: std::f64::consts::PI,
                bins: 256,
            },
            joint_velocity: QuantSpec {
                lo: -5.0,
                hi: 5.0,
                bins: 256,
            },
            joint_torque: QuantSpec {
                lo: -50.0,
                hi: 50.0,
                bins: 256,
            },
        }
    }
}

impl SpecTable {
    pub fn get(&self, id: SpecId) -> &QuantSpec {
        match id {
            SpecId::Position => &self.position,
            SpecId::Yaw => &self.yaw,
            SpecId::Pitch => &self.pitch,
            SpecId::Roll => &self.roll,
            SpecId::PlaneIndex => &self.plane_index,
            SpecId::Speed => &self.speed,
            SpecId::Normal => &self.normal,
            SpecId::JointAngle => &self.joint_angle,
            SpecId::JointVelocity => &self.joint_velocity,
            SpecId::JointTorque => &self.joint_torque,
        }
    }

    pub fn validate(&self) -> Result<(), GrammarError> {
        for id in SpecId::ALL {
            self.get(id).validate()?;
        }
        Ok(())
    }
}

/// Non-parameter tokens. Ids are fixed and sit below every parameter range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Control {
    Bos,
    Eos,
    Sep,
    Move,
    Align,
    Cut,
    NullAction,
    Pit,
    Vis,
    Graph,
    State,
}

impl Control {
    pub const COUNT: u32 = 11;

    pub fn token(self) -> TokenId {
        match self {
            Control::Bos => 0,
            Control::Eos => 1,
            Control::Sep => 2,
            Control::Move => 3,
            Control::Align => 4,
            Control::Cut => 5,
            Control::NullAction => 6,
            Control::Pit => 7,
            Control::Vis => 8,
            Control::Graph => 9,
            Control::State => 10,
        }
    }

    fn from_token(id: TokenId) -> Option<Control> {
        [
            Control::Bos,
            Control::Eos,
            Control::Sep,
            Control::Move,
            Control::Align,
            Control::Cut,
            Control::NullAction,
            Control::Pit,
            Control::Vis,
            Control::Graph,
            Control::State,
        ]
        .into_iter()
        .find(|c| c.token() == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    Move,
    Align,
    Cut,
}

impl Primitive {
    pub const ALL: [Primitive; 3] = [Primitive::Move, Primitive::Align, Primitive::Cut];

    pub fn arity(self) -> usize {
        match self {
            Primitive::Move => 3,
            Primitive::Align => 4,
            Primitive::Cut => 1,
        }
    }

    /// Spec backing parameter slot `slot` of this primitive.
    pub fn slot_spec(self, slot: usize) -> SpecId {
        match (self, slot) {
            (Primitive::Move, 0..=2) => SpecId::Position,
            (Primitive::Align, 0) => SpecId::PlaneIndex,
            (Primitive::Align, 1) => SpecId::Yaw,
            (Primitive::Align, 2) => SpecId::Pitch,
            (Primitive::Align, 3) => SpecId::Roll,
            (Primitive::Cut, 0) => SpecId::Speed,
            _ => panic!("slot {slot} out of range for {self:?}"),
        }
    }

    pub fn control(self) -> Control {
        match self {
            Primitive::Move => Control::Move,
            Primitive::Align => Control::Align,
            Primitive::Cut => Control::Cut,
        }
    }

    fn from_control(c: Control) -> Option<Primitive> {
        match c {
            Control::Move => Some(Primitive::Move),
            Control::Align => Some(Primitive::Align),
            Control::Cut => Some(Primitive::Cut),
            _ => None,
        }
    }
}

/// A primitive with quantized parameter payloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "primitive", rename_all = "snake_case")]
pub enum ActionCommand {
    Move { x: u32, y: u32, z: u32 },
    Align { plane: u32, yaw: u32, pitch: u32, roll: u32 },
    Cut { speed: u32 },
}

impl ActionCommand {
    pub fn primitive(&self) -> Primitive {
        match self {
            ActionCommand::Move { .. } => Primitive::Move,
            ActionCommand::Align { .. } => Primitive::Align,
            ActionCommand::Cut { .. } => Primitive::Cut,
        }
    }

    pub fn param_bins(&self) -> Vec<u32> {
        match *self {
            ActionCommand::Move { x, y, z } => vec![x, y, z],
            ActionCommand::Align {
                plane,
                yaw,
                pitch,
                roll,
            } => vec![plane, yaw, pitch, roll],
            ActionCommand::Cut { speed } => vec![speed],
        }
    }

    pub fn from_parts(primitive: Primitive, bins: &[u32]) -> Option<ActionCommand> {
        match (primitive, bins) {
            (Primitive::Move, &[x, y, z]) => Some(ActionCommand::Move { x, y, z }),
            (Primitive::Align, &[plane, yaw, pitch, roll]) => Some(ActionCommand::Align {
                plane,
                yaw,
                pitch,
                roll,
            }),
            (Primitive::Cut, &[speed]) => Some(ActionCommand::Cut { speed }),
            _ => None,
        }
    }
}

/// What a token id denotes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenClass {
    Control(Control),
    Param { spec: SpecId, bin: u32 },
}

/// Token-id layout over a [`SpecTable`].
///
/// Ids `0..11` are control tokens; each spec then owns one contiguous range
/// in `SpecId::ALL` order. `classify` and `param_token` are mutually inverse
/// over the whole id space.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    specs: SpecTable,
    starts: [u32; 10],
    size: u32,
}

impl Vocabulary {
    pub fn new(specs: SpecTable) -> Result<Self, GrammarError> {
        specs.validate()?;
        let mut starts = [0u32; 10];
        let mut next = Control::COUNT;
        for (i, id) in SpecId::ALL.into_iter().enumerate() {
            starts[i] = next;
            next += specs.get(id).bins;
        }
        Ok(Self {
            specs,
            starts,
            size: next,
        })
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn specs(&self) -> &SpecTable {
        &self.specs
    }

    pub fn spec(&self, id: SpecId) -> &QuantSpec {
        self.specs.get(id)
    }

    fn spec_slot(id: SpecId) -> usize {
        SpecId::ALL.iter().position(|s| *s == id).unwrap()
    }

    /// Token-id range owned by `id`.
    pub fn param_range(&self, id: SpecId) -> std::ops::Range<TokenId> {
        let slot = Self::spec_slot(id);
        let start = self.starts[slot];
        start..start + self.specs.get(id).bins
    }

    pub fn param_token(&self, id: SpecId, bin: u32) -> Result<TokenId, GrammarError> {
        let spec = self.specs.get(id);
        if bin >= spec.bins {
            return Err(GrammarError::BinOutOfRange {
                spec: id,
                bin,
                bins: spec.bins,
            });
        }
        Ok(self.starts[Self::spec_slot(id)] + bin)
    }

    pub fn classify(&self, token: TokenId) -> Result<TokenClass, GrammarError> {
        if let Some(c) = Control::from_token(token) {
            return Ok(TokenClass::Control(c));
        }
        for (i, id) in SpecId::ALL.into_iter().enumerate() {
            let start = self.starts[i];
            let bins = self.specs.get(id).bins;
            if token >= start && token < start + bins {
                return Ok(TokenClass::Param {
                    spec: id,
                    bin: token - start,
                });
            }
        }
        Err(GrammarError::UnknownToken {
            id: token,
            size: self.size,
        })
    }

    fn describe(&self, token: TokenId) -> String {
        match self.classify(token) {
            Ok(TokenClass::Control(c)) => format!("{c:?}"),
            Ok(TokenClass::Param { spec, bin }) => format!("{spec:?} bin {bin}"),
            Err(_) => format!("unknown id {token}"),
        }
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::new(SpecTable::default()).expect("default spec table is valid")
    }
}

/// `[primitive token, param tokens...]`; MOVE spans 4 ids, ALIGN 5, CUT 2.
pub fn encode_command(
    vocab: &Vocabulary,
    cmd: &ActionCommand,
) -> Result<Vec<TokenId>, GrammarError> {
    let primitive = cmd.primitive();
    let mut out = Vec::with_capacity(1 + primitive.arity());
    out.push(primitive.control().token());
    for (slot, bin) in cmd.param_bins().into_iter().enumerate() {
        out.push(vocab.param_token(primitive.slot_spec(slot), bin)?);
    }
    Ok(out)
}

/// Parses a command stream. A leading BOS is permitted; EOS terminates the
/// stream but only at a command boundary. Errors carry the failing index and
/// what was expected there.
pub fn decode_tokens(
    vocab: &Vocabulary,
    tokens: &[TokenId],
) -> Result<Vec<ActionCommand>, GrammarError> {
    let mut commands = Vec::new();
    let mut pending: Option<(Primitive, Vec<u32>)> = None;
    for (index, &token) in tokens.iter().enumerate() {
        let class = vocab.classify(token).map_err(|_| GrammarError::Decode {
            index,
            expected: "a vocabulary token".into(),
            found: format!("id {token}"),
        })?;
        match (&mut pending, class) {
            (None, TokenClass::Control(Control::Bos)) if index == 0 => {}
            (None, TokenClass::Control(Control::Eos)) => {
                if index + 1 != tokens.len() {
                    return Err(GrammarError::Decode {
                        index: index + 1,
                        expected: "end of stream after Eos".into(),
                        found: vocab.describe(tokens[index + 1]),
                    });
                }
                return Ok(commands);
            }
            (None, TokenClass::Control(c)) if Primitive::from_control(c).is_some() => {
                pending = Some((Primitive::from_control(c).unwrap(), Vec::new()));
            }
            (None, _) => {
                return Err(GrammarError::Decode {
                    index,
                    expected: "a primitive token (Move, Align, Cut) or Eos".into(),
                    found: vocab.describe(token),
                });
            }
            (Some((primitive, bins)), class) => {
                let slot = bins.len();
                let want = primitive.slot_spec(slot);
                match class {
                    TokenClass::Param { spec, bin } if spec == want => {
                        bins.push(bin);
                        if bins.len() == primitive.arity() {
                            commands.push(
                                ActionCommand::from_parts(*primitive, bins)
                                    .expect("arity checked"),
                            );
                            pending = None;
                        }
                    }
                    _ => {
                        return Err(GrammarError::Decode {
                            index,
                            expected: format!("a {want:?} bin for {primitive:?} slot {slot}"),
                            found: vocab.describe(token),
                        });
                    }
                }
            }
        }
    }
    if let Some((primitive, bins)) = pending {
        return Err(GrammarError::Decode {
            index: tokens.len(),
            expected: format!(
                "a {:?} bin for {primitive:?} slot {}",
                primitive.slot_spec(bins.len()),
                bins.len()
            ),
            found: "end of stream".into(),
        });
    }
    Ok(commands)
}

/// Opaque-run lengths for the serialized prefix segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockLengths {
    /// Global-shape placeholder run inside the context block.
    pub pit_global: usize,
    /// Per-plane view placeholder run inside the context block.
    pub pit_view: usize,
    /// Visual-observation placeholder run.
    pub vis: usize,
    /// Scene-graph placeholder run.
    pub graph: usize,
}

impl Default for BlockLengths {
    fn default() -> Self {
        Self {
            pit_global: 16,
            pit_view: 4,
            vis: 32,
            graph: 16,
        }
    }
}

/// Quantized plane entry inside the context block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PitPlane {
    pub normal: [u32; 3],
    pub offset: u32,
}

/// Plan context block: opaque shape/view runs plus quantized landmark and
/// plane anchors. Fixed per episode; the per-step segments vary around it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PitBlock {
    pub global_run: usize,
    pub view_runs: Vec<usize>,
    pub landmarks: Vec<[u32; 3]>,
    pub planes: Vec<PitPlane>,
}

impl PitBlock {
    /// Quantizes landmarks (positions) and planes (unit normal components
    /// plus signed offset) into bins. Out-of-range inputs clamp; each clamp
    /// is reported so callers can surface misconfigured plans.
    pub fn from_parts(
        vocab: &Vocabulary,
        blocks: &BlockLengths,
        landmarks: &[[f64; 3]],
        planes: &[([f64; 3], f64)],
    ) -> Result<(Self, Vec<String>), GrammarError> {
        let mut clamps = Vec::new();
        let pos = vocab.spec(SpecId::Position);
        let nrm = vocab.spec(SpecId::Normal);
        let mut lm_bins = Vec::with_capacity(landmarks.len());
        for (i, lm) in landmarks.iter().enumerate() {
            let mut bins = [0u32; 3];
            for (axis, &v) in lm.iter().enumerate() {
                let (bin, clamped) = pos.quantize(v)?;
                if clamped {
                    clamps.push(format!("landmark {i} axis {axis} value {v} clamped"));
                }
                bins[axis] = bin;
            }
            lm_bins.push(bins);
        }
        let mut plane_bins = Vec::with_capacity(planes.len());
        for (m, (normal, offset)) in planes.iter().enumerate() {
            let mut nb = [0u32; 3];
            for (axis, &v) in normal.iter().enumerate() {
                let (bin, clamped) = nrm.quantize(v)?;
                if clamped {
                    clamps.push(format!("plane {m} normal axis {axis} value {v} clamped"));
                }
                nb[axis] = bin;
            }
            let (ob, clamped) = pos.quantize(*offset)?;
            if clamped {
                clamps.push(format!("plane {m} offset {offset} clamped"));
            }
            plane_bins.push(PitPlane {
                normal: nb,
                offset: ob,
            });
        }
        Ok((
            Self {
                global_run: blocks.pit_global,
                view_runs: vec![blocks.pit_view; planes.len()],
                landmarks: lm_bins,
                planes: plane_bins,
            },
            clamps,
        ))
    }

    pub fn token_len(&self) -> usize {
        self.global_run
            + self.view_runs.iter().sum::<usize>()
            + self.landmarks.len() * 3
            + self.planes.len() * 4
    }

    pub fn tokens(&self, vocab: &Vocabulary) -> Result<Vec<TokenId>, GrammarError> {
        let mut out = Vec::with_capacity(self.token_len());
        let pit = Control::Pit.token();
        out.extend(std::iter::repeat(pit).take(self.global_run));
        for &run in &self.view_runs {
            out.extend(std::iter::repeat(pit).take(run));
        }
        for lm in &self.landmarks {
            for &bin in lm {
                out.push(vocab.param_token(SpecId::Position, bin)?);
            }
        }
        for plane in &self.planes {
            for &bin in &plane.normal {
                out.push(vocab.param_token(SpecId::Normal, bin)?);
            }
            out.push(vocab.param_token(SpecId::Position, plane.offset)?);
        }
        Ok(out)
    }
}

/// One joint-space sample to be quantized into the robot-state segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotStateSample {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub tau: Vec<f64>,
}

impl RobotStateSample {
    pub fn zeros(n: usize) -> Self {
        Self {
            q: vec![0.0; n],
            qd: vec![0.0; n],
            tau: vec![0.0; n],
        }
    }
}

/// End offsets of the prefix segments, in order: context, visual, graph,
/// robot state, previous action. The last offset equals the total length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segments {
    pub context: usize,
    pub visual: usize,
    pub graph: usize,
    pub robot: usize,
    pub prev_action: usize,
}

/// A serialized per-step model prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixSequence {
    pub tokens: Vec<TokenId>,
    pub segments: Segments,
}

/// Lays out `[context | visual | graph | robot | prev action]`.
///
/// The previous-action segment is bit-identical to [`encode_command`] of the
/// previous command, or a single NullAction token at the first step.
pub fn serialize_prefix(
    vocab: &Vocabulary,
    blocks: &BlockLengths,
    n_joints: usize,
    pit: &PitBlock,
    robot: &RobotStateSample,
    prev: Option<&ActionCommand>,
) -> Result<PrefixSequence, GrammarError> {
    if robot.q.len() != n_joints || robot.qd.len() != n_joints || robot.tau.len() != n_joints {
        return Err(GrammarError::JointCountMismatch {
            got: robot.q.len().max(robot.qd.len()).max(robot.tau.len()),
            expected: n_joints,
        });
    }
    let mut tokens = pit.tokens(vocab)?;
    let context = tokens.len();

    tokens.extend(std::iter::repeat(Control::Vis.token()).take(blocks.vis));
    let visual = tokens.len();

    tokens.extend(std::iter::repeat(Control::Graph.token()).take(blocks.graph));
    let graph = tokens.len();

    tokens.push(Control::State.token());
    for j in 0..n_joints {
        let (qb, _) = vocab.spec(SpecId::JointAngle).quantize(robot.q[j])?;
        let (vb, _) = vocab.spec(SpecId::JointVelocity).quantize(robot.qd[j])?;
        let (tb, _) = vocab.spec(SpecId::JointTorque).quantize(robot.tau[j])?;
        tokens.push(vocab.param_token(SpecId::JointAngle, qb)?);
        tokens.push(vocab.param_token(SpecId::JointVelocity, vb)?);
        tokens.push(vocab.param_token(SpecId::JointTorque, tb)?);
    }
    let robot_end = tokens.len();

    match prev {
        Some(cmd) => tokens.extend(encode_command(vocab, cmd)?),
        None => tokens.push(Control::NullAction.token()),
    }
    let prev_action = tokens.len();

    Ok(PrefixSequence {
        tokens,
        segments: Segments {
            context,
            visual,
            graph,
            robot: robot_end,
            prev_action,
        },
    })
}

/// A packed training sequence; windows inside are separated by Sep tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedSeq {
    pub tokens: Vec<TokenId>,
}

/// Greedy first-fit packing in input order. Adjacent windows in a pack are
/// joined by one Sep token, and the separator counts against the budget.
pub fn pack_windows(
    windows: &[Vec<TokenId>],
    budget: usize,
) -> Result<Vec<PackedSeq>, GrammarError> {
    let sep = Control::Sep.token();
    let mut packs: Vec<PackedSeq> = Vec::new();
    let mut current: Vec<TokenId> = Vec::new();
    for window in windows {
        if window.len() > budget {
            return Err(GrammarError::WindowOverBudget {
                len: window.len(),
                budget,
            });
        }
        if window.contains(&sep) {
            return Err(GrammarError::SeparatorInWindow);
        }
        let needed = window.len() + usize::from(!current.is_empty());
        if !current.is_empty() && current.len() + needed > budget {
            packs.push(PackedSeq {
                tokens: std::mem::take(&mut current),
            });
        }
        if !current.is_empty() {
            current.push(sep);
        }
        current.extend_from_slice(window);
    }
    if !current.is_empty() {
        packs.push(PackedSeq { tokens: current });
    }
    Ok(packs)
}

/// Splits a pack back into its windows at Sep tokens.
pub fn unpack_windows(packed: &PackedSeq) -> Vec<Vec<TokenId>> {
    let sep = Control::Sep.token();
    packed
        .tokens
        .split(|&t| t == sep)
        .map(|w| w.to_vec())
        .collect()
}

/// Re-pairs observations with the target `dt` steps ahead and drops the
/// trailing `dt` pairs that have no future target.
pub fn shift_targets<O: Clone, T: Clone>(
    pairs: &[(O, T)],
    dt: usize,
) -> Result<Vec<(O, T)>, GrammarError> {
    if dt >= pairs.len() && !(dt == 0 && pairs.is_empty()) {
        return Err(GrammarError::ShiftTooLarge {
            dt,
            len: pairs.len(),
        });
    }
    Ok((0..pairs.len() - dt)
        .map(|i| (pairs[i].0.clone(), pairs[i + dt].1.clone()))
        .collect())
}
