//! Multi-person motion sequences: data model, JSON file format, synthetic
//! generation, normalization, and the three training augmentations.
//!
//! Coordinates are meters in a right-handed frame with +Z vertical.
//! Scene files store raw (un-normalized) positions; normalization is a
//! pipeline step whose offset is carried alongside predictions.

use crate::rng::Rng;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("skeleton edge ({0}, {1}) out of range for {2} joints")]
    EdgeOutOfRange(usize, usize, usize),
    #[error("skeleton edge ({0}, {0}) is a self-loop")]
    SelfLoop(usize),
    #[error("duplicate skeleton edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("scene needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("non-finite position at frame {t}, person {n}, joint {j}")]
    NonFinitePosition { t: usize, n: usize, j: usize },
    #[error("invalid person permutation {0:?} for {1} persons")]
    BadPermutation(Vec<usize>, usize),
    #[error("split {t_h}+{t_f} does not cover scene of {t} frames")]
    BadSplit { t_h: usize, t_f: usize, t: usize },
    #[error("history length must be at least 2, got {0}")]
    HistoryTooShort(usize),
    #[error("scene file {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Bone structure shared by every person in a scene.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skeleton {
    joint_count: usize,
    edges: Vec<(usize, usize)>,
}

impl Skeleton {
    /// Edges are stored with the smaller index first; rejects self-loops,
    /// duplicates, and out-of-range indices.
    pub fn new(joint_count: usize, edges: &[(usize, usize)]) -> Result<Self, SceneError> {
        let mut normalized: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a == b {
                return Err(SceneError::SelfLoop(a));
            }
            if a >= joint_count || b >= joint_count {
                return Err(SceneError::EdgeOutOfRange(a, b, joint_count));
            }
            let e = (a.min(b), a.max(b));
            if normalized.contains(&e) {
                return Err(SceneError::DuplicateEdge(e.0, e.1));
            }
            normalized.push(e);
        }
        Ok(Skeleton { joint_count, edges: normalized })
    }

    /// Chain-with-branches template: a spine chain of the first
    /// `(J+1)/2` joints, remaining joints attached along it. Always one
    /// connected component.
    pub fn template(joint_count: usize) -> Self {
        assert!(joint_count >= 1);
        let spine = joint_count.div_ceil(2).max(1);
        let mut edges = Vec::new();
        for j in 1..spine {
            edges.push((j - 1, j));
        }
        for j in spine..joint_count {
            edges.push(((j - spine) % spine, j));
        }
        Skeleton { joint_count, edges }
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Connected-component label per joint (BFS over bones).
    pub fn components(&self) -> Vec<usize> {
        let mut adj = vec![Vec::new(); self.joint_count];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut label = vec![usize::MAX; self.joint_count];
        let mut next = 0;
        for start in 0..self.joint_count {
            if label[start] != usize::MAX {
                continue;
            }
            let mut queue = vec![start];
            label[start] = next;
            while let Some(j) = queue.pop() {
                for &k in &adj[j] {
                    if label[k] == usize::MAX {
                        label[k] = next;
                        queue.push(k);
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn is_connected(&self) -> bool {
        self.components().iter().all(|&c| c == 0)
    }
}

/// Positions of N persons x J joints over T frames, in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSequence {
    persons: usize,
    skeleton: Skeleton,
    frames: usize,
    fps: f64,
    /// Flat `[T][N][J][3]`, row-major.
    positions: Vec<f64>,
}

impl SceneSequence {
    pub fn new(
        persons: usize,
        skeleton: Skeleton,
        frames: usize,
        fps: f64,
        positions: Vec<f64>,
    ) -> Result<Self, SceneError> {
        if frames < 2 {
            return Err(SceneError::TooFewFrames(frames));
        }
        let j = skeleton.joint_count();
        assert_eq!(positions.len(), frames * persons * j * 3, "position buffer size");
        let scene = SceneSequence { persons, skeleton, frames, fps, positions };
        for t in 0..frames {
            for n in 0..persons {
                for jj in 0..j {
                    if scene.pos(t, n, jj).iter().any(|v| !v.is_finite()) {
                        return Err(SceneError::NonFinitePosition { t, n, j: jj });
                    }
                }
            }
        }
        Ok(scene)
    }

    pub fn persons(&self) -> usize {
        self.persons
    }

    pub fn joints(&self) -> usize {
        self.skeleton.joint_count()
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    fn offset_of(&self, t: usize, n: usize, j: usize) -> usize {
        ((t * self.persons + n) * self.joints() + j) * 3
    }

    /// One joint position as `[x, y, z]`.
    pub fn pos(&self, t: usize, n: usize, j: usize) -> [f64; 3] {
        let o = self.offset_of(t, n, j);
        [self.positions[o], self.positions[o + 1], self.positions[o + 2]]
    }

    pub fn set_pos(&mut self, t: usize, n: usize, j: usize, p: [f64; 3]) {
        let o = self.offset_of(t, n, j);
        self.positions[o..o + 3].copy_from_slice(&p);
    }

    /// Frames `[start, start+len)` as a new flat `[len][N][J][3]` buffer.
    pub fn frame_slice(&self, start: usize, len: usize) -> &[f64] {
        let stride = self.persons * self.joints() * 3;
        &self.positions[start * stride..(start + len) * stride]
    }
}

/// History/future split of a scene: the first `t_h` frames are observed,
/// the remaining `t_f` are the prediction target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub t_h: usize,
    pub t_f: usize,
}

impl SplitSpec {
    pub fn new(t_h: usize, t_f: usize, total_frames: usize) -> Result<Self, SceneError> {
        if t_h < 2 {
            return Err(SceneError::HistoryTooShort(t_h));
        }
        if t_h + t_f != total_frames {
            return Err(SceneError::BadSplit { t_h, t_f, t: total_frames });
        }
        Ok(SplitSpec { t_h, t_f })
    }
}

// ── Normalization ────────────────────────────────────────────────────

/// Subtract the mean joint position of person 0 at frame 0 from every
/// position. Returns the centered scene and the offset that restores it.
pub fn normalize(scene: &SceneSequence) -> (SceneSequence, [f64; 3]) {
    let j = scene.joints();
    let mut offset = [0.0; 3];
    for jj in 0..j {
        let p = scene.pos(0, 0, jj);
        for c in 0..3 {
            offset[c] += p[c];
        }
    }
    for c in &mut offset {
        *c /= j as f64;
    }
    let mut out = scene.clone();
    for v in out.positions.chunks_mut(3) {
        v[0] -= offset[0];
        v[1] -= offset[1];
        v[2] -= offset[2];
    }
    (out, offset)
}

/// Add an offset back onto every position (inverse of `normalize`).
pub fn denormalize(scene: &SceneSequence, offset: [f64; 3]) -> SceneSequence {
    let mut out = scene.clone();
    for v in out.positions.chunks_mut(3) {
        v[0] += offset[0];
        v[1] += offset[1];
        v[2] += offset[2];
    }
    out
}

// ── Augmentation ─────────────────────────────────────────────────────

/// One scene-level augmentation.
#[derive(Debug, Clone, PartialEq)]
pub enum Augment {
    /// Rotate every position about the vertical (+Z) axis by `angle` radians.
    RotateZ { angle: f64 },
    /// Reindex the person axis: new person `n` is old person `perm[n]`.
    PermutePersons { perm: Vec<usize> },
    /// Flip the frame axis; the caller re-derives history/targets from the
    /// reversed scene.
    ReverseTime,
}

pub fn augment(scene: &SceneSequence, spec: &Augment) -> Result<SceneSequence, SceneError> {
    match spec {
        Augment::RotateZ { angle } => {
            let (sin, cos) = angle.sin_cos();
            let mut out = scene.clone();
            for v in out.positions.chunks_mut(3) {
                let (x, y) = (v[0], v[1]);
                v[0] = cos * x - sin * y;
                v[1] = sin * x + cos * y;
            }
            Ok(out)
        }
        Augment::PermutePersons { perm } => {
            let n = scene.persons();
            let mut seen = vec![false; n];
            if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p.min(n - 1)], true)) {
                return Err(SceneError::BadPermutation(perm.clone(), n));
            }
            let mut out = scene.clone();
            for t in 0..scene.frames() {
                for (new_n, &old_n) in perm.iter().enumerate() {
                    for j in 0..scene.joints() {
                        out.set_pos(t, new_n, j, scene.pos(t, old_n, j));
                    }
                }
            }
            Ok(out)
        }
        Augment::ReverseTime => {
            let mut out = scene.clone();
            let t = scene.frames();
            for tt in 0..t {
                for n in 0..scene.persons() {
                    for j in 0..scene.joints() {
                        out.set_pos(tt, n, j, scene.pos(t - 1 - tt, n, j));
                    }
                }
            }
            Ok(out)
        }
    }
}

// ── Synthetic scenes ─────────────────────────────────────────────────

/// Motion family for generated scenes. All motions move each person
/// rigidly, so bone lengths are constant over time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionKind {
    Static,
    ConstantVelocity,
    Circular,
    TwoPersonApproach,
}

impl MotionKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "static" => Some(MotionKind::Static),
            "constant-velocity" => Some(MotionKind::ConstantVelocity),
            "circular" => Some(MotionKind::Circular),
            "two-person-approach" => Some(MotionKind::TwoPersonApproach),
            _ => None,
        }
    }
}

/// Deterministic synthetic scene: a rest pose per person driven by the
/// chosen rigid motion. `two-person-approach` forces walking directions
/// that bring person pairs together.
pub fn synth_scene(
    seed: u64,
    persons: usize,
    joints: usize,
    frames: usize,
    fps: f64,
    kind: MotionKind,
) -> SceneSequence {
    assert!(persons >= 1 && joints >= 1 && frames >= 2);
    let skeleton = Skeleton::template(joints);
    let mut rng = Rng::new(seed);

    // Rest pose: joint 0 near the origin, children offset from their first
    // (lowest-index) neighbor so limbs have fixed lengths.
    let mut rest = vec![[0.0f64; 3]; joints];
    let mut parent = vec![usize::MAX; joints];
    for &(a, b) in skeleton.edges() {
        // Template edges always list the lower (already placed) joint first.
        if parent[b] == usize::MAX && a < b {
            parent[b] = a;
        }
    }
    for j in 1..joints {
        let p = if parent[j] == usize::MAX { 0 } else { parent[j] };
        let len = rng.uniform_in(0.2, 0.5);
        let dir = [rng.normal(), rng.normal(), rng.normal()];
        let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt().max(1e-9);
        for c in 0..3 {
            rest[j][c] = rest[p][c] + len * dir[c] / norm;
        }
    }

    // Per-person placement and rigid trajectory.
    let mut positions = vec![0.0f64; frames * persons * joints * 3];
    for n in 0..persons {
        let base = match kind {
            MotionKind::TwoPersonApproach => {
                // Pairs start 4 m apart along X and walk toward each other.
                let side = if n % 2 == 0 { -2.0 } else { 2.0 };
                [side, n as f64 * 1.5, 0.0]
            }
            _ => [n as f64 * 1.2, rng.uniform_in(-0.5, 0.5), 0.0],
        };
        let velocity = match kind {
            MotionKind::Static => [0.0, 0.0, 0.0],
            MotionKind::ConstantVelocity => {
                [rng.uniform_in(-0.05, 0.05), rng.uniform_in(-0.05, 0.05), 0.0]
            }
            MotionKind::Circular => [0.0, 0.0, 0.0],
            MotionKind::TwoPersonApproach => {
                let toward = if n % 2 == 0 { 1.0 } else { -1.0 };
                [toward * 0.04, 0.0, 0.0]
            }
        };
        let (radius, omega, phase) = if kind == MotionKind::Circular {
            (rng.uniform_in(0.5, 1.5), rng.uniform_in(0.05, 0.2), rng.uniform_in(0.0, 1.0))
        } else {
            (0.0, 0.0, 0.0)
        };

        for t in 0..frames {
            let tf = t as f64;
            let center = if kind == MotionKind::Circular {
                let a = phase + omega * tf;
                [base[0] + radius * a.cos(), base[1] + radius * a.sin(), base[2]]
            } else {
                [
                    base[0] + velocity[0] * tf,
                    base[1] + velocity[1] * tf,
                    base[2] + velocity[2] * tf,
                ]
            };
            for (j, joint_rest) in rest.iter().enumerate() {
                let o = ((t * persons + n) * joints + j) * 3;
                positions[o] = center[0] + joint_rest[0];
                positions[o + 1] = center[1] + joint_rest[1];
                positions[o + 2] = center[2] + joint_rest[2];
            }
        }
    }

    SceneSequence::new(persons, skeleton, frames, fps, positions)
        .expect("synthetic scenes are finite by construction")
}

// ── Scene file format (JSON) ─────────────────────────────────────────
//
// Top-level object:
//   persons: int, joints: int, fps: number,
//   bones: [[i, j], ...],
//   positions: [T][N][J][3] nested arrays of numbers (meters, +Z up).

pub fn scene_to_json(scene: &SceneSequence) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "{{\n  \"persons\": {},\n  \"joints\": {},\n  \"fps\": {},\n  \"bones\": [",
        scene.persons(),
        scene.joints(),
        serde_json::Number::from_f64(scene.fps()).expect("finite fps")
    );
    for (i, &(a, b)) in scene.skeleton().edges().iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "[{a},{b}]");
    }
    s.push_str("],\n  \"positions\": [");
    for t in 0..scene.frames() {
        if t > 0 {
            s.push(',');
        }
        s.push_str("\n    [");
        for n in 0..scene.persons() {
            if n > 0 {
                s.push(',');
            }
            s.push('[');
            for j in 0..scene.joints() {
                if j > 0 {
                    s.push(',');
                }
                let p = scene.pos(t, n, j);
                let _ = write!(s, "[{},{},{}]", fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(p[2]));
            }
            s.push(']');
        }
        s.push(']');
    }
    s.push_str("\n  ]\n}\n");
    s
}

fn fmt_f64(v: f64) -> String {
    let mut buf = serde_json::to_string(&v).expect("finite float");
    if !buf.contains('.') && !buf.contains('e') && !buf.contains('E') {
        buf.push_str(".0");
    }
    buf
}

pub fn write_scene_file(scene: &SceneSequence, path: &Path) -> Result<(), SceneError> {
    std::fs::write(path, scene_to_json(scene))
        .map_err(|source| SceneError::Io { path: path.display().to_string(), source })
}

pub fn read_scene_file(path: &Path) -> Result<SceneSequence, SceneError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| SceneError::Io { path: path.display().to_string(), source })?;
    parse_scene_json(&text, &path.display().to_string())
}

/// Parse and validate a scene document. Errors name the JSON path of the
/// offending element (ragged arrays, non-finite or non-numeric values).
pub fn parse_scene_json(text: &str, origin: &str) -> Result<SceneSequence, SceneError> {
    let fail = |reason: String| SceneError::Parse { path: origin.to_string(), reason };
    let root: serde_json::Value =
        serde_json::from_str(text).map_err(|e| fail(format!("invalid JSON: {e}")))?;
    let obj = root.as_object().ok_or_else(|| fail("top level must be an object".into()))?;

    let get_usize = |key: &str| -> Result<usize, SceneError> {
        obj.get(key)
            .and_then(|v| v.as_u64())
            .map(|v| v as usize)
            .ok_or_else(|| fail(format!("{key}: expected a non-negative integer")))
    };
    let persons = get_usize("persons")?;
    let joints = get_usize("joints")?;
    if persons == 0 || joints == 0 {
        return Err(fail("persons and joints must be positive".into()));
    }
    let fps = obj
        .get("fps")
        .and_then(|v| v.as_f64())
        .filter(|v| v.is_finite() && *v > 0.0)
        .ok_or_else(|| fail("fps: expected a positive number".into()))?;

    let bones_val = obj
        .get("bones")
        .and_then(|v| v.as_array())
        .ok_or_else(|| fail("bones: expected an array".into()))?;
    let mut bones = Vec::with_capacity(bones_val.len());
    for (i, pair) in bones_val.iter().enumerate() {
        let arr = pair
            .as_array()
            .filter(|a| a.len() == 2)
            .ok_or_else(|| fail(format!("bones[{i}]: expected a pair [i, j]")))?;
        let a = arr[0]
            .as_u64()
            .ok_or_else(|| fail(format!("bones[{i}][0]: expected an integer")))?;
        let b = arr[1]
            .as_u64()
            .ok_or_else(|| fail(format!("bones[{i}][1]: expected an integer")))?;
        bones.push((a as usize, b as usize));
    }
    let skeleton = Skeleton::new(joints, &bones)
        .map_err(|e| fail(format!("bones: {e}")))?;

    let frames_val = obj
        .get("positions")
        .and_then(|v| v.as_array())
        .ok_or_else(|| fail("positions: expected an array".into()))?;
    let frames = frames_val.len();
    let mut positions = Vec::with_capacity(frames * persons * joints * 3);
    for (t, frame) in frames_val.iter().enumerate() {
        let frame = frame
            .as_array()
            .ok_or_else(|| fail(format!("positions[{t}]: expected an array")))?;
        if frame.len() != persons {
            return Err(fail(format!(
                "positions[{t}]: expected {persons} persons, got {}",
                frame.len()
            )));
        }
        for (n, person) in frame.iter().enumerate() {
            let person = person
                .as_array()
                .ok_or_else(|| fail(format!("positions[{t}][{n}]: expected an array")))?;
            if person.len() != joints {
                return Err(fail(format!(
                    "positions[{t}][{n}]: expected {joints} joints, got {}",
                    person.len()
                )));
            }
            for (j, coords) in person.iter().enumerate() {
                let coords = coords
                    .as_array()
                    .ok_or_else(|| fail(format!("positions[{t}][{n}][{j}]: expected an array")))?;
                if coords.len() != 3 {
                    return Err(fail(format!(
                        "positions[{t}][{n}][{j}]: expected 3 numbers, got {}",
                        coords.len()
                    )));
                }
                for (c, v) in coords.iter().enumerate() {
                    let v = v.as_f64().filter(|v| v.is_finite()).ok_or_else(|| {
                        fail(format!("positions[{t}][{n}][{j}][{c}]: expected a finite number"))
                    })?;
                    positions.push(v);
                }
            }
        }
    }

    SceneSequence::new(persons, skeleton, frames, fps, positions)
        .map_err(|e| fail(e.to_string()))
}
