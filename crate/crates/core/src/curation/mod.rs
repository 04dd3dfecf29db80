//! Dataset curation: abnormal wrist detection, fixed-length segmentation,
//! transcript filtering, rotation smoothing and motion statistics.

pub mod run;

use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::motion::{
    euler_xyz_from_matrix, geodesic_angle, rot6d_from_matrix, MotionClip, RotationMatrix,
    CANONICAL_FPS, CANONICAL_FRAMES,
};
use crate::motion::rotation::project_to_rotation;

pub const ANGLE_LIMIT_DEG: f64 = 150.0;
pub const DELTA_LIMIT_DEG: f64 = 25.0;
pub const DISCARD_WINDOW: usize = 150;
pub const MIN_TRANSCRIPT_WORDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    TooShort,
    AbnormalWrist,
    Jitter,
    ShortTranscript,
    Other,
}

impl DiscardReason {
    pub fn parse(s: &str) -> Self {
        match s {
            "too_short" => Self::TooShort,
            "abnormal_wrist" => Self::AbnormalWrist,
            "jitter" => Self::Jitter,
            "short_transcript" => Self::ShortTranscript,
            _ => Self::Other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipStatus {
    Accepted,
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipManifestEntry {
    pub clip_id: String,
    pub source_id: String,
    /// Half-open frame range `[start, end)` in the source sequence.
    pub frame_range: (usize, usize),
    pub duration_s: f64,
    pub transcript: Option<String>,
    pub status: ClipStatus,
    pub discard_reason: Option<DiscardReason>,
    /// The transcript was dropped but the clip kept for its motion and audio.
    #[serde(default)]
    pub transcript_dropped: bool,
}

impl ClipManifestEntry {
    pub fn is_accepted(&self) -> bool {
        self.status == ClipStatus::Accepted
    }

    fn discard(mut self, reason: DiscardReason) -> Self {
        self.status = ClipStatus::Discarded;
        self.discard_reason = Some(reason);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagReason {
    AngleExceeds,
    DeltaExceeds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WristFlag {
    pub frame: usize,
    pub joint: usize,
    pub axis: usize,
    pub reason: FlagReason,
    pub degrees: f64,
}

/// Where a discard window sits relative to its flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// 75 frames before the flag, the flag, 74 after.
    #[default]
    Centered,
    /// The flag and the 149 frames after it.
    Trailing,
}

impl std::str::FromStr for WindowMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centered" => Ok(Self::Centered),
            "trailing" => Ok(Self::Trailing),
            _ => Err(Error::Config(format!("unknown window mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WristLimits {
    pub angle_deg: f64,
    pub delta_deg: f64,
    pub window: usize,
    pub mode: WindowMode,
}

impl Default for WristLimits {
    fn default() -> Self {
        Self {
            angle_deg: ANGLE_LIMIT_DEG,
            delta_deg: DELTA_LIMIT_DEG,
            window: DISCARD_WINDOW,
            mode: WindowMode::Centered,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AbnormalityReport {
    /// Sorted, unique.
    pub flagged_frames: Vec<usize>,
    pub flags: Vec<WristFlag>,
    /// Merged half-open ranges `[start, end)`.
    pub discard_windows: Vec<(usize, usize)>,
}

impl AbnormalityReport {
    pub fn is_clean(&self) -> bool {
        self.flags.is_empty()
    }

    /// Dominant reason inside `[start, end)`: any angle flag makes it an
    /// abnormal pose, otherwise it is jitter.
    pub fn reason_in(&self, start: usize, end: usize) -> Option<DiscardReason> {
        let inside: Vec<&WristFlag> = self.flags.iter().filter(|f| f.frame >= start && f.frame < end).collect();
        if inside.is_empty() {
            None
        } else if inside.iter().any(|f| f.reason == FlagReason::AngleExceeds) {
            Some(DiscardReason::AbnormalWrist)
        } else {
            Some(DiscardReason::Jitter)
        }
    }
}

/// `x` wrapped into `(−180, 180]`.
fn wrap_degrees(x: f64) -> f64 {
    let y = x.rem_euclid(360.0);
    if y > 180.0 {
        y - 360.0
    } else {
        y
    }
}

/// The discard window around `frame` in a sequence of `n` frames.
pub fn discard_window(frame: usize, n: usize, window: usize, mode: WindowMode) -> (usize, usize) {
    let (start, end) = match mode {
        WindowMode::Centered => (frame.saturating_sub(window / 2), frame + window - window / 2),
        WindowMode::Trailing => (frame, frame + window),
    };
    (start, end.min(n))
}

fn merge_windows(mut w: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    w.sort_unstable();
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(w.len());
    for (s, e) in w {
        match out.last_mut() {
            Some(last) if s < last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

/// Flags frames whose wrist Euler angles exceed `limits.angle_deg` on any
/// axis or change by more than `limits.delta_deg` from the previous frame.
pub fn detect_abnormal_wrist(
    clip: &MotionClip,
    wrist_indices: &[usize],
    limits: &WristLimits,
) -> Result<AbnormalityReport> {
    if let Some(&bad) = wrist_indices.iter().find(|&&j| j >= clip.joint_count()) {
        return Err(Error::Config(format!(
            "wrist joint {bad} out of range for {} joints",
            clip.joint_count()
        )));
    }
    if (clip.fps - CANONICAL_FPS).abs() > 1e-9 {
        log::warn!(
            "wrist jump threshold assumes {CANONICAL_FPS} fps, clip runs at {}",
            clip.fps
        );
    }
    let n = clip.n_frames();
    let mut flags = Vec::new();
    for &j in wrist_indices {
        let mut prev: Option<[f64; 3]> = None;
        for f in 0..n {
            let e = euler_xyz_from_matrix(&clip.rotation(f, j)?).degrees;
            for axis in 0..3 {
                if e[axis].abs() > limits.angle_deg {
                    flags.push(WristFlag {
                        frame: f,
                        joint: j,
                        axis,
                        reason: FlagReason::AngleExceeds,
                        degrees: e[axis],
                    });
                }
                if let Some(p) = prev {
                    let d = wrap_degrees(e[axis] - p[axis]);
                    if d.abs() > limits.delta_deg {
                        flags.push(WristFlag {
                            frame: f,
                            joint: j,
                            axis,
                            reason: FlagReason::DeltaExceeds,
                            degrees: d,
                        });
                    }
                }
            }
            prev = Some(e);
        }
    }
    flags.sort_by_key(|f| (f.frame, f.joint, f.axis, f.reason as u8));
    let mut frames: Vec<usize> = flags.iter().map(|f| f.frame).collect();
    frames.dedup();
    let windows = merge_windows(
        frames
            .iter()
            .map(|&f| discard_window(f, n, limits.window, limits.mode))
            .collect(),
    );
    Ok(AbnormalityReport {
        flagged_frames: frames,
        flags,
        discard_windows: windows,
    })
}

/// A transcript line covering `[start_s, end_s)` of the source.
#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptSpan {
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
}

/// One raw recording to curate.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSequence {
    pub source_id: String,
    pub motion: MotionClip,
    pub audio: Option<AudioClip>,
    pub transcript: Vec<TranscriptSpan>,
}

/// A manifest entry with its data, present for accepted clips.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub entry: ClipManifestEntry,
    pub motion: Option<MotionClip>,
    pub audio: Option<AudioClip>,
}

fn transcript_for(spans: &[TranscriptSpan], start_s: f64, end_s: f64) -> Option<String> {
    let words: Vec<&str> = spans
        .iter()
        .filter(|s| s.start_s < end_s && s.end_s > start_s)
        .flat_map(|s| s.text.split_whitespace())
        .collect();
    Some(words.join(" "))
}

/// Cuts `[start, end)` into consecutive `clip_frames` clips; the remainder
/// becomes one `too_short` entry.
fn segment_run(seq: &SourceSequence, start: usize, end: usize, clip_frames: usize, out: &mut Vec<Segment>) {
    let fps = seq.motion.fps;
    let mut s = start;
    while s < end {
        let e = (s + clip_frames).min(end);
        let (t0, t1) = (s as f64 / fps, e as f64 / fps);
        let entry = ClipManifestEntry {
            clip_id: format!("{}_{:06}", seq.source_id, s),
            source_id: seq.source_id.clone(),
            frame_range: (s, e),
            duration_s: t1 - t0,
            transcript: transcript_for(&seq.transcript, t0, t1),
            status: ClipStatus::Accepted,
            discard_reason: None,
            transcript_dropped: false,
        };
        if e - s < clip_frames {
            out.push(Segment {
                entry: entry.discard(DiscardReason::TooShort),
                motion: None,
                audio: None,
            });
        } else {
            out.push(Segment {
                entry,
                motion: Some(seq.motion.slice(s, clip_frames)),
                audio: seq.audio.as_ref().map(|a| a.slice_seconds(t0, t1)),
            });
        }
        s = e;
    }
}

/// Splits a sequence into fixed-length clips, skipping discard windows.
/// Each window becomes one discarded entry; the frames between windows are
/// cut into clips independently.
pub fn segment_clips(
    seq: &SourceSequence,
    clip_frames: usize,
    report: &AbnormalityReport,
) -> Vec<Segment> {
    let n = seq.motion.n_frames();
    let fps = seq.motion.fps;
    let mut out = Vec::new();
    let mut cursor = 0;
    for &(ws, we) in &report.discard_windows {
        if ws > cursor {
            segment_run(seq, cursor, ws, clip_frames, &mut out);
        }
        let reason = report.reason_in(ws, we).unwrap_or(DiscardReason::Other);
        out.push(Segment {
            entry: ClipManifestEntry {
                clip_id: format!("{}_{:06}", seq.source_id, ws),
                source_id: seq.source_id.clone(),
                frame_range: (ws, we),
                duration_s: (we - ws) as f64 / fps,
                transcript: None,
                status: ClipStatus::Discarded,
                discard_reason: Some(reason),
                transcript_dropped: false,
            },
            motion: None,
            audio: None,
        });
        cursor = we;
    }
    if cursor < n {
        segment_run(seq, cursor, n, clip_frames, &mut out);
    }
    out
}

/// Number of frames in a clip of `seconds` at the canonical rate.
pub fn clip_frames_for(seconds: f64) -> usize {
    let f = (seconds * CANONICAL_FPS).round() as usize;
    if f == 0 {
        CANONICAL_FRAMES
    } else {
        f
    }
}

/// Drops transcripts shorter than five words while keeping the clip.
pub fn filter_transcript(mut entry: ClipManifestEntry) -> ClipManifestEntry {
    let words = entry
        .transcript
        .as_deref()
        .map_or(0, |t| t.split_whitespace().count());
    if words < MIN_TRANSCRIPT_WORDS {
        entry.transcript = None;
        entry.transcript_dropped = true;
    }
    entry
}

/// Moving chordal mean of every joint rotation over an odd `window`,
/// projected back onto SO(3). Windows shrink at the ends.
pub fn smooth_sequence(clip: &MotionClip, window: usize) -> Result<MotionClip> {
    let n = clip.n_frames();
    if window < 3 || window % 2 == 0 || window > n {
        return Err(Error::InvalidWindow(window));
    }
    let half = window / 2;
    let j = clip.joint_count();
    let rots: Vec<Vec<RotationMatrix>> = (0..n)
        .map(|f| (0..j).map(|k| clip.rotation(f, k)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let mut out = clip.clone();
    for f in 0..n {
        let (lo, hi) = (f.saturating_sub(half), (f + half).min(n - 1));
        for k in 0..j {
            let mut sum = nalgebra::Matrix3::zeros();
            for r in &rots[lo..=hi] {
                sum += r[k].matrix();
            }
            let mean = project_to_rotation(&sum)?;
            out.set_rot6d(f, k, rot6d_from_matrix(&mean));
        }
    }
    Ok(out)
}

/// Mean geodesic change per frame, averaged over joints (radians/frame).
pub fn motion_degree(clip: &MotionClip) -> Result<f64> {
    let n = clip.n_frames();
    let j = clip.joint_count();
    if n < 2 {
        return Err(Error::TooShort("motion degree needs at least 2 frames".into()));
    }
    let mut total = 0.0;
    for k in 0..j {
        let mut prev = clip.rotation(0, k)?;
        for f in 1..n {
            let cur = clip.rotation(f, k)?;
            total += geodesic_angle(&prev, &cur);
            prev = cur;
        }
    }
    Ok(total / ((n - 1) * j) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins over `[lo, hi]`; values at `hi` land in the last bin
    /// and values outside the range are clamped to the nearest bin.
    pub fn new(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(Error::Config(format!("invalid histogram range [{lo}, {hi}] with {bins} bins")));
        }
        let w = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + w * i as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let b = (((v - lo) / w).floor().max(0.0) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Ok(Self { edges, counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MotionDegreeStats {
    pub values: Vec<f64>,
    pub histogram: Histogram,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Per-clip motion degree with a histogram over `[0, max]` (or `[0, 1]` if
/// every clip is static).
pub fn motion_degree_stats(clips: &[MotionClip], bins: usize) -> Result<MotionDegreeStats> {
    let values: Vec<f64> = clips.iter().map(motion_degree).collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(Error::InsufficientData("no clips for motion statistics".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let hi = if max > 0.0 { max } else { 1.0 };
    let histogram = Histogram::new(&values, bins, 0.0, hi)?;
    Ok(MotionDegreeStats {
        values,
        histogram,
        mean,
        std,
        min,
        max,
    })
}
