//! Directory-level curation: reads raw sequences, applies the filters and
//! writes accepted clips plus a line-delimited manifest.
//!
//! Input layout, per source id `<id>`: `<id>.gmc` (motion, required),
//! `<id>.wav` (audio, optional) and `<id>.txt` (transcript, optional; lines
//! `start_s<TAB>end_s<TAB>text`, or plain text spanning the whole sequence).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::{
    clip_frames_for, detect_abnormal_wrist, filter_transcript, motion_degree_stats, segment_clips,
    smooth_sequence, ClipManifestEntry, ClipStatus, DiscardReason, MotionDegreeStats, Segment,
    SourceSequence, TranscriptSpan, WristLimits,
};
use crate::audio::{read_wav, write_wav};
use crate::container::write_file;
use crate::error::{Error, Result};
use crate::motion::{gmc, resample_fps, MotionClip, CANONICAL_FPS};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const REPORT_FILE: &str = "curation_report.json";
pub const CLIP_DIR: &str = "clips";
/// Named in every report: smoothing is a chordal moving average, not a
/// learned smoother.
pub const SMOOTHING_NOTE: &str = "temporal smoothing: chordal-mean moving average on SO(3) (stand-in for a learned smoother)";

#[derive(Debug, Clone, PartialEq)]
pub struct CurationConfig {
    pub clip_seconds: f64,
    pub limits: WristLimits,
    /// Odd window for smoothing accepted clips; `None` disables it.
    pub smooth_window: Option<usize>,
    pub histogram_bins: usize,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            clip_seconds: 10.0,
            limits: WristLimits::default(),
            smooth_window: Some(5),
            histogram_bins: 10,
        }
    }
}

/// External filter decision for a source, optionally limited to a frame range.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub source_id: String,
    pub reason: DiscardReason,
    pub frames: Option<(usize, usize)>,
}

/// Parses `source_id<TAB>reason[<TAB>start<TAB>end]` lines; `#` starts a comment.
pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        let bad = || Error::format("annotations", format!("line {}: {line:?}", i + 1));
        let frames = match cols.len() {
            2 => None,
            4 => Some((
                cols[2].parse().map_err(|_| bad())?,
                cols[3].parse().map_err(|_| bad())?,
            )),
            _ => return Err(bad()),
        };
        out.push(Annotation {
            source_id: cols[0].to_string(),
            reason: DiscardReason::parse(cols[1]),
            frames,
        });
    }
    Ok(out)
}

pub fn parse_transcript(text: &str, duration_s: f64) -> Vec<TranscriptSpan> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let cols: Vec<&str> = l.splitn(3, '\t').collect();
            match (cols.len(), cols.first().and_then(|c| c.trim().parse::<f64>().ok()), cols.get(1).and_then(|c| c.trim().parse::<f64>().ok())) {
                (3, Some(s), Some(e)) => TranscriptSpan {
                    start_s: s,
                    end_s: e,
                    text: cols[2].trim().to_string(),
                },
                _ => TranscriptSpan {
                    start_s: 0.0,
                    end_s: duration_s,
                    text: l.trim().to_string(),
                },
            }
        })
        .collect()
}

/// Source ids (file stems of `*.gmc`) in `dir`, sorted.
pub fn list_sources(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x == "gmc") {
            if let Some(s) = p.file_stem().and_then(|s| s.to_str()) {
                ids.push(s.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn load_source(dir: &Path, id: &str) -> Result<SourceSequence> {
    let motion = gmc::read(&dir.join(format!("{id}.gmc")))?;
    let wav = dir.join(format!("{id}.wav"));
    let audio = if wav.exists() { Some(read_wav(&wav)?) } else { None };
    let txt = dir.join(format!("{id}.txt"));
    let transcript = if txt.exists() {
        let t = fs::read_to_string(&txt).map_err(|e| Error::io(&txt, e))?;
        parse_transcript(&t, motion.duration_s())
    } else {
        Vec::new()
    };
    Ok(SourceSequence {
        source_id: id.to_string(),
        motion,
        audio,
        transcript,
    })
}

fn whole_source_discard(seq: &SourceSequence, reason: DiscardReason) -> Segment {
    let n = seq.motion.n_frames();
    Segment {
        entry: ClipManifestEntry {
            clip_id: format!("{}_{:06}", seq.source_id, 0),
            source_id: seq.source_id.clone(),
            frame_range: (0, n),
            duration_s: seq.motion.duration_s(),
            transcript: None,
            status: ClipStatus::Discarded,
            discard_reason: Some(reason),
            transcript_dropped: false,
        },
        motion: None,
        audio: None,
    }
}

/// Curates one in-memory sequence.
pub fn curate_sequence(
    mut seq: SourceSequence,
    config: &CurationConfig,
    annotations: &[Annotation],
) -> Result<Vec<Segment>> {
    if (seq.motion.fps - CANONICAL_FPS).abs() > 1e-9 {
        seq.motion = resample_fps(&seq.motion, CANONICAL_FPS)?;
    }
    if seq.motion.n_frames() == 0 {
        return Ok(Vec::new());
    }
    let own: Vec<&Annotation> = annotations.iter().filter(|a| a.source_id == seq.source_id).collect();
    if let Some(a) = own.iter().find(|a| a.frames.is_none()) {
        return Ok(vec![whole_source_discard(&seq, a.reason)]);
    }
    if let Some(audio) = &seq.audio {
        if !audio.matches_duration(seq.motion.duration_s()) {
            log::warn!(
                "{}: audio lasts {:.2} s but motion {:.2} s; discarding",
                seq.source_id,
                audio.duration_s(),
                seq.motion.duration_s()
            );
            return Ok(vec![whole_source_discard(&seq, DiscardReason::Other)]);
        }
    }
    let wrists = seq.motion.layout.wrist_indices();
    let report = detect_abnormal_wrist(&seq.motion, &wrists, &config.limits)?;
    let mut segments = segment_clips(&seq, clip_frames_for(config.clip_seconds), &report);
    for s in &mut segments {
        let (a, b) = s.entry.frame_range;
        if let Some(ann) = own.iter().find(|x| x.frames.is_some_and(|(fs, fe)| fs < b && fe > a)) {
            if s.entry.is_accepted() {
                s.entry.status = ClipStatus::Discarded;
                s.entry.discard_reason = Some(ann.reason);
                s.motion = None;
                s.audio = None;
            }
        }
        if s.entry.is_accepted() {
            s.entry = filter_transcript(s.entry.clone());
            if let (Some(w), Some(m)) = (config.smooth_window, s.motion.as_ref()) {
                if w <= m.n_frames() {
                    s.motion = Some(smooth_sequence(m, w)?);
                }
            }
        }
    }
    Ok(segments)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurationSummary {
    pub sources: usize,
    pub accepted: usize,
    pub discarded: BTreeMap<String, usize>,
    pub transcripts_dropped: usize,
    pub motion_degree: Option<MotionDegreeStats>,
    pub smoothing: String,
}

/// Curates every source in `input` and writes clips, manifest and report to `output`.
pub fn curate_directory(
    input: &Path,
    output: &Path,
    config: &CurationConfig,
    annotations: &[Annotation],
) -> Result<CurationSummary> {
    let ids = list_sources(input)?;
    if ids.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no .gmc sequences in {}",
            input.display()
        )));
    }
    let per_source: Vec<Vec<Segment>> = ids
        .par_iter()
        .map(|id| {
            load_source(input, id)
                .and_then(|s| curate_sequence(s, config, annotations))
                .map_err(|e| e.in_stage(format!("curate {id}")))
        })
        .collect::<Result<_>>()?;

    let clip_dir = output.join(CLIP_DIR);
    fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;
    let mut manifest = String::new();
    let mut accepted: Vec<MotionClip> = Vec::new();
    let mut discarded: BTreeMap<String, usize> = BTreeMap::new();
    let mut transcripts_dropped = 0;
    for seg in per_source.into_iter().flatten() {
        let e = &seg.entry;
        manifest.push_str(&serde_json::to_string(e).expect("manifest entries serialize"));
        manifest.push('\n');
        if let Some(reason) = e.discard_reason {
            let key = serde_json::to_value(reason).expect("reason serializes");
            *discarded.entry(key.as_str().unwrap_or("other").to_string()).or_default() += 1;
        }
        if e.transcript_dropped {
            transcripts_dropped += 1;
        }
        if let Some(m) = &seg.motion {
            gmc::write(&clip_dir.join(format!("{}.gmc", e.clip_id)), m)?;
            accepted.push(m.clone());
        }
        if let Some(a) = &seg.audio {
            write_wav(&clip_dir.join(format!("{}.wav", e.clip_id)), a)?;
        }
        if let Some(t) = &e.transcript {
            let p = clip_dir.join(format!("{}.txt", e.clip_id));
            fs::write(&p, t).map_err(|err| Error::io(&p, err))?;
        }
    }
    write_file(&output.join(MANIFEST_FILE), manifest.as_bytes())?;
    let summary = CurationSummary {
        sources: ids.len(),
        accepted: accepted.len(),
        discarded,
        transcripts_dropped,
        motion_degree: if accepted.is_empty() {
            None
        } else {
            Some(motion_degree_stats(&accepted, config.histogram_bins)?)
        },
        smoothing: match config.smooth_window {
            Some(w) => format!("{SMOOTHING_NOTE}, window {w}"),
            None => "temporal smoothing disabled".into(),
        },
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&output.join(REPORT_FILE), json.as_bytes())?;
    Ok(summary)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ClipManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::format("manifest", format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// Paths of accepted clip files listed in a manifest.
pub fn accepted_clip_paths(output: &Path) -> Result<Vec<PathBuf>> {
    Ok(read_manifest(&output.join(MANIFEST_FILE))?
        .into_iter()
        .filter(ClipManifestEntry::is_accepted)
        .map(|e| output.join(CLIP_DIR).join(format!("{}.gmc", e.clip_id)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::AudioClip;
    use crate::motion::{JointLayout, RotationMatrix};

    #[test]
    fn annotation_and_transcript_parsing() {
        let a = parse_annotations("# header\ns1\tmulti_person\ns2\tjitter\t10\t40\n\n").unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].reason, DiscardReason::Other);
        assert_eq!(a[1].frames, Some((10, 40)));
        assert!(parse_annotations("s1\tx\t3").is_err());
        let t = parse_transcript("0.5\t2.0\thello world\nplain words here\n", 12.0);
        assert_eq!(t[0].start_s, 0.5);
        assert_eq!(t[1].end_s, 12.0);
    }

    #[test]
    fn directory_round_trip_is_deterministic() {
        let input = tempfile::tempdir().unwrap();
        let layout = JointLayout::upper_body();
        let wrist = layout.wrist_indices()[0];
        let bad = MotionClip::from_rotations(600, 15.0, layout.clone(), |f, j| {
            if j == wrist && f == 400 {
                RotationMatrix::from_euler_xyz_deg([160.0, 0.0, 0.0])
            } else {
                RotationMatrix::identity()
            }
        });
        gmc::write(&input.path().join("a.gmc"), &bad).unwrap();
        write_wav(&input.path().join("a.wav"), &AudioClip::silence(40.0, 16_000)).unwrap();
        fs::write(input.path().join("a.txt"), "0\t40\tthis transcript has enough words in it\n").unwrap();
        gmc::write(&input.path().join("b.gmc"), &MotionClip::rest_pose(160, 15.0, layout)).unwrap();

        let run = |dir: &Path| {
            curate_directory(input.path(), dir, &CurationConfig::default(), &[]).unwrap()
        };
        let o1 = tempfile::tempdir().unwrap();
        let o2 = tempfile::tempdir().unwrap();
        let s1 = run(o1.path());
        let s2 = run(o2.path());
        assert_eq!(s1, s2);
        assert_eq!(s1.sources, 2);
        // a: [0,150) [150,300) accepted, [300,325) short, [325,475) abnormal, [475,600) short; b: 1 + short.
        assert_eq!(s1.accepted, 3);
        assert_eq!(s1.discarded.get("abnormal_wrist"), Some(&1));
        assert_eq!(s1.discarded.get("too_short"), Some(&3));
        assert!(s1.smoothing.contains("chordal"));
        let m1 = fs::read(o1.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(m1, fs::read(o2.path().join(MANIFEST_FILE)).unwrap());
        let entries = read_manifest(&o1.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(entries.len(), 7);
        let paths = accepted_clip_paths(o1.path()).unwrap();
        assert_eq!(paths.len(), 3);
        for p in &paths {
            assert_eq!(fs::read(p).unwrap(), fs::read(o2.path().join(p.strip_prefix(o1.path()).unwrap())).unwrap());
            assert_eq!(gmc::read(p).unwrap().n_frames(), 150);
        }
        assert!(o1.path().join(CLIP_DIR).join("a_000000.wav").exists());
        assert!(o1.path().join(CLIP_DIR).join("a_000000.txt").exists());
    }

    #[test]
    fn whole_source_annotations_discard_everything() {
        let seq = SourceSequence {
            source_id: "x".into(),
            motion: MotionClip::rest_pose(300, 15.0, JointLayout::upper_body()),
            audio: None,
            transcript: vec![],
        };
        let ann = vec![Annotation {
            source_id: "x".into(),
            reason: DiscardReason::Other,
            frames: None,
        }];
        let segs = curate_sequence(seq, &CurationConfig::default(), &ann).unwrap();
        assert_eq!(segs.len(), 1);
        assert!(!segs[0].entry.is_accepted());
    }
}
