//! Persistent cue cache: 16-bit maps keyed by content hashes of the inputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::png;
use crate::cues::{color_cue, location_cue_gaussian, location_cue_video, CueSet, LocationPrior, ObjectnessProvider};
use crate::error::{Error, Result};
use crate::frame::{FrameSample, VideoSequence};
use crate::map::ProbMap;

pub const MANIFEST: &str = "manifest.json";
const COLOR_VERSION: &str = "color/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedFile {
    /// Path relative to the cache directory.
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedFrame {
    pub input_hash: String,
    pub color: CachedFile,
    pub objectness: CachedFile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedLocation {
    pub input_hash: String,
    pub map: CachedFile,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub frames: BTreeMap<String, CachedFrame>,
    pub locations: BTreeMap<String, CachedLocation>,
}

/// Counts of reused and recomputed entries (a frame or a video location map each count once).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: usize,
    pub recomputed: usize,
    pub hash_mismatches: usize,
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn frame_hash(frame: &FrameSample, objectness: &str) -> String {
    let mut h = Sha256::new();
    h.update(COLOR_VERSION);
    h.update(objectness);
    h.update((frame.shape().height as u64).to_le_bytes());
    h.update((frame.shape().width as u64).to_le_bytes());
    for v in frame.rgb.data() {
        h.update(v.to_le_bytes());
    }
    format!("{:x}", h.finalize())
}

enum Lookup {
    Hit(ProbMap),
    Missing,
    Mismatch,
}

fn lookup(dir: &Path, entry: &CachedFile) -> Result<Lookup> {
    let path = dir.join(&entry.file);
    let Ok(bytes) = std::fs::read(&path) else {
        return Ok(Lookup::Missing);
    };
    if sha256_hex(&bytes) != entry.sha256 {
        return Ok(Lookup::Mismatch);
    }
    Ok(Lookup::Hit(png::load_prob_map(&path)?))
}

fn store(dir: &Path, file: String, map: &ProbMap) -> Result<CachedFile> {
    let path = dir.join(&file);
    png::save_prob_map(&path, map)?;
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(CachedFile {
        file,
        sha256: sha256_hex(&bytes),
    })
}

pub fn load_manifest(dir: &Path) -> Result<CacheManifest> {
    let path = dir.join(MANIFEST);
    match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).or_else(|e| {
            log::warn!("{}: unreadable cache manifest ({e}); rebuilding", path.display());
            Ok(CacheManifest::default())
        }),
        Err(_) => Ok(CacheManifest::default()),
    }
}

/// Returns cue sets for every frame, reusing cached maps whose inputs are unchanged.
///
/// Entries whose files are missing or whose contents no longer match the
/// recorded hash are recomputed and overwritten.
pub fn cache_cues(
    videos: &[VideoSequence],
    objectness: &dyn ObjectnessProvider,
    location: LocationPrior,
    cache_dir: &Path,
) -> Result<(Vec<Vec<CueSet>>, CacheManifest, CacheStats)> {
    std::fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    let old = load_manifest(cache_dir)?;
    let mut manifest = CacheManifest::default();
    let mut stats = CacheStats::default();
    let fingerprint = objectness.fingerprint();
    let mut out = Vec::with_capacity(videos.len());
    for video in videos {
        let mut colors = Vec::with_capacity(video.len());
        let mut objs = Vec::with_capacity(video.len());
        let mut video_hash = Sha256::new();
        video_hash.update(format!("{location:?}"));
        for frame in video.frames() {
            let label = frame.label();
            let input_hash = frame_hash(frame, &fingerprint);
            video_hash.update(&input_hash);
            let cached = old.frames.get(&label).filter(|e| e.input_hash == input_hash);
            let mut reused = None;
            if let Some(entry) = cached {
                match (lookup(cache_dir, &entry.color)?, lookup(cache_dir, &entry.objectness)?) {
                    (Lookup::Hit(c), Lookup::Hit(o)) => reused = Some((c, o, entry.clone())),
                    (Lookup::Mismatch, _) | (_, Lookup::Mismatch) => {
                        log::warn!("cue cache entry for {label} does not match its hash; recomputing");
                        stats.hash_mismatches += 1;
                    }
                    _ => {}
                }
            }
            let (c, o, entry) = match reused {
                Some(hit) => {
                    stats.hits += 1;
                    hit
                }
                None => {
                    stats.recomputed += 1;
                    let c = color_cue(frame);
                    let o = objectness.objectness(frame)?;
                    let base = format!("{}/{}", video.video_id(), frame.stem);
                    let entry = CachedFrame {
                        input_hash,
                        color: store(cache_dir, format!("{base}.color.png"), &c)?,
                        objectness: store(cache_dir, format!("{base}.obj.png"), &o)?,
                    };
                    (c, o, entry)
                }
            };
            manifest.frames.insert(label, entry);
            colors.push(c);
            objs.push(o);
        }
        let loc_hash = format!("{:x}", video_hash.finalize());
        let cached = old.locations.get(video.video_id()).filter(|e| e.input_hash == loc_hash);
        let mut loc = None;
        if let Some(entry) = cached {
            match lookup(cache_dir, &entry.map)? {
                Lookup::Hit(m) => {
                    stats.hits += 1;
                    loc = Some((m, entry.clone()));
                }
                Lookup::Mismatch => {
                    log::warn!("cached location map of {} does not match its hash; recomputing", video.video_id());
                    stats.hash_mismatches += 1;
                }
                Lookup::Missing => {}
            }
        }
        let (loc, entry) = match loc {
            Some(hit) => hit,
            None => {
                stats.recomputed += 1;
                let m = match location {
                    LocationPrior::VideoMean => location_cue_video(video, &colors)?,
                    LocationPrior::Gaussian { sigma_frac } => location_cue_gaussian(video.shape(), sigma_frac)?,
                };
                let entry = CachedLocation {
                    input_hash: loc_hash,
                    map: store(cache_dir, format!("{}/location.png", video.video_id()), &m)?,
                };
                (m, entry)
            }
        };
        manifest.locations.insert(video.video_id().to_string(), entry);
        out.push(
            colors
                .into_iter()
                .zip(objs)
                .map(|(c, o)| CueSet::new(c, o, loc.clone()))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    let path: PathBuf = cache_dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok((out, manifest, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cues::{video_cues, CueKind, EdgeDensityObjectness};
    use crate::frame::RgbImage;
    use crate::map::ImageShape;

    fn videos() -> Vec<VideoSequence> {
        let shape = ImageShape::new(12, 16).unwrap();
        (0..2)
            .map(|v| {
                let id = format!("v{v}");
                let frames = (0..3)
                    .map(|t| {
                        let data = (0..shape.len() * 3).map(|i| ((i * 7 + t * 3 + v) % 23) as f32 / 22.0).collect();
                        FrameSample::new(id.clone(), t, RgbImage::new(shape, data).unwrap())
                    })
                    .collect();
                VideoSequence::new(id, frames).unwrap()
            })
            .collect()
    }

    #[test]
    fn second_run_hits_everything_and_deletion_recomputes_once() {
        let dir = tempfile::tempdir().unwrap();
        let vids = videos();
        let obj = EdgeDensityObjectness::default();
        let prior = LocationPrior::VideoMean;
        let (fresh, _, s1) = cache_cues(&vids, &obj, prior, dir.path()).unwrap();
        assert_eq!(s1, CacheStats { hits: 0, recomputed: 8, hash_mismatches: 0 });
        let (cached, manifest, s2) = cache_cues(&vids, &obj, prior, dir.path()).unwrap();
        assert_eq!(s2.recomputed, 0);
        assert_eq!(s2.hits, 8);

        let step = 1.0 / (2.0 * 65535.0) + 1e-12;
        for (a, b) in fresh.iter().flatten().zip(cached.iter().flatten()) {
            for kind in CueKind::ALL {
                for (x, y) in a.get(kind).values().iter().zip(b.get(kind).values()) {
                    assert!((x - y).abs() <= step);
                }
            }
        }
        let direct = video_cues(&vids[0], &obj, prior).unwrap();
        assert_eq!(direct[1], fresh[0][1]);

        let victim = dir.path().join(&manifest.frames["v1/000002"].objectness.file);
        std::fs::remove_file(victim).unwrap();
        let (_, _, s3) = cache_cues(&vids, &obj, prior, dir.path()).unwrap();
        assert_eq!(s3.recomputed, 1);
        assert_eq!(s3.hits, 7);
    }

    #[test]
    fn tampered_files_are_recomputed() {
        let dir = tempfile::tempdir().unwrap();
        let vids = videos();
        let obj = EdgeDensityObjectness::default();
        let (_, manifest, _) = cache_cues(&vids, &obj, LocationPrior::VideoMean, dir.path()).unwrap();
        let target = dir.path().join(&manifest.frames["v0/000000"].color.file);
        png::save_prob_map(&target, &ProbMap::filled(ImageShape::new(12, 16).unwrap(), 0.5).unwrap()).unwrap();
        let (sets, _, stats) = cache_cues(&vids, &obj, LocationPrior::VideoMean, dir.path()).unwrap();
        assert_eq!(stats.hash_mismatches, 1);
        assert_eq!(stats.recomputed, 1);
        assert_eq!(sets[0][0].color, color_cue(&vids[0].frames()[0]));
    }

    #[test]
    fn changing_the_prior_recomputes_only_locations() {
        let dir = tempfile::tempdir().unwrap();
        let vids = videos();
        let obj = EdgeDensityObjectness::default();
        cache_cues(&vids, &obj, LocationPrior::VideoMean, dir.path()).unwrap();
        let (_, _, s) = cache_cues(&vids, &obj, LocationPrior::Gaussian { sigma_frac: 0.25 }, dir.path()).unwrap();
        assert_eq!(s.recomputed, 2);
        assert_eq!(s.hits, 6);
    }
}
