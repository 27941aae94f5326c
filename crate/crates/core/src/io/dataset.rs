//! On-disk dataset layout: `root/<video>/frames/<index>.png` with optional
//! masks at `root/<video>/masks/<index>.png`. Frame stems are zero-padded
//! decimal indices.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use image::imageops::FilterType;

use super::png;
use crate::error::{Error, Result};
use crate::frame::{FrameSample, RgbImage, VideoSequence};
use crate::map::{BinaryMask, GroundTruthMask, ImageShape};
use crate::training::LabelSource;

pub const FRAMES_DIR: &str = "frames";
pub const MASKS_DIR: &str = "masks";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn frame_path(&self, video: &str, stem: &str) -> PathBuf {
        self.root.join(video).join(FRAMES_DIR).join(format!("{stem}.png"))
    }

    pub fn mask_path(&self, video: &str, stem: &str) -> PathBuf {
        self.root.join(video).join(MASKS_DIR).join(format!("{stem}.png"))
    }

    /// Video directories that contain a `frames` folder, sorted by name.
    pub fn video_ids(&self) -> Result<Vec<String>> {
        let entries = std::fs::read_dir(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let mut ids = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&self.root, e))?;
            if entry.path().join(FRAMES_DIR).is_dir() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }
}

fn frame_stems(dir: &Path, problems: &mut Vec<String>) -> Result<Vec<(usize, String)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut stems = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        // Side files such as `<stem>.obj.png` share the folder.
        if stem.contains('.') {
            continue;
        }
        match stem.parse::<usize>() {
            Ok(t) => stems.push((t, stem)),
            Err(_) => problems.push(format!("{}: frame name is not a numeric index", path.display())),
        }
    }
    stems.sort();
    Ok(stems)
}

fn resize_rgb(img: image::RgbImage, target: Option<ImageShape>) -> image::RgbImage {
    match target {
        Some(s) if (img.height() as usize, img.width() as usize) != (s.height, s.width) => {
            image::imageops::resize(&img, s.width as u32, s.height as u32, FilterType::Triangle)
        }
        _ => img,
    }
}

/// Loads every video under the layout root, resized to `resolution` when given.
///
/// All problems found (undecodable files, index gaps, size mismatches) are
/// reported together.
pub fn load_dataset(layout: &DatasetLayout, resolution: Option<ImageShape>) -> Result<Vec<VideoSequence>> {
    if !layout.root.is_dir() {
        return Err(Error::Dataset(vec![format!("{} is not a directory", layout.root.display())]));
    }
    let mut problems = Vec::new();
    let mut videos = Vec::new();
    for id in layout.video_ids()? {
        let dir = layout.root.join(&id).join(FRAMES_DIR);
        let stems = frame_stems(&dir, &mut problems)?;
        if stems.is_empty() {
            problems.push(format!("{}: no frames", dir.display()));
            continue;
        }
        for (k, pair) in stems.windows(2).enumerate() {
            if pair[1].0 != pair[0].0 + 1 {
                problems.push(format!(
                    "{id}: index gap between frames {} and {} (position {})",
                    pair[0].1,
                    pair[1].1,
                    k + 1
                ));
            }
        }
        let mut native: Option<(u32, u32)> = None;
        let mut frames = Vec::new();
        for (t, stem) in &stems {
            let path = layout.frame_path(&id, stem);
            let img = match png::load_rgb8(&path) {
                Ok(img) => img,
                Err(e) => {
                    problems.push(e.to_string());
                    continue;
                }
            };
            let dims = img.dimensions();
            match native {
                None => native = Some(dims),
                Some(n) if n != dims => {
                    problems.push(format!(
                        "{}: resolution {}x{} differs from {}x{} of the first frame",
                        path.display(),
                        dims.1,
                        dims.0,
                        n.1,
                        n.0
                    ));
                    continue;
                }
                _ => {}
            }
            let rgb = RgbImage::from_rgb8(&resize_rgb(img, resolution))?;
            frames.push(FrameSample::new(id.clone(), *t, rgb).with_stem(stem.clone()));
        }
        if !frames.is_empty() {
            match VideoSequence::new(id.clone(), frames) {
                Ok(v) => videos.push(v),
                Err(e) => problems.push(format!("{id}: {e}")),
            }
        }
    }
    if !problems.is_empty() {
        return Err(Error::Dataset(problems));
    }
    if videos.is_empty() {
        return Err(Error::Dataset(vec![format!("no videos under {}", layout.root.display())]));
    }
    Ok(videos)
}

/// Mask files read on demand; every file opened is counted.
#[derive(Debug)]
pub struct MaskFiles {
    layout: DatasetLayout,
    resolution: Option<ImageShape>,
    reads: AtomicUsize,
}

impl MaskFiles {
    pub fn new(layout: DatasetLayout, resolution: Option<ImageShape>) -> Self {
        Self {
            layout,
            resolution,
            reads: AtomicUsize::new(0),
        }
    }

    /// Number of mask files opened so far.
    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::SeqCst)
    }

    /// Masks for every frame that has one, keyed by frame label.
    pub fn load_all(&self, videos: &[VideoSequence]) -> Result<BTreeMap<String, GroundTruthMask>> {
        let mut out = BTreeMap::new();
        for frame in videos.iter().flat_map(|v| v.frames()) {
            if let Some(mask) = self.mask(frame)? {
                out.insert(frame.label(), mask);
            }
        }
        Ok(out)
    }
}

impl LabelSource for MaskFiles {
    fn mask(&self, frame: &FrameSample) -> Result<Option<GroundTruthMask>> {
        let path = self.layout.mask_path(&frame.video_id, &frame.stem);
        if !path.is_file() {
            return Ok(None);
        }
        self.reads.fetch_add(1, Ordering::SeqCst);
        let gray = png::load_gray8(&path)?;
        let native = (gray.height() as usize, gray.width() as usize);
        let gray = match self.resolution {
            Some(s) if native != (s.height, s.width) => {
                image::imageops::resize(&gray, s.width as u32, s.height as u32, FilterType::Nearest)
            }
            _ => gray,
        };
        let shape = ImageShape::new(gray.height() as usize, gray.width() as usize)?;
        if shape != frame.shape() {
            return Err(Error::Dataset(vec![format!(
                "{}: mask is {shape} but its frame is {}",
                path.display(),
                frame.shape()
            )]));
        }
        let mask = BinaryMask::from_bools(shape, gray.as_raw().iter().map(|v| f64::from(*v) / 255.0 >= 0.5))?;
        Ok(Some(mask))
    }
}

/// Writes a video (and optionally its masks) in the dataset layout.
pub fn write_video(layout: &DatasetLayout, video: &VideoSequence, masks: Option<&[GroundTruthMask]>) -> Result<()> {
    if let Some(m) = masks {
        if m.len() != video.len() {
            return Err(Error::InvalidArgument(format!(
                "{} masks for {} frames",
                m.len(),
                video.len()
            )));
        }
    }
    for (i, frame) in video.frames().iter().enumerate() {
        png::save_rgb(&layout.frame_path(video.video_id(), &frame.stem), &frame.rgb)?;
        if let Some(m) = masks {
            png::save_mask(&layout.mask_path(video.video_id(), &frame.stem), &m[i])?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(t: usize, shape: ImageShape) -> FrameSample {
        let data = (0..shape.len() * 3).map(|i| ((i + t) % 17) as f32 / 16.0).collect();
        FrameSample::new("vid", t, RgbImage::new(shape, data).unwrap())
    }

    fn write(root: &Path, n: usize) -> VideoSequence {
        let shape = ImageShape::new(8, 12).unwrap();
        let video = VideoSequence::new("vid", (0..n).map(|t| frame(t, shape)).collect()).unwrap();
        let masks: Vec<BinaryMask> = (0..n)
            .map(|t| BinaryMask::from_bools(shape, (0..shape.len()).map(|i| (i + t) % 3 == 0)).unwrap())
            .collect();
        write_video(&DatasetLayout::new(root), &video, Some(&masks)).unwrap();
        video
    }

    #[test]
    fn loads_frames_in_index_order() {
        let dir = tempfile::tempdir().unwrap();
        let video = write(dir.path(), 3);
        let loaded = load_dataset(&DatasetLayout::new(dir.path()), None).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].len(), 3);
        let ts: Vec<usize> = loaded[0].frames().iter().map(|f| f.t).collect();
        assert_eq!(ts, vec![0, 1, 2]);
        // 8-bit storage quantizes to multiples of 1/255.
        for (a, b) in loaded[0].frames()[1].rgb.data().iter().zip(video.frames()[1].rgb.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
        let resized = load_dataset(&DatasetLayout::new(dir.path()), Some(ImageShape::new(4, 6).unwrap())).unwrap();
        assert_eq!(resized[0].shape(), ImageShape::new(4, 6).unwrap());
    }

    #[test]
    fn masks_are_optional_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), 2);
        std::fs::remove_file(DatasetLayout::new(dir.path()).mask_path("vid", "000001")).unwrap();
        let layout = DatasetLayout::new(dir.path());
        let videos = load_dataset(&layout, None).unwrap();
        let masks = MaskFiles::new(layout, None);
        assert_eq!(masks.reads(), 0);
        let all = masks.load_all(&videos).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(masks.reads(), 1);
        assert!(all["vid/000000"].get(0, 0));
    }

    #[test]
    fn problems_are_itemized() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), 4);
        let layout = DatasetLayout::new(dir.path());
        std::fs::remove_file(layout.frame_path("vid", "000002")).unwrap();
        std::fs::write(layout.frame_path("vid", "000001"), b"not a png").unwrap();
        let err = load_dataset(&layout, None).unwrap_err();
        let Error::Dataset(items) = err else { panic!("expected a dataset error") };
        assert!(items.iter().any(|m| m.contains("index gap")));
        assert!(items.iter().any(|m| m.contains("000001.png")));
    }

    #[test]
    fn resolution_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), 2);
        let layout = DatasetLayout::new(dir.path());
        png::save_rgb(&layout.frame_path("vid", "000001"), &frame(1, ImageShape::new(9, 12).unwrap()).rgb).unwrap();
        let err = load_dataset(&layout, None).unwrap_err();
        assert!(err.to_string().contains("differs"));
    }
}
