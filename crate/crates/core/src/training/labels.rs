use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::Result;
use crate::frame::FrameSample;
use crate::map::GroundTruthMask;

/// Supplies ground-truth masks by frame; `None` when a frame is unlabeled.
pub trait LabelSource: Sync {
    fn mask(&self, frame: &FrameSample) -> Result<Option<GroundTruthMask>>;
}

/// Masks held in memory, keyed by [`FrameSample::label`].
#[derive(Debug, Clone, Default)]
pub struct MemoryLabels {
    pub masks: BTreeMap<String, GroundTruthMask>,
}

impl LabelSource for MemoryLabels {
    fn mask(&self, frame: &FrameSample) -> Result<Option<GroundTruthMask>> {
        Ok(self.masks.get(&frame.label()).cloned())
    }
}

/// Wraps a source and counts every mask it hands out.
#[derive(Debug)]
pub struct CountingLabels<L> {
    inner: L,
    served: AtomicUsize,
}

impl<L: LabelSource> CountingLabels<L> {
    pub fn new(inner: L) -> Self {
        Self {
            inner,
            served: AtomicUsize::new(0),
        }
    }

    pub fn served(&self) -> usize {
        self.served.load(Ordering::SeqCst)
    }

    pub fn into_inner(self) -> L {
        self.inner
    }
}

impl<L: LabelSource> LabelSource for CountingLabels<L> {
    fn mask(&self, frame: &FrameSample) -> Result<Option<GroundTruthMask>> {
        let m = self.inner.mask(frame)?;
        if m.is_some() {
            self.served.fetch_add(1, Ordering::SeqCst);
        }
        Ok(m)
    }
}
